// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "dsgd/error.hpp"
#include "dsgd/estimators.hpp"
#include "dsgd/models.hpp"
#include "dsgd/quadrature.hpp"
#include "support/fixtures.hpp"

using namespace dsgd;
using dsgd::testing::vec;

namespace {

const double kInvSqrt2Pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);

void check_invariants(const ModelSpec& m) {
  CAPTURE(m.name());
  for (std::size_t j : free_vars(m.expr())) {
    CHECK(j >= 1);
    CHECK(j <= m.n());
  }
  CHECK(m.ell() == nesting_depth(m.expr()));
  CHECK(m.if_count() == if_count(m.expr()));
  CHECK(validate_transform(m.transform(), m.box()).ok);
  CHECK(m.box().contains(m.theta0()));
  if (m.boundary_eligible()) CHECK(m.n() == 1);
}

}  // namespace

TEST_CASE("the step example") {
  const ModelSpec ex = model_example11();
  CHECK(ex.n() == 1);
  CHECK(ex.m() == 1);
  CHECK(ex.ell() == 1);
  CHECK(ex.if_count() == 1);
  CHECK(ex.boundary_eligible());
  CHECK(ex.safety().is_safe);
  CHECK(ex.box().lower[0] == -3.0);
  CHECK(ex.box().upper[0] == 3.0);
  CHECK(eval(ex.expr(), vec({-1.0})) == -0.5);
  CHECK(model_step().ell() == 1);
  CHECK(model_nested_l2().ell() == 2);
  CHECK(model_xornet_lite().ell() == 3);
}

TEST_CASE("closed-form oracles") {
  CHECK(oracle_true_gradient_example11(0.0) == doctest::Approx(0.3989423).epsilon(1e-7));
  CHECK(oracle_true_gradient_example11(1.0) == doctest::Approx(-0.7580293).epsilon(1e-7));
  CHECK(oracle_true_gradient_example11(30.0) == doctest::Approx(-30.0).epsilon(1e-15));

  const double ts = oracle_stationary_example11();
  CHECK(ts == doctest::Approx(0.372238898).epsilon(1e-8));
  CHECK(std::abs(oracle_true_gradient_example11(ts)) < 1e-9);
  double prev = INFINITY;
  for (int i = 0; i <= 1000; ++i) {
    const double g = oracle_true_gradient_example11(i / 1000.0);
    CHECK(g < prev);
    prev = g;
  }

  // The smoothed oracle against an independent Gauss-Hermite evaluation where the sigmoid is wide.
  const GaussHermite gh(200);
  for (double theta : {-0.5, 0.0, 0.8}) {
    const Accuracy acc(1.0);
    const double direct = -theta + gh.expect([&](double s) { return sigma_prime(s + theta, acc); });
    CHECK(oracle_smoothed_gradient_example11(theta, acc) == doctest::Approx(direct).epsilon(1e-10));
  }
  CHECK(std::abs(oracle_smoothed_gradient_example11(0.4, Accuracy(1e-3)) - oracle_true_gradient_example11(0.4)) < 1e-3);
  const double at1 = oracle_smoothed_gradient_example11(0.0, Accuracy(1.0));
  CHECK(at1 > 0.0);
  CHECK(at1 < kInvSqrt2Pi);
  // At theta = 0 the integrand is even, so the two half-lines contribute equally.
  const Accuracy a(0.3);
  const double left = integrate_real_line([&](double s) {
    return s < 0 ? kInvSqrt2Pi * std::exp(-0.5 * s * s) * sigma_prime(s, a) : 0.0;
  });
  CHECK(2.0 * left == doctest::Approx(oracle_smoothed_gradient_example11(0.0, a)).epsilon(1e-9));

  const double obj = oracle_smoothed_objective_example11(0.5, Accuracy(2.0));
  const double direct = -0.5 * 1.25 + gh.expect([](double s) { return sigma(s + 0.5, Accuracy(2.0)); });
  CHECK(obj == doctest::Approx(direct).epsilon(1e-13));
}

TEST_CASE("metadata at full scale") {
  const ModelSpec temp = model_temperature_lite(40);
  CHECK(temp.n() == 41);
  CHECK(temp.if_count() == 80);
  const ModelSpec walk = model_random_walk(16);
  CHECK(walk.n() == 16);
  CHECK(walk.if_count() == 31);
  CHECK(walk.ell() == 1);
  CHECK(model_cheating_lite(150).if_count() == 300);
  CHECK(model_textmsg().n() == 3);
  CHECK(model_textmsg().if_count() == 37);
  CHECK(model_temperature_lite().n() == 21);
  CHECK(model_temperature_lite().if_count() == 40);
  CHECK(model_temperature_lite().ell() == 1);
  CHECK(model_temperature_lite().safety().is_safe);
  CHECK(model_cheating_lite().if_count() == 60);
}

TEST_CASE("every shipped model satisfies the construction invariants") {
  for (const auto& info : list_models()) {
    check_invariants(make_model(info.name));
    if (!info.size_parameter.empty()) check_invariants(make_model(info.name + ":5"));
  }
}

TEST_CASE("objectives have finite expectations") {
  for (const auto& info : list_models()) {
    const ModelSpec m = make_model(info.name);
    const Vector c = m.box().center();
    const ScalarEstimate a = elbo_estimate(m, c, 10000, RngStream{1, 1});
    const ScalarEstimate b = elbo_estimate(m, c, 10000, RngStream{2, 1});
    CAPTURE(info.name);
    CHECK(std::isfinite(a.mean));
    CHECK(std::abs(a.mean - b.mean) <= 3.0 * std::hypot(a.standard_error, b.standard_error));
  }
}

TEST_CASE("model registry") {
  CHECK(make_model("random_walk:8").n() == 8);
  CHECK(make_model("cheating_lite:150").if_count() == 300);
  CHECK(make_model("example11").name() == "example11");
  try {
    make_model("nope");
    FAIL("expected an error");
  } catch (const InvalidArgument& e) {
    CHECK(std::string(e.what()).find("unknown model 'nope'") != std::string::npos);
  }
  CHECK_THROWS_AS(make_model("example11:3"), InvalidArgument);
  CHECK_THROWS_AS(make_model("random_walk:x"), InvalidArgument);
  CHECK(list_models().size() == 8);
}

TEST_CASE("synthetic data tables") {
  CHECK(textmsg_data(37).rows.size() == 37);
  CHECK(temperature_data(40).rows.size() == 40);
  CHECK(cheating_data(150).rows.size() == 150);
  CHECK(xor_data().rows.size() == 4);
  // Smaller sizes are prefixes of the full tables.
  const DataTable full = cheating_data(150), small = cheating_data(30);
  for (std::size_t i = 0; i < small.rows.size(); ++i) CHECK(small.rows[i] == full.rows[i]);
  const DataTable tf = temperature_data(40), ts = temperature_data(20);
  for (std::size_t i = 0; i < ts.rows.size(); ++i) CHECK(ts.rows[i] == tf.rows[i]);
  const std::string csv = to_csv(xor_data());
  CHECK(csv == "x1,x2,label\n0,0,0\n0,1,1\n1,0,1\n1,1,0\n");
  for (const auto& row : textmsg_data(37).rows) {
    CHECK(row[1] >= 0.0);
    CHECK(row[1] == std::floor(row[1]));
  }
}
