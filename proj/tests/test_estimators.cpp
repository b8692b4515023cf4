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

double normal_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }

// x = theta0 + exp(theta1) s, box [-2, 2]^2.
ModelSpec gaussian_model(const std::string& text, bool entropy = false) {
  return ModelSpec(ModelDefinition{
      "gauss", parse(text),
      Transform{{CoordinateRule::location_scale(LocationRule::param(0), ScaleRule::exp(1))}},
      Distribution::std_normal(1), ParamBox::uniform(2, -2.0, 2.0), std::nullopt, Sense::Maximize, entropy, ""});
}

double se_of(const GradStats& st, Eigen::Index i) {
  return std::sqrt(st.variance[i] / static_cast<double>(st.n_samples));
}

}  // namespace

TEST_CASE("estimator names") {
  for (const char* s : {"reparam", "score", "boundary-oracle", "smoothed:eta=0.1", "smoothed:eta=0.05,sharpness=10"})
    CHECK(EstimatorKind::parse(s).to_string() == s);
  const auto k = EstimatorKind::parse("smoothed:sharpness=2,eta=0.5");
  CHECK(k.type() == EstimatorKind::Type::Smoothed);
  CHECK(k.accuracy().eta() == 0.5);
  CHECK(k.accuracy().sharpness() == 2.0);
  CHECK_THROWS_AS(EstimatorKind::parse("lyy18"), InvalidArgument);
  CHECK_THROWS_AS(EstimatorKind::parse("smoothed:"), InvalidArgument);
  CHECK_THROWS_AS(EstimatorKind::parse("smoothed:eta=-1"), InvalidArgument);
  CHECK_THROWS_AS(EstimatorKind::parse("smoothed:eta=abc"), InvalidArgument);
  CHECK_THROWS_AS(EstimatorKind::parse("smoothed:eta=0.1,width=2"), InvalidArgument);
  CHECK_THROWS_AS(EstimatorKind::reparam().accuracy(), InvalidArgument);
}

TEST_CASE("applicability") {
  CHECK_NOTHROW(EstimatorKind::boundary_oracle().require_applicable(model_example11()));
  CHECK_THROWS_AS(EstimatorKind::boundary_oracle().require_applicable(model_random_walk(4)), NotEligible);
  CHECK_THROWS_AS(EstimatorKind::boundary_oracle().require_applicable(model_nested_l2()), NotEligible);
  CHECK_THROWS_AS(boundary_term(model_nested_l2(), vec({0.0, 0.0})), NotEligible);
  const ModelSpec expo(ModelDefinition{"expo", parse("if affine[1,-1](z1) { 0 } else { 1 }"),
                                       Transform{{CoordinateRule::location_scale(LocationRule::param(0), ScaleRule::constant(1.0))}},
                                       Distribution::exponential(1.0, 1), ParamBox::uniform(1, -1.0, 1.0), std::nullopt,
                                       Sense::Maximize, false, ""});
  CHECK_THROWS_AS(EstimatorKind::score().require_applicable(expo), NotEligible);
  CHECK_FALSE(expo.boundary_eligible());
}

TEST_CASE("boundary term closed forms") {
  const ModelSpec ex = model_example11();
  CHECK(boundary_term(ex, vec({0.0}))[0] == doctest::Approx(0.3989423).epsilon(1e-7));
  CHECK(boundary_term(ex, vec({1.0}))[0] == doctest::Approx(0.2419707).epsilon(1e-7));

  // E[[ -2 z + 1 >= 0 ]] = Phi((0.5 - mu) / sigma) with z = mu + sigma s.
  const ModelSpec neg = gaussian_model("if affine[-2,1](z1) { 0 } else { 1 }");
  REQUIRE(neg.boundary_eligible());
  const double mu = 0.2, ls = -0.3, sd = std::exp(ls), s0 = (0.5 - mu) / sd;
  const Vector b = boundary_term(neg, vec({mu, ls}));
  CHECK(b[0] == doctest::Approx(-normal_pdf(s0) / sd).epsilon(1e-12));
  CHECK(b[1] == doctest::Approx(-normal_pdf(s0) * s0).epsilon(1e-12));
}

TEST_CASE("bias separation on the step example") {
  const ModelSpec ex = model_example11();
  const Vector theta = vec({0.0});
  const RngStream rng{1, 0};
  const std::size_t n = 200000;
  const GradStats rep = estimate(EstimatorKind::reparam(), ex, theta, n, rng);
  const GradStats smo = estimate(EstimatorKind::smoothed(Accuracy(0.05)), ex, theta, n, rng);
  const GradStats bnd = estimate(EstimatorKind::boundary_oracle(), ex, theta, n, rng);
  const GradStats sco = estimate(EstimatorKind::score(), ex, theta, n, rng);
  CHECK(std::abs(rep.mean[0]) <= 3.0 * se_of(rep, 0));
  CHECK(std::abs(smo.mean[0] - kInvSqrt2Pi) <= std::max(0.01, 3.0 * se_of(smo, 0)));
  CHECK(std::abs(bnd.mean[0] - kInvSqrt2Pi) <= 3.0 * se_of(bnd, 0));
  CHECK(std::abs(sco.mean[0] - kInvSqrt2Pi) <= 3.0 * se_of(sco, 0));
  CHECK(smo.mean[0] - rep.mean[0] > 10.0 * std::max(se_of(smo, 0), se_of(rep, 0)));
}

TEST_CASE("estimators are unbiased on a smooth Gaussian objective") {
  // E[z^2] = mu^2 + sigma^2: gradient (2 mu, 2 sigma^2) in (mu, log sigma).
  const ModelSpec m = gaussian_model("sq(z1)");
  const double mu = 0.4, ls = -0.2;
  const Vector truth = vec({2 * mu, 2 * std::exp(2 * ls)});
  const RngStream rng{5, 0};
  for (const auto& kind : {EstimatorKind::reparam(), EstimatorKind::score(), EstimatorKind::smoothed(Accuracy(0.1))}) {
    const GradStats st = estimate(kind, m, vec({mu, ls}), 100000, rng);
    CAPTURE(kind.to_string());
    for (Eigen::Index i = 0; i < 2; ++i) CHECK(std::abs(st.mean[i] - truth[i]) <= 3.5 * se_of(st, i));
  }
  // The entropy term adds d/dtheta log sigma = (0, 1) exactly.
  const ModelSpec me = gaussian_model("sq(z1)", true);
  const GradStats a = estimate(EstimatorKind::reparam(), m, vec({mu, ls}), 1000, rng);
  const GradStats b = estimate(EstimatorKind::reparam(), me, vec({mu, ls}), 1000, rng);
  CHECK(b.mean[0] == doctest::Approx(a.mean[0]).epsilon(1e-14));
  CHECK(b.mean[1] == doctest::Approx(a.mean[1] + 1.0).epsilon(1e-14));
  const GradStats sa = estimate(EstimatorKind::score(), m, vec({mu, ls}), 1000, rng);
  const GradStats sb = estimate(EstimatorKind::score(), me, vec({mu, ls}), 1000, rng);
  CHECK(sb.mean[1] - sa.mean[1] == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("score variance exceeds smoothed variance") {
  const ModelSpec ex = model_example11();
  const RngStream rng{3, 0};
  const GradStats sco = estimate(EstimatorKind::score(), ex, vec({0.3}), 10000, rng);
  const GradStats smo = estimate(EstimatorKind::smoothed(Accuracy(0.1)), ex, vec({0.3}), 10000, rng);
  CHECK(sco.var_avg > smo.var_avg);
}

TEST_CASE("variance grows like 1/eta for a single if") {
  const ModelSpec ex = model_example11();
  const RngStream rng{4, 0};
  double sx = 0, sy = 0, sxx = 0, sxy = 0, prev = 0;
  const double etas[] = {0.2, 0.1, 0.05, 0.025};
  for (double eta : etas) {
    const GradStats st = estimate(EstimatorKind::smoothed(Accuracy(eta)), ex, vec({0.3}), 40000, rng);
    CHECK(st.var_avg > prev);
    prev = st.var_avg;
    const double x = std::log(1.0 / eta), y = std::log(st.var_avg);
    sx += x, sy += y, sxx += x * x, sxy += x * y;
  }
  const double slope = (4 * sxy - sx * sy) / (4 * sxx - sx * sx);
  CHECK(slope <= 1.2);
}

TEST_CASE("statistics are independent of the worker count") {
  const ModelSpec m = model_random_walk(6);
  const Vector theta = m.theta0();
  const RngStream rng{8, 0};
  const auto kind = EstimatorKind::smoothed(Accuracy(0.2));
  const GradStats one = estimate(kind, m, theta, 1000, rng, 1, 64);
  for (std::size_t w : {2u, 3u, 7u}) {
    const GradStats many = estimate(kind, m, theta, 1000, rng, w, 64);
    CHECK(many.mean == one.mean);
    CHECK(many.variance == one.variance);
    CHECK(many.var_norm == one.var_norm);
    CHECK(many.value_mean == one.value_mean);
  }
  // Index addressing: the batch starting at 64 is samples 64..1063 of the stream.
  Vector sum = Vector::Zero(theta.size());
  for (std::uint64_t i = 64; i < 1064; ++i) sum += sample_gradient(kind, m, theta, rng, i).wrt_theta;
  CHECK((sum / 1000.0 - one.mean).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(one.n_samples == 1000);
}

TEST_CASE("diagnostic statistics") {
  const GradStats st = estimate(EstimatorKind::smoothed(Accuracy(0.1)), model_example11(), vec({0.3}), 1000, RngStream{2, 2});
  CHECK(st.var_avg > 0.0);
  CHECK(std::isfinite(st.var_avg));
  CHECK(st.var_norm >= 0.0);
  CHECK(std::isfinite(st.var_norm));
  CHECK_THROWS_AS(estimate(EstimatorKind::reparam(), model_example11(), vec({0.0}), 0, RngStream{}), InvalidArgument);
}

TEST_CASE("objective estimate") {
  const ScalarEstimate e = elbo_estimate(model_example11(), vec({0.0}), 1000000, RngStream{1, 1});
  CHECK(std::abs(e.mean) <= 3.0 * e.standard_error);
  CHECK(e.n_samples == 1000000);
  const ScalarEstimate a = elbo_estimate(model_example11(), vec({0.0}), 5000, RngStream{1, 1}, 1);
  const ScalarEstimate b = elbo_estimate(model_example11(), vec({0.0}), 5000, RngStream{1, 1}, 4);
  CHECK(a.mean == b.mean);
  CHECK(a.standard_error == b.standard_error);
}

TEST_CASE("non-finite gradients name the sample") {
  const ModelSpec m = testing::shift_model("exp(exp(exp(z1)))", "blowup");
  try {
    estimate(EstimatorKind::reparam(), m, vec({3.0}), 5000, RngStream{1, 0});
    FAIL("expected NonFiniteGradient");
  } catch (const NonFiniteGradient& e) {
    CHECK(std::string(e.what()).find(", sample ") != std::string::npos);
  }
}

TEST_CASE("Gauss-Hermite rule") {
  const GaussHermite gh(200);
  CHECK(gh.nodes.size() == 200);
  CHECK(gh.weights.sum() == doctest::Approx(1.0).epsilon(1e-13));
  CHECK(gh.expect([](double x) { return x * x; }) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(gh.expect([](double x) { return x * x * x * x; }) == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(std::abs(gh.expect([](double x) { return x * x * x; })) < 1e-12);
  CHECK(gh.expect([](double x) { return std::cos(x); }) == doctest::Approx(std::exp(-0.5)).epsilon(1e-13));
  for (Eigen::Index i = 0; i < 100; ++i) CHECK(gh.nodes[i] == doctest::Approx(-gh.nodes[199 - i]).epsilon(1e-12));
  const GaussHermite small(3);
  CHECK(small.nodes.maxCoeff() == doctest::Approx(std::sqrt(3.0)));
  CHECK(small.weights.maxCoeff() == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("real-line integration") {
  CHECK(integrate_real_line(normal_pdf) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(integrate_real_line([](double x) { return x * x * normal_pdf(x - 1.0); }) == doctest::Approx(2.0).epsilon(1e-11));
  // Wide sigmoids are smooth enough for Gauss-Hermite; both routes must agree.
  const GaussHermite gh(200);
  for (double shift : {-0.7, 0.0, 0.4}) {
    const Accuracy acc(2.0);
    const double direct = gh.expect([&](double s) { return sigma_prime(s + shift, acc); });
    CHECK(normal_sigmoid_prime_expectation(shift, 2.0) == doctest::Approx(direct).epsilon(1e-11));
  }
  CHECK(normal_sigmoid_prime_expectation(0.3, 1e-6) == doctest::Approx(normal_pdf(0.3)).epsilon(1e-9));
}
