// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "dsgd/autodiff.hpp"
#include "dsgd/error.hpp"
#include "dsgd/models.hpp"
#include "support/fixtures.hpp"
#include "support/generators.hpp"

using namespace dsgd;
using dsgd::testing::vec;

namespace {

// Richardson-extrapolated central differences: O(h^4) truncation error.
Vector richardson(const ModelSpec& m, const Vector& theta, const Vector& s, const Accuracy& acc) {
  const double h = 1e-3;
  return (4.0 * finite_diff(m, theta, s, acc, h / 2) - finite_diff(m, theta, s, acc, h)) / 3.0;
}

Vector uniform_vec(std::mt19937_64& rng, std::size_t n, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Vector v(static_cast<Eigen::Index>(n));
  for (auto& x : v) x = u(rng);
  return v;
}

}  // namespace

TEST_CASE("tape reverse sweep") {
  Tape t;
  const auto x = t.leaf(2.0);
  const auto y = t.leaf(3.0);
  const std::array<Tape::Index, 2> in{x, y};
  const std::array<double, 2> dmul{3.0, 2.0};
  const auto p = t.push(6.0, in, dmul);  // x * y
  const std::array<Tape::Index, 2> in2{p, x};
  const std::array<double, 2> dadd{1.0, 1.0};
  const auto out = t.push(8.0, in2, dadd);  // x * y + x
  const auto adj = t.adjoints(out);
  CHECK(adj[x] == 4.0);
  CHECK(adj[y] == 2.0);
  CHECK(adj[p] == 1.0);
  CHECK(t.value(out) == 8.0);
  CHECK(t.size() == 4);
}

TEST_CASE("gradient examples") {
  const ModelSpec ex = model_example11();
  const Gradient g = grad_smoothed(ex, vec({0.0}), vec({0.0}), Accuracy(0.5));
  CHECK(g.wrt_theta[0] == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(g.value == doctest::Approx(0.5));

  const ModelSpec lin = testing::shift_model("z1", "linear");
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int i = 0; i < 20; ++i) {
    CHECK(grad_smoothed(lin, vec({u(rng)}), vec({u(rng)}), Accuracy(0.3)).wrt_theta[0] == 1.0);
    const double s = u(rng);
    const Gradient r = grad_reparam_biased(ex, vec({0.0}), vec({s}));
    CHECK(r.wrt_theta[0] == doctest::Approx(-s).epsilon(1e-15));
    CHECK(r.value == eval(ex.expr(), vec({s})));
  }
}

TEST_CASE("biased gradient at a guard root uses the else branch") {
  const ModelSpec m = testing::shift_model("if z1 { mul(3, z1) } else { mul(-2, z1) }");
  CHECK(grad_reparam_biased(m, vec({0.5}), vec({-0.5})).wrt_theta[0] == -2.0);
  CHECK(grad_reparam_biased(m, vec({0.5}), vec({-0.6})).wrt_theta[0] == 3.0);
}

TEST_CASE("biased and smoothed gradients coincide without ifs") {
  testing::ExprGen gen(3, {.vars = 3, .max_depth = 4, .if_weight = 0.0});
  std::mt19937_64 rng(4);
  for (int i = 0; i < 100; ++i) {
    const ModelSpec m = testing::random_location_scale(gen(), 3, rng, i % 2 == 0);
    const Vector theta = uniform_vec(rng, 6, -1.0, 1.0), s = uniform_vec(rng, 3, -2.0, 2.0);
    Gradient a, b;
    try {
      a = grad_reparam_biased(m, theta, s);
      b = grad_smoothed(m, theta, s, Accuracy(0.1 + 0.1 * (i % 5)));
    } catch (const DomainError&) {
      continue;
    }
    CHECK(a.wrt_theta == b.wrt_theta);
    CHECK(a.value == b.value);
  }
}

TEST_CASE("reverse mode matches finite differences on a generated corpus") {
  testing::ExprGen gen(41, {.vars = 3, .max_depth = 4, .if_weight = 0.3});
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> le(std::log(0.2), std::log(2.0));
  double worst = 0.0;
  int n = 0;
  while (n < 500) {
    const ModelSpec m = testing::random_location_scale(gen(), 3, rng, n % 3 == 0);
    const Vector theta = uniform_vec(rng, 6, -1.5, 1.5), s = uniform_vec(rng, 3, -2.0, 2.0);
    const Accuracy acc(std::exp(le(rng)));
    Gradient g;
    try {
      g = grad_smoothed(m, theta, s, acc);
    } catch (const DomainError&) {
      continue;
    }
    ++n;
    const Vector fd = richardson(m, theta, s, acc);
    CHECK(g.value == doctest::Approx(objective_smoothed(m, theta, s, acc)).epsilon(1e-13));
    for (Eigen::Index i = 0; i < fd.size(); ++i) {
      const double err = std::abs(g.wrt_theta[i] - fd[i]);
      worst = std::max(worst, err / std::max(1.0, std::abs(fd[i])));
      CAPTURE(print(m.expr()));
      CHECK(err <= 1e-6 * std::abs(fd[i]) + 1e-8);
    }
  }
  MESSAGE("worst relative AD/FD error " << worst);
}

TEST_CASE("gradient is linear in the program") {
  testing::ExprGen gen(12, {.vars = 2, .max_depth = 3, .if_weight = 0.3, .allow_normal_logpdf = false});
  std::mt19937_64 rng(8);
  for (int i = 0; i < 100; ++i) {
    const Expr f = gen(), g = gen();
    const double a = 1.5, b = -0.75;
    const Expr combo = call("add", {call("mul", {constant(a), f}), call("mul", {constant(b), g})});
    const ModelSpec mf = testing::random_location_scale(f, 2, rng, false);
    const Transform t = mf.transform();
    auto with = [&](const Expr& e) {
      return ModelSpec(ModelDefinition{"lin", e, t, Distribution::std_normal(2), ParamBox::uniform(4, -2.0, 2.0),
                                       std::nullopt, Sense::Maximize, false, ""});
    };
    const Vector theta = uniform_vec(rng, 4, -1.0, 1.0), s = uniform_vec(rng, 2, -2.0, 2.0);
    const Accuracy acc(0.25);
    const Vector lhs = grad_smoothed(with(combo), theta, s, acc).wrt_theta;
    const Vector rhs = a * grad_smoothed(with(f), theta, s, acc).wrt_theta + b * grad_smoothed(with(g), theta, s, acc).wrt_theta;
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() <= 1e-12 * std::max(1.0, rhs.cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("gradient is continuous in eta") {
  const ModelSpec m = model_nested_l2();
  const Vector theta = vec({0.2, -0.3}), s = vec({0.1, 0.4});
  const Vector base = grad_smoothed(m, theta, s, Accuracy(0.3)).wrt_theta;
  double prev = INFINITY;
  for (double d = 1e-2; d >= 1e-8; d /= 10.0) {
    const double diff = (grad_smoothed(m, theta, s, Accuracy(0.3 + d)).wrt_theta - base).norm();
    CHECK(diff < prev);
    prev = diff;
  }
  CHECK(prev < 1e-6);
}

TEST_CASE("finite_diff") {
  const ModelSpec zero = testing::shift_model("mul(0, z1)");
  CHECK(finite_diff(zero, vec({0.4}), vec({0.1}), Accuracy(0.2))[0] == 0.0);

  testing::ExprGen gen(77, {.vars = 3, .max_depth = 3, .if_weight = 0.25, .allow_normal_logpdf = false});
  std::mt19937_64 rng(9);
  for (int i = 0; i < 50; ++i) {
    const ModelSpec m = testing::random_location_scale(gen(), 3, rng, false);
    const Vector theta = uniform_vec(rng, 6, -1.0, 1.0), s = uniform_vec(rng, 3, -1.0, 1.0);
    const Accuracy acc(1.0);
    const Vector ad = grad_smoothed(m, theta, s, acc).wrt_theta;
    for (double h : {1e-4, 1e-5, 1e-6}) {
      const Vector fd = finite_diff(m, theta, s, acc, h);
      CHECK((fd - ad).cwiseAbs().maxCoeff() <= 1e-5 * std::max(1.0, ad.cwiseAbs().maxCoeff()));
    }
  }
  CHECK_THROWS_AS(finite_diff(zero, vec({0.0}), vec({0.0}), std::nullopt, 0.0), InvalidArgument);
}

TEST_CASE("non-finite gradients are reported") {
  const ModelSpec m = testing::shift_model("exp(exp(exp(z1)))", "blowup");
  CHECK_THROWS_AS(grad_smoothed(m, vec({3.0}), vec({3.0}), Accuracy(0.1)), NonFiniteGradient);
  try {
    grad_reparam_biased(m, vec({3.0}), vec({3.0}));
  } catch (const NonFiniteGradient& e) {
    CHECK(std::string(e.what()).find("blowup") != std::string::npos);
  }
}

TEST_CASE("latent gradient of the smoothed expression") {
  const Expr e = parse("add(mul(z1, z2), if z1 { 0 } else { sq(z2) })");
  const Accuracy acc(0.4);
  const Vector x = vec({0.3, -0.7});
  const Vector g = detail::grad_wrt_latent(e, x, acc);
  const double s = sigma(0.3, acc), ds = sigma_prime(0.3, acc);
  CHECK(g[0] == doctest::Approx(-0.7 + ds * 0.49));
  CHECK(g[1] == doctest::Approx(0.3 + s * 2.0 * -0.7));
}

TEST_CASE("flat smoothed gradient matches the tape recorder") {
  testing::ExprGen gen(58, {.vars = 3, .max_depth = 4, .if_weight = 0.3});
  std::mt19937_64 rng(13);
  int checked = 0;
  for (int i = 0; i < 300; ++i) {
    const ModelSpec m = testing::random_location_scale(gen(), 3, rng, false);
    REQUIRE(m.linear_program() != nullptr);
    const Vector theta = uniform_vec(rng, 6, -1.0, 1.0), s = uniform_vec(rng, 3, -2.0, 2.0);
    const Accuracy acc(0.3);
    Vector flat, gz;
    try {
      flat = grad_smoothed(m, theta, s, acc).wrt_theta;
      gz = detail::grad_wrt_latent(m.expr(), apply(m.transform(), theta, s), acc);
    } catch (const Error&) {
      continue;
    }
    Vector expect = Vector::Zero(6);
    for (Eigen::Index j = 0; j < 3; ++j) {
      const auto& sc = m.transform().coords[static_cast<std::size_t>(j)].sigma;
      expect[2 * j] = gz[j];
      if (sc.kind != ScaleKind::Constant) expect[2 * j + 1] = sc.derivative_at(theta) * s[j] * gz[j];
    }
    for (Eigen::Index k = 0; k < 6; ++k) CHECK(flat[k] == doctest::Approx(expect[k]).epsilon(1e-12).scale(1.0));
    ++checked;
  }
  CHECK(checked > 250);
}

TEST_CASE("flat gradient handles shared subtrees and foreign primitives") {
  const Expr e = call("sq", {var(1)});
  const ModelSpec shared = ModelSpec(ModelDefinition{
      .name = "shared",
      .expr = call("add", {e, e}),
      .transform = Transform{{CoordinateRule::location_scale(LocationRule::param(0), ScaleRule::constant(1.0))}},
      .base = Distribution::std_normal(1),
      .box = ParamBox::uniform(1, -3.0, 3.0),
      .theta0 = std::nullopt,
      .sense = Sense::Maximize,
      .include_entropy = false,
      .description = "",
  });
  const Accuracy acc(0.5);
  CHECK(grad_smoothed(shared, vec({0.25}), vec({0.5}), acc).wrt_theta[0] == doctest::Approx(4.0 * 0.75));

  // A primitive that only shares the name of a built-in must not be inlined.
  auto twice = std::make_shared<Primitive>();
  twice->name = "add";
  twice->arity = 2;
  twice->eval = [](std::span<const double> a, std::span<const double>) { return 2.0 * a[0] + a[1]; };
  twice->partials = {[](std::span<const double>, std::span<const double>) { return 2.0; },
                     [](std::span<const double>, std::span<const double>) { return 1.0; }};
  const ModelSpec foreign = testing::shift_model("z1");
  const ModelSpec custom(ModelDefinition{
      .name = "custom",
      .expr = prim(twice, {var(1), constant(1.0)}),
      .transform = foreign.transform(),
      .base = foreign.base(),
      .box = foreign.box(),
      .theta0 = std::nullopt,
      .sense = Sense::Maximize,
      .include_entropy = false,
      .description = "",
  });
  const Gradient g = grad_smoothed(custom, vec({0.5}), vec({0.0}), acc);
  CHECK(g.value == doctest::Approx(2.0));
  CHECK(g.wrt_theta[0] == doctest::Approx(2.0));
}

TEST_CASE("smoothed per-sample gradient is unbiased for the smoothed objective") {
  const ModelSpec ex = model_example11();
  const RngStream rng{2024, 0};
  for (auto [theta, eta] : {std::pair{0.0, 0.3}, std::pair{0.6, 0.1}}) {
    const Accuracy acc(eta);
    const std::size_t n = 1000000;
    double mean = 0.0, m2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double g = grad_smoothed(ex, vec({theta}), sample(ex.base(), rng, i), acc).wrt_theta[0];
      const double d = g - mean;
      mean += d / static_cast<double>(i + 1);
      m2 += d * (g - mean);
    }
    const double se = std::sqrt(m2 / static_cast<double>(n - 1) / static_cast<double>(n));
    const double ref = oracle_smoothed_gradient_example11(theta, acc);
    CAPTURE(theta);
    CAPTURE(eta);
    CHECK(std::abs(mean - ref) <= 3.0 * se);
  }
}
