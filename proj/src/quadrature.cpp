// SPDX-License-Identifier: Apache-2.0
#include "dsgd/quadrature.hpp"

#include <cmath>
#include <limits>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "dsgd/error.hpp"

namespace dsgd {

GaussHermite::GaussHermite(std::size_t n) {
  if (n == 0) throw InvalidArgument("Gauss-Hermite rule needs at least one node");
  const auto N = static_cast<Eigen::Index>(n);
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(N, N);
  for (Eigen::Index k = 1; k < N; ++k) J(k, k - 1) = J(k - 1, k) = std::sqrt(static_cast<double>(k));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
  nodes = es.eigenvalues();
  weights = es.eigenvectors().row(0).transpose().array().square();
}

double GaussHermite::expect(const std::function<double(double)>& f) const {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < nodes.size(); ++i) acc += weights[i] * f(nodes[i]);
  return acc;
}

double integrate_real_line(const std::function<double(double)>& f, double tolerance) {
  using boost::math::quadrature::gauss_kronrod;
  const double inf = std::numeric_limits<double>::infinity();
  return gauss_kronrod<double, 61>::integrate(f, -inf, inf, 20, tolerance);
}

double normal_sigmoid_prime_expectation(double shift, double width) {
  if (!(width > 0.0)) throw InvalidArgument("sigmoid width must be positive");
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  auto integrand = [&](double t) {
    const double e = std::exp(-std::abs(t));
    const double logistic = e / ((1.0 + e) * (1.0 + e));
    const double u = width * t - shift;
    return logistic * kInvSqrt2Pi * std::exp(-0.5 * u * u);
  };
  return integrate_real_line(integrand);
}

}  // namespace dsgd
