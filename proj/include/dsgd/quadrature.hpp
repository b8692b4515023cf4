// SPDX-License-Identifier: Apache-2.0
//
// Deterministic integration rules used as reference values for Monte-Carlo
// estimates.
#pragma once

#include <cstddef>
#include <functional>

#include <Eigen/Dense>

namespace dsgd {

/// Gauss-Hermite rule for the standard normal weight: E[f(s)] ~ sum_i w_i f(x_i).
struct GaussHermite {
  Eigen::VectorXd nodes;
  Eigen::VectorXd weights;  // sum to 1

  /// Golub-Welsch on the probabilists' Hermite recurrence.
  explicit GaussHermite(std::size_t n = 200);

  double expect(const std::function<double(double)>& f) const;
};

/// Adaptive Gauss-Kronrod over the whole real line.
double integrate_real_line(const std::function<double(double)>& f, double tolerance = 1e-13);

/// E_{s ~ N(0,1)}[ sig'_width(s + shift) ], evaluated as E_{t ~ Logistic(0,1)}[ N(width t - shift) ]
/// so that sharp sigmoids stay accurate.
double normal_sigmoid_prime_expectation(double shift, double width);

}  // namespace dsgd
