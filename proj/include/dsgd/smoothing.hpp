// SPDX-License-Identifier: Apache-2.0
//
// Logistic smoothing of if-statements:
//   smoothed(if F G H) = sig_eta(-F) * G + sig_eta(F) * H,  sig_eta(x) = 1 / (1 + exp(-c x / eta)).
#pragma once

#include <string>
#include <vector>

#include "dsgd/expr.hpp"

namespace dsgd {

inline constexpr double kDefaultEtaFloor = 1e-8;

/// Accuracy coefficient eta > 0 with an optional sharpness multiplier c.
class Accuracy {
 public:
  explicit Accuracy(double eta, double sharpness = 1.0, double eta_floor = kDefaultEtaFloor);

  double eta() const noexcept { return eta_; }
  double sharpness() const noexcept { return sharpness_; }
  /// eta / c, the effective width of the sigmoid.
  double width() const noexcept { return eta_ / sharpness_; }

 private:
  double eta_;
  double sharpness_;
};

double sigma(double x, const Accuracy& acc);
double sigma_prime(double x, const Accuracy& acc);

double eval_smoothed(const Expr& e, const Assignment& x, const Accuracy& acc);

/// If-free program with let-bound guard auxiliaries g1, g2, ...
struct SmoothProgram {
  std::vector<Expr> bindings;  // bindings[i] defines g{i+1}; may reference earlier auxiliaries
  Expr body;

  double evaluate(const Assignment& x, const Accuracy& acc) const;
  std::size_t node_count() const;
  /// "let g1 = ...;" lines followed by the body.
  std::string to_string() const;
};

SmoothProgram smooth_transform(const Expr& e);

}  // namespace dsgd
