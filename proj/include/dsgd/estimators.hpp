// SPDX-License-Identifier: Apache-2.0
//
// Gradient estimators for d/dtheta E_s[F(phi_theta(s))] and their Monte-Carlo
// aggregation. Sample i of a batch always uses (rng, first_index + i), and
// batch statistics are reduced over a fixed pairwise tree, so results do not
// depend on the worker count.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "dsgd/autodiff.hpp"
#include "dsgd/model.hpp"
#include "dsgd/stochastics.hpp"

namespace dsgd {

class EstimatorKind {
 public:
  enum class Type { Reparam, Smoothed, Score, BoundaryOracle };

  static EstimatorKind reparam() { return EstimatorKind(Type::Reparam, std::nullopt); }
  static EstimatorKind smoothed(Accuracy acc) { return EstimatorKind(Type::Smoothed, acc); }
  static EstimatorKind score() { return EstimatorKind(Type::Score, std::nullopt); }
  static EstimatorKind boundary_oracle() { return EstimatorKind(Type::BoundaryOracle, std::nullopt); }

  /// Accepts "reparam", "smoothed:eta=<x>[,sharpness=<c>]", "score", "boundary-oracle".
  static EstimatorKind parse(std::string_view text);
  std::string to_string() const;

  Type type() const { return type_; }
  const Accuracy& accuracy() const;  // Smoothed only

  /// Throws NotEligible when the estimator cannot be applied to `model`.
  void require_applicable(const ModelSpec& model) const;

 private:
  EstimatorKind(Type t, std::optional<Accuracy> acc) : type_(t), acc_(acc) {}
  Type type_;
  std::optional<Accuracy> acc_;
};

/// One draw of the estimator using base sample (rng, index).
Gradient sample_gradient(const EstimatorKind& kind, const ModelSpec& model, const Vector& theta, const RngStream& rng,
                         std::uint64_t index);

/// Exact derivative of the jump contribution of the single affine guard of a
/// boundary-eligible model; throws NotEligible otherwise.
Vector boundary_term(const ModelSpec& model, const Vector& theta);

struct GradStats {
  Vector mean;
  Vector variance;         // per-component sample variance (n-1)
  double var_avg = 0.0;    // average of `variance`
  double var_norm = 0.0;   // sample variance of the L2 norm
  double value_mean = 0.0; // mean primal objective of the draws
  std::size_t n_samples = 0;
  double wall_seconds = 0.0;
};

GradStats estimate(const EstimatorKind& kind, const ModelSpec& model, const Vector& theta, std::size_t n_samples,
                   const RngStream& rng, std::size_t workers = 1, std::uint64_t first_index = 0);

struct ScalarEstimate {
  double mean = 0.0;
  double standard_error = 0.0;
  std::size_t n_samples = 0;
};

/// Monte-Carlo mean of the standard objective F(phi_theta(s)) (plus entropy when the model has it).
ScalarEstimate elbo_estimate(const ModelSpec& model, const Vector& theta, std::size_t n_samples, const RngStream& rng,
                             std::size_t workers = 1, std::uint64_t first_index = 0);

}  // namespace dsgd
