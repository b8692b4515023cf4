// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode differentiation of objective(theta, s) = F(phi_theta(s)) through the
// reparameterisation transform, under either the smoothed interpretation or the
// standard one restricted to the branch actually taken.
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "dsgd/model.hpp"
#include "dsgd/smoothing.hpp"

namespace dsgd {

/// Linear tape of elementary operations; nodes only reference earlier nodes.
class Tape {
 public:
  using Index = std::uint32_t;

  /// Drops all nodes but keeps the storage.
  void clear();
  Index leaf(double value);
  Index push(double value, std::span<const Index> inputs, std::span<const double> partials);

  double value(Index i) const { return nodes_[i].value; }
  std::size_t size() const { return nodes_.size(); }

  /// Single reverse sweep seeded with d(output) = 1.
  std::vector<double> adjoints(Index output) const;
  /// Same sweep into caller-owned storage.
  void adjoints(Index output, std::vector<double>& adj) const;

 private:
  struct Node {
    double value;
    std::uint32_t edge_end;  // cumulative edge count after this node
  };
  struct Edge {
    Index input;
    double partial;
  };
  std::vector<Node> nodes_;
  std::vector<Edge> edges_;
};

struct Gradient {
  Vector wrt_theta;
  double value = 0.0;  // primal objective
};

/// Smoothed objective value (including the entropy term when the model has one).
double objective_smoothed(const ModelSpec& model, const Vector& theta, const Vector& s, const Accuracy& acc);
/// Standard (discontinuous) objective value.
double objective_standard(const ModelSpec& model, const Vector& theta, const Vector& s);

/// Exact gradient of the smoothed objective.
Gradient grad_smoothed(const ModelSpec& model, const Vector& theta, const Vector& s, const Accuracy& acc);

/// Gradient of the standard semantics along the branch taken; guards contribute nothing.
Gradient grad_reparam_biased(const ModelSpec& model, const Vector& theta, const Vector& s);

/// Central differences in theta of the smoothed (acc given) or standard objective.
Vector finite_diff(const ModelSpec& model, const Vector& theta, const Vector& s, const std::optional<Accuracy>& acc,
                   double h = 1e-5);

namespace detail {
/// d/dz of the smoothed expression at x (not a public feature; used by tests).
Vector grad_wrt_latent(const Expr& e, const Assignment& x, const Accuracy& acc);
}  // namespace detail

}  // namespace dsgd
