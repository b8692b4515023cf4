// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <optional>
#include <string>

#include "dsgd/expr.hpp"
#include "dsgd/stochastics.hpp"

namespace dsgd {

enum class Sense { Maximize, Minimize };

/// User-facing description of an optimisation problem
///   optimise_theta E_{s ~ base}[ F(phi_theta(s)) ]  over theta in box.
struct ModelDefinition {
  std::string name;
  Expr expr;
  Transform transform;
  Distribution base;
  ParamBox box;
  std::optional<Vector> theta0;  // defaults to the box centre
  Sense sense = Sense::Maximize;
  // Adds log|det J phi_theta| to the objective, turning E[log p] into an ELBO
  // up to the (constant) entropy of the base distribution.
  bool include_entropy = false;
  std::string description;
};

/// Single affine guard a*z1 + b of a boundary-eligible model, with the two
/// branch-selected versions of the objective.
struct AffineBoundary {
  double slope;
  double offset;
  Expr then_expr;  // F with the if-statement replaced by its then-branch
  Expr else_expr;

  double root() const { return -offset / slope; }
};

/// Flattened form of a model expression, built once for the smoothed gradient.
struct LinearProgram;

namespace detail {
/// Null when the expression holds nodes the flat form does not cover.
std::shared_ptr<const LinearProgram> compile_linear(const Expr& e, std::size_t n);
}  // namespace detail

class ModelSpec {
 public:
  /// Validates arity, the transform and the initial point; throws InvalidArgument.
  explicit ModelSpec(ModelDefinition def);

  const std::string& name() const { return def_.name; }
  const std::string& description() const { return def_.description; }
  const Expr& expr() const { return def_.expr; }
  const Transform& transform() const { return def_.transform; }
  const Distribution& base() const { return def_.base; }
  const ParamBox& box() const { return def_.box; }
  const Vector& theta0() const { return theta0_; }
  Sense sense() const { return def_.sense; }
  bool include_entropy() const { return def_.include_entropy; }

  std::size_t n() const { return def_.base.dim; }
  std::size_t m() const { return def_.box.dim(); }
  std::size_t ell() const { return ell_; }
  std::size_t if_count() const { return if_count_; }
  const LinearProgram* linear_program() const { return program_.get(); }
  const SafeReport& safety() const { return safe_; }
  bool boundary_eligible() const { return boundary_.has_value(); }
  const std::optional<AffineBoundary>& boundary() const { return boundary_; }

 private:
  ModelDefinition def_;
  Vector theta0_;
  std::size_t ell_ = 0;
  std::size_t if_count_ = 0;
  std::shared_ptr<const LinearProgram> program_;
  SafeReport safe_;
  std::optional<AffineBoundary> boundary_;
};

}  // namespace dsgd
