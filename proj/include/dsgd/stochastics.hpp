// SPDX-License-Identifier: Apache-2.0
//
// Base distributions, counter-based random streams and location-scale
// reparameterisation transforms x = mu(theta) + sigma(theta) * s.
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dsgd/expr.hpp"

namespace dsgd {

enum class DistributionKind { StdNormal, HalfNormal, Exponential, Logistic };

/// i.i.d. product of `dim` copies of a univariate Schwartz density.
struct Distribution {
  DistributionKind kind = DistributionKind::StdNormal;
  std::size_t dim = 1;
  double location = 0.0;  // Logistic
  double scale = 1.0;     // HalfNormal sigma, Logistic s
  double rate = 1.0;      // Exponential lambda

  static Distribution std_normal(std::size_t dim);
  static Distribution half_normal(double sigma, std::size_t dim);
  static Distribution exponential(double rate, std::size_t dim);
  static Distribution logistic(double mu, double s, std::size_t dim);
};

std::string to_string(DistributionKind kind);

/// Counter-based generator: each draw is a pure function of (seed, stream, index, coordinate).
struct RngStream {
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;

  /// Uniform on the open interval (0, 1).
  double uniform(std::uint64_t index, std::uint32_t coordinate = 0) const;
  RngStream substream(std::uint64_t id) const { return RngStream{seed, id}; }
};

/// Philox4x32-10 block function.
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter, std::array<std::uint32_t, 2> key);

double standard_normal_quantile(double u);

double sample_scalar(const Distribution& d, double u);
Vector sample(const Distribution& d, const RngStream& rng, std::uint64_t index);

double logpdf_scalar(const Distribution& d, double x);
/// -infinity outside the support.
double logpdf(const Distribution& d, const Vector& x);
double cdf_scalar(const Distribution& d, double x);

struct ParamBox {
  Vector lower;
  Vector upper;

  ParamBox(Vector lower, Vector upper);
  static ParamBox uniform(std::size_t m, double lo, double hi);
  std::size_t dim() const { return static_cast<std::size_t>(lower.size()); }
  bool contains(const Vector& theta) const;
  Vector center() const { return 0.5 * (lower + upper); }
};

/// mu = slope * theta[index] + offset, or a constant.
struct LocationRule {
  std::optional<std::size_t> index;  // 0-based parameter index
  double slope = 1.0;
  double offset = 0.0;

  static LocationRule constant(double v) { return {std::nullopt, 0.0, v}; }
  static LocationRule param(std::size_t i) { return {i, 1.0, 0.0}; }
};

enum class ScaleKind { Constant, Exp, Softplus, Raw };

/// sigma = value | exp(theta[index]) | softplus(theta[index]) + value | theta[index].
struct ScaleRule {
  ScaleKind kind = ScaleKind::Constant;
  std::size_t index = 0;
  double value = 1.0;

  static ScaleRule constant(double v) { return {ScaleKind::Constant, 0, v}; }
  static ScaleRule exp(std::size_t i) { return {ScaleKind::Exp, i, 0.0}; }
  static ScaleRule softplus(std::size_t i, double floor = 1e-4) { return {ScaleKind::Softplus, i, floor}; }
  static ScaleRule raw(std::size_t i) { return {ScaleKind::Raw, i, 0.0}; }

  double value_at(const Vector& theta) const;
  /// d sigma / d theta[index]; zero for constants.
  double derivative_at(const Vector& theta) const;
};

struct CoordinateRule {
  bool fixed = false;  // x = s
  LocationRule mu = LocationRule::constant(0.0);
  ScaleRule sigma = ScaleRule::constant(1.0);

  static CoordinateRule identity() { return {true, LocationRule::constant(0.0), ScaleRule::constant(1.0)}; }
  static CoordinateRule location_scale(LocationRule mu, ScaleRule sigma) { return {false, mu, sigma}; }
};

struct Transform {
  std::vector<CoordinateRule> coords;

  std::size_t dim() const { return coords.size(); }
  /// Largest parameter index referenced plus one.
  std::size_t param_dim() const;
};

Vector apply(const Transform& t, const Vector& theta, const Vector& s);
Vector apply_inverse(const Transform& t, const Vector& theta, const Vector& x);
double log_abs_det_jacobian(const Transform& t, const Vector& theta, const Vector& s);
/// Gradient of log_abs_det_jacobian with respect to theta (it does not depend on s).
Vector log_abs_det_jacobian_gradient(const Transform& t, const Vector& theta);

struct TransformCheck {
  bool ok = true;
  std::string violation;
  double min_sigma = 1.0;  // infimum of the scales over the box
};

/// Verifies inf over the box of every scale is strictly positive.
TransformCheck validate_transform(const Transform& t, const ParamBox& box);

}  // namespace dsgd
