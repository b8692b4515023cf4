// SPDX-License-Identifier: Apache-2.0
#include "dsgd/stochastics.hpp"

#include <boost/math/special_functions/erf.hpp>

#include <cmath>
#include <limits>
#include <numbers>

#include "dsgd/error.hpp"

namespace dsgd {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kHalfLog2Pi = 0.91893853320467274178;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

void require_positive(double v, const char* what) {
  if (!(v > 0.0) || !std::isfinite(v)) throw InvalidArgument(std::string(what) + " must be positive");
}

double softplus_value(double t) { return t > 0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t)); }

double logistic(double t) {
  if (t >= 0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

}  // namespace

Distribution Distribution::std_normal(std::size_t dim) { return {DistributionKind::StdNormal, dim, 0.0, 1.0, 1.0}; }

Distribution Distribution::half_normal(double sigma, std::size_t dim) {
  require_positive(sigma, "half-normal sigma");
  return {DistributionKind::HalfNormal, dim, 0.0, sigma, 1.0};
}

Distribution Distribution::exponential(double rate, std::size_t dim) {
  require_positive(rate, "exponential rate");
  return {DistributionKind::Exponential, dim, 0.0, 1.0, rate};
}

Distribution Distribution::logistic(double mu, double s, std::size_t dim) {
  require_positive(s, "logistic scale");
  return {DistributionKind::Logistic, dim, mu, s, 1.0};
}

std::string to_string(DistributionKind kind) {
  switch (kind) {
    case DistributionKind::StdNormal: return "std_normal";
    case DistributionKind::HalfNormal: return "half_normal";
    case DistributionKind::Exponential: return "exponential";
    case DistributionKind::Logistic: return "logistic";
  }
  return "unknown";
}

std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> c, std::array<std::uint32_t, 2> k) {
  constexpr std::uint64_t kM0 = 0xD2511F53, kM1 = 0xCD9E8D57;
  constexpr std::uint32_t kW0 = 0x9E3779B9, kW1 = 0xBB67AE85;
  for (int round = 0; round < 10; ++round) {
    const std::uint64_t p0 = kM0 * c[0];
    const std::uint64_t p1 = kM1 * c[2];
    c = {static_cast<std::uint32_t>(p1 >> 32) ^ c[1] ^ k[0], static_cast<std::uint32_t>(p1),
         static_cast<std::uint32_t>(p0 >> 32) ^ c[3] ^ k[1], static_cast<std::uint32_t>(p0)};
    k[0] += kW0;
    k[1] += kW1;
  }
  return c;
}

double RngStream::uniform(std::uint64_t index, std::uint32_t coordinate) const {
  const std::uint64_t key = splitmix64(seed ^ splitmix64(stream + 0x632BE59BD9B4E019ULL));
  const auto out = philox4x32({static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), coordinate,
                               static_cast<std::uint32_t>(stream)},
                              {static_cast<std::uint32_t>(key), static_cast<std::uint32_t>(key >> 32)});
  const std::uint64_t bits = (static_cast<std::uint64_t>(out[0]) << 32 | out[1]) >> 11;
  return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
}

double standard_normal_quantile(double u) { return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * u); }

double sample_scalar(const Distribution& d, double u) {
  switch (d.kind) {
    case DistributionKind::StdNormal: return standard_normal_quantile(u);
    case DistributionKind::HalfNormal: return d.scale * std::numbers::sqrt2 * boost::math::erf_inv(u);
    case DistributionKind::Exponential: return -std::log1p(-u) / d.rate;
    case DistributionKind::Logistic: return d.location + d.scale * (std::log(u) - std::log1p(-u));
  }
  return 0.0;
}

Vector sample(const Distribution& d, const RngStream& rng, std::uint64_t index) {
  Vector s(static_cast<Eigen::Index>(d.dim));
  for (std::size_t j = 0; j < d.dim; ++j)
    s[static_cast<Eigen::Index>(j)] = sample_scalar(d, rng.uniform(index, static_cast<std::uint32_t>(j)));
  return s;
}

double logpdf_scalar(const Distribution& d, double x) {
  switch (d.kind) {
    case DistributionKind::StdNormal: return -kHalfLog2Pi - 0.5 * x * x;
    case DistributionKind::HalfNormal: {
      if (x < 0) return -kInf;
      const double u = x / d.scale;
      return std::numbers::ln2 - kHalfLog2Pi - std::log(d.scale) - 0.5 * u * u;
    }
    case DistributionKind::Exponential: return x < 0 ? -kInf : std::log(d.rate) - d.rate * x;
    case DistributionKind::Logistic: {
      const double t = std::abs((x - d.location) / d.scale);
      return -t - std::log(d.scale) - 2.0 * std::log1p(std::exp(-t));
    }
  }
  return -kInf;
}

double logpdf(const Distribution& d, const Vector& x) {
  double total = 0.0;
  for (Eigen::Index j = 0; j < x.size(); ++j) total += logpdf_scalar(d, x[j]);
  return total;
}

double cdf_scalar(const Distribution& d, double x) {
  switch (d.kind) {
    case DistributionKind::StdNormal: return 0.5 * std::erfc(-x / std::numbers::sqrt2);
    case DistributionKind::HalfNormal: return x <= 0 ? 0.0 : std::erf(x / (d.scale * std::numbers::sqrt2));
    case DistributionKind::Exponential: return x <= 0 ? 0.0 : -std::expm1(-d.rate * x);
    case DistributionKind::Logistic: return logistic((x - d.location) / d.scale);
  }
  return 0.0;
}

ParamBox::ParamBox(Vector lo, Vector hi) : lower(std::move(lo)), upper(std::move(hi)) {
  if (lower.size() != upper.size()) throw InvalidArgument("box bounds have different lengths");
  for (Eigen::Index i = 0; i < lower.size(); ++i) {
    if (!std::isfinite(lower[i]) || !std::isfinite(upper[i]) || !(lower[i] < upper[i]))
      throw InvalidArgument("box requires finite lower < upper in component " + std::to_string(i));
  }
}

ParamBox ParamBox::uniform(std::size_t m, double lo, double hi) {
  const auto n = static_cast<Eigen::Index>(m);
  return ParamBox(Vector::Constant(n, lo), Vector::Constant(n, hi));
}

bool ParamBox::contains(const Vector& theta) const {
  return theta.size() == lower.size() && (theta.array() >= lower.array()).all() &&
         (theta.array() <= upper.array()).all();
}

double ScaleRule::value_at(const Vector& theta) const {
  switch (kind) {
    case ScaleKind::Constant: return value;
    case ScaleKind::Exp: return std::exp(theta[static_cast<Eigen::Index>(index)]);
    case ScaleKind::Softplus: return softplus_value(theta[static_cast<Eigen::Index>(index)]) + value;
    case ScaleKind::Raw: return theta[static_cast<Eigen::Index>(index)];
  }
  return value;
}

double ScaleRule::derivative_at(const Vector& theta) const {
  switch (kind) {
    case ScaleKind::Constant: return 0.0;
    case ScaleKind::Exp: return std::exp(theta[static_cast<Eigen::Index>(index)]);
    case ScaleKind::Softplus: return logistic(theta[static_cast<Eigen::Index>(index)]);
    case ScaleKind::Raw: return 1.0;
  }
  return 0.0;
}

std::size_t Transform::param_dim() const {
  std::size_t m = 0;
  for (const auto& c : coords) {
    if (c.fixed) continue;
    if (c.mu.index) m = std::max(m, *c.mu.index + 1);
    if (c.sigma.kind != ScaleKind::Constant) m = std::max(m, c.sigma.index + 1);
  }
  return m;
}

namespace {

double location_at(const LocationRule& r, const Vector& theta) {
  return r.index ? r.slope * theta[static_cast<Eigen::Index>(*r.index)] + r.offset : r.offset;
}

void check_dims(const Transform& t, const Vector& theta, const Vector& v) {
  if (static_cast<std::size_t>(v.size()) != t.dim())
    throw InvalidArgument("sample has length " + std::to_string(v.size()) + ", transform expects " +
                          std::to_string(t.dim()));
  if (static_cast<std::size_t>(theta.size()) < t.param_dim())
    throw InvalidArgument("theta has length " + std::to_string(theta.size()) + ", transform needs " +
                          std::to_string(t.param_dim()));
}

}  // namespace

Vector apply(const Transform& t, const Vector& theta, const Vector& s) {
  check_dims(t, theta, s);
  Vector x(s.size());
  for (std::size_t j = 0; j < t.dim(); ++j) {
    const auto& c = t.coords[j];
    const auto i = static_cast<Eigen::Index>(j);
    x[i] = c.fixed ? s[i] : location_at(c.mu, theta) + c.sigma.value_at(theta) * s[i];
  }
  return x;
}

Vector apply_inverse(const Transform& t, const Vector& theta, const Vector& x) {
  check_dims(t, theta, x);
  Vector s(x.size());
  for (std::size_t j = 0; j < t.dim(); ++j) {
    const auto& c = t.coords[j];
    const auto i = static_cast<Eigen::Index>(j);
    s[i] = c.fixed ? x[i] : (x[i] - location_at(c.mu, theta)) / c.sigma.value_at(theta);
  }
  return s;
}

double log_abs_det_jacobian(const Transform& t, const Vector& theta, const Vector& s) {
  check_dims(t, theta, s);
  double total = 0.0;
  for (const auto& c : t.coords)
    if (!c.fixed) total += std::log(std::abs(c.sigma.value_at(theta)));
  return total;
}

Vector log_abs_det_jacobian_gradient(const Transform& t, const Vector& theta) {
  Vector g = Vector::Zero(theta.size());
  for (const auto& c : t.coords) {
    if (c.fixed || c.sigma.kind == ScaleKind::Constant) continue;
    g[static_cast<Eigen::Index>(c.sigma.index)] += c.sigma.derivative_at(theta) / c.sigma.value_at(theta);
  }
  return g;
}

TransformCheck validate_transform(const Transform& t, const ParamBox& box) {
  TransformCheck out;
  out.min_sigma = kInf;
  if (t.param_dim() > box.dim()) {
    out.ok = false;
    out.violation = "transform references a parameter outside the box";
    return out;
  }
  for (std::size_t j = 0; j < t.dim(); ++j) {
    const auto& c = t.coords[j];
    if (c.fixed) {
      out.min_sigma = std::min(out.min_sigma, 1.0);
      continue;
    }
    const double lo =
        c.sigma.kind == ScaleKind::Constant ? 0.0 : box.lower[static_cast<Eigen::Index>(c.sigma.index)];
    double inf_sigma = 0.0;
    switch (c.sigma.kind) {
      case ScaleKind::Constant: inf_sigma = c.sigma.value; break;
      case ScaleKind::Exp: inf_sigma = std::exp(lo); break;
      case ScaleKind::Softplus: inf_sigma = softplus_value(lo) + c.sigma.value; break;
      case ScaleKind::Raw: inf_sigma = lo; break;
    }
    out.min_sigma = std::min(out.min_sigma, inf_sigma);
    // Rejected even on a positive box: the scale must be positive by construction.
    if (c.sigma.kind == ScaleKind::Raw) {
      out.ok = false;
      out.violation = "scale of z" + std::to_string(j + 1) + " uses the raw parameterisation sigma = theta";
      return out;
    }
    if (!(inf_sigma > 0.0)) {
      out.ok = false;
      out.violation = "scale of z" + std::to_string(j + 1) + " has infimum " + std::to_string(inf_sigma) +
                      " over the parameter box";
      return out;
    }
  }
  if (t.dim() == 0) out.min_sigma = 1.0;
  return out;
}

}  // namespace dsgd
