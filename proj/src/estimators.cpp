// SPDX-License-Identifier: Apache-2.0
#include "dsgd/estimators.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <exception>
#include <thread>
#include <vector>

#include "dsgd/error.hpp"

namespace dsgd {

namespace {

constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double parse_number(std::string_view text, std::string_view field) {
  double v = 0.0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v))
    throw InvalidArgument("estimator field '" + std::string(field) + "': not a number: '" + std::string(text) + "'");
  return v;
}

}  // namespace

EstimatorKind EstimatorKind::parse(std::string_view text) {
  if (text == "reparam") return reparam();
  if (text == "score") return score();
  if (text == "boundary-oracle") return boundary_oracle();
  constexpr std::string_view prefix = "smoothed:";
  if (text.substr(0, prefix.size()) == prefix) {
    std::optional<double> eta;
    double sharpness = 1.0;
    std::string_view rest = text.substr(prefix.size());
    while (!rest.empty()) {
      const auto comma = rest.find(',');
      const std::string_view item = rest.substr(0, comma);
      rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
      const auto eq = item.find('=');
      if (eq == std::string_view::npos) throw InvalidArgument("estimator: expected key=value, got '" + std::string(item) + "'");
      const auto key = item.substr(0, eq);
      const auto value = item.substr(eq + 1);
      if (key == "eta")
        eta = parse_number(value, key);
      else if (key == "sharpness")
        sharpness = parse_number(value, key);
      else
        throw InvalidArgument("estimator: unknown key '" + std::string(key) + "'");
    }
    if (!eta) throw InvalidArgument("estimator: smoothed requires eta=<value>");
    return smoothed(Accuracy(*eta, sharpness));
  }
  throw InvalidArgument("estimator: unknown kind '" + std::string(text) + "'");
}

std::string EstimatorKind::to_string() const {
  switch (type_) {
    case Type::Reparam:
      return "reparam";
    case Type::Score:
      return "score";
    case Type::BoundaryOracle:
      return "boundary-oracle";
    case Type::Smoothed: {
      char buf[64];
      auto r = std::to_chars(buf, buf + sizeof buf, acc_->eta());
      std::string out = "smoothed:eta=" + std::string(buf, r.ptr);
      if (acc_->sharpness() != 1.0) {
        r = std::to_chars(buf, buf + sizeof buf, acc_->sharpness());
        out += ",sharpness=" + std::string(buf, r.ptr);
      }
      return out;
    }
  }
  return {};
}

const Accuracy& EstimatorKind::accuracy() const {
  if (!acc_) throw InvalidArgument("estimator '" + to_string() + "' has no accuracy coefficient");
  return *acc_;
}

void EstimatorKind::require_applicable(const ModelSpec& model) const {
  if (type_ == Type::BoundaryOracle && !model.boundary_eligible())
    throw NotEligible("boundary-oracle needs a one-dimensional model with a single affine guard, '" + model.name() +
                      "' is not");
  if (type_ == Type::Score && model.base().kind != DistributionKind::StdNormal)
    throw NotEligible("score estimator needs a standard normal base, model '" + model.name() + "' uses " +
                      dsgd::to_string(model.base().kind));
}

namespace {

// d/dtheta log q_theta(x) at x = phi_theta(s) for Gaussian location-scale coordinates.
Vector gaussian_score(const ModelSpec& model, const Vector& theta, const Vector& s) {
  Vector g = Vector::Zero(theta.size());
  const auto& coords = model.transform().coords;
  for (std::size_t j = 0; j < coords.size(); ++j) {
    const auto& c = coords[j];
    if (c.fixed) continue;
    const double sj = s[static_cast<Eigen::Index>(j)];
    const double sigma_v = c.sigma.value_at(theta);
    if (c.mu.index) g[static_cast<Eigen::Index>(*c.mu.index)] += c.mu.slope * sj / sigma_v;
    if (c.sigma.kind != ScaleKind::Constant)
      g[static_cast<Eigen::Index>(c.sigma.index)] += c.sigma.derivative_at(theta) * (sj * sj - 1.0) / sigma_v;
  }
  return g;
}

Gradient score_gradient(const ModelSpec& model, const Vector& theta, const Vector& s) {
  Gradient g;
  const double f = eval(model.expr(), apply(model.transform(), theta, s));
  g.value = f;
  g.wrt_theta = f * gaussian_score(model, theta, s);
  if (model.include_entropy()) {
    g.value += log_abs_det_jacobian(model.transform(), theta, s);
    g.wrt_theta += log_abs_det_jacobian_gradient(model.transform(), theta);
  }
  if (!std::isfinite(g.value) || !g.wrt_theta.allFinite()) throw NonFiniteGradient("score estimator, model '" + model.name() + "'");
  return g;
}

}  // namespace

Vector boundary_term(const ModelSpec& model, const Vector& theta) {
  if (!model.boundary_eligible())
    throw NotEligible("boundary term needs a single affine guard in one latent, model '" + model.name() + "'");
  const auto& b = *model.boundary();
  const auto& c = model.transform().coords[0];
  const double x0 = b.root();
  const double mu = c.mu.offset + (c.mu.index ? c.mu.slope * theta[static_cast<Eigen::Index>(*c.mu.index)] : 0.0);
  const double sigma_v = c.sigma.value_at(theta);
  const double s0 = (x0 - mu) / sigma_v;

  Assignment at_root(1);
  at_root[0] = x0;
  // With a > 0 the then-branch owns s < s0, so raising s0 moves mass from else to then.
  double jump = eval(b.then_expr, at_root) - eval(b.else_expr, at_root);
  if (b.slope < 0.0) jump = -jump;
  const double density = kInvSqrt2Pi * std::exp(-0.5 * s0 * s0);

  Vector ds0 = Vector::Zero(theta.size());
  if (c.mu.index) ds0[static_cast<Eigen::Index>(*c.mu.index)] -= c.mu.slope / sigma_v;
  if (c.sigma.kind != ScaleKind::Constant)
    ds0[static_cast<Eigen::Index>(c.sigma.index)] -= s0 * c.sigma.derivative_at(theta) / sigma_v;
  return jump * density * ds0;
}

Gradient sample_gradient(const EstimatorKind& kind, const ModelSpec& model, const Vector& theta, const RngStream& rng,
                         std::uint64_t index) {
  const Vector s = sample(model.base(), rng, index);
  switch (kind.type()) {
    case EstimatorKind::Type::Reparam:
      return grad_reparam_biased(model, theta, s);
    case EstimatorKind::Type::Smoothed:
      return grad_smoothed(model, theta, s, kind.accuracy());
    case EstimatorKind::Type::Score:
      kind.require_applicable(model);
      return score_gradient(model, theta, s);
    case EstimatorKind::Type::BoundaryOracle: {
      kind.require_applicable(model);
      Gradient g = grad_reparam_biased(model, theta, s);
      g.wrt_theta += boundary_term(model, theta);
      return g;
    }
  }
  throw InvalidArgument("unknown estimator");
}

namespace {

// Streaming moments of one block of draws.
struct Moments {
  std::size_t n = 0;
  Vector mean, m2;
  double norm_mean = 0.0, norm_m2 = 0.0;
  double value_mean = 0.0, value_m2 = 0.0;

  explicit Moments(Eigen::Index m = 0) : mean(Vector::Zero(m)), m2(Vector::Zero(m)) {}

  void push(const Vector& g, double value) {
    ++n;
    const double inv = 1.0 / static_cast<double>(n);
    const Vector d = g - mean;
    mean += d * inv;
    m2.array() += d.array() * (g - mean).array();
    const double norm = g.norm();
    const double dn = norm - norm_mean;
    norm_mean += dn * inv;
    norm_m2 += dn * (norm - norm_mean);
    const double dv = value - value_mean;
    value_mean += dv * inv;
    value_m2 += dv * (value - value_mean);
  }
};

Moments merge(const Moments& a, const Moments& b) {
  if (a.n == 0) return b;
  if (b.n == 0) return a;
  Moments out;
  out.n = a.n + b.n;
  const double na = static_cast<double>(a.n), nb = static_cast<double>(b.n), n = static_cast<double>(out.n);
  const Vector d = b.mean - a.mean;
  out.mean = a.mean + d * (nb / n);
  out.m2 = a.m2 + b.m2 + d.cwiseProduct(d) * (na * nb / n);
  const double dn = b.norm_mean - a.norm_mean;
  out.norm_mean = a.norm_mean + dn * (nb / n);
  out.norm_m2 = a.norm_m2 + b.norm_m2 + dn * dn * (na * nb / n);
  const double dv = b.value_mean - a.value_mean;
  out.value_mean = a.value_mean + dv * (nb / n);
  out.value_m2 = a.value_m2 + b.value_m2 + dv * dv * (na * nb / n);
  return out;
}

Moments tree_reduce(const std::vector<Moments>& leaves, std::size_t lo, std::size_t hi) {
  if (hi - lo == 1) return leaves[lo];
  const std::size_t mid = lo + (hi - lo) / 2;
  return merge(tree_reduce(leaves, lo, mid), tree_reduce(leaves, mid, hi));
}

constexpr std::size_t kBlock = 64;

/// Draws sample i in [first, first + n) via `draw(i, grad, value)`; the leaf and
/// tree shapes depend only on n.
template <class Draw>
Moments reduce_draws(std::size_t n, Eigen::Index m, std::size_t workers, std::uint64_t first, const Draw& draw) {
  const std::size_t blocks = (n + kBlock - 1) / kBlock;
  std::vector<Moments> leaves(blocks, Moments(m));
  std::vector<std::exception_ptr> errors(blocks);

  auto work = [&](std::size_t w, std::size_t stride) {
    for (std::size_t b = w; b < blocks; b += stride) {
      try {
        const std::size_t end = std::min(n, (b + 1) * kBlock);
        for (std::size_t i = b * kBlock; i < end; ++i) {
          const std::uint64_t index = first + i;
          try {
            const auto [g, v] = draw(index);
            leaves[b].push(g, v);
          } catch (const NonFiniteGradient& e) {
            throw e.at("sample " + std::to_string(index));
          }
        }
      } catch (...) {
        errors[b] = std::current_exception();
        return;
      }
    }
  };

  workers = std::max<std::size_t>(1, std::min(workers, blocks));
  if (workers == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w, workers);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return blocks == 0 ? Moments(m) : tree_reduce(leaves, 0, blocks);
}

}  // namespace

GradStats estimate(const EstimatorKind& kind, const ModelSpec& model, const Vector& theta, std::size_t n_samples,
                   const RngStream& rng, std::size_t workers, std::uint64_t first_index) {
  if (n_samples == 0) throw InvalidArgument("n_samples must be at least 1");
  kind.require_applicable(model);
  const auto start = std::chrono::steady_clock::now();
  const Moments mo = reduce_draws(n_samples, theta.size(), workers, first_index, [&](std::uint64_t i) {
    Gradient g = sample_gradient(kind, model, theta, rng, i);
    return std::pair{std::move(g.wrt_theta), g.value};
  });
  GradStats st;
  st.n_samples = n_samples;
  st.mean = mo.mean;
  st.value_mean = mo.value_mean;
  if (n_samples >= 2) {
    const double denom = static_cast<double>(n_samples - 1);
    st.variance = mo.m2 / denom;
    st.var_avg = st.variance.size() ? st.variance.mean() : 0.0;
    st.var_norm = mo.norm_m2 / denom;
  } else {
    st.variance = Vector::Zero(theta.size());
  }
  st.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return st;
}

ScalarEstimate elbo_estimate(const ModelSpec& model, const Vector& theta, std::size_t n_samples, const RngStream& rng,
                             std::size_t workers, std::uint64_t first_index) {
  if (n_samples == 0) throw InvalidArgument("n_samples must be at least 1");
  const Vector empty(0);
  const Moments mo = reduce_draws(n_samples, 0, workers, first_index, [&](std::uint64_t i) {
    const double v = objective_standard(model, theta, sample(model.base(), rng, i));
    if (!std::isfinite(v)) throw NonFiniteGradient("objective value, model '" + model.name() + "'");
    return std::pair{empty, v};
  });
  ScalarEstimate out;
  out.n_samples = n_samples;
  out.mean = mo.value_mean;
  if (n_samples >= 2) out.standard_error = std::sqrt(mo.value_m2 / static_cast<double>(n_samples - 1) / static_cast<double>(n_samples));
  return out;
}

}  // namespace dsgd
