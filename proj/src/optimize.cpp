// SPDX-License-Identifier: Apache-2.0
#include "dsgd/optimize.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include "dsgd/error.hpp"

namespace dsgd {

EtaRule EtaRule::anchored(double eta_anchor, std::uint64_t k_anchor, double rho) {
  if (!(eta_anchor > 0.0)) throw InvalidArgument("eta anchor must be positive");
  if (k_anchor < 1) throw InvalidArgument("eta anchor iteration must be at least 1");
  return power_law(eta_anchor * std::pow(static_cast<double>(k_anchor), rho), rho);
}

void ScheduleSpec::validate() const {
  if (!(gamma.gamma0 > 0.0) || !std::isfinite(gamma.gamma0)) throw InvalidArgument("gamma0 must be positive");
  if (gamma.kind == GammaRule::Kind::PowerLaw && !(gamma.exponent > 0.0))
    throw InvalidExponent("step-size exponent must be positive");
  if (!(eta.eta0 > 0.0) || !std::isfinite(eta.eta0)) throw InvalidArgument("eta0 must be positive");
  if (!(eta.floor > 0.0)) throw InvalidArgument("eta floor must be positive");
  if (!(eta.sharpness > 0.0)) throw InvalidArgument("sharpness must be positive");
  if (eta.kind == EtaRule::Kind::PowerLaw && !(eta.exponent > 0.0) )
    throw InvalidExponent("accuracy exponent must be positive, got " + std::to_string(eta.exponent));
}

Accuracy eta_at(const ScheduleSpec& spec, std::uint64_t k) {
  if (k < 1) throw InvalidArgument("schedules are indexed from k = 1");
  const auto& r = spec.eta;
  if (r.kind == EtaRule::Kind::PowerLaw && !(r.exponent > 0.0))
    throw InvalidExponent("accuracy exponent must be positive, got " + std::to_string(r.exponent));
  double eta = r.eta0;
  if (r.kind == EtaRule::Kind::PowerLaw) eta = r.eta0 * std::pow(static_cast<double>(k), -r.exponent);
  return Accuracy(std::max(eta, r.floor), r.sharpness, r.floor);
}

double gamma_at(const ScheduleSpec& spec, std::uint64_t k) {
  if (k < 1) throw InvalidArgument("schedules are indexed from k = 1");
  const auto& g = spec.gamma;
  switch (g.kind) {
    case GammaRule::Kind::Constant:
      return g.gamma0;
    case GammaRule::Kind::Harmonic:
      return g.gamma0 / static_cast<double>(k);
    case GammaRule::Kind::PowerLaw:
      return g.gamma0 * std::pow(static_cast<double>(k), -g.exponent);
  }
  return g.gamma0;
}

ScheduleSpec theorem_schedule(std::size_t ell, std::optional<double> eps, double eta0, double gamma0) {
  if (ell == 0) throw InvalidExponent("theorem schedule needs nesting depth at least 1");
  const double inv = 1.0 / static_cast<double>(ell);
  const double e = eps.value_or(0.1 * inv);
  if (!(e > 0.0 && e < inv))
    throw InvalidExponent("epsilon must lie in (0, 1/ell) = (0, " + std::to_string(inv) + "), got " +
                          std::to_string(e));
  ScheduleSpec s{GammaRule::harmonic(gamma0), EtaRule::power_law(eta0, inv - e)};
  s.validate();
  return s;
}

CompatibilityReport check_compatibility(const ScheduleSpec& spec, std::size_t ell, std::uint64_t horizon) {
  if (horizon < 100) throw InvalidArgument("compatibility horizon must be at least 100");
  spec.validate();
  CompatibilityReport rep;

  const double a = spec.gamma.kind == GammaRule::Kind::Constant ? 0.0 : spec.gamma.exponent;
  const double b = spec.eta.kind == EtaRule::Kind::Fixed ? 0.0 : spec.eta.exponent;
  const double x = b * static_cast<double>(ell);
  rep.strict = a <= 1.0 && 2.0 * a - x > 1.0;
  if (a < 1.0)
    rep.relaxed = x < a;
  else if (a == 1.0)
    rep.relaxed = x < 1.0;
  rep.compatible = rep.strict || rep.relaxed;

  // Partial sums without the eta floor: the verdict concerns the exact power laws.
  const double g0 = spec.gamma.gamma0, e0 = spec.eta.eta0, l = static_cast<double>(ell);
  std::uint64_t next = 10;
  for (std::uint64_t k = 1; k <= horizon; ++k) {
    const double lk = std::log(static_cast<double>(k));
    const double g = g0 * std::exp(-a * lk);
    const double eta = e0 * std::exp(-b * lk);
    rep.s1 += g;
    rep.s2 += g * g * std::pow(eta, -l);
    if (k == next || k == horizon) {
      rep.horizons.push_back(k);
      rep.ratios.push_back(rep.s2 / rep.s1);
      if (k == next) next *= 10;
    }
  }
  // Relaxed condition numerically: the ratio keeps falling at a visible power-law rate.
  const std::size_t h = rep.ratios.size();
  bool decreasing = h >= 3;
  for (std::size_t i = h >= 3 ? h - 3 : 0; i + 1 < h; ++i) decreasing = decreasing && rep.ratios[i + 1] < rep.ratios[i];
  if (decreasing) {
    const double slope = std::log(rep.ratios[h - 1] / rep.ratios[h - 3]) /
                         std::log(static_cast<double>(rep.horizons[h - 1]) / static_cast<double>(rep.horizons[h - 3]));
    decreasing = slope < -0.005;
  }
  rep.numeric_decreasing = decreasing;

  std::ostringstream os;
  os << (rep.compatible ? "compatible" : "incompatible") << " (gamma ~ k^-" << a << ", eta ~ k^-" << b << ", ell " << ell
     << ": " << (rep.strict ? "summable" : rep.relaxed ? "relaxed form only" : "2a - b*ell <= 1 and b*ell >= a")
     << "; numeric ratio " << (rep.numeric_decreasing ? "decreasing" : "not decreasing") << ")";
  rep.verdict = os.str();
  return rep;
}

Vector project(const Vector& theta, const ParamBox& box, bool* clamped) {
  const Vector out = theta.cwiseMax(box.lower).cwiseMin(box.upper);
  if (clamped) *clamped = (out.array() != theta.array()).any();
  return out;
}

Vector adam_update(AdamState& state, const Vector& grad, const AdamConfig& cfg) {
  if (state.m.size() != grad.size()) {
    if (state.t != 0) throw InvalidArgument("Adam state has wrong dimension");
    state = AdamState(grad.size());
  }
  ++state.t;
  state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grad;
  state.v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grad.cwiseProduct(grad);
  const double t = static_cast<double>(state.t);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  return -cfg.alpha * (state.m / c1).array() / ((state.v / c2).array().sqrt() + cfg.eps);
}

namespace {

Vector apply_update(const ModelSpec& model, const Vector& theta, const Vector& grad, std::uint64_t k,
                    const ScheduleSpec& sched, const OptimizerConfig& opt, OptimizerState& state, bool& clamped) {
  // Internally everything is a minimisation of -objective for maximisation problems.
  const Vector descent = model.sense() == Sense::Maximize ? Vector(-grad) : grad;
  Vector next;
  if (opt.kind == OptimizerConfig::Kind::Adam) {
    if (!state.adam) state.adam.emplace(theta.size());
    next = theta + adam_update(*state.adam, descent, opt.adam);
  } else {
    next = theta - gamma_at(sched, k) * descent;
  }
  return project(next, model.box(), &clamped);
}

}  // namespace

StepResult dsgd_step(const ModelSpec& model, const Vector& theta, std::uint64_t k, const ScheduleSpec& sched,
                     const OptimizerConfig& opt, OptimizerState& state, std::size_t mc_samples, const RngStream& rng,
                     std::size_t workers) {
  const auto kind = EstimatorKind::smoothed(eta_at(sched, k));
  const GradStats st = estimate(kind, model, theta, mc_samples, rng, workers, (k - 1) * mc_samples);
  StepResult r;
  r.gradient = st.mean;
  r.theta = apply_update(model, theta, st.mean, k, sched, opt, state, r.clamped);
  return r;
}

Trajectory run(const ModelSpec& model, const RunOptions& o) {
  if (o.iterations > 0 && o.mc_samples < 1) throw InvalidArgument("mc_samples must be at least 1");
  if (o.diagnostics && o.diag_interval < 1) throw InvalidArgument("diag_interval must be at least 1");
  if (o.diagnostics && o.diag_samples < 2) throw InvalidArgument("diag_samples must be at least 2");
  o.sched.validate();
  if (o.estimator) o.estimator->require_applicable(model);

  const auto start = std::chrono::steady_clock::now();
  const RngStream opt_rng{o.seed, kOptimisationStream};
  const RngStream elbo_rng{o.seed, kDiagnosticElboStream};
  const RngStream grad_rng{o.seed, kDiagnosticGradStream};

  auto kind_at = [&](std::uint64_t k) {
    return o.estimator ? *o.estimator : EstimatorKind::smoothed(eta_at(o.sched, std::max<std::uint64_t>(k, 1)));
  };
  auto eta_value = [&](const EstimatorKind& kind) {
    return kind.type() == EstimatorKind::Type::Smoothed ? kind.accuracy().eta() : 0.0;
  };
  const double step_value_adam = o.optimizer.adam.alpha;

  Trajectory tr;
  tr.seed = o.seed;
  Vector theta = o.theta0.value_or(model.theta0());
  if (static_cast<std::size_t>(theta.size()) != model.m())
    throw InvalidArgument("theta0 has length " + std::to_string(theta.size()) + ", model expects " +
                          std::to_string(model.m()));
  if (!model.box().contains(theta)) throw InvalidArgument("theta0 outside the parameter box");
  tr.iterations.reserve(o.iterations + 1);

  auto checkpoint = [&](std::uint64_t k) {
    const auto kind = kind_at(k);
    const std::uint64_t c = k / o.diag_interval;
    ScalarEstimate elbo;
    GradStats gs;
    try {
      elbo = elbo_estimate(model, theta, o.diag_samples, elbo_rng, o.workers, c * o.diag_samples);
      gs = estimate(kind, model, theta, o.diag_samples, grad_rng, o.workers, c * o.diag_samples);
    } catch (const NonFiniteGradient& e) {
      throw e.at("checkpoint at iteration " + std::to_string(k));
    }
    tr.checkpoints.push_back(Checkpoint{k, theta, eta_value(kind), elbo.mean, elbo.standard_error, gs.var_avg,
                                        gs.var_norm, tr.clamp_events,
                                        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()});
  };

  tr.iterations.push_back(IterationRecord{0, theta, eta_value(kind_at(1)), 0.0});
  if (o.diagnostics) checkpoint(0);

  OptimizerState state;
  for (std::uint64_t k = 1; k <= o.iterations; ++k) {
    const auto kind = kind_at(k);
    GradStats st;
    try {
      st = estimate(kind, model, theta, o.mc_samples, opt_rng, o.workers, (k - 1) * o.mc_samples);
    } catch (const NonFiniteGradient& e) {
      throw e.at("iteration " + std::to_string(k));
    }
    bool clamped = false;
    theta = apply_update(model, theta, st.mean, k, o.sched, o.optimizer, state, clamped);
    if (clamped) ++tr.clamp_events;
    const double step = o.optimizer.kind == OptimizerConfig::Kind::Adam ? step_value_adam : gamma_at(o.sched, k);
    tr.iterations.push_back(IterationRecord{k, theta, eta_value(kind), step});
    if (o.diagnostics && k % o.diag_interval == 0) checkpoint(k);
  }
  tr.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return tr;
}

}  // namespace dsgd
