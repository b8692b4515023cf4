// SPDX-License-Identifier: Apache-2.0
//
// Step-size and accuracy schedules, SGD/Adam updates with box projection, and
// the optimisation driver that differentiates the eta_k-smoothed objective at
// iteration k.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dsgd/estimators.hpp"
#include "dsgd/model.hpp"
#include "dsgd/smoothing.hpp"

namespace dsgd {

struct GammaRule {
  enum class Kind { Constant, Harmonic, PowerLaw };
  Kind kind = Kind::Harmonic;
  double gamma0 = 1.0;
  double exponent = 1.0;  // PowerLaw: gamma0 * k^-exponent

  static GammaRule constant(double g0) { return {Kind::Constant, g0, 0.0}; }
  static GammaRule harmonic(double g0) { return {Kind::Harmonic, g0, 1.0}; }
  static GammaRule power_law(double g0, double a) { return {Kind::PowerLaw, g0, a}; }
};

struct EtaRule {
  enum class Kind { Fixed, PowerLaw };
  Kind kind = Kind::PowerLaw;
  double eta0 = 1.0;
  double exponent = 0.5;  // rho
  double floor = kDefaultEtaFloor;
  double sharpness = 1.0;

  static EtaRule fixed(double eta) { return {Kind::Fixed, eta, 0.0}; }
  static EtaRule power_law(double eta0, double rho) { return {Kind::PowerLaw, eta0, rho}; }
  /// Power law through eta_k = eta_anchor at k = k_anchor.
  static EtaRule anchored(double eta_anchor, std::uint64_t k_anchor, double rho);
};

struct ScheduleSpec {
  GammaRule gamma;
  EtaRule eta;

  /// Throws InvalidArgument / InvalidExponent when a field is out of range.
  void validate() const;
};

/// eta_k for k >= 1, floored at eta.floor.
Accuracy eta_at(const ScheduleSpec& spec, std::uint64_t k);
double gamma_at(const ScheduleSpec& spec, std::uint64_t k);

/// eta_k = eta0 * k^-(1/ell - eps) with harmonic steps gamma0 / k.
ScheduleSpec theorem_schedule(std::size_t ell, std::optional<double> eps = std::nullopt, double eta0 = 1.0,
                              double gamma0 = 1.0);

struct CompatibilityReport {
  bool strict = false;          // sum gamma = inf and sum gamma^2 eta^-ell < inf
  bool relaxed = false;         // (sum gamma)^-1 sum gamma^2 eta^-ell -> 0
  bool compatible = false;      // strict || relaxed
  bool numeric_decreasing = false;
  std::vector<std::uint64_t> horizons;  // decades 10, 100, ...
  std::vector<double> ratios;           // S2 / S1 at each horizon
  double s1 = 0.0;
  double s2 = 0.0;
  std::string verdict;
};

CompatibilityReport check_compatibility(const ScheduleSpec& spec, std::size_t ell, std::uint64_t horizon = 1000000);

/// Clamps every coordinate into the box; `clamped` reports whether any moved.
Vector project(const Vector& theta, const ParamBox& box, bool* clamped = nullptr);

struct AdamState {
  Vector m;
  Vector v;
  std::uint64_t t = 0;

  explicit AdamState(Eigen::Index dim = 0) : m(Vector::Zero(dim)), v(Vector::Zero(dim)) {}
};

struct AdamConfig {
  double alpha = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One Adam update for minimisation; returns the step to add to theta.
Vector adam_update(AdamState& state, const Vector& grad, const AdamConfig& cfg = {});

struct OptimizerConfig {
  enum class Kind { Sgd, Adam };
  Kind kind = Kind::Adam;
  AdamConfig adam;  // alpha is also the constant step for Adam runs
};

struct OptimizerState {
  std::optional<AdamState> adam;  // empty for plain SGD
};

struct StepResult {
  Vector theta;
  Vector gradient;  // mean ascent/descent direction of the objective
  bool clamped = false;
};

/// theta_{k+1} from one smoothed gradient estimate at accuracy eta_at(k).
StepResult dsgd_step(const ModelSpec& model, const Vector& theta, std::uint64_t k, const ScheduleSpec& sched,
                     const OptimizerConfig& opt, OptimizerState& state, std::size_t mc_samples, const RngStream& rng,
                     std::size_t workers = 1);

struct RunOptions {
  // Empty means DSGD with sched.eta; otherwise this fixed estimator at every step.
  std::optional<EstimatorKind> estimator;
  ScheduleSpec sched;
  OptimizerConfig optimizer;
  std::uint64_t iterations = 10000;
  std::size_t mc_samples = 16;
  std::uint64_t diag_interval = 100;
  std::size_t diag_samples = 1000;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  bool diagnostics = true;
  std::optional<Vector> theta0;  // defaults to the model's
};

struct IterationRecord {
  std::uint64_t k;
  Vector theta;
  double eta;   // 0 when the estimator is not smoothed
  double step;  // gamma_k or the Adam alpha
};

struct Checkpoint {
  std::uint64_t k;
  Vector theta;
  double eta;
  double elbo_mean;
  double elbo_se;
  double var_avg;
  double var_norm;
  std::uint64_t clamp_events;  // cumulative
  double wall_seconds;         // since the start of the run
};

struct Trajectory {
  std::vector<IterationRecord> iterations;  // k = 0..N
  std::vector<Checkpoint> checkpoints;
  std::uint64_t seed = 0;
  std::uint64_t clamp_events = 0;
  double wall_seconds = 0.0;

  const Vector& final_theta() const { return iterations.back().theta; }
};

inline constexpr std::uint64_t kOptimisationStream = 0;
inline constexpr std::uint64_t kDiagnosticElboStream = 1;
inline constexpr std::uint64_t kDiagnosticGradStream = 2;

Trajectory run(const ModelSpec& model, const RunOptions& options);

}  // namespace dsgd
