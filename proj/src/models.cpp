// SPDX-License-Identifier: Apache-2.0
#include "dsgd/models.hpp"

#include <charconv>
#include <cmath>
#include <functional>
#include <sstream>

#include "dsgd/error.hpp"
#include "dsgd/quadrature.hpp"
#include "dsgd/stochastics.hpp"

namespace dsgd {

namespace {

constexpr double kInvSqrt2Pi = 0.39894228040143267794;
constexpr std::uint64_t kDataSeed = 0x5eed'da7aULL;

Expr V(std::size_t j) { return var(j); }
Expr C(double v) { return constant(v); }
Expr If(Expr g, Expr a, Expr b) { return if_then_else(std::move(g), std::move(a), std::move(b)); }
Expr affine(double a, double b, Expr e) { return call("affine", {std::move(e)}, {a, b}); }
Expr normal_lp(Expr x, Expr mu, Expr sd) { return call("normal_logpdf", {std::move(x), std::move(mu), std::move(sd)}); }

/// Balanced sum, so deep models do not produce deep trees.
Expr sum(const std::vector<Expr>& terms, std::size_t lo, std::size_t hi) {
  if (hi - lo == 1) return terms[lo];
  const std::size_t mid = lo + (hi - lo) / 2;
  return sum(terms, lo, mid) + sum(terms, mid, hi);
}
Expr sum(const std::vector<Expr>& terms) {
  if (terms.empty()) return C(0.0);
  return sum(terms, 0, terms.size());
}

Transform shift_transform(std::size_t n) {
  Transform t;
  for (std::size_t j = 0; j < n; ++j)
    t.coords.push_back(CoordinateRule::location_scale(LocationRule::param(j), ScaleRule::constant(1.0)));
  return t;
}

/// Mean-field Gaussian: x_j = theta_j + exp(theta_{n+j}) s_j.
Transform mean_field(std::size_t n) {
  Transform t;
  for (std::size_t j = 0; j < n; ++j)
    t.coords.push_back(CoordinateRule::location_scale(LocationRule::param(j), ScaleRule::exp(n + j)));
  return t;
}

ParamBox mean_field_box(const std::vector<std::pair<double, double>>& means, double log_lo, double log_hi) {
  const auto n = static_cast<Eigen::Index>(means.size());
  Vector lo(2 * n), hi(2 * n);
  for (Eigen::Index j = 0; j < n; ++j) {
    lo[j] = means[static_cast<std::size_t>(j)].first;
    hi[j] = means[static_cast<std::size_t>(j)].second;
    lo[n + j] = log_lo;
    hi[n + j] = log_hi;
  }
  return ParamBox(lo, hi);
}

std::size_t poisson_quantile(double lambda, double u) {
  std::size_t k = 0;
  double p = std::exp(-lambda), cdf = p;
  while (u > cdf && k < 10000) {
    ++k;
    p *= lambda / static_cast<double>(k);
    cdf += p;
  }
  return k;
}

// Ground truth for the synthetic data sets.
struct TextmsgTruth {
  static constexpr double rate_before = 18.0;
  static constexpr double rate_after = 24.0;
  static constexpr double change_day = 20.0;
};

struct Thermostat {
  static constexpr double start = 19.5;
  static constexpr double prior_sd = 1.0;
  static constexpr double setpoint = 20.0;
  static constexpr double alarm_level = 20.8;
  static constexpr double heat = 0.6;
  static constexpr double cool = 0.5;
  static constexpr double process_sd = 0.25;
  static constexpr double sensor_sd = 0.4;
  static constexpr double alarm_hit = 0.95;  // P(alarm | too hot)
  static constexpr double alarm_false = 0.05;
};

constexpr double kCheatingRate = 0.3;

}  // namespace

ModelSpec model_example11() {
  ModelDefinition d{
      .name = "example11",
      .expr = C(-0.5) * call("sq", {V(1)}) + If(V(1), C(0.0), C(1.0)),
      .transform = shift_transform(1),
      .base = Distribution::std_normal(1),
      .box = ParamBox::uniform(1, -3.0, 3.0),
      .theta0 = Vector::Zero(1),
      .sense = Sense::Maximize,
      .include_entropy = false,
      .description = "f(z) = -0.5 z^2 + [z >= 0], z = s + theta",
  };
  return ModelSpec(std::move(d));
}

ModelSpec model_step() {
  ModelDefinition d{
      .name = "step",
      .expr = If(V(1), C(0.0), C(1.0)),
      .transform = shift_transform(1),
      .base = Distribution::std_normal(1),
      .box = ParamBox::uniform(1, -3.0, 3.0),
      .theta0 = Vector::Zero(1),
      .sense = Sense::Maximize,
      .include_entropy = false,
      .description = "unit step [z >= 0], z = s + theta",
  };
  return ModelSpec(std::move(d));
}

ModelSpec model_nested_l2() {
  const Expr inner = If(V(1), C(0.0), C(1.0)) + If(V(2), C(0.0), C(1.0));
  ModelDefinition d{
      .name = "nested_l2",
      .expr = If(affine(1.0, -1.5, inner), C(0.0), C(1.0)),
      .transform = shift_transform(2),
      .base = Distribution::std_normal(2),
      .box = ParamBox::uniform(2, -3.0, 3.0),
      .theta0 = Vector::Zero(2),
      .sense = Sense::Maximize,
      .include_entropy = false,
      .description = "indicator that both z1 and z2 are non-negative, written with the steps inside the guard",
  };
  return ModelSpec(std::move(d));
}

ModelSpec model_random_walk(std::size_t steps) {
  if (steps < 2) throw InvalidArgument("random_walk: steps must be at least 2");
  constexpr double kStartPriorMean = 1.5, kStartPriorSd = 1.0;
  constexpr double kObservedDistance = 3.0, kObservationSd = 0.5;

  // z1 is the start position, z2..z_steps the signed increments; the walk stops
  // once the position drops below zero.
  std::vector<Expr> position{V(1)};
  for (std::size_t i = 1; i < steps; ++i) position.push_back(position.back() + V(i + 1));
  Expr walked = If(position[steps - 1], C(0.0), C(0.0));
  for (std::size_t i = steps - 1; i-- > 0;) {
    const Expr step = V(i + 2);
    const Expr abs_step = If(step, -step, step);
    walked = If(position[i], C(0.0), abs_step + walked);
  }
  const Expr objective = normal_lp(V(1), C(kStartPriorMean), C(kStartPriorSd)) +
                         normal_lp(C(kObservedDistance), walked, C(kObservationSd));

  Transform t;
  t.coords.push_back(CoordinateRule::location_scale(LocationRule::param(0), ScaleRule::exp(1)));
  for (std::size_t i = 1; i < steps; ++i) t.coords.push_back(CoordinateRule::identity());
  Vector lo(2), hi(2);
  lo << -2.0, -4.0;
  hi << 6.0, 1.0;
  ModelDefinition d{
      .name = "random_walk",
      .expr = objective,
      .transform = t,
      .base = Distribution::std_normal(steps),
      .box = ParamBox(lo, hi),
      .theta0 = std::nullopt,
      .sense = Sense::Maximize,
      .include_entropy = true,
      .description = "start position of a bounded random walk from the distance walked",
  };
  return ModelSpec(std::move(d));
}

ModelSpec model_temperature_lite(std::size_t horizon) {
  if (horizon < 1) throw InvalidArgument("temperature_lite: horizon must be at least 1");
  using T = Thermostat;
  const DataTable data = temperature_data(horizon);
  const double log_hit = std::log(T::alarm_hit), log_miss = std::log(1.0 - T::alarm_hit);
  const double log_false = std::log(T::alarm_false), log_quiet = std::log(1.0 - T::alarm_false);

  std::vector<Expr> terms{normal_lp(V(1), C(T::start), C(T::prior_sd))};
  for (std::size_t t = 0; t < horizon; ++t) {
    const Expr now = V(t + 1), next = V(t + 2);
    const Expr control = If(affine(1.0, -T::setpoint, now), C(T::heat), C(-T::cool));
    terms.push_back(normal_lp(next, now + control, C(T::process_sd)));
    terms.push_back(normal_lp(C(data.rows[t][1]), next, C(T::sensor_sd)));
    const bool alarm = data.rows[t][2] != 0.0;
    terms.push_back(If(affine(1.0, -T::alarm_level, next), C(alarm ? log_false : log_quiet),
                       C(alarm ? log_hit : log_miss)));
  }

  const std::size_t n = horizon + 1;
  Transform tr;
  for (std::size_t j = 0; j < n; ++j)
    tr.coords.push_back(CoordinateRule::location_scale(LocationRule::param(j), ScaleRule::exp(n)));
  Vector lo = Vector::Constant(static_cast<Eigen::Index>(n + 1), 15.0);
  Vector hi = Vector::Constant(static_cast<Eigen::Index>(n + 1), 25.0);
  lo[static_cast<Eigen::Index>(n)] = -4.0;
  hi[static_cast<Eigen::Index>(n)] = 0.0;
  Vector theta0 = Vector::Constant(static_cast<Eigen::Index>(n + 1), T::setpoint);
  theta0[static_cast<Eigen::Index>(n)] = -1.5;
  ModelDefinition d{
      .name = "temperature_lite",
      .expr = sum(terms),
      .transform = tr,
      .base = Distribution::std_normal(n),
      .box = ParamBox(lo, hi),
      .theta0 = theta0,
      .sense = Sense::Maximize,
      .include_entropy = true,
      .description = "room temperature under an on/off heater with noisy sensor and alarm readings",
  };
  return ModelSpec(std::move(d));
}

ModelSpec model_cheating_lite(std::size_t students) {
  if (students < 1) throw InvalidArgument("cheating_lite: students must be at least 1");
  const DataTable data = cheating_data(students);
  double yes = 0.0;
  for (const auto& r : data.rows) yes += r[1];

  // z1: cheating propensity on the probit scale; per student a first coin and a
  // latent cheating draw.
  std::vector<Expr> answers;
  for (std::size_t i = 0; i < students; ++i) {
    const Expr coin = V(2 + 2 * i), draw = V(3 + 2 * i);
    answers.push_back(If(coin, If(call("sub", {draw, V(1)}), C(1.0), C(0.0)), C(0.5)));
  }
  const double sd = 0.5 * std::sqrt(static_cast<double>(students));
  const Expr objective = normal_lp(V(1), C(0.0), C(1.0)) + normal_lp(C(yes), sum(answers), C(sd));

  Transform tr;
  tr.coords.push_back(CoordinateRule::location_scale(LocationRule::param(0), ScaleRule::constant(0.3)));
  for (std::size_t i = 0; i < 2 * students; ++i) tr.coords.push_back(CoordinateRule::identity());
  ModelDefinition d{
      .name = "cheating_lite",
      .expr = objective,
      .transform = tr,
      .base = Distribution::std_normal(1 + 2 * students),
      .box = ParamBox::uniform(1, -3.0, 3.0),
      .theta0 = Vector::Zero(1),
      .sense = Sense::Maximize,
      .include_entropy = false,
      .description = "cheating rate from randomised-response survey answers",
  };
  return ModelSpec(std::move(d));
}

ModelSpec model_textmsg(std::size_t days) {
  if (days < 2) throw InvalidArgument("textmsg: days must be at least 2");
  const DataTable data = textmsg_data(days);
  const double D = static_cast<double>(days);
  std::vector<Expr> terms{normal_lp(V(1), C(3.0), C(1.0)), normal_lp(V(2), C(3.0), C(1.0)),
                          normal_lp(V(3), C(D / 2.0), C(D / 3.0))};
  for (const auto& row : data.rows) {
    const double day = row[0], count = row[1];
    const Expr before = C(count) * V(1) - call("exp", {V(1)});
    const Expr after = C(count) * V(2) - call("exp", {V(2)});
    // Guard d - tau < 0 means the day precedes the change.
    terms.push_back(If(affine(-1.0, day, V(3)), C(-std::lgamma(count + 1.0)) + before, C(-std::lgamma(count + 1.0)) + after));
  }
  ModelDefinition d{
      .name = "textmsg",
      .expr = sum(terms),
      .transform = mean_field(3),
      .base = Distribution::std_normal(3),
      .box = mean_field_box({{1.0, 5.0}, {1.0, 5.0}, {1.0, D}}, -5.0, 1.0),
      .theta0 = std::nullopt,
      .sense = Sense::Maximize,
      .include_entropy = true,
      .description = "daily message counts with a change point in the Poisson rate",
  };
  return ModelSpec(std::move(d));
}

ModelSpec model_xornet_lite() {
  // Weights: hidden unit j in {0,1} uses z(3j+1), z(3j+2) for the inputs and z(3j+3) as bias;
  // the output unit uses z7, z8 and bias z9.
  const DataTable data = xor_data();
  const double log_hit = std::log(0.95), log_miss = std::log(0.05);
  std::vector<Expr> terms;
  for (std::size_t w = 1; w <= 9; ++w) terms.push_back(normal_lp(V(w), C(0.0), C(1.0)));
  for (const auto& row : data.rows) {
    const double x1 = row[0], x2 = row[1];
    const bool label = row[2] != 0.0;
    std::vector<Expr> hidden;
    for (std::size_t j = 0; j < 2; ++j) {
      const Expr pre = C(x1) * V(3 * j + 1) + C(x2) * V(3 * j + 2) + V(3 * j + 3);
      hidden.push_back(If(pre, C(0.0), C(1.0)));
    }
    const Expr out = If(hidden[0] * V(7) + hidden[1] * V(8) + V(9), C(0.0), C(1.0));
    terms.push_back(If(affine(1.0, -0.5, out), C(label ? log_miss : log_hit), C(label ? log_hit : log_miss)));
  }
  ModelDefinition d{
      .name = "xornet_lite",
      .expr = sum(terms),
      .transform = mean_field(9),
      .base = Distribution::std_normal(9),
      .box = mean_field_box(std::vector<std::pair<double, double>>(9, {-5.0, 5.0}), -5.0, 1.0),
      .theta0 = std::nullopt,
      .sense = Sense::Maximize,
      .include_entropy = true,
      .description = "2-2-1 network with step activations fitted to XOR",
  };
  return ModelSpec(std::move(d));
}

double oracle_true_gradient_example11(double theta) {
  return -theta + kInvSqrt2Pi * std::exp(-0.5 * theta * theta);
}

double oracle_stationary_example11() {
  double lo = 0.0, hi = 1.0;
  while (hi - lo > 1e-12) {
    const double mid = 0.5 * (lo + hi);
    (oracle_true_gradient_example11(mid) > 0.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

double oracle_smoothed_gradient_example11(double theta, const Accuracy& acc) {
  return -theta + normal_sigmoid_prime_expectation(theta, acc.width());
}

double oracle_smoothed_objective_example11(double theta, const Accuracy& acc) {
  static const GaussHermite rule(200);
  return -0.5 * (1.0 + theta * theta) + rule.expect([&](double s) { return sigma(s + theta, acc); });
}

std::vector<ModelInfo> list_models() {
  return {
      {"example11", "", 0, "f(z) = -0.5 z^2 + [z >= 0], z = s + theta"},
      {"step", "", 0, "unit step [z >= 0], z = s + theta"},
      {"nested_l2", "", 0, "step whose guard contains two steps"},
      {"random_walk", "steps", 16, "start position of a bounded random walk"},
      {"temperature_lite", "horizon", 20, "thermostat-controlled room temperature"},
      {"cheating_lite", "students", 30, "randomised-response cheating survey"},
      {"textmsg", "days", 37, "change point in daily message rates"},
      {"xornet_lite", "", 0, "2-2-1 step-activation network on XOR"},
  };
}

ModelSpec make_model(std::string_view spec) {
  const auto colon = spec.find(':');
  const std::string name(spec.substr(0, colon));
  std::optional<std::size_t> size;
  if (colon != std::string_view::npos) {
    const auto text = spec.substr(colon + 1);
    std::size_t v = 0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || ptr != text.data() + text.size())
      throw InvalidArgument("model size must be a non-negative integer, got '" + std::string(text) + "'");
    size = v;
  }
  for (const auto& info : list_models()) {
    if (info.name != name) continue;
    if (size && info.size_parameter.empty()) throw InvalidArgument("model '" + name + "' takes no size");
    const std::size_t n = size.value_or(info.default_size);
    if (name == "example11") return model_example11();
    if (name == "step") return model_step();
    if (name == "nested_l2") return model_nested_l2();
    if (name == "random_walk") return model_random_walk(n);
    if (name == "temperature_lite") return model_temperature_lite(n);
    if (name == "cheating_lite") return model_cheating_lite(n);
    if (name == "textmsg") return model_textmsg(n);
    if (name == "xornet_lite") return model_xornet_lite();
  }
  throw InvalidArgument("unknown model '" + name + "'");
}

DataTable textmsg_data(std::size_t days) {
  const RngStream rng{kDataSeed, 11};
  DataTable t{{"day", "count"}, {}};
  for (std::size_t d = 1; d <= days; ++d) {
    const double day = static_cast<double>(d);
    const double rate = day < TextmsgTruth::change_day ? TextmsgTruth::rate_before : TextmsgTruth::rate_after;
    t.rows.push_back({day, static_cast<double>(poisson_quantile(rate, rng.uniform(d)))});
  }
  return t;
}

DataTable temperature_data(std::size_t horizon) {
  using T = Thermostat;
  const RngStream rng{kDataSeed, 12};
  DataTable out{{"step", "sensor", "alarm"}, {}};
  double z = T::start;
  for (std::size_t t = 0; t < horizon; ++t) {
    const double control = z - T::setpoint < 0.0 ? T::heat : -T::cool;
    z = z + control + T::process_sd * standard_normal_quantile(rng.uniform(t, 0));
    const double y = z + T::sensor_sd * standard_normal_quantile(rng.uniform(t, 1));
    const double p = z - T::alarm_level < 0.0 ? T::alarm_false : T::alarm_hit;
    const double alarm = rng.uniform(t, 2) < p ? 1.0 : 0.0;
    out.rows.push_back({static_cast<double>(t), y, alarm});
  }
  return out;
}

DataTable cheating_data(std::size_t students) {
  const RngStream rng{kDataSeed, 13};
  DataTable out{{"student", "answer"}, {}};
  for (std::size_t i = 0; i < students; ++i) {
    const bool cheated = rng.uniform(i, 0) < kCheatingRate;
    const bool truthful = rng.uniform(i, 1) < 0.5;
    const bool yes = truthful ? cheated : rng.uniform(i, 2) < 0.5;
    out.rows.push_back({static_cast<double>(i), yes ? 1.0 : 0.0});
  }
  return out;
}

DataTable xor_data() { return {{"x1", "x2", "label"}, {{0, 0, 0}, {0, 1, 1}, {1, 0, 1}, {1, 1, 0}}}; }

std::string to_csv(const DataTable& t) {
  std::ostringstream os;
  for (std::size_t i = 0; i < t.header.size(); ++i) os << (i ? "," : "") << t.header[i];
  os << '\n';
  for (const auto& row : t.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      char buf[32];
      const auto r = std::to_chars(buf, buf + sizeof buf, row[i]);
      os << (i ? "," : "") << std::string_view(buf, static_cast<std::size_t>(r.ptr - buf));
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace dsgd
