// SPDX-License-Identifier: Apache-2.0
#include "dsgd/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <regex>
#include <sstream>

#include "dsgd/autodiff.hpp"
#include "dsgd/error.hpp"
#include "dsgd/estimators.hpp"
#include "dsgd/models.hpp"

namespace dsgd::cli {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

[[noreturn]] void field_error(const std::string& field, const std::string& what) {
  throw InvalidArgument("field '" + field + "': " + what);
}

double to_double(const std::string& field, const std::string& text) {
  const std::string t = trim(text);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size() || !std::isfinite(v))
    field_error(field, "expected a finite number, got '" + text + "'");
  return v;
}

std::uint64_t to_uint(const std::string& field, const std::string& text) {
  const std::string t = trim(text);
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size())
    field_error(field, "expected a non-negative integer, got '" + text + "'");
  return v;
}

bool to_bool(const std::string& field, const std::string& text) {
  const std::string t = trim(text);
  if (t == "true" || t == "on" || t == "yes" || t == "1") return true;
  if (t == "false" || t == "off" || t == "no" || t == "0") return false;
  field_error(field, "expected on/off, got '" + text + "'");
}

Vector to_vector(const std::string& field, const std::string& text) {
  const auto parts = split(text, ',');
  Vector v(static_cast<Eigen::Index>(parts.size()));
  for (std::size_t i = 0; i < parts.size(); ++i) v[static_cast<Eigen::Index>(i)] = to_double(field, parts[i]);
  return v;
}

std::string normalise_key(std::string k) {
  std::replace(k.begin(), k.end(), '-', '_');
  return k;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot open '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void flatten(const nlohmann::json& j, const std::string& prefix, ConfigMap& out, const std::string& source) {
  if (j.is_object()) {
    for (const auto& [k, v] : j.items()) flatten(v, prefix.empty() ? normalise_key(k) : prefix + "." + normalise_key(k), out, source);
    return;
  }
  if (prefix.empty()) throw InvalidArgument(source + ": top level must be an object");
  if (j.is_array()) {
    std::string joined;
    for (std::size_t i = 0; i < j.size(); ++i) {
      if (j[i].is_structured()) throw InvalidArgument(source + ": nested arrays are not supported at '" + prefix + "'");
      joined += (i ? "," : "") + (j[i].is_string() ? j[i].get<std::string>() : j[i].dump());
    }
    out[prefix] = joined;
  } else if (j.is_string()) {
    out[prefix] = j.get<std::string>();
  } else if (j.is_number_float()) {
    out[prefix] = fmt(j.get<double>());
  } else {
    out[prefix] = j.dump();
  }
}

}  // namespace

ConfigMap parse_ini(const std::string& text, const std::string& source) {
  ConfigMap out;
  std::string section = "run";
  std::istringstream in(text);
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']' || t.size() < 3)
        throw InvalidArgument(source + ":" + std::to_string(lineno) + ": malformed section header");
      section = normalise_key(trim(t.substr(1, t.size() - 2)));
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw InvalidArgument(source + ":" + std::to_string(lineno) + ": expected key = value");
    const std::string key = normalise_key(trim(t.substr(0, eq)));
    if (key.empty()) throw InvalidArgument(source + ":" + std::to_string(lineno) + ": empty key");
    out[section + "." + key] = trim(t.substr(eq + 1));
  }
  return out;
}

ConfigMap parse_json(const std::string& text, const std::string& source) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(source + ": " + e.what());
  }
  ConfigMap out;
  flatten(j, "", out, source);
  return out;
}

ConfigMap read_config_file(const std::string& path) {
  const std::string text = read_file(path);
  const bool json = std::filesystem::path(path).extension() == ".json" || trim(text).rfind('{', 0) == 0;
  return json ? parse_json(text, path) : parse_ini(text, path);
}

namespace {

std::string get(const ConfigMap& cfg, const std::string& key, const std::string& source) {
  const auto it = cfg.find(key);
  if (it == cfg.end()) throw InvalidArgument(source + ": missing field '" + key + "'");
  return it->second;
}

std::optional<std::string> find(const ConfigMap& cfg, const std::string& key) {
  const auto it = cfg.find(key);
  if (it == cfg.end()) return std::nullopt;
  return it->second;
}

Distribution parse_base(const std::string& field, const std::string& text, std::size_t dim) {
  static const std::regex re(R"(^\s*([a-z_]+)\s*(?:\(([^)]*)\))?\s*$)");
  std::smatch m;
  if (!std::regex_match(text, m, re)) field_error(field, "cannot parse distribution '" + text + "'");
  const std::string kind = m[1];
  std::vector<double> args;
  if (m[2].matched && !trim(m[2].str()).empty())
    for (const auto& p : split(m[2].str(), ',')) args.push_back(to_double(field, p));
  auto want = [&](std::size_t k) {
    if (args.size() != k) field_error(field, kind + " takes " + std::to_string(k) + " parameter(s)");
  };
  try {
    if (kind == "std_normal") return want(0), Distribution::std_normal(dim);
    if (kind == "half_normal") return want(1), Distribution::half_normal(args[0], dim);
    if (kind == "exponential") return want(1), Distribution::exponential(args[0], dim);
    if (kind == "logistic") return want(2), Distribution::logistic(args[0], args[1], dim);
  } catch (const InvalidArgument&) {
    throw;
  } catch (const Error& e) {
    field_error(field, e.what());
  }
  field_error(field, "unknown distribution '" + kind + "'");
}

LocationRule parse_mu(const std::string& field, const std::string& text) {
  // <num> | [<a>*]theta_<i>[+|-<b>]
  static const std::regex re(R"(^\s*(?:([-+]?[0-9.eE+-]+)\s*\*\s*)?theta_?([0-9]+)\s*(?:([-+])\s*([0-9.eE+-]+))?\s*$)");
  std::smatch m;
  if (std::regex_match(text, m, re)) {
    LocationRule r = LocationRule::param(to_uint(field, m[2]));
    if (m[1].matched) r.slope = to_double(field, m[1]);
    if (m[4].matched) r.offset = (m[3] == "-" ? -1.0 : 1.0) * to_double(field, m[4]);
    return r;
  }
  return LocationRule::constant(to_double(field, text));
}

ScaleRule parse_sigma(const std::string& field, const std::string& text) {
  static const std::regex fn(R"(^\s*(exp|softplus)\(\s*theta_?([0-9]+)\s*\)\s*(?:\+\s*([0-9.eE+-]+))?\s*$)");
  static const std::regex raw(R"(^\s*theta_?([0-9]+)\s*$)");
  std::smatch m;
  if (std::regex_match(text, m, fn)) {
    const std::size_t i = to_uint(field, m[2]);
    if (m[1] == "exp") {
      if (m[3].matched) field_error(field, "exp scale takes no offset");
      return ScaleRule::exp(i);
    }
    return m[3].matched ? ScaleRule::softplus(i, to_double(field, m[3])) : ScaleRule::softplus(i);
  }
  if (std::regex_match(text, m, raw)) return ScaleRule::raw(to_uint(field, m[1]));
  const double v = to_double(field, text);
  if (!(v > 0.0)) field_error(field, "constant scale must be positive");
  return ScaleRule::constant(v);
}

}  // namespace

ModelSpec model_from_config(const ConfigMap& cfg, const std::string& source) {
  ModelDefinition d{
      .name = find(cfg, "model.name").value_or(std::filesystem::path(source).stem().string()),
      .expr = constant(0.0),
      .transform = {},
      .base = Distribution::std_normal(1),
      .box = ParamBox::uniform(1, 0.0, 1.0),
      .theta0 = std::nullopt,
      .sense = Sense::Maximize,
      .include_entropy = false,
      .description = "",
  };
  d.expr = parse(get(cfg, "model.expr", source));
  const std::size_t n = to_uint("model.dim", get(cfg, "model.dim", source));
  if (n < 1) field_error("model.dim", "must be at least 1");
  d.base = parse_base("model.base", find(cfg, "model.base").value_or("std_normal"), n);
  if (auto v = find(cfg, "model.entropy")) d.include_entropy = to_bool("model.entropy", *v);
  if (auto v = find(cfg, "model.sense")) {
    if (*v == "maximize" || *v == "maximise")
      d.sense = Sense::Maximize;
    else if (*v == "minimize" || *v == "minimise")
      d.sense = Sense::Minimize;
    else
      field_error("model.sense", "expected maximize or minimize");
  }
  d.description = find(cfg, "model.description").value_or("");

  const auto fallback = find(cfg, "transform.default");
  for (std::size_t j = 1; j <= n; ++j) {
    const std::string z = "transform.z" + std::to_string(j);
    const auto whole = find(cfg, z);
    const auto mu = find(cfg, z + ".mu");
    const auto sg = find(cfg, z + ".sigma");
    if (whole && (mu || sg)) field_error(z, "give either '" + z + "' or its .mu/.sigma, not both");
    if (mu || sg) {
      d.transform.coords.push_back(CoordinateRule::location_scale(
          mu ? parse_mu(z + ".mu", *mu) : LocationRule::constant(0.0),
          sg ? parse_sigma(z + ".sigma", *sg) : ScaleRule::constant(1.0)));
      continue;
    }
    const auto rule = whole ? whole : fallback;
    if (!rule) field_error(z, "coordinate not declared (set it or transform.default)");
    if (*rule != "fixed") field_error(z, "expected 'fixed' or .mu/.sigma entries");
    d.transform.coords.push_back(CoordinateRule::identity());
  }
  for (const auto& [k, v] : cfg) {
    if (k.rfind("transform.z", 0) != 0) continue;
    const std::string rest = k.substr(std::string("transform.z").size());
    const std::size_t j = std::strtoull(rest.c_str(), nullptr, 10);
    if (j < 1 || j > n) field_error(k, "coordinate outside 1.." + std::to_string(n));
  }

  const Vector lo = to_vector("box.lower", get(cfg, "box.lower", source));
  const Vector hi = to_vector("box.upper", get(cfg, "box.upper", source));
  if (lo.size() != hi.size()) field_error("box.upper", "length differs from box.lower");
  try {
    d.box = ParamBox(lo, hi);
  } catch (const InvalidArgument& e) {
    field_error("box", e.what());
  }
  if (auto v = find(cfg, "init.theta")) d.theta0 = to_vector("init.theta", *v);
  if (d.theta0 && static_cast<std::size_t>(d.theta0->size()) != d.box.dim())
    field_error("init.theta", "length differs from the box");
  return ModelSpec(std::move(d));
}

ModelSpec load_model_file(const std::string& path) { return model_from_config(read_config_file(path), path); }

RunConfig run_config_from(const ConfigMap& cfg, RunConfig c) {
  for (const auto& [key, value] : cfg) {
    if (key.rfind("run.", 0) != 0) continue;
    const std::string k = key.substr(4);
    if (k == "model") c.model = value;
    else if (k == "model_file") c.model_file = value;
    else if (k == "estimator") c.estimator = value;
    else if (k == "optimizer") c.optimizer = value;
    else if (k == "alpha") c.alpha = to_double(k, value);
    else if (k == "gamma0") c.gamma0 = to_double(k, value);
    else if (k == "gamma_rule") c.gamma_rule = value;
    else if (k == "eta_anchor") c.eta_anchor = value;
    else if (k == "eta0") c.eta0 = to_double(k, value);
    else if (k == "eta_exponent") c.eta_exponent = to_double(k, value);
    else if (k == "eta_floor") c.eta_floor = to_double(k, value);
    else if (k == "sharpness") c.sharpness = to_double(k, value);
    else if (k == "iters") c.iters = to_uint(k, value);
    else if (k == "mc") c.mc = to_uint(k, value);
    else if (k == "diag_interval") c.diag_interval = to_uint(k, value);
    else if (k == "diag_samples") c.diag_samples = to_uint(k, value);
    else if (k == "seed") c.seed = to_uint(k, value);
    else if (k == "workers") c.workers = to_uint(k, value);
    else if (k == "output") c.output = value;
    else if (k == "timing") c.timing = to_bool(k, value);
    else field_error(k, "unknown run setting");
  }
  return c;
}

namespace {

std::pair<double, std::uint64_t> parse_anchor(const std::string& text) {
  const auto at = text.find('@');
  if (at == std::string::npos) field_error("eta_anchor", "expected <eta>@<k>, got '" + text + "'");
  return {to_double("eta_anchor", text.substr(0, at)), to_uint("eta_anchor", text.substr(at + 1))};
}

ModelSpec resolve_model(const RunConfig& c) {
  if (!c.model_file.empty()) return load_model_file(c.model_file);
  return make_model(c.model);
}

}  // namespace

ResolvedRun resolve(const RunConfig& c) {
  ModelSpec model = resolve_model(c);
  RunOptions o;
  if (c.mc < 1) field_error("mc", "must be at least 1");
  if (c.diag_interval < 1) field_error("diag_interval", "must be at least 1");
  if (c.diag_samples < 2) field_error("diag_samples", "must be at least 2");
  if (c.workers < 1) field_error("workers", "must be at least 1");
  if (c.eta_anchor && c.eta0) field_error("eta0", "give exactly one of eta0 and eta_anchor");
  if (!(c.sharpness > 0.0)) field_error("sharpness", "must be positive");
  if (!(c.eta_floor > 0.0)) field_error("eta_floor", "must be positive");

  if (c.optimizer == "adam") {
    o.optimizer.kind = OptimizerConfig::Kind::Adam;
    if (!(c.alpha > 0.0)) field_error("alpha", "must be positive");
    o.optimizer.adam.alpha = c.alpha;
  } else if (c.optimizer == "sgd") {
    o.optimizer.kind = OptimizerConfig::Kind::Sgd;
  } else {
    field_error("optimizer", "expected sgd or adam, got '" + c.optimizer + "'");
  }
  if (!(c.gamma0 > 0.0)) field_error("gamma0", "must be positive");
  if (c.gamma_rule == "harmonic")
    o.sched.gamma = GammaRule::harmonic(c.gamma0);
  else if (c.gamma_rule == "constant")
    o.sched.gamma = GammaRule::constant(c.gamma0);
  else
    field_error("gamma_rule", "expected harmonic or constant");

  double rho = c.eta_exponent.value_or(0.0);
  if (!c.eta_exponent) rho = model.ell() <= 1 ? 0.5 : theorem_schedule(model.ell()).eta.exponent;
  if (!(rho > 0.0)) field_error("eta_exponent", "must be positive");
  if (c.eta0) {
    if (!(*c.eta0 > 0.0)) field_error("eta0", "must be positive");
    o.sched.eta = EtaRule::power_law(*c.eta0, rho);
  } else {
    const auto [eta, k] = parse_anchor(c.eta_anchor.value_or("0.1@4000"));
    if (!(eta > 0.0)) field_error("eta_anchor", "eta must be positive");
    if (k < 1) field_error("eta_anchor", "iteration must be at least 1");
    o.sched.eta = EtaRule::anchored(eta, k, rho);
  }
  o.sched.eta.floor = c.eta_floor;
  o.sched.eta.sharpness = c.sharpness;

  if (c.estimator != "dsgd") {
    try {
      o.estimator = EstimatorKind::parse(c.estimator);
    } catch (const InvalidArgument& e) {
      field_error("estimator", e.what());
    }
    o.estimator->require_applicable(model);
  }
  o.iterations = c.iters;
  o.mc_samples = c.mc;
  o.diag_interval = c.diag_interval;
  o.diag_samples = c.diag_samples;
  o.seed = c.seed;
  o.workers = c.workers;
  return ResolvedRun{std::move(model), std::move(o)};
}

std::string trajectory_csv(const Trajectory& tr, bool timing) {
  std::ostringstream os;
  const std::size_t m = tr.iterations.empty() ? 0 : static_cast<std::size_t>(tr.iterations.front().theta.size());
  os << "k";
  for (std::size_t i = 0; i < m; ++i) os << ",theta_" << i;
  os << ",eta_k,elbo_mean,elbo_se,var_avg,var_norm,clamp_events,wall_seconds\n";
  for (const auto& c : tr.checkpoints) {
    os << c.k;
    for (Eigen::Index i = 0; i < c.theta.size(); ++i) os << ',' << fmt(c.theta[i]);
    os << ',' << fmt(c.eta) << ',' << fmt(c.elbo_mean) << ',' << fmt(c.elbo_se) << ',' << fmt(c.var_avg) << ','
       << fmt(c.var_norm) << ',' << c.clamp_events << ',' << (timing ? fmt(c.wall_seconds) : "0") << '\n';
  }
  return os.str();
}

namespace {

constexpr const char* kConfigHelp = R"(Config files (--config, --model-file) are either JSON objects of objects or
the following line-oriented text format:
  [section]        starts a section; keys before any header belong to [run]
  key = value      assignment; '-' and '_' in keys are interchangeable
  # or ;           comment line
Run settings ([run]): model, model_file, estimator, optimizer, alpha, gamma0,
  gamma_rule, eta_anchor, eta0, eta_exponent, eta_floor, sharpness, iters, mc,
  diag_interval, diag_samples, seed, workers, output, timing.
Model files: [model] expr, dim, base (std_normal | half_normal(s) |
  exponential(rate) | logistic(mu,s)), entropy, sense, name, description;
  [transform] zJ = fixed | zJ.mu = <c> | [a*]theta_I[+b], zJ.sigma = <c> |
  exp(theta_I) | softplus(theta_I)[+floor], default = fixed;
  [box] lower, upper (comma lists); [init] theta (comma list).)";

void add_run_flags(CLI::App& app, RunConfig& flags, std::vector<std::pair<CLI::Option*, std::function<void(RunConfig&)>>>& ov,
                   std::string& eta_anchor, double& eta0, double& eta_exponent, std::string& timing) {
  auto bind = [&](auto member, const std::string& name, const std::string& help) {
    auto* opt = app.add_option(name, flags.*member, help);
    ov.emplace_back(opt, [member, &flags](RunConfig& c) { c.*member = flags.*member; });
  };
  bind(&RunConfig::model, "--model", "built-in model, optionally with a size (e.g. random_walk:8)");
  bind(&RunConfig::model_file, "--model-file", "model definition file");
  bind(&RunConfig::estimator, "--estimator", "dsgd | reparam | smoothed:eta=X | score | boundary-oracle");
  bind(&RunConfig::optimizer, "--optimizer", "adam | sgd");
  bind(&RunConfig::alpha, "--alpha", "Adam step size");
  bind(&RunConfig::gamma0, "--gamma0", "SGD step-size coefficient");
  bind(&RunConfig::gamma_rule, "--gamma-rule", "harmonic | constant");
  bind(&RunConfig::eta_floor, "--eta-floor", "lower bound on the accuracy coefficient");
  bind(&RunConfig::sharpness, "--sharpness", "sigmoid sharpness multiplier");
  bind(&RunConfig::iters, "--iters", "iterations");
  bind(&RunConfig::mc, "--mc", "Monte-Carlo samples per gradient");
  bind(&RunConfig::diag_interval, "--diag-interval", "iterations between diagnostics");
  bind(&RunConfig::diag_samples, "--diag-samples", "samples per diagnostic estimate");
  bind(&RunConfig::seed, "--seed", "random seed");
  bind(&RunConfig::workers, "--workers", "Monte-Carlo worker threads (DSGD_LAB_WORKERS overrides)");
  bind(&RunConfig::output, "--output", "output path (default stdout)");
  auto* a = app.add_option("--eta-anchor", eta_anchor, "accuracy schedule through <eta>@<k>");
  ov.emplace_back(a, [&eta_anchor](RunConfig& c) { c.eta_anchor = eta_anchor; c.eta0.reset(); });
  auto* e = app.add_option("--eta0", eta0, "accuracy at k = 1");
  ov.emplace_back(e, [&eta0](RunConfig& c) { c.eta0 = eta0; c.eta_anchor.reset(); });
  a->excludes(e);
  auto* x = app.add_option("--eta-exponent", eta_exponent, "accuracy decay exponent rho in eta0 * k^-rho");
  ov.emplace_back(x, [&eta_exponent](RunConfig& c) { c.eta_exponent = eta_exponent; });
  auto* t = app.add_option("--timing", timing, "on | off; off writes wall_seconds as 0")->check(CLI::IsMember({"on", "off"}));
  ov.emplace_back(t, [&timing](RunConfig& c) { c.timing = timing == "on"; });
}

std::size_t workers_from_env(std::size_t fallback) {
  const char* env = std::getenv("DSGD_LAB_WORKERS");
  if (!env) return fallback;
  const std::uint64_t w = to_uint("DSGD_LAB_WORKERS", env);
  if (w < 1) field_error("DSGD_LAB_WORKERS", "must be at least 1");
  return w;
}

void write_output(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << text;
    return;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InvalidArgument("field 'output': cannot write '" + path + "'");
  f << text;
}

Vector theta_or_default(const std::string& text, const ModelSpec& model) {
  if (text.empty()) return model.theta0();
  Vector t = to_vector("theta", text);
  if (static_cast<std::size_t>(t.size()) != model.m())
    field_error("theta", "expected " + std::to_string(model.m()) + " value(s), got " + std::to_string(t.size()));
  if (!model.box().contains(t)) field_error("theta", "outside the parameter box");
  return t;
}

Trajectory execute(const ResolvedRun& r) { return run(r.model, r.options); }

double final_elbo(const ResolvedRun& r, const Trajectory& tr) {
  if (!tr.checkpoints.empty() && tr.checkpoints.back().k == r.options.iterations) return tr.checkpoints.back().elbo_mean;
  const RngStream rng{r.options.seed, kDiagnosticElboStream};
  const std::uint64_t offset = (r.options.iterations / r.options.diag_interval + 1) * r.options.diag_samples;
  return elbo_estimate(r.model, tr.final_theta(), r.options.diag_samples, rng, r.options.workers, offset).mean;
}

int cmd_run(const RunConfig& c, std::ostream& out) {
  const ResolvedRun r = resolve(c);
  const Trajectory tr = execute(r);
  write_output(c.output, trajectory_csv(tr, c.timing), out);
  return 0;
}

struct BenchArgs {
  std::string model = "example11";
  std::string model_file;
  std::string estimators;
  double budget = 1.0;
  std::string theta;
  std::size_t diag_samples = 1000;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  std::string output;
};

/// Comma- or semicolon-separated list; ",sharpness=" continues a smoothed entry.
std::vector<std::string> split_estimators(const std::string& list) {
  std::vector<std::string> out;
  for (auto& item : split(list, list.find(';') != std::string::npos ? ';' : ',')) {
    if (item.empty()) continue;
    if (item.rfind("sharpness=", 0) == 0 && !out.empty())
      out.back() += "," + item;
    else
      out.push_back(item);
  }
  return out;
}

nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

int cmd_bench(const BenchArgs& a, std::ostream& out) {
  if (!(a.budget > 0.0)) field_error("budget", "must be positive");
  if (a.diag_samples < 2) field_error("diag_samples", "must be at least 2");
  const ModelSpec model = a.model_file.empty() ? make_model(a.model) : load_model_file(a.model_file);
  const Vector theta = theta_or_default(a.theta, model);

  std::vector<std::string> names{"score"};
  const std::string list = a.estimators.empty()
                               ? (model.boundary_eligible() ? "reparam,smoothed:eta=0.1,boundary-oracle" : "reparam,smoothed:eta=0.1")
                               : a.estimators;
  for (const auto& item : split_estimators(list))
    if (item != "score") names.push_back(item);
  std::vector<EstimatorKind> kinds;
  for (const auto& n : names) {
    if (n == "dsgd") field_error("estimators", "dsgd is a schedule; benchmark smoothed:eta=X instead");
    try {
      kinds.push_back(EstimatorKind::parse(n));
    } catch (const InvalidArgument& e) {
      field_error("estimators", e.what());
    }
    kinds.back().require_applicable(model);
  }

  struct Row {
    std::string name;
    std::uint64_t iterations;
    double cost;  // seconds per draw
    GradStats stats;
  };
  std::vector<Row> rows;
  for (const auto& k : kinds) {
    const RngStream timing_rng{a.seed, 4};
    std::uint64_t index = 0;
    using clock = std::chrono::steady_clock;
    constexpr int kBlock = 256;
    std::vector<double> block_seconds;
    // Draws are timed in blocks; the median block discards interference from other processes.
    auto until = [&](double seconds) {
      block_seconds.clear();
      const auto stop = clock::now() + std::chrono::duration_cast<clock::duration>(std::chrono::duration<double>(seconds));
      auto t = clock::now();
      do {
        for (int i = 0; i < kBlock; ++i) sample_gradient(k, model, theta, timing_rng, index++);
        const auto now = clock::now();
        block_seconds.push_back(std::chrono::duration<double>(now - t).count());
        t = now;
      } while (t < stop);
    };
    until(0.1 * a.budget);
    until(a.budget);
    const auto mid = block_seconds.begin() + static_cast<std::ptrdiff_t>(block_seconds.size() / 2);
    std::nth_element(block_seconds.begin(), mid, block_seconds.end());
    rows.push_back({k.to_string(), block_seconds.size() * kBlock, *mid / kBlock,
                    estimate(k, model, theta, a.diag_samples, RngStream{a.seed, kDiagnosticGradStream}, a.workers)});
  }

  const Row& ref = rows.front();
  nlohmann::json report;
  report["model"] = model.name();
  report["theta"] = std::vector<double>(theta.data(), theta.data() + theta.size());
  report["budget_seconds"] = a.budget;
  report["diag_samples"] = a.diag_samples;
  report["rows"] = nlohmann::json::array();
  for (const auto& r : rows) {
    const double cost = r.cost;
    const double cost_ratio = r.cost / ref.cost;
    const double va = r.stats.var_avg / ref.stats.var_avg, vn = r.stats.var_norm / ref.stats.var_norm;
    report["rows"].push_back({{"estimator", r.name},
                              {"iterations", r.iterations},
                              {"cost", cost},
                              {"var_avg", r.stats.var_avg},
                              {"var_norm", r.stats.var_norm},
                              {"cost_ratio", number_or_null(cost_ratio)},
                              {"var_avg_ratio", number_or_null(va)},
                              {"var_norm_ratio", number_or_null(vn)},
                              {"work_normalised_var_avg", number_or_null(cost_ratio * va)},
                              {"work_normalised_var_norm", number_or_null(cost_ratio * vn)}});
  }
  write_output(a.output, report.dump(2) + "\n", out);
  return 0;
}

struct GradCheckArgs {
  std::string model = "example11";
  std::string model_file;
  std::string theta;
  std::string eta = "0.5";
  std::size_t points = 10;
  std::uint64_t seed = 0;
  double h = 1e-5;
};

int cmd_grad_check(const GradCheckArgs& a, std::ostream& out) {
  const ModelSpec model = a.model_file.empty() ? make_model(a.model) : load_model_file(a.model_file);
  const Vector theta = theta_or_default(a.theta, model);
  std::optional<Accuracy> acc;
  if (a.eta != "none") acc.emplace(to_double("eta", a.eta));
  if (a.points < 1) field_error("points", "must be at least 1");
  if (!(a.h > 0.0)) field_error("step", "must be positive");

  const RngStream rng{a.seed, 3};
  double worst = 0.0;
  for (std::size_t p = 0; p < a.points; ++p) {
    const Vector s = sample(model.base(), rng, p);
    const Gradient g = acc ? grad_smoothed(model, theta, s, *acc) : grad_reparam_biased(model, theta, s);
    const Vector fd = finite_diff(model, theta, s, acc, a.h);
    double err = 0.0;
    for (Eigen::Index i = 0; i < fd.size(); ++i) {
      const double scale = std::max({1.0, std::abs(fd[i]), std::abs(g.wrt_theta[i])});
      err = std::max(err, std::abs(g.wrt_theta[i] - fd[i]) / scale);
    }
    worst = std::max(worst, err);
    out << "point " << p << ": max_relative_error=" << fmt(err) << '\n';
  }
  const bool ok = worst <= 1e-5;
  out << "max_relative_error=" << fmt(worst) << '\n' << "status=" << (ok ? "pass" : "fail") << '\n';
  return ok ? 0 : 1;
}

std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char ch : s) q += ch == '"' ? std::string("\"\"") : std::string(1, ch);
  return q + "\"";
}

struct CompareArgs {
  std::vector<std::string> configs;
  std::string seeds = "1,2,3,4,5";
  std::string output;
};

int cmd_compare(const CompareArgs& a, std::size_t workers_override, bool env_workers, std::ostream& out) {
  std::vector<std::uint64_t> seeds;
  for (const auto& s : split(a.seeds, ',')) seeds.push_back(to_uint("seeds", s));
  if (seeds.empty()) field_error("seeds", "no seeds given");

  std::ostringstream os;
  os << "config,model,estimator,eta,seeds,final_elbo_mean,final_elbo_sd,final_theta_mean\n";
  for (const auto& path : a.configs) {
    RunConfig base = run_config_from(read_config_file(path));
    if (env_workers) base.workers = workers_override;
    std::vector<double> finals;
    Vector theta_sum;
    std::string model_name, eta;
    for (const auto s : seeds) {
      RunConfig c = base;
      c.seed = s;
      const ResolvedRun r = resolve(c);
      model_name = r.model.name();
      if (!r.options.estimator)
        eta = fmt(r.options.sched.eta.eta0);
      else if (r.options.estimator->type() == EstimatorKind::Type::Smoothed)
        eta = fmt(r.options.estimator->accuracy().eta());
      const Trajectory tr = execute(r);
      finals.push_back(final_elbo(r, tr));
      theta_sum = theta_sum.size() ? Vector(theta_sum + tr.final_theta()) : tr.final_theta();
    }
    const double n = static_cast<double>(finals.size());
    double mean = 0.0;
    for (double f : finals) mean += f / n;
    double ss = 0.0;
    for (double f : finals) ss += (f - mean) * (f - mean);
    const double sd = finals.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
    std::string theta_text;
    for (Eigen::Index i = 0; i < theta_sum.size(); ++i) theta_text += (i ? ";" : "") + fmt(theta_sum[i] / n);
    os << csv_quote(path) << ',' << model_name << ',' << base.estimator << ',' << eta << ',' << finals.size() << ',' << fmt(mean)
       << ',' << fmt(sd) << ',' << theta_text << '\n';
  }
  write_output(a.output, os.str(), out);
  return 0;
}

int cmd_list_models(std::ostream& out) {
  out << "name,size_parameter,default_size,n,m,if_count,ell,safe,boundary_eligible,description\n";
  for (const auto& info : list_models()) {
    const ModelSpec m = make_model(info.name);
    out << info.name << ',' << info.size_parameter << ',' << (info.size_parameter.empty() ? "" : std::to_string(info.default_size))
        << ',' << m.n() << ',' << m.m() << ',' << m.if_count() << ',' << m.ell() << ','
        << (m.safety().is_safe ? "true" : "false") << ',' << (m.boundary_eligible() ? "true" : "false") << ','
        << csv_quote(info.description) << '\n';
  }
  return 0;
}

struct ScheduleArgs {
  std::size_t ell = 1;
  std::string gamma = "harmonic";
  double gamma0 = 1.0;
  double gamma_exponent = 1.0;
  double eta_exponent = 0.5;
  bool fixed_eta = false;
  bool theorem = false;
  double eps = -1.0;
  std::uint64_t horizon = 1000000;
};

int cmd_check_schedule(const ScheduleArgs& a, std::ostream& out) {
  ScheduleSpec s;
  if (a.theorem) {
    s = theorem_schedule(a.ell, a.eps > 0.0 ? std::optional<double>(a.eps) : std::nullopt);
  } else {
    if (a.gamma == "harmonic")
      s.gamma = GammaRule::harmonic(a.gamma0);
    else if (a.gamma == "constant")
      s.gamma = GammaRule::constant(a.gamma0);
    else if (a.gamma == "power")
      s.gamma = GammaRule::power_law(a.gamma0, a.gamma_exponent);
    else
      field_error("gamma", "expected harmonic, constant or power");
    s.eta = a.fixed_eta ? EtaRule::fixed(1.0) : EtaRule::power_law(1.0, a.eta_exponent);
  }
  const CompatibilityReport r = check_compatibility(s, a.ell, a.horizon);
  out << "verdict=" << r.verdict << '\n'
      << "compatible=" << (r.compatible ? "true" : "false") << '\n'
      << "strict=" << (r.strict ? "true" : "false") << '\n'
      << "relaxed=" << (r.relaxed ? "true" : "false") << '\n'
      << "numeric_ratio_decreasing=" << (r.numeric_decreasing ? "true" : "false") << '\n'
      << "K,S2_over_S1\n";
  for (std::size_t i = 0; i < r.horizons.size(); ++i)
    out << r.horizons[i] << ',' << fmt(r.ratios[i]) << '\n';
  return 0;
}

int cmd_export_data(const std::string& dir) {
  std::filesystem::create_directories(dir);
  const std::vector<std::pair<std::string, DataTable>> tables{{"textmsg.csv", textmsg_data(37)},
                                                              {"temperature.csv", temperature_data(40)},
                                                              {"cheating.csv", cheating_data(150)},
                                                              {"xor.csv", xor_data()}};
  for (const auto& [name, t] : tables) {
    std::ofstream f(std::filesystem::path(dir) / name, std::ios::binary);
    if (!f) throw InvalidArgument("cannot write '" + name + "' in '" + dir + "'");
    f << to_csv(t);
  }
  return 0;
}

}  // namespace

int main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"dsgd_lab: gradient estimation for programs with if-statements"};
  app.require_subcommand(1);
  app.footer(kConfigHelp);

  // run
  auto* run_cmd = app.add_subcommand("run", "optimise a model and write checkpoint rows as CSV");
  RunConfig run_flags;
  std::vector<std::pair<CLI::Option*, std::function<void(RunConfig&)>>> overrides;
  std::string eta_anchor, timing = "on";
  double eta0 = 0.0, eta_exponent = 0.0;
  std::string run_config_path;
  run_cmd->add_option("--config", run_config_path, "run configuration file");
  add_run_flags(*run_cmd, run_flags, overrides, eta_anchor, eta0, eta_exponent, timing);

  // bench
  auto* bench_cmd = app.add_subcommand("bench", "cost and work-normalised variance relative to the score estimator");
  BenchArgs bench;
  bench_cmd->add_option("--model", bench.model, "built-in model");
  bench_cmd->add_option("--model-file", bench.model_file, "model definition file");
  bench_cmd->add_option("--estimators", bench.estimators, "estimators separated by ';' (score is always included)");
  bench_cmd->add_option("--budget", bench.budget, "seconds per estimator");
  bench_cmd->add_option("--theta", bench.theta, "parameter point, comma separated");
  bench_cmd->add_option("--diag-samples", bench.diag_samples, "samples for the variance estimate");
  bench_cmd->add_option("--seed", bench.seed, "random seed");
  bench_cmd->add_option("--workers", bench.workers, "worker threads for the variance estimate");
  bench_cmd->add_option("--output", bench.output, "output path (default stdout)");

  // grad-check
  auto* gc_cmd = app.add_subcommand("grad-check", "compare reverse-mode gradients with central differences");
  GradCheckArgs gc;
  gc_cmd->add_option("--model", gc.model, "built-in model");
  gc_cmd->add_option("--model-file", gc.model_file, "model definition file");
  gc_cmd->add_option("--theta", gc.theta, "parameter point, comma separated");
  gc_cmd->add_option("--eta", gc.eta, "accuracy coefficient, or 'none' for the branch-taken gradient");
  gc_cmd->add_option("--points", gc.points, "number of base samples");
  gc_cmd->add_option("--seed", gc.seed, "random seed");
  gc_cmd->add_option("--step", gc.h, "finite-difference step");

  // compare
  auto* cmp_cmd = app.add_subcommand("compare", "final objective mean and sd over seeds for several run configs");
  CompareArgs cmp;
  cmp_cmd->add_option("--config", cmp.configs, "run configuration file (repeatable)")->required();
  cmp_cmd->add_option("--seeds", cmp.seeds, "comma-separated seeds");
  cmp_cmd->add_option("--output", cmp.output, "output path (default stdout)");

  app.add_subcommand("list-models", "describe the built-in models");

  auto* sched_cmd = app.add_subcommand("check-schedule", "check a step-size/accuracy pair for compatibility");
  ScheduleArgs sched;
  sched_cmd->add_option("--ell", sched.ell, "nesting depth");
  sched_cmd->add_option("--gamma", sched.gamma, "harmonic | constant | power");
  sched_cmd->add_option("--gamma0", sched.gamma0, "step-size coefficient");
  sched_cmd->add_option("--gamma-exponent", sched.gamma_exponent, "a in gamma0 * k^-a (power)");
  sched_cmd->add_option("--eta-exponent", sched.eta_exponent, "rho in k^-rho");
  sched_cmd->add_flag("--fixed-eta", sched.fixed_eta, "constant accuracy");
  sched_cmd->add_flag("--theorem", sched.theorem, "use the harmonic schedule with rho = 1/ell - eps");
  sched_cmd->add_option("--eps", sched.eps, "epsilon for --theorem (default 0.1/ell)");
  sched_cmd->add_option("--horizon", sched.horizon, "last k of the partial sums");

  auto* export_cmd = app.add_subcommand("export-data", "write the synthetic data sets as CSV");
  export_cmd->group("");
  std::string export_dir = "data";
  export_cmd->add_option("--dir", export_dir, "output directory");

  try {
    try {
      app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
      const auto* sub = app.get_subcommands().empty() ? static_cast<CLI::App*>(&app) : app.get_subcommands().front();
      out << sub->help();
      return 0;
    } catch (const CLI::CallForAllHelp&) {
      out << app.help("", CLI::AppFormatMode::All);
      return 0;
    } catch (const CLI::ParseError& e) {
      err << "error: " << e.what() << '\n';
      return 2;
    }

    if (run_cmd->parsed()) {
      RunConfig c = run_config_path.empty() ? RunConfig{} : run_config_from(read_config_file(run_config_path));
      for (const auto& [opt, apply] : overrides)
        if (opt->count() > 0) apply(c);
      c.workers = workers_from_env(c.workers);
      return cmd_run(c, out);
    }
    if (bench_cmd->parsed()) {
      bench.workers = workers_from_env(bench.workers);
      return cmd_bench(bench, out);
    }
    if (gc_cmd->parsed()) return cmd_grad_check(gc, out);
    if (cmp_cmd->parsed()) {
      const bool env = std::getenv("DSGD_LAB_WORKERS") != nullptr;
      return cmd_compare(cmp, env ? workers_from_env(1) : 1, env, out);
    }
    if (sched_cmd->parsed()) return cmd_check_schedule(sched, out);
    if (export_cmd->parsed()) return cmd_export_data(export_dir);
    return cmd_list_models(out);
  } catch (const NonFiniteGradient& e) {
    err << "error: " << e.what() << '\n';
    return 3;
  } catch (const DomainError& e) {
    err << "error: " << e.what() << '\n';
    return 3;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
}

}  // namespace dsgd::cli
