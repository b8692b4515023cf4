// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <numbers>
#include <random>

#include "dsgd/error.hpp"
#include "dsgd/expr.hpp"

namespace dsgd {

namespace {

using Args = std::span<const double>;

bool always(Args) { return true; }

double stable_logistic(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Primitive make(std::string name, std::size_t arity, Primitive::Fn eval, std::vector<Primitive::Fn> partials,
               bool ae_nonzero = true) {
  Primitive p;
  p.name = std::move(name);
  p.arity = arity;
  p.eval = std::move(eval);
  p.partials = std::move(partials);
  if (ae_nonzero) p.ae_nonzero = always;
  return p;
}

PrimitiveRegistry build_standard() {
  PrimitiveRegistry reg;
  reg.add(make(
      "add", 2, [](Args a, Args) { return a[0] + a[1]; },
      {[](Args, Args) { return 1.0; }, [](Args, Args) { return 1.0; }}));
  reg.add(make(
      "sub", 2, [](Args a, Args) { return a[0] - a[1]; },
      {[](Args, Args) { return 1.0; }, [](Args, Args) { return -1.0; }}));
  reg.add(make(
      "mul", 2, [](Args a, Args) { return a[0] * a[1]; },
      {[](Args a, Args) { return a[1]; }, [](Args a, Args) { return a[0]; }}));
  reg.add(make(
      "neg", 1, [](Args a, Args) { return -a[0]; }, {[](Args, Args) { return -1.0; }}));
  reg.add(make(
      "sq", 1, [](Args a, Args) { return a[0] * a[0]; }, {[](Args a, Args) { return 2.0 * a[0]; }}));
  reg.add(make(
      "exp", 1, [](Args a, Args) { return std::exp(a[0]); }, {[](Args a, Args) { return std::exp(a[0]); }}));
  {
    auto p = make(
        "log", 1,
        [](Args a, Args) {
          if (!(a[0] > 0.0)) throw DomainError("log of non-positive value " + std::to_string(a[0]));
          return std::log(a[0]);
        },
        {[](Args a, Args) { return 1.0 / a[0]; }});
    p.positive_args = {0};
    reg.add(std::move(p));
  }
  reg.add(make(
      "id", 1, [](Args a, Args) { return a[0]; }, {[](Args, Args) { return 1.0; }}));
  {
    auto p = make(
        "affine", 1, [](Args a, Args c) { return c[0] * a[0] + c[1]; }, {[](Args, Args c) { return c[0]; }});
    p.param_count = 2;
    p.ae_nonzero = [](Args c) { return c[0] != 0.0; };
    reg.add(std::move(p));
  }
  {
    // normal_logpdf(x, mu, sigma)
    constexpr double half_log_2pi = 0.91893853320467274178;
    auto check = [](double sigma) {
      if (!(sigma > 0.0)) throw DomainError("normal_logpdf with non-positive sigma " + std::to_string(sigma));
    };
    auto p = make(
        "normal_logpdf", 3,
        [=](Args a, Args) {
          check(a[2]);
          const double u = (a[0] - a[1]) / a[2];
          return -half_log_2pi - std::log(a[2]) - 0.5 * u * u;
        },
        {[](Args a, Args) { return -(a[0] - a[1]) / (a[2] * a[2]); },
         [](Args a, Args) { return (a[0] - a[1]) / (a[2] * a[2]); },
         [](Args a, Args) {
           const double d = a[0] - a[1];
           return -1.0 / a[2] + d * d / (a[2] * a[2] * a[2]);
         }});
    p.positive_args = {2};
    reg.add(std::move(p));
  }
  reg.add(make(
      "logistic_sigmoid", 1, [](Args a, Args) { return stable_logistic(a[0]); },
      {[](Args a, Args) {
        const double s = stable_logistic(a[0]);
        return s * (1.0 - s);
      }}));
  return reg;
}

}  // namespace

const PrimitiveRegistry& PrimitiveRegistry::standard() {
  static const PrimitiveRegistry reg = build_standard();
  return reg;
}

void PrimitiveRegistry::add(Primitive p) {
  if (p.partials.size() != p.arity)
    throw InvalidArgument("primitive '" + p.name + "' has " + std::to_string(p.partials.size()) +
                          " partials for arity " + std::to_string(p.arity));
  if (!p.eval) throw InvalidArgument("primitive '" + p.name + "' has no evaluation function");
  if (p.name == "if" || p.name == "else" || p.name == "sig")
    throw InvalidArgument("'" + p.name + "' is a reserved name");
  auto name = p.name;
  table_[name] = std::make_shared<const Primitive>(std::move(p));
}

const Primitive* PrimitiveRegistry::find(std::string_view name) const {
  auto it = table_.find(name);
  return it == table_.end() ? nullptr : it->second.get();
}

std::shared_ptr<const Primitive> PrimitiveRegistry::at(std::string_view name) const {
  auto it = table_.find(name);
  if (it == table_.end()) throw UnknownPrimitive(std::string(name));
  return it->second;
}

std::vector<std::string> PrimitiveRegistry::names() const {
  std::vector<std::string> out;
  for (const auto& [name, _] : table_) out.push_back(name);
  return out;
}

std::vector<PrimitiveSelfTest> registry_selftest(const PrimitiveRegistry& reg, std::size_t trials,
                                                 std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> real(-3.0, 3.0);
  std::uniform_real_distribution<double> positive(0.2, 3.0);
  std::uniform_real_distribution<double> param(-2.0, 2.0);

  std::vector<PrimitiveSelfTest> report;
  for (const auto& name : reg.names()) {
    const Primitive& p = *reg.find(name);
    PrimitiveSelfTest row{name, 0.0};
    std::vector<double> x(p.arity), params(p.param_count);
    for (std::size_t t = 0; t < trials; ++t) {
      for (std::size_t i = 0; i < p.arity; ++i) x[i] = real(gen);
      for (std::size_t i : p.positive_args) x[i] = positive(gen);
      for (auto& c : params) c = param(gen);
      for (std::size_t i = 0; i < p.arity; ++i) {
        const double h = 1e-6 * std::max(1.0, std::abs(x[i]));
        auto shifted = x;
        shifted[i] = x[i] + h;
        const double up = p.eval(shifted, params);
        shifted[i] = x[i] - h;
        const double down = p.eval(shifted, params);
        const double fd = (up - down) / (2.0 * h);
        const double exact = p.partials[i](x, params);
        const double err = std::abs(exact - fd) / std::max({1.0, std::abs(fd), std::abs(exact)});
        if (!(err <= 1e-5)) throw SelfTestFailure(name, i, x, err);
        row.max_relative_error = std::max(row.max_relative_error, err);
      }
    }
    report.push_back(row);
  }
  return report;
}

}  // namespace dsgd
