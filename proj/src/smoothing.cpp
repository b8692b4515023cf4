// SPDX-License-Identifier: Apache-2.0
#include "dsgd/smoothing.hpp"

#include <cmath>

#include "dsgd/error.hpp"

namespace dsgd {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

double logistic(double t) {
  if (t >= 0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

}  // namespace

Accuracy::Accuracy(double eta, double sharpness, double eta_floor) : eta_(eta), sharpness_(sharpness) {
  if (!(eta > 0.0) || !std::isfinite(eta)) throw InvalidArgument("eta must be positive and finite");
  if (eta < eta_floor) throw InvalidArgument("eta " + std::to_string(eta) + " below floor " + std::to_string(eta_floor));
  if (!(sharpness > 0.0) || !std::isfinite(sharpness)) throw InvalidArgument("sharpness must be positive");
}

double sigma(double x, const Accuracy& acc) { return logistic(x / acc.width()); }

double sigma_prime(double x, const Accuracy& acc) {
  const double s = sigma(x, acc);
  return s * (1.0 - s) / acc.width();
}

double eval_smoothed(const Expr& e, const Assignment& x, const Accuracy& acc) {
  return std::visit(
      overloaded{
          [&](const PrimNode& n) {
            double buf[8];
            std::vector<double> heap;
            double* args = buf;
            if (n.args.size() > 8) {
              heap.resize(n.args.size());
              args = heap.data();
            }
            for (std::size_t i = 0; i < n.args.size(); ++i) args[i] = eval_smoothed(n.args[i], x, acc);
            return n.fn->eval(std::span<const double>(args, n.args.size()), n.params);
          },
          [&](const IfNode& n) {
            const double g = eval_smoothed(n.guard, x, acc);
            return sigma(-g, acc) * eval_smoothed(n.then_branch, x, acc) +
                   sigma(g, acc) * eval_smoothed(n.else_branch, x, acc);
          },
          [&](const SigNode& n) { return sigma(eval_smoothed(n.arg, x, acc), acc); },
          [&](const auto&) { return eval(e, x); },
      },
      e.node().v);
}

namespace {

class Transformer {
 public:
  std::vector<Expr> bindings;

  Expr run(const Expr& e) {
    return std::visit(overloaded{
                          [&](const PrimNode& n) {
                            std::vector<Expr> args;
                            args.reserve(n.args.size());
                            for (const auto& a : n.args) args.push_back(run(a));
                            return prim(n.fn, std::move(args), n.params);
                          },
                          [&](const IfNode& n) {
                            bindings.push_back(run(n.guard));
                            const Expr g = aux(bindings.size());
                            return sig(-g) * run(n.then_branch) + sig(g) * run(n.else_branch);
                          },
                          [&](const auto&) { return e; },
                      },
                      e.node().v);
  }
};

double eval_program(const Expr& e, const Assignment& x, const std::vector<double>& aux_values,
                    const Accuracy& acc) {
  return std::visit(
      overloaded{
          [&](const PrimNode& n) {
            double buf[8];
            std::vector<double> heap;
            double* args = buf;
            if (n.args.size() > 8) {
              heap.resize(n.args.size());
              args = heap.data();
            }
            for (std::size_t i = 0; i < n.args.size(); ++i) args[i] = eval_program(n.args[i], x, aux_values, acc);
            return n.fn->eval(std::span<const double>(args, n.args.size()), n.params);
          },
          [&](const AuxNode& n) {
            if (n.index > aux_values.size())
              throw InvalidArgument("g" + std::to_string(n.index) + " used before its binding");
            return aux_values[n.index - 1];
          },
          [&](const SigNode& n) { return sigma(eval_program(n.arg, x, aux_values, acc), acc); },
          [&](const IfNode&) -> double { throw InvalidArgument("if-statement inside a smooth program"); },
          [&](const auto&) { return eval(e, x); },
      },
      e.node().v);
}

}  // namespace

SmoothProgram smooth_transform(const Expr& e) {
  Transformer t;
  Expr body = t.run(e);
  return SmoothProgram{std::move(t.bindings), std::move(body)};
}

double SmoothProgram::evaluate(const Assignment& x, const Accuracy& acc) const {
  std::vector<double> values;
  values.reserve(bindings.size());
  for (const auto& b : bindings) values.push_back(eval_program(b, x, values, acc));
  return eval_program(body, x, values, acc);
}

std::size_t SmoothProgram::node_count() const {
  std::size_t c = dsgd::node_count(body);
  for (const auto& b : bindings) c += dsgd::node_count(b);
  return c;
}

std::string SmoothProgram::to_string() const {
  std::string out;
  for (std::size_t i = 0; i < bindings.size(); ++i)
    out += "let g" + std::to_string(i + 1) + " = " + print(bindings[i]) + ";\n";
  out += print(body);
  return out;
}

}  // namespace dsgd
