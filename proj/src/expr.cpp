// SPDX-License-Identifier: Apache-2.0
#include "dsgd/expr.hpp"

#include <algorithm>
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

Expr make_node(Node n) { return Expr(std::make_shared<const Node>(std::move(n))); }

}  // namespace

Expr var(std::size_t index) {
  if (index == 0) throw InvalidArgument("variable indices are 1-based");
  return make_node(Node{VarNode{index}});
}

Expr constant(double value) {
  if (!std::isfinite(value)) throw InvalidArgument("constants must be finite");
  return make_node(Node{ConstNode{value}});
}

Expr prim(std::shared_ptr<const Primitive> fn, std::vector<Expr> args, std::vector<double> params) {
  if (!fn) throw InvalidArgument("null primitive");
  if (args.size() != fn->arity) throw ArityMismatch(fn->name, args.size(), fn->arity);
  if (params.size() != fn->param_count)
    throw InvalidArgument("primitive '" + fn->name + "' expects " + std::to_string(fn->param_count) +
                          " parameter(s), got " + std::to_string(params.size()));
  return make_node(Node{PrimNode{std::move(fn), std::move(params), std::move(args)}});
}

Expr prim(const PrimitiveRegistry& reg, std::string_view name, std::vector<Expr> args, std::vector<double> params) {
  return prim(reg.at(name), std::move(args), std::move(params));
}

Expr if_then_else(Expr guard, Expr then_branch, Expr else_branch) {
  return make_node(Node{IfNode{std::move(guard), std::move(then_branch), std::move(else_branch)}});
}

Expr aux(std::size_t index) {
  if (index == 0) throw InvalidArgument("auxiliary indices are 1-based");
  return make_node(Node{AuxNode{index}});
}

Expr sig(Expr arg) { return make_node(Node{SigNode{std::move(arg)}}); }

Expr call(std::string_view name, std::vector<Expr> args, std::vector<double> params) {
  return prim(PrimitiveRegistry::standard(), name, std::move(args), std::move(params));
}
Expr operator+(const Expr& a, const Expr& b) { return call("add", {a, b}); }
Expr operator-(const Expr& a, const Expr& b) { return call("sub", {a, b}); }
Expr operator*(const Expr& a, const Expr& b) { return call("mul", {a, b}); }
Expr operator-(const Expr& a) { return call("neg", {a}); }

bool operator==(const Expr& a, const Expr& b) {
  if (a.node_ == b.node_) return true;
  const auto& x = a.node_->v;
  const auto& y = b.node_->v;
  if (x.index() != y.index()) return false;
  return std::visit(
      overloaded{
          [&](const VarNode& n) { return n.index == std::get<VarNode>(y).index; },
          [&](const ConstNode& n) {
            const double o = std::get<ConstNode>(y).value;
            return n.value == o && std::signbit(n.value) == std::signbit(o);
          },
          [&](const PrimNode& n) {
            const auto& o = std::get<PrimNode>(y);
            return n.fn->name == o.fn->name && n.params == o.params && n.args == o.args;
          },
          [&](const IfNode& n) {
            const auto& o = std::get<IfNode>(y);
            return n.guard == o.guard && n.then_branch == o.then_branch && n.else_branch == o.else_branch;
          },
          [&](const AuxNode& n) { return n.index == std::get<AuxNode>(y).index; },
          [&](const SigNode& n) { return n.arg == std::get<SigNode>(y).arg; },
      },
      x);
}

double eval(const Expr& e, const Assignment& x) {
  return std::visit(
      overloaded{
          [&](const VarNode& n) {
            if (n.index > static_cast<std::size_t>(x.size()))
              throw InvalidArgument("z" + std::to_string(n.index) + " outside assignment of length " +
                                    std::to_string(x.size()));
            return x[static_cast<Eigen::Index>(n.index - 1)];
          },
          [](const ConstNode& n) { return n.value; },
          [&](const PrimNode& n) {
            double buf[8];
            std::vector<double> heap;
            double* args = buf;
            if (n.args.size() > 8) {
              heap.resize(n.args.size());
              args = heap.data();
            }
            for (std::size_t i = 0; i < n.args.size(); ++i) args[i] = eval(n.args[i], x);
            return n.fn->eval(std::span<const double>(args, n.args.size()), n.params);
          },
          [&](const IfNode& n) {
            return eval(n.guard, x) < 0.0 ? eval(n.then_branch, x) : eval(n.else_branch, x);
          },
          [](const AuxNode&) -> double { throw InvalidArgument("auxiliary reference outside a smooth program"); },
          [](const SigNode&) -> double { throw InvalidArgument("sig requires an accuracy coefficient"); },
      },
      e.node().v);
}

std::size_t node_count(const Expr& e) {
  return std::visit(overloaded{
                        [](const PrimNode& n) {
                          std::size_t c = 1;
                          for (const auto& a : n.args) c += node_count(a);
                          return c;
                        },
                        [](const IfNode& n) {
                          return 1 + node_count(n.guard) + node_count(n.then_branch) + node_count(n.else_branch);
                        },
                        [](const SigNode& n) { return 1 + node_count(n.arg); },
                        [](const auto&) -> std::size_t { return 1; },
                    },
                    e.node().v);
}

std::size_t if_count(const Expr& e) {
  return std::visit(overloaded{
                        [](const PrimNode& n) {
                          std::size_t c = 0;
                          for (const auto& a : n.args) c += if_count(a);
                          return c;
                        },
                        [](const IfNode& n) {
                          return 1 + if_count(n.guard) + if_count(n.then_branch) + if_count(n.else_branch);
                        },
                        [](const SigNode& n) { return if_count(n.arg); },
                        [](const auto&) -> std::size_t { return 0; },
                    },
                    e.node().v);
}

std::size_t nesting_depth(const Expr& e) {
  return std::visit(overloaded{
                        [](const PrimNode& n) {
                          std::size_t d = 0;
                          for (const auto& a : n.args) d = std::max(d, nesting_depth(a));
                          return d;
                        },
                        [](const IfNode& n) {
                          return std::max({nesting_depth(n.guard) + 1, nesting_depth(n.then_branch),
                                           nesting_depth(n.else_branch)});
                        },
                        [](const SigNode& n) { return nesting_depth(n.arg); },
                        [](const auto&) -> std::size_t { return 0; },
                    },
                    e.node().v);
}

namespace {

void collect_vars(const Expr& e, std::set<std::size_t>& out) {
  std::visit(overloaded{
                 [&](const VarNode& n) { out.insert(n.index); },
                 [&](const PrimNode& n) {
                   for (const auto& a : n.args) collect_vars(a, out);
                 },
                 [&](const IfNode& n) {
                   collect_vars(n.guard, out);
                   collect_vars(n.then_branch, out);
                   collect_vars(n.else_branch, out);
                 },
                 [&](const SigNode& n) { collect_vars(n.arg, out); },
                 [](const auto&) {},
             },
             e.node().v);
}

std::string child(const std::string& path, std::size_t i) {
  return path.empty() ? std::to_string(i) : path + "." + std::to_string(i);
}

void check_guard(const Expr& g, const std::string& path, SafeReport& r) {
  auto fail = [&](std::string reason) { r.violations.push_back({path, std::move(reason)}); };
  std::visit(overloaded{
                 // A bare variable is read as id(z_j).
                 [](const VarNode&) {},
                 [&](const ConstNode& n) {
                   if (n.value == 0.0) fail("guard is constant zero");
                 },
                 [&](const PrimNode& n) {
                   if (!n.fn->ae_nonzero || !n.fn->ae_nonzero(n.params))
                     fail("primitive '" + n.fn->name + "' is not flagged a.e.-nonzero");
                   std::set<std::size_t> seen;
                   for (std::size_t i = 0; i < n.args.size(); ++i) {
                     const auto* v = n.args[i].as<VarNode>();
                     if (!v) {
                       fail("guard atom argument " + std::to_string(i) + " is not a bare variable");
                     } else if (!seen.insert(v->index).second) {
                       fail("repeated variable in guard atom");
                     }
                   }
                 },
                 [&](const IfNode& n) {
                   check_guard(n.guard, child(path, 0), r);
                   check_guard(n.then_branch, child(path, 1), r);
                   check_guard(n.else_branch, child(path, 2), r);
                 },
                 [&](const auto&) { fail("auxiliary or sig node in guard"); },
             },
             g.node().v);
}

void check_body(const Expr& e, const std::string& path, SafeReport& r) {
  std::visit(overloaded{
                 [](const VarNode&) {},
                 [](const ConstNode&) {},
                 [&](const PrimNode& n) {
                   for (std::size_t i = 0; i < n.args.size(); ++i) check_body(n.args[i], child(path, i), r);
                 },
                 [&](const IfNode& n) {
                   check_guard(n.guard, child(path, 0), r);
                   check_body(n.then_branch, child(path, 1), r);
                   check_body(n.else_branch, child(path, 2), r);
                 },
                 [&](const auto&) { r.violations.push_back({path, "auxiliary or sig node in expression"}); },
             },
             e.node().v);
}

}  // namespace

std::set<std::size_t> free_vars(const Expr& e) {
  std::set<std::size_t> out;
  collect_vars(e, out);
  return out;
}

SafeReport check_safe(const Expr& e) {
  SafeReport r;
  check_body(e, "", r);
  r.is_safe = r.violations.empty();
  return r;
}

}  // namespace dsgd
