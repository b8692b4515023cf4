// SPDX-License-Identifier: Apache-2.0
#include "dsgd/model.hpp"

#include "dsgd/error.hpp"

namespace dsgd {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

// Recognises a*z1 + b written as z1, id(z1) or affine[a,b](z1).
std::optional<std::pair<double, double>> affine_in_z1(const Expr& g) {
  if (const auto* v = g.as<VarNode>()) {
    if (v->index == 1) return std::pair{1.0, 0.0};
    return std::nullopt;
  }
  const auto* p = g.as<PrimNode>();
  if (!p || p->args.size() != 1) return std::nullopt;
  const auto* v = p->args[0].as<VarNode>();
  if (!v || v->index != 1) return std::nullopt;
  if (p->fn->name == "id") return std::pair{1.0, 0.0};
  if (p->fn->name == "affine" && p->params[0] != 0.0) return std::pair{p->params[0], p->params[1]};
  return std::nullopt;
}

const IfNode* find_if(const Expr& e) {
  return std::visit(overloaded{
                        [&](const IfNode& n) -> const IfNode* { return &n; },
                        [&](const PrimNode& n) -> const IfNode* {
                          for (const auto& a : n.args)
                            if (const auto* f = find_if(a)) return f;
                          return nullptr;
                        },
                        [](const auto&) -> const IfNode* { return nullptr; },
                    },
                    e.node().v);
}

Expr replace_if(const Expr& e, bool take_then) {
  return std::visit(overloaded{
                        [&](const IfNode& n) { return take_then ? n.then_branch : n.else_branch; },
                        [&](const PrimNode& n) {
                          std::vector<Expr> args;
                          for (const auto& a : n.args) args.push_back(replace_if(a, take_then));
                          return prim(n.fn, std::move(args), n.params);
                        },
                        [&](const auto&) { return e; },
                    },
                    e.node().v);
}

}  // namespace

ModelSpec::ModelSpec(ModelDefinition def) : def_(std::move(def)), theta0_(def_.theta0.value_or(def_.box.center())) {
  const std::size_t n = def_.base.dim;
  if (def_.transform.dim() != n)
    throw InvalidArgument("model '" + def_.name + "': transform has " + std::to_string(def_.transform.dim()) +
                          " coordinates for latent dimension " + std::to_string(n));
  for (std::size_t j : free_vars(def_.expr))
    if (j < 1 || j > n)
      throw InvalidArgument("model '" + def_.name + "': z" + std::to_string(j) + " outside 1.." + std::to_string(n));
  if (def_.transform.param_dim() > def_.box.dim())
    throw InvalidArgument("model '" + def_.name + "': transform references parameters beyond the box");
  const auto check = validate_transform(def_.transform, def_.box);
  if (!check.ok) throw InvalidArgument("model '" + def_.name + "': " + check.violation);
  if (!def_.box.contains(theta0_)) throw InvalidArgument("model '" + def_.name + "': theta0 outside the box");

  ell_ = nesting_depth(def_.expr);
  if_count_ = dsgd::if_count(def_.expr);
  program_ = detail::compile_linear(def_.expr, n);
  safe_ = check_safe(def_.expr);

  if (n == 1 && if_count_ == 1 && def_.base.kind == DistributionKind::StdNormal && !def_.transform.coords[0].fixed) {
    const IfNode* node = find_if(def_.expr);
    if (auto ab = affine_in_z1(node->guard)) {
      boundary_ = AffineBoundary{ab->first, ab->second, replace_if(def_.expr, true), replace_if(def_.expr, false)};
    }
  }
}

}  // namespace dsgd
