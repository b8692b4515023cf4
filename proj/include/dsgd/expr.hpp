// SPDX-License-Identifier: Apache-2.0
//
// Expressions of the piecewise-smooth function calculus: variables, constants,
// applications of smooth primitives and if-statements `if G { A } else { B }`
// (A when G < 0, B otherwise).
#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace dsgd {

using Vector = Eigen::VectorXd;

/// Values of z_1..z_n; z_j is stored at position j-1.
using Assignment = Vector;

/// A smooth primitive operation. `params` are compile-time constants baked into
/// the node (e.g. slope and offset of `affine[a,b]`).
struct Primitive {
  using Fn = std::function<double(std::span<const double> args, std::span<const double> params)>;

  std::string name;
  std::size_t arity = 0;
  std::size_t param_count = 0;
  Fn eval;
  std::vector<Fn> partials;  // exactly `arity` entries
  // Whether f(z_1..z_k) != 0 almost everywhere for the given params. Unset means no.
  std::function<bool(std::span<const double> params)> ae_nonzero;
  // Arguments that must be strictly positive (used when sampling self-test points).
  std::vector<std::size_t> positive_args;
};

class PrimitiveRegistry {
 public:
  /// The shipped primitive set: add, sub, mul, neg, sq, exp, log, id, affine[a,b],
  /// normal_logpdf, logistic_sigmoid.
  static const PrimitiveRegistry& standard();

  /// Throws InvalidArgument if the partial count does not match the arity.
  void add(Primitive p);

  const Primitive* find(std::string_view name) const;
  /// Throws UnknownPrimitive.
  std::shared_ptr<const Primitive> at(std::string_view name) const;
  std::vector<std::string> names() const;

 private:
  std::map<std::string, std::shared_ptr<const Primitive>, std::less<>> table_;
};

struct Node;

/// Immutable expression tree with shared subtrees.
class Expr {
 public:
  Expr() = delete;
  explicit Expr(std::shared_ptr<const Node> node) : node_(std::move(node)) {}

  const Node& node() const { return *node_; }

  template <class T>
  const T* as() const;

  friend bool operator==(const Expr& a, const Expr& b);

 private:
  std::shared_ptr<const Node> node_;
};

struct VarNode {
  std::size_t index;  // 1-based
};
struct ConstNode {
  double value;
};
struct PrimNode {
  std::shared_ptr<const Primitive> fn;
  std::vector<double> params;
  std::vector<Expr> args;
};
struct IfNode {
  Expr guard;
  Expr then_branch;
  Expr else_branch;
};
/// Reference to a let-bound guard auxiliary of a SmoothProgram (1-based).
struct AuxNode {
  std::size_t index;
};
/// The reserved smoothing primitive `sig`; the accuracy is supplied at evaluation.
struct SigNode {
  Expr arg;
};

struct Node {
  std::variant<VarNode, ConstNode, PrimNode, IfNode, AuxNode, SigNode> v;
};

template <class T>
const T* Expr::as() const {
  return std::get_if<T>(&node_->v);
}

// Construction.
Expr var(std::size_t index);
Expr constant(double value);
Expr prim(std::shared_ptr<const Primitive> fn, std::vector<Expr> args, std::vector<double> params = {});
/// Looks `name` up in `reg`; throws UnknownPrimitive / ArityMismatch.
Expr prim(const PrimitiveRegistry& reg, std::string_view name, std::vector<Expr> args,
          std::vector<double> params = {});
Expr if_then_else(Expr guard, Expr then_branch, Expr else_branch);
Expr aux(std::size_t index);
Expr sig(Expr arg);

// Shorthands over the standard registry, used by model builders.
Expr operator+(const Expr& a, const Expr& b);
Expr operator-(const Expr& a, const Expr& b);
Expr operator*(const Expr& a, const Expr& b);
Expr operator-(const Expr& a);
Expr call(std::string_view name, std::vector<Expr> args, std::vector<double> params = {});

// Text syntax.
Expr parse(std::string_view text, const PrimitiveRegistry& reg = PrimitiveRegistry::standard());
/// Canonical prefix form; parse(print(e)) == e.
std::string print(const Expr& e);

/// Standard semantics. Ties (guard == 0) take the else branch.
double eval(const Expr& e, const Assignment& x);

std::size_t node_count(const Expr& e);
std::size_t if_count(const Expr& e);

/// Least l with e in the nesting class F_l.
std::size_t nesting_depth(const Expr& e);

std::set<std::size_t> free_vars(const Expr& e);

struct SafetyViolation {
  std::string path;  // dot-separated child indices from the root, "" for the root
  std::string reason;
};

struct SafeReport {
  bool is_safe = true;
  std::vector<SafetyViolation> violations;
};

/// Checks membership in the safe-guard fragment: every guard is an if-nesting
/// of a.e.-nonzero primitives applied to pairwise-distinct bare variables.
SafeReport check_safe(const Expr& e);

struct PrimitiveSelfTest {
  std::string name;
  double max_relative_error = 0.0;
};

/// Compares every registered partial against central finite differences at
/// random points; throws SelfTestFailure above 1e-5.
std::vector<PrimitiveSelfTest> registry_selftest(const PrimitiveRegistry& reg, std::size_t trials,
                                                 std::uint64_t seed);

}  // namespace dsgd
