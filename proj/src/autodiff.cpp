// SPDX-License-Identifier: Apache-2.0
#include "dsgd/autodiff.hpp"

#include <array>
#include <cmath>
#include <unordered_map>

#include "dsgd/error.hpp"

namespace dsgd {

void Tape::clear() {
  nodes_.clear();
  edges_.clear();
}

Tape::Index Tape::leaf(double value) { return push(value, {}, {}); }

Tape::Index Tape::push(double value, std::span<const Index> inputs, std::span<const double> partials) {
  const auto id = static_cast<Index>(nodes_.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    // Zero partials carry no adjoint; skipping them keeps the sweep short.
    if (partials[i] == 0.0) continue;
    edges_.push_back({inputs[i], partials[i]});
  }
  nodes_.push_back({value, static_cast<std::uint32_t>(edges_.size())});
  return id;
}

std::vector<double> Tape::adjoints(Index output) const {
  std::vector<double> adj;
  adjoints(output, adj);
  return adj;
}

void Tape::adjoints(Index output, std::vector<double>& adj) const {
  adj.assign(nodes_.size(), 0.0);
  adj[output] = 1.0;
  for (std::size_t i = output + 1; i-- > 0;) {
    const double a = adj[i];
    if (a == 0.0) continue;
    const std::uint32_t begin = i == 0 ? 0 : nodes_[i - 1].edge_end;
    for (std::uint32_t e = begin; e < nodes_[i].edge_end; ++e) adj[edges_[e].input] += a * edges_[e].partial;
  }
}

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

using Index = Tape::Index;

/// Records an expression on the tape given the node indices of z_1..z_n.
class Recorder {
 public:
  Recorder(Tape& tape, std::span<const Index> latents, const Accuracy* acc)
      : tape_(tape), z_(latents), acc_(acc) {
    if (acc_) return;
    x_.resize(static_cast<Eigen::Index>(latents.size()));
    for (std::size_t j = 0; j < z_.size(); ++j) x_[static_cast<Eigen::Index>(j)] = tape_.value(z_[j]);
  }

  Index record(const Expr& e) {
    return std::visit(overloaded{
                          [&](const VarNode& n) {
                            if (n.index > z_.size()) throw InvalidArgument("z" + std::to_string(n.index) + " unbound");
                            return z_[n.index - 1];
                          },
                          [&](const ConstNode& n) { return tape_.leaf(n.value); },
                          [&](const PrimNode& n) { return record_prim(n); },
                          [&](const IfNode& n) { return acc_ ? record_smoothed_if(n) : record_taken_branch(n); },
                          [&](const auto&) -> Index {
                            throw InvalidArgument("cannot differentiate auxiliary or sig nodes");
                          },
                      },
                      e.node().v);
  }

 private:
  Tape& tape_;
  std::span<const Index> z_;
  const Accuracy* acc_;
  Assignment x_;

  Index record_prim(const PrimNode& n) {
    constexpr std::size_t kInline = 8;
    const std::size_t k = n.args.size();
    std::array<Index, kInline> in_buf;
    std::array<double, kInline> val_buf, part_buf;
    std::vector<Index> in_heap;
    std::vector<double> val_heap, part_heap;
    std::span<Index> inputs(in_buf.data(), k);
    std::span<double> values(val_buf.data(), k), partials(part_buf.data(), k);
    if (k > kInline) {
      in_heap.resize(k);
      val_heap.resize(k);
      part_heap.resize(k);
      inputs = in_heap;
      values = val_heap;
      partials = part_heap;
    }
    for (std::size_t i = 0; i < k; ++i) {
      inputs[i] = record(n.args[i]);
      values[i] = tape_.value(inputs[i]);
    }
    const double v = n.fn->eval(values, n.params);
    for (std::size_t i = 0; i < k; ++i) partials[i] = n.fn->partials[i](values, n.params);
    return tape_.push(v, inputs, partials);
  }

  Index record_smoothed_if(const IfNode& n) {
    const Index g = record(n.guard);
    const Index a = record(n.then_branch);
    const Index b = record(n.else_branch);
    const double gv = tape_.value(g), av = tape_.value(a), bv = tape_.value(b);
    const double w = acc_->width();
    // Both sigmoids from one exponential; each keeps full relative precision.
    const double t = gv / w;
    const double e = std::exp(-std::abs(t));
    const double hi = 1.0 / (1.0 + e), lo = e / (1.0 + e);
    const double s_then = t >= 0.0 ? lo : hi;
    const double s_else = t >= 0.0 ? hi : lo;
    const double value = s_then * av + s_else * bv;
    // d/dg [sig(-g) a + sig(g) b] = sig'(g) (b - a); sig' is symmetric.
    const double dg = (hi * lo / w) * (bv - av);
    const std::array<Index, 3> inputs{g, a, b};
    const std::array<double, 3> partials{dg, s_then, s_else};
    return tape_.push(value, inputs, partials);
  }

  Index record_taken_branch(const IfNode& n) {
    // The guard is evaluated on values only: no adjoint flows through it.
    return record(eval(n.guard, x_) < 0.0 ? n.then_branch : n.else_branch);
  }
};

/// Pushes theta leaves and x = phi_theta(s); returns the latent node indices.
void check_shapes(const ModelSpec& model, const Vector& theta, const Vector& s);

void record_transform(Tape& tape, const ModelSpec& model, const Vector& theta, const Vector& s,
                      std::vector<Index>& theta_nodes, std::vector<Index>& z) {
  const auto& t = model.transform();
  check_shapes(model, theta, s);
  theta_nodes.clear();
  for (Eigen::Index i = 0; i < theta.size(); ++i) theta_nodes.push_back(tape.leaf(theta[i]));

  z.resize(model.n());
  for (std::size_t j = 0; j < model.n(); ++j) {
    const auto& c = t.coords[j];
    const double sj = s[static_cast<Eigen::Index>(j)];
    if (c.fixed) {
      z[j] = tape.leaf(sj);
      continue;
    }
    const double sigma_v = c.sigma.value_at(theta);
    double mu_v = c.mu.offset;
    std::array<Index, 2> inputs{};
    std::array<double, 2> partials{};
    std::size_t k = 0;
    if (c.mu.index) {
      mu_v += c.mu.slope * theta[static_cast<Eigen::Index>(*c.mu.index)];
      inputs[k] = theta_nodes[*c.mu.index];
      partials[k++] = c.mu.slope;
    }
    if (c.sigma.kind != ScaleKind::Constant) {
      inputs[k] = theta_nodes[c.sigma.index];
      partials[k++] = c.sigma.derivative_at(theta) * sj;
    }
    z[j] = tape.push(mu_v + sigma_v * sj, std::span(inputs.data(), k), std::span(partials.data(), k));
  }
}

}  // namespace

struct LinearProgram {
  enum class Op : std::uint8_t { Const, Add, Sub, Mul, Neg, Sq, Exp, Prim, If };
  struct Instr {
    Op op;
    std::uint32_t first = 0;  // operands[first, first + count)
    std::uint32_t count = 0;
    double constant = 0.0;
    const Primitive* fn = nullptr;
    std::uint32_t param_first = 0;
  };
  std::size_t n = 0;  // slots 0..n-1 hold z; instruction i writes slot n + i
  std::vector<Instr> code;
  std::vector<std::uint32_t> operands;  // one adjoint edge per operand
  std::vector<double> params;
  std::uint32_t output = 0;
  std::optional<Expr> root;  // keeps the primitives alive
};

namespace {

struct NotLinearisable {};

class Linearizer {
 public:
  explicit Linearizer(LinearProgram& p) : p_(p) {}

  std::uint32_t emit(const Expr& e) {
    const Node* key = &e.node();
    if (auto it = memo_.find(key); it != memo_.end()) return it->second;
    const std::uint32_t slot = std::visit(
        overloaded{
            [&](const VarNode& n) -> std::uint32_t {
              if (n.index < 1 || n.index > p_.n) throw NotLinearisable{};
              return static_cast<std::uint32_t>(n.index - 1);
            },
            [&](const ConstNode& n) {
              LinearProgram::Instr ins{LinearProgram::Op::Const};
              ins.constant = n.value;
              return push(ins, {});
            },
            [&](const PrimNode& n) {
              std::vector<std::uint32_t> in;
              for (const auto& a : n.args) in.push_back(emit(a));
              LinearProgram::Instr ins{op_for(*n.fn)};
              if (ins.op == LinearProgram::Op::Prim) {
                ins.fn = n.fn.get();
                ins.param_first = static_cast<std::uint32_t>(p_.params.size());
                p_.params.insert(p_.params.end(), n.params.begin(), n.params.end());
              }
              return push(ins, in);
            },
            [&](const IfNode& n) {
              std::vector<std::uint32_t> in{emit(n.guard), emit(n.then_branch), emit(n.else_branch)};
              return push(LinearProgram::Instr{LinearProgram::Op::If}, in);
            },
            [&](const auto&) -> std::uint32_t { throw NotLinearisable{}; },
        },
        e.node().v);
    memo_.emplace(key, slot);
    return slot;
  }

 private:
  LinearProgram& p_;
  std::unordered_map<const Node*, std::uint32_t> memo_;

  static LinearProgram::Op op_for(const Primitive& fn) {
    static const std::array<std::pair<const char*, LinearProgram::Op>, 6> builtin{{{"add", LinearProgram::Op::Add},
                                                                                  {"sub", LinearProgram::Op::Sub},
                                                                                  {"mul", LinearProgram::Op::Mul},
                                                                                  {"neg", LinearProgram::Op::Neg},
                                                                                  {"sq", LinearProgram::Op::Sq},
                                                                                  {"exp", LinearProgram::Op::Exp}}};
    // Only the standard registry's own objects get inlined; a user primitive may reuse a name.
    for (const auto& [name, op] : builtin)
      if (PrimitiveRegistry::standard().find(name) == &fn) return op;
    return LinearProgram::Op::Prim;
  }

  std::uint32_t push(LinearProgram::Instr ins, const std::vector<std::uint32_t>& in) {
    ins.first = static_cast<std::uint32_t>(p_.operands.size());
    ins.count = static_cast<std::uint32_t>(in.size());
    p_.operands.insert(p_.operands.end(), in.begin(), in.end());
    p_.code.push_back(ins);
    return static_cast<std::uint32_t>(p_.n + p_.code.size() - 1);
  }
};

}  // namespace

namespace detail {

std::shared_ptr<const LinearProgram> compile_linear(const Expr& e, std::size_t n) {
  auto p = std::make_shared<LinearProgram>();
  p->n = n;
  p->root = e;
  try {
    p->output = Linearizer(*p).emit(e);
  } catch (const NotLinearisable&) {
    return nullptr;
  }
  return p;
}

}  // namespace detail

namespace {

struct ScratchBuffers {
  Tape tape;
  std::vector<Index> theta_nodes, z;
  std::vector<double> adj, values, partials, args;
};

Gradient finish(const ModelSpec& model, const Vector& theta, const Vector& s, const Accuracy* acc, Gradient g) {
  if (model.include_entropy()) {
    g.value += log_abs_det_jacobian(model.transform(), theta, s);
    g.wrt_theta += log_abs_det_jacobian_gradient(model.transform(), theta);
  }
  if (!std::isfinite(g.value) || !g.wrt_theta.allFinite())
    throw NonFiniteGradient("model '" + model.name() + "'" + (acc ? " at eta " + std::to_string(acc->eta()) : ""));
  return g;
}

void check_shapes(const ModelSpec& model, const Vector& theta, const Vector& s) {
  if (static_cast<std::size_t>(theta.size()) != model.m())
    throw InvalidArgument("theta has length " + std::to_string(theta.size()) + ", model expects " +
                          std::to_string(model.m()));
  if (static_cast<std::size_t>(s.size()) != model.n())
    throw InvalidArgument("sample has length " + std::to_string(s.size()) + ", model expects " +
                          std::to_string(model.n()));
}

Gradient differentiate_linear(const LinearProgram& p, const ModelSpec& model, const Vector& theta, const Vector& s,
                              const Accuracy& acc, ScratchBuffers& buf);

Gradient differentiate(const ModelSpec& model, const Vector& theta, const Vector& s, const Accuracy* acc) {
  thread_local ScratchBuffers scratch;
  if (acc && model.linear_program()) return differentiate_linear(*model.linear_program(), model, theta, s, *acc, scratch);
  // One scratch tape per thread: after warm-up a draw allocates nothing here.
  Tape& tape = scratch.tape;
  auto& theta_nodes = scratch.theta_nodes;
  auto& z = scratch.z;
  auto& adj = scratch.adj;
  tape.clear();
  record_transform(tape, model, theta, s, theta_nodes, z);
  Recorder rec(tape, z, acc);
  const Index out = rec.record(model.expr());
  tape.adjoints(out, adj);

  Gradient g;
  g.value = tape.value(out);
  g.wrt_theta.resize(theta.size());
  for (std::size_t i = 0; i < theta_nodes.size(); ++i) g.wrt_theta[static_cast<Eigen::Index>(i)] = adj[theta_nodes[i]];
  return finish(model, theta, s, acc, std::move(g));
}

Gradient differentiate_linear(const LinearProgram& p, const ModelSpec& model, const Vector& theta, const Vector& s,
                              const Accuracy& acc, ScratchBuffers& buf) {
  check_shapes(model, theta, s);
  const auto& t = model.transform();
  const std::size_t n = p.n;
  auto& v = buf.values;
  auto& d = buf.partials;
  v.resize(n + p.code.size());
  d.resize(p.operands.size());
  for (std::size_t j = 0; j < n; ++j) {
    const auto& c = t.coords[j];
    const double sj = s[static_cast<Eigen::Index>(j)];
    if (c.fixed) {
      v[j] = sj;
      continue;
    }
    double mu_v = c.mu.offset;
    if (c.mu.index) mu_v += c.mu.slope * theta[static_cast<Eigen::Index>(*c.mu.index)];
    v[j] = mu_v + c.sigma.value_at(theta) * sj;
  }

  const double w = acc.width();
  for (std::size_t i = 0; i < p.code.size(); ++i) {
    const auto& ins = p.code[i];
    const std::uint32_t* a = p.operands.data() + ins.first;
    double* pd = d.data() + ins.first;
    double out = 0.0;
    switch (ins.op) {
      case LinearProgram::Op::Const:
        out = ins.constant;
        break;
      case LinearProgram::Op::Add:
        out = v[a[0]] + v[a[1]];
        pd[0] = 1.0;
        pd[1] = 1.0;
        break;
      case LinearProgram::Op::Sub:
        out = v[a[0]] - v[a[1]];
        pd[0] = 1.0;
        pd[1] = -1.0;
        break;
      case LinearProgram::Op::Mul:
        out = v[a[0]] * v[a[1]];
        pd[0] = v[a[1]];
        pd[1] = v[a[0]];
        break;
      case LinearProgram::Op::Neg:
        out = -v[a[0]];
        pd[0] = -1.0;
        break;
      case LinearProgram::Op::Sq:
        out = v[a[0]] * v[a[0]];
        pd[0] = 2.0 * v[a[0]];
        break;
      case LinearProgram::Op::Exp:
        out = std::exp(v[a[0]]);
        pd[0] = out;
        break;
      case LinearProgram::Op::Prim: {
        auto& args = buf.args;
        args.resize(ins.count);
        for (std::uint32_t k = 0; k < ins.count; ++k) args[k] = v[a[k]];
        const std::span<const double> params(p.params.data() + ins.param_first, ins.fn->param_count);
        out = ins.fn->eval(args, params);
        for (std::uint32_t k = 0; k < ins.count; ++k) pd[k] = ins.fn->partials[k](args, params);
        break;
      }
      case LinearProgram::Op::If: {
        // Operands are guard, then, else; same weights as the tape recorder.
        const double tg = v[a[0]] / w;
        const double e = std::exp(-std::abs(tg));
        const double hi = 1.0 / (1.0 + e), lo = e / (1.0 + e);
        const double s_then = tg >= 0.0 ? lo : hi;
        const double s_else = tg >= 0.0 ? hi : lo;
        out = s_then * v[a[1]] + s_else * v[a[2]];
        pd[0] = (hi * lo / w) * (v[a[2]] - v[a[1]]);
        pd[1] = s_then;
        pd[2] = s_else;
        break;
      }
    }
    v[n + i] = out;
  }

  auto& adj = buf.adj;
  adj.assign(v.size(), 0.0);
  adj[p.output] = 1.0;
  for (std::size_t i = p.code.size(); i-- > 0;) {
    const double g = adj[n + i];
    if (g == 0.0) continue;
    const auto& ins = p.code[i];
    for (std::uint32_t k = ins.first; k < ins.first + ins.count; ++k) adj[p.operands[k]] += g * d[k];
  }

  Gradient out;
  out.value = v[p.output];
  out.wrt_theta = Vector::Zero(theta.size());
  for (std::size_t j = 0; j < n; ++j) {
    const auto& c = t.coords[j];
    if (c.fixed || adj[j] == 0.0) continue;
    if (c.mu.index) out.wrt_theta[static_cast<Eigen::Index>(*c.mu.index)] += c.mu.slope * adj[j];
    if (c.sigma.kind != ScaleKind::Constant)
      out.wrt_theta[static_cast<Eigen::Index>(c.sigma.index)] +=
          c.sigma.derivative_at(theta) * s[static_cast<Eigen::Index>(j)] * adj[j];
  }
  return finish(model, theta, s, &acc, std::move(out));
}

}  // namespace

double objective_smoothed(const ModelSpec& model, const Vector& theta, const Vector& s, const Accuracy& acc) {
  double v = eval_smoothed(model.expr(), apply(model.transform(), theta, s), acc);
  if (model.include_entropy()) v += log_abs_det_jacobian(model.transform(), theta, s);
  return v;
}

double objective_standard(const ModelSpec& model, const Vector& theta, const Vector& s) {
  double v = eval(model.expr(), apply(model.transform(), theta, s));
  if (model.include_entropy()) v += log_abs_det_jacobian(model.transform(), theta, s);
  return v;
}

Gradient grad_smoothed(const ModelSpec& model, const Vector& theta, const Vector& s, const Accuracy& acc) {
  return differentiate(model, theta, s, &acc);
}

Gradient grad_reparam_biased(const ModelSpec& model, const Vector& theta, const Vector& s) {
  return differentiate(model, theta, s, nullptr);
}

Vector finite_diff(const ModelSpec& model, const Vector& theta, const Vector& s, const std::optional<Accuracy>& acc,
                   double h) {
  if (!(h > 0.0)) throw InvalidArgument("finite-difference step must be positive");
  auto f = [&](const Vector& t) { return acc ? objective_smoothed(model, t, s, *acc) : objective_standard(model, t, s); };
  Vector out(theta.size());
  Vector t = theta;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    t[i] = theta[i] + h;
    const double up = f(t);
    t[i] = theta[i] - h;
    const double down = f(t);
    t[i] = theta[i];
    out[i] = (up - down) / (2.0 * h);
  }
  return out;
}

namespace detail {

Vector grad_wrt_latent(const Expr& e, const Assignment& x, const Accuracy& acc) {
  Tape tape;
  std::vector<Index> z;
  for (Eigen::Index j = 0; j < x.size(); ++j) z.push_back(tape.leaf(x[j]));
  Recorder rec(tape, z, &acc);
  const auto adj = tape.adjoints(rec.record(e));
  Vector g(x.size());
  for (std::size_t j = 0; j < z.size(); ++j) g[static_cast<Eigen::Index>(j)] = adj[z[j]];
  return g;
}

}  // namespace detail

}  // namespace dsgd
