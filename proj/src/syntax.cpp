// SPDX-License-Identifier: Apache-2.0
//
// Grammar (canonical prefix form plus infix sugar for + - *):
//
//   expr    := term (("+" | "-") term)*
//   term    := unary ("*" unary)*
//   unary   := "-" unary | primary
//   primary := var | number | prim | ifexpr | "(" expr ")"
//   var     := "z" digits
//   prim    := ident ["[" number ("," number)* "]"] "(" expr ("," expr)* ")"
//   ifexpr  := "if" expr "{" expr "}" "else" "{" expr "}"
//
// A leading "-" directly before a number yields a negative constant.
#include <cctype>
#include <charconv>
#include <cmath>

#include "dsgd/error.hpp"
#include "dsgd/expr.hpp"

namespace dsgd {

namespace {

class Parser {
 public:
  Parser(std::string_view text, const PrimitiveRegistry& reg) : text_(text), reg_(reg) {}

  Expr parse_all() {
    Expr e = expr();
    skip_ws();
    if (pos_ != text_.size()) fail({"end of input", "\"+\"", "\"-\"", "\"*\""});
    return e;
  }

 private:
  std::string_view text_;
  const PrimitiveRegistry& reg_;
  std::size_t pos_ = 0;

  [[noreturn]] void fail(std::vector<std::string> expected) const {
    std::string found = "end of input";
    if (pos_ < text_.size()) found = "'" + std::string(1, text_[pos_]) + "'";
    throw SyntaxError(pos_, std::move(expected), found);
  }

  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  bool peek(char c) {
    skip_ws();
    return pos_ < text_.size() && text_[pos_] == c;
  }

  bool accept(char c) {
    if (!peek(c)) return false;
    ++pos_;
    return true;
  }

  void expect(char c) {
    if (!accept(c)) fail({std::string("\"") + c + "\""});
  }

  static bool ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
  static bool ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

  std::string_view ident() {
    skip_ws();
    const std::size_t start = pos_;
    while (pos_ < text_.size() && ident_char(text_[pos_])) ++pos_;
    return text_.substr(start, pos_ - start);
  }

  double number() {
    skip_ws();
    const std::size_t start = pos_;
    auto digits = [&] {
      const std::size_t s = pos_;
      while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
      return pos_ - s;
    };
    std::size_t n = digits();
    if (pos_ < text_.size() && text_[pos_] == '.') {
      ++pos_;
      n += digits();
    }
    if (n == 0) {
      pos_ = start;
      fail({"number"});
    }
    if (pos_ < text_.size() && (text_[pos_] == 'e' || text_[pos_] == 'E')) {
      const std::size_t mark = pos_++;
      if (pos_ < text_.size() && (text_[pos_] == '+' || text_[pos_] == '-')) ++pos_;
      if (digits() == 0) {
        pos_ = mark + 1;
        fail({"exponent digits"});
      }
    }
    double value = 0.0;
    auto [ptr, ec] = std::from_chars(text_.data() + start, text_.data() + pos_, value);
    if (ec != std::errc() || ptr != text_.data() + pos_ || !std::isfinite(value)) {
      pos_ = start;
      fail({"finite number"});
    }
    return value;
  }

  Expr expr() {
    Expr lhs = term();
    for (;;) {
      if (accept('+')) {
        lhs = prim(reg_, "add", {lhs, term()});
      } else if (accept('-')) {
        lhs = prim(reg_, "sub", {lhs, term()});
      } else {
        return lhs;
      }
    }
  }

  Expr term() {
    Expr lhs = unary();
    while (accept('*')) lhs = prim(reg_, "mul", {lhs, unary()});
    return lhs;
  }

  Expr unary() {
    if (accept('-')) {
      skip_ws();
      if (pos_ < text_.size() && (std::isdigit(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '.'))
        return constant(-number());
      return prim(reg_, "neg", {unary()});
    }
    return primary();
  }

  Expr primary() {
    skip_ws();
    if (pos_ >= text_.size()) fail({"expression"});
    const char c = text_[pos_];
    if (c == '(') {
      ++pos_;
      Expr e = expr();
      expect(')');
      return e;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return constant(number());
    if (!ident_start(c)) fail({"expression"});

    const std::size_t start = pos_;
    const std::string_view name = ident();
    if (name == "if") {
      Expr guard = expr();
      expect('{');
      Expr then_branch = expr();
      expect('}');
      const std::size_t kw = pos_;
      if (ident() != "else") {
        pos_ = kw;
        skip_ws();
        fail({"\"else\""});
      }
      expect('{');
      Expr else_branch = expr();
      expect('}');
      return if_then_else(std::move(guard), std::move(then_branch), std::move(else_branch));
    }
    if (name.size() > 1 && name[0] == 'z' &&
        name.find_first_not_of("0123456789", 1) == std::string_view::npos) {
      std::size_t index = 0;
      std::from_chars(name.data() + 1, name.data() + name.size(), index);
      if (index == 0) {
        pos_ = start;
        fail({"variable index >= 1"});
      }
      return var(index);
    }

    auto fn = reg_.find(name);
    if (!fn) throw UnknownPrimitive(std::string(name));
    std::vector<double> params;
    if (accept('[')) {
      params.push_back(signed_number());
      while (accept(',')) params.push_back(signed_number());
      expect(']');
    }
    expect('(');
    std::vector<Expr> args;
    if (!peek(')')) {
      args.push_back(expr());
      while (accept(',')) args.push_back(expr());
    }
    expect(')');
    if (args.size() != fn->arity) throw ArityMismatch(fn->name, args.size(), fn->arity);
    if (params.size() != fn->param_count)
      throw InvalidArgument("primitive '" + fn->name + "' expects " + std::to_string(fn->param_count) +
                            " bracketed parameter(s)");
    return prim(reg_.at(name), std::move(args), std::move(params));
  }

  double signed_number() {
    if (accept('-')) return -number();
    return number();
  }
};

void append_number(std::string& out, double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  out.append(buf, ptr);
}

void print_to(const Expr& e, std::string& out) {
  struct Visitor {
    std::string& out;
    void operator()(const VarNode& n) const { out += "z" + std::to_string(n.index); }
    void operator()(const ConstNode& n) const { append_number(out, n.value); }
    void operator()(const PrimNode& n) const {
      out += n.fn->name;
      if (!n.params.empty()) {
        out += '[';
        for (std::size_t i = 0; i < n.params.size(); ++i) {
          if (i) out += ',';
          append_number(out, n.params[i]);
        }
        out += ']';
      }
      out += '(';
      for (std::size_t i = 0; i < n.args.size(); ++i) {
        if (i) out += ", ";
        print_to(n.args[i], out);
      }
      out += ')';
    }
    void operator()(const IfNode& n) const {
      out += "if ";
      print_to(n.guard, out);
      out += " { ";
      print_to(n.then_branch, out);
      out += " } else { ";
      print_to(n.else_branch, out);
      out += " }";
    }
    void operator()(const AuxNode& n) const { out += "g" + std::to_string(n.index); }
    void operator()(const SigNode& n) const {
      out += "sig(";
      print_to(n.arg, out);
      out += ')';
    }
  };
  std::visit(Visitor{out}, e.node().v);
}

}  // namespace

Expr parse(std::string_view text, const PrimitiveRegistry& reg) { return Parser(text, reg).parse_all(); }

std::string print(const Expr& e) {
  std::string out;
  print_to(e, out);
  return out;
}

}  // namespace dsgd
