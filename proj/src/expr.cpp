#include "kolmo/expr.hpp"

#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>

#include "kolmo/sampling.hpp"

namespace kolmo {

enum class Op { constant, var_t, var_x, var_z, var_u, normsq, add, sub, mul, div, neg, pow, func };
enum class Fn { exp, log, sqrt, sin, cos, tanh, erf, abs, sign };

struct Node {
  Op op = Op::constant;
  double value = 0.0;  // constant value or power exponent
  int i = 0;
  int k = 0;
  Fn fn = Fn::exp;
  std::shared_ptr<const Node> a;
  std::shared_ptr<const Node> b;
};

namespace {

using NodeP = std::shared_ptr<const Node>;

const std::array<std::pair<const char*, Fn>, 9> kFunctions = {{{"exp", Fn::exp},
                                                               {"log", Fn::log},
                                                               {"sqrt", Fn::sqrt},
                                                               {"sin", Fn::sin},
                                                               {"cos", Fn::cos},
                                                               {"tanh", Fn::tanh},
                                                               {"erf", Fn::erf},
                                                               {"abs", Fn::abs},
                                                               {"sign", Fn::sign}}};

const char* fn_name(Fn f) {
  for (const auto& [name, id] : kFunctions)
    if (id == f) return name;
  return "?";
}

double apply_fn(Fn f, double v) {
  switch (f) {
    case Fn::exp: return std::exp(v);
    case Fn::log: return std::log(v);
    case Fn::sqrt: return std::sqrt(v);
    case Fn::sin: return std::sin(v);
    case Fn::cos: return std::cos(v);
    case Fn::tanh: return std::tanh(v);
    case Fn::erf: return std::erf(v);
    case Fn::abs: return std::fabs(v);
    case Fn::sign: return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0);
  }
  return 0.0;
}

NodeP make_const(double c) {
  auto n = std::make_shared<Node>();
  n->op = Op::constant;
  n->value = c;
  return n;
}

bool is_const(const NodeP& n) { return n->op == Op::constant; }
bool is_const_value(const NodeP& n, double v) { return is_const(n) && n->value == v; }

NodeP make_bin(Op op, NodeP a, NodeP b) {
  if (is_const(a) && is_const(b)) {
    switch (op) {
      case Op::add: return make_const(a->value + b->value);
      case Op::sub: return make_const(a->value - b->value);
      case Op::mul: return make_const(a->value * b->value);
      case Op::div:
        if (b->value != 0.0) return make_const(a->value / b->value);
        break;
      default: break;
    }
  }
  switch (op) {
    case Op::add:
      if (is_const_value(a, 0.0)) return b;
      if (is_const_value(b, 0.0)) return a;
      break;
    case Op::sub:
      if (is_const_value(b, 0.0)) return a;
      break;
    case Op::mul:
      if (is_const_value(a, 0.0) || is_const_value(b, 0.0)) return make_const(0.0);
      if (is_const_value(a, 1.0)) return b;
      if (is_const_value(b, 1.0)) return a;
      break;
    case Op::div:
      if (is_const_value(a, 0.0)) return make_const(0.0);
      if (is_const_value(b, 1.0)) return a;
      break;
    default: break;
  }
  auto n = std::make_shared<Node>();
  n->op = op;
  n->a = std::move(a);
  n->b = std::move(b);
  return n;
}

NodeP make_neg(NodeP a) {
  if (is_const(a)) return make_const(-a->value);
  if (a->op == Op::neg) return a->a;
  auto n = std::make_shared<Node>();
  n->op = Op::neg;
  n->a = std::move(a);
  return n;
}

NodeP make_pow(NodeP a, double e) {
  if (e == 0.0) return make_const(1.0);
  if (e == 1.0) return a;
  if (is_const(a)) {
    double v = std::pow(a->value, e);
    if (std::isfinite(v)) return make_const(v);
  }
  auto n = std::make_shared<Node>();
  n->op = Op::pow;
  n->value = e;
  n->a = std::move(a);
  return n;
}

NodeP make_fn(Fn f, NodeP a) {
  if (is_const(a)) {
    double v = apply_fn(f, a->value);
    if (std::isfinite(v)) return make_const(v);
  }
  auto n = std::make_shared<Node>();
  n->op = Op::func;
  n->fn = f;
  n->a = std::move(a);
  return n;
}

NodeP make_var(Op op, int i = 0, int k = 0) {
  auto n = std::make_shared<Node>();
  n->op = op;
  n->i = i;
  n->k = k;
  return n;
}

std::string fmt_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  std::string s(buf);
  // Keep shortest representation that round-trips.
  for (int prec = 1; prec < 17; ++prec) {
    char b2[40];
    std::snprintf(b2, sizeof b2, "%.*g", prec, v);
    if (std::strtod(b2, nullptr) == v) return b2;
  }
  return s;
}

void print_node(const NodeP& n, std::string& out) {
  switch (n->op) {
    case Op::constant:
      if (n->value < 0 || (n->value == 0 && std::signbit(n->value)))
        out += "(" + fmt_number(n->value) + ")";
      else
        out += fmt_number(n->value);
      return;
    case Op::var_t: out += "t"; return;
    case Op::var_x: out += "x" + std::to_string(n->i + 1); return;
    case Op::var_z: out += "z" + std::to_string(n->i + 1) + std::to_string(n->k + 1); return;
    case Op::var_u: out += "u" + std::to_string(n->i + 1); return;
    case Op::normsq: out += "normsq(x)"; return;
    case Op::add:
    case Op::sub:
    case Op::mul:
    case Op::div: {
      const char* sym = n->op == Op::add ? " + " : n->op == Op::sub ? " - " : n->op == Op::mul ? " * " : " / ";
      out += "(";
      print_node(n->a, out);
      out += sym;
      print_node(n->b, out);
      out += ")";
      return;
    }
    case Op::neg:
      out += "(-";
      print_node(n->a, out);
      out += ")";
      return;
    case Op::pow:
      out += "(";
      print_node(n->a, out);
      out += ")^" + fmt_number(n->value);
      return;
    case Op::func:
      out += fn_name(n->fn);
      out += "(";
      print_node(n->a, out);
      out += ")";
      return;
  }
}

bool equal_nodes(const NodeP& a, const NodeP& b) {
  if (a == b) return true;
  if (!a || !b) return false;
  if (a->op != b->op) return false;
  switch (a->op) {
    case Op::constant: return a->value == b->value;
    case Op::var_t:
    case Op::normsq: return true;
    case Op::var_x:
    case Op::var_u: return a->i == b->i;
    case Op::var_z: return a->i == b->i && a->k == b->k;
    case Op::neg: return equal_nodes(a->a, b->a);
    case Op::pow: return a->value == b->value && equal_nodes(a->a, b->a);
    case Op::func: return a->fn == b->fn && equal_nodes(a->a, b->a);
    default: return equal_nodes(a->a, b->a) && equal_nodes(a->b, b->b);
  }
}

void visit(const NodeP& n, const std::function<void(const Node&)>& f) {
  f(*n);
  if (n->a) visit(n->a, f);
  if (n->b) visit(n->b, f);
}

NodeP diff(const NodeP& n, const Var& v) {
  switch (n->op) {
    case Op::constant: return make_const(0.0);
    case Op::var_t: return make_const(v.kind == VarKind::time ? 1.0 : 0.0);
    case Op::var_x: return make_const(v.kind == VarKind::x && v.i == n->i ? 1.0 : 0.0);
    case Op::var_z:
      return make_const(v.kind == VarKind::z && v.i == n->i && v.k == n->k ? 1.0 : 0.0);
    case Op::var_u: return make_const(v.kind == VarKind::u && v.i == n->i ? 1.0 : 0.0);
    case Op::normsq:
      if (v.kind != VarKind::x) return make_const(0.0);
      return make_bin(Op::mul, make_const(2.0), make_var(Op::var_x, v.i));
    case Op::add: return make_bin(Op::add, diff(n->a, v), diff(n->b, v));
    case Op::sub: return make_bin(Op::sub, diff(n->a, v), diff(n->b, v));
    case Op::mul:
      return make_bin(Op::add, make_bin(Op::mul, diff(n->a, v), n->b),
                      make_bin(Op::mul, n->a, diff(n->b, v)));
    case Op::div: {
      auto num = make_bin(Op::sub, make_bin(Op::mul, diff(n->a, v), n->b),
                          make_bin(Op::mul, n->a, diff(n->b, v)));
      return make_bin(Op::div, num, make_pow(n->b, 2.0));
    }
    case Op::neg: return make_neg(diff(n->a, v));
    case Op::pow: {
      auto da = diff(n->a, v);
      if (is_const_value(da, 0.0)) return make_const(0.0);
      return make_bin(Op::mul, make_bin(Op::mul, make_const(n->value), make_pow(n->a, n->value - 1.0)), da);
    }
    case Op::func: {
      auto da = diff(n->a, v);
      if (is_const_value(da, 0.0)) return make_const(0.0);
      NodeP outer;
      switch (n->fn) {
        case Fn::exp: outer = n; break;
        case Fn::log: outer = make_bin(Op::div, make_const(1.0), n->a); break;
        case Fn::sqrt: outer = make_bin(Op::div, make_const(0.5), n); break;
        case Fn::sin: outer = make_fn(Fn::cos, n->a); break;
        case Fn::cos: outer = make_neg(make_fn(Fn::sin, n->a)); break;
        case Fn::tanh: outer = make_bin(Op::sub, make_const(1.0), make_pow(n, 2.0)); break;
        case Fn::erf:
          outer = make_bin(Op::mul, make_const(2.0 / std::sqrt(M_PI)),
                           make_fn(Fn::exp, make_neg(make_pow(n->a, 2.0))));
          break;
        case Fn::abs: outer = make_fn(Fn::sign, n->a); break;
        case Fn::sign: return make_const(0.0);
      }
      return make_bin(Op::mul, outer, da);
    }
  }
  return make_const(0.0);
}

NodeP subst_time(const NodeP& n, const NodeP& r) {
  switch (n->op) {
    case Op::var_t: return r;
    case Op::constant:
    case Op::var_x:
    case Op::var_z:
    case Op::var_u:
    case Op::normsq: return n;
    case Op::neg: return make_neg(subst_time(n->a, r));
    case Op::pow: return make_pow(subst_time(n->a, r), n->value);
    case Op::func: return make_fn(n->fn, subst_time(n->a, r));
    default: return make_bin(n->op, subst_time(n->a, r), subst_time(n->b, r));
  }
}

// Recursive-descent parser.
class Parser {
 public:
  Parser(const std::string& s, const ExprContext& ctx) : s_(s), ctx_(ctx) {}

  NodeP parse() {
    NodeP e = expr();
    skip_ws();
    if (pos_ != s_.size()) throw ParseError("unexpected character '" + std::string(1, s_[pos_]) + "'", pos_);
    return e;
  }

 private:
  void skip_ws() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }
  bool accept(char c) {
    skip_ws();
    if (pos_ < s_.size() && s_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }
  void expect(char c) {
    if (!accept(c)) throw ParseError(std::string("expected '") + c + "'", pos_);
  }

  NodeP expr() {
    NodeP lhs = term();
    for (;;) {
      if (accept('+'))
        lhs = make_bin(Op::add, lhs, term());
      else if (accept('-'))
        lhs = make_bin(Op::sub, lhs, term());
      else
        return lhs;
    }
  }

  NodeP term() {
    NodeP lhs = factor();
    for (;;) {
      if (accept('*'))
        lhs = make_bin(Op::mul, lhs, factor());
      else if (accept('/'))
        lhs = make_bin(Op::div, lhs, factor());
      else
        return lhs;
    }
  }

  NodeP factor() {
    if (accept('-')) return make_neg(factor());
    if (accept('+')) return factor();
    NodeP b = base();
    if (accept('^')) {
      skip_ws();
      double sign = 1.0;
      if (accept('-'))
        sign = -1.0;
      else
        accept('+');
      skip_ws();
      double e = number();
      b = make_pow(b, sign * e);
    }
    return b;
  }

  double number() {
    skip_ws();
    const char* begin = s_.c_str() + pos_;
    char* end = nullptr;
    if (pos_ >= s_.size() || !(std::isdigit(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '.'))
      throw ParseError("expected number", pos_);
    double v = std::strtod(begin, &end);
    if (end == begin) throw ParseError("expected number", pos_);
    pos_ += static_cast<std::size_t>(end - begin);
    return v;
  }

  std::string ident() {
    std::size_t start = pos_;
    while (pos_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_')) ++pos_;
    return s_.substr(start, pos_ - start);
  }

  static bool all_digits(const std::string& s, std::size_t from) {
    if (from >= s.size()) return false;
    for (std::size_t i = from; i < s.size(); ++i)
      if (!std::isdigit(static_cast<unsigned char>(s[i]))) return false;
    return true;
  }

  NodeP base() {
    skip_ws();
    if (pos_ >= s_.size()) throw ParseError("unexpected end of input", pos_);
    char c = s_[pos_];
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return make_const(number());
    if (accept('(')) {
      NodeP e = expr();
      expect(')');
      return e;
    }
    if (!(std::isalpha(static_cast<unsigned char>(c)) || c == '_')) throw ParseError("unexpected character '" + std::string(1, c) + "'", pos_);
    std::size_t start = pos_;
    std::string id = ident();
    skip_ws();
    bool call = pos_ < s_.size() && s_[pos_] == '(';
    if (call) {
      if (id == "normsq") {
        expect('(');
        skip_ws();
        if (ident() != "x") throw ParseError("normsq expects argument x", pos_);
        expect(')');
        return make_var(Op::normsq);
      }
      for (const auto& [name, f] : kFunctions) {
        if (id == name) {
          expect('(');
          NodeP arg = expr();
          expect(')');
          return make_fn(f, arg);
        }
      }
      throw ParseError("unknown function '" + id + "'", start);
    }
    if (id == "t") return make_var(Op::var_t);
    if (id.size() >= 2 && id[0] == 'x' && all_digits(id, 1)) {
      int i = std::stoi(id.substr(1));
      if (i < 1 || i > ctx_.d) throw ParseError("variable '" + id + "' out of range for d=" + std::to_string(ctx_.d), start);
      return make_var(Op::var_x, i - 1);
    }
    if (ctx_.m > 0 && id.size() == 3 && id[0] == 'z' && all_digits(id, 1)) {
      int i = id[1] - '0';
      int k = id[2] - '0';
      if (i < 1 || i > ctx_.d || k < 1 || k > ctx_.m) throw ParseError("variable '" + id + "' out of range", start);
      return make_var(Op::var_z, i - 1, k - 1);
    }
    if (ctx_.n_controls > 0 && id.size() >= 2 && id[0] == 'u' && all_digits(id, 1)) {
      int i = std::stoi(id.substr(1));
      if (i < 1 || i > ctx_.n_controls) throw ParseError("variable '" + id + "' out of range", start);
      return make_var(Op::var_u, i - 1);
    }
    auto it = ctx_.bindings.find(id);
    if (it != ctx_.bindings.end()) return it->second.root();
    throw ParseError("unknown identifier '" + id + "'", start);
  }

  const std::string& s_;
  const ExprContext& ctx_;
  std::size_t pos_ = 0;
};

enum Code {
  c_const,
  c_t,
  c_x,
  c_z,
  c_u,
  c_normsq,
  c_add,
  c_sub,
  c_mul,
  c_div,
  c_neg,
  c_pow,
  c_sq,
  c_cube,
  c_func
};

}  // namespace

CoeffExpr::CoeffExpr() : CoeffExpr(make_const(0.0)) {}
CoeffExpr::CoeffExpr(double c) : CoeffExpr(make_const(c)) {}
CoeffExpr::CoeffExpr(std::shared_ptr<const Node> root) : root_(std::move(root)) { compile(); }

void CoeffExpr::compile() {
  prog_.clear();
  int depth = 0;
  int max_depth = 0;
  std::function<void(const NodeP&)> emit = [&](const NodeP& n) {
    auto push = [&](int op, int a = 0, double c = 0.0) {
      prog_.push_back({op, a, c});
    };
    switch (n->op) {
      case Op::constant: push(c_const, 0, n->value); ++depth; break;
      case Op::var_t: push(c_t); ++depth; break;
      case Op::var_x: push(c_x, n->i); ++depth; break;
      case Op::var_z: push(c_z, n->i, n->k); ++depth; break;
      case Op::var_u: push(c_u, n->i); ++depth; break;
      case Op::normsq: push(c_normsq); ++depth; break;
      case Op::add:
      case Op::sub:
      case Op::mul:
      case Op::div:
        emit(n->a);
        emit(n->b);
        push(n->op == Op::add ? c_add : n->op == Op::sub ? c_sub : n->op == Op::mul ? c_mul : c_div);
        --depth;
        break;
      case Op::neg: emit(n->a); push(c_neg); break;
      case Op::pow:
        emit(n->a);
        if (n->value == 2.0)
          push(c_sq);
        else if (n->value == 3.0)
          push(c_cube);
        else
          push(c_pow, 0, n->value);
        break;
      case Op::func: emit(n->a); push(c_func, static_cast<int>(n->fn)); break;
    }
    max_depth = std::max(max_depth, depth);
  };
  emit(root_);
  stack_depth_ = max_depth;
}

double CoeffExpr::eval(const EvalPoint& p) const {
  std::array<double, 64> small{};
  std::vector<double> big;
  double* st = small.data();
  if (stack_depth_ > 64) {
    big.resize(stack_depth_);
    st = big.data();
  }
  int sp = 0;
  for (const Instr& in : prog_) {
    switch (in.op) {
      case c_const: st[sp++] = in.c; break;
      case c_t: st[sp++] = p.t; break;
      case c_x: st[sp++] = p.x[in.a]; break;
      case c_z: st[sp++] = p.z[in.a * p.m + static_cast<int>(in.c)]; break;
      case c_u: st[sp++] = p.u[in.a]; break;
      case c_normsq: {
        double s = 0.0;
        for (int i = 0; i < p.d; ++i) s += p.x[i] * p.x[i];
        st[sp++] = s;
        break;
      }
      case c_add: --sp; st[sp - 1] += st[sp]; break;
      case c_sub: --sp; st[sp - 1] -= st[sp]; break;
      case c_mul: --sp; st[sp - 1] *= st[sp]; break;
      case c_div: --sp; st[sp - 1] /= st[sp]; break;
      case c_neg: st[sp - 1] = -st[sp - 1]; break;
      case c_sq: st[sp - 1] *= st[sp - 1]; break;
      case c_cube: st[sp - 1] = st[sp - 1] * st[sp - 1] * st[sp - 1]; break;
      case c_pow: st[sp - 1] = std::pow(st[sp - 1], in.c); break;
      case c_func: st[sp - 1] = apply_fn(static_cast<Fn>(in.a), st[sp - 1]); break;
    }
  }
  return st[0];
}

double CoeffExpr::eval(double t, std::span<const double> x) const {
  EvalPoint p;
  p.t = t;
  p.x = x.data();
  p.d = static_cast<int>(x.size());
  return eval(p);
}

std::string CoeffExpr::to_string() const {
  std::string out;
  print_node(root_, out);
  return out;
}

bool CoeffExpr::is_constant() const { return root_->op == Op::constant; }
bool CoeffExpr::is_zero() const { return is_const_value(root_, 0.0); }

double CoeffExpr::constant_value() const {
  if (!is_constant()) throw std::logic_error("expression is not constant: " + to_string());
  return root_->value;
}

bool CoeffExpr::depends_on(VarKind kind) const {
  bool found = false;
  visit(root_, [&](const Node& n) {
    if ((kind == VarKind::time && n.op == Op::var_t) ||
        (kind == VarKind::x && (n.op == Op::var_x || n.op == Op::normsq)) ||
        (kind == VarKind::z && n.op == Op::var_z) || (kind == VarKind::u && n.op == Op::var_u))
      found = true;
  });
  return found;
}

bool CoeffExpr::uses_normsq() const {
  bool found = false;
  visit(root_, [&](const Node& n) {
    if (n.op == Op::normsq) found = true;
  });
  return found;
}

int CoeffExpr::max_x_index() const {
  int mx = 0;
  visit(root_, [&](const Node& n) {
    if (n.op == Op::var_x) mx = std::max(mx, n.i + 1);
  });
  return mx;
}

CoeffExpr CoeffExpr::derivative(Var v) const { return CoeffExpr(diff(root_, v)); }

CoeffExpr CoeffExpr::substitute_time(const CoeffExpr& replacement) const {
  return CoeffExpr(subst_time(root_, replacement.root_));
}

std::vector<ExprGuard> CoeffExpr::guards() const {
  std::vector<ExprGuard> out;
  visit(root_, [&](const Node& n) {
    if (n.op == Op::div) {
      out.push_back({CoeffExpr(n.b), false});
    } else if (n.op == Op::pow) {
      bool integer = std::floor(n.value) == n.value;
      if (!integer)
        out.push_back({CoeffExpr(n.a), true});
      else if (n.value < 0)
        out.push_back({CoeffExpr(n.a), false});
    } else if (n.op == Op::func && (n.fn == Fn::log || n.fn == Fn::sqrt)) {
      out.push_back({CoeffExpr(n.a), true});
    }
  });
  return out;
}

CoeffExpr operator+(const CoeffExpr& a, const CoeffExpr& b) { return CoeffExpr(make_bin(Op::add, a.root_, b.root_)); }
CoeffExpr operator-(const CoeffExpr& a, const CoeffExpr& b) { return CoeffExpr(make_bin(Op::sub, a.root_, b.root_)); }
CoeffExpr operator*(const CoeffExpr& a, const CoeffExpr& b) { return CoeffExpr(make_bin(Op::mul, a.root_, b.root_)); }
CoeffExpr operator/(const CoeffExpr& a, const CoeffExpr& b) { return CoeffExpr(make_bin(Op::div, a.root_, b.root_)); }
CoeffExpr operator-(const CoeffExpr& a) { return CoeffExpr(make_neg(a.root_)); }
CoeffExpr pow(const CoeffExpr& a, double e) { return CoeffExpr(make_pow(a.root_, e)); }

CoeffExpr var_expr(Var v) {
  switch (v.kind) {
    case VarKind::time: return CoeffExpr(make_var(Op::var_t));
    case VarKind::x: return CoeffExpr(make_var(Op::var_x, v.i));
    case VarKind::z: return CoeffExpr(make_var(Op::var_z, v.i, v.k));
    case VarKind::u: return CoeffExpr(make_var(Op::var_u, v.i));
  }
  return CoeffExpr();
}

CoeffExpr normsq_expr() { return CoeffExpr(make_var(Op::normsq)); }

CoeffExpr apply_function(const std::string& name, const CoeffExpr& arg) {
  for (const auto& [n, f] : kFunctions)
    if (name == n) return CoeffExpr(make_fn(f, arg.root()));
  throw std::invalid_argument("unknown function " + name);
}

CoeffExpr parse_expr(const std::string& text, const ExprContext& ctx) {
  Parser p(text, ctx);
  return CoeffExpr(p.parse());
}

bool structurally_equal(const CoeffExpr& a, const CoeffExpr& b) { return equal_nodes(a.root(), b.root()); }

void validate_guards(const CoeffExpr& e, int d, double L, double t_lo, double t_hi, int n_samples) {
  auto guards = e.guards();
  if (guards.empty()) return;
  auto pts = box_samples(d, L, t_lo, t_hi, n_samples);
  constexpr double kFloor = 1e-9;
  for (const auto& g : guards) {
    double lo = INFINITY, hi = -INFINITY, min_abs = INFINITY;
    for (const auto& p : pts) {
      double v = g.expr.eval(p.t, p.x);
      if (!std::isfinite(v)) throw GuardError("sub-expression '" + g.expr.to_string() + "' is not finite on the box");
      lo = std::min(lo, v);
      hi = std::max(hi, v);
      min_abs = std::min(min_abs, std::fabs(v));
    }
    if (g.strictly_positive) {
      if (lo <= kFloor)
        throw GuardError("base '" + g.expr.to_string() + "' of non-integer power is not bounded away from 0 on the box");
    } else if (min_abs <= kFloor || (lo < 0 && hi > 0)) {
      throw GuardError("divisor '" + g.expr.to_string() + "' is not bounded away from 0 on the box");
    }
  }
}

}  // namespace kolmo
