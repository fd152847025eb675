#pragma once

#include <map>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace kolmo {

/// Raised for malformed expression text.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& msg, std::size_t pos)
      : std::runtime_error(msg + " at offset " + std::to_string(pos)), pos_(pos) {}
  std::size_t position() const { return pos_; }

 private:
  std::size_t pos_;
};

/// Raised when a division or non-integer power is not bounded away from zero.
class GuardError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class VarKind { time, x, z, u };

/// Identifies a differentiation variable. For z, `i` is the spatial index and
/// `k` the component index (both zero-based).
struct Var {
  VarKind kind = VarKind::time;
  int i = 0;
  int k = 0;
  static Var t() { return {VarKind::time, 0, 0}; }
  static Var x(int i) { return {VarKind::x, i, 0}; }
  static Var z(int i, int k) { return {VarKind::z, i, k}; }
  static Var u(int i) { return {VarKind::u, i, 0}; }
};

/// Evaluation point. `z` is stored spatial-major: z[i * m + k].
struct EvalPoint {
  double t = 0.0;
  const double* x = nullptr;
  int d = 0;
  const double* z = nullptr;
  int m = 0;
  const double* u = nullptr;
};

struct Node;

/// Immutable scalar expression in (t, x, z, u).
class CoeffExpr {
 public:
  CoeffExpr();
  explicit CoeffExpr(double c);
  explicit CoeffExpr(std::shared_ptr<const Node> root);

  double eval(const EvalPoint& p) const;
  double eval(double t, std::span<const double> x) const;

  std::string to_string() const;

  bool is_constant() const;
  bool is_zero() const;
  /// Value of a constant expression; throws if not constant.
  double constant_value() const;

  bool depends_on(VarKind kind) const;
  /// Highest one-based x index referenced (normsq counts as "all").
  bool uses_normsq() const;
  int max_x_index() const;

  CoeffExpr derivative(Var v) const;
  /// Replace t by `replacement` everywhere.
  CoeffExpr substitute_time(const CoeffExpr& replacement) const;

  /// Sub-expressions that must stay away from zero (denominators, bases of
  /// non-integer or negative powers, arguments of log/sqrt).
  std::vector<struct ExprGuard> guards() const;

  const std::shared_ptr<const Node>& root() const { return root_; }

  friend CoeffExpr operator+(const CoeffExpr& a, const CoeffExpr& b);
  friend CoeffExpr operator-(const CoeffExpr& a, const CoeffExpr& b);
  friend CoeffExpr operator*(const CoeffExpr& a, const CoeffExpr& b);
  friend CoeffExpr operator/(const CoeffExpr& a, const CoeffExpr& b);
  friend CoeffExpr operator-(const CoeffExpr& a);
  friend CoeffExpr pow(const CoeffExpr& a, double e);

 private:
  void compile();

  struct Instr {
    int op;
    int a;
    double c;
  };
  std::shared_ptr<const Node> root_;
  std::vector<Instr> prog_;
  int stack_depth_ = 0;
};

struct ExprGuard {
  CoeffExpr expr;
  bool strictly_positive;  // base of non-integer power, log, sqrt
};

/// Which variables an expression may reference.
struct ExprContext {
  int d = 1;
  int m = 0;           // z-variables z<i><k> allowed when > 0
  int n_controls = 0;  // u-variables u<i> allowed when > 0
  std::map<std::string, CoeffExpr> bindings;
};

CoeffExpr var_expr(Var v);
CoeffExpr normsq_expr();
CoeffExpr apply_function(const std::string& name, const CoeffExpr& arg);

/// Parse expression text. Identifiers resolve through ctx.bindings.
CoeffExpr parse_expr(const std::string& text, const ExprContext& ctx);

/// Structural equality (same tree).
bool structurally_equal(const CoeffExpr& a, const CoeffExpr& b);

/// Check every guard of `e` on a deterministic sample of the box [-L, L]^d
/// crossed with [t_lo, t_hi]. Throws GuardError naming the offending
/// sub-expression.
void validate_guards(const CoeffExpr& e, int d, double L, double t_lo, double t_hi,
                     int n_samples = 512);

}  // namespace kolmo
