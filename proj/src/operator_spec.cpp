#include "kolmo/operator_spec.hpp"

#include <stdexcept>

namespace kolmo {

SymMatrixExpr SymMatrixExpr::diagonal(int n, const CoeffExpr& v) {
  SymMatrixExpr s(n);
  for (int i = 0; i < n; ++i) s.set(i, i, v);
  return s;
}

bool SymMatrixExpr::is_zero() const {
  for (const auto& e : e_)
    if (!e.is_zero()) return false;
  return true;
}

bool SymMatrixExpr::off_diagonal_zero() const {
  for (int i = 0; i < n_; ++i)
    for (int j = i + 1; j < n_; ++j)
      if (!(*this)(i, j).is_zero()) return false;
  return true;
}

void SymMatrixExpr::eval(double t, const double* x, int d, Eigen::MatrixXd& out) const {
  out.resize(n_, n_);
  EvalPoint p;
  p.t = t;
  p.x = x;
  p.d = d;
  for (int i = 0; i < n_; ++i)
    for (int j = i; j < n_; ++j) {
      double v = (*this)(i, j).eval(p);
      out(i, j) = v;
      out(j, i) = v;
    }
}

SymMatrixExpr SymMatrixExpr::derivative(Var v) const {
  return map([&](const CoeffExpr& e) { return e.derivative(v); });
}

SymMatrixExpr SymMatrixExpr::map(const std::function<CoeffExpr(const CoeffExpr&)>& f) const {
  SymMatrixExpr r(n_);
  for (int i = 0; i < n_; ++i)
    for (int j = i; j < n_; ++j) r.set(i, j, f((*this)(i, j)));
  return r;
}

bool MatrixExpr::is_zero() const {
  for (const auto& e : e_)
    if (!e.is_zero()) return false;
  return true;
}

void MatrixExpr::eval(double t, const double* x, int d, Eigen::MatrixXd& out) const {
  out.resize(rows_, cols_);
  EvalPoint p;
  p.t = t;
  p.x = x;
  p.d = d;
  for (int i = 0; i < rows_; ++i)
    for (int j = 0; j < cols_; ++j) out(i, j) = (*this)(i, j).eval(p);
}

MatrixExpr MatrixExpr::derivative(Var v) const {
  MatrixExpr r(rows_, cols_);
  for (int i = 0; i < rows_; ++i)
    for (int j = 0; j < cols_; ++j) r.set(i, j, (*this)(i, j).derivative(v));
  return r;
}

Eigen::MatrixXd CoeffValues::B(int i) const {
  Eigen::MatrixXd r = Bt[static_cast<std::size_t>(i)];
  r.diagonal().array() += b(i);
  return r;
}

OperatorSpec OperatorSpec::zero(int d, int m) {
  OperatorSpec s;
  s.d = d;
  s.m = m;
  s.Q = SymMatrixExpr(d);
  s.b.assign(static_cast<std::size_t>(d), CoeffExpr());
  s.Bt.assign(static_cast<std::size_t>(d), MatrixExpr(m, m));
  s.C = SymMatrixExpr(m);
  return s;
}

bool OperatorSpec::time_dependent() const {
  auto td = [](const CoeffExpr& e) { return e.depends_on(VarKind::time); };
  for (int i = 0; i < d; ++i)
    for (int j = i; j < d; ++j)
      if (td(Q(i, j))) return true;
  for (const auto& e : b)
    if (td(e)) return true;
  for (const auto& B : Bt)
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j)
        if (td(B(i, j))) return true;
  for (int i = 0; i < m; ++i)
    for (int j = i; j < m; ++j)
      if (td(C(i, j))) return true;
  return false;
}

bool OperatorSpec::decoupled() const {
  for (const auto& B : Bt)
    if (!B.is_zero()) return false;
  return C.off_diagonal_zero();
}

void OperatorSpec::eval(double t, const double* x, CoeffValues& out) const {
  Q.eval(t, x, d, out.Q);
  out.b.resize(d);
  for (int i = 0; i < d; ++i) out.b(i) = b[static_cast<std::size_t>(i)].eval(t, {x, static_cast<std::size_t>(d)});
  out.Bt.resize(static_cast<std::size_t>(d));
  for (int i = 0; i < d; ++i) Bt[static_cast<std::size_t>(i)].eval(t, x, d, out.Bt[static_cast<std::size_t>(i)]);
  C.eval(t, x, d, out.C);
}

void OperatorSpec::validate(double L) const {
  if (d < 1 || d > 2) throw std::invalid_argument("d must be 1 or 2");
  if (m < 1 || m > 3) throw std::invalid_argument("m must be in 1..3");
  if (Q.size() != d || static_cast<int>(b.size()) != d || static_cast<int>(Bt.size()) != d || C.size() != m)
    throw std::invalid_argument("coefficient dimensions inconsistent with (d, m)");
  for (const auto& B : Bt)
    if (B.rows() != m || B.cols() != m) throw std::invalid_argument("Btilde blocks must be m x m");
  if (!(t_hi > t_lo)) throw std::invalid_argument("time interval must be non-empty");
  auto check = [&](const CoeffExpr& e) {
    if (e.max_x_index() > d) throw std::invalid_argument("expression references x beyond d: " + e.to_string());
    if (e.depends_on(VarKind::z) || e.depends_on(VarKind::u))
      throw std::invalid_argument("coefficient may depend on t and x only: " + e.to_string());
    validate_guards(e, d, L, t_lo, t_hi);
  };
  for (int i = 0; i < d; ++i)
    for (int j = i; j < d; ++j) check(Q(i, j));
  for (const auto& e : b) check(e);
  for (const auto& B : Bt)
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j) check(B(i, j));
  for (int i = 0; i < m; ++i)
    for (int j = i; j < m; ++j) check(C(i, j));
}

OperatorSpec scalar_comparison(const OperatorSpec& spec) {
  OperatorSpec s = OperatorSpec::zero(spec.d, 1);
  s.name = spec.name.empty() ? "scalar" : spec.name + "/scalar";
  s.Q = spec.Q;
  s.b = spec.b;
  s.t_lo = spec.t_lo;
  s.t_hi = spec.t_hi;
  return s;
}

OperatorSpec time_reversed(const OperatorSpec& spec, double T) {
  CoeffExpr rev = CoeffExpr(T) - var_expr(Var::t());
  auto f = [&](const CoeffExpr& e) { return e.substitute_time(rev); };
  OperatorSpec s = spec;
  s.Q = spec.Q.map(f);
  for (auto& e : s.b) e = f(e);
  for (auto& B : s.Bt)
    for (int i = 0; i < s.m; ++i)
      for (int j = 0; j < s.m; ++j) B.set(i, j, f(B(i, j)));
  s.C = spec.C.map(f);
  s.t_lo = T - spec.t_hi;
  s.t_hi = T - spec.t_lo;
  return s;
}

WeightSpec WeightSpec::unit(int d) {
  WeightSpec w;
  w.M = SymMatrixExpr::diagonal(d, CoeffExpr(1.0));
  w.identity = true;
  return w;
}

WeightSpec WeightSpec::scalar(int d, const CoeffExpr& v) {
  WeightSpec w;
  w.M = SymMatrixExpr::diagonal(d, v);
  w.identity = v.is_constant() && v.constant_value() == 1.0;
  return w;
}

Eigen::MatrixXd sym_sqrt(const Eigen::MatrixXd& A) {
  if (A.rows() == 1) return Eigen::MatrixXd::Constant(1, 1, std::sqrt(std::max(A(0, 0), 0.0)));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A);
  Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

double min_eig(const Eigen::MatrixXd& A) {
  if (A.rows() == 1) return A(0, 0);
  Eigen::MatrixXd S = 0.5 * (A + A.transpose());
  return Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(S, Eigen::EigenvaluesOnly).eigenvalues()(0);
}

double max_eig(const Eigen::MatrixXd& A) {
  if (A.rows() == 1) return A(0, 0);
  Eigen::MatrixXd S = 0.5 * (A + A.transpose());
  auto ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(S, Eigen::EigenvaluesOnly).eigenvalues();
  return ev(ev.size() - 1);
}

}  // namespace kolmo
