#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <vector>

#include "kolmo/expr.hpp"

namespace kolmo {

/// Symmetric n x n matrix of expressions; only the upper triangle is stored.
class SymMatrixExpr {
 public:
  SymMatrixExpr() = default;
  explicit SymMatrixExpr(int n) : n_(n), e_(static_cast<std::size_t>(n * (n + 1) / 2)) {}
  static SymMatrixExpr diagonal(int n, const CoeffExpr& v);

  int size() const { return n_; }
  const CoeffExpr& operator()(int i, int j) const { return e_[index(i, j)]; }
  void set(int i, int j, CoeffExpr v) { e_[index(i, j)] = std::move(v); }

  bool is_zero() const;
  bool off_diagonal_zero() const;
  void eval(double t, const double* x, int d, Eigen::MatrixXd& out) const;
  SymMatrixExpr derivative(Var v) const;
  SymMatrixExpr map(const std::function<CoeffExpr(const CoeffExpr&)>& f) const;

 private:
  std::size_t index(int i, int j) const {
    if (i > j) std::swap(i, j);
    return static_cast<std::size_t>(i * n_ - i * (i - 1) / 2 + (j - i));
  }
  int n_ = 0;
  std::vector<CoeffExpr> e_;
};

/// General rows x cols matrix of expressions.
class MatrixExpr {
 public:
  MatrixExpr() = default;
  MatrixExpr(int rows, int cols) : rows_(rows), cols_(cols), e_(static_cast<std::size_t>(rows * cols)) {}
  int rows() const { return rows_; }
  int cols() const { return cols_; }
  const CoeffExpr& operator()(int i, int j) const { return e_[static_cast<std::size_t>(i * cols_ + j)]; }
  void set(int i, int j, CoeffExpr v) { e_[static_cast<std::size_t>(i * cols_ + j)] = std::move(v); }
  bool is_zero() const;
  void eval(double t, const double* x, int d, Eigen::MatrixXd& out) const;
  MatrixExpr derivative(Var v) const;

 private:
  int rows_ = 0, cols_ = 0;
  std::vector<CoeffExpr> e_;
};

/// Pointwise coefficient values.
struct CoeffValues {
  Eigen::MatrixXd Q;                 // d x d
  Eigen::VectorXd b;                 // d
  std::vector<Eigen::MatrixXd> Bt;   // d matrices, m x m
  Eigen::MatrixXd C;                 // m x m
  /// Full first-order matrix B_i = b_i I + Bt_i.
  Eigen::MatrixXd B(int i) const;
};

/// Coefficients of the system operator
///   A w = sum Q_ij D_ij w + sum_j (b_j I + Bt_j) D_j w + C w.
struct OperatorSpec {
  std::string name;
  int d = 1;
  int m = 1;
  SymMatrixExpr Q;
  std::vector<CoeffExpr> b;
  std::vector<MatrixExpr> Bt;
  SymMatrixExpr C;
  double t_lo = 0.0;
  double t_hi = 1.0;

  /// Zero-coefficient operator of the given dimensions.
  static OperatorSpec zero(int d, int m);

  bool time_dependent() const;
  /// No coupling between components: all Bt vanish and C is diagonal.
  bool decoupled() const;
  void eval(double t, const double* x, CoeffValues& out) const;

  /// Dimension and guard checks on [-L, L]^d x [t_lo, t_hi].
  void validate(double L) const;
};

/// Scalar comparison operator: same Q and b, m = 1, no coupling.
OperatorSpec scalar_comparison(const OperatorSpec& spec);

/// Operator with t replaced by T - t in every coefficient.
OperatorSpec time_reversed(const OperatorSpec& spec, double T);

/// Weight matrix M (d x d, symmetric) acting on transposed Jacobians.
struct WeightSpec {
  SymMatrixExpr M;
  bool identity = true;
  static WeightSpec unit(int d);
  static WeightSpec scalar(int d, const CoeffExpr& w);
};

/// Matrix square root of a symmetric positive semidefinite matrix.
Eigen::MatrixXd sym_sqrt(const Eigen::MatrixXd& A);
double min_eig(const Eigen::MatrixXd& A);
double max_eig(const Eigen::MatrixXd& A);

}  // namespace kolmo
