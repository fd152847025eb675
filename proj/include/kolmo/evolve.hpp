#pragma once

#include <memory>
#include <stdexcept>
#include <utility>
#include <vector>

#include "kolmo/grid.hpp"
#include "kolmo/operator_spec.hpp"

namespace kolmo {

class SolverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class BlowUpError : public std::runtime_error {
 public:
  BlowUpError(const std::string& what, double t) : std::runtime_error(what), time(t) {}
  double time;
};

class NotConvergedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SolverOptions {
  double tol = 1e-10;
  int max_iter = 2000;
  double blowup = 1e12;
};

/// Backward-Euler finite-difference evolution u_t = A(t) u on a box.
/// Coefficients are frozen at the new time level; the matrix is cached
/// across steps when the operator is autonomous. Not safe for concurrent use.
class Evolver {
 public:
  Evolver(OperatorSpec spec, Grid grid, Boundary bc, SolverOptions opts = {});
  ~Evolver();
  Evolver(Evolver&&) noexcept;
  Evolver& operator=(Evolver&&) noexcept;

  const OperatorSpec& spec() const { return spec_; }
  const Grid& grid() const { return grid_; }
  Boundary bc() const { return bc_; }

  /// u(t) from u(s) = f, using ceil((t-s)/dt) uniform steps.
  GridFunction evolve(const GridFunction& f, double s, double t, double dt);
  /// Several initial data sharing the same steps and matrices.
  std::vector<GridFunction> evolve_many(const std::vector<GridFunction>& fs, double s, double t, double dt);
  /// Solutions at every rung of an increasing time ladder (first entry is f).
  std::vector<GridFunction> evolve_on_ladder(const GridFunction& f, const std::vector<double>& times, double dt);
  /// One implicit step of size h ending at t_new, in place on node-major values.
  void step(std::vector<double>& u, double t_new, double h);

  /// Matrices on which BiCGSTAB failed and a sparse LU factorization was used instead.
  int direct_fallbacks() const { return direct_fallbacks_; }

  /// Number of uniform steps used between s and t.
  static int step_count(double s, double t, double dt);

 private:
  struct System;
  void prepare(double t_new, double h);
  void check_times(double s, double t) const;

  OperatorSpec spec_;
  Grid grid_;
  Boundary bc_;
  SolverOptions opts_;
  bool decoupled_ = false;
  bool autonomous_ = false;
  int direct_fallbacks_ = 0;
  std::unique_ptr<System> sys_;
};

/// Convenience wrapper around a one-shot Evolver.
GridFunction evolve(const OperatorSpec& spec, const GridFunction& f, double s, double t, double dt, Boundary bc);

/// Jacobian J_x u: values[(node * m + j) * d + a] = D_a u_j(node).
struct Gradient {
  Grid grid;
  int m = 1;
  std::vector<double> values;
  double at(std::size_t node, int j, int a) const { return values[(node * m + j) * grid.d + a]; }
};

/// Central differences in the interior, second-order one-sided at faces.
Gradient gradient(const GridFunction& u);

struct EvolveReport {
  GridFunction solution;
  Gradient grad;
  std::vector<std::pair<double, double>> inflation_history;  // (L, sup delta on probe box)
  bool converged = false;
};

/// Solve on each box of L_list with spacing h and compare successive solutions
/// on [-probe_L, probe_L]^d.
EvolveReport evolve_inflated(const OperatorSpec& spec, const VectorField& f, double s, double t, double dt, double h,
                             const std::vector<double>& L_list, double probe_L, double tol,
                             Boundary bc = Boundary::dirichlet);

/// sup over the probe box of |G(t,r)G(r,s)f - G(t,s)f|.
double compose_check(const OperatorSpec& spec, const GridFunction& f, double s, double r, double t, double dt,
                     Boundary bc = Boundary::dirichlet);

/// sup over [-pL, pL]^d of |u - v| (Euclidean in components); grids must match.
double sup_diff(const GridFunction& u, const GridFunction& v, double pL);

}  // namespace kolmo
