#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "kolmo/evolve.hpp"

namespace kolmo {

/// psi(x, z) with z spatial-major, z[i * m + k] (i < d, k < m).
struct Nonlinearity {
  int d = 1;
  int m = 1;
  std::function<void(const double* x, const double* z, double* out)> psi;
  double growth_c = 0.0;
  double holder_alpha = 1.0;

  void operator()(const double* x, const double* z, double* out) const { psi(x, z, out); }

  static Nonlinearity zero(int d, int m);
  /// One expression per component, in x<i> and z<i><k>.
  static Nonlinearity from_exprs(int d, int m, const std::vector<std::string>& exprs, double growth_c,
                                 double holder_alpha);
};

/// Largest sampled |psi(x,z)| / (1 + |z|) over x in [-L, L]^d and |z| <= z_max.
double sampled_growth(const Nonlinearity& nl, double L, double z_max, int n_samples = 400);

/// Smooth radial cutoff: 1 on [0, 1], 0 on [2, inf).
double cutoff(double r);

/// theta(|z|/n) times the average of psi over the stencil z, z +- e_l / (2n).
Nonlinearity mollify_nonlinearity(const Nonlinearity& nl, int n);

class PicardError : public std::runtime_error {
 public:
  PicardError(const std::string& what, double delta) : std::runtime_error(what), last_delta(delta) {}
  double last_delta;
};

struct MildOptions {
  double picard_tol = 1e-8;
  int max_iter = 50;
  int graded_steps = 4;  // sqrt-graded sub-steps on the interval next to T
  SolverOptions solver;
};

struct MildSolution {
  std::vector<double> times;     // ascending, last entry T
  std::vector<GridFunction> u;   // u[k] at times[k]
  double kt = 0.0;
  std::vector<double> picard_history;
  int iterations = 0;

  /// Writes u_<k>.kgf files and manifest.json into `dir` (created if needed).
  void export_dir(const std::string& dir) const;
};

/// Backward problem D_t u + A u = psi(x, sqrt(Q) (J_x u)^T), u(T) = g, solved
/// forward in tau = T - t by Picard iteration on the mild equation with a
/// trapezoidal Duhamel rule. `spec` must be defined on [0, T].
MildSolution mild_solve(const OperatorSpec& spec, const Nonlinearity& nl, const GridFunction& g, double T, double dt,
                        const MildOptions& opts = {});

/// The K_T time grid used by mild_solve, ascending in t.
std::vector<double> mild_times(double T, double dt, int graded_steps);

/// ||u||_inf + sup_{t<T} sqrt(T - t) ||sqrt(Q) (J_x u)^T||_inf on the probe box.
double kt_norm(const OperatorSpec& spec, const std::vector<double>& times, const std::vector<GridFunction>& u);
double kt_norm(const OperatorSpec& spec, const MildSolution& sol);

struct MollifierLadder {
  std::vector<int> n;                 // mollification indices
  std::vector<double> kt;             // kt norm per index
  std::vector<double> deltas;         // sup over times and probe box of |u_{n_i} - u_{n_{i+1}}|
  double fitted_alpha = 0.0;          // least-squares slope of -log delta against log n
  std::vector<double> C;              // deltas[i] * n_i^fitted_alpha
  double C_ratio = 0.0;               // max C / min C
  double kt_spread = 0.0;             // max kt / min kt - 1
  std::vector<MildSolution> solutions;
};

/// Solves with psi^(n) for every n in n_list (increasing) and fits deltas ~ C n^(-alpha).
MollifierLadder mollifier_ladder(const OperatorSpec& spec, const Nonlinearity& nl, const GridFunction& g, double T,
                                 double dt, const std::vector<int>& n_list, const MildOptions& opts = {});

}  // namespace kolmo
