#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <json.hpp>
#include <stdexcept>
#include <string>
#include <vector>

#include "kolmo/semilinear.hpp"

namespace kolmo {

/// Forward dynamics dX = b dt + G dW, control coupling r = r1(t,x) + r2(x,u),
/// running cost h(x,u) and terminal cost g(x). Player i owns control u<i+1>,
/// chosen from the finite set controls[i]; there are m players.
struct DiffusionSpec {
  int d = 1;
  int m = 1;
  std::vector<CoeffExpr> b;    // d, in (t, x)
  SymMatrixExpr G;             // d x d, in (t, x)
  std::vector<CoeffExpr> r1;   // d, in (t, x)
  std::vector<CoeffExpr> r2;   // d, in (x, u)
  std::vector<std::vector<double>> controls;
  std::vector<CoeffExpr> h;    // m, in (x, u)
  std::vector<CoeffExpr> g;    // m, in x
  double t_lo = 0.0;
  double t_hi = 1.0;

  /// Expressions are strings (or numbers); r1, r2 and h default to 0,
  /// controls to {0} per player.
  static DiffusionSpec from_json(const nlohmann::json& j);

  /// Q = G^2 / 2, drift b, Bt_i = (G r1)_i I_m, C = 0.
  OperatorSpec to_operator() const;
  VectorField terminal() const;

  void eval_b(double t, const double* x, double* out) const;
  void eval_G(double t, const double* x, double* out) const;  // row-major d x d
  void eval_r(double t, const double* x, const double* u, double* out) const;
  void eval_h(const double* x, const double* u, double* out) const;
  void eval_g(const double* x, double* out) const;
};

/// max over samples of |G^2/2 - Q| entrywise and min eigenvalue of G.
struct DiffusionAudit {
  double q_mismatch = 0.0;
  double lambda_G = 0.0;
  double r_sup = 0.0;  // sup |r| over the box and all control profiles
  bool holds = false;
};
DiffusionAudit audit_diffusion(const DiffusionSpec& ds, const OperatorSpec& op, double L, int n_samples = 200);

class PathExplosionError : public std::runtime_error {
 public:
  PathExplosionError(const std::string& what, std::vector<std::size_t> idx)
      : std::runtime_error(what), paths(std::move(idx)) {}
  std::vector<std::size_t> paths;
};

class EscapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PathBatch {
  std::size_t N = 0;
  int d = 1;
  int steps = 0;
  int substeps = 1;  // Brownian increments are sums of this many finer ones
  double t = 0.0, T = 1.0, h_step = 0.0;
  std::uint64_t seed = 0;
  std::vector<double> times;  // steps + 1
  std::vector<double> X;      // (path * (steps + 1) + k) * d + a
  std::vector<double> dW;     // (path * steps + k) * d + a
  std::vector<double> rho;    // Girsanov weight per path (1 before reweighting)
  std::vector<double> u;      // applied controls, (path * steps + k) * m + i; empty before reweighting

  const double* x(std::size_t p, int k) const { return &X[(p * (steps + 1) + k) * d]; }
  const double* dw(std::size_t p, int k) const { return &dW[(p * steps + k) * d]; }

  /// "KPB1" container: 64-byte header, then X, dW and rho as little-endian doubles.
  void write(const std::string& path) const;
  static PathBatch read(const std::string& path);
};

/// Euler-Maruyama from x0 at time t to T. Increments come from Philox keyed by
/// (seed, path, fine step), fine step = k * substeps + s.
PathBatch simulate_forward(const DiffusionSpec& ds, const std::vector<double>& x0, double t, double T, double h_step,
                           std::size_t N, std::uint64_t seed, int substeps = 1);

struct YZProcess {
  std::size_t N = 0;
  int steps = 0, d = 1, m = 1;
  std::vector<double> Y;     // (path * (steps + 1) + k) * m + j
  std::vector<double> Z;     // ((path * (steps + 1) + k) * d + i) * m + j
  std::vector<char> valid;   // path stayed inside the grid box
  std::size_t escaped = 0;

  const double* y(std::size_t p, int k) const { return &Y[(p * (steps + 1) + k) * m]; }
  const double* z(std::size_t p, int k) const { return &Z[(p * (steps + 1) + k) * d * m]; }
};

/// Y = u(tau, X), Z = G (J_x u)^T along the paths; linear in time between
/// stored rungs, multilinear in space. Y at T is g(X_T). Throws EscapeError
/// when more than 5% of the paths leave the grid box.
YZProcess identify_yz(const MildSolution& sol, const DiffusionSpec& ds, const PathBatch& batch);

struct BsdeResidual {
  double l2 = 0.0;              // sqrt E|R|^2 over valid paths
  std::vector<double> profile;  // sqrt E|R_k|^2 for the tail sums from step k
  std::size_t used = 0;
};

/// R = Y_t + sum Z^T dW - g(X_T) - sum H h_step, with
/// H_j = sum_{i,k} (Bt_i)_{jk} (G^{-1} Z)_{ik} - psi_j(x, Z / sqrt 2).
BsdeResidual bsde_residual(const YZProcess& yz, const DiffusionSpec& ds, const Nonlinearity& nl,
                           const PathBatch& batch);

/// u for path p at step k, given x and (when available) Z at that point.
using Strategy = std::function<void(std::size_t p, int k, double tau, const double* x, const double* Z, double* u)>;

Strategy constant_strategy(std::vector<double> u);
/// Player `player` switches to constant `value`; the others follow `base`.
Strategy deviation_strategy(Strategy base, int player, double value);

struct GirsanovReport {
  double r_max = 0.0;
  bool bound_exceeded = false;
};

/// rho = exp(sum <r, dW> - 1/2 sum |r|^2 h). Stores rho and the applied controls.
/// Z is read from yz when given (feedback strategies need it).
GirsanovReport girsanov_weights(const DiffusionSpec& ds, PathBatch& batch, const Strategy& strategy,
                                const YZProcess* yz = nullptr, double r_bound = INFINITY);

struct CostEstimate {
  double value = 0.0;
  double stderr_ = 0.0;
  double ess = 0.0;
  bool degenerate = false;       // ess < N / 100
  std::vector<double> per_path;  // rho * (sum h_i h + g_i(X_T)), 0 for excluded paths
};

/// Cost of player i from the stored weights and controls; `valid` masks paths.
CostEstimate cost(const DiffusionSpec& ds, const PathBatch& batch, int i, const std::vector<char>* valid = nullptr);

/// Mean and standard error of a sample (mask optional).
std::pair<double, double> mean_stderr(const std::vector<double>& v, const std::vector<char>* valid = nullptr);

}  // namespace kolmo
