#pragma once

#include <json.hpp>
#include <stdexcept>
#include <string>
#include <vector>

#include "kolmo/fbsde.hpp"

namespace kolmo {

class MinimaxCycleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Selection {
  std::vector<int> index;  // position in each player's control set
  std::vector<double> u;
  int sweeps = 0;
};

/// <z^i, r2(x, u)> + h_i(x, u), where z^i is column i of the spatial-major d x m
/// array Z. The r1 part of the Hamiltonian does not depend on u and is omitted.
double game_hamiltonian(const DiffusionSpec& ds, const double* x, const double* Z, const double* u, int i);

/// Gauss-Seidel best responses from the first profile. A player moves only on
/// strict improvement, to the lowest-index minimizer. Throws MinimaxCycleError
/// when a profile repeats without reaching a fixed point.
Selection minimax_select(const DiffusionSpec& ds, const double* x, const double* Z);

struct MinimaxSample {
  std::vector<double> x;
  std::vector<double> Z;  // d x m, spatial-major
};
std::vector<Selection> minimax_table(const DiffusionSpec& ds, const std::vector<MinimaxSample>& samples);

/// psi_i(x, z) = -(<sqrt2 z^i, r2(x, v)> + h_i(x, v)) with v the selection at
/// (x, sqrt2 z); growth constant sampled on [-L, L]^d.
Nonlinearity game_nonlinearity(const DiffusionSpec& ds, double L);

/// u = minimax selection at (x, Z) along the path.
Strategy feedback_strategy(const DiffusionSpec& ds);

struct NashRow {
  int player = 0;
  double deviation = 0.0;
  double dJ = 0.0;
  double stderr_ = 0.0;
  bool pass = false;
};

struct NashReport {
  std::vector<double> x0;
  double t = 0.0, T = 1.0, h_step = 0.0;
  std::size_t N = 0;
  std::uint64_t seed = 0;
  std::size_t escaped = 0;
  std::vector<double> J;         // J^i at the selected strategy
  std::vector<double> J_stderr;
  std::vector<double> Y0;        // u(t, x0) from the mild solution
  double rho_mean = 0.0, rho_stderr = 0.0;
  bool degenerate_weights = false;
  std::vector<NashRow> rows;
  bool pass = false;

  nlohmann::json to_json() const;
  /// player, deviation, dJ, stderr, pass
  void write_csv(const std::string& path) const;
};

/// Each player in turn deviates to every constant in deviations[i] while the
/// others keep the feedback selection; costs are paired on the same paths.
NashReport nash_check(const DiffusionSpec& ds, const MildSolution& sol, const std::vector<double>& x0, double t,
                      const std::vector<std::vector<double>>& deviations, std::size_t N, std::uint64_t seed,
                      double h_step);

}  // namespace kolmo
