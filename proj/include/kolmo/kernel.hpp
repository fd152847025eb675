#pragma once

#include <string>
#include <vector>

#include "kolmo/evolve.hpp"

namespace kolmo {

struct KernelOptions {
  double L = 6.0;             // half-width of the PDE box and of the cell partition
  int target_intervals = 240; // grid intervals per axis, rounded up to a multiple of n_cells
  double dt = 0.01;
  Boundary bc = Boundary::neumann;
};

/// Cell masses mass[(i*m + j)*n_cells + c] ~ p_ij(t, s, x, cell_c) for an
/// equal partition of [-L, L]^d into cells_per_axis^d boxes.
struct KernelRow {
  double t = 0, s = 0;
  std::vector<double> x;
  int d = 1, m = 1;
  int cells_per_axis = 1;
  double L = 1.0;
  std::vector<double> mass;
  /// max_i |1 - sum_j sum_c mass[i][j][c]|; the mass lost through the boundary when C = 0.
  double boundary_leak = 0.0;

  int n_cells() const;
  double at(int i, int j, int c) const { return mass[(static_cast<std::size_t>(i) * m + j) * n_cells() + c]; }
  void cell_bounds(int c, double* lo, double* hi) const;
  void cell_center(int c, double* out) const;
  void write_csv(const std::string& path) const;
};

KernelRow kernel_row(const OperatorSpec& spec, double t, double s, const std::vector<double>& x, int cells_per_axis,
                     const KernelOptions& opts = {});

/// Sum_j (G(t,s)(chi_box e_j))_i(x) for every i, j: an m x m matrix, row-major.
std::vector<double> indicator_mass(const OperatorSpec& spec, double t, double s, const std::vector<double>& x,
                                   const std::vector<double>& lo, const std::vector<double>& hi,
                                   const KernelOptions& opts = {});

/// m x m array (row-major) of total |mass| in cells not contained in the closed ball B_R.
std::vector<double> tightness_mass(const KernelRow& row, double R);

struct CompactnessVerdict {
  bool pass = false;
  double threshold = 0.05;
  std::vector<std::vector<double>> x_list;
  std::vector<double> R_list;
  /// table[x][r]: max over (i, j) of the outside mass.
  std::vector<std::vector<double>> table;
  bool monotone = true;
  double final_max = 0.0;
};

CompactnessVerdict compactness_probe(const OperatorSpec& spec, double t, double s,
                                     const std::vector<std::vector<double>>& x_list, const std::vector<double>& R_list,
                                     int cells_per_axis = 32, const KernelOptions& opts = {}, double threshold = 0.05);

}  // namespace kolmo
