#pragma once

#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace kolmo {

enum class Boundary { dirichlet, neumann };

std::string to_string(Boundary bc);
Boundary boundary_from_string(const std::string& s);

/// Uniform grid on [-L, L]^d with n nodes per axis (n odd, 5 <= n <= 401).
struct Grid {
  int d = 1;
  int n = 5;
  double L = 1.0;

  static Grid make(int d, double L, int n);
  /// Grid with spacing h on [-L, L]^d; 2L/h must be an even integer.
  static Grid with_spacing(int d, double L, double h);

  double h() const { return 2.0 * L / (n - 1); }
  std::size_t nodes() const;
  double coord(int i) const { return -L + h() * i; }
  void point(std::size_t node, double* x) const;
  /// Index along `axis` of a node.
  int index(std::size_t node, int axis) const;
  std::size_t stride(int axis) const;
  bool on_boundary(std::size_t node) const;
  /// Node lies in [-pL, pL]^d (probe box).
  bool in_box(std::size_t node, double pL) const;
  bool operator==(const Grid& o) const { return d == o.d && n == o.n && L == o.L; }
};

/// Vector field sampled at grid nodes; values[node * m + j].
struct GridFunction {
  Grid grid;
  int m = 1;
  Boundary bc = Boundary::dirichlet;
  double t = 0.0;
  std::vector<double> values;

  GridFunction() = default;
  GridFunction(const Grid& g, int m_, Boundary bc_ = Boundary::dirichlet, double t_ = 0.0)
      : grid(g), m(m_), bc(bc_), t(t_), values(g.nodes() * static_cast<std::size_t>(m_), 0.0) {}

  double& at(std::size_t node, int j) { return values[node * m + j]; }
  double at(std::size_t node, int j) const { return values[node * m + j]; }

  /// sup over nodes in [-pL, pL]^d of the Euclidean norm |u(x)|.
  double sup_norm(double pL) const;
  double sup_norm() const { return sup_norm(grid.L); }
  /// Probe box of half the domain.
  double probe_sup() const { return sup_norm(0.5 * grid.L); }
  /// Multilinear interpolation at x (clamped to the grid).
  void interpolate(const double* x, double* out) const;
  /// Component j as a scalar field.
  GridFunction component(int j) const;
};

using VectorField = std::function<void(const double* x, double* out)>;

GridFunction sample(const Grid& g, int m, const VectorField& f, Boundary bc = Boundary::dirichlet, double t = 0.0);

/// Little-endian binary: 64-byte header ("KGF1", d, m, n, bc, L, t) then
/// m * n^d doubles, component-major, nodes ordered with x1 fastest.
void write_kgf(const GridFunction& u, const std::string& path);
GridFunction read_kgf(const std::string& path);
/// CSV for d = 1: x, u1, ..., um.
void write_csv(const GridFunction& u, const std::string& path);

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace kolmo
