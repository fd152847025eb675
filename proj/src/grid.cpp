#include "kolmo/grid.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>

namespace kolmo {

std::string to_string(Boundary bc) { return bc == Boundary::dirichlet ? "dirichlet" : "neumann"; }

Boundary boundary_from_string(const std::string& s) {
  if (s == "dirichlet") return Boundary::dirichlet;
  if (s == "neumann") return Boundary::neumann;
  throw std::invalid_argument("unknown boundary condition '" + s + "'");
}

Grid Grid::make(int d, double L, int n) {
  if (d < 1 || d > 2) throw std::invalid_argument("grid dimension must be 1 or 2");
  if (n < 5 || n > 401 || n % 2 == 0) throw std::invalid_argument("grid size must be odd and in [5, 401]");
  if (!(L > 0)) throw std::invalid_argument("grid half-width must be positive");
  return Grid{d, n, L};
}

Grid Grid::with_spacing(int d, double L, double h) {
  double cells = 2.0 * L / h;
  long c = std::lround(cells);
  if (std::fabs(cells - c) > 1e-9 * cells || c % 2 != 0)
    throw std::invalid_argument("2L/h must be an even integer");
  return make(d, L, static_cast<int>(c + 1));
}

std::size_t Grid::nodes() const {
  std::size_t r = 1;
  for (int i = 0; i < d; ++i) r *= static_cast<std::size_t>(n);
  return r;
}

std::size_t Grid::stride(int axis) const { return axis == 0 ? 1 : static_cast<std::size_t>(n); }

int Grid::index(std::size_t node, int axis) const {
  return axis == 0 ? static_cast<int>(node % n) : static_cast<int>(node / n);
}

void Grid::point(std::size_t node, double* x) const {
  for (int a = 0; a < d; ++a) x[a] = coord(index(node, a));
}

bool Grid::on_boundary(std::size_t node) const {
  for (int a = 0; a < d; ++a) {
    int i = index(node, a);
    if (i == 0 || i == n - 1) return true;
  }
  return false;
}

bool Grid::in_box(std::size_t node, double pL) const {
  for (int a = 0; a < d; ++a)
    if (std::fabs(coord(index(node, a))) > pL + 1e-12 * L) return false;
  return true;
}

double GridFunction::sup_norm(double pL) const {
  double s = 0.0;
  for (std::size_t k = 0; k < grid.nodes(); ++k) {
    if (!grid.in_box(k, pL)) continue;
    double a = 0.0;
    for (int j = 0; j < m; ++j) a += at(k, j) * at(k, j);
    s = std::max(s, std::sqrt(a));
  }
  return s;
}

void GridFunction::interpolate(const double* x, double* out) const {
  const double h = grid.h();
  int i0[2] = {0, 0};
  double w[2] = {0.0, 0.0};
  for (int a = 0; a < grid.d; ++a) {
    double s = (std::clamp(x[a], -grid.L, grid.L) + grid.L) / h;
    int i = std::min(static_cast<int>(std::floor(s)), grid.n - 2);
    i0[a] = i;
    w[a] = s - i;
  }
  for (int j = 0; j < m; ++j) out[j] = 0.0;
  const int corners = 1 << grid.d;
  for (int c = 0; c < corners; ++c) {
    double wt = 1.0;
    std::size_t node = 0;
    for (int a = 0; a < grid.d; ++a) {
      int bit = (c >> a) & 1;
      wt *= bit ? w[a] : 1.0 - w[a];
      node += static_cast<std::size_t>(i0[a] + bit) * grid.stride(a);
    }
    if (wt == 0.0) continue;
    for (int j = 0; j < m; ++j) out[j] += wt * at(node, j);
  }
}

GridFunction GridFunction::component(int j) const {
  GridFunction r(grid, 1, bc, t);
  for (std::size_t k = 0; k < grid.nodes(); ++k) r.values[k] = at(k, j);
  return r;
}

GridFunction sample(const Grid& g, int m, const VectorField& f, Boundary bc, double t) {
  GridFunction u(g, m, bc, t);
  double x[2];
  for (std::size_t k = 0; k < g.nodes(); ++k) {
    g.point(k, x);
    f(x, &u.values[k * m]);
  }
  return u;
}

namespace {

template <class T>
void put(std::string& buf, std::size_t off, T v) {
  static_assert(std::endian::native == std::endian::little, "little-endian host required");
  std::memcpy(buf.data() + off, &v, sizeof v);
}

template <class T>
T get(const std::string& buf, std::size_t off) {
  T v;
  std::memcpy(&v, buf.data() + off, sizeof v);
  return v;
}

}  // namespace

void write_kgf(const GridFunction& u, const std::string& path) {
  std::string header(64, '\0');
  std::memcpy(header.data(), "KGF1", 4);
  put<int32_t>(header, 4, u.grid.d);
  put<int32_t>(header, 8, u.m);
  put<int32_t>(header, 12, u.grid.n);
  put<int32_t>(header, 16, u.bc == Boundary::dirichlet ? 0 : 1);
  put<double>(header, 24, u.grid.L);
  put<double>(header, 32, u.t);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path);
  os.write(header.data(), 64);
  const std::size_t N = u.grid.nodes();
  std::vector<double> buf(N);
  for (int j = 0; j < u.m; ++j) {
    for (std::size_t k = 0; k < N; ++k) buf[k] = u.at(k, j);
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(N * sizeof(double)));
  }
}

GridFunction read_kgf(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path);
  std::string header(64, '\0');
  is.read(header.data(), 64);
  if (is.gcount() != 64 || header.compare(0, 4, "KGF1") != 0) throw FormatError("bad KGF1 header in " + path);
  Grid g = Grid::make(get<int32_t>(header, 4), get<double>(header, 24), get<int32_t>(header, 12));
  int m = get<int32_t>(header, 8);
  if (m < 1 || m > 3) throw FormatError("bad component count in " + path);
  GridFunction u(g, m, get<int32_t>(header, 16) == 0 ? Boundary::dirichlet : Boundary::neumann,
                 get<double>(header, 32));
  const std::size_t N = g.nodes();
  std::vector<double> buf(N);
  for (int j = 0; j < m; ++j) {
    is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(N * sizeof(double)));
    if (static_cast<std::size_t>(is.gcount()) != N * sizeof(double)) throw FormatError("truncated " + path);
    for (std::size_t k = 0; k < N; ++k) u.at(k, j) = buf[k];
  }
  return u;
}

void write_csv(const GridFunction& u, const std::string& path) {
  if (u.grid.d != 1) throw std::invalid_argument("CSV export is for d = 1");
  std::ofstream os(path);
  if (!os) throw FormatError("cannot open " + path);
  os << "x";
  for (int j = 0; j < u.m; ++j) os << ",u" << j + 1;
  os << "\n" << std::setprecision(17);
  for (std::size_t k = 0; k < u.grid.nodes(); ++k) {
    os << u.grid.coord(static_cast<int>(k));
    for (int j = 0; j < u.m; ++j) os << "," << u.at(k, j);
    os << "\n";
  }
}

}  // namespace kolmo
