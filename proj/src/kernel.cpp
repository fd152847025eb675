#include "kolmo/kernel.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>

namespace kolmo {

namespace {

Grid kernel_grid(int d, int cells, const KernelOptions& o) {
  if (cells < 1 || cells > 64) throw std::invalid_argument("cells per axis must lie in [1, 64]");
  int k = std::max(4, (o.target_intervals + cells - 1) / cells);
  int intervals = cells * k;
  if (intervals % 2) intervals += cells;  // keep 0 a node
  if (intervals + 1 > 401) throw std::invalid_argument("too many cells for the grid size limit");
  return Grid::make(d, o.L, intervals + 1);
}

// Fraction of each node's (boundary-clipped) control volume inside the box.
GridFunction box_indicator(const Grid& g, int m, int comp, const double* lo, const double* hi, Boundary bc) {
  GridFunction u(g, m, bc);
  const double h = g.h();
  for (std::size_t p = 0; p < g.nodes(); ++p) {
    double w = 1.0;
    for (int a = 0; a < g.d; ++a) {
      double xc = g.coord(g.index(p, a));
      double cl = std::max(xc - 0.5 * h, -g.L), ch = std::min(xc + 0.5 * h, g.L);
      double ol = std::max(cl, lo[a]), oh = std::min(ch, hi[a]);
      w *= std::max(0.0, oh - ol) / (ch - cl);
      if (w == 0.0) break;
    }
    u.at(p, comp) = w;
  }
  return u;
}

void check_point(const std::vector<double>& x, int d, double L) {
  if (static_cast<int>(x.size()) != d) throw std::invalid_argument("evaluation point has wrong dimension");
  for (double v : x)
    if (std::fabs(v) > 0.5 * L + 1e-12) throw std::invalid_argument("evaluation point outside the probe box");
}

}  // namespace

int KernelRow::n_cells() const { return d == 1 ? cells_per_axis : cells_per_axis * cells_per_axis; }

void KernelRow::cell_bounds(int c, double* lo, double* hi) const {
  const double w = 2.0 * L / cells_per_axis;
  int idx[2] = {c % cells_per_axis, c / cells_per_axis};
  for (int a = 0; a < d; ++a) {
    lo[a] = -L + w * idx[a];
    hi[a] = lo[a] + w;
  }
}

void KernelRow::cell_center(int c, double* out) const {
  double lo[2], hi[2];
  cell_bounds(c, lo, hi);
  for (int a = 0; a < d; ++a) out[a] = 0.5 * (lo[a] + hi[a]);
}

void KernelRow::write_csv(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot open " + path);
  os << "i,j";
  for (int a = 0; a < d; ++a) os << ",y" << a + 1;
  os << ",mass\n" << std::setprecision(17);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j)
      for (int c = 0; c < n_cells(); ++c) {
        double y[2];
        cell_center(c, y);
        os << i + 1 << "," << j + 1;
        for (int a = 0; a < d; ++a) os << "," << y[a];
        os << "," << at(i, j, c) << "\n";
      }
}

KernelRow kernel_row(const OperatorSpec& spec, double t, double s, const std::vector<double>& x, int cells_per_axis,
                     const KernelOptions& opts) {
  check_point(x, spec.d, opts.L);
  Grid g = kernel_grid(spec.d, cells_per_axis, opts);
  KernelRow row;
  row.t = t;
  row.s = s;
  row.x = x;
  row.d = spec.d;
  row.m = spec.m;
  row.cells_per_axis = cells_per_axis;
  row.L = opts.L;
  const int nc = row.n_cells();
  const int m = spec.m;

  std::vector<GridFunction> data;
  data.reserve(static_cast<std::size_t>(m) * nc);
  for (int j = 0; j < m; ++j)
    for (int c = 0; c < nc; ++c) {
      double lo[2], hi[2];
      row.cell_bounds(c, lo, hi);
      data.push_back(box_indicator(g, m, j, lo, hi, opts.bc));
    }
  Evolver ev(spec, g, opts.bc);
  auto out = ev.evolve_many(data, s, t, opts.dt);

  row.mass.assign(static_cast<std::size_t>(m) * m * nc, 0.0);
  std::vector<double> val(m);
  for (int j = 0; j < m; ++j)
    for (int c = 0; c < nc; ++c) {
      out[static_cast<std::size_t>(j) * nc + c].interpolate(x.data(), val.data());
      for (int i = 0; i < m; ++i) row.mass[(static_cast<std::size_t>(i) * m + j) * nc + c] = val[i];
    }
  for (int i = 0; i < m; ++i) {
    double tot = 0.0;
    for (int j = 0; j < m; ++j)
      for (int c = 0; c < nc; ++c) tot += row.at(i, j, c);
    row.boundary_leak = std::max(row.boundary_leak, std::fabs(1.0 - tot));
  }
  return row;
}

std::vector<double> indicator_mass(const OperatorSpec& spec, double t, double s, const std::vector<double>& x,
                                   const std::vector<double>& lo, const std::vector<double>& hi,
                                   const KernelOptions& opts) {
  check_point(x, spec.d, opts.L);
  if (static_cast<int>(lo.size()) != spec.d || static_cast<int>(hi.size()) != spec.d)
    throw std::invalid_argument("box has wrong dimension");
  Grid g = Grid::with_spacing(spec.d, opts.L, 2.0 * opts.L / (opts.target_intervals + opts.target_intervals % 2));
  std::vector<GridFunction> data;
  for (int j = 0; j < spec.m; ++j) data.push_back(box_indicator(g, spec.m, j, lo.data(), hi.data(), opts.bc));
  Evolver ev(spec, g, opts.bc);
  auto out = ev.evolve_many(data, s, t, opts.dt);
  std::vector<double> res(static_cast<std::size_t>(spec.m) * spec.m), val(spec.m);
  for (int j = 0; j < spec.m; ++j) {
    out[j].interpolate(x.data(), val.data());
    for (int i = 0; i < spec.m; ++i) res[static_cast<std::size_t>(i) * spec.m + j] = val[i];
  }
  return res;
}

std::vector<double> tightness_mass(const KernelRow& row, double R) {
  std::vector<double> out(static_cast<std::size_t>(row.m) * row.m, 0.0);
  for (int c = 0; c < row.n_cells(); ++c) {
    double lo[2], hi[2], far = 0.0;
    row.cell_bounds(c, lo, hi);
    for (int a = 0; a < row.d; ++a) {
      double e = std::max(std::fabs(lo[a]), std::fabs(hi[a]));
      far += e * e;
    }
    if (std::sqrt(far) <= R) continue;
    for (int i = 0; i < row.m; ++i)
      for (int j = 0; j < row.m; ++j) out[static_cast<std::size_t>(i) * row.m + j] += std::fabs(row.at(i, j, c));
  }
  return out;
}

CompactnessVerdict compactness_probe(const OperatorSpec& spec, double t, double s,
                                     const std::vector<std::vector<double>>& x_list, const std::vector<double>& R_list,
                                     int cells_per_axis, const KernelOptions& opts, double threshold) {
  if (x_list.empty() || R_list.empty()) throw std::invalid_argument("compactness probe needs points and radii");
  CompactnessVerdict v;
  v.threshold = threshold;
  v.x_list = x_list;
  v.R_list = R_list;
  for (const auto& x : x_list) {
    KernelRow row = kernel_row(spec, t, s, x, cells_per_axis, opts);
    std::vector<double> line;
    for (double R : R_list) {
      auto tm = tightness_mass(row, R);
      line.push_back(*std::max_element(tm.begin(), tm.end()));
    }
    for (std::size_t r = 1; r < line.size(); ++r)
      if (line[r] > line[r - 1] * (1.0 + 1e-9) + 1e-12) v.monotone = false;
    v.final_max = std::max(v.final_max, line.back());
    v.table.push_back(std::move(line));
  }
  v.pass = v.monotone && v.final_max < threshold;
  return v;
}

}  // namespace kolmo
