#include "kolmo/semilinear.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "kolmo/expr.hpp"
#include "kolmo/sampling.hpp"

namespace kolmo {

Nonlinearity Nonlinearity::zero(int d, int m) {
  Nonlinearity nl;
  nl.d = d;
  nl.m = m;
  nl.psi = [m](const double*, const double*, double* out) {
    for (int k = 0; k < m; ++k) out[k] = 0.0;
  };
  return nl;
}

Nonlinearity Nonlinearity::from_exprs(int d, int m, const std::vector<std::string>& exprs, double growth_c,
                                      double holder_alpha) {
  if (static_cast<int>(exprs.size()) != m) throw std::invalid_argument("nonlinearity needs one expression per component");
  if (!(holder_alpha > 0.0 && holder_alpha <= 1.0)) throw std::invalid_argument("holder_alpha must lie in (0, 1]");
  ExprContext ctx;
  ctx.d = d;
  ctx.m = m;
  std::vector<CoeffExpr> es;
  for (const auto& s : exprs) es.push_back(parse_expr(s, ctx));
  Nonlinearity nl;
  nl.d = d;
  nl.m = m;
  nl.growth_c = growth_c;
  nl.holder_alpha = holder_alpha;
  nl.psi = [es, d, m](const double* x, const double* z, double* out) {
    EvalPoint p;
    p.x = x;
    p.d = d;
    p.z = z;
    p.m = m;
    for (int k = 0; k < m; ++k) out[k] = es[k].eval(p);
  };
  return nl;
}

double sampled_growth(const Nonlinearity& nl, double L, double z_max, int n_samples) {
  static const unsigned primes[] = {5, 7, 11, 13, 17, 19, 23, 29, 31, 37};
  const int nz = nl.d * nl.m;
  if (nz > 10) throw std::invalid_argument("sampled_growth supports d * m <= 10");
  auto xs = box_samples(nl.d, L, 0.0, 0.0, n_samples);
  std::vector<double> z(nz), out(nl.m);
  double worst = 0.0;
  for (std::size_t s = 0; s < xs.size(); ++s) {
    for (int l = 0; l < nz; ++l) z[l] = s == 0 ? 0.0 : z_max * (2.0 * radical_inverse(static_cast<unsigned>(s), primes[l]) - 1.0);
    nl(xs[s].x.data(), z.data(), out.data());
    double zn = 0.0, on = 0.0;
    for (double v : z) zn += v * v;
    for (double v : out) on += v * v;
    worst = std::max(worst, std::sqrt(on) / (1.0 + std::sqrt(zn)));
  }
  return worst;
}

double cutoff(double r) {
  if (r <= 1.0) return 1.0;
  if (r >= 2.0) return 0.0;
  auto s = [](double y) { return y > 0.0 ? std::exp(-1.0 / y) : 0.0; };
  double a = s(2.0 - r), b = s(r - 1.0);
  return a / (a + b);
}

Nonlinearity mollify_nonlinearity(const Nonlinearity& nl, int n) {
  if (n < 1) throw std::invalid_argument("mollification index must be >= 1");
  Nonlinearity out = nl;
  const int nz = nl.d * nl.m, m = nl.m;
  const double w = 0.5 / n;
  out.growth_c = nl.growth_c * (1.0 + w);
  auto base = nl.psi;
  out.psi = [base, nz, m, w, n](const double* x, const double* z, double* o) {
    double zn = 0.0;
    for (int l = 0; l < nz; ++l) zn += z[l] * z[l];
    const double theta = cutoff(std::sqrt(zn) / n);
    for (int k = 0; k < m; ++k) o[k] = 0.0;
    if (theta == 0.0) return;
    std::vector<double> zz(z, z + nz), v(m);
    base(x, zz.data(), v.data());
    for (int k = 0; k < m; ++k) o[k] += v[k];
    for (int l = 0; l < nz; ++l) {
      for (double sgn : {1.0, -1.0}) {
        zz[l] = z[l] + sgn * w;
        base(x, zz.data(), v.data());
        for (int k = 0; k < m; ++k) o[k] += v[k];
      }
      zz[l] = z[l];
    }
    const double scale = theta / (2 * nz + 1);
    for (int k = 0; k < m; ++k) o[k] *= scale;
  };
  return out;
}

std::vector<double> mild_times(double T, double dt, int graded_steps) {
  if (!(T > 0.0) || !(dt > 0.0)) throw std::invalid_argument("T and dt must be positive");
  const int N = Evolver::step_count(0.0, T, dt);
  const double h = T / N;
  const int k = std::max(1, graded_steps);
  // tau ladder: (j/k)^2 h on the first interval, then uniform.
  std::vector<double> tau = {0.0};
  for (int j = 1; j <= k; ++j) tau.push_back(h * double(j) * j / (double(k) * k));
  for (int j = 2; j <= N; ++j) tau.push_back(j == N ? T : h * j);
  std::vector<double> t;
  for (auto it = tau.rbegin(); it != tau.rend(); ++it) t.push_back(T - *it);
  t.back() = T;
  t.front() = std::max(0.0, t.front());
  return t;
}

namespace {

// sqrt(Q(t, x)) at every node, row-major d x d; cached when Q is autonomous.
class SqrtQField {
 public:
  SqrtQField(const OperatorSpec& spec, const Grid& g) : spec_(spec), grid_(g) {
    for (int i = 0; i < spec.d; ++i)
      for (int j = i; j < spec.d; ++j)
        if (spec.Q(i, j).depends_on(VarKind::time)) autonomous_ = false;
  }

  const std::vector<double>& at(double t) {
    if (!vals_.empty() && (autonomous_ || t == t_)) return vals_;
    const int d = spec_.d;
    vals_.assign(grid_.nodes() * d * d, 0.0);
    Eigen::MatrixXd Q;
    std::vector<double> x(d);
    for (std::size_t p = 0; p < grid_.nodes(); ++p) {
      grid_.point(p, x.data());
      spec_.Q.eval(t, x.data(), d, Q);
      if (d == 1) {
        vals_[p] = std::sqrt(std::max(Q(0, 0), 0.0));
      } else {
        Eigen::MatrixXd S = sym_sqrt(Q);
        for (int i = 0; i < d; ++i)
          for (int l = 0; l < d; ++l) vals_[p * d * d + i * d + l] = S(i, l);
      }
    }
    t_ = t;
    return vals_;
  }

 private:
  const OperatorSpec& spec_;
  Grid grid_;
  bool autonomous_ = true;
  double t_ = 0.0;
  std::vector<double> vals_;
};

// z = sqrt(Q) (J_x u)^T at node p, spatial-major.
void z_at(const Gradient& J, const std::vector<double>& S, std::size_t p, int d, int m, double* z) {
  for (int i = 0; i < d; ++i)
    for (int k = 0; k < m; ++k) {
      double s = 0.0;
      for (int l = 0; l < d; ++l) s += S[p * d * d + i * d + l] * J.at(p, k, l);
      z[i * m + k] = s;
    }
}

double kt_value(SqrtQField& sq, const std::vector<double>& times, const std::vector<GridFunction>& u) {
  if (times.size() != u.size() || u.empty()) throw std::invalid_argument("times and values differ in length");
  const Grid& g = u[0].grid;
  const int d = g.d, m = u[0].m;
  const double pL = 0.5 * g.L, T = times.back();
  double sup = 0.0, grad = 0.0;
  std::vector<double> z(d * m);
  for (std::size_t k = 0; k < u.size(); ++k) {
    sup = std::max(sup, u[k].sup_norm(pL));
    if (times[k] >= T) continue;
    const auto& S = sq.at(times[k]);
    Gradient J = gradient(u[k]);
    double gk = 0.0;
    for (std::size_t p = 0; p < g.nodes(); ++p) {
      if (!g.in_box(p, pL)) continue;
      z_at(J, S, p, d, m, z.data());
      double s = 0.0;
      for (double v : z) s += v * v;
      gk = std::max(gk, s);
    }
    grad = std::max(grad, std::sqrt(T - times[k]) * std::sqrt(gk));
  }
  return sup + grad;
}

}  // namespace

double kt_norm(const OperatorSpec& spec, const std::vector<double>& times, const std::vector<GridFunction>& u) {
  if (u.empty()) throw std::invalid_argument("empty solution");
  SqrtQField sq(spec, u[0].grid);
  return kt_value(sq, times, u);
}

double kt_norm(const OperatorSpec& spec, const MildSolution& sol) { return kt_norm(spec, sol.times, sol.u); }

MildSolution mild_solve(const OperatorSpec& spec, const Nonlinearity& nl, const GridFunction& g, double T, double dt,
                        const MildOptions& opts) {
  if (nl.d != spec.d || nl.m != spec.m || g.m != spec.m || g.grid.d != spec.d)
    throw std::invalid_argument("dimension mismatch between operator, nonlinearity and terminal data");
  if (spec.t_lo > 0.0 || spec.t_hi < T) throw std::invalid_argument("operator must be defined on [0, T]");
  const Grid& grid = g.grid;
  const int d = spec.d, m = spec.m;
  const std::size_t N = grid.nodes() * m;

  MildSolution sol;
  sol.times = mild_times(T, dt, opts.graded_steps);
  const std::size_t K = sol.times.size();
  // Rung j in forward time tau_j = T - times[K - 1 - j].
  std::vector<double> tau(K);
  for (std::size_t j = 0; j < K; ++j) tau[j] = T - sol.times[K - 1 - j];
  tau[0] = 0.0;

  Evolver ev(time_reversed(spec, T), grid, g.bc, opts.solver);
  SqrtQField sq(spec, grid);

  auto to_gf = [&](const std::vector<double>& v, double t) {
    GridFunction f(grid, m, g.bc, t);
    f.values = v;
    return f;
  };
  auto nonlinear_term = [&](const std::vector<double>& v, std::size_t j, std::vector<double>& out) {
    out.assign(N, 0.0);
    const double t = T - tau[j];
    GridFunction f = to_gf(v, t);
    Gradient J = gradient(f);
    const auto& S = sq.at(t);
    std::vector<double> x(d), z(d * m);
    for (std::size_t p = 0; p < grid.nodes(); ++p) {
      if (g.bc == Boundary::dirichlet && grid.on_boundary(p)) continue;
      grid.point(p, x.data());
      z_at(J, S, p, d, m, z.data());
      nl(x.data(), z.data(), &out[p * m]);
    }
  };
  // v_{j+1} = G(v_j - h/2 Psi_j) - h/2 Psi_{j+1}; empty psi means the linear solve.
  auto sweep = [&](const std::vector<std::vector<double>>& psi) {
    std::vector<std::vector<double>> v(K);
    v[0] = g.values;
    for (std::size_t j = 0; j + 1 < K; ++j) {
      const double h = tau[j + 1] - tau[j];
      std::vector<double> w = v[j];
      if (!psi.empty())
        for (std::size_t q = 0; q < N; ++q) w[q] -= 0.5 * h * psi[j][q];
      ev.step(w, tau[j + 1], h);
      if (!psi.empty())
        for (std::size_t q = 0; q < N; ++q) w[q] -= 0.5 * h * psi[j + 1][q];
      v[j + 1] = std::move(w);
    }
    return v;
  };
  auto as_solution = [&](const std::vector<std::vector<double>>& v) {
    std::vector<GridFunction> u;
    u.reserve(K);
    for (std::size_t k = 0; k < K; ++k) u.push_back(to_gf(v[K - 1 - k], sol.times[k]));
    return u;
  };

  auto v = sweep({});
  std::vector<std::vector<double>> psi(K);
  double delta = 0.0;
  for (int it = 1; it <= opts.max_iter; ++it) {
    for (std::size_t j = 0; j < K; ++j) nonlinear_term(v[j], j, psi[j]);
    auto next = sweep(psi);
    std::vector<std::vector<double>> diff(K, std::vector<double>(N));
    for (std::size_t j = 0; j < K; ++j)
      for (std::size_t q = 0; q < N; ++q) diff[j][q] = next[j][q] - v[j][q];
    delta = kt_value(sq, sol.times, as_solution(diff));
    sol.picard_history.push_back(delta);
    v = std::move(next);
    sol.iterations = it;
    if (delta <= opts.picard_tol) {
      sol.u = as_solution(v);
      sol.kt = kt_value(sq, sol.times, sol.u);
      return sol;
    }
  }
  throw PicardError("Picard iteration did not reach tolerance; last delta " + std::to_string(delta), delta);
}

MollifierLadder mollifier_ladder(const OperatorSpec& spec, const Nonlinearity& nl, const GridFunction& g, double T,
                                 double dt, const std::vector<int>& n_list, const MildOptions& opts) {
  if (n_list.size() < 3) throw std::invalid_argument("mollifier ladder needs at least three indices");
  for (std::size_t i = 1; i < n_list.size(); ++i)
    if (n_list[i] <= n_list[i - 1]) throw std::invalid_argument("mollifier indices must increase");
  MollifierLadder out;
  out.n = n_list;
  for (int n : n_list) {
    out.solutions.push_back(mild_solve(spec, mollify_nonlinearity(nl, n), g, T, dt, opts));
    out.kt.push_back(out.solutions.back().kt);
  }
  const double pL = 0.5 * g.grid.L;
  for (std::size_t i = 0; i + 1 < n_list.size(); ++i) {
    double dmax = 0.0;
    const auto& a = out.solutions[i].u;
    const auto& b = out.solutions[i + 1].u;
    for (std::size_t k = 0; k < a.size(); ++k) dmax = std::max(dmax, sup_diff(a[k], b[k], pL));
    out.deltas.push_back(dmax);
  }
  const std::size_t K = out.deltas.size();
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < K; ++i) {
    double x = std::log(double(n_list[i])), y = std::log(std::max(out.deltas[i], 1e-300));
    sx += x, sy += y, sxx += x * x, sxy += x * y;
  }
  out.fitted_alpha = -(K * sxy - sx * sy) / (K * sxx - sx * sx);
  double cmin = 1e300, cmax = 0.0;
  for (std::size_t i = 0; i < K; ++i) {
    out.C.push_back(out.deltas[i] * std::pow(double(n_list[i]), out.fitted_alpha));
    cmin = std::min(cmin, out.C.back());
    cmax = std::max(cmax, out.C.back());
  }
  out.C_ratio = cmin > 0.0 ? cmax / cmin : INFINITY;
  double kmin = *std::min_element(out.kt.begin(), out.kt.end());
  double kmax = *std::max_element(out.kt.begin(), out.kt.end());
  out.kt_spread = kmax / kmin - 1.0;
  return out;
}

void MildSolution::export_dir(const std::string& dir) const {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json files = nlohmann::json::array();
  for (std::size_t k = 0; k < u.size(); ++k) {
    char name[32];
    std::snprintf(name, sizeof name, "u_%04zu.kgf", k);
    write_kgf(u[k], (fs::path(dir) / name).string());
    files.push_back(name);
  }
  nlohmann::json j;
  j["times"] = times;
  j["kt_norm"] = kt;
  j["picard_history"] = picard_history;
  j["iterations"] = iterations;
  j["files"] = files;
  std::ofstream os(fs::path(dir) / "manifest.json");
  if (!os) throw std::runtime_error("cannot write manifest in " + dir);
  os << j.dump(2) << "\n";
}

}  // namespace kolmo
