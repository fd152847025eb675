#include "kolmo/fbsde.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "kolmo/parallel.hpp"
#include "kolmo/rng.hpp"
#include "kolmo/sampling.hpp"

namespace kolmo {

namespace {

CoeffExpr expr_item(const nlohmann::json& v, const ExprContext& ctx) {
  if (v.is_number()) return CoeffExpr(v.get<double>());
  if (v.is_string()) return parse_expr(v.get<std::string>(), ctx);
  throw std::invalid_argument("expected an expression string or number");
}

std::vector<CoeffExpr> expr_list(const nlohmann::json& j, const char* key, std::size_t n, const ExprContext& ctx,
                                 bool required) {
  if (!j.contains(key)) {
    if (required) throw std::invalid_argument(std::string("missing field ") + key);
    return std::vector<CoeffExpr>(n, CoeffExpr(0.0));
  }
  const auto& a = j.at(key);
  if (!a.is_array() || a.size() != n)
    throw std::invalid_argument(std::string("field ") + key + " needs " + std::to_string(n) + " entries");
  std::vector<CoeffExpr> out;
  for (const auto& v : a) out.push_back(expr_item(v, ctx));
  return out;
}

EvalPoint point(double t, const double* x, int d, const double* u = nullptr) {
  EvalPoint p;
  p.t = t;
  p.x = x;
  p.d = d;
  p.u = u;
  return p;
}

}  // namespace

DiffusionSpec DiffusionSpec::from_json(const nlohmann::json& j) {
  static const char* known[] = {"d", "m", "b", "G", "r1", "r2", "controls", "h", "g", "t_lo", "t_hi"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    if (!ok) throw std::invalid_argument("unknown diffusion field: " + it.key());
  }
  DiffusionSpec ds;
  ds.d = j.at("d").get<int>();
  ds.m = j.at("m").get<int>();
  if (ds.d < 1 || ds.d > 2 || ds.m < 1 || ds.m > 2) throw std::invalid_argument("diffusion needs d, m in {1, 2}");
  ExprContext tx;
  tx.d = ds.d;
  ExprContext xu;
  xu.d = ds.d;
  xu.n_controls = ds.m;
  ds.b = expr_list(j, "b", ds.d, tx, true);
  ds.G = SymMatrixExpr(ds.d);
  const auto& G = j.at("G");
  if (!G.is_array() || G.size() != static_cast<std::size_t>(ds.d)) throw std::invalid_argument("G must be d x d");
  for (int a = 0; a < ds.d; ++a) {
    if (!G[a].is_array() || G[a].size() != static_cast<std::size_t>(ds.d)) throw std::invalid_argument("G must be d x d");
    for (int c = a; c < ds.d; ++c) {
      CoeffExpr e = expr_item(G[a][c], tx);
      if (c > a && expr_item(G[c][a], tx).to_string() != e.to_string())
        throw std::invalid_argument("G must be symmetric");
      ds.G.set(a, c, e);
    }
  }
  ds.r1 = expr_list(j, "r1", ds.d, tx, false);
  ds.r2 = expr_list(j, "r2", ds.d, xu, false);
  ds.h = expr_list(j, "h", ds.m, xu, false);
  ds.g = expr_list(j, "g", ds.m, tx, true);
  if (j.contains("controls")) {
    ds.controls = j.at("controls").get<std::vector<std::vector<double>>>();
    if (ds.controls.size() != static_cast<std::size_t>(ds.m)) throw std::invalid_argument("one control set per player");
    for (const auto& v : ds.controls)
      if (v.empty()) throw std::invalid_argument("control sets must be nonempty");
  } else {
    ds.controls.assign(ds.m, {0.0});
  }
  ds.t_lo = j.value("t_lo", 0.0);
  ds.t_hi = j.value("t_hi", 1.0);
  if (!(ds.t_hi > ds.t_lo)) throw std::invalid_argument("t_hi must exceed t_lo");
  return ds;
}

OperatorSpec DiffusionSpec::to_operator() const {
  OperatorSpec op = OperatorSpec::zero(d, m);
  op.name = "diffusion";
  for (int i = 0; i < d; ++i)
    for (int j = i; j < d; ++j) {
      CoeffExpr s(0.0);
      for (int l = 0; l < d; ++l) s = s + G(i, l) * G(l, j);
      op.Q.set(i, j, CoeffExpr(0.5) * s);
    }
  op.b = b;
  for (int i = 0; i < d; ++i) {
    CoeffExpr gr(0.0);
    for (int l = 0; l < d; ++l) gr = gr + G(i, l) * r1[l];
    bool zero = true;
    for (int l = 0; l < d; ++l) zero = zero && r1[l].is_zero();
    if (!zero)
      for (int k = 0; k < m; ++k) op.Bt[i].set(k, k, gr);
  }
  op.t_lo = t_lo;
  op.t_hi = t_hi;
  return op;
}

VectorField DiffusionSpec::terminal() const {
  auto self = *this;
  return [self](const double* x, double* out) { self.eval_g(x, out); };
}

void DiffusionSpec::eval_b(double t, const double* x, double* out) const {
  auto p = point(t, x, d);
  for (int i = 0; i < d; ++i) out[i] = b[i].eval(p);
}

void DiffusionSpec::eval_G(double t, const double* x, double* out) const {
  auto p = point(t, x, d);
  for (int i = 0; i < d; ++i)
    for (int j = i; j < d; ++j) out[i * d + j] = out[j * d + i] = G(i, j).eval(p);
}

void DiffusionSpec::eval_r(double t, const double* x, const double* u, double* out) const {
  auto p = point(t, x, d, u);
  for (int i = 0; i < d; ++i) out[i] = r1[i].eval(p) + r2[i].eval(p);
}

void DiffusionSpec::eval_h(const double* x, const double* u, double* out) const {
  auto p = point(0.0, x, d, u);
  for (int i = 0; i < m; ++i) out[i] = h[i].eval(p);
}

void DiffusionSpec::eval_g(const double* x, double* out) const {
  auto p = point(0.0, x, d);
  for (int i = 0; i < m; ++i) out[i] = g[i].eval(p);
}

DiffusionAudit audit_diffusion(const DiffusionSpec& ds, const OperatorSpec& op, double L, int n_samples) {
  DiffusionAudit a;
  a.lambda_G = INFINITY;
  const int d = ds.d;
  std::vector<double> G(d * d), r(d);
  Eigen::MatrixXd Q;
  // All control profiles, lexicographic.
  std::vector<std::vector<double>> profiles = {{}};
  for (const auto& set : ds.controls) {
    std::vector<std::vector<double>> next;
    for (const auto& p : profiles)
      for (double v : set) {
        next.push_back(p);
        next.back().push_back(v);
      }
    profiles = std::move(next);
  }
  for (const auto& s : box_samples(d, L, ds.t_lo, ds.t_hi, n_samples)) {
    ds.eval_G(s.t, s.x.data(), G.data());
    op.Q.eval(s.t, s.x.data(), d, Q);
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> Gm(G.data(), d, d);
    Eigen::MatrixXd half = 0.5 * Gm * Gm;
    a.q_mismatch = std::max(a.q_mismatch, (half - Q).cwiseAbs().maxCoeff());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Gm);
    a.lambda_G = std::min(a.lambda_G, es.eigenvalues().minCoeff());
    for (const auto& u : profiles) {
      ds.eval_r(s.t, s.x.data(), u.data(), r.data());
      double n2 = 0.0;
      for (double v : r) n2 += v * v;
      a.r_sup = std::max(a.r_sup, std::sqrt(n2));
    }
  }
  a.holds = a.q_mismatch <= 1e-10 && a.lambda_G > 0.0;
  return a;
}

PathBatch simulate_forward(const DiffusionSpec& ds, const std::vector<double>& x0, double t, double T, double h_step,
                           std::size_t N, std::uint64_t seed, int substeps) {
  if (static_cast<int>(x0.size()) != ds.d) throw std::invalid_argument("x0 has the wrong dimension");
  if (N < 1 || substeps < 1) throw std::invalid_argument("need N >= 1 and substeps >= 1");
  if (!(T > t) || !(h_step > 0.0)) throw std::invalid_argument("need T > t and h_step > 0");
  const double ratio = (T - t) / h_step;
  const int steps = static_cast<int>(std::lround(ratio));
  if (steps < 1 || std::fabs(ratio - steps) > 1e-9 * std::max(1.0, ratio))
    throw std::invalid_argument("h_step must divide T - t");
  PathBatch pb;
  pb.N = N;
  pb.d = ds.d;
  pb.steps = steps;
  pb.substeps = substeps;
  pb.t = t;
  pb.T = T;
  pb.h_step = h_step;
  pb.seed = seed;
  for (int k = 0; k <= steps; ++k) pb.times.push_back(k == steps ? T : t + k * h_step);
  const int d = ds.d;
  pb.X.resize(N * (steps + 1) * d);
  pb.dW.assign(N * steps * d, 0.0);
  pb.rho.assign(N, 1.0);
  std::vector<char> bad(N, 0);
  const double sq = std::sqrt(h_step / substeps);
  parallel_for(N, [&](std::size_t p) {
    std::vector<double> x(x0), bv(d), G(d * d), z(d);
    std::copy(x.begin(), x.end(), &pb.X[p * (steps + 1) * d]);
    for (int k = 0; k < steps; ++k) {
      double* dw = &pb.dW[(p * steps + k) * d];
      for (int s = 0; s < substeps; ++s) {
        gaussians(seed, static_cast<std::uint32_t>(p), static_cast<std::uint32_t>(k * substeps + s), d, z.data());
        for (int a = 0; a < d; ++a) dw[a] += sq * z[a];
      }
      ds.eval_b(pb.times[k], x.data(), bv.data());
      ds.eval_G(pb.times[k], x.data(), G.data());
      for (int a = 0; a < d; ++a) {
        double inc = bv[a] * h_step;
        for (int c = 0; c < d; ++c) inc += G[a * d + c] * dw[c];
        bv[a] = inc;
      }
      for (int a = 0; a < d; ++a) {
        x[a] += bv[a];
        if (!(std::fabs(x[a]) <= 1e9)) bad[p] = 1;
      }
      std::copy(x.begin(), x.end(), &pb.X[(p * (steps + 1) + k + 1) * d]);
    }
  });
  std::vector<std::size_t> idx;
  for (std::size_t p = 0; p < N; ++p)
    if (bad[p]) idx.push_back(p);
  if (!idx.empty())
    throw PathExplosionError(std::to_string(idx.size()) + " paths exceeded |X| = 1e9, first index " +
                                 std::to_string(idx.front()),
                             idx);
  return pb;
}

namespace {

struct KpbHeader {
  char magic[4];
  std::int32_t d, steps, substeps, pad;
  std::uint64_t N, seed;
  double t, T, h;
};
static_assert(sizeof(KpbHeader) == 64);

}  // namespace

void PathBatch::write(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path);
  KpbHeader hd{};
  std::memcpy(hd.magic, "KPB1", 4);
  hd.d = d, hd.steps = steps, hd.substeps = substeps;
  hd.N = N, hd.seed = seed;
  hd.t = t, hd.T = T, hd.h = h_step;
  os.write(reinterpret_cast<const char*>(&hd), sizeof hd);
  os.write(reinterpret_cast<const char*>(X.data()), static_cast<std::streamsize>(X.size() * sizeof(double)));
  os.write(reinterpret_cast<const char*>(dW.data()), static_cast<std::streamsize>(dW.size() * sizeof(double)));
  os.write(reinterpret_cast<const char*>(rho.data()), static_cast<std::streamsize>(rho.size() * sizeof(double)));
  if (!os) throw std::runtime_error("write failed: " + path);
}

PathBatch PathBatch::read(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path);
  KpbHeader hd{};
  is.read(reinterpret_cast<char*>(&hd), sizeof hd);
  if (!is || std::memcmp(hd.magic, "KPB1", 4) != 0) throw FormatError("not a KPB1 file: " + path);
  if (hd.d < 1 || hd.steps < 1 || hd.N < 1) throw FormatError("corrupt KPB1 header: " + path);
  PathBatch pb;
  pb.N = hd.N, pb.d = hd.d, pb.steps = hd.steps, pb.substeps = hd.substeps;
  pb.t = hd.t, pb.T = hd.T, pb.h_step = hd.h, pb.seed = hd.seed;
  for (int k = 0; k <= pb.steps; ++k) pb.times.push_back(k == pb.steps ? pb.T : pb.t + k * pb.h_step);
  pb.X.resize(pb.N * (pb.steps + 1) * pb.d);
  pb.dW.resize(pb.N * pb.steps * pb.d);
  pb.rho.resize(pb.N);
  is.read(reinterpret_cast<char*>(pb.X.data()), static_cast<std::streamsize>(pb.X.size() * sizeof(double)));
  is.read(reinterpret_cast<char*>(pb.dW.data()), static_cast<std::streamsize>(pb.dW.size() * sizeof(double)));
  is.read(reinterpret_cast<char*>(pb.rho.data()), static_cast<std::streamsize>(pb.rho.size() * sizeof(double)));
  if (!is) throw FormatError("truncated KPB1 file: " + path);
  return pb;
}

YZProcess identify_yz(const MildSolution& sol, const DiffusionSpec& ds, const PathBatch& batch) {
  if (sol.u.empty()) throw std::invalid_argument("empty mild solution");
  const Grid& grid = sol.u[0].grid;
  const int d = ds.d, m = ds.m;
  if (grid.d != d || sol.u[0].m != m) throw std::invalid_argument("mild solution does not match the diffusion");
  const double T = sol.times.back();
  if (batch.t < sol.times.front() - 1e-12 || std::fabs(batch.T - T) > 1e-12)
    throw std::invalid_argument("path times must lie in the mild solution's interval and end at its T");
  // Gradients as GridFunctions with m * d components (same layout as Gradient).
  std::vector<GridFunction> grads;
  for (const auto& u : sol.u) {
    GridFunction gf(grid, m * d, u.bc, u.t);
    gf.values = gradient(u).values;
    grads.push_back(std::move(gf));
  }
  YZProcess yz;
  yz.N = batch.N, yz.steps = batch.steps, yz.d = d, yz.m = m;
  const std::size_t K = batch.steps + 1;
  yz.Y.assign(batch.N * K * m, 0.0);
  yz.Z.assign(batch.N * K * d * m, 0.0);
  yz.valid.assign(batch.N, 1);
  // Time bracket per path step.
  std::vector<std::size_t> lo(K);
  std::vector<double> w(K);
  for (std::size_t k = 0; k < K; ++k) {
    double tau = batch.times[k];
    auto it = std::upper_bound(sol.times.begin(), sol.times.end(), tau);
    std::size_t j = it == sol.times.begin() ? 0 : static_cast<std::size_t>(it - sol.times.begin()) - 1;
    if (j + 1 >= sol.times.size()) j = sol.times.size() - 2;
    lo[k] = j;
    w[k] = std::clamp((tau - sol.times[j]) / (sol.times[j + 1] - sol.times[j]), 0.0, 1.0);
  }
  parallel_for(batch.N, [&](std::size_t p) {
    for (std::size_t k = 0; k < K; ++k) {
      const double* x = batch.x(p, static_cast<int>(k));
      for (int a = 0; a < d; ++a)
        if (std::fabs(x[a]) > grid.L) yz.valid[p] = 0;
    }
    if (!yz.valid[p]) return;
    std::vector<double> y0(m), y1(m), g0(m * d), g1(m * d), G(d * d);
    for (std::size_t k = 0; k < K; ++k) {
      const double* x = batch.x(p, static_cast<int>(k));
      const std::size_t j = lo[k];
      double* y = &yz.Y[(p * K + k) * m];
      if (k + 1 == K) {
        ds.eval_g(x, y);
      } else {
        sol.u[j].interpolate(x, y0.data());
        sol.u[j + 1].interpolate(x, y1.data());
        for (int c = 0; c < m; ++c) y[c] = (1 - w[k]) * y0[c] + w[k] * y1[c];
      }
      grads[j].interpolate(x, g0.data());
      grads[j + 1].interpolate(x, g1.data());
      for (int c = 0; c < m * d; ++c) g0[c] = (1 - w[k]) * g0[c] + w[k] * g1[c];
      ds.eval_G(batch.times[k], x, G.data());
      double* z = &yz.Z[(p * K + k) * d * m];
      for (int i = 0; i < d; ++i)
        for (int c = 0; c < m; ++c) {
          double s = 0.0;
          for (int a = 0; a < d; ++a) s += G[i * d + a] * g0[c * d + a];
          z[i * m + c] = s;
        }
    }
  });
  for (char v : yz.valid) yz.escaped += v ? 0 : 1;
  if (yz.escaped * 20 > batch.N)
    throw EscapeError(std::to_string(yz.escaped) + " of " + std::to_string(batch.N) +
                      " paths left the grid box; enlarge L");
  return yz;
}

BsdeResidual bsde_residual(const YZProcess& yz, const DiffusionSpec& ds, const Nonlinearity& nl,
                           const PathBatch& batch) {
  const int d = ds.d, m = ds.m, K = batch.steps;
  const OperatorSpec op = ds.to_operator();
  const double h = batch.h_step;
  std::vector<double> R(batch.N * (K + 1) * m, 0.0);  // tail residual per path, step, component
  parallel_for(batch.N, [&](std::size_t p) {
    if (!yz.valid[p]) return;
    CoeffValues cv;
    std::vector<double> G(d * d), zs(d * m), psi(m), gT(m), Hj(m);
    std::vector<double> tail(m, 0.0);  // sum_{j>=k} (Z^T dW - H h)
    ds.eval_g(batch.x(p, K), gT.data());
    for (int c = 0; c < m; ++c) R[(p * (K + 1) + K) * m + c] = yz.y(p, K)[c] - gT[c];
    for (int k = K - 1; k >= 0; --k) {
      const double* x = batch.x(p, k);
      const double* z = yz.z(p, k);
      const double* dw = batch.dw(p, k);
      op.eval(batch.times[k], x, cv);
      ds.eval_G(batch.times[k], x, G.data());
      Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> Gm(G.data(), d, d);
      Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> Zm(z, d, m);
      Eigen::MatrixXd Du = Gm.partialPivLu().solve(Eigen::MatrixXd(Zm));  // D_i u_k
      for (int c = 0; c < d * m; ++c) zs[c] = z[c] / std::sqrt(2.0);
      nl(x, zs.data(), psi.data());
      for (int j = 0; j < m; ++j) {
        double Hv = -psi[j];
        for (int i = 0; i < d; ++i)
          for (int c = 0; c < m; ++c) Hv += cv.Bt[i](j, c) * Du(i, c);
        double zdw = 0.0;
        for (int i = 0; i < d; ++i) zdw += z[i * m + j] * dw[i];
        tail[j] += zdw - Hv * h;
        R[(p * (K + 1) + k) * m + j] = yz.y(p, k)[j] + tail[j] - gT[j];
      }
    }
  });
  BsdeResidual out;
  out.profile.assign(K + 1, 0.0);
  for (std::size_t p = 0; p < batch.N; ++p) {
    if (!yz.valid[p]) continue;
    ++out.used;
    for (int k = 0; k <= K; ++k) {
      double s = 0.0;
      for (int c = 0; c < m; ++c) s += R[(p * (K + 1) + k) * m + c] * R[(p * (K + 1) + k) * m + c];
      out.profile[k] += s;
    }
  }
  if (out.used == 0) throw EscapeError("no valid paths");
  for (double& v : out.profile) v = std::sqrt(v / out.used);
  out.l2 = out.profile[0];
  return out;
}

Strategy constant_strategy(std::vector<double> u) {
  return [u](std::size_t, int, double, const double*, const double*, double* out) {
    std::copy(u.begin(), u.end(), out);
  };
}

Strategy deviation_strategy(Strategy base, int player, double value) {
  return [base, player, value](std::size_t p, int k, double tau, const double* x, const double* Z, double* out) {
    base(p, k, tau, x, Z, out);
    out[player] = value;
  };
}

GirsanovReport girsanov_weights(const DiffusionSpec& ds, PathBatch& batch, const Strategy& strategy,
                                const YZProcess* yz, double r_bound) {
  const int d = ds.d, m = ds.m, K = batch.steps;
  batch.u.assign(batch.N * K * m, 0.0);
  std::vector<double> rmax(batch.N, 0.0);
  parallel_for(batch.N, [&](std::size_t p) {
    std::vector<double> r(d);
    double logw = 0.0;
    for (int k = 0; k < K; ++k) {
      const double* x = batch.x(p, k);
      double* u = &batch.u[(p * K + k) * m];
      strategy(p, k, batch.times[k], x, yz && yz->valid[p] ? yz->z(p, k) : nullptr, u);
      ds.eval_r(batch.times[k], x, u, r.data());
      double rr = 0.0, rdw = 0.0;
      const double* dw = batch.dw(p, k);
      for (int a = 0; a < d; ++a) rr += r[a] * r[a], rdw += r[a] * dw[a];
      rmax[p] = std::max(rmax[p], std::sqrt(rr));
      logw += rdw - 0.5 * rr * batch.h_step;
    }
    batch.rho[p] = std::exp(logw);
  });
  GirsanovReport rep;
  for (double v : rmax) rep.r_max = std::max(rep.r_max, v);
  rep.bound_exceeded = rep.r_max > r_bound * (1.0 + 1e-12);
  return rep;
}

std::pair<double, double> mean_stderr(const std::vector<double>& v, const std::vector<char>* valid) {
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < v.size(); ++i)
    if (!valid || (*valid)[i]) s += v[i], ++n;
  if (n == 0) return {NAN, NAN};
  const double mean = s / n;
  double ss = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i)
    if (!valid || (*valid)[i]) ss += (v[i] - mean) * (v[i] - mean);
  return {mean, n > 1 ? std::sqrt(ss / (n - 1) / n) : 0.0};
}

CostEstimate cost(const DiffusionSpec& ds, const PathBatch& batch, int i, const std::vector<char>* valid) {
  if (i < 0 || i >= ds.m) throw std::invalid_argument("player index out of range");
  if (batch.u.size() != batch.N * batch.steps * ds.m)
    throw std::invalid_argument("apply girsanov_weights before estimating costs");
  const int m = ds.m, K = batch.steps;
  CostEstimate ce;
  ce.per_path.assign(batch.N, 0.0);
  parallel_for(batch.N, [&](std::size_t p) {
    if (valid && !(*valid)[p]) return;
    std::vector<double> hv(m), gv(m);
    double run = 0.0;
    for (int k = 0; k < K; ++k) {
      ds.eval_h(batch.x(p, k), &batch.u[(p * K + k) * m], hv.data());
      run += hv[i] * batch.h_step;
    }
    ds.eval_g(batch.x(p, K), gv.data());
    ce.per_path[p] = batch.rho[p] * (run + gv[i]);
  });
  auto [mean, se] = mean_stderr(ce.per_path, valid);
  ce.value = mean;
  ce.stderr_ = se;
  double s1 = 0.0, s2 = 0.0;
  std::size_t n = 0;
  for (std::size_t p = 0; p < batch.N; ++p)
    if (!valid || (*valid)[p]) s1 += batch.rho[p], s2 += batch.rho[p] * batch.rho[p], ++n;
  ce.ess = s2 > 0.0 ? s1 * s1 / s2 : 0.0;
  ce.degenerate = ce.ess * 100.0 < static_cast<double>(n);
  return ce;
}

}  // namespace kolmo
