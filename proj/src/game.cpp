#include "kolmo/game.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "kolmo/sampling.hpp"

namespace kolmo {

double game_hamiltonian(const DiffusionSpec& ds, const double* x, const double* Z, const double* u, int i) {
  EvalPoint p;
  p.x = x;
  p.d = ds.d;
  p.u = u;
  double s = 0.0;
  for (int a = 0; a < ds.d; ++a) s += Z[a * ds.m + i] * ds.r2[a].eval(p);
  return s + ds.h[i].eval(p);
}

Selection minimax_select(const DiffusionSpec& ds, const double* x, const double* Z) {
  const int m = ds.m;
  Selection sel;
  sel.index.assign(m, 0);
  sel.u.resize(m);
  for (int i = 0; i < m; ++i) sel.u[i] = ds.controls[i][0];
  std::set<std::vector<int>> seen;
  for (;;) {
    if (!seen.insert(sel.index).second) {
      std::string prof;
      for (int i : sel.index) prof += " " + std::to_string(i);
      throw MinimaxCycleError("best responses cycle through profile" + prof);
    }
    ++sel.sweeps;
    bool changed = false;
    for (int i = 0; i < m; ++i) {
      std::vector<double> u = sel.u;
      double best = game_hamiltonian(ds, x, Z, u.data(), i);
      int arg = sel.index[i];
      for (std::size_t v = 0; v < ds.controls[i].size(); ++v) {
        u[i] = ds.controls[i][v];
        double val = game_hamiltonian(ds, x, Z, u.data(), i);
        if (val < best - 1e-12 * (1.0 + std::fabs(best))) best = val, arg = static_cast<int>(v);
      }
      if (arg != sel.index[i]) {
        sel.index[i] = arg;
        sel.u[i] = ds.controls[i][arg];
        changed = true;
      }
    }
    if (!changed) return sel;
  }
}

std::vector<Selection> minimax_table(const DiffusionSpec& ds, const std::vector<MinimaxSample>& samples) {
  std::vector<Selection> out;
  for (const auto& s : samples) {
    if (static_cast<int>(s.x.size()) != ds.d || static_cast<int>(s.Z.size()) != ds.d * ds.m)
      throw std::invalid_argument("minimax sample has the wrong shape");
    out.push_back(minimax_select(ds, s.x.data(), s.Z.data()));
  }
  return out;
}

Nonlinearity game_nonlinearity(const DiffusionSpec& ds, double L) {
  const int d = ds.d, m = ds.m;
  double h_sup = 0.0, r_sup = 0.0;
  std::vector<std::vector<double>> profiles = {{}};
  for (const auto& set : ds.controls) {
    std::vector<std::vector<double>> next;
    for (const auto& p : profiles)
      for (double v : set) next.push_back(p), next.back().push_back(v);
    profiles = std::move(next);
  }
  for (const auto& s : box_samples(d, L, 0.0, 0.0, 200)) {
    EvalPoint p;
    p.x = s.x.data();
    p.d = d;
    for (const auto& u : profiles) {
      p.u = u.data();
      double hn = 0.0, rn = 0.0;
      for (int i = 0; i < m; ++i) hn += std::pow(ds.h[i].eval(p), 2);
      for (int a = 0; a < d; ++a) rn += std::pow(ds.r2[a].eval(p), 2);
      h_sup = std::max(h_sup, std::sqrt(hn));
      r_sup = std::max(r_sup, std::sqrt(rn));
    }
  }
  Nonlinearity nl;
  nl.d = d;
  nl.m = m;
  nl.growth_c = std::max(h_sup, std::sqrt(2.0) * r_sup);
  nl.holder_alpha = 0.5;
  nl.psi = [ds](const double* x, const double* z, double* out) {
    std::vector<double> Z(ds.d * ds.m);
    for (std::size_t c = 0; c < Z.size(); ++c) Z[c] = std::sqrt(2.0) * z[c];
    Selection s = minimax_select(ds, x, Z.data());
    for (int i = 0; i < ds.m; ++i) out[i] = -game_hamiltonian(ds, x, Z.data(), s.u.data(), i);
  };
  return nl;
}

Strategy feedback_strategy(const DiffusionSpec& ds) {
  return [ds](std::size_t, int, double, const double* x, const double* Z, double* u) {
    if (!Z) throw std::invalid_argument("feedback strategy needs Z along the path");
    Selection s = minimax_select(ds, x, Z);
    for (int i = 0; i < ds.m; ++i) u[i] = s.u[i];
  };
}

nlohmann::json NashReport::to_json() const {
  nlohmann::json j;
  j["x0"] = x0;
  j["t"] = t;
  j["T"] = T;
  j["h_step"] = h_step;
  j["N"] = N;
  j["seed"] = seed;
  j["escaped"] = escaped;
  j["J"] = J;
  j["J_stderr"] = J_stderr;
  j["Y0"] = Y0;
  j["rho_mean"] = rho_mean;
  j["rho_stderr"] = rho_stderr;
  j["degenerate_weights"] = degenerate_weights;
  j["girsanov_form"] = "rho = exp(sum <r, dW> - 1/2 sum |r|^2 h)";
  j["girsanov_literal_form"] = "rho = exp(sum <r, 1> h - 1/2 sum |r|^2 h) (not used: not a density)";
  nlohmann::json rs = nlohmann::json::array();
  for (const auto& r : rows)
    rs.push_back({{"player", r.player}, {"deviation", r.deviation}, {"dJ", r.dJ}, {"stderr", r.stderr_},
                  {"pass", r.pass}});
  j["deviations"] = rs;
  j["verdict"] = pass ? "PASS" : "FAIL";
  return j;
}

void NashReport::write_csv(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os.precision(17);
  os << "player,deviation,dJ,stderr,pass\n";
  for (const auto& r : rows)
    os << r.player << ',' << r.deviation << ',' << r.dJ << ',' << r.stderr_ << ',' << (r.pass ? 1 : 0) << '\n';
}

NashReport nash_check(const DiffusionSpec& ds, const MildSolution& sol, const std::vector<double>& x0, double t,
                      const std::vector<std::vector<double>>& deviations, std::size_t N, std::uint64_t seed,
                      double h_step) {
  if (deviations.size() != static_cast<std::size_t>(ds.m)) throw std::invalid_argument("one deviation list per player");
  const double T = sol.times.back();
  NashReport rep;
  rep.x0 = x0, rep.t = t, rep.T = T, rep.h_step = h_step, rep.N = N, rep.seed = seed;
  PathBatch batch = simulate_forward(ds, x0, t, T, h_step, N, seed);
  YZProcess yz = identify_yz(sol, ds, batch);
  rep.escaped = yz.escaped;

  // u(t, x0) by linear interpolation in time.
  rep.Y0.assign(ds.m, 0.0);
  {
    auto it = std::upper_bound(sol.times.begin(), sol.times.end(), t);
    std::size_t j = it == sol.times.begin() ? 0 : static_cast<std::size_t>(it - sol.times.begin()) - 1;
    if (j + 1 >= sol.times.size()) j = sol.times.size() - 2;
    double w = std::clamp((t - sol.times[j]) / (sol.times[j + 1] - sol.times[j]), 0.0, 1.0);
    std::vector<double> a(ds.m), b(ds.m);
    sol.u[j].interpolate(x0.data(), a.data());
    sol.u[j + 1].interpolate(x0.data(), b.data());
    for (int i = 0; i < ds.m; ++i) rep.Y0[i] = (1 - w) * a[i] + w * b[i];
  }

  Strategy eq = feedback_strategy(ds);
  girsanov_weights(ds, batch, eq, &yz);
  auto [rm, rs] = mean_stderr(batch.rho, &yz.valid);
  rep.rho_mean = rm, rep.rho_stderr = rs;
  std::vector<CostEstimate> base;
  for (int i = 0; i < ds.m; ++i) {
    base.push_back(cost(ds, batch, i, &yz.valid));
    rep.J.push_back(base.back().value);
    rep.J_stderr.push_back(base.back().stderr_);
    rep.degenerate_weights = rep.degenerate_weights || base.back().degenerate;
  }
  rep.pass = true;
  for (int i = 0; i < ds.m; ++i) {
    for (double v : deviations[i]) {
      girsanov_weights(ds, batch, deviation_strategy(eq, i, v), &yz);
      CostEstimate c = cost(ds, batch, i, &yz.valid);
      rep.degenerate_weights = rep.degenerate_weights || c.degenerate;
      std::vector<double> diff(N);
      for (std::size_t p = 0; p < N; ++p) diff[p] = c.per_path[p] - base[i].per_path[p];
      auto [dj, se] = mean_stderr(diff, &yz.valid);
      NashRow row{i, v, dj, se, dj >= -3.0 * se};
      rep.pass = rep.pass && row.pass;
      rep.rows.push_back(row);
    }
  }
  return rep;
}

}  // namespace kolmo
