#include "kolmo/runner.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include "kolmo/estimates.hpp"
#include "kolmo/fbsde.hpp"
#include "kolmo/game.hpp"
#include "kolmo/hypotheses.hpp"
#include "kolmo/kernel.hpp"
#include "kolmo/presets.hpp"
#include "kolmo/semilinear.hpp"

#ifndef KOLMO_VERSION
#define KOLMO_VERSION "dev"
#endif

namespace kolmo {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const std::vector<std::pair<std::string, std::string>>& check_table() {
  static const std::vector<std::pair<std::string, std::string>> t = {
      {"check_family_params", "audit"},     {"check_ellipticity", "audit"},
      {"check_hyp22", "audit"},             {"check_hyp23", "audit"},
      {"lyapunov_probe", "audit"},          {"check_hyp51", "audit"},
      {"compose_check", "pde"},             {"compactness_probe", "kernel"},
      {"max_principle_check", "estimates"}, {"pointwise_check", "estimates"},
      {"weighted_gradient_check", "estimates"}, {"representation_residual", "estimates"},
      {"mild_solve", "semilinear"},         {"mollifier_ladder", "semilinear"},
      {"identify_yz", "fbsde"},             {"bsde_residual", "fbsde"},
      {"girsanov_weights", "fbsde"},        {"nash_check", "fbsde"},
  };
  return t;
}

void allow_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed) ok = ok || it.key() == k;
    if (!ok) throw ConfigError("unknown key '" + it.key() + "' in " + where);
  }
}

template <class T>
T get_or(const json& j, const char* key, T fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + " has the wrong type");
  }
}

double positive(double v, const std::string& what) {
  if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(what + " must be positive");
  return v;
}

CoeffExpr expr_of(const json& v, const ExprContext& ctx, const std::string& where) {
  try {
    if (v.is_number()) return CoeffExpr(v.get<double>());
    if (v.is_string()) return parse_expr(v.get<std::string>(), ctx);
  } catch (const std::exception& e) {
    throw ConfigError(where + ": " + e.what());
  }
  throw ConfigError(where + " must be a number or an expression string");
}

std::vector<CoeffExpr> expr_vector(const json& v, std::size_t n, const ExprContext& ctx, const std::string& where) {
  if (!v.is_array() || v.size() != n) throw ConfigError(where + " needs " + std::to_string(n) + " entries");
  std::vector<CoeffExpr> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(expr_of(v[i], ctx, where));
  return out;
}

SymMatrixExpr sym_matrix(const json& v, int n, const ExprContext& ctx, const std::string& where) {
  if (!v.is_array() || static_cast<int>(v.size()) != n) throw ConfigError(where + " must be a square matrix");
  SymMatrixExpr M(n);
  for (int i = 0; i < n; ++i) {
    if (!v[i].is_array() || static_cast<int>(v[i].size()) != n) throw ConfigError(where + " must be a square matrix");
    for (int j = i; j < n; ++j) {
      CoeffExpr e = expr_of(v[i][j], ctx, where);
      if (j > i && !structurally_equal(e, expr_of(v[j][i], ctx, where))) throw ConfigError(where + " must be symmetric");
      M.set(i, j, e);
    }
  }
  return M;
}

OperatorSpec explicit_operator(const json& j) {
  allow_keys(j, "operator.explicit", {"d", "m", "Q", "b", "Bt", "C", "t_lo", "t_hi"});
  const int d = get_or(j, "d", 0, "operator.explicit"), m = get_or(j, "m", 0, "operator.explicit");
  if (d < 1 || d > 3 || m < 1 || m > 3) throw ConfigError("operator.explicit needs d and m in 1..3");
  if (!j.contains("Q")) throw ConfigError("operator.explicit.Q is required");
  ExprContext ctx;
  ctx.d = d;
  OperatorSpec op = OperatorSpec::zero(d, m);
  op.name = "explicit";
  op.Q = sym_matrix(j["Q"], d, ctx, "operator.explicit.Q");
  if (j.contains("b")) op.b = expr_vector(j["b"], d, ctx, "operator.explicit.b");
  if (j.contains("Bt")) {
    const json& B = j["Bt"];
    if (!B.is_array() || static_cast<int>(B.size()) != d) throw ConfigError("operator.explicit.Bt needs d matrices");
    for (int i = 0; i < d; ++i) {
      if (!B[i].is_array() || static_cast<int>(B[i].size()) != m) throw ConfigError("operator.explicit.Bt must be m x m");
      for (int r = 0; r < m; ++r) {
        if (!B[i][r].is_array() || static_cast<int>(B[i][r].size()) != m)
          throw ConfigError("operator.explicit.Bt must be m x m");
        for (int c = 0; c < m; ++c) op.Bt[i].set(r, c, expr_of(B[i][r][c], ctx, "operator.explicit.Bt"));
      }
    }
  }
  if (j.contains("C")) op.C = sym_matrix(j["C"], m, ctx, "operator.explicit.C");
  op.t_lo = get_or(j, "t_lo", 0.0, "operator.explicit");
  op.t_hi = get_or(j, "t_hi", 1.0, "operator.explicit");
  if (!(op.t_hi > op.t_lo)) throw ConfigError("operator.explicit needs t_lo < t_hi");
  return op;
}

// Everything the run needs, built from a validated config.
struct Plan {
  OperatorSpec op;
  std::optional<Family> fam;
  std::string family;
  json family_params = json::object();
  std::optional<WeightSpec> weight;

  double L = 6.0, audit_L = 4.0;
  int samples = 1000;
  std::vector<Resolution> ladder = {{61, 4e-3}, {121, 2e-3}};
  Boundary bc = Boundary::dirichlet;
  double s = 0.0, t = 1.0;
  std::vector<CoeffExpr> data;

  double epsilon = 1.0;
  CoeffExpr kappa = CoeffExpr(1.0);
  int n_eta = 64;
  double sigma = 0.5;
  CoeffExpr phi;
  int n_t = 4;
  std::vector<double> t_list;
  int kbar = 0;
  std::vector<double> rep_dts = {0.02, 0.01, 0.005};
  int rep_n = 121;
  double compose_r = 0.5, compose_dt = 0.01, compose_tol = 1e-8;
  int compose_n = 121;

  std::vector<std::vector<double>> x_list;
  std::vector<double> R_list = {1.0, 2.0, 3.0};
  int cells = 32;
  double kernel_dt = 0.01, kernel_threshold = 0.05;

  std::optional<DiffusionSpec> ds;
  std::string nl_kind = "zero";
  std::vector<std::string> nl_exprs;
  double nl_growth = 0.0, nl_alpha = 1.0;

  double sem_T = 1.0, sem_dt = 0.01, sem_L = 6.0;
  int sem_n = 121;
  MildOptions mild;
  std::vector<int> moll_n = {8, 16, 32, 64};

  std::vector<double> x0;
  double mc_t = 0.0, h_step = 0.0, min_reduction = 0.35;
  std::size_t N = 10000;
  int levels = 3;
  std::vector<std::vector<double>> deviations;

  std::vector<std::string> checks;
  bool allow_inconclusive = false;
  std::uint64_t seed = 1;
};

bool wants(const std::vector<std::string>& c, const std::string& name) {
  return std::find(c.begin(), c.end(), name) != c.end();
}

Plan make_plan(const json& j) {
  allow_keys(j, "config",
             {"operator", "weight", "box", "grid", "time", "data", "checks", "hyp22", "hyp23", "lyapunov", "pointwise",
              "gradient", "representation", "compose", "kernel", "diffusion", "nonlinearity", "semilinear", "mc", "nash",
              "seed", "output", "allow_inconclusive"});
  Plan p;
  if (!j.contains("operator")) throw ConfigError("config.operator is required");
  if (!j.contains("checks") || !j["checks"].is_array()) throw ConfigError("config.checks must be a list");

  // Requested checks plus their prerequisites, in stage order.
  std::vector<std::string> req;
  for (const auto& c : j["checks"]) {
    if (!c.is_string()) throw ConfigError("config.checks entries must be strings");
    std::string name = c.get<std::string>();
    bool known = false;
    for (const auto& [n, st] : check_table()) known = known || n == name;
    if (!known) throw ConfigError("'" + name + "' is not a runnable check");
    req.push_back(name);
  }
  auto need = [&](const char* a, const char* b) {
    if (wants(req, a) && !wants(req, b)) req.push_back(b);
  };
  need("max_principle_check", "check_hyp22");
  need("pointwise_check", "check_hyp23");
  for (const char* f : {"identify_yz", "bsde_residual", "girsanov_weights", "nash_check"}) need(f, "mild_solve");
  for (const auto& [n, st] : check_table())
    if (wants(req, n)) p.checks.push_back(n);

  const json& oj = j["operator"];
  allow_keys(oj, "operator", {"family", "params", "explicit"});
  if (oj.contains("family") == oj.contains("explicit"))
    throw ConfigError("operator needs exactly one of 'family' and 'explicit'");
  if (oj.contains("family")) {
    p.family = get_or<std::string>(oj, "family", "", "operator");
    p.family_params = oj.value("params", json::object());
    try {
      p.fam = example_family(p.family, p.family_params);
    } catch (const std::exception& e) {
      throw ConfigError(std::string("operator: ") + e.what());
    }
    p.op = p.fam->op;
    p.sigma = p.fam->sigma;
    p.phi = p.fam->lyapunov;
  } else {
    if (oj.contains("params")) throw ConfigError("operator.params only applies to a family");
    p.op = explicit_operator(oj["explicit"]);
    p.phi = CoeffExpr(1.0) + normsq_expr();
  }
  if (wants(p.checks, "check_family_params") && p.family.empty())
    throw ConfigError("check_family_params needs operator.family");
  const int d = p.op.d, m = p.op.m;
  ExprContext tx;
  tx.d = d;

  if (j.contains("weight")) {
    const json& w = j["weight"];
    allow_keys(w, "weight", {"preset", "identity", "scalar", "matrix"});
    if (w.size() != 1) throw ConfigError("weight needs exactly one of preset, identity, scalar, matrix");
    if (w.contains("preset")) {
      if (!p.fam) throw ConfigError("weight.preset needs operator.family");
      p.weight = p.fam->weight;
    } else if (w.contains("identity")) {
      p.weight = WeightSpec::unit(d);
    } else if (w.contains("scalar")) {
      p.weight = WeightSpec::scalar(d, expr_of(w["scalar"], tx, "weight.scalar"));
    } else {
      WeightSpec ws;
      ws.M = sym_matrix(w["matrix"], d, tx, "weight.matrix");
      ws.identity = false;
      p.weight = ws;
    }
  }
  if ((wants(p.checks, "weighted_gradient_check") || wants(p.checks, "check_hyp51")) && !p.weight)
    throw ConfigError("weighted_gradient_check and check_hyp51 need a weight section");

  if (j.contains("box")) {
    const json& b = j["box"];
    allow_keys(b, "box", {"L", "audit_L", "samples"});
    p.L = positive(get_or(b, "L", p.L, "box"), "box.L");
    p.audit_L = positive(get_or(b, "audit_L", p.audit_L, "box"), "box.audit_L");
    p.samples = get_or(b, "samples", p.samples, "box");
    if (p.samples < 10) throw ConfigError("box.samples must be at least 10");
  }
  if (j.contains("grid")) {
    const json& g = j["grid"];
    allow_keys(g, "grid", {"ladder", "bc"});
    if (g.contains("ladder")) {
      p.ladder.clear();
      for (const auto& r : g["ladder"]) {
        if (!r.is_array() || r.size() != 2) throw ConfigError("grid.ladder entries are [n, dt]");
        int n = r[0].get<int>();
        if (n < 5 || n > 401 || n % 2 == 0) throw ConfigError("grid.ladder n must be odd in 5..401");
        p.ladder.push_back({n, positive(r[1].get<double>(), "grid.ladder dt")});
      }
      if (p.ladder.empty()) throw ConfigError("grid.ladder is empty");
    }
    if (g.contains("bc")) {
      try {
        p.bc = boundary_from_string(g["bc"].get<std::string>());
      } catch (const std::exception& e) {
        throw ConfigError(std::string("grid.bc: ") + e.what());
      }
    }
  }
  if (j.contains("time")) {
    const json& t = j["time"];
    allow_keys(t, "time", {"s", "t"});
    p.s = get_or(t, "s", p.op.t_lo, "time");
    p.t = get_or(t, "t", p.op.t_hi, "time");
  } else {
    p.s = p.op.t_lo, p.t = p.op.t_hi;
  }
  if (!(p.s < p.t) || p.s < p.op.t_lo || p.t > p.op.t_hi) throw ConfigError("time needs t_lo <= s < t <= t_hi");
  if (j.contains("data")) p.data = expr_vector(j["data"], m, tx, "data");
  for (const char* c : {"compose_check", "max_principle_check", "pointwise_check", "weighted_gradient_check",
                        "representation_residual"})
    if (wants(p.checks, c) && p.data.empty()) throw ConfigError(std::string(c) + " needs a data section");

  if (j.contains("hyp22")) {
    const json& h = j["hyp22"];
    allow_keys(h, "hyp22", {"epsilon", "kappa", "n_eta"});
    p.epsilon = positive(get_or(h, "epsilon", p.epsilon, "hyp22"), "hyp22.epsilon");
    if (h.contains("kappa")) p.kappa = expr_of(h["kappa"], tx, "hyp22.kappa");
    p.n_eta = get_or(h, "n_eta", p.n_eta, "hyp22");
  }
  if (j.contains("hyp23")) {
    allow_keys(j["hyp23"], "hyp23", {"sigma"});
    p.sigma = get_or(j["hyp23"], "sigma", p.sigma, "hyp23");
  }
  if (j.contains("lyapunov")) {
    allow_keys(j["lyapunov"], "lyapunov", {"phi"});
    if (j["lyapunov"].contains("phi")) p.phi = expr_of(j["lyapunov"]["phi"], tx, "lyapunov.phi");
  }
  if (j.contains("pointwise")) {
    allow_keys(j["pointwise"], "pointwise", {"n_t"});
    p.n_t = get_or(j["pointwise"], "n_t", p.n_t, "pointwise");
  }
  for (double f : {0.25, 0.5, 1.0}) p.t_list.push_back(p.s + f * (p.t - p.s));
  if (j.contains("gradient")) {
    allow_keys(j["gradient"], "gradient", {"t_list"});
    p.t_list = get_or(j["gradient"], "t_list", p.t_list, "gradient");
  }
  if (j.contains("representation")) {
    const json& r = j["representation"];
    allow_keys(r, "representation", {"kbar", "dt_ladder", "n"});
    p.kbar = get_or(r, "kbar", p.kbar, "representation");
    p.rep_dts = get_or(r, "dt_ladder", p.rep_dts, "representation");
    p.rep_n = get_or(r, "n", p.rep_n, "representation");
  }
  if (p.kbar < 0 || p.kbar >= m) throw ConfigError("representation.kbar out of range");
  p.compose_r = 0.5 * (p.s + p.t);
  if (j.contains("compose")) {
    const json& c = j["compose"];
    allow_keys(c, "compose", {"r", "dt", "n", "tol"});
    p.compose_r = get_or(c, "r", p.compose_r, "compose");
    p.compose_dt = positive(get_or(c, "dt", p.compose_dt, "compose"), "compose.dt");
    p.compose_n = get_or(c, "n", p.compose_n, "compose");
    p.compose_tol = positive(get_or(c, "tol", p.compose_tol, "compose"), "compose.tol");
  }
  for (double x : {-2.0, 0.0, 2.0}) {
    std::vector<double> v(d, 0.0);
    v[0] = x;
    p.x_list.push_back(v);
  }
  if (j.contains("kernel")) {
    const json& k = j["kernel"];
    allow_keys(k, "kernel", {"x_list", "R_list", "cells", "dt", "threshold"});
    p.x_list = get_or(k, "x_list", p.x_list, "kernel");
    p.R_list = get_or(k, "R_list", p.R_list, "kernel");
    p.cells = get_or(k, "cells", p.cells, "kernel");
    p.kernel_dt = positive(get_or(k, "dt", p.kernel_dt, "kernel"), "kernel.dt");
    p.kernel_threshold = positive(get_or(k, "threshold", p.kernel_threshold, "kernel"), "kernel.threshold");
  }
  for (const auto& x : p.x_list)
    if (static_cast<int>(x.size()) != d) throw ConfigError("kernel.x_list points need d coordinates");

  if (j.contains("diffusion")) {
    try {
      p.ds = DiffusionSpec::from_json(j["diffusion"]);
    } catch (const std::exception& e) {
      throw ConfigError(std::string("diffusion: ") + e.what());
    }
  }
  if (j.contains("nonlinearity")) {
    const json& n = j["nonlinearity"];
    allow_keys(n, "nonlinearity", {"exprs", "growth_c", "holder_alpha", "game"});
    if (n.contains("game") && get_or(n, "game", false, "nonlinearity")) {
      if (n.size() != 1) throw ConfigError("nonlinearity.game takes no other keys");
      if (!p.ds) throw ConfigError("nonlinearity.game needs a diffusion section");
      p.nl_kind = "game";
    } else if (n.contains("exprs")) {
      p.nl_kind = "exprs";
      p.nl_exprs = get_or(n, "exprs", p.nl_exprs, "nonlinearity");
      p.nl_growth = get_or(n, "growth_c", 0.0, "nonlinearity");
      p.nl_alpha = get_or(n, "holder_alpha", 1.0, "nonlinearity");
    }
  }
  if (j.contains("semilinear")) {
    const json& s = j["semilinear"];
    allow_keys(s, "semilinear", {"T", "dt", "n", "L", "picard_tol", "max_iter", "mollifier_ladder"});
    p.sem_T = positive(get_or(s, "T", p.sem_T, "semilinear"), "semilinear.T");
    p.sem_dt = positive(get_or(s, "dt", p.sem_dt, "semilinear"), "semilinear.dt");
    p.sem_n = get_or(s, "n", p.sem_n, "semilinear");
    p.sem_L = positive(get_or(s, "L", p.sem_L, "semilinear"), "semilinear.L");
    p.mild.picard_tol = positive(get_or(s, "picard_tol", p.mild.picard_tol, "semilinear"), "semilinear.picard_tol");
    p.mild.max_iter = get_or(s, "max_iter", p.mild.max_iter, "semilinear");
    p.moll_n = get_or(s, "mollifier_ladder", p.moll_n, "semilinear");
  }
  const bool semi = wants(p.checks, "mild_solve") || wants(p.checks, "mollifier_ladder");
  if (semi) {
    if (!j.contains("semilinear")) throw ConfigError("semilinear checks need a semilinear section");
    const int sm = p.ds ? p.ds->m : m, sd = p.ds ? p.ds->d : d;
    if (!p.ds && p.data.empty()) throw ConfigError("semilinear checks need terminal data (diffusion.g or data)");
    if (p.nl_kind == "exprs") {
      try {
        Nonlinearity::from_exprs(sd, sm, p.nl_exprs, p.nl_growth, p.nl_alpha);
      } catch (const std::exception& e) {
        throw ConfigError(std::string("nonlinearity: ") + e.what());
      }
    }
    if (p.sem_n < 5 || p.sem_n > 401 || p.sem_n % 2 == 0) throw ConfigError("semilinear.n must be odd in 5..401");
    if (p.mild.max_iter < 1) throw ConfigError("semilinear.max_iter must be at least 1");
    if (!p.ds && p.sem_T > p.op.t_hi) throw ConfigError("semilinear.T exceeds the operator's time interval");
  }
  if (wants(p.checks, "mollifier_ladder")) {
    if (p.moll_n.size() < 3) throw ConfigError("semilinear.mollifier_ladder needs at least 3 indices");
    for (std::size_t i = 0; i < p.moll_n.size(); ++i)
      if (p.moll_n[i] < 1 || (i > 0 && p.moll_n[i] <= p.moll_n[i - 1]))
        throw ConfigError("semilinear.mollifier_ladder must increase strictly");
  }

  const bool mc = wants(p.checks, "identify_yz") || wants(p.checks, "bsde_residual") ||
                  wants(p.checks, "girsanov_weights") || wants(p.checks, "nash_check");
  if (j.contains("mc")) {
    const json& c = j["mc"];
    allow_keys(c, "mc", {"x0", "t", "N", "h_step", "levels", "min_reduction"});
    p.x0 = get_or(c, "x0", p.x0, "mc");
    p.mc_t = get_or(c, "t", p.mc_t, "mc");
    p.N = get_or<std::size_t>(c, "N", p.N, "mc");
    p.h_step = get_or(c, "h_step", p.h_step, "mc");
    p.levels = get_or(c, "levels", p.levels, "mc");
    p.min_reduction = get_or(c, "min_reduction", p.min_reduction, "mc");
  }
  if (mc) {
    if (!p.ds) throw ConfigError("fbsde checks need a diffusion section");
    if (!j.contains("mc")) throw ConfigError("fbsde checks need an mc section");
    if (static_cast<int>(p.x0.size()) != p.ds->d) throw ConfigError("mc.x0 needs d coordinates");
    if (p.N < 2) throw ConfigError("mc.N must be at least 2");
    if (!(p.mc_t >= 0.0 && p.mc_t < p.sem_T)) throw ConfigError("mc.t must lie in [0, semilinear.T)");
    if (p.h_step == 0.0) p.h_step = (p.sem_T - p.mc_t) / 32;
    positive(p.h_step, "mc.h_step");
    double steps = (p.sem_T - p.mc_t) / p.h_step;
    if (std::fabs(steps - std::round(steps)) > 1e-9 * std::max(1.0, steps))
      throw ConfigError("mc.h_step must divide semilinear.T - mc.t");
    if (p.levels < 2 || p.levels > 8) throw ConfigError("mc.levels must be in 2..8");
  }
  if (wants(p.checks, "nash_check")) {
    if (p.nl_kind != "game") throw ConfigError("nash_check needs nonlinearity.game");
    p.deviations = p.ds->controls;
    if (j.contains("nash")) {
      allow_keys(j["nash"], "nash", {"deviations"});
      p.deviations = get_or(j["nash"], "deviations", p.deviations, "nash");
    }
    if (static_cast<int>(p.deviations.size()) != p.ds->m) throw ConfigError("nash.deviations needs one list per player");
  }

  p.seed = get_or<std::uint64_t>(j, "seed", p.seed, "config");
  p.allow_inconclusive = get_or(j, "allow_inconclusive", false, "config");
  if (j.contains("output") && !j["output"].is_string()) throw ConfigError("config.output must be a string");
  return p;
}

VectorField data_field(const std::vector<CoeffExpr>& data, int d) {
  return [data, d](const double* x, double* out) {
    EvalPoint p;
    p.x = x;
    p.d = d;
    for (std::size_t j = 0; j < data.size(); ++j) out[j] = data[j].eval(p);
  };
}

std::string verdict_of(bool pass) { return pass ? "PASS" : "FAIL"; }

json estimate_values(const EstimateResult& r) { return r.to_json(); }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

class Runner {
 public:
  Runner(const RunConfig& cfg, Plan plan) : cfg_(cfg), p_(std::move(plan)), out_(cfg.output) {}

  RunResult run(bool audit_only) {
    fs::create_directories(out_);
    std::vector<std::string> todo = p_.checks;
    if (audit_only) {
      todo.clear();
      for (const auto& [n, st] : check_table())
        if (st == "audit" && (wants(p_.checks, n) || !has_audit()))
          if (n != "check_family_params" || !p_.family.empty())
            if (n != "check_hyp51" || p_.weight) todo.push_back(n);
    }
    for (const auto& c : todo) {
      const std::string stage = check_stage(c);
      try {
        dispatch(c);
      } catch (const std::exception& e) {
        throw StageError(stage, c, e.what());
      }
    }
    if (!estimates_.empty()) {
      fs::remove(out_ / "estimates.csv");
      append_csv((out_ / "estimates.csv").string(), estimates_);
      res_.files.push_back("estimates.csv");
    }
    std::ostringstream csv;
    csv << "stage,check,verdict\n";
    res_.ok = true;
    json results = json::array();
    for (const auto& r : res_.checks) {
      csv << r.stage << ',' << r.check << ',' << r.verdict << '\n';
      results.push_back({{"stage", r.stage}, {"check", r.check}, {"verdict", r.verdict}, {"values", r.values}});
      bool good = r.verdict == "PASS" || (r.verdict == "INCONCLUSIVE" && p_.allow_inconclusive);
      res_.ok = res_.ok && good;
    }
    const std::string report = audit_only ? "audit.json" : "summary.json";
    const std::string table = audit_only ? "audit.csv" : "checks.csv";
    write_text(out_ / table, csv.str());
    res_.files.push_back(table);
    std::sort(res_.files.begin(), res_.files.end());
    json s;
    s["artifact"] = "kolmo";
    s["version"] = KOLMO_VERSION;
    s["config_hash"] = hash_hex(config_hash(cfg_.config));
    s["seed"] = p_.seed;
    s["config"] = cfg_.config;
    s["mode"] = audit_only ? "audit" : "run";
    s["results"] = results;
    s["files"] = res_.files;
    s["verdict"] = res_.ok ? "PASS" : "FAIL";
    write_text(out_ / report, s.dump(2) + "\n");
    res_.summary = s;
    return res_;
  }

 private:
  bool has_audit() const {
    for (const auto& c : p_.checks)
      if (check_stage(c) == "audit") return true;
    return false;
  }

  void record(const std::string& check, const std::string& verdict, json values) {
    res_.checks.push_back({check_stage(check), check, verdict, std::move(values)});
  }

  AuditBox box() const { return {p_.audit_L, p_.samples}; }

  EstimateOptions est_opts() const {
    EstimateOptions o;
    o.L = p_.L;
    o.bc = p_.bc;
    o.ladder = p_.ladder;
    return o;
  }

  void dispatch(const std::string& c) {
    if (c == "check_family_params") {
      FamilyCheck chk = check_family_params(p_.family, p_.family_params);
      json items = json::array();
      for (const auto& i : chk.items) items.push_back({{"name", i.name}, {"holds", i.holds}, {"slack", i.slack}});
      record(c, verdict_of(chk.all_hold()), {{"family", p_.family}, {"items", items}});
    } else if (c == "check_ellipticity") {
      auto r = check_ellipticity(p_.op, box());
      record(c, verdict_of(r.holds), r.to_json());
    } else if (c == "check_hyp22") {
      auto r = check_hyp22(p_.op, p_.epsilon, p_.kappa, box(), p_.n_eta);
      kappa0_ = r.value("kappa0");
      record(c, verdict_of(r.holds), r.to_json());
    } else if (c == "check_hyp23") {
      auto r = check_hyp23(p_.op, p_.sigma, box());
      H_ = r.value("H");
      record(c, verdict_of(r.holds), r.to_json());
    } else if (c == "lyapunov_probe") {
      auto r = lyapunov_probe(p_.op, p_.phi, {p_.L, p_.samples});
      record(c, verdict_of(r.finite), r.to_json());
    } else if (c == "check_hyp51") {
      auto r = check_hyp51(p_.op, *p_.weight, box());
      record(c, verdict_of(r.holds), r.to_json());
    } else if (c == "compose_check") {
      Grid g = Grid::make(p_.op.d, p_.L, p_.compose_n);
      GridFunction f = sample(g, p_.op.m, data_field(p_.data, p_.op.d), p_.bc, p_.s);
      double r = compose_check(p_.op, f, p_.s, p_.compose_r, p_.t, p_.compose_dt, p_.bc);
      record(c, verdict_of(r <= p_.compose_tol), {{"residual", r}, {"tol", p_.compose_tol}});
    } else if (c == "compactness_probe") {
      compactness();
    } else if (c == "max_principle_check") {
      estimate(c, max_principle_check(p_.op, data_field(p_.data, p_.op.d), p_.s, p_.t, p_.epsilon, kappa0_, est_opts()));
    } else if (c == "pointwise_check") {
      estimate(c, pointwise_check(p_.op, data_field(p_.data, p_.op.d), p_.s, p_.t, p_.n_t, H_, est_opts()));
    } else if (c == "weighted_gradient_check") {
      estimate(c, weighted_gradient_check(p_.op, *p_.weight, data_field(p_.data, p_.op.d), p_.s, p_.t_list, est_opts()));
    } else if (c == "representation_residual") {
      estimate(c, representation_check(p_.op, data_field(p_.data, p_.op.d), p_.kbar, p_.s, p_.t, p_.rep_dts, p_.rep_n, p_.L,
                                       p_.bc));
    } else if (c == "mild_solve") {
      mild();
    } else if (c == "mollifier_ladder") {
      ladder();
    } else if (c == "identify_yz") {
      identify();
    } else if (c == "bsde_residual") {
      bsde();
    } else if (c == "girsanov_weights") {
      girsanov();
    } else if (c == "nash_check") {
      nash();
    }
  }

  void estimate(const std::string& c, EstimateResult r) {
    r.name = c;
    record(c, r.verdict, estimate_values(r));
    estimates_.push_back(std::move(r));
  }

  void compactness() {
    KernelOptions ko;
    ko.L = p_.L;
    ko.dt = p_.kernel_dt;
    auto v = compactness_probe(p_.op, p_.t, p_.s, p_.x_list, p_.R_list, p_.cells, ko, p_.kernel_threshold);
    std::ostringstream os;
    os << "x_index,R,outside_mass\n";
    for (std::size_t i = 0; i < v.table.size(); ++i)
      for (std::size_t r = 0; r < v.table[i].size(); ++r) os << i << ',' << fmt(v.R_list[r]) << ',' << fmt(v.table[i][r]) << '\n';
    write_text(out_ / "compactness.csv", os.str());
    res_.files.push_back("compactness.csv");
    record("compactness_probe", verdict_of(v.pass),
           {{"x_list", v.x_list}, {"R_list", v.R_list}, {"table", v.table}, {"monotone", v.monotone},
            {"final_max", v.final_max}, {"threshold", v.threshold}});
  }

  OperatorSpec sem_operator() const { return p_.ds ? p_.ds->to_operator() : p_.op; }

  Nonlinearity nonlinearity() const {
    const int d = p_.ds ? p_.ds->d : p_.op.d, m = p_.ds ? p_.ds->m : p_.op.m;
    if (p_.nl_kind == "game") return game_nonlinearity(*p_.ds, p_.sem_L);
    if (p_.nl_kind == "exprs") return Nonlinearity::from_exprs(d, m, p_.nl_exprs, p_.nl_growth, p_.nl_alpha);
    return Nonlinearity::zero(d, m);
  }

  GridFunction terminal() const {
    const int d = p_.ds ? p_.ds->d : p_.op.d, m = p_.ds ? p_.ds->m : p_.op.m;
    Grid g = Grid::make(d, p_.sem_L, p_.sem_n);
    return sample(g, m, p_.ds ? p_.ds->terminal() : data_field(p_.data, p_.op.d), p_.bc);
  }

  void mild() {
    sol_ = mild_solve(sem_operator(), nonlinearity(), terminal(), p_.sem_T, p_.sem_dt, p_.mild);
    std::ostringstream os;
    os << "iteration,delta\n";
    for (std::size_t i = 0; i < sol_->picard_history.size(); ++i) os << i + 1 << ',' << fmt(sol_->picard_history[i]) << '\n';
    write_text(out_ / "picard.csv", os.str());
    res_.files.push_back("picard.csv");
    if (sol_->u.front().grid.d == 1) {
      write_csv(sol_->u.front(), (out_ / "u_t0.csv").string());
      res_.files.push_back("u_t0.csv");
    }
    record("mild_solve", "PASS",
           {{"kt_norm", sol_->kt}, {"iterations", sol_->iterations}, {"picard_history", sol_->picard_history},
            {"rungs", sol_->times.size()}});
  }

  void ladder() {
    Nonlinearity nl = nonlinearity();
    auto lad = mollifier_ladder(sem_operator(), nl, terminal(), p_.sem_T, p_.sem_dt, p_.moll_n, p_.mild);
    std::ostringstream os;
    os << "n,kt_norm,delta,C\n";
    for (std::size_t i = 0; i < lad.n.size(); ++i) {
      os << lad.n[i] << ',' << fmt(lad.kt[i]);
      if (i < lad.deltas.size()) os << ',' << fmt(lad.deltas[i]) << ',' << fmt(lad.C[i]);
      else os << ",,";
      os << '\n';
    }
    write_text(out_ / "mollifier_ladder.csv", os.str());
    res_.files.push_back("mollifier_ladder.csv");
    bool pass = lad.kt_spread <= 0.1 && lad.C_ratio <= 2.0 && lad.fitted_alpha >= 0.95 * nl.holder_alpha;
    record("mollifier_ladder", verdict_of(pass),
           {{"n", lad.n}, {"kt", lad.kt}, {"deltas", lad.deltas}, {"fitted_alpha", lad.fitted_alpha}, {"C", lad.C},
            {"C_ratio", lad.C_ratio}, {"kt_spread", lad.kt_spread}});
  }

  PathBatch& batch() {
    if (!batch_) batch_ = simulate_forward(*p_.ds, p_.x0, p_.mc_t, p_.sem_T, p_.h_step, p_.N, p_.seed);
    return *batch_;
  }

  YZProcess& yz() {
    if (!yz_) yz_ = identify_yz(*sol_, *p_.ds, batch());
    return *yz_;
  }

  void identify() {
    PathBatch& pb = batch();
    YZProcess& y = yz();
    std::vector<double> gT(pb.N), dY(pb.N);
    std::vector<double> g(p_.ds->m);
    for (std::size_t q = 0; q < pb.N; ++q) {
      p_.ds->eval_g(pb.x(q, pb.steps), g.data());
      gT[q] = g[0];
      dY[q] = y.y(q, pb.steps)[0] - y.y(q, 0)[0];
    }
    auto [mg, sg] = mean_stderr(gT, &y.valid);
    auto [md, sd] = mean_stderr(dY, &y.valid);
    const double y0 = y.y(0, 0)[0];
    json v = {{"escaped", y.escaped}, {"N", pb.N}, {"Y0", y0}, {"E_g", mg}, {"E_g_stderr", sg},
              {"E_dY", md}, {"E_dY_stderr", sd}};
    bool linear = p_.nl_kind == "zero";
    for (const auto& r : p_.ds->r1) linear = linear && r.is_zero();
    if (linear) {
      // Feynman-Kac applies only without a nonlinearity and first-order coupling.
      v["feynman_kac"] = std::fabs(mg - y0) <= 3.0 * sg;
      record("identify_yz", verdict_of(std::fabs(mg - y0) <= 3.0 * sg && std::fabs(md) <= 3.0 * sd), v);
    } else {
      v["note"] = "nonlinear or coupled: no closed-form expectation to compare";
      record("identify_yz", "PASS", v);
    }
  }

  void bsde() {
    Nonlinearity nl = nonlinearity();
    std::vector<double> res, hs;
    const int top = 1 << (p_.levels - 1);
    for (int k = 0; k < p_.levels; ++k) {
      const double h = p_.h_step / (1 << k);
      PathBatch pb = simulate_forward(*p_.ds, p_.x0, p_.mc_t, p_.sem_T, h, p_.N, p_.seed, top >> k);
      YZProcess y = identify_yz(*sol_, *p_.ds, pb);
      res.push_back(bsde_residual(y, *p_.ds, nl, pb).l2);
      hs.push_back(h);
    }
    std::vector<double> red;
    bool pass = true;
    for (std::size_t k = 1; k < res.size(); ++k) {
      red.push_back(res[k - 1] > 0.0 ? 1.0 - res[k] / res[k - 1] : 0.0);
      pass = pass && (res[k - 1] == 0.0 ? res[k] == 0.0 : red.back() >= p_.min_reduction);
    }
    std::ostringstream os;
    os << "h_step,l2\n";
    for (std::size_t k = 0; k < res.size(); ++k) os << fmt(hs[k]) << ',' << fmt(res[k]) << '\n';
    write_text(out_ / "bsde_residual.csv", os.str());
    res_.files.push_back("bsde_residual.csv");
    record("bsde_residual", verdict_of(pass),
           {{"h_step", hs}, {"l2", res}, {"reduction", red}, {"min_reduction", p_.min_reduction}});
  }

  void girsanov() {
    PathBatch pb = batch();
    Strategy st;
    if (p_.nl_kind == "game") {
      st = feedback_strategy(*p_.ds);
    } else {
      std::vector<double> u;
      for (const auto& set : p_.ds->controls) u.push_back(set.front());
      st = constant_strategy(u);
    }
    auto rep = girsanov_weights(*p_.ds, pb, st, &yz());
    auto [m, s] = mean_stderr(pb.rho, &yz().valid);
    record("girsanov_weights", verdict_of(std::fabs(m - 1.0) <= 3.0 * s),
           {{"rho_mean", m}, {"rho_stderr", s}, {"r_max", rep.r_max},
            {"form", "rho = exp(sum <r, dW> - 1/2 sum |r|^2 h)"}});
  }

  void nash() {
    auto rep = nash_check(*p_.ds, *sol_, p_.x0, p_.mc_t, p_.deviations, p_.N, p_.seed, p_.h_step);
    write_text(out_ / "nash.json", rep.to_json().dump(2) + "\n");
    rep.write_csv((out_ / "nash.csv").string());
    res_.files.push_back("nash.json");
    res_.files.push_back("nash.csv");
    record("nash_check", verdict_of(rep.pass), rep.to_json());
  }

  const RunConfig& cfg_;
  Plan p_;
  fs::path out_;
  RunResult res_;
  double kappa0_ = 0.0, H_ = 0.0;
  std::vector<EstimateResult> estimates_;
  std::optional<MildSolution> sol_;
  std::optional<PathBatch> batch_;
  std::optional<YZProcess> yz_;
};

}  // namespace

const std::vector<std::string>& runnable_checks() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> v;
    for (const auto& [n, s] : check_table()) v.push_back(n);
    return v;
  }();
  return names;
}

std::string check_stage(const std::string& check) {
  for (const auto& [n, s] : check_table())
    if (n == check) return s;
  throw std::invalid_argument("unknown check " + check);
}

std::uint64_t config_hash(const json& config) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : config.dump()) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

RunConfig RunConfig::parse(const json& j) {
  Plan p = make_plan(j);
  RunConfig c;
  c.config = j;
  c.config.erase("output");
  c.output = j.value("output", std::string());
  c.seed = p.seed;
  c.checks = p.checks;
  c.allow_inconclusive = p.allow_inconclusive;
  return c;
}

json load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read " + path);
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  if (j.is_object() && j.contains("config") && j.contains("config_hash")) {
    const json& c = j["config"];
    if (!j["config_hash"].is_string() || hash_hex(config_hash(c)) != j["config_hash"].get<std::string>())
      throw ConfigError(path + ": embedded config does not match its hash");
    return c;
  }
  return j;
}

RunResult run_config(const RunConfig& cfg, bool audit_only) {
  if (cfg.output.empty()) throw ConfigError("no output directory");
  Runner r(cfg, make_plan(cfg.config));
  return r.run(audit_only);
}

std::vector<PresetInfo> list_presets() {
  static const std::map<std::string, std::vector<std::string>> constraints = {
      {"heat", {}},
      {"ou", {}},
      {"const_coupling", {}},
      {"ex71i", {"p>2r>=0", "Bhat_i positive definite", "Chat positive definite", "inf g>0", "inf h>0"}},
      {"ex71ii",
       {"k>=0, r>=0, p>=0, gamma>=0", "r>k-1", "0<sigma<1", "p<=k*sigma", "gamma>k*(2*sigma-1)",
        "Btilde0_i positive definite", "Chat positive definite", "inf q>0", "inf b>0"}},
      {"ex72",
       {"0<s<=1/2", "a=p if s<1/2, a=p-1 if s=1/2", "k>=2r", "2k-2<=a", "2s+2tau<=a", "2r<2s+a", "k+s<p+1",
        "Q0 positive definite", "inf q>0", "inf b>0", "sup Lambda_C>0"}},
  };
  std::vector<PresetInfo> out;
  for (const auto& name : family_names()) {
    auto it = constraints.find(name);
    out.push_back({name, it == constraints.end() ? std::vector<std::string>{} : it->second, family_defaults(name)});
  }
  return out;
}

std::string presets_table() {
  std::ostringstream os;
  for (const auto& p : list_presets()) {
    os << p.family << '\n';
    if (p.constraints.empty()) os << "  (no constraints)\n";
    for (const auto& c : p.constraints) os << "  " << c << '\n';
    os << "  defaults: " << p.defaults.dump() << '\n';
  }
  return os.str();
}

}  // namespace kolmo
