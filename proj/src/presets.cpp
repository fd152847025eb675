#include "kolmo/presets.hpp"

#include <cmath>

#include "kolmo/sampling.hpp"

namespace kolmo {

using nlohmann::json;

namespace {

json merged(const std::string& family, const json& defaults, const json& params) {
  if (!params.is_object()) throw std::invalid_argument("family parameters must be a JSON object");
  json out = defaults;
  for (auto it = params.begin(); it != params.end(); ++it) {
    if (!defaults.contains(it.key()))
      throw std::invalid_argument("unknown parameter '" + it.key() + "' for family " + family);
    out[it.key()] = it.value();
  }
  return out;
}

double num(const json& p, const char* key) {
  const json& v = p.at(key);
  if (!v.is_number()) throw std::invalid_argument(std::string("parameter '") + key + "' must be a number");
  return v.get<double>();
}

CoeffExpr expr_value(const json& v, int d) {
  if (v.is_number()) return CoeffExpr(v.get<double>());
  if (v.is_string()) {
    ExprContext ctx;
    ctx.d = d;
    return parse_expr(v.get<std::string>(), ctx);
  }
  throw std::invalid_argument("expected a number or an expression string");
}

CoeffExpr time_fn(const json& p, const char* key, int d) {
  CoeffExpr e = expr_value(p.at(key), d);
  if (e.depends_on(VarKind::x)) throw std::invalid_argument(std::string("'") + key + "' must depend on t only");
  return e;
}

Eigen::MatrixXd num_matrix(const json& v, int n) {
  if (!v.is_array() || static_cast<int>(v.size()) != n) throw std::invalid_argument("expected an " + std::to_string(n) + "x" + std::to_string(n) + " matrix");
  Eigen::MatrixXd M(n, n);
  for (int i = 0; i < n; ++i) {
    if (!v[i].is_array() || static_cast<int>(v[i].size()) != n) throw std::invalid_argument("ragged matrix parameter");
    for (int j = 0; j < n; ++j) M(i, j) = v[i][j].get<double>();
  }
  return M;
}

json identity_json(int n) {
  json a = json::array();
  for (int i = 0; i < n; ++i) {
    json row = json::array();
    for (int j = 0; j < n; ++j) row.push_back(i == j ? 1.0 : 0.0);
    a.push_back(row);
  }
  return a;
}

// A single matrix applies to every axis; a list of d matrices is per axis.
std::vector<Eigen::MatrixXd> per_axis(const json& v, int d, int n) {
  std::vector<Eigen::MatrixXd> out;
  bool nested = v.is_array() && !v.empty() && v[0].is_array() && !v[0].empty() && v[0][0].is_array();
  if (nested) {
    if (static_cast<int>(v.size()) != d) throw std::invalid_argument("expected one matrix per axis");
    for (const auto& m : v) out.push_back(num_matrix(m, n));
  } else {
    Eigen::MatrixXd M = num_matrix(v, n);
    out.assign(static_cast<std::size_t>(d), M);
  }
  return out;
}

bool is_symmetric(const Eigen::MatrixXd& M) { return (M - M.transpose()).cwiseAbs().maxCoeff() <= 1e-14; }

double inf_on_interval(const CoeffExpr& f, double t0, double t1) {
  double lo = INFINITY;
  for (int k = 0; k <= 200; ++k) {
    double t = t0 + (t1 - t0) * k / 200.0;
    lo = std::min(lo, f.eval(t, {}));
  }
  return lo;
}

double sup_abs_on_interval(const CoeffExpr& f, double t0, double t1) {
  double hi = 0.0;
  for (int k = 0; k <= 200; ++k) hi = std::max(hi, std::fabs(f.eval(t0 + (t1 - t0) * k / 200.0, {})));
  return hi;
}

Inequality ge(std::string name, double lhs, double rhs) { return {std::move(name), lhs >= rhs, lhs - rhs}; }
Inequality gt(std::string name, double lhs, double rhs) { return {std::move(name), lhs > rhs, lhs - rhs}; }

CoeffExpr weight_base() { return CoeffExpr(1.0) + normsq_expr(); }

json defaults_for(const std::string& name) {
  if (name == "heat") return {{"d", 1}, {"m", 1}, {"q", 0.5}, {"t0", 0.0}, {"T", 1.0}};
  if (name == "ou") return {{"d", 1}, {"m", 1}, {"q", 0.5}, {"theta", 1.0}, {"t0", 0.0}, {"T", 1.0}};
  if (name == "const_coupling")
    return {{"d", 1}, {"m", 2}, {"q", 1.0}, {"C", {{0.5, 0.3}, {0.3, -0.4}}}, {"t0", 0.0}, {"T", 1.0}};
  if (name == "ex71i")
    return {{"d", 2}, {"m", 2}, {"r", 1.0}, {"p", 3.0}, {"g", "1"}, {"h", "1"}, {"Bhat", identity_json(2)},
            {"Chat", identity_json(2)}, {"t0", 0.0}, {"T", 1.0}};
  if (name == "ex71ii")
    return {{"d", 1},
            {"m", 2},
            {"k", 1.0},
            {"r", 1.0},
            {"p", 0.4},
            {"gamma", 0.5},
            {"sigma", 0.5},
            {"q", "1"},
            {"b", "1"},
            {"btilde", "1"},
            {"c", "1"},
            {"Btilde0", {{1.0, 0.5}, {0.5, 1.0}}},
            {"Chat", {{1.0, 0.5}, {0.5, 1.0}}},
            {"t0", 0.0},
            {"T", 1.0}};
  if (name == "ex72")
    return {{"d", 1},
            {"m", 2},
            {"k", 0.0},
            {"r", 0.0},
            {"p", 2.0},
            {"s", 0.5},
            {"tau", 0.0},
            {"q", "1"},
            {"b", "1"},
            {"btilde", "1"},
            {"Q0", identity_json(1)},
            {"B0", {{0.2, 0.5}, {0.1, 0.3}}},
            {"C", json::array({json::array({"0.5", "0.25*exp(-normsq(x))"}), json::array({"0.25*exp(-normsq(x))", "-0.5"})})},
            {"t0", 0.0},
            {"T", 1.0}};
  throw UnknownFamily("unknown family '" + name + "'");
}

void set_interval(OperatorSpec& op, const json& p) {
  op.t_lo = num(p, "t0");
  op.t_hi = num(p, "T");
  if (!(op.t_hi > op.t_lo)) throw std::invalid_argument("T must exceed t0");
}

int dim(const json& p, const char* key, int lo, int hi) {
  int v = p.at(key).get<int>();
  if (v < lo || v > hi) throw std::invalid_argument(std::string(key) + " out of range");
  return v;
}

// Identity-sized defaults follow the requested dimensions.
json resize_defaults(const std::string& name, json defaults, const json& params) {
  int d = params.contains("d") ? params["d"].get<int>() : defaults["d"].get<int>();
  int m = params.contains("m") ? params["m"].get<int>() : defaults["m"].get<int>();
  if (name == "ex71i") {
    defaults["Bhat"] = identity_json(m);
    defaults["Chat"] = identity_json(m);
  }
  if (name == "ex71ii" && m != 2) {
    defaults["Btilde0"] = identity_json(m);
    defaults["Chat"] = identity_json(m);
  }
  if (name == "ex72") {
    defaults["Q0"] = identity_json(d);
    if (m != 2) {
      defaults["B0"] = identity_json(m);
      json c = json::array();
      for (int i = 0; i < m; ++i) {
        json row = json::array();
        for (int j = 0; j < m; ++j) row.push_back(i == j ? "0.5" : "0");
        c.push_back(row);
      }
      defaults["C"] = c;
    }
  }
  if (name == "const_coupling" && m != 2) {
    json c = json::array();
    for (int i = 0; i < m; ++i) {
      json row = json::array();
      for (int j = 0; j < m; ++j) row.push_back(i == j ? -0.5 : 0.0);
      c.push_back(row);
    }
    defaults["C"] = c;
  }
  return defaults;
}

struct Built {
  Family fam;
  FamilyCheck check;
};

Built build(const std::string& name, const json& params) {
  json p = merged(name, resize_defaults(name, defaults_for(name), params), params);
  Built out;
  Family& f = out.fam;
  FamilyCheck& chk = out.check;
  f.name = name;
  f.params = p;
  f.lyapunov = weight_base();
  chk.family = name;
  const int d = dim(p, "d", 1, 2);
  const int m = dim(p, "m", 1, 3);
  OperatorSpec op = OperatorSpec::zero(d, m);
  op.name = name;
  set_interval(op, p);
  f.weight = WeightSpec::unit(d);
  const CoeffExpr w = weight_base();

  if (name == "heat" || name == "ou" || name == "const_coupling") {
    double q = num(p, "q");
    chk.items.push_back(gt("q>0", q, 0.0));
    op.Q = SymMatrixExpr::diagonal(d, CoeffExpr(q));
    if (name == "ou") {
      double th = num(p, "theta");
      chk.items.push_back(gt("theta>0", th, 0.0));
      for (int i = 0; i < d; ++i) op.b[i] = CoeffExpr(-th) * var_expr(Var::x(i));
    }
    if (name == "const_coupling") {
      Eigen::MatrixXd C = num_matrix(p["C"], m);
      if (!is_symmetric(C)) throw std::invalid_argument("C must be symmetric");
      for (int i = 0; i < m; ++i)
        for (int j = i; j < m; ++j) op.C.set(i, j, CoeffExpr(C(i, j)));
    }
  } else if (name == "ex71i") {
    double r = num(p, "r"), pp = num(p, "p");
    CoeffExpr g = time_fn(p, "g", d), h = time_fn(p, "h", d);
    auto Bhat = per_axis(p["Bhat"], d, m);
    Eigen::MatrixXd Chat = num_matrix(p["Chat"], m);
    if (!is_symmetric(Chat)) throw std::invalid_argument("Chat must be symmetric");
    chk.items.push_back(ge("2r>=0", 2 * r, 0.0));
    chk.items.push_back(gt("p>2r", pp, 2 * r));
    for (int i = 0; i < d; ++i)
      chk.items.push_back(gt("Bhat" + std::to_string(i + 1) + " positive definite", min_eig(Bhat[i]), 0.0));
    chk.items.push_back(gt("Chat positive definite", min_eig(Chat), 0.0));
    chk.items.push_back(gt("inf g>0", inf_on_interval(g, op.t_lo, op.t_hi), 0.0));
    chk.items.push_back(gt("inf h>0", inf_on_interval(h, op.t_lo, op.t_hi), 0.0));
    chk.items.push_back({"g bounded", std::isfinite(sup_abs_on_interval(g, op.t_lo, op.t_hi)), 0.0});
    op.Q = SymMatrixExpr::diagonal(d, CoeffExpr(1.0));
    for (int i = 0; i < d; ++i) {
      CoeffExpr beta = -(var_expr(Var::x(i)) * pow(w, r) * g);
      op.b[i] = beta;
      for (int j = 0; j < m; ++j)
        for (int k = 0; k < m; ++k) {
          double c = Bhat[i](j, k) - (j == k ? 1.0 : 0.0);
          if (c != 0.0) op.Bt[i].set(j, k, CoeffExpr(c) * beta);
        }
    }
    CoeffExpr cbase = -(normsq_expr() * pow(w, pp) * h);
    for (int j = 0; j < m; ++j)
      for (int k = j; k < m; ++k)
        if (Chat(j, k) != 0.0) op.C.set(j, k, CoeffExpr(Chat(j, k)) * cbase);
  } else if (name == "ex71ii") {
    double k = num(p, "k"), r = num(p, "r"), pp = num(p, "p"), gam = num(p, "gamma"), sig = num(p, "sigma");
    CoeffExpr q = time_fn(p, "q", d), bb = time_fn(p, "b", d), bt = time_fn(p, "btilde", d), c = time_fn(p, "c", d);
    auto B0 = per_axis(p["Btilde0"], d, m);
    Eigen::MatrixXd Chat = num_matrix(p["Chat"], m);
    if (!is_symmetric(Chat)) throw std::invalid_argument("Chat must be symmetric");
    f.sigma = sig;
    chk.items.push_back(ge("k>=0", k, 0.0));
    chk.items.push_back(ge("r>=0", r, 0.0));
    chk.items.push_back(ge("p>=0", pp, 0.0));
    chk.items.push_back(ge("gamma>=0", gam, 0.0));
    chk.items.push_back(gt("r>k-1", r, k - 1.0));
    chk.items.push_back({"0<sigma<1", sig > 0.0 && sig < 1.0, std::min(sig, 1.0 - sig)});
    chk.items.push_back(ge("p<=k*sigma", k * sig, pp));
    chk.items.push_back(gt("gamma>k*(2*sigma-1)", gam, k * (2 * sig - 1)));
    for (int i = 0; i < d; ++i)
      chk.items.push_back(gt("Btilde0" + std::to_string(i + 1) + " positive definite", min_eig(B0[i]), 0.0));
    chk.items.push_back(gt("Chat positive definite", min_eig(Chat), 0.0));
    chk.items.push_back(gt("inf q>0", inf_on_interval(q, op.t_lo, op.t_hi), 0.0));
    chk.items.push_back(gt("inf b>0", inf_on_interval(bb, op.t_lo, op.t_hi), 0.0));
    op.Q = SymMatrixExpr::diagonal(d, q * pow(w, k));
    for (int i = 0; i < d; ++i) {
      op.b[i] = -(bb * var_expr(Var::x(i)) * pow(w, r));
      for (int j = 0; j < m; ++j)
        for (int kk = 0; kk < m; ++kk)
          if (B0[i](j, kk) != 0.0) op.Bt[i].set(j, kk, CoeffExpr(B0[i](j, kk)) * bt * pow(w, pp));
    }
    for (int j = 0; j < m; ++j)
      for (int kk = j; kk < m; ++kk)
        if (Chat(j, kk) != 0.0) op.C.set(j, kk, -(CoeffExpr(Chat(j, kk)) * c * pow(w, gam)));
  } else if (name == "ex72") {
    double k = num(p, "k"), r = num(p, "r"), pp = num(p, "p"), s = num(p, "s"), tau = num(p, "tau");
    CoeffExpr q = time_fn(p, "q", d), bb = time_fn(p, "b", d), bt = time_fn(p, "btilde", d);
    Eigen::MatrixXd Q0 = num_matrix(p["Q0"], d);
    if (!is_symmetric(Q0)) throw std::invalid_argument("Q0 must be symmetric");
    auto B0 = per_axis(p["B0"], d, m);
    const json& Cj = p["C"];
    if (!Cj.is_array() || static_cast<int>(Cj.size()) != m) throw std::invalid_argument("C must be m x m");
    f.sigma = 0.5;
    double a = s < 0.5 ? pp : pp - 1.0;
    chk.items.push_back({"0<s<=1/2", s > 0.0 && s <= 0.5, std::min(s, 0.5 - s)});
    chk.items.push_back(ge("k>=2r", k, 2 * r));
    chk.items.push_back(ge("2k-2<=a", a, 2 * k - 2));
    chk.items.push_back(ge("2s+2tau<=a", a, 2 * s + 2 * tau));
    chk.items.push_back(gt("2r<2s+a", 2 * s + a, 2 * r));
    chk.items.push_back(gt("k+s<p+1", pp + 1, k + s));
    chk.items.push_back(gt("Q0 positive definite", min_eig(Q0), 0.0));
    chk.items.push_back(gt("inf q>0", inf_on_interval(q, op.t_lo, op.t_hi), 0.0));
    chk.items.push_back(gt("inf b>0", inf_on_interval(bb, op.t_lo, op.t_hi), 0.0));
    for (int i = 0; i < d; ++i)
      for (int j = i; j < d; ++j)
        if (Q0(i, j) != 0.0) op.Q.set(i, j, CoeffExpr(Q0(i, j)) * q * pow(w, k));
    for (int i = 0; i < d; ++i) {
      op.b[i] = -(bb * pow(w, pp) * var_expr(Var::x(i)));
      for (int j = 0; j < m; ++j)
        for (int kk = 0; kk < m; ++kk)
          if (B0[i](j, kk) != 0.0) op.Bt[i].set(j, kk, CoeffExpr(B0[i](j, kk)) * bt * pow(w, r));
    }
    for (int j = 0; j < m; ++j) {
      if (!Cj[j].is_array() || static_cast<int>(Cj[j].size()) != m) throw std::invalid_argument("C must be m x m");
      for (int kk = j; kk < m; ++kk) {
        CoeffExpr upper = expr_value(Cj[j][kk], d), lower = expr_value(Cj[kk][j], d);
        if (!structurally_equal(upper, lower)) throw std::invalid_argument("C must be symmetric");
        op.C.set(j, kk, upper);
      }
    }
    double sup_lc = -INFINITY;
    Eigen::MatrixXd Cv;
    for (const auto& pt : box_samples(d, 4.0, op.t_lo, op.t_hi, 256)) {
      op.C.eval(pt.t, pt.x.data(), d, Cv);
      sup_lc = std::max(sup_lc, max_eig(Cv));
    }
    chk.items.push_back(gt("sup Lambda_C>0", sup_lc, 0.0));
    f.weight = WeightSpec::scalar(d, pow(w, s));
  }
  f.op = std::move(op);
  return out;
}

}  // namespace

bool FamilyCheck::all_hold() const {
  for (const auto& i : items)
    if (!i.holds) return false;
  return true;
}

const Inequality* FamilyCheck::find(const std::string& name) const {
  for (const auto& i : items)
    if (i.name == name) return &i;
  return nullptr;
}

std::vector<std::string> family_names() { return {"const_coupling", "ex71i", "ex71ii", "ex72", "heat", "ou"}; }

json family_defaults(const std::string& name) { return defaults_for(name); }

Family example_family(const std::string& name, const json& params) { return build(name, params).fam; }

FamilyCheck check_family_params(const std::string& name, const json& params) { return build(name, params).check; }

}  // namespace kolmo
