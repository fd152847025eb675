#include "kolmo/hypotheses.hpp"

#include <cmath>
#include <limits>

#include "kolmo/sampling.hpp"

namespace kolmo {

using nlohmann::json;

namespace {

constexpr double kGrowthTol = 0.05;

bool finite_by_doubling(double half, double full) {
  if (!std::isfinite(full)) return false;
  return full <= half + kGrowthTol * std::fabs(half) + 1e-12;
}

json witness_json(const Witness& w) {
  return {{"t", w.t}, {"x", w.x}, {"eta", w.eta}, {"value", w.value}};
}

Witness make_witness(const SamplePoint& p, double v, std::vector<double> eta = {}) {
  return {p.t, p.x, std::move(eta), v};
}

double ratio(double num, double den) {
  if (num == 0.0) return 0.0;
  return num / std::max(std::fabs(den), 1e-300);
}

// Samples of the box at full and half size.
struct TwoBoxes {
  std::vector<SamplePoint> full, half;
};

TwoBoxes two_boxes(const OperatorSpec& spec, const AuditBox& box) {
  return {box_samples(spec.d, box.L, spec.t_lo, spec.t_hi, box.n_samples),
          box_samples(spec.d, 0.5 * box.L, spec.t_lo, spec.t_hi, box.n_samples)};
}

}  // namespace

double HypothesisReport::value(const std::string& key) const {
  for (const auto& [k, v] : values)
    if (k == key) return v;
  throw std::out_of_range("no value '" + key + "' in report " + hypothesis);
}

const Condition* HypothesisReport::find(const std::string& name) const {
  for (const auto& c : conditions)
    if (c.name == name) return &c;
  return nullptr;
}

json HypothesisReport::to_json() const {
  json j;
  j["hypothesis"] = hypothesis;
  j["holds"] = holds;
  json vals = json::object();
  for (const auto& [k, v] : values) vals[k] = v;
  j["values"] = vals;
  json conds = json::array();
  for (const auto& c : conditions)
    conds.push_back({{"name", c.name},
                     {"kind", c.kind},
                     {"required", c.required},
                     {"holds", c.holds},
                     {"value", c.value},
                     {"trend", c.trend},
                     {"witness", witness_json(c.witness)}});
  j["conditions"] = conds;
  if (!note.empty()) j["note"] = note;
  return j;
}

json LyapunovResult::to_json() const {
  return {{"mu", mu},         {"mu_half_box", mu_half_box}, {"sup_residual", sup_residual},
          {"finite", finite}, {"compact", compact},         {"rho", rho},
          {"b0", b0},         {"K", K},                     {"witness", witness_json(witness)}};
}

CoeffExpr apply_scalar_operator(const OperatorSpec& spec, const CoeffExpr& phi) {
  CoeffExpr out;
  for (int i = 0; i < spec.d; ++i) {
    CoeffExpr di = phi.derivative(Var::x(i));
    out = out + spec.b[i] * di;
    for (int j = 0; j < spec.d; ++j) out = out + spec.Q(i, j) * di.derivative(Var::x(j));
  }
  return out;
}

HypothesisReport check_ellipticity(const OperatorSpec& spec, const AuditBox& box) {
  HypothesisReport r;
  r.hypothesis = "ellipticity";
  Eigen::MatrixXd Q;
  double lam0 = INFINITY;
  Witness w;
  for (const auto& p : box_samples(spec.d, box.L, spec.t_lo, spec.t_hi, box.n_samples)) {
    spec.Q.eval(p.t, p.x.data(), spec.d, Q);
    double l = min_eig(Q);
    if (l < lam0) {
      lam0 = l;
      w = make_witness(p, l);
    }
  }
  Condition c{"lambda_Q>0", "sign", true, lam0 > 0.0, lam0, {}, w};
  r.conditions.push_back(c);
  r.values.emplace_back("lambda0", lam0);
  r.holds = c.holds;
  return r;
}

HypothesisReport check_hyp22(const OperatorSpec& spec, double epsilon, const CoeffExpr& kappa, const AuditBox& box,
                             int n_eta) {
  HypothesisReport r;
  r.hypothesis = "quadratic-form";
  auto etas = sphere_directions(spec.m, n_eta);
  CoeffValues cv;
  double kmin = INFINITY, kappa0 = -INFINITY;
  Witness w;
  const int d = spec.d;
  for (const auto& p : box_samples(d, box.L, spec.t_lo, spec.t_hi, box.n_samples)) {
    spec.eval(p.t, p.x.data(), cv);
    Eigen::MatrixXd Qinv = cv.Q.inverse();
    double kap = kappa.eval(p.t, p.x);
    kappa0 = std::max(kappa0, kap);
    std::vector<Eigen::MatrixXd> B(d);
    for (int i = 0; i < d; ++i) B[i] = cv.B(i);
    for (const auto& e : etas) {
      Eigen::Map<const Eigen::VectorXd> eta(e.data(), spec.m);
      double K = -4.0 * eta.dot(cv.C * eta) + 4.0 * epsilon * kap;
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) {
          double bi = eta.dot(B[i] * eta), bj = eta.dot(B[j] * eta);
          double cross = (B[i].transpose() * eta).dot(B[j].transpose() * eta);
          K += Qinv(i, j) * (bi * bj - cross);
        }
      if (K < kmin) {
        kmin = K;
        w = make_witness(p, K, e);
      }
    }
  }
  Condition c{"K>=0", "sign", true, kmin >= -1e-12, kmin, {}, w};
  r.conditions.push_back(c);
  r.values.emplace_back("min_K", kmin);
  r.values.emplace_back("kappa0", kappa0);
  r.values.emplace_back("epsilon", epsilon);
  r.holds = c.holds;
  return r;
}

HypothesisReport check_hyp23(const OperatorSpec& spec, double sigma, const AuditBox& box) {
  HypothesisReport r;
  r.hypothesis = "growth-bound";
  const int d = spec.d, m = spec.m;
  auto measure = [&](const std::vector<SamplePoint>& pts, Witness& wx, Witness& wh) {
    CoeffValues cv;
    double xi = 0.0;
    std::vector<std::pair<double, double>> lam;  // (lambda_Q, Lambda_C) per point
    lam.reserve(pts.size());
    for (const auto& p : pts) {
      spec.eval(p.t, p.x.data(), cv);
      double lq = min_eig(cv.Q);
      double lc = max_eig(cv.C);
      lam.emplace_back(lq, lc);
      double mx = 0.0;
      for (int i = 0; i < d; ++i) mx = std::max(mx, cv.Bt[i].cwiseAbs().maxCoeff());
      double v = mx / std::pow(lq, sigma);
      if (v > xi) {
        xi = v;
        wx = make_witness(p, v);
      }
    }
    double H = -INFINITY;
    for (std::size_t k = 0; k < pts.size(); ++k) {
      double v = lam[k].second + 0.25 * m * m * d * xi * xi * std::pow(lam[k].first, 2 * sigma - 1);
      if (v > H) {
        H = v;
        wh = make_witness(pts[k], v);
      }
    }
    return std::make_pair(xi, H);
  };
  auto boxes = two_boxes(spec, box);
  Witness wx, wh, dummy1, dummy2;
  auto [xi, H] = measure(boxes.full, wx, wh);
  auto [xi_h, H_h] = measure(boxes.half, dummy1, dummy2);
  Condition cx{"xi finite", "finite", true, finite_by_doubling(xi_h, xi), xi, {xi_h, xi}, wx};
  Condition ch{"H finite", "finite", true, finite_by_doubling(H_h, H), H, {H_h, H}, wh};
  r.conditions = {cx, ch};
  r.values = {{"xi", xi}, {"H", H}, {"sigma", sigma}};
  r.holds = cx.holds && ch.holds;
  return r;
}

LyapunovResult lyapunov_probe(const OperatorSpec& spec, const CoeffExpr& phi, const AuditBox& box,
                              const LyapunovOptions& opts) {
  LyapunovResult res;
  const int d = spec.d;
  CoeffExpr Aphi = apply_scalar_operator(spec, phi);
  std::vector<CoeffExpr> grad(d);
  for (int i = 0; i < d; ++i) grad[i] = phi.derivative(Var::x(i));
  auto etas = opts.use_eta ? sphere_directions(spec.m, opts.n_eta) : std::vector<std::vector<double>>{};
  CoeffValues cv;
  // Largest value of the operator applied to phi over the directions.
  auto op_value = [&](const SamplePoint& p, std::vector<double>* arg) {
    double base = Aphi.eval(p.t, p.x);
    if (!opts.use_eta) return base;
    spec.eval(p.t, p.x.data(), cv);
    double ph = phi.eval(p.t, p.x);
    double best = -INFINITY;
    for (const auto& e : etas) {
      Eigen::Map<const Eigen::VectorXd> eta(e.data(), spec.m);
      double v = 2.0 * opts.epsilon * opts.kappa0 * ph;
      for (int i = 0; i < d; ++i) {
        // b_eta replaces b: shift by <Bt_i eta, eta> in direction i.
        double extra = eta.dot(cv.Bt[i] * eta);
        v += extra * grad[i].eval(p.t, p.x);
      }
      if (v > best) {
        best = v;
        if (arg) *arg = e;
      }
    }
    return base + best;
  };
  auto sup_ratio = [&](const std::vector<SamplePoint>& pts, Witness* w) {
    double mu = -INFINITY;
    for (const auto& p : pts) {
      std::vector<double> eta;
      double v = op_value(p, &eta) / phi.eval(p.t, p.x);
      if (v > mu) {
        mu = v;
        if (w) *w = make_witness(p, v, eta);
      }
    }
    return mu;
  };
  auto boxes = two_boxes(spec, box);
  res.mu = sup_ratio(boxes.full, &res.witness);
  res.mu_half_box = sup_ratio(boxes.half, nullptr);
  res.finite = finite_by_doubling(res.mu_half_box, res.mu);
  res.sup_residual = -INFINITY;
  for (const auto& p : boxes.full)
    res.sup_residual = std::max(res.sup_residual, op_value(p, nullptr) - res.mu * phi.eval(p.t, p.x));

  // Three-radius fit of g(phi) = K - b0 phi^rho on spheres R = L/2, 3L/4, L.
  auto dirs = sphere_directions(d, 32);
  double gv[3], pv[3];
  for (int k = 0; k < 3; ++k) {
    double R = box.L * (0.5 + 0.25 * k);
    gv[k] = -INFINITY;
    pv[k] = -INFINITY;
    for (int it = 0; it < 5; ++it) {
      double t = spec.t_lo + (spec.t_hi - spec.t_lo) * it / 4.0;
      for (const auto& e : dirs) {
        SamplePoint p;
        p.t = t;
        p.x.resize(d);
        for (int i = 0; i < d; ++i) p.x[i] = R * e[i];
        gv[k] = std::max(gv[k], op_value(p, nullptr));
        pv[k] = std::max(pv[k], phi.eval(p.t, p.x));
      }
    }
  }
  bool decreasing = gv[2] < gv[1] && gv[1] < gv[0] && gv[2] < 0.0 && pv[0] < pv[1] && pv[1] < pv[2];
  if (decreasing) {
    double target = (gv[1] - gv[2]) / (gv[0] - gv[1]);
    auto F = [&](double rho) {
      return (std::pow(pv[2], rho) - std::pow(pv[1], rho)) / (std::pow(pv[1], rho) - std::pow(pv[0], rho));
    };
    double lo = 1e-3, hi = 20.0;
    if (F(lo) < target && F(hi) > target) {
      for (int it = 0; it < 200; ++it) {
        double mid = 0.5 * (lo + hi);
        (F(mid) < target ? lo : hi) = mid;
      }
      res.rho = 0.5 * (lo + hi);
    } else {
      res.rho = F(lo) >= target ? lo : hi;
    }
    res.b0 = (gv[0] - gv[2]) / (std::pow(pv[2], res.rho) - std::pow(pv[0], res.rho));
    res.K = -INFINITY;
    for (const auto& p : boxes.full)
      res.K = std::max(res.K, op_value(p, nullptr) + res.b0 * std::pow(phi.eval(p.t, p.x), res.rho));
    res.compact = res.b0 > 0.0 && res.rho > 1.05;
  }
  return res;
}

HypothesisReport check_hyp51(const OperatorSpec& spec, const WeightSpec& weight, const AuditBox& box,
                             double limit_threshold) {
  HypothesisReport r;
  r.hypothesis = "gradient-growth";
  const int d = spec.d, m = spec.m;
  if (weight.M.size() != d) throw std::invalid_argument("weight must be d x d");
  std::vector<std::vector<MatrixExpr>> dBt(d, std::vector<MatrixExpr>(d));
  std::vector<SymMatrixExpr> dC(d), dM(d), dQ(d);
  std::vector<std::vector<SymMatrixExpr>> d2M(d, std::vector<SymMatrixExpr>(d));
  std::vector<std::vector<CoeffExpr>> Jb(d, std::vector<CoeffExpr>(d));
  for (int k = 0; k < d; ++k) {
    for (int i = 0; i < d; ++i) {
      dBt[i][k] = spec.Bt[i].derivative(Var::x(k));
      Jb[i][k] = spec.b[i].derivative(Var::x(k));
    }
    dC[k] = spec.C.derivative(Var::x(k));
    dM[k] = weight.M.derivative(Var::x(k));
    dQ[k] = spec.Q.derivative(Var::x(k));
    for (int j = 0; j < d; ++j) d2M[k][j] = dM[k].derivative(Var::x(j));
  }
  SymMatrixExpr dtM = weight.M.derivative(Var::t());

  struct Q5 {
    double lamQ, LamQ, LamC, lamM, LamM, LamM2, psi1, psi2, psi3, psi4, psi5, psi6, D, b0, nx2;
  };
  auto quantities = [&](const SamplePoint& p) {
    CoeffValues cv;
    spec.eval(p.t, p.x.data(), cv);
    Eigen::MatrixXd M, Mi, tmp;
    weight.M.eval(p.t, p.x.data(), d, M);
    Mi = M.inverse();
    Q5 q{};
    q.lamQ = min_eig(cv.Q);
    q.LamQ = max_eig(cv.Q);
    q.LamC = max_eig(cv.C);
    q.lamM = min_eig(M);
    q.LamM = max_eig(M);
    q.LamM2 = max_eig(M * M);
    for (int i = 0; i < d; ++i) q.psi1 = std::max(q.psi1, cv.Bt[i].norm());
    for (int i = 0; i < d; ++i)
      for (int k = 0; k < d; ++k) {
        dBt[i][k].eval(p.t, p.x.data(), d, tmp);
        q.psi2 = std::max(q.psi2, tmp.norm());
      }
    for (int k = 0; k < d; ++k) {
      dC[k].eval(p.t, p.x.data(), d, tmp);
      q.psi3 = std::max(q.psi3, tmp.norm());
      dM[k].eval(p.t, p.x.data(), d, tmp);
      q.psi5 = std::max(q.psi5, tmp.norm());
      dQ[k].eval(p.t, p.x.data(), d, tmp);
      q.psi6 = std::max(q.psi6, tmp.norm());
    }
    dtM.eval(p.t, p.x.data(), d, tmp);
    q.psi4 = tmp.norm();
    Eigen::MatrixXd J(d, d);
    for (int i = 0; i < d; ++i)
      for (int k = 0; k < d; ++k) J(i, k) = Jb[i][k].eval(p.t, p.x);
    Eigen::MatrixXd calM = M * J.transpose() * Mi;
    for (int j = 0; j < d; ++j) {
      dM[j].eval(p.t, p.x.data(), d, tmp);
      calM -= cv.b(j) * tmp * Mi;
      for (int i = 0; i < d; ++i) {
        d2M[i][j].eval(p.t, p.x.data(), d, tmp);
        calM -= cv.Q(i, j) * tmp * Mi;
      }
    }
    q.D = 2.0 * q.LamC + max_eig(calM + calM.transpose());
    double nx2 = 0.0, bx = 0.0;
    for (int i = 0; i < d; ++i) {
      nx2 += p.x[i] * p.x[i];
      bx += cv.b(i) * p.x[i];
    }
    q.nx2 = nx2;
    q.b0 = nx2 > 1e-18 ? bx / std::sqrt(nx2) : std::numeric_limits<double>::quiet_NaN();
    return q;
  };

  using Fn = std::function<double(const Q5&)>;
  struct Spec {
    std::string name;
    std::string kind;
    bool required;
    Fn f;
  };
  const bool relaxed = weight.identity;
  std::vector<Spec> specs = {
      {"iesolo1a psi1^2*Lambda_M2/(lambda_Q*Lambda_M^2)", "finite", true,
       [](const Q5& q) { return q.psi1 * q.psi1 * q.LamM2 / (q.lamQ * q.LamM * q.LamM); }},
      {"iesolo1b Lambda_Q^2*Lambda_M2/((1+|x|^2)*lambda_Q^2)", "finite", !relaxed,
       [](const Q5& q) { return q.LamQ * q.LamQ * q.LamM2 / ((1 + q.nx2) * q.lamQ * q.lamQ); }},
      {"iesolo2a Lambda_Q^2/((1+|x|^4)*|D|)", "finite", !relaxed,
       [](const Q5& q) { return ratio(q.LamQ * q.LamQ / (1 + q.nx2 * q.nx2), q.D); }},
      {"iesolo2b Lambda_M^2*psi3^2/|D|", "finite", true,
       [](const Q5& q) { return ratio(q.LamM * q.LamM * q.psi3 * q.psi3, q.D); }},
      {"iesolo3a H", "limit0", true,
       [](const Q5& q) {
         double num = q.LamQ * q.LamQ * q.psi5 * q.psi5 + q.LamM * q.LamM * q.psi6 * q.psi6 + q.lamQ * q.psi1 * q.psi1;
         return ratio(num / (q.lamQ * q.lamM * q.lamM), q.D);
       }},
      {"iesolo3b (Lambda_M*psi2+psi4)/(lambda_M*|D|)", "limit0", true,
       [](const Q5& q) { return ratio((q.LamM * q.psi2 + q.psi4) / q.lamM, q.D); }},
      {"iesolo3c Lambda_Q*psi5/|b0|", "limit0", !relaxed,
       [](const Q5& q) { return std::isnan(q.b0) ? 0.0 : ratio(q.LamQ * q.psi5, q.b0); }},
  };

  auto boxes = two_boxes(spec, box);
  std::vector<Q5> full, half;
  for (const auto& p : boxes.full) full.push_back(quantities(p));
  for (const auto& p : boxes.half) half.push_back(quantities(p));
  const int n_shells = 8;
  auto shells = shell_samples(d, box.L, spec.t_lo, spec.t_hi, n_shells);
  std::vector<std::vector<Q5>> shell_q(n_shells);
  for (int s = 0; s < n_shells; ++s)
    for (const auto& p : shells[s]) shell_q[s].push_back(quantities(p));

  // Sign conditions.
  {
    double sup_b0 = -INFINITY, inf_lm = INFINITY;
    Witness wb, wl;
    for (std::size_t k = 0; k < full.size(); ++k) {
      if (!std::isnan(full[k].b0) && full[k].b0 > sup_b0) {
        sup_b0 = full[k].b0;
        wb = make_witness(boxes.full[k], sup_b0);
      }
      if (full[k].lamM < inf_lm) {
        inf_lm = full[k].lamM;
        wl = make_witness(boxes.full[k], inf_lm);
      }
    }
    r.conditions.push_back({"b0<0", "sign", true, sup_b0 < 0.0, sup_b0, {}, wb});
    r.conditions.push_back({"lambda_M>0", "sign", true, inf_lm > 0.0, inf_lm, {}, wl});
  }
  for (const auto& sp : specs) {
    Condition c;
    c.name = sp.name;
    c.kind = sp.kind;
    c.required = sp.required;
    if (sp.kind == "finite") {
      double sf = -INFINITY, sh = -INFINITY;
      for (std::size_t k = 0; k < full.size(); ++k) {
        double v = std::fabs(sp.f(full[k]));
        if (v > sf) {
          sf = v;
          c.witness = make_witness(boxes.full[k], v);
        }
      }
      for (const auto& q : half) sh = std::max(sh, std::fabs(sp.f(q)));
      c.value = sf;
      c.trend = {sh, sf};
      c.holds = finite_by_doubling(sh, sf);
    } else {
      for (int s = 0; s < n_shells; ++s) {
        double v = 0.0;
        for (std::size_t k = 0; k < shell_q[s].size(); ++k) {
          double a = std::fabs(sp.f(shell_q[s][k]));
          if (a > v) {
            v = a;
            if (s == n_shells - 1) c.witness = make_witness(shells[s][k], a);
          }
        }
        c.trend.push_back(v);
      }
      const auto& tr = c.trend;
      bool monotone = tr[n_shells - 1] <= tr[n_shells - 2] * (1 + 1e-12) &&
                      tr[n_shells - 2] <= tr[n_shells - 3] * (1 + 1e-12);
      c.value = tr.back();
      c.holds = std::isfinite(c.value) && monotone && c.value < limit_threshold;
    }
    r.conditions.push_back(std::move(c));
  }
  double sup_D = -INFINITY;
  for (const auto& q : shell_q[n_shells - 1]) sup_D = std::max(sup_D, q.D);
  r.values.emplace_back("outer_sup_D", sup_D);
  r.values.emplace_back("relaxed", relaxed ? 1.0 : 0.0);
  r.holds = true;
  for (const auto& c : r.conditions)
    if (c.required && !c.holds) r.holds = false;
  if (sup_D >= 0.0) r.note = "2*Lambda_C + Lambda_(M+M^T) is not negative on the outer shell";
  (void)m;
  return r;
}

}  // namespace kolmo
