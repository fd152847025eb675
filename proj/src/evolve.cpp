#include "kolmo/evolve.hpp"

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>
#include <cmath>
#include <sstream>

namespace kolmo {

using SpMat = Eigen::SparseMatrix<double>;
using Solver = Eigen::BiCGSTAB<SpMat, Eigen::DiagonalPreconditioner<double>>;
using Direct = Eigen::SparseLU<SpMat, Eigen::COLAMDOrdering<int>>;

// One linear system per block of coupled components: a single block holding all
// components in general, one block per component when the operator is decoupled.
struct Evolver::System {
  struct Block {
    std::vector<int> comps;
    SpMat A;
    std::unique_ptr<Solver> solver;
    // Set once BiCGSTAB has failed on the current matrix.
    std::unique_ptr<Direct> direct;
  };
  std::vector<Block> blocks;
  double t_new = std::nan("");
  double h = std::nan("");
};

namespace {

struct Entry {
  std::size_t col;
  double v;
};

// Assemble I - h*A_h for the components in `comps` at time t_new.
SpMat assemble(const OperatorSpec& spec, const Grid& g, Boundary bc, const std::vector<int>& comps, double t_new,
               double h) {
  const int d = g.d;
  const int mb = static_cast<int>(comps.size());
  const std::size_t N = g.nodes();
  const double dx = g.h();
  const double dx2 = dx * dx;
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(N * mb * (1 + 2 * d * mb + (d == 2 ? 4 : 0)));

  CoeffValues cv;
  double x[2];
  std::vector<Entry> row;
  for (std::size_t p = 0; p < N; ++p) {
    if (bc == Boundary::dirichlet && g.on_boundary(p)) {
      for (int jj = 0; jj < mb; ++jj) {
        std::size_t r = p * mb + jj;
        trip.emplace_back(static_cast<int>(r), static_cast<int>(r), 1.0);
      }
      continue;
    }
    g.point(p, x);
    spec.eval(t_new, x, cv);

    // Neighbours along each axis, reflected at Neumann faces.
    std::size_t nb_minus[2], nb_plus[2];
    bool face[2] = {false, false};
    for (int a = 0; a < d; ++a) {
      int i = g.index(p, a);
      std::size_t st = g.stride(a);
      if (i == 0) {
        nb_minus[a] = p + st;
        nb_plus[a] = p + st;
        face[a] = true;
      } else if (i == g.n - 1) {
        nb_minus[a] = p - st;
        nb_plus[a] = p - st;
        face[a] = true;
      } else {
        nb_minus[a] = p - st;
        nb_plus[a] = p + st;
      }
    }

    for (int jj = 0; jj < mb; ++jj) {
      const int j = comps[jj];
      row.clear();
      auto add = [&](std::size_t node, int kk, double v) { row.push_back({node * mb + kk, v}); };
      for (int a = 0; a < d; ++a) {
        const double q = cv.Q(a, a);
        add(nb_minus[a], jj, q / dx2);
        add(nb_plus[a], jj, q / dx2);
        add(p, jj, -2.0 * q / dx2);
        if (face[a]) continue;  // normal derivative vanishes
        for (int kk = 0; kk < mb; ++kk) {
          const int k = comps[kk];
          double B = (j == k ? cv.b(a) : 0.0) + cv.Bt[a](j, k);
          if (B == 0.0) continue;
          if (j == k && !(q > 0.0 && std::fabs(B) * dx / q <= 2.0)) {
            if (B > 0) {
              add(nb_plus[a], kk, B / dx);
              add(p, kk, -B / dx);
            } else {
              add(p, kk, B / dx);
              add(nb_minus[a], kk, -B / dx);
            }
          } else {
            add(nb_plus[a], kk, B / (2.0 * dx));
            add(nb_minus[a], kk, -B / (2.0 * dx));
          }
        }
      }
      if (d == 2 && !face[0] && !face[1]) {
        const double q01 = cv.Q(0, 1);
        if (q01 != 0.0) {
          const double c = 2.0 * q01 / (4.0 * dx2);
          const std::size_t s1 = g.stride(1);
          add(p + 1 + s1, jj, c);
          add(p - 1 - s1, jj, c);
          add(p + 1 - s1, jj, -c);
          add(p - 1 + s1, jj, -c);
        }
      }
      for (int kk = 0; kk < mb; ++kk) {
        double c = cv.C(j, comps[kk]);
        if (c != 0.0) add(p, kk, c);
      }
      const std::size_t r = p * mb + jj;
      trip.emplace_back(static_cast<int>(r), static_cast<int>(r), 1.0);
      for (const auto& e : row) trip.emplace_back(static_cast<int>(r), static_cast<int>(e.col), -h * e.v);
    }
  }
  SpMat A(static_cast<int>(N * mb), static_cast<int>(N * mb));
  A.setFromTriplets(trip.begin(), trip.end());
  A.makeCompressed();
  return A;
}

}  // namespace

Evolver::Evolver(OperatorSpec spec, Grid grid, Boundary bc, SolverOptions opts)
    : spec_(std::move(spec)), grid_(grid), bc_(bc), opts_(opts) {
  if (spec_.d != grid_.d) throw std::invalid_argument("operator and grid dimensions differ");
  decoupled_ = spec_.decoupled();
  autonomous_ = !spec_.time_dependent();
  sys_ = std::make_unique<System>();
  if (decoupled_) {
    for (int j = 0; j < spec_.m; ++j) sys_->blocks.push_back({{j}, {}, std::make_unique<Solver>(), nullptr});
  } else {
    System::Block b;
    for (int j = 0; j < spec_.m; ++j) b.comps.push_back(j);
    b.solver = std::make_unique<Solver>();
    sys_->blocks.push_back(std::move(b));
  }
}

Evolver::~Evolver() = default;
Evolver::Evolver(Evolver&&) noexcept = default;
Evolver& Evolver::operator=(Evolver&&) noexcept = default;

int Evolver::step_count(double s, double t, double dt) {
  if (!(dt > 0)) throw std::invalid_argument("time step must be positive");
  double r = (t - s) / dt;
  return std::max(1, static_cast<int>(std::ceil(r - 1e-9)));
}

void Evolver::check_times(double s, double t) const {
  if (t < s) throw std::invalid_argument("evolution requires t >= s");
  const double eps = 1e-12 * std::max(1.0, std::fabs(spec_.t_hi - spec_.t_lo));
  if (s < spec_.t_lo - eps || t > spec_.t_hi + eps) {
    std::ostringstream os;
    os << "times [" << s << ", " << t << "] outside the operator's interval [" << spec_.t_lo << ", " << spec_.t_hi
       << "]";
    throw std::invalid_argument(os.str());
  }
}

void Evolver::prepare(double t_new, double h) {
  if (sys_->h == h && (autonomous_ || sys_->t_new == t_new)) return;
  for (auto& b : sys_->blocks) {
    b.A = assemble(spec_, grid_, bc_, b.comps, t_new, h);
    b.solver->setTolerance(opts_.tol);
    b.solver->setMaxIterations(opts_.max_iter);
    b.solver->compute(b.A);
    if (b.solver->info() != Eigen::Success) throw SolverError("preconditioner setup failed");
    b.direct.reset();
  }
  sys_->t_new = t_new;
  sys_->h = h;
}

void Evolver::step(std::vector<double>& u, double t_new, double h) {
  prepare(t_new, h);
  const std::size_t N = grid_.nodes();
  const int m = spec_.m;
  for (auto& b : sys_->blocks) {
    const int mb = static_cast<int>(b.comps.size());
    Eigen::VectorXd rhs(static_cast<Eigen::Index>(N * mb));
    for (std::size_t p = 0; p < N; ++p)
      for (int jj = 0; jj < mb; ++jj) rhs[p * mb + jj] = u[p * m + b.comps[jj]];
    if (bc_ == Boundary::dirichlet)
      for (std::size_t p = 0; p < N; ++p)
        if (grid_.on_boundary(p))
          for (int jj = 0; jj < mb; ++jj) rhs[p * mb + jj] = 0.0;
    Eigen::VectorXd sol;
    if (!b.direct) {
      sol = b.solver->solveWithGuess(rhs, rhs);
      if (b.solver->info() != Eigen::Success) {
        // Strongly advection-dominated rows can stall BiCGSTAB; fall back to a sparse LU
        // factorization and keep it for the remaining steps with this matrix.
        b.direct = std::make_unique<Direct>();
        b.direct->compute(b.A);
        ++direct_fallbacks_;
        if (b.direct->info() != Eigen::Success) {
          std::ostringstream os;
          os << "linear solver did not converge at t=" << t_new << " (iterations " << b.solver->iterations()
             << ", relative residual " << b.solver->error() << ") and the direct fallback failed";
          throw SolverError(os.str());
        }
      }
    }
    if (b.direct) {
      sol = b.direct->solve(rhs);
      if (b.direct->info() != Eigen::Success) throw SolverError("direct solve failed");
      const double rel = (b.A * sol - rhs).norm() / std::max(rhs.norm(), 1e-300);
      if (rhs.norm() > 0 && rel > opts_.tol) {
        std::ostringstream os;
        os << "linear solve residual " << rel << " above tolerance at t=" << t_new;
        throw SolverError(os.str());
      }
    }
    for (std::size_t p = 0; p < N; ++p)
      for (int jj = 0; jj < mb; ++jj) {
        double v = sol[p * mb + jj];
        if (!(std::fabs(v) <= opts_.blowup)) {
          std::ostringstream os;
          os << "solution blew up (|u| > " << opts_.blowup << ") at t=" << t_new;
          throw BlowUpError(os.str(), t_new);
        }
        u[p * m + b.comps[jj]] = v;
      }
  }
}

std::vector<GridFunction> Evolver::evolve_many(const std::vector<GridFunction>& fs, double s, double t, double dt) {
  check_times(s, t);
  std::vector<GridFunction> out = fs;
  for (auto& u : out) {
    if (!(u.grid == grid_) || u.m != spec_.m) throw std::invalid_argument("initial datum does not match grid/spec");
    u.bc = bc_;
    u.t = t;
  }
  if (t == s) return out;
  const int n = step_count(s, t, dt);
  const double h = (t - s) / n;
  for (int k = 1; k <= n; ++k) {
    const double tk = (k == n) ? t : s + k * h;
    for (auto& u : out) step(u.values, tk, h);
  }
  return out;
}

GridFunction Evolver::evolve(const GridFunction& f, double s, double t, double dt) {
  return std::move(evolve_many({f}, s, t, dt).front());
}

std::vector<GridFunction> Evolver::evolve_on_ladder(const GridFunction& f, const std::vector<double>& times,
                                                    double dt) {
  std::vector<GridFunction> out;
  if (times.empty()) return out;
  out.push_back(f);
  out.back().t = times.front();
  out.back().bc = bc_;
  for (std::size_t i = 1; i < times.size(); ++i) {
    if (times[i] < times[i - 1]) throw std::invalid_argument("time ladder must be increasing");
    out.push_back(evolve(out.back(), times[i - 1], times[i], dt));
  }
  return out;
}

GridFunction evolve(const OperatorSpec& spec, const GridFunction& f, double s, double t, double dt, Boundary bc) {
  Evolver ev(spec, f.grid, bc);
  return ev.evolve(f, s, t, dt);
}

Gradient gradient(const GridFunction& u) {
  const Grid& g = u.grid;
  Gradient G{g, u.m, std::vector<double>(g.nodes() * u.m * g.d, 0.0)};
  const double h = g.h();
  for (std::size_t p = 0; p < g.nodes(); ++p) {
    for (int a = 0; a < g.d; ++a) {
      const int i = g.index(p, a);
      const std::size_t st = g.stride(a);
      for (int j = 0; j < u.m; ++j) {
        double v;
        if (i == 0)
          v = (-3.0 * u.at(p, j) + 4.0 * u.at(p + st, j) - u.at(p + 2 * st, j)) / (2.0 * h);
        else if (i == g.n - 1)
          v = (3.0 * u.at(p, j) - 4.0 * u.at(p - st, j) + u.at(p - 2 * st, j)) / (2.0 * h);
        else
          v = (u.at(p + st, j) - u.at(p - st, j)) / (2.0 * h);
        G.values[(p * u.m + j) * g.d + a] = v;
      }
    }
  }
  return G;
}

double sup_diff(const GridFunction& u, const GridFunction& v, double pL) {
  if (!(u.grid == v.grid) || u.m != v.m) throw std::invalid_argument("grid functions differ in shape");
  double s = 0.0;
  for (std::size_t p = 0; p < u.grid.nodes(); ++p) {
    if (!u.grid.in_box(p, pL)) continue;
    double a = 0.0;
    for (int j = 0; j < u.m; ++j) {
      double e = u.at(p, j) - v.at(p, j);
      a += e * e;
    }
    s = std::max(s, std::sqrt(a));
  }
  return s;
}

namespace {

// sup over the probe box of |u - v| for grids with equal spacing and nested boxes.
double probe_delta(const GridFunction& small, const GridFunction& large, double pL) {
  const Grid& gs = small.grid;
  const Grid& gl = large.grid;
  const long off = std::lround((gl.L - gs.L) / gs.h());
  double s = 0.0;
  for (std::size_t p = 0; p < gs.nodes(); ++p) {
    if (!gs.in_box(p, pL)) continue;
    std::size_t q = 0;
    for (int a = 0; a < gs.d; ++a) q += static_cast<std::size_t>(gs.index(p, a) + off) * gl.stride(a);
    double acc = 0.0;
    for (int j = 0; j < small.m; ++j) {
      double e = small.at(p, j) - large.at(q, j);
      acc += e * e;
    }
    s = std::max(s, std::sqrt(acc));
  }
  return s;
}

}  // namespace

EvolveReport evolve_inflated(const OperatorSpec& spec, const VectorField& f, double s, double t, double dt, double h,
                             const std::vector<double>& L_list, double probe_L, double tol, Boundary bc) {
  if (L_list.empty()) throw std::invalid_argument("empty inflation ladder");
  for (std::size_t i = 1; i < L_list.size(); ++i)
    if (!(L_list[i] > L_list[i - 1])) throw std::invalid_argument("inflation ladder must be strictly increasing");
  if (!(probe_L < L_list.front())) throw std::invalid_argument("probe box must lie inside the smallest box");

  EvolveReport rep;
  GridFunction prev;
  for (std::size_t i = 0; i < L_list.size(); ++i) {
    Grid g = Grid::with_spacing(spec.d, L_list[i], h);
    GridFunction u0 = sample(g, spec.m, f, bc, s);
    GridFunction u = evolve(spec, u0, s, t, dt, bc);
    double delta = i == 0 ? std::nan("") : probe_delta(prev, u, probe_L);
    rep.inflation_history.emplace_back(L_list[i], delta);
    prev = std::move(u);
  }
  const auto& hist = rep.inflation_history;
  const std::size_t k = hist.size();
  if (k >= 3 && hist[k - 1].second > hist[k - 2].second && hist[k - 1].second > tol)
    throw NotConvergedError("not converged on audited domains: inflation deltas increase");
  rep.converged = k >= 2 && hist.back().second <= tol;
  rep.grad = gradient(prev);
  rep.solution = std::move(prev);
  return rep;
}

double compose_check(const OperatorSpec& spec, const GridFunction& f, double s, double r, double t, double dt,
                     Boundary bc) {
  if (!(s <= r && r <= t)) throw std::invalid_argument("compose_check requires s <= r <= t");
  Evolver ev(spec, f.grid, bc);
  GridFunction direct = ev.evolve(f, s, t, dt);
  GridFunction mid = ev.evolve(f, s, r, dt);
  GridFunction two = ev.evolve(mid, r, t, dt);
  return sup_diff(direct, two, 0.5 * f.grid.L);
}

}  // namespace kolmo
