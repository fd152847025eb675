#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>

#include "kolmo/fbsde.hpp"
#include "kolmo/parallel.hpp"
#include "kolmo/presets.hpp"
#include "kolmo/rng.hpp"

using namespace kolmo;
using nlohmann::json;

namespace {

DiffusionSpec ou_diffusion(const std::string& g = "tanh(x1)") {
  return DiffusionSpec::from_json({{"d", 1}, {"m", 1}, {"b", {"-x1"}}, {"G", {{1.0}}}, {"g", {g}}});
}

double sample_var(const std::vector<double>& v, double mean) {
  double s = 0.0;
  for (double x : v) s += (x - mean) * (x - mean);
  return s / (v.size() - 1);
}

}  // namespace

TEST_CASE("Philox4x32-10 known-answer vectors") {
  // Reference outputs published with the Random123 library.
  using A = std::array<std::uint32_t, 4>;
  CHECK(philox4x32_10({0, 0, 0, 0}, {0, 0}) == A{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8});
  CHECK(philox4x32_10({0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff}, {0xffffffff, 0xffffffff}) ==
        A{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd});
  CHECK(philox4x32_10({0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, {0xa4093822, 0x299f31d0}) ==
        A{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1});
}

TEST_CASE("gaussians are keyed, reproducible and standard") {
  double a[3], b[3], c[3];
  gaussians(7, 3, 5, 3, a);
  gaussians(7, 3, 5, 3, b);
  gaussians(7, 4, 5, 3, c);
  for (int i = 0; i < 3; ++i) CHECK(a[i] == b[i]);
  CHECK(a[0] != c[0]);
  const int n = 200000;
  double s = 0.0, s2 = 0.0, s4 = 0.0;
  for (int k = 0; k < n / 2; ++k) {
    double z[2];
    gaussians(11, static_cast<std::uint32_t>(k), 0, 2, z);
    for (double v : z) s += v, s2 += v * v, s4 += v * v * v * v;
  }
  CHECK(std::fabs(s / n) < 3.0 / std::sqrt(n));
  CHECK(std::fabs(s2 / n - 1.0) < 3.0 * std::sqrt(2.0 / n));
  CHECK(std::fabs(s4 / n - 3.0) < 3.0 * std::sqrt(96.0 / n));
}

TEST_CASE("Brownian motion moments") {
  auto ds = DiffusionSpec::from_json(
      {{"d", 2}, {"m", 1}, {"b", {0, 0}}, {"G", {{1, 0}, {0, 1}}}, {"g", {"0"}}});
  const std::size_t N = 100000;
  auto pb = simulate_forward(ds, {0.0, 0.0}, 0.0, 1.0, 0.25, N, 1);
  double m[2] = {0, 0}, c[3] = {0, 0, 0};
  for (std::size_t p = 0; p < N; ++p) {
    const double* x = pb.x(p, pb.steps);
    m[0] += x[0], m[1] += x[1];
    c[0] += x[0] * x[0], c[1] += x[0] * x[1], c[2] += x[1] * x[1];
  }
  for (double& v : m) v /= N;
  for (double& v : c) v /= N;
  CHECK(std::fabs(m[0]) < 3.0 / std::sqrt(N));
  CHECK(std::fabs(m[1]) < 3.0 / std::sqrt(N));
  CHECK(std::fabs(c[0] - 1.0) < 0.05);
  CHECK(std::fabs(c[2] - 1.0) < 0.05);
  CHECK(std::fabs(c[1]) < 0.05);
}

TEST_CASE("OU terminal variance") {
  auto ds = ou_diffusion();
  const std::size_t N = 100000;
  const double T = 1.0;
  auto pb = simulate_forward(ds, {0.5}, 0.0, T, 1.0 / 128, N, 2);
  std::vector<double> xs(N);
  double mean = 0.0;
  for (std::size_t p = 0; p < N; ++p) mean += xs[p] = pb.x(p, pb.steps)[0];
  mean /= N;
  double var = sample_var(xs, mean);
  double exact = (1.0 - std::exp(-2.0 * T)) / 2.0;
  CHECK(std::fabs(var - exact) <= 3.0 * exact * std::sqrt(2.0 / N));
  CHECK(std::fabs(mean - 0.5 * std::exp(-T)) <= 3.0 * std::sqrt(exact / N));
}

TEST_CASE("strong error under step halving with a shared Brownian tree") {
  auto ds = DiffusionSpec::from_json(
      {{"d", 1}, {"m", 1}, {"b", {"-x1"}}, {"G", {{"1 + 0.5*sin(x1)"}}}, {"g", {"0"}}});
  const std::size_t N = 4000;
  const int fine = 256;
  auto ref = simulate_forward(ds, {0.3}, 0.0, 1.0, 1.0 / fine, N, 9);
  std::vector<double> errs;
  for (int n : {16, 32, 64}) {
    auto pb = simulate_forward(ds, {0.3}, 0.0, 1.0, 1.0 / n, N, 9, fine / n);
    double s = 0.0;
    for (std::size_t p = 0; p < N; ++p) s += std::pow(pb.x(p, pb.steps)[0] - ref.x(p, ref.steps)[0], 2);
    errs.push_back(std::sqrt(s / N));
  }
  MESSAGE("strong errors ", errs[0], " ", errs[1], " ", errs[2]);
  CHECK(errs[1] < errs[0]);
  CHECK(errs[2] < errs[1]);
  double order = std::log2(errs[0] / errs[2]) / 2.0;
  CHECK(order > 0.3);
  CHECK(order < 1.2);
}

TEST_CASE("path batches are deterministic and schedule independent") {
  auto ds = ou_diffusion();
  auto a = simulate_forward(ds, {0.1}, 0.0, 1.0, 0.125, 1000, 5);
  auto b = simulate_forward(ds, {0.1}, 0.0, 1.0, 0.125, 1000, 5);
  CHECK(a.X == b.X);
  setenv("KOLMO_THREADS", "3", 1);
  CHECK(thread_count() == 3);
  auto c = simulate_forward(ds, {0.1}, 0.0, 1.0, 0.125, 1000, 5);
  unsetenv("KOLMO_THREADS");
  CHECK(a.X == c.X);
  CHECK(a.dW == c.dW);
  auto e = simulate_forward(ds, {0.1}, 0.0, 1.0, 0.125, 1000, 6);
  CHECK(a.X != e.X);
  CHECK_THROWS(simulate_forward(ds, {0.1}, 0.0, 1.0, 0.3, 10, 5));
}

TEST_CASE("path explosion is reported") {
  auto ds = DiffusionSpec::from_json({{"d", 1}, {"m", 1}, {"b", {"x1^3"}}, {"G", {{1.0}}}, {"g", {"0"}}});
  try {
    simulate_forward(ds, {2.0}, 0.0, 1.0, 0.1, 20, 3);
    FAIL("expected explosion");
  } catch (const PathExplosionError& e) {
    CHECK(!e.paths.empty());
  }
}

TEST_CASE("KPB1 round trip") {
  auto ds = ou_diffusion();
  auto pb = simulate_forward(ds, {0.0}, 0.0, 0.5, 0.125, 50, 4);
  auto path = (std::filesystem::temp_directory_path() / "kolmo_batch.kpb").string();
  pb.write(path);
  auto back = PathBatch::read(path);
  CHECK(back.X == pb.X);
  CHECK(back.dW == pb.dW);
  CHECK(back.rho == pb.rho);
  CHECK(back.seed == 4);
  CHECK(back.times == pb.times);
  std::filesystem::remove(path);
}

TEST_CASE("diffusion audit and induced operator") {
  auto ds = DiffusionSpec::from_json(json::parse(R"J({"d": 2, "m": 2, "b": ["-x1", "-x2"],
      "G": [["1 + 0.2*tanh(x1)", "0.1"], ["0.1", "1"]], "r1": ["0.3*tanh(x2)", "0"], "g": ["0", "0"]})J"));
  OperatorSpec op = ds.to_operator();
  auto a = audit_diffusion(ds, op, 3.0);
  CHECK(a.q_mismatch <= 1e-10);
  CHECK(a.lambda_G > 0.5);
  CHECK(a.holds);
  CHECK_FALSE(op.Bt[0].is_zero());
  CHECK(op.C.is_zero());
  CHECK_THROWS(DiffusionSpec::from_json({{"d", 1}, {"m", 1}, {"b", {"0"}}, {"G", {{1}}}, {"g", {"0"}}, {"oops", 1}}));
}

TEST_CASE("constant terminal data gives constant Y and zero Z") {
  auto ds = ou_diffusion("0.75");
  Grid g = Grid::make(1, 6.0, 121);
  auto sol = mild_solve(ds.to_operator(), Nonlinearity::zero(1, 1), sample(g, 1, ds.terminal(), Boundary::neumann),
                        0.5, 0.05);
  auto pb = simulate_forward(ds, {0.2}, 0.0, 0.5, 0.0625, 2000, 3);
  auto yz = identify_yz(sol, ds, pb);
  double ey = 0.0, ez = 0.0;
  for (double v : yz.Y) ey = std::max(ey, std::fabs(v - 0.75));
  for (double v : yz.Z) ez = std::max(ez, std::fabs(v));
  CHECK(ey <= 1e-8);
  CHECK(ez <= 1e-8);
}

TEST_CASE("bsde residual vanishes for H = 0 and constant g") {
  auto ds = ou_diffusion("0.75");
  auto pb = simulate_forward(ds, {0.2}, 0.0, 0.5, 0.0625, 500, 3);
  YZProcess yz;
  yz.N = pb.N, yz.steps = pb.steps, yz.d = 1, yz.m = 1;
  yz.Y.assign(pb.N * (pb.steps + 1), 0.75);
  yz.Z.assign(pb.N * (pb.steps + 1), 0.0);
  yz.valid.assign(pb.N, 1);
  auto r = bsde_residual(yz, ds, Nonlinearity::zero(1, 1), pb);
  CHECK(r.l2 == 0.0);
  for (double v : r.profile) CHECK(v == 0.0);
}

TEST_CASE("linear case: martingale property and Feynman-Kac") {
  auto ds = ou_diffusion();
  Grid g = Grid::make(1, 6.0, 241);
  const double T = 0.5;
  auto sol = mild_solve(ds.to_operator(), Nonlinearity::zero(1, 1), sample(g, 1, ds.terminal()), T, 2.5e-3);
  const std::size_t N = 100000;
  auto pb = simulate_forward(ds, {0.3}, 0.0, T, T / 64, N, 21);
  auto yz = identify_yz(sol, ds, pb);
  CHECK(yz.escaped == 0);
  std::vector<double> gT(N), dY(N);
  for (std::size_t p = 0; p < N; ++p) {
    gT[p] = std::tanh(pb.x(p, pb.steps)[0]);
    dY[p] = yz.y(p, pb.steps)[0] - yz.y(p, 0)[0];
  }
  auto [mg, sg] = mean_stderr(gT);
  auto [md, sd] = mean_stderr(dY);
  const double u0 = yz.y(0, 0)[0];
  MESSAGE("E g(X_T) = ", mg, " +- ", sg, ", u(0, x0) = ", u0);
  CHECK(std::fabs(mg - u0) <= 3.0 * sg);
  CHECK(std::fabs(md) <= 3.0 * sd);
}

TEST_CASE("bsde residual decreases under joint refinement for the tanh benchmark") {
  auto ds = ou_diffusion();
  auto nl = Nonlinearity::from_exprs(1, 1, {"0.5*tanh(z11)"}, 0.5, 1.0);
  Grid g = Grid::make(1, 6.0, 241);
  const double T = 0.5;
  auto sol = mild_solve(ds.to_operator(), nl, sample(g, 1, ds.terminal()), T, 2.5e-3);
  std::vector<double> res;
  for (int n : {32, 64, 128}) {
    auto pb = simulate_forward(ds, {0.3}, 0.0, T, T / n, 20000, 8, 128 / n);
    auto yz = identify_yz(sol, ds, pb);
    res.push_back(bsde_residual(yz, ds, nl, pb).l2);
  }
  MESSAGE("bsde residuals ", res[0], " ", res[1], " ", res[2]);
  CHECK(res[1] < res[0]);
  CHECK(res[2] < res[1]);
}

TEST_CASE("Girsanov weights") {
  auto ds0 = ou_diffusion();
  const std::size_t N = 100000;
  auto pb = simulate_forward(ds0, {0.0}, 0.0, 1.0, 1.0 / 32, N, 12);
  girsanov_weights(ds0, pb, constant_strategy({0.0}));
  CHECK(std::all_of(pb.rho.begin(), pb.rho.end(), [](double r) { return r == 1.0; }));

  const double c = 0.8, tau = 1.0;
  auto dsc = DiffusionSpec::from_json({{"d", 1}, {"m", 1}, {"b", {"-x1"}}, {"G", {{1.0}}}, {"r1", {c}}, {"g", {"0"}}});
  auto rep = girsanov_weights(dsc, pb, constant_strategy({0.0}), nullptr, 1.0);
  CHECK_FALSE(rep.bound_exceeded);
  auto [mr, sr] = mean_stderr(pb.rho);
  CHECK(std::fabs(mr - 1.0) <= 3.0 * sr);
  std::vector<double> lr(N);
  for (std::size_t p = 0; p < N; ++p) lr[p] = std::log(pb.rho[p]);
  auto [ml, sl] = mean_stderr(lr);
  CHECK(std::fabs(ml + 0.5 * c * c * tau) <= 3.0 * sl);
  double v = sample_var(lr, ml);
  CHECK(std::fabs(v - c * c * tau) <= 3.0 * c * c * tau * std::sqrt(2.0 / N));

  auto dsf = DiffusionSpec::from_json(
      {{"d", 1}, {"m", 1}, {"b", {"-x1"}}, {"G", {{1.0}}}, {"r1", {"tanh(x1)"}}, {"r2", {"0.5*u1"}},
       {"controls", {{-1, 1}}}, {"g", {"0"}}});
  auto rf = girsanov_weights(dsf, pb, constant_strategy({1.0}), nullptr, 1.0);
  CHECK(rf.bound_exceeded);
  auto [mf, sf] = mean_stderr(pb.rho);
  CHECK(std::fabs(mf - 1.0) <= 3.0 * sf);
}

TEST_CASE("cost functional oracles") {
  auto ds = DiffusionSpec::from_json(
      {{"d", 1}, {"m", 1}, {"b", {0}}, {"G", {{1.0}}}, {"h", {"1"}}, {"g", {"x1^2"}}});
  const std::size_t N = 50000;
  const double x0 = 0.4, T = 0.75;
  auto pb = simulate_forward(ds, {x0}, 0.0, T, T / 16, N, 31);
  girsanov_weights(ds, pb, constant_strategy({0.0}));
  auto c = cost(ds, pb, 0);
  // E[T + X_T^2] = T + x0^2 + T for Brownian motion.
  CHECK(std::fabs(c.value - (2 * T + x0 * x0)) <= 3.0 * c.stderr_);
  CHECK_FALSE(c.degenerate);

  auto pb2 = simulate_forward(ds, {x0}, 0.0, T, T / 16, N, 32);
  girsanov_weights(ds, pb2, constant_strategy({0.0}));
  auto c2 = cost(ds, pb2, 0);
  CHECK(std::fabs(c.value - c2.value) <= 3.0 * std::hypot(c.stderr_, c2.stderr_));

  auto dk = DiffusionSpec::from_json({{"d", 1}, {"m", 1}, {"b", {0}}, {"G", {{1.0}}}, {"g", {"2.5"}}});
  girsanov_weights(dk, pb, constant_strategy({0.0}));
  auto k = cost(dk, pb, 0);
  CHECK(k.value == 2.5);
  CHECK(k.stderr_ == 0.0);
}

TEST_CASE("escaping paths") {
  auto ds = ou_diffusion();
  Grid g = Grid::make(1, 0.5, 21);
  auto sol = mild_solve(ds.to_operator(), Nonlinearity::zero(1, 1), sample(g, 1, ds.terminal()), 0.5, 0.05);
  auto pb = simulate_forward(ds, {0.0}, 0.0, 0.5, 0.0625, 500, 3);
  CHECK_THROWS_AS(identify_yz(sol, ds, pb), EscapeError);
}
