#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "kolmo/game.hpp"

using namespace kolmo;
using nlohmann::json;

namespace {

DiffusionSpec single_player() {
  return DiffusionSpec::from_json(json::parse(R"J({"d": 1, "m": 1, "b": ["-x1"], "G": [[1]], "r2": ["u1"],
      "controls": [[-1, -0.5, 0, 0.5, 1]], "h": ["0.5*u1^2"], "g": ["-tanh(x1)"]})J"));
}

DiffusionSpec separable_pair() {
  return DiffusionSpec::from_json(json::parse(R"J({"d": 2, "m": 2, "b": ["-x1", "-x2"], "G": [[1, 0], [0, 1]],
      "r2": ["u1", "u2"], "controls": [[-1, -0.5, 0, 0.5, 1], [-1, -0.5, 0, 0.5, 1]],
      "h": ["0.5*u1^2", "0.5*u2^2"], "g": ["-tanh(x1)", "-tanh(x2)"]})J"));
}

// argmin over the control set of player i with the others fixed, lowest index on ties.
int brute_argmin(const DiffusionSpec& ds, const double*, const double* Z, std::vector<double> u, int i) {
  int arg = 0;
  double best = INFINITY;
  for (std::size_t v = 0; v < ds.controls[i].size(); ++v) {
    u[i] = ds.controls[i][v];
    double val = 0.0;
    for (int a = 0; a < ds.d; ++a) val += Z[a * ds.m + i] * u[a];  // r2 = u in both fixtures
    val += 0.5 * u[i] * u[i];
    if (val < best) best = val, arg = static_cast<int>(v);
  }
  return arg;
}

}  // namespace

TEST_CASE("degenerate game selects the first profile") {
  auto ds = DiffusionSpec::from_json(json::parse(R"J({"d": 1, "m": 2, "b": ["0"], "G": [[1]],
      "controls": [[2, 1], [5, 4, 3]], "h": ["x1", "x1^2"], "g": ["0", "0"]})J"));
  double x = 0.3, Z[2] = {1.7, -0.4};
  auto s = minimax_select(ds, &x, Z);
  CHECK(s.index == std::vector<int>{0, 0});
  CHECK(s.u == std::vector<double>{2, 5});
  CHECK(s.sweeps == 1);
}

TEST_CASE("single player selection is the exhaustive minimum") {
  auto ds = single_player();
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> U(-2.0, 2.0);
  std::vector<MinimaxSample> samples;
  for (int k = 0; k < 200; ++k) samples.push_back({{U(gen)}, {U(gen)}});
  auto tab = minimax_table(ds, samples);
  for (std::size_t k = 0; k < samples.size(); ++k)
    CHECK(tab[k].index[0] == brute_argmin(ds, samples[k].x.data(), samples[k].Z.data(), {0.0}, 0));
  CHECK_THROWS(minimax_table(ds, {{{0.0}, {1.0, 2.0}}}));
}

TEST_CASE("separable two-player selection equals independent argmins") {
  auto ds = separable_pair();
  std::mt19937_64 gen(9);
  std::uniform_real_distribution<double> U(-2.0, 2.0);
  for (int k = 0; k < 200; ++k) {
    double x[2] = {U(gen), U(gen)}, Z[4] = {U(gen), U(gen), U(gen), U(gen)};
    auto s = minimax_select(ds, x, Z);
    CHECK(s.index[0] == brute_argmin(ds, x, Z, {0.0, 0.0}, 0));
    CHECK(s.index[1] == brute_argmin(ds, x, Z, {0.0, 0.0}, 1));
    CHECK(s.sweeps <= 2);
  }
}

TEST_CASE("matching pennies has no pure fixed point") {
  auto ds = DiffusionSpec::from_json(json::parse(R"J({"d": 1, "m": 2, "b": ["0"], "G": [[1]],
      "controls": [[-1, 1], [-1, 1]], "h": ["u1*u2", "-u1*u2"], "g": ["0", "0"]})J"));
  double x = 0.0, Z[2] = {0.0, 0.0};
  CHECK_THROWS_AS(minimax_select(ds, &x, Z), MinimaxCycleError);
}

TEST_CASE("game nonlinearity is minus the minimized Hamiltonian at sqrt2 z") {
  auto ds = single_player();
  auto nl = game_nonlinearity(ds, 3.0);
  CHECK(nl.growth_c == doctest::Approx(std::sqrt(2.0)));
  double x = 0.1, out = 0.0;
  double z = 0.0;
  nl(&x, &z, &out);
  CHECK(out == 0.0);
  z = 1.0 / std::sqrt(2.0);  // min_v (v + v^2 / 2) = -1/2 at v = -1
  nl(&x, &z, &out);
  CHECK(out == doctest::Approx(0.5));
  z = -0.25 / std::sqrt(2.0);  // min over the set at v = 0.5: -0.125 + 0.125 = 0 ties v = 0, first wins
  nl(&x, &z, &out);
  CHECK(out == doctest::Approx(0.0));
  CHECK(sampled_growth(nl, 3.0, 5.0) <= nl.growth_c * (1.0 + 1e-12));
}

TEST_CASE("single player Nash check against exhaustive constant strategies") {
  auto ds = single_player();
  const double T = 0.5, L = 6.0;
  auto nl = game_nonlinearity(ds, L);
  Grid g = Grid::make(1, L, 241);
  auto sol = mild_solve(ds.to_operator(), nl, sample(g, 1, ds.terminal()), T, 5e-3);
  const std::vector<double> V = ds.controls[0];
  const std::size_t N = 20000;
  auto rep = nash_check(ds, sol, {0.2}, 0.0, {V}, N, 17, T / 32);
  CHECK(rep.escaped == 0);
  CHECK(std::fabs(rep.rho_mean - 1.0) <= 3.0 * rep.rho_stderr);
  CHECK(std::fabs(rep.J[0] - rep.Y0[0]) <= 3.0 * rep.J_stderr[0] + 0.01);

  // Oracle: every constant strategy on the same paths.
  auto pb = simulate_forward(ds, {0.2}, 0.0, T, T / 32, N, 17);
  auto yz = identify_yz(sol, ds, pb);
  bool beats_all = true;
  REQUIRE(rep.rows.size() == V.size());
  for (std::size_t k = 0; k < V.size(); ++k) {
    girsanov_weights(ds, pb, constant_strategy({V[k]}));
    double Jv = cost(ds, pb, 0, &yz.valid).value;
    CHECK(rep.rows[k].dJ == doctest::Approx(Jv - rep.J[0]).epsilon(1e-9).scale(1.0));
    beats_all = beats_all && rep.rows[k].dJ >= -3.0 * rep.rows[k].stderr_;
  }
  CHECK(rep.pass == beats_all);
  CHECK(rep.pass);
  CHECK(rep.rows[0].dJ > 3.0 * rep.rows[0].stderr_);  // pushing down is strictly worse
}

TEST_CASE("separable two-player Nash check") {
  auto ds = separable_pair();
  const double T = 0.5, L = 5.0;
  auto nl = game_nonlinearity(ds, L);
  Grid g = Grid::make(2, L, 51);
  auto sol = mild_solve(ds.to_operator(), nl, sample(g, 2, ds.terminal()), T, 1e-2);
  auto rep = nash_check(ds, sol, {0.1, -0.2}, 0.0, ds.controls, 8000, 23, T / 32);
  CHECK(rep.pass);
  CHECK_FALSE(rep.degenerate_weights);
  for (const auto& r : rep.rows) {
    if (r.deviation <= -0.5) CHECK(r.dJ > 3.0 * r.stderr_);
  }
}

TEST_CASE("degenerate game has zero deviation gains") {
  auto ds = DiffusionSpec::from_json(json::parse(R"J({"d": 1, "m": 2, "b": ["-x1"], "G": [[1]],
      "controls": [[0, 1], [-1, 1]], "h": ["x1^2", "1"], "g": ["tanh(x1)", "0"]})J"));
  Grid g = Grid::make(1, 6.0, 121);
  auto sol = mild_solve(ds.to_operator(), game_nonlinearity(ds, 6.0), sample(g, 2, ds.terminal()), 0.5, 0.01);
  auto rep = nash_check(ds, sol, {0.0}, 0.0, ds.controls, 2000, 4, 0.5 / 16);
  CHECK(rep.pass);
  for (const auto& r : rep.rows) {
    CHECK(r.dJ == 0.0);
    CHECK(r.stderr_ == 0.0);
  }
}

TEST_CASE("Nash report output") {
  auto ds = single_player();
  Grid g = Grid::make(1, 6.0, 121);
  auto sol = mild_solve(ds.to_operator(), game_nonlinearity(ds, 6.0), sample(g, 1, ds.terminal()), 0.5, 0.01);
  auto rep = nash_check(ds, sol, {0.0}, 0.0, {{-1, 1}}, 2000, 4, 0.5 / 16);
  auto again = nash_check(ds, sol, {0.0}, 0.0, {{-1, 1}}, 2000, 4, 0.5 / 16);
  json j = rep.to_json();
  CHECK(j.dump() == again.to_json().dump());
  CHECK(j["deviations"].size() == 2);
  CHECK(j["verdict"] == (rep.pass ? "PASS" : "FAIL"));
  CHECK(j.contains("girsanov_form"));
  auto path = std::filesystem::temp_directory_path() / "kolmo_nash_test.csv";
  rep.write_csv(path.string());
  std::ifstream is(path);
  std::string line;
  std::getline(is, line);
  CHECK(line == "player,deviation,dJ,stderr,pass");
  int rows = 0;
  while (std::getline(is, line)) ++rows;
  CHECK(rows == 2);
  std::filesystem::remove(path);
  CHECK_THROWS(nash_check(ds, sol, {0.0}, 0.0, {{-1}, {1}}, 10, 4, 0.5 / 16));
}
