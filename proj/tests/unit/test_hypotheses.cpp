#include <doctest.h>

#include "kolmo/hypotheses.hpp"
#include "kolmo/presets.hpp"

using namespace kolmo;
using nlohmann::json;

namespace {

CoeffExpr ex(const std::string& s, int d = 1, int m = 0) {
  ExprContext c;
  c.d = d;
  c.m = m;
  return parse_expr(s, c);
}

CoeffExpr phi(int d) { return ex("1 + normsq(x)", d); }

}  // namespace

TEST_CASE("ellipticity constant of presets") {
  CHECK(check_ellipticity(example_family("heat").op, {4.0, 200}).value("lambda0") == doctest::Approx(0.5));
  auto op = example_family("ex71ii", json{{"q", "1 + t"}}).op;
  auto r = check_ellipticity(op, {3.0, 200});
  CHECK(r.holds);
  CHECK(r.value("lambda0") == doctest::Approx(1.0));  // q(0) (1+0)^k
}

TEST_CASE("ellipticity failure carries a witness") {
  OperatorSpec op = OperatorSpec::zero(1, 1);
  op.Q.set(0, 0, ex("1 - normsq(x)"));
  auto r = check_ellipticity(op, {2.0, 100});
  CHECK_FALSE(r.holds);
  CHECK(std::fabs(r.conditions[0].witness.x[0]) == doctest::Approx(2.0));
  CHECK(r.value("lambda0") == doctest::Approx(-3.0));
}

TEST_CASE("scalar case with kappa = c gives K identically zero") {
  OperatorSpec op = OperatorSpec::zero(1, 1);
  op.Q.set(0, 0, CoeffExpr(1.0));
  op.b[0] = ex("-x1");
  op.C.set(0, 0, ex("0.5 - x1^2"));
  auto r = check_hyp22(op, 1.0, op.C(0, 0), {3.0, 300});
  CHECK(r.holds);
  CHECK(r.value("min_K") == doctest::Approx(0.0));
  CHECK(r.value("kappa0") == doctest::Approx(0.5));
}

TEST_CASE("K for a constant non-normal drift matches the hand computation") {
  // B = [[1,2],[0,1]], Q = 1, C = 0: the bracket is -4 cos^4(a) on the circle,
  // so min K = -4 + 4 eps kappa.
  OperatorSpec op = OperatorSpec::zero(1, 2);
  op.Q.set(0, 0, CoeffExpr(1.0));
  op.b[0] = CoeffExpr(1.0);
  op.Bt[0].set(0, 1, CoeffExpr(2.0));
  auto ok = check_hyp22(op, 1.0, CoeffExpr(1.0), {1.0, 20});
  CHECK(ok.value("min_K") == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(ok.holds);
  auto bad = check_hyp22(op, 1.0, CoeffExpr(0.9), {1.0, 20});
  CHECK(bad.value("min_K") == doctest::Approx(-0.4));
  CHECK_FALSE(bad.holds);
  CHECK(bad.conditions[0].witness.eta.size() == 2);
}

TEST_CASE("ex71i satisfies the quadratic-form condition on a large box") {
  auto op = example_family("ex71i", json{{"r", 1.0}, {"p", 3.0}, {"Bhat", {{1.0, 0.5}, {0.0, 1.0}}}}).op;
  auto r = check_hyp22(op, 1.0, CoeffExpr(1.0), {5.0, 1500});
  CHECK(r.holds);
}

TEST_CASE("growth bound: zero coupling gives xi = H = 0") {
  auto r = check_hyp23(example_family("ou").op, 0.5, {4.0, 200});
  CHECK(r.value("xi") == 0.0);
  CHECK(r.value("H") == 0.0);
  CHECK(r.holds);
}

TEST_CASE("growth bound for ex71ii defaults") {
  // xi = max|Btilde0| = 1 at x = 0; H = sup Lambda_C + m^2 d xi^2 / 4 = -1/2 + 1.
  auto r = check_hyp23(example_family("ex71ii").op, 0.5, {4.0, 500});
  CHECK(r.value("xi") == doctest::Approx(1.0));
  CHECK(r.value("H") == doctest::Approx(0.5));
  CHECK(r.holds);
}

TEST_CASE("growth bound flags a coupling that outgrows lambda_Q^sigma") {
  OperatorSpec op = OperatorSpec::zero(1, 2);
  op.Q.set(0, 0, CoeffExpr(1.0));
  op.Bt[0].set(0, 0, ex("1 + normsq(x)"));
  auto r = check_hyp23(op, 0.1, {4.0, 200});
  CHECK_FALSE(r.holds);
  CHECK_FALSE(r.find("xi finite")->holds);
}

TEST_CASE("Lyapunov probe: OU is dissipative but not compact") {
  auto res = lyapunov_probe(example_family("ou").op, phi(1), {4.0, 400});
  CHECK(res.mu == doctest::Approx(1.0));  // max of (1 - 2x^2)/(1 + x^2)
  CHECK(res.sup_residual <= 1e-12);
  CHECK(res.finite);
  CHECK_FALSE(res.compact);
  CHECK(res.rho == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("Lyapunov probe: flat operator has A phi = 2d") {
  OperatorSpec op = OperatorSpec::zero(2, 1);
  op.Q = SymMatrixExpr::diagonal(2, CoeffExpr(1.0));
  auto res = lyapunov_probe(op, phi(2), {3.0, 300});
  CHECK(res.mu == doctest::Approx(4.0));
  CHECK(res.witness.x[0] == 0.0);
  CHECK_FALSE(res.compact);
}

TEST_CASE("Lyapunov probe: ex71ii is compact with rho near r + 1") {
  auto res = lyapunov_probe(example_family("ex71ii").op, phi(1), {6.0, 400});
  CHECK(res.compact);
  CHECK(res.rho > 1.5);
  CHECK(res.rho < 2.5);
  CHECK(res.b0 > 0.0);
}

TEST_CASE("Lyapunov probe: outward drift is not finite") {
  OperatorSpec op = OperatorSpec::zero(1, 1);
  op.Q.set(0, 0, CoeffExpr(1.0));
  op.b[0] = ex("x1*(1+normsq(x))");
  auto res = lyapunov_probe(op, phi(1), {4.0, 200});
  CHECK_FALSE(res.finite);
}

TEST_CASE("gradient-growth conditions for ex72 defaults") {
  Family f = example_family("ex72");
  auto r = check_hyp51(f.op, f.weight, {8.0, 1500});
  for (const auto& c : r.conditions) CHECK_MESSAGE(c.holds, c.name);
  CHECK(r.holds);
}

TEST_CASE("gradient-growth: identity weight uses the reduced set") {
  OperatorSpec op = OperatorSpec::zero(1, 1);
  op.Q.set(0, 0, CoeffExpr(1.0));
  op.b[0] = ex("-x1");
  auto r = check_hyp51(op, WeightSpec::unit(1), {8.0, 500});
  CHECK(r.holds);
  CHECK(r.value("relaxed") == 1.0);
}

TEST_CASE("gradient-growth: superlinear weight breaks the second growth ratio") {
  Family f = example_family("ex72");
  WeightSpec w = WeightSpec::scalar(1, ex("1 + normsq(x)"));
  auto r = check_hyp51(f.op, w, {8.0, 800});
  CHECK_FALSE(r.holds);
  CHECK_FALSE(r.find("iesolo1b Lambda_Q^2*Lambda_M2/((1+|x|^2)*lambda_Q^2)")->holds);
}

TEST_CASE("reports serialize to JSON") {
  auto r = check_ellipticity(example_family("heat").op, {2.0, 10});
  auto j = r.to_json();
  CHECK(j["holds"] == true);
  CHECK(j["values"]["lambda0"].get<double>() == doctest::Approx(0.5));
}
