#include <doctest.h>

#include "kolmo/presets.hpp"

using namespace kolmo;
using nlohmann::json;

TEST_CASE("every family builds with defaults and passes load-time guards") {
  for (const auto& name : family_names()) {
    Family f = example_family(name);
    CHECK(f.op.d == f.params["d"].get<int>());
    CHECK_NOTHROW(f.op.validate(4.0));
    CHECK(check_family_params(name).all_hold());
  }
}

TEST_CASE("unknown family and unknown parameters are rejected") {
  CHECK_THROWS_AS(example_family("ex99"), UnknownFamily);
  CHECK_THROWS_AS(example_family("heat", json{{"qq", 1.0}}), std::invalid_argument);
}

TEST_CASE("ex71i coefficients at a point") {
  Family f = example_family("ex71i", json{{"r", 1.0}, {"p", 3.0}});
  CoeffValues cv;
  double x[2] = {1.0, 0.0};
  f.op.eval(0.5, x, cv);
  CHECK(cv.Q(0, 0) == 1.0);
  CHECK(cv.Q(0, 1) == 0.0);
  CHECK(cv.b(0) == doctest::Approx(-2.0));  // -x1 (1+|x|^2)^r
  CHECK(cv.C(0, 0) == doctest::Approx(-8.0));  // -|x|^2 (1+|x|^2)^p
  CHECK(cv.C(0, 1) == 0.0);
}

TEST_CASE("ex71i rejects p <= 2r") {
  auto chk = check_family_params("ex71i", json{{"r", 2.0}, {"p", 3.0}});
  CHECK_FALSE(chk.all_hold());
  REQUIRE(chk.find("p>2r"));
  CHECK_FALSE(chk.find("p>2r")->holds);
  CHECK(chk.find("p>2r")->slack == doctest::Approx(-1.0));
}

TEST_CASE("ex71ii standard parameters satisfy all constraints") {
  auto chk = check_family_params("ex71ii", json{{"k", 1.0}, {"r", 1.0}, {"p", 0.4}, {"gamma", 0.5}, {"sigma", 0.5}});
  CHECK(chk.all_hold());
  CHECK(chk.find("p<=k*sigma")->slack == doctest::Approx(0.1));
}

TEST_CASE("ex72 with p=1, s=1/2, tau=0 violates only 2s+2tau<=a") {
  auto chk = check_family_params("ex72", json{{"k", 0.0}, {"r", 0.0}, {"p", 1.0}, {"s", 0.5}, {"tau", 0.0}});
  for (const auto& item : chk.items) {
    if (item.name == "2s+2tau<=a") {
      CHECK_FALSE(item.holds);
      CHECK(item.slack == doctest::Approx(-1.0));
    } else {
      CHECK_MESSAGE(item.holds, item.name);
    }
  }
}

TEST_CASE("ex72 weight is (1+|x|^2)^s") {
  Family f = example_family("ex72", json{{"s", 0.5}, {"p", 2.0}});
  CHECK_FALSE(f.weight.identity);
  Eigen::MatrixXd M;
  double x[1] = {2.0};
  f.weight.M.eval(0.0, x, 1, M);
  CHECK(M(0, 0) == doctest::Approx(std::sqrt(5.0)));
}

TEST_CASE("coefficient matrices are symmetric at sampled points") {
  for (const auto& name : family_names()) {
    Family f = example_family(name);
    CoeffValues cv;
    std::vector<double> x(f.op.d, 0.7);
    f.op.eval(0.3, x.data(), cv);
    CHECK((cv.Q - cv.Q.transpose()).norm() == 0.0);
    CHECK((cv.C - cv.C.transpose()).norm() == 0.0);
  }
}

TEST_CASE("non-symmetric C is rejected for constant coupling") {
  CHECK_THROWS_AS(example_family("const_coupling", json{{"C", {{0.0, 1.0}, {0.0, 0.0}}}}), std::invalid_argument);
}
