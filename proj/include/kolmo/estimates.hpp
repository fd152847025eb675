#pragma once

#include <json.hpp>
#include <string>
#include <vector>

#include "kolmo/evolve.hpp"

namespace kolmo {

struct Resolution {
  int n;      // nodes per axis
  double dt;  // time step
};

struct EstimateOptions {
  double L = 6.0;
  Boundary bc = Boundary::dirichlet;
  std::vector<Resolution> ladder = {{61, 4e-3}, {121, 2e-3}, {241, 1e-3}};
  /// Relative increase tolerated between consecutive resolutions in a trend.
  double trend_slack = 1e-2;
};

struct EstimateResult {
  std::string name;
  double measured = 0.0;
  double bound = 0.0;  // NaN when no bound is computable
  double margin = 0.0;
  std::vector<double> trend;
  std::vector<Resolution> resolutions;
  std::string verdict;  // PASS, FAIL or INCONCLUSIVE
  std::string note;

  bool pass() const { return verdict == "PASS"; }
  nlohmann::json to_json() const;
};

/// sup_t ||u(t)||/||f|| against exp(epsilon kappa0 (t - s)).
EstimateResult max_principle_check(const OperatorSpec& spec, const VectorField& f, double s, double t,
                                   double epsilon, double kappa0, const EstimateOptions& opts = {});

/// sup over probe nodes and n_t times of |u|^2 / G|f|^2 against exp(2 H (T - s)).
EstimateResult pointwise_check(const OperatorSpec& spec, const VectorField& f, double s, double T, int n_t, double H,
                               const EstimateOptions& opts = {});

/// sup over t_list of sqrt(t - s) ||M (J_x u)^T|| / ||f|| under the last two ladder resolutions.
EstimateResult weighted_gradient_check(const OperatorSpec& spec, const WeightSpec& weight, const VectorField& f,
                                       double s, const std::vector<double>& t_list, const EstimateOptions& opts = {});

/// sup over probe nodes of the defect in the scalar-component representation of u_kbar.
double representation_residual(const OperatorSpec& spec, const VectorField& f, int kbar, double s, double t,
                               double dt, int n, double L = 6.0, Boundary bc = Boundary::dirichlet);

/// Residuals over a dt ladder; PASS iff every halving cuts the residual by at least
/// `min_reduction`, or all residuals vanish.
EstimateResult representation_check(const OperatorSpec& spec, const VectorField& f, int kbar, double s, double t,
                                    const std::vector<double>& dt_ladder, int n, double L = 6.0,
                                    Boundary bc = Boundary::dirichlet, double min_reduction = 0.35);

/// Append results as CSV rows (name, measured, bound, margin, verdict, trend...).
void append_csv(const std::string& path, const std::vector<EstimateResult>& results);

}  // namespace kolmo
