#pragma once

#include <json.hpp>
#include <string>
#include <vector>

#include "kolmo/operator_spec.hpp"

namespace kolmo {

/// Sampled region: [-L, L]^d crossed with the operator's time interval.
struct AuditBox {
  double L = 4.0;
  int n_samples = 2000;
};

struct Witness {
  double t = 0.0;
  std::vector<double> x;
  std::vector<double> eta;
  double value = 0.0;
};

/// One sampled condition. `kind` is "sign", "finite" or "limit0".
struct Condition {
  std::string name;
  std::string kind;
  bool required = true;
  bool holds = false;
  double value = 0.0;
  std::vector<double> trend;  // shell sups (limit0) or {half box, full box} (finite)
  Witness witness;
};

struct HypothesisReport {
  std::string hypothesis;
  bool holds = false;
  std::vector<Condition> conditions;
  std::vector<std::pair<std::string, double>> values;
  std::string note;

  double value(const std::string& key) const;
  const Condition* find(const std::string& name) const;
  nlohmann::json to_json() const;
};

/// inf over samples of the smallest eigenvalue of Q.
HypothesisReport check_ellipticity(const OperatorSpec& spec, const AuditBox& box);

/// Nonnegativity of the quadratic-form function K_{eta,eps} for unit eta.
/// `kappa` may depend on (t, x); its sup on the samples is reported as kappa0.
HypothesisReport check_hyp22(const OperatorSpec& spec, double epsilon, const CoeffExpr& kappa,
                             const AuditBox& box, int n_eta = 64);

/// Growth of Bt against lambda_Q^sigma and the resulting constant H.
HypothesisReport check_hyp23(const OperatorSpec& spec, double sigma, const AuditBox& box);

struct LyapunovOptions {
  bool use_eta = false;  // test A_eta instead of the scalar comparison operator
  double epsilon = 1.0;
  double kappa0 = 0.0;
  int n_eta = 64;
};

struct LyapunovResult {
  double mu = 0.0;            // smallest sampled mu with sup(A phi - mu phi) <= 0
  double mu_half_box = 0.0;
  double sup_residual = 0.0;  // sup(A phi - mu phi), <= 0 by construction
  bool finite = false;        // mu stable when the box doubles
  // Fit A phi <= -b0 phi^rho + K on the outer part of the box.
  bool compact = false;
  double rho = 0.0;
  double b0 = 0.0;
  double K = 0.0;
  Witness witness;
  nlohmann::json to_json() const;
};

LyapunovResult lyapunov_probe(const OperatorSpec& spec, const CoeffExpr& phi, const AuditBox& box,
                              const LyapunovOptions& opts = {});

/// Growth and algebraic conditions for the weighted gradient estimate.
/// With M the identity only the reduced set is required.
HypothesisReport check_hyp51(const OperatorSpec& spec, const WeightSpec& weight, const AuditBox& box,
                             double limit_threshold = 1e-2);

/// Tr(Q D^2 phi) + <b, grad phi> built symbolically.
CoeffExpr apply_scalar_operator(const OperatorSpec& spec, const CoeffExpr& phi);

}  // namespace kolmo
