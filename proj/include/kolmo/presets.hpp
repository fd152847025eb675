#pragma once

#include <json.hpp>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "kolmo/operator_spec.hpp"

namespace kolmo {

class UnknownFamily : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// One constraint of a parameterized family; slack > 0 means strict room.
struct Inequality {
  std::string name;
  bool holds = false;
  double slack = 0.0;
};

struct FamilyCheck {
  std::string family;
  std::vector<Inequality> items;
  bool all_hold() const;
  const Inequality* find(const std::string& name) const;
};

struct Family {
  std::string name;
  nlohmann::json params;  // effective parameters (defaults merged)
  OperatorSpec op;
  WeightSpec weight;
  CoeffExpr lyapunov;  // 1 + |x|^2
  double sigma = 0.5;  // exponent for the Bt growth bound
};

std::vector<std::string> family_names();
nlohmann::json family_defaults(const std::string& name);

/// Build a preset. Unknown parameter keys are rejected.
Family example_family(const std::string& name, const nlohmann::json& params = nlohmann::json::object());

/// Evaluate the family's parameter inequalities.
FamilyCheck check_family_params(const std::string& name, const nlohmann::json& params = nlohmann::json::object());

}  // namespace kolmo
