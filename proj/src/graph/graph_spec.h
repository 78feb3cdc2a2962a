#pragma once

#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace dscm {

enum class VariableKind { kContinuousPositive, kBinary, kDiscreteCount, kImage };

// Mechanism family bound to a variable. Spline flows carry the learned
// covariate mechanisms; bernoulli/uniform variables are direct base samples.
enum class MechanismFamily { kSpline, kBernoulli, kUniform, kAffine, kImage };

// Space in which a covariate's flow operates.
enum class Domain { kIdentity, kLog, kLog1p };

struct SplineShape {
  int bins = 8;
  double tail_bound = 3.0;
  int hidden = 32;
  int hidden_layers = 2;
};

struct VariableSpec {
  std::string name;
  VariableKind kind = VariableKind::kContinuousPositive;
  std::string unit;
  std::vector<std::string> parents;
  MechanismFamily family = MechanismFamily::kSpline;
  Domain domain = Domain::kIdentity;
  // Integer-valued covariates are modeled on value + U[0,1).
  bool dequantize = false;
  double min_value = -std::numeric_limits<double>::infinity();
  double max_value = std::numeric_limits<double>::infinity();
  bool min_exclusive = false;
  SplineShape spline;

  bool is_image() const { return kind == VariableKind::kImage; }
  // Static range check applied to observations and intervention targets.
  bool admits(double value) const;
};

// V of the SCM: variables, their parents and mechanism families. Mechanism
// objects are attached separately (see CausalGraph).
class GraphSpec {
 public:
  GraphSpec() = default;
  explicit GraphSpec(std::vector<VariableSpec> variables);

  static GraphSpec from_json(const nlohmann::json& doc);
  static GraphSpec from_file(const std::string& path);
  // Multiple-sclerosis graph: a, s, n roots; d(a,s), e(s,d), b(a,s), v(a,b),
  // l(d,e,v,b), x(n,v,b,l).
  static GraphSpec multiple_sclerosis(bool ventricle_depends_on_duration = false);

  nlohmann::json to_json() const;

  const std::vector<VariableSpec>& variables() const { return variables_; }
  const VariableSpec& variable(const std::string& name) const;
  const VariableSpec* find(const std::string& name) const;
  bool contains(const std::string& name) const { return find(name) != nullptr; }
  size_t size() const { return variables_.size(); }

  // Deterministic: among ready variables, the earliest declared goes first.
  const std::vector<std::string>& topological_order() const { return order_; }
  std::vector<std::string> children(const std::string& name) const;
  // Transitive descendants (excluding name itself).
  std::vector<std::string> descendants(const std::string& name) const;
  const VariableSpec* image_variable() const;

  // Returns a copy with the given variables' parent lists cleared.
  GraphSpec without_parents(const std::vector<std::string>& names) const;

 private:
  void validate_and_order();

  std::vector<VariableSpec> variables_;
  std::vector<std::string> order_;
};

std::string to_string(VariableKind kind);
std::string to_string(MechanismFamily family);
std::string to_string(Domain domain);

// Domain transform and its log-Jacobian d(domain)/dv.
double domain_forward(Domain domain, double value);
double domain_inverse(Domain domain, double y);
double domain_log_jacobian(Domain domain, double value);
bool domain_admits(Domain domain, double value);

}  // namespace dscm
