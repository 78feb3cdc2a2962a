#include "graph/causal_graph.h"

#include <algorithm>
#include <cmath>

#include "common/error.h"

namespace dscm {

CausalGraph::CausalGraph(GraphSpec spec) : spec_(std::move(spec)) {}

void CausalGraph::bind(const std::string& name, std::shared_ptr<const ScalarMechanism> mechanism) {
  const auto& v = spec_.variable(name);
  if (v.is_image()) throw Error(ErrorCode::kGraphInvalid, "cannot bind a scalar mechanism to image '" + name + "'");
  scalars_[name] = std::move(mechanism);
}

void CausalGraph::bind_image(std::shared_ptr<const ImageMechanism> mechanism) {
  if (!spec_.image_variable()) throw Error(ErrorCode::kGraphInvalid, "graph has no image variable");
  image_ = std::move(mechanism);
}

const ScalarMechanism& CausalGraph::mechanism(const std::string& name) const {
  auto it = scalars_.find(name);
  if (it == scalars_.end() || !it->second)
    throw VariableError(ErrorCode::kUninitializedModel, name, "no mechanism bound to '" + name + "'");
  return *it->second;
}

std::shared_ptr<const ScalarMechanism> CausalGraph::mechanism_ptr(const std::string& name) const {
  auto it = scalars_.find(name);
  return it == scalars_.end() ? nullptr : it->second;
}

void CausalGraph::require_complete(bool need_image) const {
  for (const auto& v : spec_.variables()) {
    if (v.is_image()) {
      if (need_image && !image_)
        throw VariableError(ErrorCode::kUninitializedModel, v.name, "image mechanism for '" + v.name + "' is not initialized");
    } else {
      mechanism(v.name);
    }
  }
}

double to_internal(const VariableSpec& spec, double observed) {
  return spec.dequantize ? observed + 0.5 : observed;
}

double to_observed(const VariableSpec& spec, double internal) {
  // Censor at the declared bounds: d and l have a point mass at 0 that a
  // flow cannot put probability on, so slightly negative draws map to 0.
  double v = internal;
  if (std::isfinite(spec.min_value) && !spec.min_exclusive) v = std::max(v, spec.min_value);
  if (std::isfinite(spec.max_value)) v = std::min(v, spec.max_value);
  return spec.dequantize ? std::floor(v) : v;
}

void validate_observation(const GraphSpec& spec, const Observation& obs) {
  for (const auto& v : spec.variables()) {
    if (v.is_image()) continue;
    auto it = obs.values.find(v.name);
    if (it == obs.values.end())
      throw VariableError(ErrorCode::kInvalidArgument, v.name, "observation is missing '" + v.name + "'");
    if (!v.admits(it->second))
      throw VariableError(ErrorCode::kInvalidArgument, v.name,
                          "observed " + v.name + " = " + std::to_string(it->second) + " violates its range");
  }
  for (const auto& [name, _] : obs.values)
    if (!spec.contains(name))
      throw VariableError(ErrorCode::kUnknownVariable, name, "observation names unknown variable '" + name + "'");
}

void validate_intervention(const GraphSpec& spec, const Intervention& intervention) {
  for (const auto& [name, value] : intervention.assignments) {
    const auto* v = spec.find(name);
    if (!v) throw VariableError(ErrorCode::kUnknownVariable, name, "unknown variable '" + name + "'");
    if (v->is_image())
      throw VariableError(ErrorCode::kUnsupportedIntervention, name, "interventions on image '" + name + "' are not supported");
    if (!v->admits(value))
      throw VariableError(ErrorCode::kInvalidArgument, name,
                          "do(" + name + " := " + std::to_string(value) + ") violates its range");
    if (v->dequantize && std::floor(value) != value)
      throw VariableError(ErrorCode::kInvalidArgument, name, "'" + name + "' is integer-valued");
  }
}

CausalGraph intervene(const CausalGraph& graph, const Intervention& intervention) {
  validate_intervention(graph.spec(), intervention);
  std::vector<std::string> names;
  for (const auto& [name, _] : intervention.assignments) names.push_back(name);

  CausalGraph out(graph.spec().without_parents(names));
  for (const auto& v : graph.spec().variables()) {
    if (v.is_image()) continue;
    auto it = intervention.assignments.find(v.name);
    if (it != intervention.assignments.end())
      out.bind(v.name, std::make_shared<ConstantMechanism>(to_internal(v, it->second)));
    else if (auto m = graph.mechanism_ptr(v.name))
      out.bind(v.name, std::move(m));
  }
  if (auto img = graph.image_mechanism_ptr()) out.bind_image(std::move(img));
  return out;
}

namespace {

std::vector<double> gather_parents(const VariableSpec& v, const ValueMap& internal) {
  std::vector<double> out;
  out.reserve(v.parents.size());
  for (const auto& p : v.parents) out.push_back(internal.at(p));
  return out;
}

}  // namespace

std::vector<SampledUnit> ancestral_sample_with_exogenous(const CausalGraph& graph, int count,
                                                         uint64_t seed) {
  if (count < 0) throw Error(ErrorCode::kInvalidArgument, "sample count must be non-negative");
  graph.require_complete(true);
  const auto& spec = graph.spec();
  Rng rng(seed);
  std::vector<SampledUnit> out;
  out.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    SampledUnit unit;
    ValueMap internal;
    for (const auto& name : spec.topological_order()) {
      const auto& v = spec.variable(name);
      const auto parents = gather_parents(v, internal);
      if (v.is_image()) {
        const uint64_t image_seed = rng();
        auto u = graph.image_mechanism()->sample_exogenous(image_seed);
        unit.observation.image = graph.image_mechanism()->forward(u, parents);
        unit.exogenous.image = std::move(u);
        continue;
      }
      const auto& mech = graph.mechanism(name);
      const double u = mech.sample_exogenous(rng);
      const double observed = to_observed(v, mech.forward(u, parents));
      unit.exogenous.scalars[name] = u;
      unit.observation.values[name] = observed;
      internal[name] = to_internal(v, observed);
    }
    out.push_back(std::move(unit));
  }
  return out;
}

std::vector<Observation> ancestral_sample(const CausalGraph& graph, int count, uint64_t seed) {
  auto units = ancestral_sample_with_exogenous(graph, count, seed);
  std::vector<Observation> out;
  out.reserve(units.size());
  for (auto& u : units) out.push_back(std::move(u.observation));
  return out;
}

ExogenousRecord abduct(const CausalGraph& graph, const Observation& obs, AbductionMode mode,
                       uint64_t seed) {
  const auto& spec = graph.spec();
  validate_observation(spec, obs);
  graph.require_complete(obs.image.has_value());

  ValueMap internal;
  for (const auto& v : spec.variables())
    if (!v.is_image()) internal[v.name] = to_internal(v, obs.values.at(v.name));

  ExogenousRecord out;
  for (const auto& name : spec.topological_order()) {
    const auto& v = spec.variable(name);
    const auto parents = gather_parents(v, internal);
    if (v.is_image()) {
      if (obs.image) out.image = graph.image_mechanism()->abduct(*obs.image, parents, mode, seed);
      continue;
    }
    try {
      const double u = graph.mechanism(name).invert(internal.at(name), parents);
      if (!std::isfinite(u)) throw Error(ErrorCode::kDomain, "non-finite exogenous value");
      out.scalars[name] = u;
    } catch (const VariableError&) {
      throw;
    } catch (const Error& e) {
      throw VariableError(ErrorCode::kAbductionRange, name,
                          "cannot abduct '" + name + "': " + e.what());
    }
  }
  return out;
}

Observation predict(const CausalGraph& graph, const ExogenousRecord& exogenous) {
  const auto& spec = graph.spec();
  graph.require_complete(exogenous.image.has_value());
  Observation out;
  ValueMap internal;
  for (const auto& name : spec.topological_order()) {
    const auto& v = spec.variable(name);
    const auto parents = gather_parents(v, internal);
    if (v.is_image()) {
      if (exogenous.image) out.image = graph.image_mechanism()->forward(*exogenous.image, parents);
      continue;
    }
    auto it = exogenous.scalars.find(name);
    if (it == exogenous.scalars.end())
      throw VariableError(ErrorCode::kInvalidArgument, name, "exogenous record is missing '" + name + "'");
    const double observed = to_observed(v, graph.mechanism(name).forward(it->second, parents));
    out.values[name] = observed;
    internal[name] = to_internal(v, observed);
  }
  return out;
}

Observation counterfactual(const CausalGraph& graph, const Observation& obs,
                           const Intervention& intervention, AbductionMode mode, uint64_t seed) {
  validate_intervention(graph.spec(), intervention);
  const auto exogenous = abduct(graph, obs, mode, seed);
  const auto mutilated = intervene(graph, intervention);
  return predict(mutilated, exogenous);
}

}  // namespace dscm
