#include "scm/model.h"

#include "common/error.h"

namespace dscm::scm {

using flows::BaseDistribution;

namespace {

BaseDistribution::Kind base_kind(const VariableSpec& v) {
  switch (v.family) {
    case MechanismFamily::kBernoulli: return BaseDistribution::Kind::kBernoulli;
    case MechanismFamily::kUniform: return BaseDistribution::Kind::kUniform;
    case MechanismFamily::kSpline: return BaseDistribution::Kind::kNormal;
    default:
      throw VariableError(ErrorCode::kConfig, v.name,
                          "variable '" + v.name + "' has no learnable " + to_string(v.family) + " mechanism");
  }
}

}  // namespace

BaseMap fit_bases(const GraphSpec& spec, const std::vector<ValueMap>& records) {
  BaseMap out;
  for (const auto& v : spec.variables()) {
    if (v.is_image()) continue;
    std::vector<double> xs;
    xs.reserve(records.size());
    for (const auto& r : records) {
      auto it = r.find(v.name);
      if (it == r.end())
        throw VariableError(ErrorCode::kEstimation, v.name, "record is missing '" + v.name + "'");
      // uniform bases span whole cells, so they take the integer values
      const bool cells = v.dequantize && v.family != MechanismFamily::kUniform;
      xs.push_back(cells ? to_internal(v, it->second) : it->second);
    }
    try {
      out[v.name] = flows::estimate_base(xs, base_kind(v), v.domain, v.dequantize);
    } catch (const VariableError&) {
      throw;
    } catch (const Error& e) {
      throw VariableError(e.code(), v.name, "base for '" + v.name + "': " + e.what());
    }
  }
  return out;
}

DeepScm::DeepScm(GraphSpec spec, BaseMap bases, std::optional<vae::VaeConfig> vae_config)
    : spec_(std::move(spec)), bases_(std::move(bases)), graph_(spec_) {
  auto standardizer_of = [&](const std::string& name) {
    const auto& v = spec_.variable(name);
    return flows::Standardizer{v.family == MechanismFamily::kSpline ? v.domain : Domain::kIdentity,
                               bases_.at(name)};
  };

  for (const auto& name : spec_.topological_order()) {
    const auto& v = spec_.variable(name);
    if (v.is_image()) continue;
    if (!bases_.count(name))
      throw VariableError(ErrorCode::kConfig, name, "no base distribution for '" + name + "'");
    std::shared_ptr<flows::CovariateMechanism> m;
    if (v.family == MechanismFamily::kSpline) {
      std::vector<flows::Standardizer> parents;
      for (const auto& p : v.parents) parents.push_back(standardizer_of(p));
      m = std::make_shared<flows::SplineMechanism>(v, bases_.at(name), std::move(parents));
    } else if (v.family == MechanismFamily::kBernoulli || v.family == MechanismFamily::kUniform) {
      m = std::make_shared<flows::DirectBaseMechanism>(bases_.at(name));
    } else {
      throw VariableError(ErrorCode::kConfig, name,
                          "unsupported mechanism family '" + to_string(v.family) + "' for '" + name + "'");
    }
    covariates_.push_back(name);
    mechanisms_[name] = m;
    graph_.bind(name, m);
  }

  if (const auto* x = spec_.image_variable()) {
    if (!vae_config) throw Error(ErrorCode::kConfig, "graph declares image '" + x->name + "' but no VAE config");
    if (static_cast<int>(x->parents.size()) != vae_config->condition_dim)
      throw Error(ErrorCode::kConfig, "image '" + x->name + "' has " + std::to_string(x->parents.size()) +
                                          " parents, VAE conditions on " + std::to_string(vae_config->condition_dim));
    std::vector<flows::Standardizer> cond;
    for (const auto& p : x->parents) cond.push_back(standardizer_of(p));
    vae_ = vae::ImageVae(*vae_config);
    image_ = std::make_shared<vae::VaeImageMechanism>(vae_, std::move(cond));
    graph_.bind_image(image_);
  }
}

const vae::VaeConfig& DeepScm::vae_config() const {
  if (!vae_) throw Error(ErrorCode::kUninitializedModel, "model has no image mechanism");
  return vae_->config();
}

flows::CovariateMechanism& DeepScm::covariate(const std::string& name) const {
  auto it = mechanisms_.find(name);
  if (it == mechanisms_.end())
    throw VariableError(ErrorCode::kUnknownVariable, name, "no covariate mechanism '" + name + "'");
  return *it->second;
}

std::vector<std::pair<std::string, torch::Tensor>> DeepScm::named_parameters() const {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& name : covariates_)
    for (auto& [k, t] : mechanisms_.at(name)->named_parameters()) out.emplace_back("flow." + name + "." + k, t);
  if (vae_)
    for (const auto& item : vae_->named_parameters()) out.emplace_back("vae." + item.key(), item.value());
  return out;
}

std::vector<torch::Tensor> DeepScm::parameters() const {
  std::vector<torch::Tensor> out;
  for (auto& [_, t] : named_parameters()) out.push_back(t);
  return out;
}

int64_t DeepScm::parameter_count() const {
  int64_t n = 0;
  for (auto& [_, t] : named_parameters()) n += t.numel();
  return n;
}

void DeepScm::reset_flows_to_identity() {
  for (auto& [_, m] : mechanisms_)
    if (auto* s = dynamic_cast<flows::SplineMechanism*>(m.get())) s->reset_to_identity();
  if (vae_) vae_->reset_flow_to_identity();
}

void DeepScm::train(bool on) {
  for (auto& [_, m] : mechanisms_)
    if (auto* s = dynamic_cast<flows::SplineMechanism*>(m.get())) s->conditioner()->train(on);
  if (vae_) vae_->train(on);
}

nlohmann::json DeepScm::info() const {
  nlohmann::json bases = nlohmann::json::object();
  for (const auto& [k, b] : bases_) bases[k] = b.to_json();
  nlohmann::json j{{"graph", spec_.to_json()},
                   {"topological_order", spec_.topological_order()},
                   {"bases", bases},
                   {"parameter_count", parameter_count()}};
  if (vae_) j["vae"] = vae_->config().to_json();
  return j;
}

}  // namespace dscm::scm
