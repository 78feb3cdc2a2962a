#include "flows/mechanism.h"

#include <cmath>
#include <cstring>

#include "common/error.h"

namespace dscm::flows {

using torch::Tensor;

namespace {

constexpr auto kF64 = torch::kFloat64;

void append_tensor(std::vector<uint8_t>& out, const Tensor& t) {
  auto c = t.detach().to(torch::kCPU).contiguous();
  const auto* bytes = static_cast<const uint8_t*>(c.data_ptr());
  out.insert(out.end(), bytes, bytes + c.nbytes());
}

void append_json(std::vector<uint8_t>& out, const nlohmann::json& j) {
  const auto s = j.dump();
  out.insert(out.end(), s.begin(), s.end());
}

Tensor domain_forward(Domain domain, const Tensor& v) {
  switch (domain) {
    case Domain::kIdentity: return v;
    case Domain::kLog: return torch::log(v);
    case Domain::kLog1p: return torch::log1p(v);
  }
  return v;
}

Tensor domain_log_jacobian(Domain domain, const Tensor& v) {
  switch (domain) {
    case Domain::kIdentity: return torch::zeros_like(v);
    case Domain::kLog: return -torch::log(v);
    case Domain::kLog1p: return -torch::log1p(v);
  }
  return torch::zeros_like(v);
}

}  // namespace

double Standardizer::operator()(double internal_value) const {
  return base.standardize(dscm::domain_forward(domain, internal_value));
}

Tensor Standardizer::operator()(const Tensor& internal_values) const {
  return base.standardize(domain_forward(domain, internal_values));
}

// --- DirectBaseMechanism ---------------------------------------------------

DirectBaseMechanism::DirectBaseMechanism(BaseDistribution base) : base_(base) {
  base_.validate();
  if (base_.kind == BaseDistribution::Kind::kNormal)
    throw Error(ErrorCode::kInvalidArgument, "direct base mechanisms are bernoulli or uniform");
}

double DirectBaseMechanism::forward(double u, std::span<const double>) const { return u; }

double DirectBaseMechanism::invert(double value, std::span<const double>) const {
  if (!base_.supports(value))
    throw Error(ErrorCode::kDomain, "value " + std::to_string(value) + " is outside the " +
                                        to_string(base_.kind) + " base support");
  return value;
}

double DirectBaseMechanism::log_prob(double value, std::span<const double>) const {
  return base_.log_prob(value);
}

Tensor DirectBaseMechanism::log_prob_batch(const Tensor& values, const Tensor&) const {
  return base_.log_prob(values);
}

std::vector<uint8_t> DirectBaseMechanism::serialize() const {
  std::vector<uint8_t> out;
  append_json(out, base_.to_json());
  return out;
}

// --- SplineConditioner -----------------------------------------------------

SplineConditionerImpl::SplineConditionerImpl(int parent_count, const SplineShape& shape)
    : parent_count_(parent_count), output_size_(raw_parameter_count(shape.bins)) {
  if (parent_count_ == 0) {
    constant_ = register_parameter("constant", torch::randn({1, output_size_}, kF64) * 1e-2);
    return;
  }
  body_ = torch::nn::Sequential();
  int width = parent_count_;
  for (int i = 0; i < shape.hidden_layers; ++i) {
    body_->push_back(torch::nn::Linear(width, shape.hidden));
    body_->push_back(torch::nn::SiLU());
    width = shape.hidden;
  }
  torch::nn::Linear head(width, output_size_);
  {
    torch::NoGradGuard guard;
    head->weight.mul_(1e-2);
    head->bias.zero_();
  }
  body_->push_back(head);
  body_ = register_module("body", body_);
  to(kF64);
}

Tensor SplineConditionerImpl::forward(const Tensor& standardized_parents) {
  if (parent_count_ == 0) return constant_.expand({standardized_parents.size(0), output_size_});
  return body_->forward(standardized_parents);
}

void SplineConditionerImpl::reset_to_identity() {
  torch::NoGradGuard guard;
  if (parent_count_ == 0) {
    constant_.zero_();
    return;
  }
  auto last = body_->ptr(body_->size() - 1)->as<torch::nn::Linear>();
  last->weight.zero_();
  last->bias.zero_();
}

// --- SplineMechanism -------------------------------------------------------

SplineMechanism::SplineMechanism(const VariableSpec& spec, BaseDistribution base,
                                 std::vector<Standardizer> parents)
    : name_(spec.name),
      domain_(spec.domain),
      shape_(spec.spline),
      base_(base),
      parents_(std::move(parents)) {
  base_.validate();
  if (base_.kind != BaseDistribution::Kind::kNormal)
    throw Error(ErrorCode::kInvalidArgument, "spline mechanism '" + name_ + "' needs a normal base");
  if (parents_.size() != spec.parents.size())
    throw Error(ErrorCode::kInvalidArgument, "spline mechanism '" + name_ + "' parent scaler count mismatch");
  conditioner_ = SplineConditioner(static_cast<int>(parents_.size()), shape_);
}

Tensor SplineMechanism::parent_tensor(std::span<const double> parents) const {
  if (parents.size() != parents_.size())
    throw Error(ErrorCode::kInvalidArgument, "mechanism '" + name_ + "' expects " +
                                                 std::to_string(parents_.size()) + " parents");
  std::vector<double> row(parents.begin(), parents.end());
  return torch::tensor(row, kF64).reshape({1, static_cast<int64_t>(row.size())});
}

SplineTensors SplineMechanism::spline_for(const Tensor& parents) const {
  std::vector<Tensor> cols;
  cols.reserve(parents_.size());
  for (size_t j = 0; j < parents_.size(); ++j)
    cols.push_back(parents_[j](parents.select(1, static_cast<int64_t>(j))));
  auto standardized = cols.empty() ? torch::zeros({parents.size(0), 0}, kF64) : torch::stack(cols, 1);
  auto raw = conditioner_.ptr()->forward(standardized);
  return constrain(raw, shape_.bins, shape_.tail_bound);
}

Tensor SplineMechanism::log_prob_batch(const Tensor& values, const Tensor& parents) const {
  auto y = domain_forward(domain_, values);
  auto w = (y - base_.loc) / base_.scale;
  auto [z, log_det] = spline_inverse(w, spline_for(parents));
  auto u = base_.loc + base_.scale * z;
  return base_.log_prob(u) + log_det + domain_log_jacobian(domain_, values);
}

double SplineMechanism::forward(double u, std::span<const double> parents) const {
  torch::NoGradGuard guard;
  auto z = torch::tensor({(u - base_.loc) / base_.scale}, kF64);
  auto [w, log_det] = spline_forward(z, spline_for(parent_tensor(parents)));
  return domain_inverse(domain_, base_.loc + base_.scale * w.item<double>());
}

double SplineMechanism::invert(double value, std::span<const double> parents) const {
  if (!domain_admits(domain_, value))
    throw Error(ErrorCode::kDomain, "value " + std::to_string(value) + " is outside the " +
                                        to_string(domain_) + " domain");
  torch::NoGradGuard guard;
  auto w = torch::tensor({(dscm::domain_forward(domain_, value) - base_.loc) / base_.scale}, kF64);
  auto [z, log_det] = spline_inverse(w, spline_for(parent_tensor(parents)));
  return base_.loc + base_.scale * z.item<double>();
}

double SplineMechanism::log_prob(double value, std::span<const double> parents) const {
  if (!domain_admits(domain_, value))
    throw Error(ErrorCode::kDomain, "value " + std::to_string(value) + " is outside the " +
                                        to_string(domain_) + " domain");
  torch::NoGradGuard guard;
  return log_prob_batch(torch::tensor({value}, kF64), parent_tensor(parents)).item<double>();
}

double SplineMechanism::base_log_prob(double value) const {
  if (!domain_admits(domain_, value))
    throw Error(ErrorCode::kDomain, "value outside the " + to_string(domain_) + " domain");
  return base_.log_prob(dscm::domain_forward(domain_, value)) + dscm::domain_log_jacobian(domain_, value);
}

std::vector<Tensor> SplineMechanism::parameters() const { return conditioner_->parameters(); }

std::vector<std::pair<std::string, Tensor>> SplineMechanism::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (const auto& item : conditioner_->named_parameters()) out.emplace_back(item.key(), item.value());
  return out;
}

std::vector<uint8_t> SplineMechanism::serialize() const {
  std::vector<uint8_t> out;
  append_json(out, base_.to_json());
  for (const auto& [name, t] : named_parameters()) {
    out.insert(out.end(), name.begin(), name.end());
    append_tensor(out, t);
  }
  return out;
}

void SplineMechanism::reset_to_identity() { conditioner_->reset_to_identity(); }

}  // namespace dscm::flows
