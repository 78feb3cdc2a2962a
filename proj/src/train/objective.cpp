#include "train/objective.h"

#include <cmath>
#include <sstream>

#include "common/error.h"

namespace dscm::train {

using torch::Tensor;

namespace {

Tensor internal_column(const VariableSpec& v, const TrainingData& batch) {
  auto it = batch.covariates.find(v.name);
  if (it == batch.covariates.end())
    throw VariableError(ErrorCode::kInvalidArgument, v.name, "batch is missing '" + v.name + "'");
  return v.dequantize ? it->second + 0.5 : it->second;
}

}  // namespace

Tensor parent_matrix(const GraphSpec& spec, const VariableSpec& v, const TrainingData& batch) {
  std::vector<Tensor> cols;
  for (const auto& p : v.parents) cols.push_back(internal_column(spec.variable(p), batch));
  if (cols.empty()) return torch::zeros({batch.size(), 0}, torch::kFloat64);
  return torch::stack(cols, 1);
}

ElboResult elbo(const scm::DeepScm& model, const TrainingData& batch, const KlWeights& w,
                torch::Generator& generator, bool dequantize) {
  const auto& spec = model.spec();
  ElboResult out;
  Tensor loss = torch::zeros({}, torch::kFloat64);
  Tensor true_elbo = torch::zeros({}, torch::kFloat64);

  for (const auto& name : model.covariates()) {
    const auto& v = spec.variable(name);
    Tensor own = batch.covariates.at(name);
    if (v.dequantize)
      own = dequantize ? flows::dequantize(own, generator) : own + 0.5;
    const auto lp = model.covariate(name).log_prob_batch(own, parent_matrix(spec, v, batch)).mean();
    out.components["nll_" + name] = -lp.item<double>();
    loss = loss - lp;
    true_elbo = true_elbo + lp.detach();
  }

  if (model.has_image()) {
    if (!batch.has_images()) throw Error(ErrorCode::kInvalidArgument, "batch has no images for the image mechanism");
    const auto* x = spec.image_variable();
    const auto c = model.image_mechanism()->condition_batch(parent_matrix(spec, *x, batch));
    auto terms = model.vae()->evaluate(batch.images, c, generator);
    const auto ll = terms.log_likelihood.mean();
    const auto k0 = terms.kl_z0.mean(), k1 = terms.kl_z1.mean(), k2 = terms.kl_z2.mean();
    out.components["log_likelihood"] = ll.item<double>();
    out.components["kl_z0"] = k0.item<double>();
    out.components["kl_z1"] = k1.item<double>();
    out.components["kl_z2"] = k2.item<double>();
    const auto image_loss = -(ll - w.z2 * k2 - w.z1 * k1 - w.z0 * k0);
    loss = loss + image_loss.to(torch::kFloat64);
    true_elbo = true_elbo + (ll - k0 - k1 - k2).detach().to(torch::kFloat64);
  }

  out.loss = loss;
  out.components["loss"] = loss.item<double>();
  out.components["elbo"] = true_elbo.item<double>();
  if (!std::isfinite(out.components["loss"])) {
    std::ostringstream msg;
    msg << "non-finite loss;";
    for (const auto& [k, v] : out.components) msg << ' ' << k << '=' << v;
    throw Error(ErrorCode::kTrainingDivergence, msg.str());
  }
  return out;
}

double clip_gradient_norm(const std::vector<Tensor>& parameters, double max_norm) {
  double sq = 0.0;
  for (const auto& p : parameters) {
    if (!p.grad().defined()) continue;
    const double n = p.grad().norm().item<double>();
    sq += n * n;
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw Error(ErrorCode::kTrainingDivergence, "non-finite gradient norm");
  if (norm > max_norm) {
    const double factor = max_norm / norm;
    torch::NoGradGuard guard;
    for (const auto& p : parameters)
      if (p.grad().defined()) p.grad().mul_(factor);
  }
  return norm;
}

}  // namespace dscm::train
