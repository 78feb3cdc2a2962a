#include "train/data.h"

#include "common/error.h"

namespace dscm::train {

ValueMap TrainingData::record(int64_t i) const {
  if (i < 0 || i >= size()) throw Error(ErrorCode::kInvalidArgument, "record index out of range");
  ValueMap out;
  for (const auto& [k, t] : covariates) out[k] = t[i].item<double>();
  return out;
}

std::vector<ValueMap> TrainingData::records() const {
  std::vector<ValueMap> out(static_cast<size_t>(size()));
  for (const auto& [k, t] : covariates) {
    auto c = t.contiguous();
    const double* p = c.data_ptr<double>();
    for (int64_t i = 0; i < size(); ++i) out[static_cast<size_t>(i)][k] = p[i];
  }
  return out;
}

TrainingData TrainingData::subset(const torch::Tensor& index) const {
  TrainingData out;
  auto idx = index.to(torch::kLong).contiguous();
  const int64_t* p = idx.data_ptr<int64_t>();
  for (int64_t i = 0; i < idx.numel(); ++i) out.ids.push_back(ids.at(static_cast<size_t>(p[i])));
  for (const auto& [k, t] : covariates) out.covariates[k] = t.index_select(0, idx);
  if (has_images()) out.images = images.index_select(0, idx);
  return out;
}

TrainingData TrainingData::range(int64_t begin, int64_t end) const {
  if (begin < 0 || end > size() || begin > end) throw Error(ErrorCode::kInvalidArgument, "bad record range");
  return subset(torch::arange(begin, end, torch::kLong));
}

TrainingData TrainingData::from_phantoms(const std::vector<phantom::PhantomRecord>& records, bool with_images) {
  TrainingData out;
  const auto n = static_cast<int64_t>(records.size());
  std::map<std::string, std::vector<double>> cols;
  for (const auto& r : records) {
    out.ids.push_back(r.id);
    for (const auto& [k, v] : r.covariates) cols[k].push_back(v);
  }
  for (auto& [k, v] : cols) {
    if (static_cast<int64_t>(v.size()) != n)
      throw VariableError(ErrorCode::kInvalidArgument, k, "covariate '" + k + "' missing from some records");
    out.covariates[k] = torch::tensor(v, torch::kFloat64);
  }
  if (with_images && n > 0) {
    const int h = records[0].image.height, w = records[0].image.width;
    out.images = torch::empty({n, 1, h, w}, torch::kFloat32);
    float* dst = out.images.data_ptr<float>();
    for (const auto& r : records) {
      if (r.image.height != h || r.image.width != w)
        throw Error(ErrorCode::kInvalidArgument, "record '" + r.id + "' has a different image size");
      std::copy(r.image.pixels.begin(), r.image.pixels.end(), dst);
      dst += r.image.size();
    }
  }
  return out;
}

}  // namespace dscm::train
