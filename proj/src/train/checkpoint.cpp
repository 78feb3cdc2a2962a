#include "train/checkpoint.h"

#include <cstring>
#include <filesystem>
#include <fstream>

#include "common/error.h"

namespace dscm::train {

using nlohmann::json;
using torch::Tensor;

namespace {

constexpr char kMagic[8] = {'D', 'S', 'C', 'M', 'C', 'K', 'P', 'T'};
constexpr char kEnd[8] = {'D', 'S', 'C', 'M', '-', 'E', 'N', 'D'};
constexpr uint32_t kVersion = 1;

std::string dtype_name(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return "f32";
    case torch::kFloat64: return "f64";
    default: throw Error(ErrorCode::kInternal, "unsupported tensor dtype in checkpoint");
  }
}

torch::ScalarType dtype_from(const std::string& s) {
  if (s == "f32") return torch::kFloat32;
  if (s == "f64") return torch::kFloat64;
  throw Error(ErrorCode::kIo, "checkpoint has unknown dtype '" + s + "'");
}

template <typename T>
void put(std::vector<uint8_t>& out, T v) {
  const auto* p = reinterpret_cast<const uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T get(const std::vector<uint8_t>& in, size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw Error(ErrorCode::kIo, "checkpoint is truncated");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

const torch::optim::AdamParamState* adam_state(const torch::optim::Adam& opt, const Tensor& p) {
  const auto& st = opt.state();
  auto it = st.find(p.unsafeGetTensorImpl());
  if (it == st.end()) return nullptr;
  return static_cast<const torch::optim::AdamParamState*>(it->second.get());
}

}  // namespace

std::vector<uint8_t> encode_checkpoint(const scm::DeepScm& model, const TrainState& state,
                                       const torch::optim::Adam* optimizer) {
  std::vector<std::pair<std::string, Tensor>> tensors;
  json adam = json::object();
  for (const auto& [name, p] : model.named_parameters()) {
    tensors.emplace_back("param/" + name, p.detach());
    if (!optimizer) continue;
    if (const auto* s = adam_state(*optimizer, p)) {
      adam[name] = s->step();
      tensors.emplace_back("adam_m/" + name, s->exp_avg().detach());
      tensors.emplace_back("adam_v/" + name, s->exp_avg_sq().detach());
    }
  }

  json bases = json::object();
  for (const auto& [k, b] : model.bases()) bases[k] = b.to_json();
  json table = json::array();
  uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    const uint64_t bytes = static_cast<uint64_t>(t.numel()) * t.element_size();
    table.push_back({{"name", name}, {"dtype", dtype_name(t.scalar_type())}, {"shape", t.sizes().vec()},
                     {"offset", offset}, {"bytes", bytes}});
    offset += bytes;
  }
  json header = {
      {"graph", model.spec().to_json()},
      {"bases", bases},
      {"vae", model.has_image() ? model.vae_config().to_json() : json(nullptr)},
      {"state",
       {{"epoch", state.epoch}, {"step", state.step}, {"config", state.config.to_json()},
        {"last_metrics", state.last_metrics}}},
      {"adam_steps", adam},
      {"tensors", table},
  };
  const std::string text = header.dump();

  std::vector<uint8_t> out(kMagic, kMagic + 8);
  put<uint32_t>(out, kVersion);
  put<uint64_t>(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  out.reserve(out.size() + offset + 8);
  for (const auto& [name, t] : tensors) {
    auto c = t.contiguous();
    const auto* p = static_cast<const uint8_t*>(c.data_ptr());
    out.insert(out.end(), p, p + c.numel() * c.element_size());
  }
  out.insert(out.end(), kEnd, kEnd + 8);
  return out;
}

Checkpoint decode_checkpoint(const std::vector<uint8_t>& in) {
  if (in.size() < 20 || std::memcmp(in.data(), kMagic, 8) != 0)
    throw Error(ErrorCode::kIo, "not a checkpoint file (bad magic)");
  size_t pos = 8;
  const auto version = get<uint32_t>(in, pos);
  if (version != kVersion) throw Error(ErrorCode::kIo, "unsupported checkpoint version " + std::to_string(version));
  const auto header_size = get<uint64_t>(in, pos);
  if (pos + header_size > in.size()) throw Error(ErrorCode::kIo, "checkpoint is truncated");
  json header;
  try {
    header = json::parse(in.begin() + static_cast<std::ptrdiff_t>(pos),
                         in.begin() + static_cast<std::ptrdiff_t>(pos + header_size));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kIo, std::string("checkpoint header: ") + e.what());
  }
  pos += header_size;
  const size_t data_start = pos;

  Checkpoint ck;
  try {
    scm::BaseMap bases;
    for (const auto& [k, b] : header.at("bases").items()) bases[k] = flows::BaseDistribution::from_json(b);
    std::optional<vae::VaeConfig> vc;
    if (!header.at("vae").is_null()) vc = vae::VaeConfig::from_json(header.at("vae"));
    ck.model = std::make_unique<scm::DeepScm>(GraphSpec::from_json(header.at("graph")), std::move(bases), vc);
    const auto& st = header.at("state");
    ck.state.epoch = st.at("epoch").get<int>();
    ck.state.step = st.at("step").get<int64_t>();
    ck.state.config = TrainConfig::from_json(st.at("config"));
    ck.state.last_metrics = st.at("last_metrics");
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kIo, std::string("checkpoint header: ") + e.what());
  }

  std::map<std::string, Tensor> loaded;
  uint64_t total = 0;
  for (const auto& entry : header.at("tensors")) {
    const auto name = entry.at("name").get<std::string>();
    const auto shape = entry.at("shape").get<std::vector<int64_t>>();
    const auto offset = entry.at("offset").get<uint64_t>();
    const auto bytes = entry.at("bytes").get<uint64_t>();
    auto t = torch::empty(shape, torch::TensorOptions().dtype(dtype_from(entry.at("dtype").get<std::string>())));
    if (static_cast<uint64_t>(t.numel()) * t.element_size() != bytes || data_start + offset + bytes > in.size())
      throw Error(ErrorCode::kIo, "checkpoint tensor '" + name + "' is malformed");
    std::memcpy(t.data_ptr(), in.data() + data_start + offset, bytes);
    loaded[name] = t;
    total = std::max(total, offset + bytes);
  }
  pos = data_start + total;
  if (pos + 8 != in.size() || std::memcmp(in.data() + pos, kEnd, 8) != 0)
    throw Error(ErrorCode::kIo, "checkpoint end marker missing");

  torch::NoGradGuard guard;
  for (const auto& [name, p] : ck.model->named_parameters()) {
    auto it = loaded.find("param/" + name);
    if (it == loaded.end()) throw Error(ErrorCode::kIo, "checkpoint lacks parameter '" + name + "'");
    if (!it->second.sizes().equals(p.sizes()) || it->second.scalar_type() != p.scalar_type())
      throw Error(ErrorCode::kIo, "checkpoint parameter '" + name + "' has the wrong shape or dtype");
    p.copy_(it->second);
  }
  for (const auto& [name, step] : header.at("adam_steps").items()) {
    AdamMoments m;
    m.step = step.get<int64_t>();
    m.exp_avg = loaded.at("adam_m/" + name);
    m.exp_avg_sq = loaded.at("adam_v/" + name);
    ck.optimizer[name] = m;
  }
  return ck;
}

void save_checkpoint(const std::string& path, const scm::DeepScm& model, const TrainState& state,
                     const torch::optim::Adam* optimizer) {
  const auto bytes = encode_checkpoint(model, state, optimizer);
  const std::filesystem::path target(path);
  if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path());
  // write then rename so a crash never leaves a half-written checkpoint
  const auto tmp = target.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error(ErrorCode::kIo, "cannot write checkpoint '" + path + "'");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw Error(ErrorCode::kIo, "short write to checkpoint '" + path + "'");
  }
  std::filesystem::rename(tmp, target);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::kIo, "cannot open checkpoint '" + path + "'");
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  try {
    return decode_checkpoint(bytes);
  } catch (const Error& e) {
    throw Error(e.code(), path + ": " + e.what());
  }
}

void restore_optimizer(torch::optim::Adam& optimizer, const scm::DeepScm& model, const Checkpoint& checkpoint) {
  for (const auto& [name, p] : model.named_parameters()) {
    auto it = checkpoint.optimizer.find(name);
    if (it == checkpoint.optimizer.end()) continue;
    auto s = std::make_unique<torch::optim::AdamParamState>();
    s->step(it->second.step);
    s->exp_avg(it->second.exp_avg.clone());
    s->exp_avg_sq(it->second.exp_avg_sq.clone());
    optimizer.state()[p.unsafeGetTensorImpl()] = std::move(s);
  }
}

}  // namespace dscm::train
