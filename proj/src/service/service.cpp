#include "service/service.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <random>

#include "common/error.h"
#include "common/png_io.h"

namespace dscm::service {

using nlohmann::json;

namespace {

Response json_response(int status, const json& body) { return {status, body.dump(), "application/json"}; }

Response error_response(int status, const std::string& code, const std::string& message,
                        const std::string& variable = {}) {
  json body = {{"schema", kSchema}, {"error", code}, {"message", message}};
  if (!variable.empty()) body["variable"] = variable;
  return json_response(status, body);
}

Response unavailable() { return error_response(503, "model_not_loaded", "no model is loaded"); }

int status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kUnknownVariable:
    case ErrorCode::kUnsupportedIntervention:
    case ErrorCode::kAbductionRange:
    case ErrorCode::kDomain:
      return 400;
    case ErrorCode::kUninitializedModel: return 503;
    default: return 500;
  }
}

std::string png_base64(const Gray8& g) { return base64_encode(encode_png(g)); }

double finite_or(double v, double fallback) { return std::isfinite(v) ? v : fallback; }

}  // namespace

std::string base64_encode(const std::vector<uint8_t>& bytes) {
  static const char* table = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const uint32_t n = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
    for (int s = 18; s >= 0; s -= 6) out.push_back(table[(n >> s) & 63]);
  }
  if (i < bytes.size()) {
    uint32_t n = bytes[i] << 16;
    if (i + 1 < bytes.size()) n |= bytes[i + 1] << 8;
    out.push_back(table[(n >> 18) & 63]);
    out.push_back(table[(n >> 12) & 63]);
    out.push_back(i + 1 < bytes.size() ? table[(n >> 6) & 63] : '=');
    out.push_back('=');
  }
  return out;
}

std::vector<uint8_t> base64_decode(const std::string& text) {
  auto value = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  std::vector<uint8_t> out;
  uint32_t acc = 0;
  int bits = 0;
  for (char c : text) {
    if (c == '=') break;
    if (c == '\n' || c == '\r') continue;
    const int v = value(c);
    if (v < 0) throw Error(ErrorCode::kInvalidArgument, "invalid base64 payload");
    acc = (acc << 6) | static_cast<uint32_t>(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<uint8_t>((acc >> bits) & 0xFF));
    }
  }
  return out;
}

Gray8 encode_difference(const Image& cf, const Image& orig) {
  if (cf.height != orig.height || cf.width != orig.width)
    throw Error(ErrorCode::kInvalidArgument, "images differ in size");
  Gray8 g{cf.height, cf.width, std::vector<uint8_t>(cf.size())};
  for (size_t i = 0; i < cf.size(); ++i) {
    const double d = static_cast<double>(cf.pixels[i]) - orig.pixels[i];
    g.pixels[i] = static_cast<uint8_t>(std::clamp(std::lround(128.0 + d * 127.0 / 0.5), 0L, 255L));
  }
  return g;
}

int port_from_environment(int fallback) {
  const char* raw = std::getenv(kPortVariable);
  if (!raw || !*raw) return fallback;
  char* end = nullptr;
  const long p = std::strtol(raw, &end, 10);
  if (*end != '\0' || p < 1 || p > 65535) return fallback;
  return static_cast<int>(p);
}

InferenceService::InferenceService(std::shared_ptr<const scm::DeepScm> model,
                                   std::vector<phantom::PhantomRecord> records, phantom::PhantomConfig config,
                                   std::string model_label)
    : model_(std::move(model)), records_(std::move(records)), config_(std::move(config)),
      label_(std::move(model_label)) {
  for (size_t i = 0; i < records_.size(); ++i) index_[records_[i].id] = i;
}

const phantom::PhantomRecord* InferenceService::find(const std::string& id) const {
  auto it = index_.find(id);
  return it == index_.end() ? nullptr : &records_[it->second];
}

Response InferenceService::model_info() const {
  if (!model_) return unavailable();
  const auto& spec = model_->spec();
  json vars = json::array();
  for (const auto& name : spec.topological_order()) {
    const auto& v = spec.variable(name);
    json entry = {{"name", v.name},
                  {"kind", to_string(v.kind)},
                  {"unit", v.unit},
                  {"parents", v.parents},
                  {"intervenable", !v.is_image()}};
    if (!v.is_image()) {
      double lo = std::numeric_limits<double>::infinity(), hi = -lo;
      for (const auto& r : records_) {
        auto it = r.covariates.find(name);
        if (it == r.covariates.end()) continue;
        lo = std::min(lo, it->second);
        hi = std::max(hi, it->second);
      }
      // slider range: declared bounds, widened data range where unbounded
      const bool seen = lo <= hi;
      const double span = seen ? std::max(hi - lo, 1.0) : 1.0;
      double smin = std::isfinite(v.min_value) ? v.min_value : (seen ? lo - 0.25 * span : 0.0);
      double smax = std::isfinite(v.max_value) ? v.max_value : (seen ? hi + 0.25 * span : 1.0);
      if (v.min_exclusive && std::isfinite(v.min_value) && seen) smin = std::max(smin, std::min(lo, v.min_value + 1e-3));
      if (!std::isfinite(v.min_value) && seen && lo >= 0) smin = std::max(smin, 0.0);
      const bool integer = v.kind == VariableKind::kBinary || v.kind == VariableKind::kDiscreteCount;
      entry["range"] = {{"min", smin},
                        {"max", smax},
                        {"min_exclusive", v.min_exclusive},
                        {"step", integer ? 1.0 : 0.0}};
      entry["declared"] = {{"min", std::isfinite(v.min_value) ? json(v.min_value) : json(nullptr)},
                           {"max", std::isfinite(v.max_value) ? json(v.max_value) : json(nullptr)}};
      entry["observed"] = seen ? json{{"min", lo}, {"max", hi}} : json(nullptr);
    }
    vars.push_back(entry);
  }
  json info = model_->info();
  info["schema"] = kSchema;
  info["label"] = label_;
  info["variables"] = vars;
  info["graph"] = spec.to_json();
  info["dataset"] = {{"count", records_.size()}, {"image_ceiling", config_.png_ceiling}};
  if (model_->has_image())
    info["image"] = {{"height", model_->vae_config().height}, {"width", model_->vae_config().width}};
  return json_response(200, info);
}

Response InferenceService::observations(int page, int page_size) const {
  if (page < 0 || page_size < 1 || page_size > 500)
    return error_response(400, "bad_page", "page must be >= 0 and page_size in [1, 500]");
  const size_t begin = std::min(records_.size(), static_cast<size_t>(page) * static_cast<size_t>(page_size));
  const size_t end = std::min(records_.size(), begin + static_cast<size_t>(page_size));
  json items = json::array();
  for (size_t i = begin; i < end; ++i) {
    const auto& r = records_[i];
    items.push_back({{"id", r.id}, {"covariates", r.covariates},
                     {"thumbnail", "/observations/" + r.id + "/thumbnail.png"}});
  }
  return json_response(200, {{"schema", kSchema}, {"page", page}, {"page_size", page_size},
                             {"total", records_.size()},
                             {"pages", (records_.size() + static_cast<size_t>(page_size) - 1) / static_cast<size_t>(page_size)},
                             {"items", items}});
}

Response InferenceService::observation(const std::string& id) const {
  const auto* r = find(id);
  if (!r) return error_response(404, "unknown_observation", "no observation '" + id + "'");
  return json_response(200, {{"schema", kSchema}, {"id", r->id}, {"covariates", r->covariates},
                             {"image", png_base64(phantom::to_gray8(r->image, config_.png_ceiling))}});
}

Response InferenceService::thumbnail(const std::string& id) const {
  const auto* r = find(id);
  if (!r) return error_response(404, "unknown_observation", "no observation '" + id + "'");
  const auto bytes = encode_png(phantom::to_gray8(r->image, config_.png_ceiling));
  return {200, std::string(bytes.begin(), bytes.end()), "image/png"};
}

Response InferenceService::counterfactual(const std::string& body) const {
  if (!model_) return unavailable();
  const auto t0 = std::chrono::steady_clock::now();
  json req;
  try {
    req = json::parse(body);
  } catch (const json::exception& e) {
    return error_response(400, "bad_json", std::string("request is not valid JSON: ") + e.what());
  }
  if (!req.is_object()) return error_response(400, "bad_request", "request must be a JSON object");
  if (req.contains("schema") && req["schema"] != kSchema)
    return error_response(400, "bad_schema", "unsupported schema; expected \"v1\"");

  bool return_diff = true, deterministic = true;
  Intervention intervention;
  Observation obs;
  std::string observation_id;
  try {
    if (req.contains("options")) {
      const auto& o = req.at("options");
      return_diff = o.value("return_diff", true);
      deterministic = o.value("deterministic", true);
    }
    if (req.contains("interventions")) {
      if (!req["interventions"].is_object())
        return error_response(400, "bad_request", "interventions must be an object of name: value");
      for (const auto& [k, v] : req["interventions"].items()) {
        if (!v.is_number())
          return error_response(400, "invalid_intervention", "intervention on '" + k + "' is not a number", k);
        intervention.assignments[k] = v.get<double>();
      }
    }
    if (req.contains("observation_id")) {
      observation_id = req.at("observation_id").get<std::string>();
      const auto* r = find(observation_id);
      if (!r) return error_response(404, "unknown_observation", "no observation '" + observation_id + "'");
      obs = phantom::to_observation(*r);
    } else if (req.contains("observation")) {
      const auto& o = req.at("observation");
      obs.values = o.at("covariates").get<ValueMap>();
      const auto g = decode_png(base64_decode(o.at("image").get<std::string>()));
      obs.image = phantom::from_gray8(g, config_.png_ceiling);
    } else {
      return error_response(400, "bad_request", "request needs observation_id or observation");
    }
  } catch (const json::exception& e) {
    return error_response(400, "bad_request", e.what());
  } catch (const VariableError& e) {
    return error_response(400, error_code_name(e.code()), e.what(), e.variable());
  } catch (const Error& e) {
    return error_response(400, error_code_name(e.code()), e.what());
  }

  Observation cf;
  try {
    validate_intervention(model_->spec(), intervention);
    if (deterministic) {
      cf = dscm::counterfactual(model_->graph(), obs, intervention);
    } else {
      std::random_device rd;
      const uint64_t seed = (static_cast<uint64_t>(rd()) << 32) | rd();
      cf = dscm::counterfactual(model_->graph(), obs, intervention, AbductionMode::kSample, seed);
    }
  } catch (const VariableError& e) {
    return error_response(status_for(e.code()), error_code_name(e.code()), e.what(), e.variable());
  } catch (const Error& e) {
    return error_response(status_for(e.code()), error_code_name(e.code()), e.what());
  }

  json out = {{"schema", kSchema},
              {"interventions", intervention.assignments},
              {"covariates_before", obs.values},
              {"covariates_after", cf.values},
              {"deterministic", deterministic}};
  if (!observation_id.empty()) out["observation_id"] = observation_id;
  if (obs.image && cf.image) {
    out["image_original"] = png_base64(phantom::to_gray8(*obs.image, config_.png_ceiling));
    out["image_counterfactual"] = png_base64(phantom::to_gray8(*cf.image, config_.png_ceiling));
    if (return_diff) out["image_diff"] = png_base64(encode_difference(*cf.image, *obs.image));
  }
  const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  out["latency_ms"] = deterministic ? 0.0 : finite_or(ms, 0.0);
  return json_response(200, out);
}

Response InferenceService::handle(const std::string& method, const std::string& path,
                                  const std::map<std::string, std::string>& query, const std::string& body) const {
  auto int_param = [&](const std::string& key, int fallback) {
    auto it = query.find(key);
    if (it == query.end()) return fallback;
    try {
      size_t used = 0;
      const int v = std::stoi(it->second, &used);
      return used == it->second.size() ? v : -1;
    } catch (const std::exception&) {
      return -1;
    }
  };
  if (method == "GET" && path == "/model/info") return model_info();
  if (method == "GET" && path == "/observations") return observations(int_param("page", 0), int_param("page_size", 24));
  if (method == "POST" && path == "/counterfactual") return counterfactual(body);
  const std::string prefix = "/observations/";
  if (method == "GET" && path.rfind(prefix, 0) == 0) {
    auto rest = path.substr(prefix.size());
    const std::string thumb = "/thumbnail.png";
    if (rest.size() > thumb.size() && rest.compare(rest.size() - thumb.size(), thumb.size(), thumb) == 0)
      return thumbnail(rest.substr(0, rest.size() - thumb.size()));
    if (rest.find('/') == std::string::npos && !rest.empty()) return observation(rest);
  }
  return error_response(404, "not_found", "no route for " + method + " " + path);
}

}  // namespace dscm::service
