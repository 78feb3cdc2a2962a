#include "phantom/phantom.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "common/error.h"

namespace dscm::phantom {

using nlohmann::json;
namespace fs = std::filesystem;

// --- config ------------------------------------------------------------------

#define DSCM_FIELDS_EQ(X)                                                                                  \
  X(ms_fraction) X(sex_p) X(slices) X(age_min) X(age_span) X(age_gain) X(age_shift) X(age_center)          \
  X(dur_log) X(dur_age) X(dur_sex) X(dur_noise) X(edss_onset) X(edss_dur) X(edss_sex) X(edss_noise)        \
  X(edss_max) X(brain_log) X(brain_age) X(brain_sex) X(brain_noise) X(vent_log) X(vent_age) X(vent_brain) \
  X(vent_noise) X(les_log) X(les_dur) X(les_edss) X(les_vent) X(les_brain) X(les_noise) X(les_max)

json Equations::to_json() const {
  json j;
#define X(f) j[#f] = f;
  DSCM_FIELDS_EQ(X)
#undef X
  return j;
}

Equations Equations::from_json(const json& j) {
  Equations e;
#define X(f) e.f = j.value(#f, e.f);
  DSCM_FIELDS_EQ(X)
#undef X
  return e;
}

#define DSCM_FIELDS_CFG(X)                                                                                 \
  X(size) X(brain_px_per_ml) X(ventricle_px_per_ml) X(lesion_px_per_ml) X(noise_std) X(lesion_intensity_lo) \
  X(lesion_intensity_hi) X(white_matter) X(grey_matter) X(ventricle) X(skull) X(grey_rim_fraction)          \
  X(lesion_threshold) X(min_component) X(png_ceiling)

json PhantomConfig::to_json() const {
  json j;
#define X(f) j[#f] = f;
  DSCM_FIELDS_CFG(X)
#undef X
  j["equations"] = equations.to_json();
  return j;
}

PhantomConfig PhantomConfig::from_json(const json& j) {
  PhantomConfig c;
  try {
#define X(f) c.f = j.value(#f, c.f);
    DSCM_FIELDS_CFG(X)
#undef X
    if (j.contains("equations")) c.equations = Equations::from_json(j.at("equations"));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kConfig, std::string("malformed phantom config: ") + e.what());
  }
  c.validate();
  return c;
}

void PhantomConfig::validate() const {
  if (size < 16 || size % 16 != 0) throw Error(ErrorCode::kConfig, "phantom size must be a multiple of 16, >= 16");
  if (!(brain_px_per_ml > 0 && ventricle_px_per_ml > 0 && lesion_px_per_ml > 0))
    throw Error(ErrorCode::kConfig, "pixel-to-mL scale factors must be positive");
  if (!(noise_std >= 0)) throw Error(ErrorCode::kConfig, "noise std must be non-negative");
  if (!(lesion_intensity_lo > lesion_threshold && lesion_intensity_hi >= lesion_intensity_lo))
    throw Error(ErrorCode::kConfig, "lesion intensities must lie above the segmentation threshold");
  if (!(png_ceiling > 0)) throw Error(ErrorCode::kConfig, "png ceiling must be positive");
  if (equations.slices < 1) throw Error(ErrorCode::kConfig, "slice count must be positive");
}

json PhantomExogenous::to_json() const {
  return {{"ms", ms}, {"a", a}, {"s", s}, {"n", n}, {"d", d}, {"e", e}, {"b", b}, {"v", v}, {"l", l},
          {"lesion_intensity", lesion_intensity}, {"noise_seed", noise_seed}};
}

PhantomExogenous PhantomExogenous::from_json(const json& j) {
  PhantomExogenous u;
  u.ms = j.at("ms");
  u.a = j.at("a");
  u.s = j.at("s");
  u.n = j.at("n");
  u.d = j.at("d");
  u.e = j.at("e");
  u.b = j.at("b");
  u.v = j.at("v");
  u.l = j.at("l");
  u.lesion_intensity = j.at("lesion_intensity");
  u.noise_seed = j.at("noise_seed").get<uint64_t>();
  return u;
}

// --- structural equations ------------------------------------------------------

ValueMap structural_covariates(const PhantomExogenous& u, const Equations& eq, const ValueMap& interventions) {
  ValueMap out;
  auto set = [&](const char* name, double natural) {
    auto it = interventions.find(name);
    out[name] = it != interventions.end() ? it->second : natural;
    return out[name];
  };
  const bool patient = u.ms < eq.ms_fraction;
  const double a = set("a", eq.age_min + eq.age_span / (1.0 + std::exp(-(eq.age_gain * u.a + eq.age_shift))));
  const double s = set("s", u.s < eq.sex_p ? 1.0 : 0.0);
  set("n", std::floor(eq.slices * u.n));
  const double da = a - eq.age_center;
  const double d =
      set("d", patient ? std::exp(eq.dur_log + eq.dur_age * da + eq.dur_sex * s + eq.dur_noise * u.d) : 0.0);
  const double e_raw = (d > 0 ? eq.edss_onset : 0.0) + eq.edss_dur * std::log1p(d) + eq.edss_sex * s + eq.edss_noise * u.e;
  const double e = set("e", std::clamp(std::floor(e_raw), 0.0, eq.edss_max));
  const double b = set("b", std::exp(eq.brain_log + eq.brain_age * da + eq.brain_sex * s + eq.brain_noise * u.b));
  const double lb = std::log(b) - eq.brain_log;
  const double v = set("v", std::exp(eq.vent_log + eq.vent_age * da + eq.vent_brain * lb + eq.vent_noise * u.v));
  const double lv = std::log(v) - eq.vent_log;
  set("l", d > 0 ? std::exp(eq.les_log + eq.les_dur * std::log1p(d) + eq.les_edss * e + eq.les_vent * lv +
                            eq.les_brain * lb + eq.les_noise * u.l)
                 : 0.0);
  return out;
}

std::vector<std::pair<ValueMap, PhantomExogenous>> sample_ground_truth_covariates(int count, const PhantomConfig& config,
                                                                                 uint64_t seed) {
  if (count < 0) throw Error(ErrorCode::kInvalidArgument, "count must be non-negative");
  config.validate();
  const auto& eq = config.equations;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::pair<ValueMap, PhantomExogenous>> out;
  out.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    PhantomExogenous u;
    u.ms = unif(rng);
    u.a = normal(rng);
    u.s = unif(rng);
    u.n = unif(rng);
    u.d = normal(rng);
    u.e = normal(rng);
    u.b = normal(rng);
    u.v = normal(rng);
    u.l = normal(rng);
    u.lesion_intensity = unif(rng);
    u.noise_seed = rng();
    auto cov = structural_covariates(u, eq);
    for (int tries = 0; cov["l"] > eq.les_max; ++tries) {
      if (tries > 1000) throw Error(ErrorCode::kConfig, "lesion volume rejection did not terminate");
      u.l = normal(rng);
      cov = structural_covariates(u, eq);
    }
    out.emplace_back(std::move(cov), u);
  }
  return out;
}

// --- renderer ------------------------------------------------------------------

double slice_profile(double n, int slices) {
  constexpr double kPi = 3.14159265358979323846;
  return 0.55 + 0.45 * std::sin(kPi * (n + 0.5) / slices);
}

namespace {

uint64_t mix(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Indices of `candidates` ordered by score, ties by index.
std::vector<int> rank(const std::vector<int>& candidates, const std::vector<double>& score) {
  std::vector<int> order = candidates;
  std::stable_sort(order.begin(), order.end(), [&](int i, int j) { return score[i] < score[j]; });
  return order;
}

long count_px(double per_ml, double ml, double scale) { return std::lround(per_ml * ml * scale); }

}  // namespace

PhantomRecord render_phantom(const ValueMap& covariates, const PhantomExogenous& u, const PhantomConfig& config) {
  config.validate();
  auto get = [&](const char* name) {
    auto it = covariates.find(name);
    if (it == covariates.end()) throw VariableError(ErrorCode::kRender, name, std::string("missing covariate ") + name);
    return it->second;
  };
  const double b = get("b"), v = get("v"), l = get("l"), n = get("n");
  if (!(b > 0)) throw VariableError(ErrorCode::kRender, "b", "brain volume must be positive");
  if (!(v > 0) || !(v < b)) throw VariableError(ErrorCode::kRender, "v", "ventricle volume must be in (0, b)");
  if (!(l >= 0)) throw VariableError(ErrorCode::kRender, "l", "lesion volume must be non-negative");
  if (!(n >= 0 && n < config.equations.slices))
    throw VariableError(ErrorCode::kRender, "n", "slice index outside [0, slices)");

  const int S = config.size;
  const int P = S * S;
  const double k = S / 64.0;
  const double scale = config.area_scale();
  const double prof = slice_profile(n, config.equations.slices);
  const double c0 = S / 2.0;

  // brain ellipse (ry = 1.2 rx) by exact-count ranking
  const long n_brain = count_px(config.brain_px_per_ml, b * prof, scale);
  const double rx = std::sqrt(n_brain / (1.2 * M_PI));
  const double ring = 1.5 * k;
  const long n_skull = std::lround(1.2 * M_PI * ((rx + ring) * (rx + ring) - rx * rx));
  if (n_brain + n_skull > static_cast<long>(0.85 * P))
    throw VariableError(ErrorCode::kRender, "b", "brain does not fit the image at this size");

  std::vector<double> score(P);
  std::vector<int> all(P);
  std::iota(all.begin(), all.end(), 0);
  for (int p = 0; p < P; ++p) {
    const double dy = (p / S + 0.5 - c0) / 1.2, dx = p % S + 0.5 - c0;
    score[p] = dy * dy + dx * dx;
  }
  const auto head_order = rank(all, score);

  PhantomRecord rec;
  rec.covariates = covariates;
  rec.exogenous = u;
  rec.brain_mask = Mask(S, S);
  rec.ventricle_mask = Mask(S, S);
  rec.lesion_mask = Mask(S, S);
  std::vector<uint8_t> cls(P, 0);  // 0 bg, 1 skull, 2 grey, 3 white, 4 ventricle, 5 lesion
  const long n_rim = std::lround(config.grey_rim_fraction * n_brain);
  std::vector<int> interior;
  for (long i = 0; i < n_brain + n_skull; ++i) {
    const int p = head_order[i];
    if (i >= n_brain) {
      cls[p] = 1;
      continue;
    }
    rec.brain_mask.bits[p] = 1;
    if (i >= n_brain - n_rim) {
      cls[p] = 2;
    } else {
      cls[p] = 3;
      interior.push_back(p);
    }
  }

  // two ventricles either side of the midline, elongated vertically
  const long n_vent = count_px(config.ventricle_px_per_ml, v * prof, scale);
  if (n_vent >= static_cast<long>(interior.size()) / 2)
    throw VariableError(ErrorCode::kRender, "v", "ventricles do not fit the brain");
  const double vy = c0 - 0.1 * 1.2 * rx;
  const double vx[2] = {c0 - 0.2 * rx, c0 + 0.2 * rx};
  for (int p : interior) {
    const double y = p / S + 0.5, x = p % S + 0.5;
    double best = 1e300;
    for (double cx : vx) {
      const double dy = (y - vy) / 1.8, dx = x - cx;
      best = std::min(best, dy * dy + dx * dx);
    }
    score[p] = best;
  }
  const auto vent_order = rank(interior, score);
  for (long i = 0; i < n_vent; ++i) {
    cls[vent_order[i]] = 4;
    rec.ventricle_mask.bits[vent_order[i]] = 1;
  }

  // lesions grow from periventricular seeds; nested in l
  std::vector<int> wm;
  for (int p : interior)
    if (cls[p] == 3) wm.push_back(p);
  const long n_les = count_px(config.lesion_px_per_ml, l, scale);
  if (n_les > static_cast<long>(wm.size()))
    throw VariableError(ErrorCode::kRender, "l", "lesion volume exceeds the white matter of this slice");
  if (n_les > 0) {
    const double rv = std::sqrt(n_vent / (2.0 * M_PI * 1.8));
    // Additive offsets stagger the seeds so small volumes form one blob
    // instead of specks the segmenter would drop.
    struct Seed {
      double y, x, offset;
    };
    std::vector<Seed> seeds;
    for (int side = 0; side < 2; ++side) {
      const double sign = side == 0 ? -1.0 : 1.0;
      seeds.push_back({vy - 1.8 * rv - 2.0 * k, vx[side], (side * 2.5) * k});
      seeds.push_back({vy + 0.3 * 1.8 * rv, vx[side] + sign * (rv + 2.0 * k), (4.0 + side * 1.5) * k});
      seeds.push_back({vy + 1.8 * rv + 2.0 * k, vx[side] + sign * 0.5 * rv, (6.5 + side * 1.0) * k});
    }
    for (int p : wm) {
      const double y = p / S + 0.5, x = p % S + 0.5;
      double best = 1e300;
      for (const auto& sd : seeds) best = std::min(best, sd.offset + std::hypot(y - sd.y, x - sd.x));
      const double jitter = static_cast<double>(mix(static_cast<uint64_t>(p) * 131 + S) >> 11) * 0x1.0p-53;
      score[p] = best + 0.6 * k * jitter;
    }
    const auto les_order = rank(wm, score);
    for (long i = 0; i < n_les; ++i) {
      cls[les_order[i]] = 5;
      rec.lesion_mask.bits[les_order[i]] = 1;
    }
  }

  const double les_int =
      config.lesion_intensity_lo + (config.lesion_intensity_hi - config.lesion_intensity_lo) * u.lesion_intensity;
  const double level[6] = {0.0, config.skull, config.grey_matter, config.white_matter, config.ventricle, les_int};
  rec.image = Image(S, S);
  std::mt19937_64 noise_rng(u.noise_seed);
  std::normal_distribution<double> noise(0.0, config.noise_std > 0 ? config.noise_std : 1.0);
  for (int p = 0; p < P; ++p) {
    double val = level[cls[p]];
    if (cls[p] != 0) {
      const double z = noise(noise_rng);
      if (config.noise_std > 0) val += z;
    }
    rec.image.pixels[p] = static_cast<float>(val);
  }
  return rec;
}

std::vector<PhantomRecord> generate_phantoms(int count, const PhantomConfig& config, uint64_t seed) {
  auto draws = sample_ground_truth_covariates(count, config, seed);
  std::vector<PhantomRecord> out;
  out.reserve(draws.size());
  for (size_t i = 0; i < draws.size(); ++i) {
    auto rec = render_phantom(draws[i].first, draws[i].second, config);
    char id[32];
    std::snprintf(id, sizeof id, "ph%05zu", i);
    rec.id = id;
    out.push_back(std::move(rec));
  }
  return out;
}

PhantomRecord true_counterfactual(const PhantomRecord& record, const Intervention& intervention,
                                  const PhantomConfig& config) {
  validate_intervention(GraphSpec::multiple_sclerosis(), intervention);
  auto cov = structural_covariates(record.exogenous, config.equations, intervention.assignments);
  auto out = render_phantom(cov, record.exogenous, config);
  out.id = record.id;
  return out;
}

// --- segmenter -------------------------------------------------------------------

Segmentation segment_lesions(const Image& image, const Mask& brain_mask, const PhantomConfig& config) {
  if (image.height != brain_mask.height || image.width != brain_mask.width)
    throw Error(ErrorCode::kInvalidArgument, "image and brain mask sizes differ");
  const int H = image.height, W = image.width;
  Segmentation seg;
  seg.mask = Mask(H, W);
  std::vector<uint8_t> hot(image.size(), 0), seen(image.size(), 0);
  for (size_t p = 0; p < image.size(); ++p)
    hot[p] = brain_mask.bits[p] && image.pixels[p] > config.lesion_threshold;
  std::vector<int> stack, comp;
  for (int start = 0; start < H * W; ++start) {
    if (!hot[start] || seen[start]) continue;
    comp.clear();
    stack.assign(1, start);
    seen[start] = 1;
    while (!stack.empty()) {
      const int p = stack.back();
      stack.pop_back();
      comp.push_back(p);
      const int y = p / W, x = p % W;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int yy = y + dy, xx = x + dx;
          if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
          const int q = yy * W + xx;
          if (hot[q] && !seen[q]) {
            seen[q] = 1;
            stack.push_back(q);
          }
        }
    }
    if (static_cast<int>(comp.size()) < config.min_component) continue;
    for (int p : comp) seg.mask.bits[p] = 1;
    seg.pixels += static_cast<int64_t>(comp.size());
  }
  const double scale = (H / 64.0) * (W / 64.0);
  seg.volume_ml = seg.pixels / (config.lesion_px_per_ml * scale);
  return seg;
}

// --- export / import -------------------------------------------------------------

Gray8 to_gray8(const Image& image, double ceiling) {
  Gray8 g{image.height, image.width, std::vector<uint8_t>(image.size())};
  for (size_t i = 0; i < image.size(); ++i)
    g.pixels[i] = static_cast<uint8_t>(std::lround(std::clamp(image.pixels[i] / ceiling, 0.0, 1.0) * 255.0));
  return g;
}

Image from_gray8(const Gray8& g, double ceiling) {
  Image img(g.height, g.width);
  for (size_t i = 0; i < img.size(); ++i) img.pixels[i] = static_cast<float>(g.pixels[i] / 255.0 * ceiling);
  return img;
}

Gray8 mask_to_gray8(const Mask& mask) {
  Gray8 g{mask.height, mask.width, std::vector<uint8_t>(mask.size())};
  for (size_t i = 0; i < mask.size(); ++i) g.pixels[i] = mask.bits[i] ? 255 : 0;
  return g;
}

Mask mask_from_gray8(const Gray8& g) {
  Mask m(g.height, g.width);
  for (size_t i = 0; i < m.size(); ++i) m.bits[i] = g.pixels[i] >= 128;
  return m;
}

void export_dataset(const std::vector<PhantomRecord>& records, const PhantomConfig& config, const std::string& dir) {
  std::error_code ec;
  fs::create_directories(fs::path(dir) / "images", ec);
  fs::create_directories(fs::path(dir) / "masks", ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot create dataset directory '" + dir + "': " + ec.message());
  json recs = json::array();
  for (const auto& r : records) {
    const std::string img = "images/" + r.id + ".png";
    const std::string brain = "masks/" + r.id + "_brain.png";
    const std::string vent = "masks/" + r.id + "_ventricles.png";
    const std::string les = "masks/" + r.id + "_lesions.png";
    write_png((fs::path(dir) / img).string(), to_gray8(r.image, config.png_ceiling));
    write_png((fs::path(dir) / brain).string(), mask_to_gray8(r.brain_mask));
    write_png((fs::path(dir) / vent).string(), mask_to_gray8(r.ventricle_mask));
    write_png((fs::path(dir) / les).string(), mask_to_gray8(r.lesion_mask));
    recs.push_back({{"id", r.id},
                    {"covariates", r.covariates},
                    {"exogenous", r.exogenous.to_json()},
                    {"image", img},
                    {"brain_mask", brain},
                    {"ventricle_mask", vent},
                    {"lesion_mask", les}});
  }
  json manifest{{"schema", "dscm-phantoms/v1"}, {"config", config.to_json()}, {"records", std::move(recs)}};
  std::ofstream out(fs::path(dir) / "manifest.json");
  if (!out) throw Error(ErrorCode::kIo, "cannot write manifest in '" + dir + "'");
  out << manifest.dump(1) << "\n";
}

std::vector<PhantomRecord> import_dataset(const std::string& dir, PhantomConfig* config_out) {
  const auto manifest_path = fs::path(dir) / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw Error(ErrorCode::kIo, "missing manifest '" + manifest_path.string() + "'");
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kIo, "corrupt manifest '" + manifest_path.string() + "': " + e.what());
  }
  if (manifest.value("schema", "") != "dscm-phantoms/v1")
    throw Error(ErrorCode::kIo, "manifest '" + manifest_path.string() + "' has an unknown schema");
  const auto config = PhantomConfig::from_json(manifest.at("config"));
  if (config_out) *config_out = config;

  std::vector<PhantomRecord> out;
  for (const auto& jr : manifest.at("records")) {
    PhantomRecord r;
    r.id = jr.value("id", "");
    try {
      r.covariates = jr.at("covariates").get<ValueMap>();
      r.exogenous = PhantomExogenous::from_json(jr.at("exogenous"));
      auto load = [&](const char* key) {
        const auto path = fs::path(dir) / jr.at(key).get<std::string>();
        if (!fs::exists(path))
          throw Error(ErrorCode::kIo, "record '" + r.id + "': missing file '" + path.string() + "'");
        return read_png(path.string());
      };
      r.image = from_gray8(load("image"), config.png_ceiling);
      r.brain_mask = mask_from_gray8(load("brain_mask"));
      r.ventricle_mask = mask_from_gray8(load("ventricle_mask"));
      r.lesion_mask = mask_from_gray8(load("lesion_mask"));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kIo, "record '" + r.id + "' in manifest is malformed: " + e.what());
    } catch (const Error& e) {
      if (std::string(e.what()).find(r.id) != std::string::npos) throw;
      throw Error(ErrorCode::kIo, "record '" + r.id + "': " + e.what());
    }
    out.push_back(std::move(r));
  }
  return out;
}

Observation to_observation(const PhantomRecord& record) { return {record.covariates, record.image}; }

}  // namespace dscm::phantom
