#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "common/image.h"
#include "common/png_io.h"
#include "graph/causal_graph.h"

namespace dscm::phantom {

// Designer structural equations. These constants define the benchmark; they
// are not estimates of anything. Volumes in mL, ages and durations in years.
struct Equations {
  double ms_fraction = 0.6;  // P(patient); healthy controls have d = 0, l = 0
  double sex_p = 0.6;
  int slices = 60;

  double age_min = 20.0, age_span = 50.0, age_gain = 0.9, age_shift = 0.4;
  double age_center = 45.0;

  double dur_log = 1.791759469228055;  // log 6
  double dur_age = 0.03, dur_sex = 0.1, dur_noise = 0.5;

  double edss_onset = 1.0, edss_dur = 1.2, edss_sex = 0.2, edss_noise = 0.8;
  double edss_max = 9.0;

  double brain_log = 7.090076835776092;  // log 1200
  double brain_age = -0.005, brain_sex = -0.08, brain_noise = 0.04;

  double vent_log = 3.2188758248682006;  // log 25
  double vent_age = 0.03, vent_brain = 1.5, vent_noise = 0.25;

  double les_log = 1.3862943611198906;  // log 4
  double les_dur = 0.5, les_edss = 0.12, les_vent = 0.4, les_brain = -1.0, les_noise = 0.5;
  double les_max = 80.0;

  nlohmann::json to_json() const;
  static Equations from_json(const nlohmann::json& j);
};

struct PhantomConfig {
  int size = 64;
  // Areas at 64 x 64; they scale with (size / 64)^2.
  double brain_px_per_ml = 1.5;
  double ventricle_px_per_ml = 4.0;
  double lesion_px_per_ml = 4.0;
  double noise_std = 0.03;
  double lesion_intensity_lo = 1.4, lesion_intensity_hi = 1.8;
  double white_matter = 1.0, grey_matter = 0.8, ventricle = 0.2, skull = 0.35;
  double grey_rim_fraction = 0.15;
  double lesion_threshold = 1.3;
  int min_component = 3;
  // Fixed ceiling for 8-bit export: pixel = round(255 * value / ceiling).
  double png_ceiling = 2.0;
  Equations equations;

  double area_scale() const { return (size / 64.0) * (size / 64.0); }
  void validate() const;
  nlohmann::json to_json() const;
  static PhantomConfig from_json(const nlohmann::json& j);
};

// Stored ground-truth noise. Normal draws are standard; the rest uniform.
struct PhantomExogenous {
  double ms = 0, a = 0, s = 0, n = 0, d = 0, e = 0, b = 0, v = 0, l = 0;
  double lesion_intensity = 0;  // uniform [0, 1), mapped to the configured range
  uint64_t noise_seed = 0;

  nlohmann::json to_json() const;
  static PhantomExogenous from_json(const nlohmann::json& j);
};

struct PhantomRecord {
  std::string id;
  ValueMap covariates;  // a, s, n, d, e, b, v, l
  PhantomExogenous exogenous;
  Image image;
  Mask brain_mask, ventricle_mask, lesion_mask;
};

// Covariates from the designer equations. Interventions replace equations.
ValueMap structural_covariates(const PhantomExogenous& u, const Equations& eq, const ValueMap& interventions = {});

// Draws noise (with l > les_max rejected and redrawn) and evaluates the equations.
std::vector<std::pair<ValueMap, PhantomExogenous>> sample_ground_truth_covariates(int count, const PhantomConfig& config,
                                                                                 uint64_t seed);

PhantomRecord render_phantom(const ValueMap& covariates, const PhantomExogenous& u, const PhantomConfig& config);

std::vector<PhantomRecord> generate_phantoms(int count, const PhantomConfig& config, uint64_t seed);

// Same noise, mutilated equations, same image noise; the ground truth.
PhantomRecord true_counterfactual(const PhantomRecord& record, const Intervention& intervention,
                                  const PhantomConfig& config);

struct Segmentation {
  Mask mask;
  int64_t pixels = 0;
  double volume_ml = 0;
};

Segmentation segment_lesions(const Image& image, const Mask& brain_mask, const PhantomConfig& config);

double slice_profile(double n, int slices);

// Dataset directory: manifest.json plus PNGs under images/ and masks/.
void export_dataset(const std::vector<PhantomRecord>& records, const PhantomConfig& config, const std::string& dir);
std::vector<PhantomRecord> import_dataset(const std::string& dir, PhantomConfig* config = nullptr);

Image from_gray8(const Gray8& g, double ceiling);
Gray8 to_gray8(const Image& image, double ceiling);
Gray8 mask_to_gray8(const Mask& mask);
Mask mask_from_gray8(const Gray8& g);

Observation to_observation(const PhantomRecord& record);

}  // namespace dscm::phantom
