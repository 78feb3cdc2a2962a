#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "common/png_io.h"
#include "graph/causal_graph.h"
#include "phantom/phantom.h"
#include "scm/model.h"

namespace dscm::eval {

struct VolumePair {
  std::string id;
  double original = 0;        // mL, oracle-segmented
  double counterfactual = 0;  // mL, oracle-segmented
};

struct Summary {
  size_t count = 0;
  double median = 0;
  double q1 = 0;
  double q3 = 0;
  double iqr() const { return q3 - q1; }
};

struct Histogram {
  double lo = 0;
  double width = 1;
  std::vector<int> original;
  std::vector<int> counterfactual;
};

struct ShiftReport {
  Intervention intervention;
  std::vector<VolumePair> pairs;
  Summary original;
  Summary counterfactual;
  Histogram histogram;

  nlohmann::json summary_json() const;
};

// Linear-interpolated quantile (q in [0, 1]) of unsorted values.
double quantile(std::vector<double> values, double q);
Summary summarize(const std::vector<double>& values);
Histogram histogram(const std::vector<VolumePair>& pairs, int bins = 20);
ShiftReport make_report(const Intervention& intervention, std::vector<VolumePair> pairs);

// Segments each original and its model counterfactual with the threshold
// oracle, inside the record's brain mask.
ShiftReport lesion_volume_shift(const CausalGraph& model, const std::vector<phantom::PhantomRecord>& records,
                                const Intervention& intervention, const phantom::PhantomConfig& config);

struct FidelityRecord {
  std::string id;
  double model_mae = 0;     // model counterfactual vs true counterfactual
  double baseline_mae = 0;  // original vs true counterfactual
  std::map<std::string, double> covariate_error;  // |model - truth|
};

struct FidelityReport {
  std::vector<FidelityRecord> records;
  double mean_model_mae = 0;
  double mean_baseline_mae = 0;
  std::map<std::string, double> mean_covariate_error;
  nlohmann::json to_json() const;
};

FidelityReport counterfactual_fidelity(const CausalGraph& model, const std::vector<phantom::PhantomRecord>& records,
                                       const Intervention& intervention, const phantom::PhantomConfig& config);

struct CovariateFit {
  std::string name;
  double nll = 0;       // learned mechanism, mean over records
  double base_nll = 0;  // base distribution alone
  size_t count = 0;
  bool degenerate = false;  // constant on this split; excluded
};

// Per-variable held-out NLL at cell midpoints. Deterministic.
std::vector<CovariateFit> covariate_fit(const scm::DeepScm& model, const std::vector<ValueMap>& records);

// <dir>/<stem>.csv (id,original_ml,counterfactual_ml), <stem>_summary.json
// and <stem>.png. Creates dir.
void export_report(const ShiftReport& report, const std::string& dir, const std::string& stem = "lesion_shift");
std::vector<VolumePair> import_pairs(const std::string& csv_path);
Rgb8 render_histogram(const ShiftReport& report);

}  // namespace dscm::eval
