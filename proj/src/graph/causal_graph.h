#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "common/image.h"
#include "graph/graph_spec.h"
#include "graph/mechanism.h"

namespace dscm {

using ValueMap = std::map<std::string, double>;

struct Intervention {
  ValueMap assignments;

  bool empty() const { return assignments.empty(); }
};

// Endogenous values of one unit. Scalars are on the observed scale (integers
// for dequantized variables); the image is optional so covariate-only
// queries work on image-bearing graphs.
struct Observation {
  ValueMap values;
  std::optional<Image> image;
};

struct ExogenousRecord {
  ValueMap scalars;
  std::optional<ImageExogenous> image;
};

// The SCM: GraphSpec (V and parent sets) plus one mechanism per variable.
// Mechanisms are shared, immutable objects; copying a graph never copies
// parameters.
class CausalGraph {
 public:
  explicit CausalGraph(GraphSpec spec);

  const GraphSpec& spec() const { return spec_; }
  const std::vector<std::string>& topological_order() const { return spec_.topological_order(); }

  void bind(const std::string& name, std::shared_ptr<const ScalarMechanism> mechanism);
  void bind_image(std::shared_ptr<const ImageMechanism> mechanism);

  const ScalarMechanism& mechanism(const std::string& name) const;
  std::shared_ptr<const ScalarMechanism> mechanism_ptr(const std::string& name) const;
  const ImageMechanism* image_mechanism() const { return image_.get(); }
  std::shared_ptr<const ImageMechanism> image_mechanism_ptr() const { return image_; }

  // Throws kUninitializedModel naming the first variable without a mechanism.
  void require_complete(bool need_image) const;

 private:
  GraphSpec spec_;
  std::map<std::string, std::shared_ptr<const ScalarMechanism>> scalars_;
  std::shared_ptr<const ImageMechanism> image_;
};

// Observed value -> value fed to mechanisms (midpoint of the dequantization
// cell for integer-valued variables) and back. to_observed also clamps to the
// variable's declared range.
double to_internal(const VariableSpec& spec, double observed);
double to_observed(const VariableSpec& spec, double internal);

void validate_observation(const GraphSpec& spec, const Observation& obs);
void validate_intervention(const GraphSpec& spec, const Intervention& intervention);

// Action step: intervened variables lose their parents and get a constant
// mechanism; all other mechanism objects are shared with the input graph.
CausalGraph intervene(const CausalGraph& graph, const Intervention& intervention);

struct SampledUnit {
  Observation observation;
  ExogenousRecord exogenous;
};

std::vector<SampledUnit> ancestral_sample_with_exogenous(const CausalGraph& graph, int count,
                                                         uint64_t seed);
std::vector<Observation> ancestral_sample(const CausalGraph& graph, int count, uint64_t seed);

// Abduction: u_i = f_i^{-1}(v_i; pa_i) for scalars, VAE posterior plus
// residual for the image.
ExogenousRecord abduct(const CausalGraph& graph, const Observation& obs,
                       AbductionMode mode = AbductionMode::kDeterministic, uint64_t seed = 0);

// Prediction: evaluate every mechanism in topological order from u.
Observation predict(const CausalGraph& graph, const ExogenousRecord& exogenous);

// Abduction, action, prediction.
Observation counterfactual(const CausalGraph& graph, const Observation& obs,
                           const Intervention& intervention,
                           AbductionMode mode = AbductionMode::kDeterministic, uint64_t seed = 0);

}  // namespace dscm
