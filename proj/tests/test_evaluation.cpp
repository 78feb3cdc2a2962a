#include "testing.h"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "common/error.h"
#include "common/png_io.h"
#include "eval/evaluation.h"
#include "phantom/phantom.h"
#include "scm/model.h"

using namespace dscm;
using namespace dscm::eval;
namespace fs = std::filesystem;

namespace {

const phantom::PhantomConfig kConfig{};

const std::vector<phantom::PhantomRecord>& records() {
  static const auto r = phantom::generate_phantoms(16, kConfig, 41);
  return r;
}

const scm::DeepScm& untrained() {
  static const auto model = [] {
    torch::manual_seed(8);
    auto spec = GraphSpec::multiple_sclerosis();
    std::vector<ValueMap> cov;
    for (const auto& r : phantom::generate_phantoms(200, kConfig, 2)) cov.push_back(r.covariates);
    return std::make_unique<scm::DeepScm>(spec, scm::fit_bases(spec, cov), vae::VaeConfig::desk());
  }();
  return *model;
}

}  // namespace

TEST_CASE("quantiles match hand-computed values") {
  CHECK(quantile({4, 1, 3, 2}, 0.5) == 2.5);
  CHECK(quantile({4, 1, 3, 2}, 0.25) == 1.75);
  CHECK(quantile({4, 1, 3, 2}, 0.75) == 3.25);
  CHECK(quantile({7}, 0.3) == 7);
  CHECK(quantile({}, 0.5) == 0);
  const auto s = summarize({10, 0, 5, 20, 15});
  CHECK(s.count == 5);
  CHECK(s.median == 10);
  CHECK(s.iqr() == 10);
}

TEST_CASE("histograms count every pair once") {
  std::vector<VolumePair> pairs{{"a", 0, 0}, {"b", 12.3, 0.5}, {"c", 49.9, 3}, {"d", 50, 65}};
  auto h = histogram(pairs, 20);
  CHECK(h.width == doctest::Approx(65.0 / 20));
  int no = 0, nc = 0;
  for (size_t i = 0; i < h.original.size(); ++i) no += h.original[i], nc += h.counterfactual[i];
  CHECK(no == 4);
  CHECK(nc == 4);
  CHECK(h.counterfactual.back() == 1);
  const auto report = make_report({{{"l", 0.0}}}, pairs);
  CHECK(report.pairs.size() == 4);
  CHECK(report.original.median == doctest::Approx((12.3 + 49.9) / 2));
}

TEST_CASE("empty dataset gives an empty report") {
  auto r = lesion_volume_shift(untrained().graph(), {}, {{{"l", 0.0}}}, kConfig);
  CHECK(r.pairs.empty());
  CHECK(r.original.count == 0);
  CHECK(counterfactual_fidelity(untrained().graph(), {}, {}, kConfig).records.empty());
}

TEST_CASE("null intervention shows no lesion-volume shift") {
  const auto r = lesion_volume_shift(untrained().graph(), records(), {}, kConfig);
  REQUIRE(r.pairs.size() == records().size());
  const double pixel_ml = 1.0 / (4.0 * kConfig.area_scale());
  for (size_t i = 0; i < r.pairs.size(); ++i) {
    CHECK(r.pairs[i].id == records()[i].id);
    CHECK(r.pairs[i].original ==
          phantom::segment_lesions(records()[i].image, records()[i].brain_mask, kConfig).volume_ml);
    CHECK(std::abs(r.pairs[i].original - r.pairs[i].counterfactual) <= pixel_ml + 1e-12);
  }
  const auto again = lesion_volume_shift(untrained().graph(), records(), {}, kConfig);
  for (size_t i = 0; i < r.pairs.size(); ++i) CHECK(again.pairs[i].counterfactual == r.pairs[i].counterfactual);
}

TEST_CASE("fidelity against the phantom oracle") {
  const auto& g = untrained().graph();
  CHECK(mean_absolute_error(records()[0].image, records()[0].image) == 0.0);
  auto changed = records()[0].image;
  changed.pixels[100] += 0.5f;
  CHECK(mean_absolute_error(records()[0].image, changed) == doctest::Approx(0.5 / changed.size()));
  CHECK_THROWS_AS(mean_absolute_error(records()[0].image, Image(3, 3)), Error);

  const auto null = counterfactual_fidelity(g, records(), {}, kConfig);
  REQUIRE(null.records.size() == records().size());
  for (const auto& r : null.records) {
    CHECK(r.model_mae <= 1e-4);
    CHECK(r.baseline_mae == 0.0);
  }

  // l has no covariate descendants: every other covariate is exactly the
  // abduction reconstruction, which is the observation up to round-off
  const auto rm = counterfactual_fidelity(g, records(), {{{"l", 0.0}}}, kConfig);
  int with_lesions = 0;
  for (size_t i = 0; i < rm.records.size(); ++i) {
    const auto& r = rm.records[i];
    CHECK(r.covariate_error.at("l") == 0.0);
    for (const auto& k : {"a", "s", "n", "d", "e", "b", "v"}) {
      CHECK(r.covariate_error.at(k) == null.records[i].covariate_error.at(k));
      CHECK(r.covariate_error.at(k) <= 1e-9 * std::max(1.0, records()[i].covariates.at(k)));
    }
    for (const auto& k : {"s", "n", "e"}) CHECK(r.covariate_error.at(k) == 0.0);
    if (records()[i].covariates.at("l") > 0.5) {
      ++with_lesions;
      CHECK(r.baseline_mae > 0.0);
    }
  }
  CHECK(with_lesions > 0);
  CHECK(rm.mean_baseline_mae > 0.0);
  CHECK(rm.to_json().at("records").size() == records().size());
}

TEST_CASE("covariate fit compares mechanisms with their bases") {
  std::vector<ValueMap> cov;
  for (const auto& r : records()) cov.push_back(r.covariates);
  const auto fit = covariate_fit(untrained(), cov);
  REQUIRE(fit.size() == 8);
  const auto again = covariate_fit(untrained(), cov);
  for (size_t i = 0; i < fit.size(); ++i) {
    CHECK(fit[i].nll == again[i].nll);
    CHECK(std::isfinite(fit[i].nll));
    CHECK(std::isfinite(fit[i].base_nll));
    CHECK(fit[i].count == cov.size());
    if (fit[i].name == "s" || fit[i].name == "n") CHECK(fit[i].nll == doctest::Approx(fit[i].base_nll).epsilon(1e-12));
  }
  for (auto& r : cov) r["s"] = 1.0;
  for (const auto& f : covariate_fit(untrained(), cov)) CHECK(f.degenerate == (f.name == "s"));
  CHECK(covariate_fit(untrained(), {}).empty());
  cov[0].erase("a");
  CHECK_THROWS_AS(covariate_fit(untrained(), cov), Error);
}

TEST_CASE("reports export, create directories and re-import") {
  const auto dir = fs::temp_directory_path() / "dscm_eval_report" / "nested" / "deeper";
  fs::remove_all(dir.parent_path().parent_path());
  std::vector<VolumePair> pairs;
  for (int i = 0; i < 30; ++i) pairs.push_back({"r" + std::to_string(i), 10.0 + i * 1.37, i * 0.11});
  const auto report = make_report({{{"l", 0.0}}}, pairs);
  export_report(report, dir.string(), "shift");

  std::ifstream f(dir / "shift.csv");
  int rows = -1;
  for (std::string line; std::getline(f, line);) ++rows;
  CHECK(rows == 30);
  const auto back = make_report(report.intervention, import_pairs((dir / "shift.csv").string()));
  CHECK(back.original.median == report.original.median);
  CHECK(back.original.iqr() == report.original.iqr());
  CHECK(back.counterfactual.median == report.counterfactual.median);
  CHECK(back.histogram.original == report.histogram.original);
  CHECK(fs::exists(dir / "shift_summary.json"));
  const auto png = read_png((dir / "shift.png").string());
  CHECK(png.width == 480);
  CHECK(png.height == 300);

  CHECK_THROWS_AS(import_pairs((dir / "missing.csv").string()), Error);
  CHECK_THROWS_AS(import_pairs((dir / "shift_summary.json").string()), Error);
  fs::remove_all(dir.parent_path().parent_path());
}
