#include "testing.h"

#include <cmath>
#include <filesystem>
#include <numeric>

#include "common/error.h"
#include "phantom/phantom.h"

using namespace dscm;
using namespace dscm::phantom;
namespace fs = std::filesystem;

namespace {

double corr(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

double white_matter_mean(const PhantomRecord& r, const PhantomConfig& cfg) {
  // white matter = brain interior minus ventricles and lesions, i.e. the
  // pixels the renderer assigns the WM level. Identify them from the noiseless render.
  PhantomConfig clean = cfg;
  clean.noise_std = 0;
  auto ref = render_phantom(r.covariates, r.exogenous, clean);
  double sum = 0;
  int n = 0;
  for (size_t p = 0; p < r.image.size(); ++p)
    if (ref.image.pixels[p] == static_cast<float>(cfg.white_matter)) {
      sum += r.image.pixels[p];
      ++n;
    }
  return sum / n;
}

PhantomRecord with(const PhantomConfig& cfg, double b, double v, double l, double n = 30) {
  PhantomExogenous u;
  u.noise_seed = 99;
  u.lesion_intensity = 0.5;
  return render_phantom({{"a", 40}, {"s", 1}, {"n", n}, {"d", 5}, {"e", 3}, {"b", b}, {"v", v}, {"l", l}}, u, cfg);
}

}  // namespace

TEST_CASE("noiseless covariates equal the equation means") {
  Equations eq;
  PhantomExogenous u;  // all draws 0: patient, female, slice 0
  auto c = structural_covariates(u, eq);
  const double a = 20.0 + 50.0 / (1.0 + std::exp(-0.4));
  const double d = std::exp(std::log(6.0) + 0.03 * (a - 45) + 0.1);
  const double e = std::floor(1.0 + 1.2 * std::log1p(d) + 0.2);
  const double b = std::exp(std::log(1200.0) - 0.005 * (a - 45) - 0.08);
  const double v = std::exp(std::log(25.0) + 0.03 * (a - 45) + 1.5 * (std::log(b) - std::log(1200.0)));
  const double l = std::exp(std::log(4.0) + 0.5 * std::log1p(d) + 0.12 * e + 0.4 * (std::log(v) - std::log(25.0)) -
                            1.0 * (std::log(b) - std::log(1200.0)));
  CHECK(c["a"] == doctest::Approx(a).epsilon(1e-12));
  CHECK(c["s"] == 1.0);
  CHECK(c["n"] == 0.0);
  CHECK(c["d"] == doctest::Approx(d).epsilon(1e-12));
  CHECK(c["e"] == e);
  CHECK(c["b"] == doctest::Approx(b).epsilon(1e-12));
  CHECK(c["v"] == doctest::Approx(v).epsilon(1e-12));
  CHECK(c["l"] == doctest::Approx(l).epsilon(1e-12));

  u.ms = 0.9;  // healthy control
  c = structural_covariates(u, eq);
  CHECK(c["d"] == 0.0);
  CHECK(c["l"] == 0.0);
  CHECK(c["e"] == std::floor(0.2));
}

TEST_CASE("designer correlations and record invariants") {
  PhantomConfig cfg;
  auto draws = sample_ground_truth_covariates(10000, cfg, 1);
  std::vector<double> a, b, d, l;
  for (const auto& [c, u] : draws) {
    a.push_back(c.at("a"));
    b.push_back(c.at("b"));
    d.push_back(c.at("d"));
    l.push_back(c.at("l"));
    CHECK(c.at("v") < c.at("b"));
    CHECK(c.at("l") >= 0.0);
    CHECK(c.at("l") <= 80.0);
    CHECK(c.at("e") >= 0.0);
    CHECK(c.at("e") <= 10.0);
    CHECK(c.at("n") >= 0.0);
    CHECK(c.at("n") < 60.0);
  }
  CHECK(corr(a, b) < 0.0);
  CHECK(corr(d, l) > 0.0);

  auto again = sample_ground_truth_covariates(50, cfg, 1);
  for (size_t i = 0; i < 50; ++i) CHECK(again[i].first == draws[i].first);
  CHECK(sample_ground_truth_covariates(1, cfg, 2)[0].first != draws[0].first);
}

TEST_CASE("renderer invariants") {
  PhantomConfig cfg;
  auto recs = generate_phantoms(100, cfg, 5);
  for (const auto& r : recs) {
    CHECK(white_matter_mean(r, cfg) == doctest::Approx(1.0).epsilon(0.02));
    for (size_t p = 0; p < r.image.size(); ++p) {
      if (r.lesion_mask.bits[p]) {
        CHECK(r.brain_mask.bits[p]);
        CHECK(!r.ventricle_mask.bits[p]);
      }
      if (r.ventricle_mask.bits[p]) CHECK(r.brain_mask.bits[p]);
    }
    auto again = render_phantom(r.covariates, r.exogenous, cfg);
    CHECK(again.image.pixels == r.image.pixels);
  }

  auto none = with(cfg, 1200, 25, 0.0);
  CHECK(none.lesion_mask.count() == 0);
  CHECK(std::none_of(none.image.pixels.begin(), none.image.pixels.end(), [&](float x) { return x > cfg.lesion_threshold; }));

  auto v1 = with(cfg, 1200, 20, 5), v2 = with(cfg, 1200, 40, 5);
  const double ratio = static_cast<double>(v2.ventricle_mask.count()) / v1.ventricle_mask.count();
  CHECK(ratio == doctest::Approx(2.0).epsilon(0.02));

  CHECK_THROWS_AS(with(cfg, 1200, 25, -1.0), Error);
  CHECK_THROWS_AS(with(cfg, 1200, 1300, 1.0), Error);
}

TEST_CASE("segmenter recovers lesion volume") {
  PhantomConfig cfg;
  for (double l : {0.0, 0.5, 1.0, 5.0, 10.0, 20.0, 33.3, 50.0, 65.0, 80.0}) {
    for (double n : {0.0, 30.0, 59.0}) {
      auto r = with(cfg, 1100, 30, l, n);
      auto seg = segment_lesions(r.image, r.brain_mask, cfg);
      INFO("l=" << l << " n=" << n);
      CHECK(std::abs(seg.volume_ml - l) <= 1.0);
    }
  }
  auto r = with(cfg, 1200, 25, 20.0);
  CHECK(segment_lesions(r.image, r.brain_mask, cfg).volume_ml == doctest::Approx(20.0).epsilon(0.05));

  Image flat(64, 64, 1.0f);
  Mask all(64, 64);
  std::fill(all.bits.begin(), all.bits.end(), 1);
  CHECK(segment_lesions(flat, all, cfg).volume_ml == 0.0);

  // components smaller than the minimum are ignored
  Image specks(64, 64, 1.0f);
  specks.at(10, 10) = 1.6f;
  specks.at(10, 11) = 1.6f;
  specks.at(40, 40) = 1.6f;
  specks.at(41, 41) = 1.6f;  // diagonal neighbor: 8-connected
  specks.at(42, 42) = 1.6f;
  auto seg = segment_lesions(specks, all, cfg);
  CHECK(seg.pixels == 3);

  // the generated population
  for (const auto& rec : generate_phantoms(200, cfg, 9))
    CHECK(std::abs(segment_lesions(rec.image, rec.brain_mask, cfg).volume_ml - rec.covariates.at("l")) <= 1.0);
}

TEST_CASE("true counterfactuals") {
  PhantomConfig cfg;
  auto recs = generate_phantoms(30, cfg, 11);
  int with_lesions = 0;
  for (const auto& r : recs) {
    auto same = true_counterfactual(r, {}, cfg);
    CHECK(same.covariates == r.covariates);
    CHECK(same.image.pixels == r.image.pixels);
    auto observed = true_counterfactual(r, {{{"a", r.covariates.at("a")}, {"v", r.covariates.at("v")}}}, cfg);
    CHECK(observed.image.pixels == r.image.pixels);

    if (r.covariates.at("l") > 0) {
      ++with_lesions;
      auto cf = true_counterfactual(r, {{{"l", 0.0}}}, cfg);
      CHECK(cf.lesion_mask.count() == 0);
      const float les = static_cast<float>(cfg.lesion_intensity_lo +
                                           (cfg.lesion_intensity_hi - cfg.lesion_intensity_lo) * r.exogenous.lesion_intensity);
      for (size_t p = 0; p < r.image.size(); ++p) {
        if (r.lesion_mask.bits[p])
          CHECK(r.image.pixels[p] - cf.image.pixels[p] == doctest::Approx(les - cfg.white_matter).epsilon(1e-5));
        else
          CHECK(cf.image.pixels[p] == r.image.pixels[p]);
      }
    }

    auto older = true_counterfactual(r, {{{"a", r.covariates.at("a") + 10}}}, cfg);
    CHECK(older.covariates.at("s") == r.covariates.at("s"));
    CHECK(older.covariates.at("n") == r.covariates.at("n"));
    CHECK(older.covariates.at("b") != r.covariates.at("b"));
    CHECK(older.covariates.at("v") != r.covariates.at("v"));
    // designer-equation check for b
    const double b_expected = r.covariates.at("b") * std::exp(-0.005 * 10);
    CHECK(older.covariates.at("b") == doctest::Approx(b_expected).epsilon(1e-12));
    if (r.covariates.at("l") > 0) CHECK(older.covariates.at("l") != r.covariates.at("l"));
  }
  CHECK(with_lesions > 5);
  CHECK_THROWS_AS(true_counterfactual(recs[0], {{{"q", 1.0}}}, cfg), Error);
}

TEST_CASE("dataset export and import") {
  PhantomConfig cfg;
  auto recs = generate_phantoms(12, cfg, 21);
  const auto dir = fs::temp_directory_path() / "dscm_phantom_roundtrip" / "nested";
  fs::remove_all(dir.parent_path());
  export_dataset(recs, cfg, dir.string());
  PhantomConfig loaded_cfg;
  auto back = import_dataset(dir.string(), &loaded_cfg);
  CHECK(loaded_cfg.to_json() == cfg.to_json());
  REQUIRE(back.size() == recs.size());
  for (size_t i = 0; i < recs.size(); ++i) {
    CHECK(back[i].id == recs[i].id);
    CHECK(back[i].covariates == recs[i].covariates);
    CHECK(back[i].exogenous.noise_seed == recs[i].exogenous.noise_seed);
    CHECK(back[i].exogenous.l == recs[i].exogenous.l);
    CHECK(max_absolute_error(back[i].image, recs[i].image) <= cfg.png_ceiling / 255.0);
    CHECK(back[i].lesion_mask.bits == recs[i].lesion_mask.bits);
    CHECK(back[i].brain_mask.bits == recs[i].brain_mask.bits);
    CHECK(back[i].ventricle_mask.bits == recs[i].ventricle_mask.bits);
  }

  fs::remove(dir / "images" / (recs[3].id + ".png"));
  try {
    import_dataset(dir.string());
    FAIL("missing image not reported");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kIo);
    CHECK(std::string(e.what()).find(recs[3].id + ".png") != std::string::npos);
  }
  fs::remove(dir / "manifest.json");
  CHECK_THROWS_AS(import_dataset(dir.string()), Error);
  fs::remove_all(dir.parent_path());
}
