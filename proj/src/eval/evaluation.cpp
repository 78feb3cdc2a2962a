#include "eval/evaluation.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "common/error.h"
#include "train/objective.h"

namespace dscm::eval {

namespace fs = std::filesystem;
using nlohmann::json;

double quantile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

Summary summarize(const std::vector<double>& values) {
  Summary s;
  s.count = values.size();
  s.median = quantile(values, 0.5);
  s.q1 = quantile(values, 0.25);
  s.q3 = quantile(values, 0.75);
  return s;
}

Histogram histogram(const std::vector<VolumePair>& pairs, int bins) {
  Histogram h;
  double top = 1.0;
  for (const auto& p : pairs) top = std::max({top, p.original, p.counterfactual});
  top = std::ceil(top / 5.0) * 5.0;
  h.width = top / bins;
  h.original.assign(static_cast<size_t>(bins), 0);
  h.counterfactual.assign(static_cast<size_t>(bins), 0);
  auto bin = [&](double v) { return std::clamp(static_cast<int>(v / h.width), 0, bins - 1); };
  for (const auto& p : pairs) {
    ++h.original[static_cast<size_t>(bin(p.original))];
    ++h.counterfactual[static_cast<size_t>(bin(p.counterfactual))];
  }
  return h;
}

ShiftReport make_report(const Intervention& intervention, std::vector<VolumePair> pairs) {
  ShiftReport r;
  r.intervention = intervention;
  r.pairs = std::move(pairs);
  std::vector<double> a, b;
  for (const auto& p : r.pairs) {
    a.push_back(p.original);
    b.push_back(p.counterfactual);
  }
  r.original = summarize(a);
  r.counterfactual = summarize(b);
  r.histogram = histogram(r.pairs);
  return r;
}

json ShiftReport::summary_json() const {
  auto s = [](const Summary& x) {
    return json{{"count", x.count}, {"median", x.median}, {"q1", x.q1}, {"q3", x.q3}, {"iqr", x.iqr()}};
  };
  return {{"intervention", intervention.assignments},
          {"original", s(original)},
          {"counterfactual", s(counterfactual)},
          {"histogram",
           {{"lo", histogram.lo},
            {"width", histogram.width},
            {"original", histogram.original},
            {"counterfactual", histogram.counterfactual}}}};
}

ShiftReport lesion_volume_shift(const CausalGraph& model, const std::vector<phantom::PhantomRecord>& records,
                                const Intervention& intervention, const phantom::PhantomConfig& config) {
  std::vector<VolumePair> pairs;
  pairs.reserve(records.size());
  for (const auto& r : records) {
    const auto obs = phantom::to_observation(r);
    const auto cf = counterfactual(model, obs, intervention);
    pairs.push_back({r.id, phantom::segment_lesions(r.image, r.brain_mask, config).volume_ml,
                     phantom::segment_lesions(*cf.image, r.brain_mask, config).volume_ml});
  }
  return make_report(intervention, std::move(pairs));
}

json FidelityReport::to_json() const {
  json rows = json::array();
  for (const auto& r : records)
    rows.push_back({{"id", r.id}, {"model_mae", r.model_mae}, {"baseline_mae", r.baseline_mae},
                    {"covariate_error", r.covariate_error}});
  return {{"mean_model_mae", mean_model_mae}, {"mean_baseline_mae", mean_baseline_mae},
          {"mean_covariate_error", mean_covariate_error}, {"records", rows}};
}

FidelityReport counterfactual_fidelity(const CausalGraph& model, const std::vector<phantom::PhantomRecord>& records,
                                       const Intervention& intervention, const phantom::PhantomConfig& config) {
  FidelityReport rep;
  for (const auto& r : records) {
    const auto truth = phantom::true_counterfactual(r, intervention, config);
    const auto cf = counterfactual(model, phantom::to_observation(r), intervention);
    FidelityRecord f;
    f.id = r.id;
    f.model_mae = mean_absolute_error(*cf.image, truth.image);
    f.baseline_mae = mean_absolute_error(r.image, truth.image);
    for (const auto& [k, v] : truth.covariates) f.covariate_error[k] = std::abs(cf.values.at(k) - v);
    rep.mean_model_mae += f.model_mae;
    rep.mean_baseline_mae += f.baseline_mae;
    for (const auto& [k, e] : f.covariate_error) rep.mean_covariate_error[k] += e;
    rep.records.push_back(std::move(f));
  }
  if (!rep.records.empty()) {
    const auto n = static_cast<double>(rep.records.size());
    rep.mean_model_mae /= n;
    rep.mean_baseline_mae /= n;
    for (auto& [k, e] : rep.mean_covariate_error) e /= n;
  }
  return rep;
}

std::vector<CovariateFit> covariate_fit(const scm::DeepScm& model, const std::vector<ValueMap>& records) {
  const auto& spec = model.spec();
  std::vector<CovariateFit> out;
  if (records.empty()) return out;
  train::TrainingData data;
  for (size_t i = 0; i < records.size(); ++i) data.ids.push_back(std::to_string(i));
  for (const auto& name : model.covariates()) {
    std::vector<double> col;
    for (const auto& r : records) {
      auto it = r.find(name);
      if (it == r.end()) throw VariableError(ErrorCode::kInvalidArgument, name, "record is missing '" + name + "'");
      col.push_back(it->second);
    }
    data.covariates[name] = torch::tensor(col, torch::kFloat64);
  }

  torch::NoGradGuard guard;
  for (const auto& name : model.covariates()) {
    const auto& v = spec.variable(name);
    CovariateFit fit;
    fit.name = name;
    fit.count = records.size();
    const auto& col = data.covariates.at(name);
    fit.degenerate = col.max().item<double>() == col.min().item<double>();
    if (!fit.degenerate) {
      const auto& mech = model.covariate(name);
      const auto internal = v.dequantize ? col + 0.5 : col;
      fit.nll = -mech.log_prob_batch(internal, train::parent_matrix(spec, v, data)).mean().item<double>();
      const double* p = internal.data_ptr<double>();
      double base = 0;
      for (int64_t i = 0; i < internal.numel(); ++i) base -= mech.base_log_prob(p[i]);
      fit.base_nll = base / static_cast<double>(internal.numel());
    }
    out.push_back(fit);
  }
  return out;
}

namespace {

struct Canvas {
  Rgb8 img;
  Canvas(int h, int w) { img = {h, w, std::vector<uint8_t>(static_cast<size_t>(h) * w * 3, 255)}; }
  void dot(int x, int y, std::array<uint8_t, 3> c) {
    if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
    auto* p = &img.pixels[(static_cast<size_t>(y) * img.width + x) * 3];
    p[0] = c[0], p[1] = c[1], p[2] = c[2];
  }
  void rect(int x0, int y0, int x1, int y1, std::array<uint8_t, 3> c) {
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) dot(x, y, c);
  }
  void line(int x0, int y0, int x1, int y1, std::array<uint8_t, 3> c) {
    const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    while (true) {
      dot(x0, y0, c);
      if (x0 == x1 && y0 == y1) break;
      const int e2 = 2 * err;
      if (e2 >= dy) err += dy, x0 += sx;
      if (e2 <= dx) err += dx, y0 += sy;
    }
  }
};

constexpr std::array<uint8_t, 3> kOriginal{70, 110, 200};
constexpr std::array<uint8_t, 3> kCounterfactual{230, 130, 40};
constexpr std::array<uint8_t, 3> kAxis{40, 40, 40};

}  // namespace

// Overlaid histograms of original and counterfactual volumes, with an inset
// of paired before/after lines in the upper right.
Rgb8 render_histogram(const ShiftReport& report) {
  const int W = 480, H = 300, left = 30, bottom = H - 25, top = 15, right = W - 15;
  Canvas cv(H, W);
  const auto& h = report.histogram;
  const int bins = static_cast<int>(h.original.size());
  int peak = 1;
  for (int i = 0; i < bins; ++i) peak = std::max({peak, h.original[i], h.counterfactual[i]});
  const double bw = static_cast<double>(right - left) / std::max(bins, 1);
  for (int i = 0; i < bins; ++i) {
    const int x0 = left + static_cast<int>(i * bw), x1 = left + static_cast<int>((i + 1) * bw);
    const int mid = (x0 + x1) / 2;
    const int ho = static_cast<int>((bottom - top) * static_cast<double>(h.original[i]) / peak);
    const int hc = static_cast<int>((bottom - top) * static_cast<double>(h.counterfactual[i]) / peak);
    cv.rect(x0 + 1, bottom - ho, mid, bottom, kOriginal);
    cv.rect(mid, bottom - hc, x1 - 1, bottom, kCounterfactual);
  }
  cv.line(left, bottom, right, bottom, kAxis);
  cv.line(left, bottom, left, top, kAxis);
  for (int i = 0; i <= bins; i += 5) {
    const int x = left + static_cast<int>(i * bw);
    cv.line(x, bottom, x, bottom + 4, kAxis);
  }

  // inset: paired plot
  const int ix0 = W - 160, ix1 = W - 25, iy0 = 25, iy1 = 125;
  cv.rect(ix0, iy0, ix1, iy1, {245, 245, 245});
  cv.line(ix0, iy1, ix1, iy1, kAxis);
  cv.line(ix0, iy0, ix0, iy1, kAxis);
  const double vmax = h.width * bins;
  auto ypos = [&](double v) { return iy1 - 4 - static_cast<int>((iy1 - iy0 - 8) * std::clamp(v / vmax, 0.0, 1.0)); };
  const int xa = ix0 + 25, xb = ix1 - 25;
  for (const auto& p : report.pairs) cv.line(xa, ypos(p.original), xb, ypos(p.counterfactual), {150, 150, 150});
  for (const auto& p : report.pairs) {
    cv.rect(xa - 2, ypos(p.original) - 1, xa + 2, ypos(p.original) + 2, kOriginal);
    cv.rect(xb - 2, ypos(p.counterfactual) - 1, xb + 2, ypos(p.counterfactual) + 2, kCounterfactual);
  }
  return cv.img;
}

void export_report(const ShiftReport& report, const std::string& dir, const std::string& stem) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot create '" + dir + "': " + ec.message());
  const auto base = fs::path(dir) / stem;
  {
    std::ofstream f(base.string() + ".csv");
    if (!f) throw Error(ErrorCode::kIo, "cannot write '" + base.string() + ".csv'");
    f << "id,original_ml,counterfactual_ml\n";
    char buf[96];
    for (const auto& p : report.pairs) {
      std::snprintf(buf, sizeof buf, ",%.17g,%.17g\n", p.original, p.counterfactual);
      f << p.id << buf;
    }
  }
  {
    std::ofstream f(base.string() + "_summary.json");
    if (!f) throw Error(ErrorCode::kIo, "cannot write '" + base.string() + "_summary.json'");
    f << report.summary_json().dump(2) << '\n';
  }
  write_png(base.string() + ".png", render_histogram(report));
}

std::vector<VolumePair> import_pairs(const std::string& csv_path) {
  std::ifstream f(csv_path);
  if (!f) throw Error(ErrorCode::kIo, "cannot open '" + csv_path + "'");
  std::string line;
  if (!std::getline(f, line) || line != "id,original_ml,counterfactual_ml")
    throw Error(ErrorCode::kIo, "'" + csv_path + "' is not a lesion-shift CSV");
  std::vector<VolumePair> out;
  int row = 1;
  while (std::getline(f, line)) {
    ++row;
    if (line.empty()) continue;
    std::stringstream ss(line);
    VolumePair p;
    std::string a, b;
    if (!std::getline(ss, p.id, ',') || !std::getline(ss, a, ',') || !std::getline(ss, b))
      throw Error(ErrorCode::kIo, csv_path + ": malformed row " + std::to_string(row));
    try {
      p.original = std::stod(a);
      p.counterfactual = std::stod(b);
    } catch (const std::exception&) {
      throw Error(ErrorCode::kIo, csv_path + ": bad number on row " + std::to_string(row));
    }
    out.push_back(p);
  }
  return out;
}

}  // namespace dscm::eval
