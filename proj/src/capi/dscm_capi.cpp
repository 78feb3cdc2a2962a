#include "dscm/dscm.h"

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>

#include <json.hpp>

#include "common/error.h"
#include "common/png_io.h"
#include "eval/evaluation.h"
#include "phantom/phantom.h"
#include "scm/model.h"
#include "service/service.h"
#include "train/checkpoint.h"
#include "train/trainer.h"

using nlohmann::json;
namespace fs = std::filesystem;
using namespace dscm;

struct dscm_dataset {
  std::vector<phantom::PhantomRecord> records;
  phantom::PhantomConfig config;
};

struct dscm_model {
  std::unique_ptr<scm::DeepScm> model;
  train::TrainState state;
  std::optional<train::Checkpoint> resume;  // optimizer moments from a loaded checkpoint
};

namespace {

thread_local std::string last_error;
thread_local std::string last_variable;

int fail(int status, const std::string& message, const std::string& variable = {}) {
  last_error = message;
  last_variable = variable;
  return status;
}

template <typename F>
int guarded(F&& body) {
  last_error.clear();
  last_variable.clear();
  try {
    body();
    return DSCM_OK;
  } catch (const VariableError& e) {
    return fail(static_cast<int>(e.code()), e.what(), e.variable());
  } catch (const Error& e) {
    return fail(static_cast<int>(e.code()), e.what());
  } catch (const json::exception& e) {
    return fail(DSCM_E_INVALID_ARGUMENT, std::string("JSON: ") + e.what());
  } catch (const fs::filesystem_error& e) {
    return fail(DSCM_E_IO, e.what());
  } catch (const std::exception& e) {
    return fail(DSCM_E_INTERNAL, e.what());
  }
}

void need(const void* p, const char* what) {
  if (!p) throw Error(ErrorCode::kInvalidArgument, std::string(what) + " must not be NULL");
}

char* dup(const std::string& s) {
  auto* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw Error(ErrorCode::kInternal, "out of memory");
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void put_json(char** out, const json& j) {
  if (out) *out = dup(j.dump());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw Error(ErrorCode::kIo, "cannot write '" + path.string() + "'");
  f << text << '\n';
}

vae::VaeConfig vae_for(const std::string& preset) {
  if (preset == "desk") return vae::VaeConfig::desk();
  if (preset == "small128") return vae::VaeConfig::small128();
  if (preset == "large224") return vae::VaeConfig::large224();
  throw Error(ErrorCode::kConfig, "unknown preset '" + preset + "'");
}

std::vector<ValueMap> covariates_of(const std::vector<phantom::PhantomRecord>& records) {
  std::vector<ValueMap> out;
  for (const auto& r : records) out.push_back(r.covariates);
  return out;
}

json shift_json(const eval::ShiftReport& r) {
  auto j = r.summary_json();
  j["pairs"] = r.pairs.size();
  return j;
}

}  // namespace

extern "C" {

const char* dscm_last_error(void) { return last_error.c_str(); }
const char* dscm_last_error_variable(void) { return last_variable.c_str(); }
const char* dscm_version(void) { return "0.1.0"; }
void dscm_string_free(char* s) { std::free(s); }

const char* dscm_status_name(int status) {
  if (status == DSCM_OK) return "ok";
  return error_code_name(static_cast<ErrorCode>(status));
}

int dscm_phantoms_generate(int count, uint64_t seed, const char* config_json, dscm_dataset** out) {
  return guarded([&] {
    need(out, "out");
    if (count < 0) throw Error(ErrorCode::kInvalidArgument, "count must be >= 0");
    auto d = std::make_unique<dscm_dataset>();
    if (config_json) d->config = phantom::PhantomConfig::from_json(json::parse(config_json));
    d->config.validate();
    d->records = phantom::generate_phantoms(count, d->config, seed);
    *out = d.release();
  });
}

int dscm_dataset_load(const char* dir, dscm_dataset** out) {
  return guarded([&] {
    need(dir, "dir");
    need(out, "out");
    auto d = std::make_unique<dscm_dataset>();
    d->records = phantom::import_dataset(dir, &d->config);
    *out = d.release();
  });
}

int dscm_dataset_save(const dscm_dataset* data, const char* dir) {
  return guarded([&] {
    need(data, "data");
    need(dir, "dir");
    phantom::export_dataset(data->records, data->config, dir);
  });
}

int dscm_dataset_size(const dscm_dataset* data, size_t* out) {
  return guarded([&] {
    need(data, "data");
    need(out, "out");
    *out = data->records.size();
  });
}

int dscm_dataset_slice(const dscm_dataset* data, size_t begin, size_t end, dscm_dataset** out) {
  return guarded([&] {
    need(data, "data");
    need(out, "out");
    if (begin > end || end > data->records.size()) throw Error(ErrorCode::kInvalidArgument, "slice out of range");
    auto d = std::make_unique<dscm_dataset>();
    d->config = data->config;
    d->records.assign(data->records.begin() + static_cast<std::ptrdiff_t>(begin),
                      data->records.begin() + static_cast<std::ptrdiff_t>(end));
    *out = d.release();
  });
}

void dscm_dataset_free(dscm_dataset* data) { delete data; }

int dscm_model_create(const dscm_dataset* data, const char* graph_json, const char* preset, uint64_t seed,
                      dscm_model** out) {
  return guarded([&] {
    need(data, "data");
    need(out, "out");
    if (data->records.empty()) throw Error(ErrorCode::kInvalidArgument, "cannot fit a model to an empty dataset");
    const std::string name = preset ? preset : "desk";
    auto spec = graph_json ? GraphSpec::from_json(json::parse(graph_json)) : GraphSpec::multiple_sclerosis();
    auto vc = vae_for(name);
    if (vc.height != data->config.size || vc.width != data->config.size)
      throw Error(ErrorCode::kConfig, "preset '" + name + "' expects " + std::to_string(vc.height) + " px images, data has " +
                                          std::to_string(data->config.size));
    torch::manual_seed(seed);
    auto m = std::make_unique<dscm_model>();
    m->model = std::make_unique<scm::DeepScm>(spec, scm::fit_bases(spec, covariates_of(data->records)), vc);
    m->model->train(false);
    m->state.config = train::TrainConfig::preset_named(name);
    m->state.config.seed = seed;
    *out = m.release();
  });
}

int dscm_model_load(const char* path, dscm_model** out) {
  return guarded([&] {
    need(path, "checkpoint_path");
    need(out, "out");
    auto ck = train::load_checkpoint(path);
    auto m = std::make_unique<dscm_model>();
    m->model = std::move(ck.model);
    m->model->train(false);
    m->state = ck.state;
    ck.model.reset();
    m->resume = std::move(ck);
    *out = m.release();
  });
}

int dscm_model_save(const dscm_model* model, const char* path) {
  return guarded([&] {
    need(model, "model");
    need(path, "checkpoint_path");
    train::save_checkpoint(path, *model->model, model->state);
  });
}

int dscm_model_info(const dscm_model* model, char** json_out) {
  return guarded([&] {
    need(model, "model");
    auto j = model->model->info();
    j["train_state"] = {{"epoch", model->state.epoch}, {"step", model->state.step},
                        {"config", model->state.config.to_json()}, {"last_metrics", model->state.last_metrics}};
    put_json(json_out, j);
  });
}

void dscm_model_free(dscm_model* model) { delete model; }

int dscm_train(dscm_model* model, const dscm_dataset* data, const char* config_json, const char* output_dir,
               dscm_epoch_callback callback, void* user, char** summary_json) {
  return guarded([&] {
    need(model, "model");
    need(data, "data");
    auto config = config_json ? train::TrainConfig::from_json(json::parse(config_json)) : model->state.config;
    const bool resuming = model->state.epoch > 0;
    train::TrainerOptions options;
    if (output_dir) options.output_dir = output_dir;
    if (callback)
      options.on_epoch = [&](const train::EpochMetrics& m) {
        json j = {{"epoch", m.epoch}, {"step", m.step}, {"lr", m.lr}, {"grad_norm", m.grad_norm},
                  {"seconds", m.seconds}, {"kl_weights", {m.kl.z0, m.kl.z1, m.kl.z2}}, {"components", m.components}};
        callback(j.dump().c_str(), user);
      };
    train::Trainer trainer(*model->model, config, options);
    if (resuming) {
      train::Checkpoint ck;
      ck.state = model->state;
      ck.state.config = config;
      if (model->resume) ck.optimizer = model->resume->optimizer;
      trainer.resume(ck);
    }
    const auto history = trainer.fit(train::TrainingData::from_phantoms(data->records));
    model->state = trainer.state();
    model->resume.reset();
    json summary = {{"epochs_run", history.size()}, {"epoch", model->state.epoch}, {"step", model->state.step}};
    if (!history.empty()) {
      summary["first"] = history.front().components;
      summary["last"] = history.back().components;
    }
    if (output_dir) summary["checkpoint"] = trainer.latest_checkpoint();
    put_json(summary_json, summary);
  });
}

int dscm_sample(const dscm_model* model, int count, uint64_t seed, const char* out_dir, char** json_out) {
  return guarded([&] {
    need(model, "model");
    if (count < 0) throw Error(ErrorCode::kInvalidArgument, "count must be >= 0");
    const auto samples = ancestral_sample(model->model->graph(), count, seed);
    const double ceiling = phantom::PhantomConfig{}.png_ceiling;
    json list = json::array();
    if (out_dir) fs::create_directories(out_dir);
    for (size_t i = 0; i < samples.size(); ++i) {
      json item = {{"covariates", samples[i].values}};
      if (out_dir && samples[i].image) {
        char name[32];
        std::snprintf(name, sizeof name, "sample_%03zu.png", i);
        write_png((fs::path(out_dir) / name).string(), phantom::to_gray8(*samples[i].image, ceiling));
        item["image"] = name;
      }
      list.push_back(item);
    }
    json result = {{"seed", seed}, {"samples", list}};
    if (out_dir) write_text(fs::path(out_dir) / "samples.json", result.dump(2));
    put_json(json_out, result);
  });
}

int dscm_counterfactual(const dscm_model* model, const dscm_dataset* data, const char* record_id,
                        const char* interventions_json, const char* out_dir, char** json_out) {
  return guarded([&] {
    need(model, "model");
    need(data, "data");
    need(record_id, "record_id");
    const phantom::PhantomRecord* rec = nullptr;
    for (const auto& r : data->records)
      if (r.id == record_id) rec = &r;
    if (!rec) throw Error(ErrorCode::kInvalidArgument, std::string("no record '") + record_id + "'");
    Intervention iv;
    if (interventions_json) iv.assignments = json::parse(interventions_json).get<ValueMap>();
    const auto obs = phantom::to_observation(*rec);
    const auto cf = counterfactual(model->model->graph(), obs, iv);
    json result = {{"record", rec->id},
                   {"interventions", iv.assignments},
                   {"covariates_before", obs.values},
                   {"covariates_after", cf.values}};
    if (out_dir) {
      fs::create_directories(out_dir);
      const fs::path dir(out_dir);
      const double ceiling = data->config.png_ceiling;
      write_png((dir / "original.png").string(), phantom::to_gray8(*obs.image, ceiling));
      write_png((dir / "counterfactual.png").string(), phantom::to_gray8(*cf.image, ceiling));
      write_png((dir / "diff.png").string(), service::encode_difference(*cf.image, *obs.image));
      result["images"] = {{"original", "original.png"}, {"counterfactual", "counterfactual.png"}, {"diff", "diff.png"}};
      write_text(dir / "covariates.json", result.dump(2));
    }
    put_json(json_out, result);
  });
}

int dscm_evaluate(const dscm_model* model, const dscm_dataset* data, const char* report_dir, char** json_out) {
  return guarded([&] {
    need(model, "model");
    need(data, "data");
    need(report_dir, "report_dir");
    const auto& g = model->model->graph();
    std::vector<phantom::PhantomRecord> lesioned, lesion_free, any_lesion;
    for (const auto& r : data->records) {
      const double l = r.covariates.at("l");
      if (l >= 10.0) lesioned.push_back(r);
      if (l == 0.0) lesion_free.push_back(r);
      if (l > 0.0) any_lesion.push_back(r);
    }
    const Intervention remove{{{"l", 0.0}}}, add{{{"l", 65.0}}};
    const auto removal = eval::lesion_volume_shift(g, lesioned, remove, data->config);
    const auto addition = eval::lesion_volume_shift(g, lesion_free, add, data->config);
    eval::export_report(removal, report_dir, "lesion_removal");
    eval::export_report(addition, report_dir, "lesion_addition");
    const auto fidelity = eval::counterfactual_fidelity(g, any_lesion, remove, data->config);
    const auto fit = eval::covariate_fit(*model->model, covariates_of(data->records));
    json fit_json = json::array();
    for (const auto& f : fit)
      fit_json.push_back({{"name", f.name}, {"nll", f.nll}, {"base_nll", f.base_nll}, {"count", f.count},
                          {"degenerate", f.degenerate}});
    const fs::path dir(report_dir);
    write_text(dir / "fidelity.json", fidelity.to_json().dump(2));
    write_text(dir / "covariate_fit.json", fit_json.dump(2));
    json summary = {{"records", data->records.size()},
                    {"lesion_removal", shift_json(removal)},
                    {"lesion_addition", shift_json(addition)},
                    {"fidelity",
                     {{"records", fidelity.records.size()},
                      {"mean_model_mae", fidelity.mean_model_mae},
                      {"mean_baseline_mae", fidelity.mean_baseline_mae}}},
                    {"covariate_fit", fit_json}};
    write_text(dir / "summary.json", summary.dump(2));
    put_json(json_out, summary);
  });
}

int dscm_serve(const dscm_model* model, const dscm_dataset* data, const char* host, int port) {
  return guarded([&] {
    need(model, "model");
    need(data, "data");
    // the service needs shared ownership; alias the handle's model without taking it
    std::shared_ptr<const scm::DeepScm> shared(std::shared_ptr<void>(), model->model.get());
    service::InferenceService svc(shared, data->records, data->config, "checkpoint");
    service::serve(svc, host ? host : "127.0.0.1", port > 0 ? port : service::port_from_environment());
  });
}

}  // extern "C"
