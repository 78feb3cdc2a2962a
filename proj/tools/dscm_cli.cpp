// Command-line front end over the C API.
#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>

#include "dscm/dscm.h"

using nlohmann::json;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RuntimeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void check(int status) {
  if (status == DSCM_OK) return;
  std::string msg = std::string(dscm_status_name(status)) + ": " + dscm_last_error();
  throw RuntimeError(msg);
}

std::string read_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw RuntimeError("cannot open '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::string take(char* s) {
  std::string out = s ? s : "";
  dscm_string_free(s);
  return out;
}

using Dataset = std::unique_ptr<dscm_dataset, decltype(&dscm_dataset_free)>;
using Model = std::unique_ptr<dscm_model, decltype(&dscm_model_free)>;

Dataset load_data(const std::string& dir) {
  dscm_dataset* d = nullptr;
  check(dscm_dataset_load(dir.c_str(), &d));
  return Dataset(d, dscm_dataset_free);
}

Model load_model(const std::string& path) {
  dscm_model* m = nullptr;
  check(dscm_model_load(path.c_str(), &m));
  return Model(m, dscm_model_free);
}

// "name=value" pairs into a JSON object
std::string parse_assignments(const std::vector<std::string>& items) {
  json out = json::object();
  for (const auto& item : items) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == item.size())
      throw UsageError("--do expects name=value, got '" + item + "'");
    const auto name = item.substr(0, eq), text = item.substr(eq + 1);
    size_t used = 0;
    double value = 0;
    try {
      value = std::stod(text, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != text.size()) throw UsageError("--do value for '" + name + "' is not a number: '" + text + "'");
    out[name] = value;
  }
  return out.dump();
}

void print_epoch(const char* metrics, void*) {
  const auto j = json::parse(metrics);
  const auto& c = j.at("components");
  std::printf("epoch %d  loss %.4f  elbo %.4f  lr %.3g  (%.1fs)\n", j.at("epoch").get<int>(),
              c.at("loss").get<double>(), c.at("elbo").get<double>(), j.at("lr").get<double>(),
              j.at("seconds").get<double>());
  std::fflush(stdout);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deep structural causal models on brain-image phantoms"};
  app.require_subcommand(1);

  // generate-phantoms
  int gen_count = 0;
  uint64_t gen_seed = 0;
  std::string gen_config, gen_out;
  auto* gen = app.add_subcommand("generate-phantoms", "Render a synthetic dataset with ground truth");
  gen->add_option("--count", gen_count, "Number of records")->required()->check(CLI::NonNegativeNumber);
  gen->add_option("--seed", gen_seed, "Random seed");
  gen->add_option("--config", gen_config, "Phantom config JSON")->check(CLI::ExistingFile);
  gen->add_option("--out", gen_out, "Output directory")->required();

  // train
  std::string tr_data, tr_out, tr_preset = "desk", tr_config, tr_graph, tr_resume;
  int tr_epochs = 0;
  uint64_t tr_seed = 1;
  auto* tr = app.add_subcommand("train", "Fit the model to a dataset");
  tr->add_option("--data", tr_data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  tr->add_option("--out", tr_out, "Output directory for metrics and checkpoints")->required();
  tr->add_option("--preset", tr_preset, "desk, small128 or large224")
      ->check(CLI::IsMember({"desk", "small128", "large224"}));
  tr->add_option("--config", tr_config, "Training config JSON")->check(CLI::ExistingFile);
  tr->add_option("--graph", tr_graph, "Graph declaration JSON")->check(CLI::ExistingFile);
  tr->add_option("--epochs", tr_epochs, "Override the epoch count")->check(CLI::PositiveNumber);
  tr->add_option("--seed", tr_seed, "Seed for initialization and shuffling");
  tr->add_option("--resume", tr_resume, "Checkpoint to continue from")->check(CLI::ExistingFile);

  // sample
  std::string sa_ckpt, sa_out;
  int sa_count = 6;
  uint64_t sa_seed = 0;
  auto* sa = app.add_subcommand("sample", "Ancestral samples from a trained model");
  sa->add_option("--checkpoint", sa_ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  sa->add_option("--count", sa_count, "Number of samples")->check(CLI::NonNegativeNumber);
  sa->add_option("--seed", sa_seed, "Random seed");
  sa->add_option("--out", sa_out, "Output directory")->required();

  // counterfactual
  std::string cf_ckpt, cf_data, cf_record, cf_out;
  std::vector<std::string> cf_do;
  auto* cf = app.add_subcommand("counterfactual", "Answer a do-query for one record");
  cf->add_option("--checkpoint", cf_ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  cf->add_option("--data", cf_data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  cf->add_option("--record", cf_record, "Record id")->required();
  cf->add_option("--do", cf_do, "Intervention name=value (repeatable)");
  cf->add_option("--out", cf_out, "Output directory")->required();

  // evaluate
  std::string ev_ckpt, ev_data, ev_report;
  auto* ev = app.add_subcommand("evaluate", "Lesion-volume shift, oracle fidelity and covariate fit");
  ev->add_option("--checkpoint", ev_ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  ev->add_option("--data", ev_data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--report", ev_report, "Report directory")->required();

  // serve
  std::string se_ckpt, se_data, se_host = "127.0.0.1";
  int se_port = 0;
  auto* se = app.add_subcommand("serve", "HTTP inference service");
  se->add_option("--checkpoint", se_ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  se->add_option("--data", se_data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  se->add_option("--host", se_host, "Bind address");
  se->add_option("--port", se_port, "Port (default: DSCM_PORT or 8080)")->check(CLI::Range(0, 65535));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*gen) {
      std::string config = gen_config.empty() ? std::string{} : read_file(gen_config);
      dscm_dataset* d = nullptr;
      check(dscm_phantoms_generate(gen_count, gen_seed, gen_config.empty() ? nullptr : config.c_str(), &d));
      Dataset data(d, dscm_dataset_free);
      check(dscm_dataset_save(data.get(), gen_out.c_str()));
      std::printf("wrote %d phantoms to %s\n", gen_count, gen_out.c_str());
    } else if (*tr) {
      auto data = load_data(tr_data);
      Model model(nullptr, dscm_model_free);
      json config;
      if (!tr_resume.empty()) {
        model = load_model(tr_resume);
        char* info = nullptr;
        check(dscm_model_info(model.get(), &info));
        config = json::parse(take(info)).at("train_state").at("config");
      } else {
        std::string graph = tr_graph.empty() ? std::string{} : read_file(tr_graph);
        dscm_model* m = nullptr;
        check(dscm_model_create(data.get(), tr_graph.empty() ? nullptr : graph.c_str(), tr_preset.c_str(), tr_seed, &m));
        model.reset(m);
        config = {{"preset", tr_preset}, {"seed", tr_seed}};
      }
      if (!tr_config.empty()) {
        try {
          config.update(json::parse(read_file(tr_config)));
        } catch (const json::exception& e) {
          throw RuntimeError("training config: " + std::string(e.what()));
        }
      }
      if (tr_epochs > 0) config["epochs"] = tr_epochs;
      char* summary = nullptr;
      check(dscm_train(model.get(), data.get(), config.dump().c_str(), tr_out.c_str(), print_epoch, nullptr, &summary));
      std::cout << take(summary) << '\n';
    } else if (*sa) {
      auto model = load_model(sa_ckpt);
      char* out = nullptr;
      check(dscm_sample(model.get(), sa_count, sa_seed, sa_out.c_str(), &out));
      take(out);
      std::printf("wrote %d samples to %s\n", sa_count, sa_out.c_str());
    } else if (*cf) {
      const auto assignments = parse_assignments(cf_do);
      auto model = load_model(cf_ckpt);
      auto data = load_data(cf_data);
      char* out = nullptr;
      const int status = dscm_counterfactual(model.get(), data.get(), cf_record.c_str(), assignments.c_str(),
                                             cf_out.c_str(), &out);
      if (status != DSCM_OK && *dscm_last_error_variable())
        throw RuntimeError(std::string(dscm_status_name(status)) + " (variable " + dscm_last_error_variable() +
                           "): " + dscm_last_error());
      check(status);
      std::cout << json::parse(take(out)).dump(2) << '\n';
    } else if (*ev) {
      auto model = load_model(ev_ckpt);
      auto data = load_data(ev_data);
      char* out = nullptr;
      check(dscm_evaluate(model.get(), data.get(), ev_report.c_str(), &out));
      std::cout << json::parse(take(out)).dump(2) << '\n';
    } else if (*se) {
      auto model = load_model(se_ckpt);
      auto data = load_data(se_data);
      std::fprintf(stderr, "serving on %s\n", se_host.c_str());
      check(dscm_serve(model.get(), data.get(), se_host.c_str(), se_port));
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
