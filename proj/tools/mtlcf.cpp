#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mtlcf/config.hpp"
#include "mtlcf/errors.hpp"
#include "mtlcf/eval.hpp"
#include "mtlcf/report.hpp"
#include "mtlcf/trainer.hpp"

namespace fs = std::filesystem;
using namespace mtlcf;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitMissingInput = 3;
constexpr int kExitNumeric = 4;
constexpr int kExitOther = 1;

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t x = a ^ (b + 0x9E3779B97F4A7C15ULL + (a << 6) + (a >> 2));
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

struct TrainArgs {
  std::string config_path;
  std::string method;
  std::string data0_dir;
  std::string data1_dir;
  std::string base_ckpt;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

DatasetSplit load_domain_dir(const std::string& dir, int domain) {
  const std::string stem = "domain" + std::to_string(domain);
  return load_dataset(dir, stem);
}

void write_run_meta(const TrainRun& run, const std::string& dir) {
  nlohmann::ordered_json j;
  j["method"] = method_name(run.method);
  j["seed"] = run.seed;
  j["scale_tar"] = run.scale_tar;
  j["test_org_fingerprint"] = run.test_org_fingerprint;
  j["test_tar_fingerprint"] = run.test_tar_fingerprint;
  j["epochs"] = run.history.empty() ? 0 : run.history.back().epoch;
  j["final_cer_org"] = run.history.empty() ? 0.0 : run.history.back().cer_org;
  j["final_cer_tar"] = run.history.empty() ? 0.0 : run.history.back().cer_tar;
  std::ofstream out(dir + "/run_meta.json");
  if (!out) throw std::runtime_error("cannot write run_meta.json in " + dir);
  out << j.dump(2) << "\n";
}

// reconstructs enough of a TrainRun from a run directory for reporting
TrainRun load_run_dir(const std::string& dir) {
  const std::string history_path = dir + "/history.csv";
  const std::string meta_path = dir + "/run_meta.json";
  if (!fs::exists(meta_path)) throw MissingInput("incomplete run directory (no run_meta.json): " + dir);
  if (!fs::exists(history_path)) throw MissingInput("incomplete run directory (no history.csv): " + dir);

  TrainRun run;
  std::ifstream meta(meta_path);
  nlohmann::json j = nlohmann::json::parse(meta);
  const std::string method = j.at("method").get<std::string>();
  if (method == "ft") run.method = TrainMethod::ft;
  else if (method == "rt") run.method = TrainMethod::rt;
  else if (method == "mtlcf") run.method = TrainMethod::mtlcf;
  else run.method = TrainMethod::rt;  // "base" reports like a from-scratch run
  run.seed = j.at("seed").get<std::uint64_t>();
  run.scale_tar = j.at("scale_tar").get<std::size_t>();
  run.test_org_fingerprint = j.at("test_org_fingerprint").get<std::uint64_t>();
  run.test_tar_fingerprint = j.at("test_tar_fingerprint").get<std::uint64_t>();

  std::ifstream in(history_path);
  std::string line;
  std::getline(in, line);
  if (line != EpochRecord::csv_header())
    throw std::runtime_error("unexpected history.csv header in " + dir);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    EpochRecord r;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream is(line);
    if (!(is >> r.epoch >> r.lr >> r.dev_loss >> r.cer_org >> r.cer_tar >> r.sub_loss1 >>
          r.sub_loss2 >> r.loss2))
      throw std::runtime_error("corrupt history.csv row in " + dir);
    run.history.push_back(r);
  }
  if (run.history.empty()) throw std::runtime_error("empty history.csv in " + dir);
  return run;
}

int cmd_gen_data(const std::string& config_path, const std::string& out_dir) {
  ExperimentConfig config = load_config(config_path);
  config.validate();
  fs::create_directories(out_dir);
  DatasetSplit d0 = gen_domain(config.domain0);
  DatasetSplit d1 = gen_domain(config.domain1);
  save_dataset(d0, out_dir, "domain0");
  save_dataset(d1, out_dir, "domain1");
  save_config(config, out_dir + "/config.json");
  std::cout << "wrote 6 split files under " << out_dir << "\n";
  return kExitOk;
}

int cmd_train(const TrainArgs& args) {
  ExperimentConfig config = load_config(args.config_path);
  if (!args.method.empty()) config.method = args.method;
  if (args.seed_set) config.seed = args.seed;
  if (!args.out_dir.empty()) config.out_dir = args.out_dir;
  config.validate();

  const std::string& method = config.method;
  const bool needs_base = method == "ft" || method == "mtlcf";
  const bool needs_data0 = method != "ft";
  if (needs_base && args.base_ckpt.empty())
    throw MissingInput("train: method '" + method + "' requires --base checkpoint");
  if (needs_data0 && args.data0_dir.empty())
    throw MissingInput("train: method '" + method + "' requires --data0");
  if (method != "base" && args.data1_dir.empty())
    throw MissingInput("train: method '" + method + "' requires --data1");

  std::optional<DatasetSplit> data0, data1;
  if (!args.data0_dir.empty()) data0 = load_domain_dir(args.data0_dir, 0);
  if (!args.data1_dir.empty()) data1 = load_domain_dir(args.data1_dir, 1);

  TrainOptions opts;
  opts.adam = config.optimizer;
  opts.schedule = config.schedule;
  opts.seed = config.seed;
  opts.run_dir = config.out_dir;
  if (data0.has_value()) opts.test_org = &data0->test;
  if (data1.has_value()) opts.test_tar = &data1->test;

  fs::create_directories(config.out_dir);
  save_config(config, config.out_dir + "/config.json");

  TrainRun run;
  if (method == "mtlcf") {
    ModelParams base = load_checkpoint(args.base_ckpt);
    run = train_mtlcf(base, *data0, *data1, config.hyper, opts);
  } else if (method == "ft") {
    ModelParams base = load_checkpoint(args.base_ckpt);
    run = train_ft(base, *data1, config.hyper, opts);
  } else if (method == "rt") {
    DatasetSplit pooled = pool_datasets(*data0, *data1);
    ModelConfig mc = config.model;
    mc.seed = mix(config.model.seed, config.seed);
    run = train_rt(pooled, mc, config.hyper, opts);
  } else {  // base: train the original model on domain 0 alone, from scratch
    DatasetSplit only0 = *data0;
    run = train_rt(only0, config.model, config.hyper, opts);
  }
  write_run_meta(run, config.out_dir);
  std::cout << "converged after " << run.history.back().epoch << " epochs; history at "
            << config.out_dir << "/history.csv\n";
  return kExitOk;
}

int cmd_eval(const std::string& model_path, const std::string& data_path,
             const std::string& dataset_id, const std::string& out_path) {
  ModelParams model = load_checkpoint(model_path);
  std::vector<FeatureSequence> split = load_split_file(data_path);
  EvalReport report = evaluate(model, split, dataset_id);
  std::cout << EvalReport::csv_header() << "\n" << report.csv_row() << "\n";
  if (!out_path.empty()) {
    std::ofstream out(out_path);
    if (!out) throw std::runtime_error("cannot write " + out_path);
    out << "utterance,cer\n";
    for (std::size_t i = 0; i < report.per_utterance.size(); ++i) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%zu,%.17g", i, report.per_utterance[i]);
      out << buf << "\n";
    }
  }
  return kExitOk;
}

int cmd_sweep(const std::string& config_path, const std::string& parameter,
              const std::string& values_csv, const std::string& data0_dir,
              const std::string& data1_dir, const std::string& base_ckpt,
              const std::string& out_dir) {
  if (parameter != "alpha" && parameter != "beta")
    throw ConfigError("sweep: --parameter must be alpha or beta");
  std::vector<double> values;
  std::stringstream ss(values_csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) values.push_back(std::stod(tok));
  }
  if (values.empty()) throw ConfigError("sweep: empty value list");

  ExperimentConfig config = load_config(config_path);
  config.method = "mtlcf";
  config.validate();
  DatasetSplit data0 = load_domain_dir(data0_dir, 0);
  DatasetSplit data1 = load_domain_dir(data1_dir, 1);
  ModelParams base = load_checkpoint(base_ckpt);

  fs::create_directories(out_dir);
  std::ofstream sweep_csv(out_dir + "/sweep.csv");
  if (!sweep_csv) throw std::runtime_error("cannot write sweep.csv in " + out_dir);
  sweep_csv << "parameter,value,cer_org,cer_tar\n";

  for (double value : values) {
    HyperParams hyper = config.hyper;
    if (parameter == "alpha") {
      hyper.alpha = value;
      hyper.beta = 0.5;
    } else {
      hyper.beta = value;
      hyper.alpha = 0.5;
    }
    char sub[64];
    std::snprintf(sub, sizeof(sub), "%s/%s_%g", out_dir.c_str(), parameter.c_str(), value);
    TrainOptions opts;
    opts.adam = config.optimizer;
    opts.schedule = config.schedule;
    opts.seed = config.seed;
    opts.run_dir = sub;
    opts.test_org = &data0.test;
    opts.test_tar = &data1.test;
    fs::create_directories(sub);
    ExperimentConfig sub_config = config;
    sub_config.hyper = hyper;
    sub_config.out_dir = sub;
    save_config(sub_config, std::string(sub) + "/config.json");
    TrainRun run = train_mtlcf(base, data0, data1, hyper, opts);
    write_run_meta(run, sub);
    char row[160];
    std::snprintf(row, sizeof(row), "%s,%.17g,%.17g,%.17g", parameter.c_str(), value,
                  run.history.back().cer_org, run.history.back().cer_tar);
    sweep_csv << row << "\n";
    std::cout << parameter << "=" << value << " cer_org=" << run.history.back().cer_org
              << " cer_tar=" << run.history.back().cer_tar << "\n";
  }
  std::cout << "sweep table at " << out_dir << "/sweep.csv\n";
  return kExitOk;
}

int cmd_report(const std::vector<std::string>& run_dirs, const std::string& out_dir) {
  std::vector<TrainRun> runs;
  runs.reserve(run_dirs.size());
  for (const std::string& dir : run_dirs) runs.push_back(load_run_dir(dir));
  std::vector<const TrainRun*> ptrs;
  for (const TrainRun& r : runs) ptrs.push_back(&r);

  fs::create_directories(out_dir);
  write_comparison_csv(build_comparison(ptrs), out_dir + "/comparison.csv");
  for (std::size_t i = 0; i < runs.size(); ++i) {
    char name[128];
    std::snprintf(name, sizeof(name), "%s/curve_%zu_%s.csv", out_dir.c_str(), i,
                  method_name(runs[i].method).c_str());
    write_curve_csv(runs[i], name);
  }
  std::cout << "comparison table and " << runs.size() << " curve files at " << out_dir << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-domain continual training for CTC sequence models"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate both domains' dataset files");
  std::string gen_config, gen_out;
  gen->add_option("--config", gen_config, "Experiment config (json)")->required();
  gen->add_option("--out", gen_out, "Output directory")->required();

  // train
  auto* train = app.add_subcommand("train", "Train base/ft/rt/mtlcf");
  TrainArgs targs;
  train->add_option("--config", targs.config_path, "Experiment config (json)")->required();
  train->add_option("--method", targs.method, "base|ft|rt|mtlcf (overrides config)");
  train->add_option("--data0", targs.data0_dir, "Directory with domain0.* split files");
  train->add_option("--data1", targs.data1_dir, "Directory with domain1.* split files");
  train->add_option("--base", targs.base_ckpt, "Base model checkpoint (ft/mtlcf)");
  train->add_option("--out", targs.out_dir, "Run directory (overrides config)");
  auto* seed_opt = train->add_option("--seed", targs.seed, "Run seed (overrides config)");

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a split file");
  std::string ev_model, ev_data, ev_id = "dataset", ev_out;
  ev->add_option("--model", ev_model, "Model checkpoint")->required();
  ev->add_option("--data", ev_data, "Split file (one utterance per line)")->required();
  ev->add_option("--id", ev_id, "Dataset id for the report");
  ev->add_option("--per-utterance", ev_out, "Optional per-utterance CER csv");

  // sweep
  auto* sw = app.add_subcommand("sweep", "Run an alpha or beta sweep of mtlcf");
  std::string sw_config, sw_param, sw_values, sw_d0, sw_d1, sw_base, sw_out;
  sw->add_option("--config", sw_config, "Experiment config (json)")->required();
  sw->add_option("--parameter", sw_param, "alpha|beta")->required();
  sw->add_option("--values", sw_values, "Comma-separated values, e.g. 0.1,0.5,0.9")->required();
  sw->add_option("--data0", sw_d0, "Directory with domain0.* split files")->required();
  sw->add_option("--data1", sw_d1, "Directory with domain1.* split files")->required();
  sw->add_option("--base", sw_base, "Base model checkpoint")->required();
  sw->add_option("--out", sw_out, "Sweep output directory")->required();

  // report
  auto* rep = app.add_subcommand("report", "Build comparison table and learning curves");
  std::vector<std::string> rep_runs;
  std::string rep_out;
  rep->add_option("--runs", rep_runs, "Run directories")->required()->delimiter(',');
  rep->add_option("--out", rep_out, "Report output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_config, gen_out);
    if (train->parsed()) {
      targs.seed_set = seed_opt->count() > 0;
      return cmd_train(targs);
    }
    if (ev->parsed()) return cmd_eval(ev_model, ev_data, ev_id, ev_out);
    if (sw->parsed()) return cmd_sweep(sw_config, sw_param, sw_values, sw_d0, sw_d1, sw_base, sw_out);
    if (rep->parsed()) return cmd_report(rep_runs, rep_out);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const MissingInput& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitMissingInput;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitOther;
  }
  return kExitOther;
}
