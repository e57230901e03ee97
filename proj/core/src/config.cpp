#include "mtlcf/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "mtlcf/errors.hpp"

namespace mtlcf {

namespace {

using Json = nlohmann::ordered_json;

void check_keys(const Json& obj, const std::string& section,
                const std::set<std::string>& allowed) {
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.contains(key))
      throw ConfigError("config: unknown field '" + key + "' in " + section);
  }
}

template <typename T>
void read_field(const Json& obj, const std::string& section, const char* key, T& out) {
  if (!obj.contains(key)) return;
  try {
    obj.at(key).get_to(out);
  } catch (const Json::exception& e) {
    throw ConfigError("config: bad value for '" + section + "." + key + "': " + e.what());
  }
}

Json model_to_json(const ModelConfig& m) {
  return Json{{"input_dim", m.input_dim},   {"lstm_layers", m.lstm_layers},
              {"lstm_cells", m.lstm_cells}, {"relu_units", m.relu_units},
              {"vocab_size", m.vocab_size}, {"init_low", m.init_low},
              {"init_high", m.init_high},   {"seed", m.seed}};
}

ModelConfig model_from_json(const Json& j) {
  check_keys(j, "model",
             {"input_dim", "lstm_layers", "lstm_cells", "relu_units", "vocab_size", "init_low",
              "init_high", "seed"});
  ModelConfig m;
  read_field(j, "model", "input_dim", m.input_dim);
  read_field(j, "model", "lstm_layers", m.lstm_layers);
  read_field(j, "model", "lstm_cells", m.lstm_cells);
  read_field(j, "model", "relu_units", m.relu_units);
  read_field(j, "model", "vocab_size", m.vocab_size);
  read_field(j, "model", "init_low", m.init_low);
  read_field(j, "model", "init_high", m.init_high);
  read_field(j, "model", "seed", m.seed);
  return m;
}

Json domain_to_json(const DomainSpec& d) {
  return Json{{"domain_id", d.domain_id},
              {"vocab_size", d.vocab_size},
              {"raw_feature_dim", d.raw_feature_dim},
              {"frames_per_symbol", Json::array({d.frames_per_symbol_min, d.frames_per_symbol_max})},
              {"utterance_length", Json::array({d.utterance_len_min, d.utterance_len_max})},
              {"prototype_shift", d.prototype_shift},
              {"noise_sigma", d.noise_sigma},
              {"seed", d.seed},
              {"train_utterances", d.train_utterances},
              {"dev_utterances", d.dev_utterances},
              {"test_utterances", d.test_utterances}};
}

DomainSpec domain_from_json(const Json& j, const std::string& section) {
  check_keys(j, section,
             {"domain_id", "vocab_size", "raw_feature_dim", "frames_per_symbol",
              "utterance_length", "prototype_shift", "noise_sigma", "seed", "train_utterances",
              "dev_utterances", "test_utterances"});
  DomainSpec d;
  read_field(j, section, "domain_id", d.domain_id);
  read_field(j, section, "vocab_size", d.vocab_size);
  read_field(j, section, "raw_feature_dim", d.raw_feature_dim);
  if (j.contains("frames_per_symbol")) {
    const auto& r = j.at("frames_per_symbol");
    if (!r.is_array() || r.size() != 2)
      throw ConfigError("config: '" + section + ".frames_per_symbol' must be [min, max]");
    d.frames_per_symbol_min = r[0].get<int>();
    d.frames_per_symbol_max = r[1].get<int>();
  }
  if (j.contains("utterance_length")) {
    const auto& r = j.at("utterance_length");
    if (!r.is_array() || r.size() != 2)
      throw ConfigError("config: '" + section + ".utterance_length' must be [min, max]");
    d.utterance_len_min = r[0].get<int>();
    d.utterance_len_max = r[1].get<int>();
  }
  read_field(j, section, "prototype_shift", d.prototype_shift);
  read_field(j, section, "noise_sigma", d.noise_sigma);
  read_field(j, section, "seed", d.seed);
  read_field(j, section, "train_utterances", d.train_utterances);
  read_field(j, section, "dev_utterances", d.dev_utterances);
  read_field(j, section, "test_utterances", d.test_utterances);
  return d;
}

}  // namespace

void ExperimentConfig::validate() const {
  static const std::set<std::string> methods = {"base", "ft", "rt", "mtlcf"};
  if (!methods.contains(method))
    throw ConfigError("config: method must be one of base|ft|rt|mtlcf, got '" + method + "'");
  model.validate();
  domain0.validate();
  domain1.validate();
  hyper.validate();
  if (domain0.vocab_size != domain1.vocab_size)
    throw ConfigError("config: domains must share vocab_size");
  if (domain0.raw_feature_dim != domain1.raw_feature_dim)
    throw ConfigError("config: domains must share raw_feature_dim");
  if (static_cast<int>(model.vocab_size) != domain0.vocab_size)
    throw ConfigError("config: model.vocab_size must equal the domains' vocab_size");
  const std::size_t stacked =
      static_cast<std::size_t>(domain0.raw_feature_dim) * (kLfrLeftContext + 1);
  if (model.input_dim != stacked)
    throw ConfigError("config: model.input_dim must be raw_feature_dim * " +
                      std::to_string(kLfrLeftContext + 1) + " = " + std::to_string(stacked));
  if (domain0.domain_id == domain1.domain_id)
    throw ConfigError("config: domain ids must differ");
  if (!(optimizer.clip_low < optimizer.clip_high))
    throw ConfigError("config: optimizer.clip_low must be < clip_high");
  if (schedule.max_halvings < 0 || schedule.max_epochs < 1)
    throw ConfigError("config: invalid schedule bounds");
}

ExperimentConfig default_config() {
  ExperimentConfig c;
  c.domain0.domain_id = 0;
  c.domain0.prototype_shift = 0.0;
  c.domain0.seed = 101;
  c.domain1.domain_id = 1;
  c.domain1.prototype_shift = 1.5;
  c.domain1.seed = 202;
  return c;
}

std::string config_to_json(const ExperimentConfig& c) {
  Json j;
  j["method"] = c.method;
  j["seed"] = c.seed;
  j["out_dir"] = c.out_dir;
  j["model"] = model_to_json(c.model);
  j["domain0"] = domain_to_json(c.domain0);
  j["domain1"] = domain_to_json(c.domain1);
  j["hyper"] = Json{{"alpha", c.hyper.alpha},
                    {"beta", c.hyper.beta},
                    {"temperature", c.hyper.temperature},
                    {"batch_size", c.hyper.batch_size},
                    {"batch_aggregate", c.hyper.aggregate == BatchAggregate::mean ? "mean" : "sum"}};
  j["optimizer"] = Json{{"learning_rate", c.optimizer.learning_rate},
                        {"beta1", c.optimizer.beta1},
                        {"beta2", c.optimizer.beta2},
                        {"epsilon", c.optimizer.epsilon},
                        {"clip_low", c.optimizer.clip_low},
                        {"clip_high", c.optimizer.clip_high}};
  j["schedule"] = Json{{"min_rel_improvement", c.schedule.min_rel_improvement},
                       {"max_halvings", c.schedule.max_halvings},
                       {"max_epochs", c.schedule.max_epochs}};
  return j.dump(2) + "\n";
}

ExperimentConfig config_from_json(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  check_keys(j, "config root",
             {"method", "seed", "out_dir", "model", "domain0", "domain1", "hyper", "optimizer",
              "schedule"});
  ExperimentConfig c = default_config();
  read_field(j, "root", "method", c.method);
  read_field(j, "root", "seed", c.seed);
  read_field(j, "root", "out_dir", c.out_dir);
  if (j.contains("model")) c.model = model_from_json(j.at("model"));
  if (j.contains("domain0")) c.domain0 = domain_from_json(j.at("domain0"), "domain0");
  if (j.contains("domain1")) c.domain1 = domain_from_json(j.at("domain1"), "domain1");
  if (j.contains("hyper")) {
    const Json& h = j.at("hyper");
    check_keys(h, "hyper", {"alpha", "beta", "temperature", "batch_size", "batch_aggregate"});
    read_field(h, "hyper", "alpha", c.hyper.alpha);
    read_field(h, "hyper", "beta", c.hyper.beta);
    read_field(h, "hyper", "temperature", c.hyper.temperature);
    read_field(h, "hyper", "batch_size", c.hyper.batch_size);
    if (h.contains("batch_aggregate")) {
      const std::string agg = h.at("batch_aggregate").get<std::string>();
      if (agg == "mean")
        c.hyper.aggregate = BatchAggregate::mean;
      else if (agg == "sum")
        c.hyper.aggregate = BatchAggregate::sum;
      else
        throw ConfigError("config: hyper.batch_aggregate must be 'mean' or 'sum'");
    }
  }
  if (j.contains("optimizer")) {
    const Json& o = j.at("optimizer");
    check_keys(o, "optimizer",
               {"learning_rate", "beta1", "beta2", "epsilon", "clip_low", "clip_high"});
    read_field(o, "optimizer", "learning_rate", c.optimizer.learning_rate);
    read_field(o, "optimizer", "beta1", c.optimizer.beta1);
    read_field(o, "optimizer", "beta2", c.optimizer.beta2);
    read_field(o, "optimizer", "epsilon", c.optimizer.epsilon);
    read_field(o, "optimizer", "clip_low", c.optimizer.clip_low);
    read_field(o, "optimizer", "clip_high", c.optimizer.clip_high);
  }
  if (j.contains("schedule")) {
    const Json& s = j.at("schedule");
    check_keys(s, "schedule", {"min_rel_improvement", "max_halvings", "max_epochs"});
    read_field(s, "schedule", "min_rel_improvement", c.schedule.min_rel_improvement);
    read_field(s, "schedule", "max_halvings", c.schedule.max_halvings);
    read_field(s, "schedule", "max_epochs", c.schedule.max_epochs);
  }
  return c;
}

void save_config(const ExperimentConfig& config, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write config: " + path);
  out << config_to_json(config);
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingInput("config file not found: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return config_from_json(buf.str());
}

}  // namespace mtlcf
