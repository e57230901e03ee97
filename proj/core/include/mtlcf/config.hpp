#pragma once

#include <string>

#include "mtlcf/data.hpp"
#include "mtlcf/losses.hpp"
#include "mtlcf/model.hpp"
#include "mtlcf/trainer.hpp"

namespace mtlcf {

// Everything a run needs; a run is reproducible from its config file alone.
struct ExperimentConfig {
  std::string method = "mtlcf";  // base | ft | rt | mtlcf
  std::uint64_t seed = 7;
  std::string out_dir = "runs/out";
  ModelConfig model;
  DomainSpec domain0;
  DomainSpec domain1;
  HyperParams hyper;
  AdamConfig optimizer;
  ScheduleConfig schedule;

  void validate() const;
};

// Defaults: desk-scale two-domain setup with a shifted target domain.
ExperimentConfig default_config();

std::string config_to_json(const ExperimentConfig& config);
ExperimentConfig config_from_json(const std::string& text);

void save_config(const ExperimentConfig& config, const std::string& path);
ExperimentConfig load_config(const std::string& path);

}  // namespace mtlcf
