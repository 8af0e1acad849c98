#pragma once

// Experiment configuration. Stored as JSON; `//` and `/* */` comments are
// accepted on input. Unknown keys are rejected so typos fail loudly.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cag/model.hpp"
#include "cag/synth.hpp"
#include "cag/trainer.hpp"

namespace cag {

/// Appearance of one domain: x -> ((1 - mix) I + mix R) x + offset * u, plus
/// Gaussian noise. `matrix`/`offset_vector`, when given, replace the seeded map.
struct DomainShiftConfig {
  double mix = 0.0;
  double offset = 0.0;
  double noise_sigma = 0.0;
  std::vector<double> matrix;
  std::vector<double> offset_vector;

  bool operator==(const DomainShiftConfig&) const = default;
};

struct DataConfig {
  std::size_t categories = 6;
  std::size_t dim = 8;
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t coherence_scale = 4;
  double prototype_radius = 3.0;
  std::size_t source_count = 24;
  std::size_t target_train_count = 24;
  std::size_t target_eval_count = 24;
  DomainShiftConfig source;
  DomainShiftConfig target;
  /// Relative paths resolve against the output directory.
  std::string source_path = "data/source.cagd";
  std::string target_train_path = "data/target_train.cagd";
  std::string target_eval_path = "data/target_eval.cagd";

  bool operator==(const DataConfig&) const = default;
};

struct ModelConfig {
  std::size_t hidden = 32;
  std::size_t embed = 16;
  std::size_t feature = 16;

  bool operator==(const ModelConfig&) const = default;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  DataConfig data;
  ModelConfig model;
  TrainConfig train;
  bool use_warmup = true;
  /// Variant names for `ablate`: "warmup", "full", or '+'-joined terms out of
  /// dis_s, dis_t, dis (= dis_s+dis_t), ce_t, ce_tp.
  std::vector<std::string> ablation_variants = {"ce_tp", "ce_t", "dis", "dis+ce_t",
                                                "ce_t+ce_tp", "full"};
  std::string output_dir = "out";

  /// Throws ConfigError.
  void validate() const;
  ModelDims model_dims() const;
  /// Applies a seed to both the experiment and the training config.
  void set_seed(std::uint64_t s);

  bool operator==(const ExperimentConfig&) const = default;
};

/// Throws ConfigError on syntax errors, unknown keys, bad types or a missing
/// seed.
ExperimentConfig parse_config(const std::string& text);
std::string dump_config(const ExperimentConfig& cfg);
ExperimentConfig load_config(const std::string& path);
void save_config(const ExperimentConfig& cfg, const std::string& path);

/// Loss switches for a variant name; throws ConfigError for unknown names.
/// `adapts` is false for the "warmup" baseline, which runs no stages.
struct VariantSpec {
  std::string name;
  LossSwitches losses;
  bool adapts = true;
};
VariantSpec parse_variant(const std::string& name);

}  // namespace cag
