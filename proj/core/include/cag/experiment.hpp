#pragma once

// End-to-end experiment drivers behind the `cag` command-line tool. Each
// driver is a pure function of (config, input files) to output files.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cag/anchors.hpp"
#include "cag/config.hpp"
#include "cag/metrics.hpp"
#include "cag/synth.hpp"
#include "cag/trainer.hpp"

namespace cag {

struct DomainData {
  Dataset source;
  Dataset target_train;
  Dataset target_eval;
};

/// Domain specs implied by a config: {source, target-train, target-eval}.
/// The two target specs differ only in seed.
std::vector<DomainSpec> domain_specs(const ExperimentConfig& cfg);
DomainData generate_data(const ExperimentConfig& cfg);

/// Anchor vs probability pseudo-labels on one model, audited against the
/// target labels. `matched` uses the margin at which anchor coverage equals the
/// probability coverage at `prob_threshold`; `configured` uses cfg.margin.
struct ReliabilityAudit {
  double prob_threshold = 0.0;
  PseudoLabelAudit prob;
  double matched_margin = 0.0;
  PseudoLabelAudit matched;
  double configured_margin = 0.0;
  PseudoLabelAudit configured;
};
ReliabilityAudit reliability_audit(const SegModel& model, const Dataset& source,
                                   const Dataset& target_labeled, const TrainConfig& cfg);
std::string reliability_table(const ReliabilityAudit& audit);

struct StageMetrics {
  std::size_t stage = 0;
  EvalReport report;                 ///< target-eval after the stage
  PseudoLabelAudit anchor_audit;     ///< frozen anchor pseudo-labels vs target-train oracle
  PseudoLabelAudit prob_audit;       ///< frozen probability pseudo-labels vs oracle
  double distance_at_start = 0.0;    ///< mean active-pixel distance to anchors, stage start
  double distance_at_end = 0.0;      ///< same, after the stage's last iteration
};

struct RunResult {
  std::optional<EvalReport> source_only;  ///< pretrained model on target-eval
  std::optional<EvalReport> warmup;       ///< warmed model on target-eval
  std::optional<ReliabilityAudit> reliability;  ///< on the adaptation start model
  EvalReport final_report;
  std::vector<StageMetrics> stages;
  SegModel final_model;
};

struct RunOptions {
  /// Output directory; nothing is written when empty.
  std::filesystem::path out_dir;
  /// Continue from a stage snapshot instead of pretraining.
  std::optional<std::filesystem::path> resume_from;
  /// Skip pretraining / warm-up and start adaptation from this model.
  std::optional<SegModel> start_model;
};

/// pretrain -> warm-up (if enabled) -> K adaptation stages.
RunResult run_pipeline(const ExperimentConfig& cfg, const DomainData& data,
                       const RunOptions& options = {});

/// Freshly initialized model for a config (seeded from cfg.seed).
SegModel initial_model(const ExperimentConfig& cfg);

/// Pretrained + warmed model shared by all ablation variants.
SegModel prepare_adaptation_start(const ExperimentConfig& cfg, const DomainData& data);

struct AblationRow {
  std::string variant;
  double miou = 0.0;
  double gain = 0.0;  ///< miou - warm-up miou
  EvalReport report;
};

struct AblationResult {
  double warmup_miou = 0.0;
  std::vector<AblationRow> rows;
};

/// Runs each configured variant from one pretrained + warmed model. Throws
/// ConfigError on duplicate or unknown variants.
AblationResult run_ablation(const ExperimentConfig& cfg, const DomainData& data,
                            const std::filesystem::path& out_dir = {});

/// Tab-separated: variant, mIoU, gain (both x100).
std::string ablation_table(const AblationResult& result);

// Command entry points. Paths in the config resolve against `out_dir`.
std::vector<std::filesystem::path> cmd_generate(const ExperimentConfig& cfg,
                                                const std::filesystem::path& out_dir);
RunResult cmd_run(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                  const std::optional<std::filesystem::path>& stage_resume = std::nullopt);
AblationResult cmd_ablate(const ExperimentConfig& cfg, const std::filesystem::path& out_dir);
EvalReport cmd_eval(const std::filesystem::path& checkpoint, const std::filesystem::path& dataset,
                    const std::filesystem::path& out_dir);

DomainData load_data(const ExperimentConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace cag
