#pragma once

// Stagewise training: source pretraining, adversarial warm-up, then K stages
// that each freeze anchors, activations and pseudo-labels at stage start and
// train against them for L iterations.

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cag/anchors.hpp"
#include "cag/model.hpp"
#include "cag/objectives.hpp"
#include "cag/synth.hpp"

namespace cag {

/// Which adaptation loss terms participate. Disabled terms contribute a
/// constant zero.
struct LossSwitches {
  bool dis_source = true;
  bool dis_target = true;
  bool ce_target = true;
  bool ce_target_prob = true;

  bool operator==(const LossSwitches&) const = default;
};

struct TrainConfig {
  std::size_t stages = 3;                 ///< K
  std::size_t iterations_per_stage = 1;   ///< L
  double base_lr = 2.5e-4;
  double poly_power = 0.9;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double lambda_dis = 0.3;                ///< lambda_1
  double lambda_ce = 0.7;                 ///< lambda_2
  double margin = 2.5;                    ///< Delta_d
  double prob_threshold = 0.95;           ///< P_0
  double adversarial_weight = 1e-2;
  std::size_t warmup_iterations = 0;
  std::size_t pretrain_iterations = 0;
  double discriminator_lr = 2.5e-4;
  std::size_t discriminator_hidden = 32;
  /// false: one poly decay over all K * L adaptation iterations.
  bool poly_restart_per_stage = false;
  LossSwitches losses;
  std::uint64_t seed = 0;

  /// Throws ConfigError on out-of-range values.
  void validate() const;

  bool operator==(const TrainConfig&) const = default;
};

struct IterationRecord {
  std::string phase;  ///< "pretrain", "warmup" or "adapt"
  std::size_t stage = 0;
  std::uint64_t iteration = 0;  ///< index within the phase (global across stages)
  double lr = 0.0;
  std::size_t source_grid = 0;
  std::size_t target_grid = 0;
  LossBreakdown losses;
  double discriminator_loss = 0.0;
  double alignment_loss = 0.0;
};

/// Frozen per-stage data. Immutable once built.
struct StageFrozen {
  std::size_t stage = 0;
  AnchorSet anchors;
  std::vector<ActivationResult> anchor_activations;  ///< one per target grid
  std::vector<ActivationResult> prob_activations;    ///< one per target grid

  bool operator==(const StageFrozen&) const = default;
};

class StageState {
 public:
  StageState(StageFrozen frozen, SegModel model, std::vector<std::vector<double>> momentum,
             std::uint64_t iteration = 0);

  std::size_t stage() const noexcept { return frozen_->stage; }
  const StageFrozen& frozen() const noexcept { return *frozen_; }
  const AnchorSet& anchors() const noexcept { return frozen_->anchors; }
  const ActivationResult& anchor_activation(std::size_t grid) const {
    return frozen_->anchor_activations.at(grid);
  }
  const ActivationResult& prob_activation(std::size_t grid) const {
    return frozen_->prob_activations.at(grid);
  }

  SegModel& model() noexcept { return model_; }
  const SegModel& model() const noexcept { return model_; }
  const std::vector<std::vector<double>>& momentum() const noexcept { return momentum_; }
  void set_momentum(std::vector<std::vector<double>> m) { momentum_ = std::move(m); }
  std::uint64_t iteration() const noexcept { return iteration_; }
  void set_iteration(std::uint64_t it) noexcept { iteration_ = it; }

 private:
  std::shared_ptr<const StageFrozen> frozen_;
  SegModel model_;
  std::vector<std::vector<double>> momentum_;
  std::uint64_t iteration_ = 0;
};

struct TrainHooks {
  std::function<void(const IterationRecord&)> on_iteration;
  /// Called right after a stage's frozen data is built (before any SGD step).
  std::function<void(const StageState&)> on_stage_begin;
  /// Called after the last iteration of a stage.
  std::function<void(const StageState&)> on_stage_end;
};

/// Index of the grid drawn at step `t`: a seeded Fisher-Yates permutation of
/// [0, n) is drawn per epoch (epoch = t / n) from (seed, stream, epoch).
class EpochSampler {
 public:
  EpochSampler(std::uint64_t seed, std::uint64_t stream, std::size_t n);
  std::size_t at(std::uint64_t t);

 private:
  std::uint64_t seed_, stream_;
  std::size_t n_;
  std::uint64_t cached_epoch_ = UINT64_MAX;
  std::vector<std::size_t> perm_;
};

/// Source-only cross-entropy training for cfg.pretrain_iterations.
SegModel pretrain(SegModel model, const Dataset& source, const TrainConfig& cfg,
                  const TrainHooks& hooks = {});

/// Alternating discriminator / segmentation updates for cfg.warmup_iterations.
/// The discriminator is initialized from cfg.seed.
SegModel warmup(SegModel model, const Dataset& source, const UnlabeledDataset& target,
                const TrainConfig& cfg, const TrainHooks& hooks = {});

/// Builds anchors, distances, activations and pseudo-labels from `model` and
/// freezes them. Throws StageError with fewer than two valid anchors.
StageState begin_stage(const SegModel& model, const Dataset& source,
                       const UnlabeledDataset& target, const TrainConfig& cfg,
                       std::size_t stage, std::vector<std::vector<double>> momentum = {});

/// Runs the remaining iterations of the stage (from state.iteration() to L).
/// Throws NumericError if the loss becomes non-finite.
SegModel run_stage(StageState& state, const Dataset& source, const UnlabeledDataset& target,
                   const TrainConfig& cfg, const TrainHooks& hooks = {});

/// All K stages. With `resume`, continues from that stage state instead of
/// building stage 1 from `model`.
SegModel adapt(SegModel model, const Dataset& source, const UnlabeledDataset& target,
               const TrainConfig& cfg, const TrainHooks& hooks = {},
               std::optional<StageState> resume = std::nullopt);

/// Standalone supervised trainer that follows the same sampling order, schedule
/// and optimizer resets as pretrain -> [warm-up] -> adapt but only ever
/// optimizes source cross-entropy.
SegModel train_source_only(SegModel model, const Dataset& source, const TrainConfig& cfg,
                           bool include_warmup_phase);

/// Mean Euclidean distance from the current features of anchor-active target
/// pixels to their assigned (frozen) anchors. Returns 0 with no active pixels.
double mean_active_anchor_distance(const SegModel& model, const UnlabeledDataset& target,
                                   const StageFrozen& frozen);

}  // namespace cag
