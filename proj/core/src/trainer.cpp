#include "cag/trainer.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "cag/errors.hpp"
#include "cag/optimizer.hpp"
#include "cag/rng.hpp"

namespace cag {
namespace {

// Sampler streams. Each phase draws its own grid orders.
constexpr std::uint64_t kPretrainSource = 0x5052534f;
constexpr std::uint64_t kWarmupSource = 0x5755534f;
constexpr std::uint64_t kWarmupTarget = 0x57555447;
constexpr std::uint64_t kAdaptSource = 0x4144534f;
constexpr std::uint64_t kAdaptTarget = 0x41445447;
constexpr std::uint64_t kDiscriminatorInit = 0x44495343;

Sgd::Options sgd_options(const TrainConfig& cfg) { return {cfg.momentum, cfg.weight_decay}; }

std::uint64_t adapt_total(const TrainConfig& cfg) {
  return static_cast<std::uint64_t>(cfg.stages) * cfg.iterations_per_stage;
}

double adapt_lr(const TrainConfig& cfg, std::size_t stage, std::uint64_t n) {
  if (cfg.poly_restart_per_stage) {
    return poly_lr(n, cfg.iterations_per_stage, cfg.base_lr, cfg.poly_power);
  }
  const std::uint64_t global = (stage - 1) * cfg.iterations_per_stage + n;
  return poly_lr(global, adapt_total(cfg), cfg.base_lr, cfg.poly_power);
}

bool finite(const LossBreakdown& b) {
  return std::isfinite(b.total) && std::isfinite(b.ce_source) && std::isfinite(b.dis_source) &&
         std::isfinite(b.ce_target_anchor) && std::isfinite(b.dis_target) &&
         std::isfinite(b.ce_target_prob);
}

[[noreturn]] void abort_non_finite(const IterationRecord& r) {
  std::ostringstream os;
  os.precision(17);
  os << "non-finite loss in phase " << r.phase << ", stage " << r.stage << ", iteration "
     << r.iteration << " (lr " << r.lr << ", source grid " << r.source_grid
     << ", target grid " << r.target_grid << "): ce_source=" << r.losses.ce_source
     << " dis_source=" << r.losses.dis_source << " ce_target=" << r.losses.ce_target_anchor
     << " dis_target=" << r.losses.dis_target << " ce_target_prob=" << r.losses.ce_target_prob
     << " alignment=" << r.alignment_loss << " total=" << r.losses.total;
  throw NumericError(os.str());
}

void emit(const TrainHooks& hooks, const IterationRecord& r) {
  if (hooks.on_iteration) hooks.on_iteration(r);
}

void require_labeled(const Dataset& source) {
  if (!source.has_labels()) throw ContractError("source dataset must be labeled");
}

/// One source-CE step shared by pretrain and the standalone reference.
LossBreakdown source_ce_step(SegModel& model, Sgd& opt, const LabeledGrid& grid, double lr) {
  Tape tape;
  const auto out = model.forward(grid);
  const Tensor loss = ce_loss(out.probabilities, *grid.labels);
  LossBreakdown b;
  b.ce_source = b.total = loss.item();
  b.source_pixels = grid.pixels();
  tape.backward(loss);
  opt.step(lr);
  return b;
}

}  // namespace

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (stages < 1) fail("stages (K) must be >= 1");
  if (iterations_per_stage < 1) fail("iterations_per_stage (L) must be >= 1");
  for (auto [v, name] : {std::pair{base_lr, "base_lr"}, {momentum, "momentum"},
                         {weight_decay, "weight_decay"}, {lambda_dis, "lambda_dis"},
                         {lambda_ce, "lambda_ce"}, {margin, "margin"},
                         {prob_threshold, "prob_threshold"},
                         {adversarial_weight, "adversarial_weight"},
                         {discriminator_lr, "discriminator_lr"}}) {
    if (!(v >= 0.0) || !std::isfinite(v)) fail(std::string(name) + " must be finite and >= 0");
  }
  if (!(poly_power > 0.0)) fail("poly_power must be > 0");
  if (discriminator_hidden < 1) fail("discriminator_hidden must be >= 1");
}

StageState::StageState(StageFrozen frozen, SegModel model,
                       std::vector<std::vector<double>> momentum, std::uint64_t iteration)
    : frozen_(std::make_shared<const StageFrozen>(std::move(frozen))),
      model_(std::move(model)),
      momentum_(std::move(momentum)),
      iteration_(iteration) {}

EpochSampler::EpochSampler(std::uint64_t seed, std::uint64_t stream, std::size_t n)
    : seed_(seed), stream_(stream), n_(n) {
  if (n == 0) throw ContractError("cannot sample from an empty dataset");
}

std::size_t EpochSampler::at(std::uint64_t t) {
  const std::uint64_t epoch = t / n_;
  if (epoch != cached_epoch_) {
    perm_.resize(n_);
    std::iota(perm_.begin(), perm_.end(), std::size_t{0});
    CounterRng rng(derive_seed(seed_, epoch), stream_);
    shuffle(std::span<std::size_t>(perm_), rng);
    cached_epoch_ = epoch;
  }
  return perm_[t % n_];
}

SegModel pretrain(SegModel model, const Dataset& source, const TrainConfig& cfg,
                  const TrainHooks& hooks) {
  require_labeled(source);
  const std::size_t total = cfg.pretrain_iterations;
  if (total == 0) return model;
  Sgd opt(model.parameters(), sgd_options(cfg));
  EpochSampler sampler(cfg.seed, kPretrainSource, source.size());
  for (std::uint64_t it = 0; it < total; ++it) {
    IterationRecord rec;
    rec.phase = "pretrain";
    rec.iteration = it;
    rec.lr = poly_lr(it, total, cfg.base_lr, cfg.poly_power);
    rec.source_grid = sampler.at(it);
    rec.losses = source_ce_step(model, opt, source.grids[rec.source_grid], rec.lr);
    if (!finite(rec.losses)) abort_non_finite(rec);
    emit(hooks, rec);
  }
  return model;
}

SegModel warmup(SegModel model, const Dataset& source, const UnlabeledDataset& target,
                const TrainConfig& cfg, const TrainHooks& hooks) {
  require_labeled(source);
  const std::size_t total = cfg.warmup_iterations;
  if (total == 0) return model;
  Discriminator disc = init_discriminator(model.dims().feature, cfg.discriminator_hidden,
                                          derive_seed(cfg.seed, kDiscriminatorInit));
  Sgd model_opt(model.parameters(), sgd_options(cfg));
  Sgd disc_opt(disc.parameters(), sgd_options(cfg));
  EpochSampler src_sampler(cfg.seed, kWarmupSource, source.size());
  EpochSampler tgt_sampler(cfg.seed, kWarmupTarget, target.size());

  for (std::uint64_t it = 0; it < total; ++it) {
    IterationRecord rec;
    rec.phase = "warmup";
    rec.iteration = it;
    rec.lr = poly_lr(it, total, cfg.base_lr, cfg.poly_power);
    rec.source_grid = src_sampler.at(it);
    rec.target_grid = tgt_sampler.at(it);
    const auto& sg = source.grids[rec.source_grid];
    const auto& tg = target.grid(rec.target_grid);

    {  // discriminator step on the current features
      Tensor fs, ft;
      {
        NoGradScope no_grad;
        fs = model.forward(sg).features;
        ft = model.forward(tg).features;
      }
      Tape tape;
      const auto adv = adversarial_losses(disc, fs, ft);
      rec.discriminator_loss = adv.discriminator.item();
      tape.backward(adv.discriminator);
      disc_opt.step(poly_lr(it, total, cfg.discriminator_lr, cfg.poly_power));
    }
    {  // segmentation step: source CE plus the fooling objective
      Tape tape;
      const auto os = model.forward(sg);
      const auto ot = model.forward(tg);
      const Tensor ce = ce_loss(os.probabilities, *sg.labels);
      const auto adv = adversarial_losses(disc, os.features, ot.features);
      const Tensor loss = add(ce, scale(adv.alignment, cfg.adversarial_weight));
      rec.losses.ce_source = ce.item();
      rec.losses.total = loss.item();
      rec.losses.source_pixels = sg.pixels();
      rec.alignment_loss = adv.alignment.item();
      if (!finite(rec.losses) || !std::isfinite(rec.alignment_loss)) abort_non_finite(rec);
      tape.backward(loss);
      model_opt.step(rec.lr);
    }
    emit(hooks, rec);
  }
  return model;
}

StageState begin_stage(const SegModel& model, const Dataset& source,
                       const UnlabeledDataset& target, const TrainConfig& cfg,
                       std::size_t stage, std::vector<std::vector<double>> momentum) {
  if (stage < 1) throw ContractError("stage index starts at 1");
  require_labeled(source);
  StageFrozen frozen;
  frozen.stage = stage;
  frozen.anchors = construct_anchors(source, model);
  if (frozen.anchors.valid_count() < 2) {
    throw StageError("stage " + std::to_string(stage) + ": only " +
                     std::to_string(frozen.anchors.valid_count()) +
                     " categories occur in the source data; at least 2 are needed to "
                     "identify active pixels. Use a larger source dataset.");
  }
  {
    NoGradScope no_grad;
    frozen.anchor_activations.reserve(target.size());
    frozen.prob_activations.reserve(target.size());
    for (std::size_t i = 0; i < target.size(); ++i) {
      const auto out = model.forward(target.grid(i));
      frozen.anchor_activations.push_back(
          identify_active(anchor_distances(out.features, frozen.anchors), cfg.margin));
      frozen.prob_activations.push_back(
          identify_active_by_probability(out.probabilities, cfg.prob_threshold));
    }
  }
  SegModel snapshot = model.clone();
  if (momentum.empty()) {
    for (const auto& p : snapshot.parameters()) momentum.emplace_back(p.size(), 0.0);
  }
  return StageState(std::move(frozen), std::move(snapshot), std::move(momentum), 0);
}

SegModel run_stage(StageState& state, const Dataset& source, const UnlabeledDataset& target,
                   const TrainConfig& cfg, const TrainHooks& hooks) {
  require_labeled(source);
  const std::size_t k = state.stage();
  const std::uint64_t len = cfg.iterations_per_stage;
  if (state.frozen().anchor_activations.size() != target.size()) {
    throw ContractError("stage state was built for a different target dataset");
  }
  SegModel& model = state.model();
  Sgd opt(model.parameters(), sgd_options(cfg));
  opt.set_momentum_buffers(state.momentum());
  EpochSampler src_sampler(cfg.seed, kAdaptSource, source.size());
  EpochSampler tgt_sampler(cfg.seed, kAdaptTarget, target.size());
  const auto& sw = cfg.losses;
  const bool any_target = sw.ce_target || sw.dis_target || sw.ce_target_prob;
  const AnchorSet& anchors = state.anchors();

  for (std::uint64_t n = state.iteration(); n < len; ++n) {
    const std::uint64_t global = (k - 1) * len + n;
    IterationRecord rec;
    rec.phase = "adapt";
    rec.stage = k;
    rec.iteration = global;
    rec.lr = adapt_lr(cfg, k, n);
    rec.source_grid = src_sampler.at(global);
    rec.target_grid = tgt_sampler.at(global);
    const auto& sg = source.grids[rec.source_grid];
    const auto& act = state.anchor_activation(rec.target_grid);
    const auto& pact = state.prob_activation(rec.target_grid);

    Tape tape;
    const auto os = model.forward(sg);
    LossTerms terms;
    terms.ce_source = ce_loss(os.probabilities, *sg.labels);
    if (sw.dis_source) terms.dis_source = dis_loss(os.features, *sg.labels, anchors);
    if (any_target) {
      const auto ot = model.forward(target.grid(rec.target_grid));
      if (sw.ce_target) {
        terms.ce_target_anchor = ce_loss(ot.probabilities, act.pseudo_labels, act.active);
      }
      if (sw.dis_target) {
        terms.dis_target = dis_loss(ot.features, act.pseudo_labels, act.active, anchors);
      }
      if (sw.ce_target_prob) {
        terms.ce_target_prob = ce_loss(ot.probabilities, pact.pseudo_labels, pact.active);
      }
    }
    const Tensor total = combine(terms, cfg.lambda_dis, cfg.lambda_ce);
    rec.losses = breakdown(terms, total);
    rec.losses.source_pixels = sg.pixels();
    rec.losses.active_anchor_pixels = act.active_count();
    rec.losses.active_prob_pixels = pact.active_count();
    if (!finite(rec.losses)) abort_non_finite(rec);
    tape.backward(total);
    opt.step(rec.lr);
    state.set_iteration(n + 1);
    emit(hooks, rec);
  }
  state.set_momentum(opt.momentum_buffers());
  return model;
}

SegModel adapt(SegModel model, const Dataset& source, const UnlabeledDataset& target,
               const TrainConfig& cfg, const TrainHooks& hooks,
               std::optional<StageState> resume) {
  std::size_t first = 1;
  std::vector<std::vector<double>> momentum;
  if (resume) {
    first = resume->stage();
    if (first < 1 || first > cfg.stages) {
      throw ContractError("resume stage " + std::to_string(first) + " outside [1, " +
                          std::to_string(cfg.stages) + "]");
    }
  }
  for (std::size_t k = first; k <= cfg.stages; ++k) {
    StageState state = (resume && k == first)
                           ? std::move(*resume)
                           : begin_stage(model, source, target, cfg, k, std::move(momentum));
    if (hooks.on_stage_begin && state.iteration() == 0) hooks.on_stage_begin(state);
    model = run_stage(state, source, target, cfg, hooks);
    momentum = state.momentum();
    if (hooks.on_stage_end) hooks.on_stage_end(state);
  }
  return model;
}

SegModel train_source_only(SegModel model, const Dataset& source, const TrainConfig& cfg,
                           bool include_warmup_phase) {
  require_labeled(source);
  model = pretrain(std::move(model), source, cfg);

  auto phase = [&](std::uint64_t total, std::uint64_t stream,
                   auto&& lr_at) {
    if (total == 0) return;
    Sgd opt(model.parameters(), sgd_options(cfg));
    EpochSampler sampler(cfg.seed, stream, source.size());
    for (std::uint64_t it = 0; it < total; ++it) {
      source_ce_step(model, opt, source.grids[sampler.at(it)], lr_at(it));
    }
  };
  if (include_warmup_phase) {
    phase(cfg.warmup_iterations, kWarmupSource, [&](std::uint64_t it) {
      return poly_lr(it, cfg.warmup_iterations, cfg.base_lr, cfg.poly_power);
    });
  }
  phase(adapt_total(cfg), kAdaptSource, [&](std::uint64_t it) {
    const std::size_t stage = it / cfg.iterations_per_stage + 1;
    return adapt_lr(cfg, stage, it % cfg.iterations_per_stage);
  });
  return model;
}

double mean_active_anchor_distance(const SegModel& model, const UnlabeledDataset& target,
                                   const StageFrozen& frozen) {
  NoGradScope no_grad;
  double total = 0.0;
  std::uint64_t n = 0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    const auto& act = frozen.anchor_activations.at(i);
    if (act.active_count() == 0) continue;
    const auto d = anchor_distances(model.forward(target.grid(i)).features, frozen.anchors);
    const std::size_t c = d.cols();
    for (std::size_t j = 0; j < act.pixels(); ++j) {
      if (!act.active[j]) continue;
      total += d.at(j * c + static_cast<std::size_t>(act.pseudo_labels[j]));
      ++n;
    }
  }
  return n == 0 ? 0.0 : total / static_cast<double>(n);
}

}  // namespace cag
