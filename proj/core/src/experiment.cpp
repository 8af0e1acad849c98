#include "cag/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <fstream>
#include <json.hpp>
#include <map>

#include "cag/errors.hpp"
#include "cag/rng.hpp"
#include "cag/stage_snapshot.hpp"

namespace cag {
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kPrototypeSeed = 0x50524f544f;
constexpr std::uint64_t kSourceMapSeed = 0x5352434d4150;
constexpr std::uint64_t kTargetMapSeed = 0x5447544d4150;
constexpr std::uint64_t kSourceDataSeed = 0x535243;
constexpr std::uint64_t kTargetTrainSeed = 0x544754;
constexpr std::uint64_t kTargetEvalSeed = 0x4556414c;
constexpr std::uint64_t kModelInitSeed = 0x4d4f44454c;

AffineMap shift_map(const DomainShiftConfig& s, std::size_t dim, std::uint64_t seed) {
  if (s.matrix.empty() && s.offset_vector.empty()) {
    return random_shift(dim, s.mix, s.offset, seed);
  }
  AffineMap m = AffineMap::identity(dim);
  if (!s.matrix.empty()) m.matrix = s.matrix;
  if (!s.offset_vector.empty()) m.offset = s.offset_vector;
  return m;
}

fs::path resolve(const fs::path& out_dir, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : out_dir / path;
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

void write_text(const fs::path& p, const std::string& text) {
  ensure_parent(p);
  std::ofstream out(p, std::ios::trunc | std::ios::binary);
  if (!out) throw FileError("cannot open for writing", p.string());
  out << text;
  if (!out) throw FileError("write failed", p.string());
}

void write_report(const fs::path& dir, const std::string& stem, const EvalReport& r) {
  write_text(dir / (stem + ".json"), report_json(r));
  write_text(dir / (stem + ".tsv"), report_table(r));
}

std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6f", x);
  return buf;
}

std::string optional_fmt(const std::optional<double>& x) { return x ? fmt(*x) : "-"; }

nlohmann::ordered_json record_json(const IterationRecord& r) {
  const auto& l = r.losses;
  const double px = l.source_pixels > 0 ? static_cast<double>(l.source_pixels) : 1.0;
  nlohmann::ordered_json j;
  j["phase"] = r.phase;
  j["stage"] = r.stage;
  j["iteration"] = r.iteration;
  j["lr"] = r.lr;
  j["source_grid"] = r.source_grid;
  j["target_grid"] = r.target_grid;
  j["ce_source"] = l.ce_source;
  j["dis_source"] = l.dis_source;
  j["ce_target"] = l.ce_target_anchor;
  j["dis_target"] = l.dis_target;
  j["ce_target_prob"] = l.ce_target_prob;
  j["total"] = l.total;
  j["ce_source_per_pixel"] = l.ce_source / px;
  j["total_per_pixel"] = l.total / px;
  j["discriminator_loss"] = r.discriminator_loss;
  j["alignment_loss"] = r.alignment_loss;
  j["active_anchor"] = l.active_anchor_pixels;
  j["active_prob"] = l.active_prob_pixels;
  return j;
}

std::vector<std::vector<std::uint16_t>> oracle_planes(const Dataset& ds) {
  std::vector<std::vector<std::uint16_t>> planes;
  planes.reserve(ds.size());
  for (const auto& g : ds.grids) {
    if (!g.labels) throw ContractError("oracle audit needs labeled target-train data");
    planes.push_back(*g.labels);
  }
  return planes;
}

std::string stages_table(const RunResult& r) {
  std::string out =
      "stage\tmIoU\tanchor_active_fraction\tanchor_precision\tprob_active_fraction\t"
      "prob_precision\tdistance_start\tdistance_end\n";
  for (const auto& s : r.stages) {
    out += std::to_string(s.stage) + "\t" + fmt(s.report.iou.miou * 100.0) + "\t" +
           fmt(s.anchor_audit.coverage) + "\t" + optional_fmt(s.anchor_audit.precision) + "\t" +
           fmt(s.prob_audit.coverage) + "\t" + optional_fmt(s.prob_audit.precision) + "\t" +
           fmt(s.distance_at_start) + "\t" + fmt(s.distance_at_end) + "\n";
  }
  return out;
}

double nearest_gap(std::span<const double> row) {
  double best = std::numeric_limits<double>::infinity(), second = best;
  for (const double d : row) {
    if (d < best) {
      second = best;
      best = d;
    } else if (d < second) {
      second = d;
    }
  }
  return std::isfinite(second) ? second - best : -std::numeric_limits<double>::infinity();
}

}  // namespace

ReliabilityAudit reliability_audit(const SegModel& model, const Dataset& source,
                                   const Dataset& target_labeled, const TrainConfig& cfg) {
  const AnchorSet anchors = construct_anchors(source, model);
  const auto oracle = oracle_planes(target_labeled);
  const std::size_t cats = target_labeled.categories;
  std::vector<Tensor> distances;
  std::vector<ActivationResult> prob;
  std::vector<double> gaps;
  {
    NoGradScope no_grad;
    for (const auto& g : target_labeled.grids) {
      const auto out = model.forward(g);
      distances.push_back(anchor_distances(out.features, anchors));
      prob.push_back(identify_active_by_probability(out.probabilities, cfg.prob_threshold));
      const auto d = distances.back().values();
      const std::size_t c = distances.back().cols();
      for (std::size_t j = 0; j < g.pixels(); ++j) gaps.push_back(nearest_gap(d.subspan(j * c, c)));
    }
  }
  ReliabilityAudit out;
  out.prob_threshold = cfg.prob_threshold;
  out.prob = pseudo_label_audit(prob, oracle, cats);

  // The k pixels with the widest nearest-anchor gap are exactly the active set
  // for any margin strictly between the k-th and (k+1)-th widest gaps.
  std::sort(gaps.begin(), gaps.end(), std::greater<>());
  const std::size_t k = out.prob.active;
  if (k == 0) {
    out.matched_margin = std::max(gaps.front(), 0.0);
  } else if (k < gaps.size() && std::isfinite(gaps[k])) {
    out.matched_margin = std::max(0.5 * (gaps[k - 1] + gaps[k]), 0.0);
  }
  out.configured_margin = cfg.margin;
  auto audit_at = [&](double margin) {
    std::vector<ActivationResult> acts;
    for (const auto& d : distances) acts.push_back(identify_active(d, margin));
    return pseudo_label_audit(acts, oracle, cats);
  };
  out.matched = audit_at(out.matched_margin);
  out.configured = audit_at(out.configured_margin);
  return out;
}

std::string reliability_table(const ReliabilityAudit& a) {
  std::string out = "labels\tthreshold\tcoverage\tprecision\n";
  out += "probability\t" + fmt(a.prob_threshold) + "\t" + fmt(a.prob.coverage) + "\t" +
         optional_fmt(a.prob.precision) + "\n";
  out += "anchor_matched\t" + fmt(a.matched_margin) + "\t" + fmt(a.matched.coverage) + "\t" +
         optional_fmt(a.matched.precision) + "\n";
  out += "anchor_configured\t" + fmt(a.configured_margin) + "\t" + fmt(a.configured.coverage) +
         "\t" + optional_fmt(a.configured.precision) + "\n";
  return out;
}

std::vector<DomainSpec> domain_specs(const ExperimentConfig& cfg) {
  const auto& d = cfg.data;
  DomainSpec base;
  base.categories = d.categories;
  base.dim = d.dim;
  base.coherence_scale = d.coherence_scale;
  base.prototypes = default_prototypes(d.categories, d.dim, d.prototype_radius,
                                       derive_seed(cfg.seed, kPrototypeSeed));

  DomainSpec source = base;
  source.transform = shift_map(d.source, d.dim, derive_seed(cfg.seed, kSourceMapSeed));
  source.noise_sigma = d.source.noise_sigma;
  source.seed = derive_seed(cfg.seed, kSourceDataSeed);

  DomainSpec target_train = base;
  target_train.transform = shift_map(d.target, d.dim, derive_seed(cfg.seed, kTargetMapSeed));
  target_train.noise_sigma = d.target.noise_sigma;
  target_train.seed = derive_seed(cfg.seed, kTargetTrainSeed);

  DomainSpec target_eval = target_train;
  target_eval.seed = derive_seed(cfg.seed, kTargetEvalSeed);
  return {source, target_train, target_eval};
}

DomainData generate_data(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto specs = domain_specs(cfg);
  const auto& d = cfg.data;
  return DomainData{
      generate(specs[0], d.source_count, d.height, d.width, DatasetRole::kSource),
      generate(specs[1], d.target_train_count, d.height, d.width, DatasetRole::kTargetTrain),
      generate(specs[2], d.target_eval_count, d.height, d.width, DatasetRole::kTargetEval)};
}

SegModel initial_model(const ExperimentConfig& cfg) {
  return init_seg_model(cfg.model_dims(), derive_seed(cfg.seed, kModelInitSeed));
}

SegModel prepare_adaptation_start(const ExperimentConfig& cfg, const DomainData& data) {
  cfg.validate();
  SegModel model = initial_model(cfg);
  model = pretrain(std::move(model), data.source, cfg.train);
  if (cfg.use_warmup) {
    model = warmup(std::move(model), data.source, UnlabeledDataset(data.target_train), cfg.train);
  }
  return model;
}

RunResult run_pipeline(const ExperimentConfig& cfg, const DomainData& data,
                       const RunOptions& options) {
  cfg.validate();
  const bool write = !options.out_dir.empty();
  const fs::path out = options.out_dir;
  const UnlabeledDataset target(data.target_train);
  const auto oracle = oracle_planes(data.target_train);
  const std::size_t cats = data.source.categories;

  std::ofstream log;
  if (write) {
    for (const char* sub : {"checkpoints", "reports", "snapshots", "plots"}) {
      fs::create_directories(out / sub);
    }
    save_config(cfg, (out / "config.json").string());
    log.open(out / "metrics.jsonl", std::ios::trunc | std::ios::binary);
    if (!log) throw FileError("cannot open for writing", (out / "metrics.jsonl").string());
  }
  TrainHooks hooks;
  if (write) {
    hooks.on_iteration = [&log](const IterationRecord& r) { log << record_json(r).dump() << '\n'; };
  }

  RunResult result;
  std::optional<StageState> resume;
  SegModel model;
  if (options.resume_from) {
    resume = load_stage(options.resume_from->string());
    model = resume->model();
    if (model.dims() != cfg.model_dims()) {
      throw DimensionError("stage snapshot model dimensions differ from the config");
    }
    for (auto [name, slot] : {std::pair{"pretrained", &result.source_only},
                              std::pair{"warmup", &result.warmup}}) {
      const auto ckpt = out / "checkpoints" / (std::string(name) + ".ckpt");
      if (write && fs::exists(ckpt)) *slot = evaluate(load_model(ckpt.string()), data.target_eval, name);
    }
  } else if (options.start_model) {
    model = options.start_model->clone();
  } else {
    model = initial_model(cfg);
    model = pretrain(std::move(model), data.source, cfg.train, hooks);
    result.source_only = evaluate(model, data.target_eval, "source_only");
    if (write) {
      save_model(model, (out / "checkpoints" / "pretrained.ckpt").string());
      write_report(out / "reports", "source_only", *result.source_only);
    }
    if (cfg.use_warmup) {
      model = warmup(std::move(model), data.source, target, cfg.train, hooks);
      result.warmup = evaluate(model, data.target_eval, "warmup");
      if (write) {
        save_model(model, (out / "checkpoints" / "warmup.ckpt").string());
        write_report(out / "reports", "warmup", *result.warmup);
      }
    }
  }
  if (!options.resume_from) {
    result.reliability = reliability_audit(model, data.source, data.target_train, cfg.train);
    if (write) write_text(out / "reports" / "reliability.tsv", reliability_table(*result.reliability));
  }

  std::map<std::size_t, StageMetrics> stages;
  hooks.on_stage_begin = [&](const StageState& s) {
    auto& m = stages[s.stage()];
    m.stage = s.stage();
    m.anchor_audit = pseudo_label_audit(s.frozen().anchor_activations, oracle, cats);
    m.prob_audit = pseudo_label_audit(s.frozen().prob_activations, oracle, cats);
    m.distance_at_start = mean_active_anchor_distance(s.model(), target, s.frozen());
    if (write) {
      save_stage(s, (out / "snapshots" / ("stage_" + std::to_string(s.stage()) + ".snap")).string());
    }
  };
  hooks.on_stage_end = [&](const StageState& s) {
    auto& m = stages[s.stage()];
    if (m.stage == 0) {
      m.stage = s.stage();
      m.anchor_audit = pseudo_label_audit(s.frozen().anchor_activations, oracle, cats);
      m.prob_audit = pseudo_label_audit(s.frozen().prob_activations, oracle, cats);
    }
    m.distance_at_end = mean_active_anchor_distance(s.model(), target, s.frozen());
    const std::string name = "stage_" + std::to_string(s.stage());
    m.report = evaluate(s.model(), data.target_eval, name);
    if (write) {
      save_model(s.model(), (out / "checkpoints" / (name + ".ckpt")).string());
      write_report(out / "reports", name, m.report);
    }
  };

  model = adapt(std::move(model), data.source, target, cfg.train, hooks, std::move(resume));
  result.final_report = evaluate(model, data.target_eval, "final");
  for (auto& [k, m] : stages) result.stages.push_back(std::move(m));
  if (write) {
    save_model(model, (out / "checkpoints" / "final.ckpt").string());
    write_report(out / "reports", "final", result.final_report);
    write_text(out / "plots" / "stages.tsv", stages_table(result));
  }
  result.final_model = std::move(model);
  return result;
}

AblationResult run_ablation(const ExperimentConfig& cfg, const DomainData& data,
                            const fs::path& out_dir) {
  cfg.validate();
  std::vector<VariantSpec> variants;
  for (const auto& name : cfg.ablation_variants) variants.push_back(parse_variant(name));

  const SegModel start = prepare_adaptation_start(cfg, data);
  AblationResult result;
  const EvalReport base = evaluate(start, data.target_eval, "warmup");
  result.warmup_miou = base.iou.miou;
  for (const auto& v : variants) {
    AblationRow row;
    row.variant = v.name;
    if (!v.adapts) {
      row.report = base;
    } else {
      ExperimentConfig vc = cfg;
      vc.train.losses = v.losses;
      RunOptions opts;
      opts.start_model = start.clone();
      if (!out_dir.empty()) opts.out_dir = out_dir / "ablation" / v.name;
      row.report = run_pipeline(vc, data, opts).final_report;
    }
    row.report.name = v.name;
    row.miou = row.report.iou.miou;
    row.gain = row.miou - result.warmup_miou;
    result.rows.push_back(std::move(row));
  }
  if (!out_dir.empty()) write_text(out_dir / "ablation.tsv", ablation_table(result));
  return result;
}

std::string ablation_table(const AblationResult& result) {
  std::string out = "variant\tmIoU\tgain\n";
  for (const auto& r : result.rows) {
    out += r.variant + "\t" + fmt(r.miou * 100.0) + "\t" + fmt(r.gain * 100.0) + "\n";
  }
  return out;
}

std::vector<fs::path> cmd_generate(const ExperimentConfig& cfg, const fs::path& out_dir) {
  const auto data = generate_data(cfg);
  const std::vector<std::pair<fs::path, const Dataset*>> files = {
      {resolve(out_dir, cfg.data.source_path), &data.source},
      {resolve(out_dir, cfg.data.target_train_path), &data.target_train},
      {resolve(out_dir, cfg.data.target_eval_path), &data.target_eval}};
  std::vector<fs::path> written;
  for (const auto& [path, ds] : files) {
    ensure_parent(path);
    save_dataset(*ds, path.string());
    written.push_back(path);
  }
  return written;
}

DomainData load_data(const ExperimentConfig& cfg, const fs::path& out_dir) {
  DomainData d{load_dataset(resolve(out_dir, cfg.data.source_path).string()),
               load_dataset(resolve(out_dir, cfg.data.target_train_path).string()),
               load_dataset(resolve(out_dir, cfg.data.target_eval_path).string())};
  for (const auto* ds : {&d.source, &d.target_train, &d.target_eval}) {
    if (ds->dim() != cfg.data.dim || ds->categories != cfg.data.categories) {
      throw DimensionError(std::string(to_string(ds->role)) +
                           " dataset dimensions differ from the config");
    }
  }
  return d;
}

RunResult cmd_run(const ExperimentConfig& cfg, const fs::path& out_dir,
                  const std::optional<fs::path>& stage_resume) {
  const auto data = load_data(cfg, out_dir);
  RunOptions opts;
  opts.out_dir = out_dir;
  opts.resume_from = stage_resume;
  return run_pipeline(cfg, data, opts);
}

AblationResult cmd_ablate(const ExperimentConfig& cfg, const fs::path& out_dir) {
  return run_ablation(cfg, load_data(cfg, out_dir), out_dir);
}

EvalReport cmd_eval(const fs::path& checkpoint, const fs::path& dataset, const fs::path& out_dir) {
  if (!fs::exists(checkpoint)) throw FileError("checkpoint not found", checkpoint.string());
  const SegModel model = load_model(checkpoint.string());
  const Dataset ds = load_dataset(dataset.string());
  if (model.dims().input != ds.dim() || model.dims().categories != ds.categories) {
    throw DimensionError("checkpoint expects D=" + std::to_string(model.dims().input) +
                         ", C=" + std::to_string(model.dims().categories) + " but dataset has D=" +
                         std::to_string(ds.dim()) + ", C=" + std::to_string(ds.categories));
  }
  EvalReport report = evaluate(model, ds, checkpoint.stem().string());
  if (!out_dir.empty()) {
    write_report(out_dir, "report", report);
    std::string series = "category\tIoU\tincluded\n";
    for (std::size_t k = 0; k < report.iou.per_category.size(); ++k) {
      const auto& c = report.iou.per_category[k];
      series += category_name(k) + "\t" + fmt(c.iou * 100.0) + "\t" + (c.included ? "1" : "0") + "\n";
    }
    write_text(out_dir / "per_category.tsv", series);
  }
  return report;
}

}  // namespace cag
