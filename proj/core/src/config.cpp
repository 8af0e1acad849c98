#include "cag/config.hpp"

#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

#include "cag/errors.hpp"

namespace cag {
namespace {

using nlohmann::ordered_json;

/// Reads typed fields out of one JSON object and remembers which keys were
/// consumed, so leftovers can be reported.
class ObjectReader {
 public:
  ObjectReader(const ordered_json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + " must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path_ + "." + key + ": " + e.what());
    }
  }

  const ordered_json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  bool has(const char* key) const { return j_.contains(key); }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown key " + path_ + "." + it.key());
    }
  }

 private:
  const ordered_json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_shift(const ordered_json& j, const std::string& path, DomainShiftConfig& s) {
  ObjectReader r(j, path);
  r.get("mix", s.mix);
  r.get("offset", s.offset);
  r.get("noise_sigma", s.noise_sigma);
  r.get("matrix", s.matrix);
  r.get("offset_vector", s.offset_vector);
  r.finish();
}

ordered_json write_shift(const DomainShiftConfig& s) {
  ordered_json j;
  j["mix"] = s.mix;
  j["offset"] = s.offset;
  j["noise_sigma"] = s.noise_sigma;
  if (!s.matrix.empty()) j["matrix"] = s.matrix;
  if (!s.offset_vector.empty()) j["offset_vector"] = s.offset_vector;
  return j;
}

void read_losses(const ordered_json& j, LossSwitches& l) {
  ObjectReader r(j, "train.losses");
  r.get("dis_source", l.dis_source);
  r.get("dis_target", l.dis_target);
  r.get("ce_target", l.ce_target);
  r.get("ce_target_prob", l.ce_target_prob);
  r.finish();
}

}  // namespace

void ExperimentConfig::validate() const {
  const auto& d = data;
  if (d.categories < 2) throw ConfigError("data.categories must be >= 2");
  if (d.categories > 0xFFFE) throw ConfigError("data.categories too large");
  if (d.dim < 2) throw ConfigError("data.dim must be >= 2");
  if (d.height < 1 || d.width < 1) throw ConfigError("data.height and data.width must be >= 1");
  if (d.coherence_scale < 1) throw ConfigError("data.coherence_scale must be >= 1");
  if (d.source_count < 1 || d.target_train_count < 1 || d.target_eval_count < 1) {
    throw ConfigError("dataset counts must be >= 1");
  }
  if (!(d.prototype_radius > 0.0)) throw ConfigError("data.prototype_radius must be > 0");
  for (const auto* s : {&d.source, &d.target}) {
    if (!(s->noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be >= 0");
    if (!s->matrix.empty() && s->matrix.size() != d.dim * d.dim) {
      throw ConfigError("explicit domain matrix must have dim*dim entries");
    }
    if (!s->offset_vector.empty() && s->offset_vector.size() != d.dim) {
      throw ConfigError("explicit domain offset_vector must have dim entries");
    }
  }
  if (model.hidden < 1 || model.embed < 1 || model.feature < 1) {
    throw ConfigError("model dimensions must be >= 1");
  }
  train.validate();
  if (train.seed != seed) throw ConfigError("train.seed must equal the experiment seed");
  std::set<std::string> names;
  for (const auto& v : ablation_variants) {
    parse_variant(v);
    if (!names.insert(v).second) throw ConfigError("duplicate ablation variant '" + v + "'");
  }
}

ModelDims ExperimentConfig::model_dims() const {
  return ModelDims{data.dim, model.hidden, model.embed, model.feature, data.categories};
}

void ExperimentConfig::set_seed(std::uint64_t s) {
  seed = s;
  train.seed = s;
}

ExperimentConfig parse_config(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text, nullptr, true, /*ignore_comments=*/true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig cfg;
  ObjectReader root(j, "config");
  if (!root.has("seed")) throw ConfigError("config must set an explicit integer 'seed'");
  root.get("seed", cfg.seed);
  root.get("use_warmup", cfg.use_warmup);
  root.get("ablation_variants", cfg.ablation_variants);
  root.get("output_dir", cfg.output_dir);

  if (const auto* dj = root.child("data")) {
    ObjectReader r(*dj, "data");
    auto& d = cfg.data;
    r.get("categories", d.categories);
    r.get("dim", d.dim);
    r.get("height", d.height);
    r.get("width", d.width);
    r.get("coherence_scale", d.coherence_scale);
    r.get("prototype_radius", d.prototype_radius);
    r.get("source_count", d.source_count);
    r.get("target_train_count", d.target_train_count);
    r.get("target_eval_count", d.target_eval_count);
    r.get("source_path", d.source_path);
    r.get("target_train_path", d.target_train_path);
    r.get("target_eval_path", d.target_eval_path);
    if (const auto* s = r.child("source")) read_shift(*s, "data.source", d.source);
    if (const auto* s = r.child("target")) read_shift(*s, "data.target", d.target);
    r.finish();
  }
  if (const auto* mj = root.child("model")) {
    ObjectReader r(*mj, "model");
    r.get("hidden", cfg.model.hidden);
    r.get("embed", cfg.model.embed);
    r.get("feature", cfg.model.feature);
    r.finish();
  }
  if (const auto* tj = root.child("train")) {
    ObjectReader r(*tj, "train");
    auto& t = cfg.train;
    r.get("stages", t.stages);
    r.get("iterations_per_stage", t.iterations_per_stage);
    r.get("base_lr", t.base_lr);
    r.get("poly_power", t.poly_power);
    r.get("momentum", t.momentum);
    r.get("weight_decay", t.weight_decay);
    r.get("lambda_dis", t.lambda_dis);
    r.get("lambda_ce", t.lambda_ce);
    r.get("margin", t.margin);
    r.get("prob_threshold", t.prob_threshold);
    r.get("adversarial_weight", t.adversarial_weight);
    r.get("warmup_iterations", t.warmup_iterations);
    r.get("pretrain_iterations", t.pretrain_iterations);
    r.get("discriminator_lr", t.discriminator_lr);
    r.get("discriminator_hidden", t.discriminator_hidden);
    r.get("poly_restart_per_stage", t.poly_restart_per_stage);
    if (const auto* l = r.child("losses")) read_losses(*l, t.losses);
    r.finish();
  }
  root.finish();
  cfg.train.seed = cfg.seed;
  cfg.validate();
  return cfg;
}

std::string dump_config(const ExperimentConfig& cfg) {
  ordered_json j;
  j["seed"] = cfg.seed;
  const auto& d = cfg.data;
  j["data"] = {{"categories", d.categories},
               {"dim", d.dim},
               {"height", d.height},
               {"width", d.width},
               {"coherence_scale", d.coherence_scale},
               {"prototype_radius", d.prototype_radius},
               {"source_count", d.source_count},
               {"target_train_count", d.target_train_count},
               {"target_eval_count", d.target_eval_count},
               {"source", write_shift(d.source)},
               {"target", write_shift(d.target)},
               {"source_path", d.source_path},
               {"target_train_path", d.target_train_path},
               {"target_eval_path", d.target_eval_path}};
  j["model"] = {{"hidden", cfg.model.hidden},
                {"embed", cfg.model.embed},
                {"feature", cfg.model.feature}};
  const auto& t = cfg.train;
  j["train"] = {{"stages", t.stages},
                {"iterations_per_stage", t.iterations_per_stage},
                {"base_lr", t.base_lr},
                {"poly_power", t.poly_power},
                {"momentum", t.momentum},
                {"weight_decay", t.weight_decay},
                {"lambda_dis", t.lambda_dis},
                {"lambda_ce", t.lambda_ce},
                {"margin", t.margin},
                {"prob_threshold", t.prob_threshold},
                {"adversarial_weight", t.adversarial_weight},
                {"warmup_iterations", t.warmup_iterations},
                {"pretrain_iterations", t.pretrain_iterations},
                {"discriminator_lr", t.discriminator_lr},
                {"discriminator_hidden", t.discriminator_hidden},
                {"poly_restart_per_stage", t.poly_restart_per_stage},
                {"losses",
                 {{"dis_source", t.losses.dis_source},
                  {"dis_target", t.losses.dis_target},
                  {"ce_target", t.losses.ce_target},
                  {"ce_target_prob", t.losses.ce_target_prob}}}};
  j["use_warmup"] = cfg.use_warmup;
  j["ablation_variants"] = cfg.ablation_variants;
  j["output_dir"] = cfg.output_dir;
  return j.dump(2) + "\n";
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FileError("cannot open config", path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

void save_config(const ExperimentConfig& cfg, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FileError("cannot open for writing", path);
  out << dump_config(cfg);
  if (!out) throw FileError("write failed", path);
}

VariantSpec parse_variant(const std::string& name) {
  VariantSpec v;
  v.name = name;
  if (name == "warmup") {
    v.adapts = false;
    v.losses = {false, false, false, false};
    return v;
  }
  if (name == "full") return v;
  v.losses = {false, false, false, false};
  std::stringstream ss(name);
  std::string term;
  bool any = false;
  while (std::getline(ss, term, '+')) {
    if (term == "dis_s") {
      v.losses.dis_source = true;
    } else if (term == "dis_t") {
      v.losses.dis_target = true;
    } else if (term == "dis") {
      v.losses.dis_source = v.losses.dis_target = true;
    } else if (term == "ce_t") {
      v.losses.ce_target = true;
    } else if (term == "ce_tp") {
      v.losses.ce_target_prob = true;
    } else {
      throw ConfigError("unknown ablation term '" + term + "' in variant '" + name + "'");
    }
    any = true;
  }
  if (!any || name.back() == '+') throw ConfigError("empty term in ablation variant '" + name + "'");
  return v;
}

}  // namespace cag
