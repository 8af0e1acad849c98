#include "cag/metrics.hpp"

#include <cstdio>
#include <json.hpp>

#include "cag/errors.hpp"

namespace cag {

ConfusionMatrix::ConfusionMatrix(std::size_t categories)
    : categories_(categories), counts_(categories * categories, 0) {}

void ConfusionMatrix::add(std::span<const std::int32_t> predicted,
                          std::span<const std::uint16_t> truth) {
  if (predicted.size() != truth.size()) {
    throw DimensionError("confusion: " + std::to_string(predicted.size()) +
                         " predictions vs " + std::to_string(truth.size()) + " labels");
  }
  for (std::size_t j = 0; j < truth.size(); ++j) {
    const auto p = predicted[j];
    const auto t = truth[j];
    if (p < 0 || static_cast<std::size_t>(p) >= categories_ || t >= categories_) {
      throw ContractError("confusion: label out of range at pixel " + std::to_string(j));
    }
    ++counts_[t * categories_ + static_cast<std::size_t>(p)];
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.categories_ != categories_) {
    throw DimensionError("cannot merge confusion matrices of different sizes");
  }
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::uint64_t ConfusionMatrix::total() const noexcept {
  std::uint64_t n = 0;
  for (auto c : counts_) n += c;
  return n;
}

ConfusionMatrix confusion(std::span<const std::int32_t> predicted,
                          std::span<const std::uint16_t> truth, std::size_t categories) {
  ConfusionMatrix cm(categories);
  cm.add(predicted, truth);
  return cm;
}

IouResult iou(const ConfusionMatrix& cm) {
  const std::size_t c = cm.categories();
  IouResult out;
  out.per_category.resize(c);
  double sum = 0.0;
  for (std::size_t k = 0; k < c; ++k) {
    auto& r = out.per_category[k];
    r.tp = cm.at(k, k);
    for (std::size_t o = 0; o < c; ++o) {
      if (o == k) continue;
      r.fp += cm.at(o, k);
      r.fn += cm.at(k, o);
    }
    const auto denom = r.tp + r.fp + r.fn;
    if (denom == 0) continue;
    r.included = true;
    r.iou = static_cast<double>(r.tp) / static_cast<double>(denom);
    sum += r.iou;
    ++out.included;
  }
  if (out.included > 0) out.miou = sum / static_cast<double>(out.included);
  return out;
}

PseudoLabelAudit pseudo_label_audit(std::span<const ActivationResult> activations,
                                    std::span<const std::vector<std::uint16_t>> oracle_labels,
                                    std::size_t categories) {
  if (activations.size() != oracle_labels.size()) {
    throw DimensionError("pseudo_label_audit: activation and oracle counts differ");
  }
  PseudoLabelAudit out;
  out.per_category.resize(categories);
  for (std::size_t i = 0; i < activations.size(); ++i) {
    const auto& a = activations[i];
    const auto& truth = oracle_labels[i];
    if (truth.size() != a.pixels()) {
      throw DimensionError("pseudo_label_audit: oracle plane " + std::to_string(i) +
                           " has the wrong length");
    }
    out.pixels += a.pixels();
    for (std::size_t j = 0; j < a.pixels(); ++j) {
      auto& tc = out.per_category.at(truth[j]);
      ++tc.truth_pixels;
      if (!a.active[j]) continue;
      ++tc.truth_active;
      ++out.active;
      auto& pc = out.per_category.at(static_cast<std::size_t>(a.pseudo_labels[j]));
      ++pc.assigned;
      if (a.pseudo_labels[j] == truth[j]) {
        ++pc.correct;
        ++out.correct;
      }
    }
  }
  for (auto& c : out.per_category) {
    if (c.assigned > 0) c.precision = static_cast<double>(c.correct) / static_cast<double>(c.assigned);
    if (c.truth_pixels > 0) {
      c.coverage = static_cast<double>(c.truth_active) / static_cast<double>(c.truth_pixels);
    }
  }
  if (out.active > 0) out.precision = static_cast<double>(out.correct) / static_cast<double>(out.active);
  if (out.pixels > 0) out.coverage = static_cast<double>(out.active) / static_cast<double>(out.pixels);
  return out;
}

PseudoLabelAudit pseudo_label_audit(const ActivationResult& activation,
                                    std::span<const std::uint16_t> oracle_labels,
                                    std::size_t categories) {
  const std::vector<std::uint16_t> plane(oracle_labels.begin(), oracle_labels.end());
  return pseudo_label_audit(std::span<const ActivationResult>(&activation, 1),
                            std::span<const std::vector<std::uint16_t>>(&plane, 1), categories);
}

EvalReport make_report(ConfusionMatrix cm, std::string name) {
  EvalReport r;
  r.name = std::move(name);
  r.iou = iou(cm);
  for (std::size_t k = 0; k < cm.categories(); ++k) r.correct += cm.at(k, k);
  r.pixels = cm.total();
  if (r.pixels > 0) r.pixel_accuracy = static_cast<double>(r.correct) / static_cast<double>(r.pixels);
  r.confusion = std::move(cm);
  return r;
}

EvalReport evaluate(const SegModel& model, const Dataset& labeled, std::string name) {
  NoGradScope no_grad;
  ConfusionMatrix cm(labeled.categories);
  for (std::size_t i = 0; i < labeled.grids.size(); ++i) {
    const auto& g = labeled.grids[i];
    if (!g.labels) throw ContractError("evaluate: grid " + std::to_string(i) + " has no labels");
    cm.add(predict_labels(model.forward(g).probabilities), *g.labels);
  }
  return make_report(std::move(cm), std::move(name));
}

std::string category_name(std::size_t c) { return "cat" + std::to_string(c); }

std::string report_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["name"] = r.name;
  j["categories"] = r.confusion.categories();
  j["miou"] = r.iou.miou;
  j["miou_x100"] = r.iou.miou * 100.0;
  j["included_categories"] = r.iou.included;
  j["pixel_accuracy"] = r.pixel_accuracy;
  j["correct"] = r.correct;
  j["pixels"] = r.pixels;
  auto& per = j["per_category"] = nlohmann::ordered_json::array();
  for (std::size_t k = 0; k < r.iou.per_category.size(); ++k) {
    const auto& c = r.iou.per_category[k];
    per.push_back({{"name", category_name(k)},
                   {"iou", c.iou},
                   {"tp", c.tp},
                   {"fp", c.fp},
                   {"fn", c.fn},
                   {"included", c.included}});
  }
  j["confusion"] = r.confusion.counts();
  return j.dump(2) + "\n";
}

std::string report_table(const EvalReport& r) {
  std::string out = "category\tIoU\tTP\tFP\tFN\n";
  char buf[64];
  for (std::size_t k = 0; k < r.iou.per_category.size(); ++k) {
    const auto& c = r.iou.per_category[k];
    if (c.included) {
      std::snprintf(buf, sizeof buf, "%.2f", c.iou * 100.0);
    } else {
      std::snprintf(buf, sizeof buf, "-");
    }
    out += category_name(k) + "\t" + buf + "\t" + std::to_string(c.tp) + "\t" +
           std::to_string(c.fp) + "\t" + std::to_string(c.fn) + "\n";
  }
  std::snprintf(buf, sizeof buf, "%.2f", r.iou.miou * 100.0);
  out += std::string("mIoU\t") + buf + "\t\t\t\n";
  return out;
}

}  // namespace cag
