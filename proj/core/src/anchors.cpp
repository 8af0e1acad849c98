#include "cag/anchors.hpp"

#include <cmath>
#include <limits>

#include "cag/errors.hpp"

namespace cag {

std::size_t AnchorSet::valid_count() const noexcept {
  std::size_t n = 0;
  for (auto v : valid) n += v ? 1 : 0;
  return n;
}

AnchorAccumulator::AnchorAccumulator(std::size_t categories, std::size_t feature_dim)
    : categories_(categories),
      feature_dim_(feature_dim),
      sums_(categories * feature_dim, 0.0),
      counts_(categories, 0) {}

void AnchorAccumulator::add(const Tensor& features, std::span<const std::uint16_t> labels) {
  if (features.rank() != 2 || features.cols() != feature_dim_) {
    throw DimensionError("anchor accumulator expects [P x " + std::to_string(feature_dim_) +
                         "] features, got " + to_string(features.shape()));
  }
  if (labels.size() != features.rows()) {
    throw DimensionError("anchor accumulator: " + std::to_string(features.rows()) +
                         " feature rows but " + std::to_string(labels.size()) + " labels");
  }
  const auto v = features.values();
  for (std::size_t j = 0; j < labels.size(); ++j) {
    const std::size_t c = labels[j];
    if (c >= categories_) throw ContractError("label outside [0, C) in anchor construction");
    ++counts_[c];
    for (std::size_t d = 0; d < feature_dim_; ++d) {
      sums_[c * feature_dim_ + d] += v[j * feature_dim_ + d];
    }
  }
}

AnchorSet AnchorAccumulator::finish() const {
  AnchorSet out;
  out.categories = categories_;
  out.feature_dim = feature_dim_;
  out.anchors.assign(categories_ * feature_dim_, 0.0);
  out.valid.assign(categories_, 0);
  out.pixel_counts = counts_;
  for (std::size_t c = 0; c < categories_; ++c) {
    if (counts_[c] == 0) continue;
    out.valid[c] = 1;
    const double n = static_cast<double>(counts_[c]);
    for (std::size_t d = 0; d < feature_dim_; ++d) {
      out.anchors[c * feature_dim_ + d] = sums_[c * feature_dim_ + d] / n;
    }
  }
  return out;
}

AnchorSet construct_anchors(const Dataset& source, const SegModel& model) {
  NoGradScope no_grad;
  AnchorAccumulator acc(source.categories, model.dims().feature);
  for (std::size_t i = 0; i < source.grids.size(); ++i) {
    const auto& g = source.grids[i];
    if (!g.labels) {
      throw ContractError("construct_anchors: source grid " + std::to_string(i) +
                          " has no labels");
    }
    acc.add(model.forward(g).features, *g.labels);
  }
  return acc.finish();
}

Tensor anchor_distances(const Tensor& features, const AnchorSet& anchors) {
  const std::size_t f = anchors.feature_dim, c = anchors.categories;
  if (features.rank() != 2 || features.cols() != f) {
    throw DimensionError("anchor_distances: features " + to_string(features.shape()) +
                         " vs anchors of dimension " + std::to_string(f));
  }
  const std::size_t p = features.rows();
  const auto v = features.values();
  std::vector<double> out(p * c);
  for (std::size_t j = 0; j < p; ++j) {
    for (std::size_t k = 0; k < c; ++k) {
      if (!anchors.valid[k]) {
        out[j * c + k] = std::numeric_limits<double>::infinity();
        continue;
      }
      const auto a = anchors.anchor(k);
      double ss = 0.0;
      for (std::size_t d = 0; d < f; ++d) {
        const double diff = a[d] - v[j * f + d];
        ss += diff * diff;
      }
      out[j * c + k] = std::sqrt(ss);
    }
  }
  return Tensor::from({p, c}, std::move(out));
}

std::size_t ActivationResult::active_count() const noexcept {
  std::size_t n = 0;
  for (auto a : active) n += a ? 1 : 0;
  return n;
}

ActivationResult identify_active(const Tensor& distances, double margin) {
  const std::size_t p = distances.rows(), c = distances.cols();
  const auto v = distances.values();
  ActivationResult out;
  out.source = ActivationSource::kAnchor;
  out.active.assign(p, 0);
  out.pseudo_labels.assign(p, ActivationResult::kNoLabel);
  constexpr double kInf = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < p; ++j) {
    double best = kInf, second = kInf;
    std::size_t arg = 0;
    for (std::size_t k = 0; k < c; ++k) {
      const double d = v[j * c + k];
      if (d < best) {
        second = best;
        best = d;
        arg = k;
      } else if (d < second) {
        second = d;
      }
    }
    if (!std::isfinite(second)) continue;
    if (second - best > margin && best + margin < second) {
      out.active[j] = 1;
      out.pseudo_labels[j] = static_cast<std::int32_t>(arg);
    }
  }
  return out;
}

ActivationResult identify_active_by_probability(const Tensor& probabilities, double threshold) {
  const std::size_t p = probabilities.rows(), c = probabilities.cols();
  const auto v = probabilities.values();
  ActivationResult out;
  out.source = ActivationSource::kProbability;
  out.active.assign(p, 0);
  out.pseudo_labels.assign(p, ActivationResult::kNoLabel);
  for (std::size_t j = 0; j < p; ++j) {
    std::size_t arg = 0;
    for (std::size_t k = 1; k < c; ++k) {
      if (v[j * c + k] > v[j * c + arg]) arg = k;
    }
    if (v[j * c + arg] > threshold) {
      out.active[j] = 1;
      out.pseudo_labels[j] = static_cast<std::int32_t>(arg);
    }
  }
  return out;
}

namespace {

ActivationReport report_impl(std::span<const ActivationResult> results, std::size_t categories,
                             const std::span<const std::vector<std::uint16_t>>* oracle) {
  ActivationReport rep;
  rep.active_per_category.assign(categories, 0);
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    if (oracle && (*oracle)[i].size() != r.pixels()) {
      throw DimensionError("activation_report: oracle labels do not match grid " +
                           std::to_string(i));
    }
    rep.total_pixels += r.pixels();
    for (std::size_t j = 0; j < r.pixels(); ++j) {
      if (!r.active[j]) continue;
      ++rep.active_pixels;
      ++rep.active_per_category.at(static_cast<std::size_t>(r.pseudo_labels[j]));
      if (oracle && (*oracle)[i][j] == r.pseudo_labels[j]) ++rep.correct;
    }
  }
  if (rep.total_pixels > 0) {
    rep.active_fraction =
        static_cast<double>(rep.active_pixels) / static_cast<double>(rep.total_pixels);
  }
  if (oracle && rep.active_pixels > 0) {
    rep.accuracy = static_cast<double>(rep.correct) / static_cast<double>(rep.active_pixels);
  }
  return rep;
}

}  // namespace

ActivationReport activation_report(std::span<const ActivationResult> results,
                                   std::size_t categories) {
  return report_impl(results, categories, nullptr);
}

ActivationReport activation_report(std::span<const ActivationResult> results,
                                   std::size_t categories,
                                   std::span<const std::vector<std::uint16_t>> oracle_labels) {
  if (oracle_labels.size() != results.size()) {
    throw DimensionError("activation_report: " + std::to_string(results.size()) +
                         " results but " + std::to_string(oracle_labels.size()) +
                         " oracle label planes");
  }
  return report_impl(results, categories, &oracle_labels);
}

}  // namespace cag
