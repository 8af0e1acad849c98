#pragma once

// Category anchors (per-category centroids of source features at the
// classifier input), active target pixel identification, and pseudo-labels.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "cag/model.hpp"
#include "cag/synth.hpp"
#include "cag/tensor.hpp"

namespace cag {

struct AnchorSet {
  std::size_t categories = 0;
  std::size_t feature_dim = 0;
  /// Row-major [C x F]. Rows of invalid categories are zero and unused.
  std::vector<double> anchors;
  std::vector<std::uint8_t> valid;
  std::vector<std::uint64_t> pixel_counts;

  std::span<const double> anchor(std::size_t c) const {
    return std::span<const double>(anchors).subspan(c * feature_dim, feature_dim);
  }
  std::size_t valid_count() const noexcept;

  bool operator==(const AnchorSet&) const = default;
};

/// Single-pass running sums of features per category.
class AnchorAccumulator {
 public:
  AnchorAccumulator(std::size_t categories, std::size_t feature_dim);

  /// `features` is [P x F]; `labels` holds P category indices.
  void add(const Tensor& features, std::span<const std::uint16_t> labels);
  AnchorSet finish() const;

 private:
  std::size_t categories_, feature_dim_;
  std::vector<double> sums_;
  std::vector<std::uint64_t> counts_;
};

/// Mean classifier-input feature per category over every pixel of every
/// labeled source grid. Categories absent from the source are marked invalid.
AnchorSet construct_anchors(const Dataset& source, const SegModel& model);

/// [P x C] Euclidean (not squared) distances from each feature row to each
/// anchor; invalid anchors get +infinity.
Tensor anchor_distances(const Tensor& features, const AnchorSet& anchors);

enum class ActivationSource : std::uint8_t { kAnchor = 0, kProbability = 1 };

struct ActivationResult {
  static constexpr std::int32_t kNoLabel = -1;

  ActivationSource source = ActivationSource::kAnchor;
  std::vector<std::uint8_t> active;
  /// Category index for active pixels, kNoLabel otherwise.
  std::vector<std::int32_t> pseudo_labels;

  std::size_t pixels() const noexcept { return active.size(); }
  std::size_t active_count() const noexcept;
  std::optional<std::int32_t> label(std::size_t j) const {
    return active[j] ? std::optional<std::int32_t>(pseudo_labels[j]) : std::nullopt;
  }

  bool operator==(const ActivationResult&) const = default;
};

/// A pixel is active when its nearest finite distance beats the runner-up by
/// strictly more than `margin` (d2 - d1 > margin and d1 + margin < d2); it is
/// then pseudo-labeled with the nearest category. Rows with fewer than two
/// finite distances are inactive.
ActivationResult identify_active(const Tensor& distances, double margin);

/// A pixel is active when its largest probability is strictly above
/// `threshold`; the pseudo-label is the argmax (lowest index on ties).
ActivationResult identify_active_by_probability(const Tensor& probabilities, double threshold);

struct ActivationReport {
  std::vector<std::uint64_t> active_per_category;
  std::uint64_t active_pixels = 0;
  std::uint64_t total_pixels = 0;
  double active_fraction = 0.0;
  /// Present only when oracle labels were supplied and at least one pixel is active.
  std::optional<double> accuracy;
  std::uint64_t correct = 0;
};

ActivationReport activation_report(std::span<const ActivationResult> results,
                                   std::size_t categories);
/// `oracle_labels[i]` holds the true labels of the grid behind `results[i]`.
ActivationReport activation_report(std::span<const ActivationResult> results,
                                   std::size_t categories,
                                   std::span<const std::vector<std::uint16_t>> oracle_labels);

}  // namespace cag
