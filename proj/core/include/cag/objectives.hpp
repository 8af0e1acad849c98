#pragma once

// Loss terms. All losses are sums over pixels, not means.

#include <cstdint>
#include <span>

#include "cag/anchors.hpp"
#include "cag/model.hpp"
#include "cag/tensor.hpp"

namespace cag {

/// Masked cross-entropy: -sum over masked pixels of log p[label]. Log input is
/// clamped at kLogFloor.
Tensor ce_loss(const Tensor& probabilities, std::span<const std::int32_t> labels,
               std::span<const std::uint8_t> mask);
/// Unmasked cross-entropy over ground-truth labels.
Tensor ce_loss(const Tensor& probabilities, std::span<const std::uint16_t> labels);

/// Sum over masked pixels of the squared distance between the pixel feature
/// and the anchor of its (pseudo-)label. Anchors are constants; only
/// `features` receives gradient. Throws ContractError when a masked pixel's
/// label refers to an invalid anchor.
Tensor dis_loss(const Tensor& features, std::span<const std::int32_t> labels,
                std::span<const std::uint8_t> mask, const AnchorSet& anchors);
Tensor dis_loss(const Tensor& features, std::span<const std::uint16_t> labels,
                const AnchorSet& anchors);

struct LossTerms {
  Tensor ce_source;
  Tensor dis_source;
  Tensor ce_target_anchor;
  Tensor dis_target;
  Tensor ce_target_prob;
};

struct LossBreakdown {
  double ce_source = 0.0;
  double dis_source = 0.0;
  double ce_target_anchor = 0.0;
  double dis_target = 0.0;
  double ce_target_prob = 0.0;
  double total = 0.0;
  std::uint64_t source_pixels = 0;
  std::uint64_t active_anchor_pixels = 0;
  std::uint64_t active_prob_pixels = 0;
};

/// ce_source + lambda_dis * (dis_source + dis_target)
///           + lambda_ce * (ce_target_anchor + ce_target_prob)
Tensor combine(const LossTerms& terms, double lambda_dis, double lambda_ce);

/// Scalar values of every term plus `total` (the value of `combined`).
LossBreakdown breakdown(const LossTerms& terms, const Tensor& combined);

struct AdversarialLosses {
  /// Binary CE of the discriminator: source pixels labeled 1, target 0.
  /// Computed on detached features, so only the discriminator gets gradient.
  Tensor discriminator;
  /// Binary CE of target pixels against label 1 (fooling objective).
  Tensor alignment;
};

AdversarialLosses adversarial_losses(const Discriminator& disc, const Tensor& source_features,
                                     const Tensor& target_features);

}  // namespace cag
