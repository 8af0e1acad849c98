#include "cag/objectives.hpp"

#include <vector>

#include "cag/errors.hpp"

namespace cag {

Tensor ce_loss(const Tensor& probabilities, std::span<const std::int32_t> labels,
               std::span<const std::uint8_t> mask) {
  return masked_nll(probabilities, labels, mask);
}

Tensor ce_loss(const Tensor& probabilities, std::span<const std::uint16_t> labels) {
  std::vector<std::int32_t> l(labels.begin(), labels.end());
  std::vector<std::uint8_t> mask(labels.size(), 1);
  return masked_nll(probabilities, l, mask);
}

Tensor dis_loss(const Tensor& features, std::span<const std::int32_t> labels,
                std::span<const std::uint8_t> mask, const AnchorSet& anchors) {
  if (features.rank() != 2 || features.cols() != anchors.feature_dim) {
    throw DimensionError("dis_loss: features " + to_string(features.shape()) +
                         " vs anchors of dimension " + std::to_string(anchors.feature_dim));
  }
  const std::size_t p = features.rows(), f = features.cols();
  if (labels.size() != p || mask.size() != p) {
    throw DimensionError("dis_loss: label or mask length differs from pixel count");
  }
  std::vector<double> targets(p * f, 0.0);
  std::vector<double> weights(p * f, 0.0);
  for (std::size_t j = 0; j < p; ++j) {
    if (!mask[j]) continue;
    const auto y = labels[j];
    if (y < 0 || static_cast<std::size_t>(y) >= anchors.categories || !anchors.valid[y]) {
      throw ContractError("dis_loss: pixel " + std::to_string(j) + " labeled " +
                          std::to_string(y) + " has no valid anchor");
    }
    const auto a = anchors.anchor(static_cast<std::size_t>(y));
    for (std::size_t d = 0; d < f; ++d) {
      targets[j * f + d] = a[d];
      weights[j * f + d] = 1.0;
    }
  }
  const Tensor diff = sub(features, Tensor::from({p, f}, std::move(targets)));
  return sum(mul(mul(diff, diff), Tensor::from({p, f}, std::move(weights))));
}

Tensor dis_loss(const Tensor& features, std::span<const std::uint16_t> labels,
                const AnchorSet& anchors) {
  std::vector<std::int32_t> l(labels.begin(), labels.end());
  std::vector<std::uint8_t> mask(labels.size(), 1);
  return dis_loss(features, l, mask, anchors);
}

Tensor combine(const LossTerms& t, double lambda_dis, double lambda_ce) {
  for (const Tensor* x : {&t.ce_source, &t.dis_source, &t.ce_target_anchor, &t.dis_target,
                          &t.ce_target_prob}) {
    if (x->size() != 1) throw DimensionError("combine: every loss term must be scalar");
  }
  const Tensor dis = scale(add(t.dis_source, t.dis_target), lambda_dis);
  const Tensor ce = scale(add(t.ce_target_anchor, t.ce_target_prob), lambda_ce);
  return add(add(t.ce_source, dis), ce);
}

LossBreakdown breakdown(const LossTerms& t, const Tensor& combined) {
  LossBreakdown b;
  b.ce_source = t.ce_source.item();
  b.dis_source = t.dis_source.item();
  b.ce_target_anchor = t.ce_target_anchor.item();
  b.dis_target = t.dis_target.item();
  b.ce_target_prob = t.ce_target_prob.item();
  b.total = combined.item();
  return b;
}

AdversarialLosses adversarial_losses(const Discriminator& disc, const Tensor& source_features,
                                     const Tensor& target_features) {
  if (source_features.rank() != 2 || target_features.rank() != 2 ||
      source_features.cols() != target_features.cols()) {
    throw DimensionError("adversarial_losses: feature shapes " +
                         to_string(source_features.shape()) + " and " +
                         to_string(target_features.shape()) + " are incompatible");
  }
  // BCE(z, 1) = softplus(-z), BCE(z, 0) = softplus(z)
  const Tensor zs = disc.logits(source_features.detach());
  const Tensor zt_frozen = disc.logits(target_features.detach());
  AdversarialLosses out;
  out.discriminator = add(sum(softplus(scale(zs, -1.0))), sum(softplus(zt_frozen)));
  out.alignment = sum(softplus(scale(disc.logits(target_features), -1.0)));
  return out;
}

}  // namespace cag
