#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cag/anchors.hpp"
#include "cag/model.hpp"
#include "cag/synth.hpp"

namespace cag {

/// C x C counts, rows = ground truth, columns = prediction.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t categories = 0);

  /// Throws DimensionError on length mismatch, ContractError on labels
  /// outside [0, C).
  void add(std::span<const std::int32_t> predicted, std::span<const std::uint16_t> truth);
  void merge(const ConfusionMatrix& other);

  std::size_t categories() const noexcept { return categories_; }
  std::uint64_t at(std::size_t truth, std::size_t predicted) const {
    return counts_[truth * categories_ + predicted];
  }
  std::uint64_t total() const noexcept;
  const std::vector<std::uint64_t>& counts() const noexcept { return counts_; }

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::size_t categories_;
  std::vector<std::uint64_t> counts_;
};

ConfusionMatrix confusion(std::span<const std::int32_t> predicted,
                          std::span<const std::uint16_t> truth, std::size_t categories);

struct CategoryIoU {
  std::uint64_t tp = 0, fp = 0, fn = 0;
  double iou = 0.0;
  /// False when the category is absent from both prediction and ground truth.
  bool included = false;
};

struct IouResult {
  std::vector<CategoryIoU> per_category;
  /// Unweighted mean over included categories; 0 when none is included.
  double miou = 0.0;
  std::size_t included = 0;
};

/// IoU_c = TP / (TP + FP + FN).
IouResult iou(const ConfusionMatrix& cm);

struct CategoryAudit {
  std::uint64_t truth_pixels = 0;   ///< oracle pixels of this category
  std::uint64_t truth_active = 0;   ///< of those, how many are active
  std::uint64_t assigned = 0;       ///< active pixels pseudo-labeled with this category
  std::uint64_t correct = 0;        ///< of those, how many match the oracle
  std::optional<double> precision;  ///< correct / assigned
  std::optional<double> coverage;   ///< truth_active / truth_pixels
};

struct PseudoLabelAudit {
  std::vector<CategoryAudit> per_category;
  std::uint64_t active = 0;
  std::uint64_t correct = 0;
  std::uint64_t pixels = 0;
  std::optional<double> precision;  ///< absent with zero active pixels
  double coverage = 0.0;
};

PseudoLabelAudit pseudo_label_audit(std::span<const ActivationResult> activations,
                                    std::span<const std::vector<std::uint16_t>> oracle_labels,
                                    std::size_t categories);
PseudoLabelAudit pseudo_label_audit(const ActivationResult& activation,
                                    std::span<const std::uint16_t> oracle_labels,
                                    std::size_t categories);

struct EvalReport {
  std::string name;
  ConfusionMatrix confusion;
  IouResult iou;
  std::uint64_t correct = 0;
  std::uint64_t pixels = 0;
  double pixel_accuracy = 0.0;
};

/// Confusion-based report of `model` on a labeled dataset.
EvalReport evaluate(const SegModel& model, const Dataset& labeled, std::string name = {});
EvalReport make_report(ConfusionMatrix cm, std::string name = {});

/// Structured record (JSON) of a report, including raw counts.
std::string report_json(const EvalReport& report);
/// Tab-separated table: header, one row per category, then an mIoU row.
std::string report_table(const EvalReport& report);

std::string category_name(std::size_t c);

}  // namespace cag
