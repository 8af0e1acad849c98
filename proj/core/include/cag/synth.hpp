#pragma once

// Synthetic source/target segmentation grids with a controllable appearance
// shift, plus the on-disk dataset format.
//
// Dataset file layout (all integers and floats little-endian):
//
//   "CAGD"            4 bytes magic
//   version           u16 (currently 1)
//   role              u8  (0 source, 1 target-train, 2 target-eval)
//   has_labels        u8  (0 or 1)
//   H, W, D, C, count u32 each
//   per grid:
//     D feature planes, each H*W f32 in row-major pixel order
//     if has_labels: H*W u16 labels
//
// Labels are kept for target-train grids so evaluation can audit pseudo-labels,
// but training code only ever receives an UnlabeledDataset.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cag/tensor.hpp"

namespace cag {

inline constexpr std::uint16_t kDatasetFormatVersion = 1;

struct LabeledGrid {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t dim = 0;
  /// Pixel-major: feature d of pixel j lives at features[j * dim + d].
  std::vector<float> features;
  std::optional<std::vector<std::uint16_t>> labels;

  std::size_t pixels() const noexcept { return height * width; }
  /// [H*W x D] float64 tensor of the pixel features.
  Tensor feature_matrix() const;

  bool operator==(const LabeledGrid&) const = default;
};

/// x -> matrix * x + offset, with a row-major D x D matrix.
struct AffineMap {
  std::size_t dim = 0;
  std::vector<double> matrix;
  std::vector<double> offset;

  static AffineMap identity(std::size_t dim);
  std::vector<double> apply(std::span<const double> x) const;
};

struct DomainSpec {
  std::size_t categories = 6;
  std::size_t dim = 8;
  std::vector<std::vector<double>> prototypes;
  AffineMap transform;
  double noise_sigma = 0.0;
  std::size_t coherence_scale = 4;
  std::uint64_t seed = 0;

  /// Throws ContractError when any field is out of range or inconsistent.
  void validate() const;
};

enum class DatasetRole : std::uint8_t { kSource = 0, kTargetTrain = 1, kTargetEval = 2 };

const char* to_string(DatasetRole role);

struct Dataset {
  DatasetRole role = DatasetRole::kSource;
  std::size_t categories = 0;
  std::vector<LabeledGrid> grids;

  std::size_t size() const noexcept { return grids.size(); }
  std::size_t height() const noexcept { return grids.empty() ? 0 : grids[0].height; }
  std::size_t width() const noexcept { return grids.empty() ? 0 : grids[0].width; }
  std::size_t dim() const noexcept { return grids.empty() ? 0 : grids[0].dim; }
  /// True when every grid carries labels (and there is at least one grid).
  bool has_labels() const noexcept;
  /// Checks shared shape, feature counts and label range.
  void validate() const;

  bool operator==(const Dataset&) const = default;
};

/// Read-only view of a dataset with labels removed. This is the only form in
/// which target-domain data reaches the trainer.
class UnlabeledDataset {
 public:
  explicit UnlabeledDataset(const Dataset& labeled);

  std::size_t size() const noexcept { return grids_.size(); }
  std::size_t categories() const noexcept { return categories_; }
  const LabeledGrid& grid(std::size_t i) const { return grids_.at(i); }

 private:
  std::size_t categories_;
  std::vector<LabeledGrid> grids_;
};

/// `categories` points on a sphere of `radius` in `dim` dimensions. When
/// categories <= dim they are mutually orthogonal (equal pairwise spacing),
/// otherwise they are seeded random directions. Values are rounded to float32
/// so that generated features can reproduce them exactly.
std::vector<std::vector<double>> default_prototypes(std::size_t categories,
                                                    std::size_t dim, double radius,
                                                    std::uint64_t seed);

/// (1 - mix) * I + mix * R with R a seeded random rotation, plus an offset of
/// length `offset_norm` in a seeded random direction.
AffineMap random_shift(std::size_t dim, double mix, double offset_norm,
                       std::uint64_t seed);

/// Draws `count` grids. Labels are constant over coherence_scale-sized square
/// blocks; each pixel feature is transform(prototype[label]) plus isotropic
/// Gaussian noise. Pure function of its arguments.
Dataset generate(const DomainSpec& spec, std::size_t count, std::size_t height,
                 std::size_t width, DatasetRole role = DatasetRole::kSource);

/// Per-category pixel totals. Throws ContractError when labels are missing.
std::vector<std::uint64_t> class_pixel_counts(const Dataset& ds);

/// Mean distance between same-category pixels drawn from the two datasets,
/// averaged over categories present in both. Uses at most
/// `max_per_category` pixels of each category from each side.
double category_shift_proxy(const Dataset& a, const Dataset& b,
                            std::size_t max_per_category = 128);

std::vector<std::uint8_t> encode_dataset(const Dataset& ds);
/// Throws ParseError (with byte offset) or VersionError; never returns a
/// partially decoded dataset.
Dataset decode_dataset(std::span<const std::uint8_t> bytes);

void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace cag
