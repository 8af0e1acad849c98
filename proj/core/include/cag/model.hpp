#pragma once

// Per-pixel segmentation network split as encoder -> feature transform ->
// classifier, and the MLP domain discriminator used during warm-up.
//
//   encoder:            D -> hidden (ReLU) -> E (ReLU)
//   feature transform:  E -> F (ReLU)            <- alignment features
//   classifier:         F -> C, one linear layer, softmax
//
// Checkpoint layout (little-endian):
//   "CAGM", version u16, D u32, hidden u32, E u32, F u32, C u32,
//   tensor count u32, then per parameter in declaration order:
//   rank u32, dims u32 x rank, values f64 x prod(dims).

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cag/binary_io.hpp"
#include "cag/synth.hpp"
#include "cag/tensor.hpp"

namespace cag {

inline constexpr std::uint16_t kCheckpointFormatVersion = 1;

struct ModelDims {
  std::size_t input = 8;
  std::size_t hidden = 32;
  std::size_t embed = 16;
  std::size_t feature = 16;
  std::size_t categories = 6;

  bool operator==(const ModelDims&) const = default;
};

/// y = x * weight + bias with weight [in x out].
struct Linear {
  Tensor weight;
  Tensor bias;

  Tensor operator()(const Tensor& x) const { return add_row_vector(matmul(x, weight), bias); }
};

class SegModel {
 public:
  struct Output {
    Tensor features;       ///< [P x F], the exact tensor fed to the classifier
    Tensor logits;         ///< [P x C]
    Tensor probabilities;  ///< [P x C]
  };

  SegModel() = default;
  SegModel(ModelDims dims, Linear enc_in, Linear enc_out, Linear transform, Linear classifier);

  const ModelDims& dims() const noexcept { return dims_; }

  /// Forward pass on a [P x D] pixel matrix.
  Output forward(const Tensor& pixels) const;
  Output forward(const LabeledGrid& grid) const;

  /// Parameters in declaration order: encoder (W, b) x 2, transform (W, b),
  /// classifier (W, b). Handles alias the model's storage.
  std::vector<Tensor> parameters() const;

  Linear& classifier() noexcept { return classifier_; }
  const Linear& classifier() const noexcept { return classifier_; }

  /// Deep copy with fresh storage.
  SegModel clone() const;

  /// Bitwise parameter equality.
  bool same_parameters(const SegModel& other) const;

 private:
  ModelDims dims_;
  Linear enc_in_, enc_out_, transform_, classifier_;
};

class Discriminator {
 public:
  static constexpr double kLeakySlope = 0.2;

  Discriminator() = default;
  Discriminator(Linear hidden, Linear out) : hidden_(std::move(hidden)), out_(std::move(out)) {}

  /// One logit per row of `features` [P x F] -> [P x 1].
  Tensor logits(const Tensor& features) const;
  std::vector<Tensor> parameters() const;
  Discriminator clone() const;

 private:
  Linear hidden_, out_;
};

/// Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases.
SegModel init_seg_model(const ModelDims& dims, std::uint64_t seed);
Discriminator init_discriminator(std::size_t feature_dim, std::size_t hidden,
                                 std::uint64_t seed);
Linear init_linear(std::size_t in, std::size_t out, std::uint64_t seed, std::uint64_t layer);

/// Per-row argmax; ties go to the lowest category index.
std::vector<std::int32_t> predict_labels(const Tensor& probabilities);

void write_tensor(io::Writer& w, const Tensor& t);
Tensor read_tensor(io::Reader& r);

void write_model(io::Writer& w, const SegModel& m);
SegModel read_model(io::Reader& r);

std::vector<std::uint8_t> encode_model(const SegModel& m);
SegModel decode_model(std::span<const std::uint8_t> bytes);
void save_model(const SegModel& m, const std::string& path);
SegModel load_model(const std::string& path);

}  // namespace cag
