#include "cag/stage_snapshot.hpp"

#include "cag/binary_io.hpp"
#include "cag/errors.hpp"

namespace cag {
namespace {

constexpr std::uint16_t kInactiveLabel = 0xFFFF;

void write_activation(io::Writer& w, const ActivationResult& a) {
  const std::size_t p = a.pixels();
  std::vector<std::uint8_t> bits((p + 7) / 8, 0);
  for (std::size_t j = 0; j < p; ++j) {
    if (a.active[j]) bits[j / 8] |= static_cast<std::uint8_t>(1u << (j % 8));
  }
  w.bytes(bits);
  for (std::size_t j = 0; j < p; ++j) {
    w.u16(a.active[j] ? static_cast<std::uint16_t>(a.pseudo_labels[j]) : kInactiveLabel);
  }
}

ActivationResult read_activation(io::Reader& r, std::size_t p, std::size_t categories,
                                 ActivationSource source) {
  ActivationResult a;
  a.source = source;
  a.active.assign(p, 0);
  a.pseudo_labels.assign(p, ActivationResult::kNoLabel);
  const auto bits_at = r.offset();
  const auto bits = r.bytes((p + 7) / 8);
  for (std::size_t j = 0; j < p; ++j) a.active[j] = (bits[j / 8] >> (j % 8)) & 1u;
  if (p % 8 != 0 && (bits.back() >> (p % 8)) != 0) {
    throw ParseError("activation bitmap has bits set past the last pixel", bits_at);
  }
  for (std::size_t j = 0; j < p; ++j) {
    const auto at = r.offset();
    const auto y = r.u16();
    if (a.active[j]) {
      if (y >= categories) throw ParseError("pseudo-label outside [0, C)", at);
      a.pseudo_labels[j] = y;
    } else if (y != kInactiveLabel) {
      throw ParseError("inactive pixel carries a pseudo-label", at);
    }
  }
  return a;
}

}  // namespace

std::vector<std::uint8_t> encode_stage(const StageState& state) {
  const auto& f = state.frozen();
  io::Writer w;
  w.magic("CAGS");
  w.u16(kSnapshotFormatVersion);
  w.u32(static_cast<std::uint32_t>(f.stage));
  w.u64(state.iteration());

  const auto& a = f.anchors;
  w.u32(static_cast<std::uint32_t>(a.categories));
  w.u32(static_cast<std::uint32_t>(a.feature_dim));
  for (double x : a.anchors) w.f64(x);
  for (auto v : a.valid) w.u8(v ? 1 : 0);
  for (auto n : a.pixel_counts) w.u64(n);

  w.u32(static_cast<std::uint32_t>(f.anchor_activations.size()));
  for (std::size_t i = 0; i < f.anchor_activations.size(); ++i) {
    w.u32(static_cast<std::uint32_t>(f.anchor_activations[i].pixels()));
    write_activation(w, f.anchor_activations[i]);
    write_activation(w, f.prob_activations[i]);
  }

  write_model(w, state.model());
  w.u32(static_cast<std::uint32_t>(state.momentum().size()));
  for (const auto& buf : state.momentum()) {
    w.u64(buf.size());
    for (double x : buf) w.f64(x);
  }
  return w.release();
}

StageState decode_stage(std::span<const std::uint8_t> bytes) {
  io::Reader r(bytes);
  r.expect_magic("CAGS", "stage snapshot");
  const auto version = r.u16();
  if (version != kSnapshotFormatVersion) {
    throw VersionError("stage snapshot version " + std::to_string(version) +
                       " is not supported (expected " +
                       std::to_string(kSnapshotFormatVersion) + ")");
  }
  StageFrozen f;
  const auto stage_at = r.offset();
  f.stage = r.u32();
  if (f.stage < 1) throw ParseError("stage index must be >= 1", stage_at);
  const auto iteration = r.u64();

  auto& a = f.anchors;
  const auto dims_at = r.offset();
  a.categories = r.u32();
  a.feature_dim = r.u32();
  if (a.categories == 0 || a.feature_dim == 0) {
    throw ParseError("anchor set has a zero dimension", dims_at);
  }
  if (a.categories * a.feature_dim > r.remaining() / 8) {
    throw ParseError("truncated anchor block", r.offset());
  }
  a.anchors.resize(a.categories * a.feature_dim);
  for (auto& x : a.anchors) x = r.f64();
  a.valid.resize(a.categories);
  for (auto& v : a.valid) {
    const auto at = r.offset();
    v = r.u8();
    if (v > 1) throw ParseError("anchor validity flag must be 0 or 1", at);
  }
  a.pixel_counts.resize(a.categories);
  for (std::size_t c = 0; c < a.categories; ++c) {
    const auto at = r.offset();
    a.pixel_counts[c] = r.u64();
    if ((a.pixel_counts[c] > 0) != (a.valid[c] == 1)) {
      throw ParseError("anchor validity disagrees with its pixel count", at);
    }
  }

  const auto grids = r.u32();
  for (std::uint32_t i = 0; i < grids; ++i) {
    const auto p = r.u32();
    f.anchor_activations.push_back(read_activation(r, p, a.categories, ActivationSource::kAnchor));
    f.prob_activations.push_back(
        read_activation(r, p, a.categories, ActivationSource::kProbability));
  }

  SegModel model = read_model(r);
  if (model.dims().feature != a.feature_dim || model.dims().categories != a.categories) {
    throw ParseError("model dimensions disagree with the anchor set", r.offset());
  }
  const auto params = model.parameters();
  const auto count_at = r.offset();
  const auto count = r.u32();
  if (count != params.size()) {
    throw ParseError("momentum buffer count differs from parameter count", count_at);
  }
  std::vector<std::vector<double>> momentum(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto at = r.offset();
    const auto len = r.u64();
    if (len != params[i].size()) throw ParseError("momentum buffer has the wrong length", at);
    momentum[i].resize(len);
    for (auto& x : momentum[i]) x = r.f64();
  }
  r.expect_end("stage snapshot");
  return StageState(std::move(f), std::move(model), std::move(momentum), iteration);
}

void save_stage(const StageState& state, const std::string& path) {
  io::write_file(path, encode_stage(state));
}

StageState load_stage(const std::string& path) { return decode_stage(io::read_file(path)); }

}  // namespace cag
