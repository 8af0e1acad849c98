#include "cag/synth.hpp"

#include <cmath>

#include "cag/binary_io.hpp"
#include "cag/errors.hpp"
#include "cag/rng.hpp"

namespace cag {
namespace {

constexpr std::uint64_t kLabelStream = 0x4c41424c;  // "LABL"
constexpr std::uint64_t kNoiseStream = 0x4e4f4953;  // "NOIS"

std::vector<std::vector<double>> gaussian_rows(std::size_t n, std::size_t dim,
                                               CounterRng& rng) {
  std::vector<std::vector<double>> rows(n, std::vector<double>(dim));
  for (auto& r : rows) {
    for (auto& x : r) x = rng.normal();
  }
  return rows;
}

double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

/// Modified Gram-Schmidt, in place. Requires rows.size() <= dim.
void orthonormalize(std::vector<std::vector<double>>& rows) {
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t k = 0; k < i; ++k) {
      double dot = 0.0;
      for (std::size_t d = 0; d < rows[i].size(); ++d) dot += rows[i][d] * rows[k][d];
      for (std::size_t d = 0; d < rows[i].size(); ++d) rows[i][d] -= dot * rows[k][d];
    }
    const double n = norm(rows[i]);
    for (auto& x : rows[i]) x /= n;
  }
}

}  // namespace

Tensor LabeledGrid::feature_matrix() const {
  return Tensor::from({pixels(), dim}, std::vector<double>(features.begin(), features.end()));
}

AffineMap AffineMap::identity(std::size_t dim) {
  AffineMap m;
  m.dim = dim;
  m.matrix.assign(dim * dim, 0.0);
  for (std::size_t i = 0; i < dim; ++i) m.matrix[i * dim + i] = 1.0;
  m.offset.assign(dim, 0.0);
  return m;
}

std::vector<double> AffineMap::apply(std::span<const double> x) const {
  std::vector<double> y(dim);
  for (std::size_t i = 0; i < dim; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < dim; ++j) acc += matrix[i * dim + j] * x[j];
    y[i] = acc + offset[i];
  }
  return y;
}

void DomainSpec::validate() const {
  if (categories < 2) throw ContractError("domain spec needs at least 2 categories");
  if (categories > 0xFFFF) throw ContractError("at most 65535 categories fit the label plane");
  if (dim < 2) throw ContractError("domain spec needs feature dimension >= 2");
  if (!(noise_sigma >= 0.0)) throw ContractError("noise_sigma must be >= 0");
  if (coherence_scale < 1) throw ContractError("coherence_scale must be >= 1");
  if (prototypes.size() != categories) {
    throw ContractError("expected " + std::to_string(categories) + " prototypes, got " +
                        std::to_string(prototypes.size()));
  }
  for (const auto& p : prototypes) {
    if (p.size() != dim) throw ContractError("prototype dimension differs from spec dim");
  }
  if (transform.dim != dim || transform.matrix.size() != dim * dim ||
      transform.offset.size() != dim) {
    throw ContractError("appearance transform does not match spec dim");
  }
}

const char* to_string(DatasetRole role) {
  switch (role) {
    case DatasetRole::kSource: return "source";
    case DatasetRole::kTargetTrain: return "target-train";
    case DatasetRole::kTargetEval: return "target-eval";
  }
  return "unknown";
}

bool Dataset::has_labels() const noexcept {
  if (grids.empty()) return false;
  for (const auto& g : grids) {
    if (!g.labels) return false;
  }
  return true;
}

void Dataset::validate() const {
  for (std::size_t i = 0; i < grids.size(); ++i) {
    const auto& g = grids[i];
    const auto where = " (grid " + std::to_string(i) + ")";
    if (g.height != height() || g.width != width() || g.dim != dim()) {
      throw ContractError("grids do not share H, W, D" + where);
    }
    if (g.features.size() != g.pixels() * g.dim) {
      throw ContractError("feature count differs from H*W*D" + where);
    }
    if (g.labels) {
      if (g.labels->size() != g.pixels()) throw ContractError("label count differs from H*W" + where);
      for (auto y : *g.labels) {
        if (y >= categories) throw ContractError("label out of range" + where);
      }
    }
  }
}

UnlabeledDataset::UnlabeledDataset(const Dataset& labeled)
    : categories_(labeled.categories), grids_(labeled.grids) {
  for (auto& g : grids_) g.labels.reset();
}

std::vector<std::vector<double>> default_prototypes(std::size_t categories,
                                                    std::size_t dim, double radius,
                                                    std::uint64_t seed) {
  CounterRng rng(seed, 0x50524f54);  // "PROT"
  auto rows = gaussian_rows(categories, dim, rng);
  if (categories <= dim) {
    orthonormalize(rows);
  } else {
    for (auto& r : rows) {
      const double n = norm(r);
      for (auto& x : r) x /= n;
    }
  }
  for (auto& r : rows) {
    for (auto& x : r) x = static_cast<double>(static_cast<float>(radius * x));
  }
  return rows;
}

AffineMap random_shift(std::size_t dim, double mix, double offset_norm, std::uint64_t seed) {
  CounterRng rng(seed, 0x53484654);  // "SHFT"
  auto rot = gaussian_rows(dim, dim, rng);
  orthonormalize(rot);
  auto dir = gaussian_rows(1, dim, rng).front();
  const double n = norm(dir);

  AffineMap m = AffineMap::identity(dim);
  for (std::size_t i = 0; i < dim; ++i) {
    for (std::size_t j = 0; j < dim; ++j) {
      m.matrix[i * dim + j] = (1.0 - mix) * (i == j ? 1.0 : 0.0) + mix * rot[i][j];
    }
    m.offset[i] = offset_norm * dir[i] / n;
  }
  return m;
}

Dataset generate(const DomainSpec& spec, std::size_t count, std::size_t height,
                 std::size_t width, DatasetRole role) {
  spec.validate();
  if (count < 1) throw ContractError("dataset count must be >= 1");
  if (height < 1 || width < 1) throw ContractError("grid size must be positive");

  // Transformed prototypes are shared by every pixel of a category.
  std::vector<std::vector<double>> centers;
  centers.reserve(spec.categories);
  for (const auto& p : spec.prototypes) centers.push_back(spec.transform.apply(p));

  const std::size_t s = spec.coherence_scale;
  const std::size_t block_rows = (height + s - 1) / s;
  const std::size_t block_cols = (width + s - 1) / s;

  Dataset ds;
  ds.role = role;
  ds.categories = spec.categories;
  ds.grids.reserve(count);
  for (std::size_t g = 0; g < count; ++g) {
    CounterRng label_rng(derive_seed(spec.seed, g), kLabelStream);
    CounterRng noise_rng(derive_seed(spec.seed, g), kNoiseStream);

    std::vector<std::uint16_t> block_label(block_rows * block_cols);
    for (auto& b : block_label) b = static_cast<std::uint16_t>(label_rng.below(spec.categories));

    LabeledGrid grid;
    grid.height = height;
    grid.width = width;
    grid.dim = spec.dim;
    grid.features.resize(height * width * spec.dim);
    std::vector<std::uint16_t> labels(height * width);
    for (std::size_t r = 0; r < height; ++r) {
      for (std::size_t c = 0; c < width; ++c) {
        const std::size_t j = r * width + c;
        const auto y = block_label[(r / s) * block_cols + c / s];
        labels[j] = y;
        for (std::size_t d = 0; d < spec.dim; ++d) {
          double x = centers[y][d];
          if (spec.noise_sigma > 0.0) x += spec.noise_sigma * noise_rng.normal();
          grid.features[j * spec.dim + d] = static_cast<float>(x);
        }
      }
    }
    grid.labels = std::move(labels);
    ds.grids.push_back(std::move(grid));
  }
  return ds;
}

std::vector<std::uint64_t> class_pixel_counts(const Dataset& ds) {
  std::vector<std::uint64_t> counts(ds.categories, 0);
  for (std::size_t i = 0; i < ds.grids.size(); ++i) {
    const auto& labels = ds.grids[i].labels;
    if (!labels) {
      throw ContractError("class_pixel_counts: grid " + std::to_string(i) + " has no labels");
    }
    for (auto y : *labels) ++counts.at(y);
  }
  return counts;
}

double category_shift_proxy(const Dataset& a, const Dataset& b, std::size_t max_per_category) {
  if (a.categories != b.categories || a.dim() != b.dim()) {
    throw DimensionError("category_shift_proxy: datasets differ in C or D");
  }
  const std::size_t dim = a.dim();
  auto collect = [&](const Dataset& ds) {
    std::vector<std::vector<const float*>> per(ds.categories);
    for (const auto& g : ds.grids) {
      if (!g.labels) throw ContractError("category_shift_proxy needs labeled datasets");
      for (std::size_t j = 0; j < g.pixels(); ++j) {
        auto& bucket = per[(*g.labels)[j]];
        if (bucket.size() < max_per_category) bucket.push_back(&g.features[j * dim]);
      }
    }
    return per;
  };
  const auto pa = collect(a);
  const auto pb = collect(b);
  double total = 0.0;
  std::size_t used = 0;
  for (std::size_t c = 0; c < a.categories; ++c) {
    if (pa[c].empty() || pb[c].empty()) continue;
    double acc = 0.0;
    for (const float* x : pa[c]) {
      for (const float* y : pb[c]) {
        double ss = 0.0;
        for (std::size_t d = 0; d < dim; ++d) {
          const double diff = static_cast<double>(x[d]) - static_cast<double>(y[d]);
          ss += diff * diff;
        }
        acc += std::sqrt(ss);
      }
    }
    total += acc / static_cast<double>(pa[c].size() * pb[c].size());
    ++used;
  }
  return used == 0 ? 0.0 : total / static_cast<double>(used);
}

std::vector<std::uint8_t> encode_dataset(const Dataset& ds) {
  ds.validate();
  const bool labeled = ds.has_labels();
  io::Writer w;
  w.magic("CAGD");
  w.u16(kDatasetFormatVersion);
  w.u8(static_cast<std::uint8_t>(ds.role));
  w.u8(labeled ? 1 : 0);
  w.u32(static_cast<std::uint32_t>(ds.height()));
  w.u32(static_cast<std::uint32_t>(ds.width()));
  w.u32(static_cast<std::uint32_t>(ds.dim()));
  w.u32(static_cast<std::uint32_t>(ds.categories));
  w.u32(static_cast<std::uint32_t>(ds.grids.size()));
  for (const auto& g : ds.grids) {
    for (std::size_t d = 0; d < g.dim; ++d) {
      for (std::size_t j = 0; j < g.pixels(); ++j) w.f32(g.features[j * g.dim + d]);
    }
    if (labeled) {
      for (auto y : *g.labels) w.u16(y);
    }
  }
  return w.release();
}

Dataset decode_dataset(std::span<const std::uint8_t> bytes) {
  io::Reader r(bytes);
  r.expect_magic("CAGD", "dataset");
  const auto version = r.u16();
  if (version != kDatasetFormatVersion) {
    throw VersionError("dataset format version " + std::to_string(version) +
                       " is not supported (expected " +
                       std::to_string(kDatasetFormatVersion) + ")");
  }
  const auto role_offset = r.offset();
  const auto role = r.u8();
  if (role > 2) throw ParseError("unknown dataset role " + std::to_string(role), role_offset);
  const auto flag_offset = r.offset();
  const auto labeled = r.u8();
  if (labeled > 1) throw ParseError("has_labels must be 0 or 1", flag_offset);

  const auto dims_offset = r.offset();
  const std::uint64_t h = r.u32(), w = r.u32(), dim = r.u32(), cats = r.u32(), count = r.u32();
  if (h == 0 || w == 0 || dim == 0 || cats == 0) {
    throw ParseError("dataset header has a zero dimension", dims_offset);
  }
  const std::uint64_t per_grid = h * w * dim * 4 + (labeled ? h * w * 2 : 0);
  if (per_grid != 0 && count > r.remaining() / per_grid) {
    throw ParseError("truncated dataset: header declares " + std::to_string(count) +
                         " grids of " + std::to_string(per_grid) + " bytes, " +
                         std::to_string(r.remaining()) + " bytes remain",
                     r.offset());
  }

  Dataset ds;
  ds.role = static_cast<DatasetRole>(role);
  ds.categories = cats;
  ds.grids.reserve(count);
  for (std::uint64_t g = 0; g < count; ++g) {
    LabeledGrid grid;
    grid.height = h;
    grid.width = w;
    grid.dim = dim;
    grid.features.resize(h * w * dim);
    for (std::size_t d = 0; d < dim; ++d) {
      for (std::size_t j = 0; j < h * w; ++j) grid.features[j * dim + d] = r.f32();
    }
    if (labeled) {
      std::vector<std::uint16_t> labels(h * w);
      for (auto& y : labels) {
        const auto at = r.offset();
        y = r.u16();
        if (y >= cats) throw ParseError("label " + std::to_string(y) + " >= C", at);
      }
      grid.labels = std::move(labels);
    }
    ds.grids.push_back(std::move(grid));
  }
  r.expect_end("dataset");
  return ds;
}

void save_dataset(const Dataset& ds, const std::string& path) {
  io::write_file(path, encode_dataset(ds));
}

Dataset load_dataset(const std::string& path) { return decode_dataset(io::read_file(path)); }

}  // namespace cag
