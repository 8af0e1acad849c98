#include "cag/model.hpp"

#include <cmath>
#include <cstring>

#include "cag/errors.hpp"
#include "cag/rng.hpp"

namespace cag {
namespace {

Linear clone_linear(const Linear& l) {
  Linear out{l.weight.detach(), l.bias.detach()};
  out.weight.set_requires_grad(true);
  out.bias.set_requires_grad(true);
  return out;
}

void expect_shape(const Tensor& t, const Shape& shape, const char* what,
                  std::uint64_t offset) {
  if (t.shape() != shape) {
    throw ParseError(std::string("checkpoint tensor ") + what + " has shape " +
                         to_string(t.shape()) + ", expected " + to_string(shape),
                     offset);
  }
}

}  // namespace

SegModel::SegModel(ModelDims dims, Linear enc_in, Linear enc_out, Linear transform,
                   Linear classifier)
    : dims_(dims),
      enc_in_(std::move(enc_in)),
      enc_out_(std::move(enc_out)),
      transform_(std::move(transform)),
      classifier_(std::move(classifier)) {}

SegModel::Output SegModel::forward(const Tensor& pixels) const {
  if (pixels.rank() != 2 || pixels.cols() != dims_.input) {
    throw DimensionError("model expects [P x " + std::to_string(dims_.input) +
                         "] input, got " + to_string(pixels.shape()));
  }
  const Tensor h = relu(enc_in_(pixels));
  const Tensor e = relu(enc_out_(h));
  Output out;
  out.features = relu(transform_(e));
  out.logits = classifier_(out.features);
  out.probabilities = softmax(out.logits);
  return out;
}

SegModel::Output SegModel::forward(const LabeledGrid& grid) const {
  if (grid.dim != dims_.input) {
    throw DimensionError("grid feature dimension " + std::to_string(grid.dim) +
                         " differs from model input " + std::to_string(dims_.input));
  }
  return forward(grid.feature_matrix());
}

std::vector<Tensor> SegModel::parameters() const {
  return {enc_in_.weight,    enc_in_.bias,    enc_out_.weight,    enc_out_.bias,
          transform_.weight, transform_.bias, classifier_.weight, classifier_.bias};
}

SegModel SegModel::clone() const {
  return SegModel(dims_, clone_linear(enc_in_), clone_linear(enc_out_),
                  clone_linear(transform_), clone_linear(classifier_));
}

bool SegModel::same_parameters(const SegModel& other) const {
  if (!(dims_ == other.dims_)) return false;
  const auto a = parameters();
  const auto b = other.parameters();
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].shape() != b[i].shape()) return false;
    if (std::memcmp(a[i].values().data(), b[i].values().data(),
                    a[i].size() * sizeof(double)) != 0) {
      return false;
    }
  }
  return true;
}

Tensor Discriminator::logits(const Tensor& features) const {
  return out_(leaky_relu(hidden_(features), kLeakySlope));
}

std::vector<Tensor> Discriminator::parameters() const {
  return {hidden_.weight, hidden_.bias, out_.weight, out_.bias};
}

Discriminator Discriminator::clone() const {
  return Discriminator(clone_linear(hidden_), clone_linear(out_));
}

Linear init_linear(std::size_t in, std::size_t out, std::uint64_t seed, std::uint64_t layer) {
  CounterRng rng(seed, 0x494e4954 + layer);  // "INIT" + layer
  const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
  std::vector<double> w(in * out);
  for (auto& x : w) x = rng.uniform(-bound, bound);
  return Linear{Tensor::from({in, out}, std::move(w), true), Tensor::zeros({out}, true)};
}

SegModel init_seg_model(const ModelDims& d, std::uint64_t seed) {
  return SegModel(d, init_linear(d.input, d.hidden, seed, 0),
                  init_linear(d.hidden, d.embed, seed, 1),
                  init_linear(d.embed, d.feature, seed, 2),
                  init_linear(d.feature, d.categories, seed, 3));
}

Discriminator init_discriminator(std::size_t feature_dim, std::size_t hidden,
                                 std::uint64_t seed) {
  return Discriminator(init_linear(feature_dim, hidden, seed, 100),
                       init_linear(hidden, 1, seed, 101));
}

std::vector<std::int32_t> predict_labels(const Tensor& probabilities) {
  const std::size_t p = probabilities.rows(), c = probabilities.cols();
  const auto v = probabilities.values();
  std::vector<std::int32_t> out(p);
  for (std::size_t j = 0; j < p; ++j) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < c; ++k) {
      if (v[j * c + k] > v[j * c + best]) best = k;
    }
    out[j] = static_cast<std::int32_t>(best);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

void write_tensor(io::Writer& w, const Tensor& t) {
  w.u32(static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
  for (double x : t.values()) w.f64(x);
}

Tensor read_tensor(io::Reader& r) {
  const auto start = r.offset();
  const auto rank = r.u32();
  if (rank > 8) throw ParseError("tensor rank " + std::to_string(rank) + " too large", start);
  Shape shape(rank);
  std::uint64_t n = 1;
  for (auto& d : shape) {
    const auto at = r.offset();
    d = r.u32();
    if (d == 0) throw ParseError("tensor dimension is zero", at);
    n *= d;
  }
  if (n > r.remaining() / 8) throw ParseError("truncated tensor values", r.offset());
  std::vector<double> values(n);
  for (auto& x : values) x = r.f64();
  return Tensor::from(std::move(shape), std::move(values));
}

void write_model(io::Writer& w, const SegModel& m) {
  w.magic("CAGM");
  w.u16(kCheckpointFormatVersion);
  const auto& d = m.dims();
  for (auto v : {d.input, d.hidden, d.embed, d.feature, d.categories}) {
    w.u32(static_cast<std::uint32_t>(v));
  }
  const auto params = m.parameters();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) write_tensor(w, p);
}

SegModel read_model(io::Reader& r) {
  r.expect_magic("CAGM", "model checkpoint");
  const auto version = r.u16();
  if (version != kCheckpointFormatVersion) {
    throw VersionError("checkpoint format version " + std::to_string(version) +
                       " is not supported (expected " +
                       std::to_string(kCheckpointFormatVersion) + ")");
  }
  const auto dims_at = r.offset();
  ModelDims d;
  d.input = r.u32();
  d.hidden = r.u32();
  d.embed = r.u32();
  d.feature = r.u32();
  d.categories = r.u32();
  if (!d.input || !d.hidden || !d.embed || !d.feature || !d.categories) {
    throw ParseError("checkpoint header has a zero dimension", dims_at);
  }
  const auto count_at = r.offset();
  if (r.u32() != 8) throw ParseError("checkpoint must hold 8 parameter tensors", count_at);

  const std::pair<Shape, const char*> expected[] = {
      {{d.input, d.hidden}, "encoder.0.weight"},  {{d.hidden}, "encoder.0.bias"},
      {{d.hidden, d.embed}, "encoder.1.weight"},  {{d.embed}, "encoder.1.bias"},
      {{d.embed, d.feature}, "transform.weight"}, {{d.feature}, "transform.bias"},
      {{d.feature, d.categories}, "classifier.weight"}, {{d.categories}, "classifier.bias"}};
  std::vector<Tensor> t;
  for (const auto& [shape, name] : expected) {
    const auto at = r.offset();
    t.push_back(read_tensor(r));
    expect_shape(t.back(), shape, name, at);
    t.back().set_requires_grad(true);
  }
  return SegModel(d, Linear{t[0], t[1]}, Linear{t[2], t[3]}, Linear{t[4], t[5]},
                  Linear{t[6], t[7]});
}

std::vector<std::uint8_t> encode_model(const SegModel& m) {
  io::Writer w;
  write_model(w, m);
  return w.release();
}

SegModel decode_model(std::span<const std::uint8_t> bytes) {
  io::Reader r(bytes);
  auto m = read_model(r);
  r.expect_end("model checkpoint");
  return m;
}

void save_model(const SegModel& m, const std::string& path) {
  io::write_file(path, encode_model(m));
}

SegModel load_model(const std::string& path) { return decode_model(io::read_file(path)); }

}  // namespace cag
