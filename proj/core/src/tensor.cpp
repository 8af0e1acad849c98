#include "cag/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "cag/errors.hpp"

namespace cag {

using detail::TensorImpl;
using Impl = std::shared_ptr<TensorImpl>;

struct TensorAccess {
  static const Impl& impl(const Tensor& t) { return t.impl_; }
  static Tensor wrap(Impl impl) { return Tensor(std::move(impl)); }
};

namespace {

thread_local Tape* g_active_tape = nullptr;

Impl make_impl(Shape shape, std::vector<double> values) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->values = std::move(values);
  return impl;
}

const Impl& impl_of(const Tensor& t) { return TensorAccess::impl(t); }

/// Attach `fn` to the active tape when any input participates in gradients.
template <typename Fn>
Tensor finish(std::vector<Impl> inputs, Impl out, Fn&& fn) {
  Tape* tape = Tape::active();
  const bool needs = tape != nullptr &&
                     std::any_of(inputs.begin(), inputs.end(),
                                 [](const Impl& i) { return i->requires_grad; });
  if (needs) {
    out->requires_grad = true;
    tape->record(std::move(inputs), out, std::forward<Fn>(fn));
  }
  return TensorAccess::wrap(std::move(out));
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         " tensor, got shape " + to_string(t.shape()));
  }
}

enum class Broadcast { kNone, kLeftScalar, kRightScalar };

Broadcast check_binary(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::kNone;
  if (a.size() == b.size() && a.size() == 1) return Broadcast::kNone;
  if (a.size() == 1) return Broadcast::kLeftScalar;
  if (b.size() == 1) return Broadcast::kRightScalar;
  throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) +
                       " vs " + to_string(b.shape()));
}

Shape result_shape(const Tensor& a, const Tensor& b, Broadcast bc) {
  return bc == Broadcast::kLeftScalar ? b.shape() : a.shape();
}

/// Shared body of add / sub / mul. `da` and `db` give the local partials.
template <typename F, typename DA, typename DB>
Tensor binary(const Tensor& a, const Tensor& b, const char* name, F f, DA da, DB db) {
  const auto bc = check_binary(a, b, name);
  const auto& av = a.values();
  const auto& bv = b.values();
  const std::size_t n = std::max(av.size(), bv.size());
  const bool ls = bc == Broadcast::kLeftScalar;
  const bool rs = bc == Broadcast::kRightScalar;
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = f(av[ls ? 0 : i], bv[rs ? 0 : i]);
  }
  auto oi = make_impl(result_shape(a, b, bc), std::move(out));
  Impl ai = impl_of(a), bi = impl_of(b);
  TensorImpl* op = oi.get();
  return finish({ai, bi}, oi, [ai, bi, op, ls, rs, da, db, n] {
    for (std::size_t i = 0; i < n; ++i) {
      const double x = ai->values[ls ? 0 : i];
      const double y = bi->values[rs ? 0 : i];
      const double g = op->grad[i];
      if (ai->requires_grad) ai->grad[ls ? 0 : i] += da(x, y) * g;
      if (bi->requires_grad) bi->grad[rs ? 0 : i] += db(x, y) * g;
    }
  });
}

template <typename F, typename D>
Tensor unary(const Tensor& a, F f, D d) {
  const auto& av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  auto oi = make_impl(a.shape(), std::move(out));
  Impl ai = impl_of(a);
  TensorImpl* op = oi.get();
  return finish({ai}, oi, [ai, op, d] {
    for (std::size_t i = 0; i < ai->values.size(); ++i) {
      ai->grad[i] += d(ai->values[i], op->values[i]) * op->grad[i];
    }
  });
}

}  // namespace

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << " x ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t element_count(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor() : impl_(make_impl({}, {0.0})) {}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const auto n = element_count(shape);
  return from(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + to_string(shape));
  }
  if (element_count(shape) != values.size()) {
    throw DimensionError("shape " + to_string(shape) + " needs " +
                         std::to_string(element_count(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  auto impl = make_impl(std::move(shape), std::move(values));
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({}, {value}, requires_grad);
}

Tensor Tensor::matrix(const std::vector<std::vector<double>>& rows, bool requires_grad) {
  if (rows.empty()) throw DimensionError("matrix needs at least one row");
  const auto cols = rows.front().size();
  std::vector<double> flat;
  flat.reserve(rows.size() * cols);
  for (const auto& r : rows) {
    if (r.size() != cols) throw DimensionError("ragged matrix rows");
    flat.insert(flat.end(), r.begin(), r.end());
  }
  return from({rows.size(), cols}, std::move(flat), requires_grad);
}

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
  const auto n = values.size();
  return from({n}, std::move(values), requires_grad);
}

std::size_t Tensor::rows() const {
  require_rank(*this, 2, "rows");
  return impl_->shape[0];
}

std::size_t Tensor::cols() const {
  require_rank(*this, 2, "cols");
  return impl_->shape[1];
}

double Tensor::item() const {
  if (size() != 1) {
    throw ContractError("item() on a non-scalar tensor of shape " + to_string(shape()));
  }
  return impl_->values[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  return impl_->values[r * impl_->shape[1] + c];
}

Tensor Tensor::detach() const { return from(impl_->shape, impl_->values, false); }

// ---------------------------------------------------------------------------
// Tape

Tape::Tape() : previous_(g_active_tape) { g_active_tape = this; }

Tape::~Tape() { g_active_tape = previous_; }

Tape* Tape::active() noexcept { return g_active_tape; }

void Tape::record(std::vector<Impl> inputs, Impl output, BackwardFn fn) {
  nodes_.push_back(Node{std::move(inputs), std::move(output), std::move(fn)});
}

void Tape::reset() {
  nodes_.clear();
  consumed_ = false;
}

void Tape::backward(const Tensor& loss) {
  if (consumed_) {
    throw ContractError("backward already ran on this tape; call reset() before reusing it");
  }
  if (loss.size() != 1) {
    throw ContractError("backward needs a scalar loss, got shape " + to_string(loss.shape()));
  }
  const auto& li = TensorAccess::impl(loss);
  std::size_t end = nodes_.size();
  while (end > 0 && nodes_[end - 1].output != li) --end;
  if (end == 0) throw ContractError("loss was not recorded on this tape");

  for (std::size_t k = 0; k < end; ++k) {
    auto& node = nodes_[k];
    for (auto& in : node.inputs) {
      if (in->requires_grad) in->grad.assign(in->values.size(), 0.0);
    }
    node.output->grad.assign(node.output->values.size(), 0.0);
  }
  li->grad[0] = 1.0;
  for (std::size_t k = end; k-- > 0;) nodes_[k].backward();
  consumed_ = true;
}

NoGradScope::NoGradScope() : saved_(g_active_tape) { g_active_tape = nullptr; }
NoGradScope::~NoGradScope() { g_active_tape = saved_; }

// ---------------------------------------------------------------------------
// Operations

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner dimensions differ, " + to_string(a.shape()) +
                         " x " + to_string(b.shape()));
  }
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* row = &out[i * n];
    for (std::size_t p = 0; p < k; ++p) {
      const double x = av[i * k + p];
      const double* brow = &bv[p * n];
      for (std::size_t j = 0; j < n; ++j) row[j] += x * brow[j];
    }
  }
  auto oi = make_impl({m, n}, std::move(out));
  Impl ai = impl_of(a), bi = impl_of(b);
  TensorImpl* op = oi.get();
  return finish({ai, bi}, oi, [ai, bi, op, m, k, n] {
    const auto& g = op->grad;
    if (ai->requires_grad) {
      // dA = G * B^T
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * bi->values[p * n + j];
          ai->grad[i * k + p] += acc;
        }
      }
    }
    if (bi->requires_grad) {
      // dB = A^T * G
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double x = ai->values[i * k + p];
          for (std::size_t j = 0; j < n; ++j) bi->grad[p * n + j] += x * g[i * n + j];
        }
      }
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(
      a, [factor](double x) { return factor * x; },
      [factor](double, double) { return factor; });
}

Tensor add_row_vector(const Tensor& a, const Tensor& bias) {
  require_rank(a, 2, "add_row_vector");
  require_rank(bias, 1, "add_row_vector");
  const std::size_t m = a.rows(), n = a.cols();
  if (bias.size() != n) {
    throw DimensionError("add_row_vector: bias " + to_string(bias.shape()) +
                         " does not match rows of " + to_string(a.shape()));
  }
  std::vector<double> out(a.values().begin(), a.values().end());
  const auto bv = bias.values();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bv[j];
  }
  auto oi = make_impl({m, n}, std::move(out));
  Impl ai = impl_of(a), bi = impl_of(bias);
  TensorImpl* op = oi.get();
  return finish({ai, bi}, oi, [ai, bi, op, m, n] {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const double g = op->grad[i * n + j];
        if (ai->requires_grad) ai->grad[i * n + j] += g;
        if (bi->requires_grad) bi->grad[j] += g;
      }
    }
  });
}

Tensor relu(const Tensor& a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& a, double slope) {
  return unary(
      a, [slope](double x) { return x > 0.0 ? x : slope * x; },
      [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

Tensor softplus(const Tensor& a) {
  return unary(
      a,
      [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); },
      [](double x, double) {
        // sigmoid(x), evaluated on the non-overflowing branch
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      });
}

Tensor softmax(const Tensor& logits) {
  if (logits.rank() == 0 || logits.shape().back() == 0) {
    throw DimensionError("softmax needs at least one category on the last axis");
  }
  const std::size_t c = logits.shape().back();
  const std::size_t rows = logits.size() / c;
  const auto lv = logits.values();
  std::vector<double> out(logits.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = &lv[r * c];
    double* y = &out[r * c];
    const double mx = *std::max_element(x, x + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      y[j] = std::exp(x[j] - mx);
      z += y[j];
    }
    for (std::size_t j = 0; j < c; ++j) y[j] /= z;
  }
  auto oi = make_impl(logits.shape(), std::move(out));
  Impl ai = impl_of(logits);
  TensorImpl* op = oi.get();
  return finish({ai}, oi, [ai, op, rows, c] {
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = &op->values[r * c];
      const double* g = &op->grad[r * c];
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += g[j] * y[j];
      for (std::size_t j = 0; j < c; ++j) ai->grad[r * c + j] += y[j] * (g[j] - dot);
    }
  });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double x : a.values()) s += x;
  auto oi = make_impl({}, {s});
  Impl ai = impl_of(a);
  TensorImpl* op = oi.get();
  return finish({ai}, oi, [ai, op] {
    const double g = op->grad[0];
    for (auto& gi : ai->grad) gi += g;
  });
}

Tensor l2_norm(const Tensor& a) {
  require_rank(a, 1, "l2_norm");
  double ss = 0.0;
  for (double x : a.values()) ss += x * x;
  auto oi = make_impl({}, {std::sqrt(ss)});
  Impl ai = impl_of(a);
  TensorImpl* op = oi.get();
  return finish({ai}, oi, [ai, op] {
    const double norm = op->values[0];
    if (norm == 0.0) return;
    const double g = op->grad[0];
    for (std::size_t i = 0; i < ai->values.size(); ++i) {
      ai->grad[i] += g * ai->values[i] / norm;
    }
  });
}

Tensor masked_nll(const Tensor& probabilities, std::span<const std::int32_t> labels,
                  std::span<const std::uint8_t> mask) {
  require_rank(probabilities, 2, "masked_nll");
  const std::size_t p = probabilities.rows(), c = probabilities.cols();
  if (labels.size() != p || mask.size() != p) {
    throw DimensionError("masked_nll: " + std::to_string(p) + " rows but " +
                         std::to_string(labels.size()) + " labels and " +
                         std::to_string(mask.size()) + " mask entries");
  }
  std::vector<std::int32_t> picked(p, -1);
  const auto pv = probabilities.values();
  double total = 0.0;
  for (std::size_t j = 0; j < p; ++j) {
    if (!mask[j]) continue;
    const auto y = labels[j];
    if (y < 0 || static_cast<std::size_t>(y) >= c) {
      throw ContractError("masked_nll: label " + std::to_string(y) + " at row " +
                          std::to_string(j) + " outside [0, " + std::to_string(c) + ")");
    }
    picked[j] = y;
    total -= std::log(std::max(pv[j * c + y], kLogFloor));
  }
  auto oi = make_impl({}, {total});
  Impl ai = impl_of(probabilities);
  TensorImpl* op = oi.get();
  return finish({ai}, oi, [ai, op, picked = std::move(picked), c] {
    const double g = op->grad[0];
    for (std::size_t j = 0; j < picked.size(); ++j) {
      if (picked[j] < 0) continue;
      const std::size_t idx = j * c + static_cast<std::size_t>(picked[j]);
      const double prob = ai->values[idx];
      if (prob > kLogFloor) ai->grad[idx] -= g / prob;
    }
  });
}

}  // namespace cag
