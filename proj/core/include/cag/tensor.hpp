#pragma once

// Dense float64 tensors with tape-based reverse-mode differentiation.
//
// A Tensor is a shared handle: copies alias the same storage, so gradients
// written by Tape::backward are visible through every handle of a parameter.
// Operations record themselves on the thread's active Tape when at least one
// input requires a gradient; with no active tape they only compute values.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace cag {

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);
std::size_t element_count(const Shape& shape);

namespace detail {
struct TensorImpl {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty when no gradient has been populated
  bool requires_grad = false;
};
}  // namespace detail

class Tensor {
 public:
  /// Scalar zero.
  Tensor();

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  /// Row-major matrix from nested rows; all rows must have equal length.
  static Tensor matrix(const std::vector<std::vector<double>>& rows,
                       bool requires_grad = false);
  static Tensor vector(std::vector<double> values, bool requires_grad = false);

  const Shape& shape() const noexcept { return impl_->shape; }
  std::size_t rank() const noexcept { return impl_->shape.size(); }
  std::size_t size() const noexcept { return impl_->values.size(); }
  /// Leading dimension of a rank-2 tensor.
  std::size_t rows() const;
  /// Trailing dimension of a rank-2 tensor.
  std::size_t cols() const;

  std::span<const double> values() const noexcept { return impl_->values; }
  /// Direct write access for initializers and optimizers. Never use on a
  /// tensor that is an input of a live tape node.
  std::span<double> mutable_values() noexcept { return impl_->values; }

  double item() const;
  double at(std::size_t i) const { return impl_->values[i]; }
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const noexcept { return impl_->requires_grad; }
  void set_requires_grad(bool on) noexcept { impl_->requires_grad = on; }

  bool has_grad() const noexcept { return !impl_->grad.empty(); }
  std::span<const double> grad() const noexcept { return impl_->grad; }
  void clear_grad() noexcept { impl_->grad.clear(); }

  /// Same values, fresh storage, no gradient participation.
  Tensor detach() const;

  /// True when both handles refer to one storage object.
  bool same_storage(const Tensor& other) const noexcept {
    return impl_ == other.impl_;
  }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

  std::shared_ptr<detail::TensorImpl> impl_;

  friend class Tape;
  friend struct TensorAccess;
};

/// Records differentiable operations performed on the current thread while it
/// is alive. Tapes nest: constructing one makes it active, destroying it
/// restores the previously active tape.
///
/// `backward` may run once per recording. Calling it again without `reset`
/// throws ContractError rather than silently accumulating gradients.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Populates `grad` on every requires-grad tensor that `loss` depends on
  /// through recorded nodes. Leaf gradients are overwritten, not accumulated.
  void backward(const Tensor& loss);

  /// Drops all recorded nodes and re-arms backward.
  void reset();

  std::size_t node_count() const noexcept { return nodes_.size(); }

  static Tape* active() noexcept;

  using Impl = std::shared_ptr<detail::TensorImpl>;
  using BackwardFn = std::function<void()>;

  /// Internal: append a node. `inputs` must already be on the tape or leaves.
  void record(std::vector<Impl> inputs, Impl output, BackwardFn fn);

 private:
  struct Node {
    std::vector<Impl> inputs;
    Impl output;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  Tape* previous_ = nullptr;
  bool consumed_ = false;
};

/// Disables recording for its lifetime (the active tape becomes none).
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* saved_;
};

// ---------------------------------------------------------------------------
// Operations. Shapes must match exactly; the only broadcast is a one-element
// tensor combined with any tensor. Mismatches throw DimensionError.

/// [m x k] x [k x n] -> [m x n].
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
/// Elementwise product.
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
/// Adds the length-n vector `bias` to every row of the [m x n] matrix `a`.
Tensor add_row_vector(const Tensor& a, const Tensor& bias);

Tensor relu(const Tensor& a);
Tensor leaky_relu(const Tensor& a, double slope);
/// log(1 + exp(x)), evaluated without overflow.
Tensor softplus(const Tensor& a);
/// Softmax over the last axis with max subtraction.
Tensor softmax(const Tensor& logits);

/// Sum of all elements -> scalar.
Tensor sum(const Tensor& a);
/// Euclidean norm of a rank-1 tensor -> scalar. The gradient at the zero
/// vector is defined as zero.
Tensor l2_norm(const Tensor& a);

/// Lower clamp applied to probabilities before taking logs.
inline constexpr double kLogFloor = 1e-12;

/// -sum_j mask[j] * log(max(p[j, label[j]], kLogFloor)) for a [P x C]
/// probability matrix. Unmasked rows contribute exactly zero and their labels
/// are not inspected. Throws ContractError for a masked label outside [0, C).
Tensor masked_nll(const Tensor& probabilities, std::span<const std::int32_t> labels,
                  std::span<const std::uint8_t> mask);

}  // namespace cag
