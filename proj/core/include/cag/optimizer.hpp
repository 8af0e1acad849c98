#pragma once

#include <cstdint>
#include <vector>

#include "cag/tensor.hpp"

namespace cag {

/// base_lr * (1 - iter / max_iter)^power. Requires 0 <= iter <= max_iter and
/// max_iter > 0 (ContractError otherwise).
double poly_lr(std::uint64_t iter, std::uint64_t max_iter, double base_lr, double power);

/// Heavy-ball SGD with L2 weight decay folded into the gradient:
///
///   g   = grad + weight_decay * param
///   buf = momentum * buf + g
///   param -= lr * buf
///
/// Parameters without a populated gradient are skipped. Gradients are cleared
/// after each step.
class Sgd {
 public:
  struct Options {
    double momentum = 0.9;
    double weight_decay = 1e-4;
  };

  Sgd(std::vector<Tensor> params, Options options);

  void step(double lr);

  const std::vector<std::vector<double>>& momentum_buffers() const noexcept { return buffers_; }
  /// Restores buffers captured by momentum_buffers(); sizes must match.
  void set_momentum_buffers(std::vector<std::vector<double>> buffers);

 private:
  std::vector<Tensor> params_;
  Options options_;
  std::vector<std::vector<double>> buffers_;
};

}  // namespace cag
