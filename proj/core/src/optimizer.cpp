#include "cag/optimizer.hpp"

#include <cmath>
#include <string>

#include "cag/errors.hpp"

namespace cag {

double poly_lr(std::uint64_t iter, std::uint64_t max_iter, double base_lr, double power) {
  if (max_iter == 0) throw ContractError("poly_lr: max_iter must be positive");
  if (iter > max_iter) {
    throw ContractError("poly_lr: iteration " + std::to_string(iter) + " exceeds max_iter " +
                        std::to_string(max_iter));
  }
  const double progress = static_cast<double>(iter) / static_cast<double>(max_iter);
  return base_lr * std::pow(1.0 - progress, power);
}

Sgd::Sgd(std::vector<Tensor> params, Options options)
    : params_(std::move(params)), options_(options) {
  buffers_.reserve(params_.size());
  for (const auto& p : params_) buffers_.emplace_back(p.size(), 0.0);
}

void Sgd::step(double lr) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    if (!p.has_grad()) continue;
    const auto grad = p.grad();
    auto values = p.mutable_values();
    auto& buf = buffers_[i];
    for (std::size_t k = 0; k < values.size(); ++k) {
      const double g = grad[k] + options_.weight_decay * values[k];
      buf[k] = options_.momentum * buf[k] + g;
      values[k] -= lr * buf[k];
    }
    p.clear_grad();
  }
}

void Sgd::set_momentum_buffers(std::vector<std::vector<double>> buffers) {
  if (buffers.size() != params_.size()) {
    throw DimensionError("momentum buffer count differs from parameter count");
  }
  for (std::size_t i = 0; i < buffers.size(); ++i) {
    if (buffers[i].size() != params_[i].size()) {
      throw DimensionError("momentum buffer " + std::to_string(i) + " has the wrong size");
    }
  }
  buffers_ = std::move(buffers);
}

}  // namespace cag
