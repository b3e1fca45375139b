#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "xpl/nn/tensor.hpp"

namespace xpl::train {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adaptive moment estimation. Moments are kept per position in the
// parameter list, which must be the same list on every call. Updated
// values are rounded to float so parameters stay checkpoint-exact.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  // Frozen params and buffers are skipped entirely. `lr_scale`, when
  // nonempty, holds one multiplier per param.
  void step(std::span<nn::Param* const> params, double lr, std::span<const double> lr_scale = {});

  std::size_t steps() const { return steps_; }
  const std::vector<nn::Tensor>& first_moments() const { return m_; }
  const std::vector<nn::Tensor>& second_moments() const { return v_; }
  void restore(std::size_t steps, std::vector<nn::Tensor> m, std::vector<nn::Tensor> v);

 private:
  AdamConfig config_;
  std::size_t steps_ = 0;
  std::vector<nn::Tensor> m_;
  std::vector<nn::Tensor> v_;
};

// Global L2 norm of the trainable gradients before clipping; gradients are
// rescaled in place when it exceeds max_norm.
double clip_grad_norm(std::span<nn::Param* const> params, double max_norm);

}  // namespace xpl::train
