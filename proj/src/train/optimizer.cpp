#include "xpl/train/optimizer.hpp"

#include <cmath>

#include "xpl/core/error.hpp"

namespace xpl::train {

void Adam::step(std::span<nn::Param* const> params, double lr, std::span<const double> lr_scale) {
  require(lr_scale.empty() || lr_scale.size() == params.size(), ErrorCode::kInvalidArgument,
          "one learning-rate multiplier per parameter");
  if (m_.empty()) {
    for (const nn::Param* p : params) {
      m_.emplace_back(p->value.shape());
      v_.emplace_back(p->value.shape());
    }
  }
  require(m_.size() == params.size(), ErrorCode::kInvalidState, "optimizer bound to a different parameter list");
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double c1 = 1.0 - std::pow(config_.beta1, t);
  const double c2 = 1.0 - std::pow(config_.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    nn::Param& p = *params[i];
    if (!p.trainable || p.buffer) continue;
    const double rate = lr * (lr_scale.empty() ? 1.0 : lr_scale[i]);
    nn::Tensor& m = m_[i];
    nn::Tensor& v = v_[i];
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double g = p.grad[k];
      m[k] = config_.beta1 * m[k] + (1.0 - config_.beta1) * g;
      v[k] = config_.beta2 * v[k] + (1.0 - config_.beta2) * g * g;
      const double update = rate * (m[k] / c1) / (std::sqrt(v[k] / c2) + config_.eps);
      p.value[k] = static_cast<double>(static_cast<float>(p.value[k] - update));
    }
  }
}

void Adam::restore(std::size_t steps, std::vector<nn::Tensor> m, std::vector<nn::Tensor> v) {
  require(m.size() == v.size(), ErrorCode::kInvalidArgument, "moment lists differ in length");
  steps_ = steps;
  m_ = std::move(m);
  v_ = std::move(v);
}

double clip_grad_norm(std::span<nn::Param* const> params, double max_norm) {
  double sq = 0.0;
  for (const nn::Param* p : params) {
    if (!p->trainable || p->buffer) continue;
    for (double g : p->grad.values()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double f = max_norm / norm;
    for (nn::Param* p : params) {
      if (!p->trainable || p->buffer) continue;
      for (double& g : p->grad.values()) g *= f;
    }
  }
  return norm;
}

}  // namespace xpl::train
