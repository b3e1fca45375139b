#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "xpl/nn/tape.hpp"

// Central-difference gradient check. `loss` records a forward pass on the
// given tape and returns the scalar loss. Returns the worst relative error
// over every entry of every listed parameter. Entries below `floor` in
// magnitude are compared against `floor`, which absorbs the round-off of
// the differences when the true gradient is exactly zero.
inline double max_grad_error(const std::vector<xpl::nn::Param*>& params,
                             const std::function<xpl::nn::Var(xpl::nn::Tape&)>& loss, double step = 1e-5,
                             double floor = 1e-6) {
  for (auto* p : params) p->zero_grad();
  {
    xpl::nn::Tape tape;
    tape.backward(loss(tape));
  }
  auto eval = [&] {
    xpl::nn::Tape tape(false);
    return loss(tape).value()[0];
  };
  double worst = 0.0;
  for (auto* p : params) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double keep = p->value[i];
      p->value[i] = keep + step;
      const double up = eval();
      p->value[i] = keep - step;
      const double down = eval();
      p->value[i] = keep;
      const double fd = (up - down) / (2 * step);
      const double an = p->grad[i];
      const double err = std::abs(fd - an) / std::max({floor, std::abs(fd), std::abs(an)});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

inline xpl::nn::Param make_param(const char* name, xpl::nn::Shape shape, unsigned seed, double lo = -1,
                                 double hi = 1) {
  xpl::nn::Param p;
  p.name = name;
  p.value = xpl::nn::Tensor(shape);
  p.grad = xpl::nn::Tensor(shape);
  unsigned s = seed * 2654435761u + 1;
  for (double& v : p.value.values()) {
    s = s * 1664525u + 1013904223u;
    v = lo + (hi - lo) * (s >> 8) / double(1u << 24);
  }
  return p;
}
