#include "xpl/nn/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "xpl/core/error.hpp"

namespace xpl::nn {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

ConstMapMat as_matrix(const Tensor& t, std::size_t rows, std::size_t cols) {
  return ConstMapMat(t.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
MapMat as_matrix(Tensor& t, std::size_t rows, std::size_t cols) {
  return MapMat(t.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

void expect(bool cond, const std::string& what) { require(cond, ErrorCode::kInvalidArgument, what); }

void expect_rank3(const Tensor& t, const char* op) {
  expect(t.rank() == 3, std::string(op) + " expects a rank-3 tensor, got " + shape_string(t.shape()));
}

void accumulate(Tensor* sink, const Tensor& g) {
  if (sink == nullptr) return;
  for (std::size_t i = 0; i < g.size(); ++i) (*sink)[i] += g[i];
}

template <typename F>
Var unary(Var x, F&& f, std::function<double(double in, double out)> deriv) {
  const Tensor& in = x.value();
  Tensor out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  const std::size_t xi = x.id();
  return x.tape()->record(std::move(out), {x}, [xi, deriv](Tape& t, std::size_t self) {
    Tensor* gx = t.grad_sink(xi);
    if (gx == nullptr) return;
    const Tensor& g = t.grad(self);
    const Tensor& in = t.value(xi);
    const Tensor& out = t.value(self);
    for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * deriv(in[i], out[i]);
  });
}

}  // namespace

Var matmul(Var x, Var w) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  expect(wv.rank() == 2 && xv.rank() >= 1 && xv.cols() == wv.dim(0),
         "matmul shape mismatch " + shape_string(xv.shape()) + " x " + shape_string(wv.shape()));
  const std::size_t rows = xv.rows(), k = wv.dim(0), m = wv.dim(1);
  Shape shape = xv.shape();
  shape.back() = m;
  Tensor out(shape);
  as_matrix(out, rows, m).noalias() = as_matrix(xv, rows, k) * as_matrix(wv, k, m);
  const std::size_t xi = x.id(), wi = w.id();
  return x.tape()->record(std::move(out), {x, w}, [xi, wi, rows, k, m](Tape& t, std::size_t self) {
    const auto g = as_matrix(t.grad(self), rows, m);
    if (Tensor* gx = t.grad_sink(xi)) as_matrix(*gx, rows, k).noalias() += g * as_matrix(t.value(wi), k, m).transpose();
    if (Tensor* gw = t.grad_sink(wi)) as_matrix(*gw, k, m).noalias() += as_matrix(t.value(xi), rows, k).transpose() * g;
  });
}

Var add_bias(Var x, Var b) {
  const Tensor& xv = x.value();
  const Tensor& bv = b.value();
  expect(bv.size() == xv.cols(), "bias length " + std::to_string(bv.size()) + " does not match width " +
                                     std::to_string(xv.cols()));
  Tensor out = xv;
  const std::size_t rows = xv.rows(), cols = xv.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += bv[c];
  }
  const std::size_t xi = x.id(), bi = b.id();
  return x.tape()->record(std::move(out), {x, b}, [xi, bi, rows, cols](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    accumulate(t.grad_sink(xi), g);
    if (Tensor* gb = t.grad_sink(bi)) {
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) (*gb)[c] += g[r * cols + c];
      }
    }
  });
}

Var affine(Var x, Var w, Var b) { return add_bias(matmul(x, w), b); }

Var add(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  expect(av.shape() == bv.shape(), "add shape mismatch " + shape_string(av.shape()) + " vs " + shape_string(bv.shape()));
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const std::size_t ai = a.id(), bi = b.id();
  return a.tape()->record(std::move(out), {a, b}, [ai, bi](Tape& t, std::size_t self) {
    accumulate(t.grad_sink(ai), t.grad(self));
    accumulate(t.grad_sink(bi), t.grad(self));
  });
}

Var scale(Var x, double factor) {
  return unary(x, [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Var relu(Var x) {
  return unary(x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double in, double) { return in > 0.0 ? 1.0 : 0.0; });
}

Var leaky_relu(Var x, double slope) {
  return unary(
      x, [slope](double v) { return v >= 0.0 ? v : slope * v; },
      [slope](double in, double) { return in >= 0.0 ? 1.0 : slope; });
}

Var tanh(Var x) {
  return unary(x, [](double v) { return std::tanh(v); }, [](double, double out) { return 1.0 - out * out; });
}

Var reshape(Var x, Shape shape) {
  Tensor out = x.value();
  out.reshape(std::move(shape));
  const std::size_t xi = x.id();
  return x.tape()->record(std::move(out), {x}, [xi](Tape& t, std::size_t self) {
    accumulate(t.grad_sink(xi), t.grad(self));
  });
}

Var batch_norm(Var x, Var gamma, Var beta, RunningStats stats, bool training, double momentum, double eps) {
  const Tensor& xv = x.value();
  const std::size_t rows = xv.rows(), cols = xv.cols();
  expect(gamma.value().size() == cols && beta.value().size() == cols, "batch_norm parameter width mismatch");
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();

  std::vector<double> mean(cols, 0.0), inv_std(cols, 0.0);
  if (training) {
    require(rows >= 2, ErrorCode::kInvalidState, "batch_norm in training mode needs at least 2 rows");
    std::vector<double> var(cols, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) mean[c] += xv[r * cols + c];
    }
    for (double& m : mean) m /= static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        const double d = xv[r * cols + c] - mean[c];
        var[c] += d * d;
      }
    }
    for (std::size_t c = 0; c < cols; ++c) {
      const double biased = var[c] / static_cast<double>(rows);
      inv_std[c] = 1.0 / std::sqrt(biased + eps);
      if (stats.mean_out != nullptr && stats.var_out != nullptr) {
        const double unbiased = var[c] / static_cast<double>(rows - 1);
        // Running statistics are stored at checkpoint precision.
        Tensor& rm = *stats.mean_out;
        Tensor& rv = *stats.var_out;
        rm[c] = static_cast<float>((1.0 - momentum) * rm[c] + momentum * mean[c]);
        rv[c] = static_cast<float>((1.0 - momentum) * rv[c] + momentum * unbiased);
      }
    }
  } else {
    require(stats.mean != nullptr && stats.var != nullptr, ErrorCode::kInvalidState,
            "batch_norm inference needs running statistics");
    for (std::size_t c = 0; c < cols; ++c) {
      mean[c] = (*stats.mean)[c];
      inv_std[c] = 1.0 / std::sqrt((*stats.var)[c] + eps);
    }
  }

  Tensor xhat(xv.shape());
  Tensor out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t i = r * cols + c;
      xhat[i] = (xv[i] - mean[c]) * inv_std[c];
      out[i] = gv[c] * xhat[i] + bv[c];
    }
  }
  const std::size_t xi = x.id(), gi = gamma.id(), bi = beta.id();
  return x.tape()->record(
      std::move(out), {x, gamma, beta},
      [xi, gi, bi, rows, cols, training, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& gv = t.value(gi);
        if (Tensor* gb = t.grad_sink(bi)) {
          for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i % cols] += g[i];
        }
        if (Tensor* gg = t.grad_sink(gi)) {
          for (std::size_t i = 0; i < g.size(); ++i) (*gg)[i % cols] += g[i] * xhat[i];
        }
        Tensor* gx = t.grad_sink(xi);
        if (gx == nullptr) return;
        if (!training) {
          for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * gv[i % cols] * inv_std[i % cols];
          return;
        }
        std::vector<double> sum_d(cols, 0.0), sum_dx(cols, 0.0);
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double d = g[i] * gv[i % cols];
          sum_d[i % cols] += d;
          sum_dx[i % cols] += d * xhat[i];
        }
        const double n = static_cast<double>(rows);
        for (std::size_t i = 0; i < g.size(); ++i) {
          const std::size_t c = i % cols;
          const double d = g[i] * gv[c];
          (*gx)[i] += inv_std[c] / n * (n * d - sum_d[c] - xhat[i] * sum_dx[c]);
        }
      });
}

Var instance_norm(Var x, Var gamma, Var beta, double eps) {
  const Tensor& xv = x.value();
  expect_rank3(xv, "instance_norm");
  const std::size_t batch = xv.dim(0), nodes = xv.dim(1), cols = xv.dim(2);
  expect(gamma.value().size() == cols && beta.value().size() == cols, "instance_norm parameter width mismatch");
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();

  Tensor xhat(xv.shape());
  Tensor out(xv.shape());
  std::vector<double> inv_std(batch * cols);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < cols; ++c) {
      double mean = 0.0;
      for (std::size_t n = 0; n < nodes; ++n) mean += xv.at(b, n, c);
      mean /= static_cast<double>(nodes);
      double var = 0.0;
      for (std::size_t n = 0; n < nodes; ++n) {
        const double d = xv.at(b, n, c) - mean;
        var += d * d;
      }
      var /= static_cast<double>(nodes);
      const double is = 1.0 / std::sqrt(var + eps);
      inv_std[b * cols + c] = is;
      for (std::size_t n = 0; n < nodes; ++n) {
        xhat.at(b, n, c) = (xv.at(b, n, c) - mean) * is;
        out.at(b, n, c) = gv[c] * xhat.at(b, n, c) + bv[c];
      }
    }
  }
  const std::size_t xi = x.id(), gi = gamma.id(), bi = beta.id();
  return x.tape()->record(
      std::move(out), {x, gamma, beta},
      [xi, gi, bi, batch, nodes, cols, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& gv = t.value(gi);
        if (Tensor* gb = t.grad_sink(bi)) {
          for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i % cols] += g[i];
        }
        if (Tensor* gg = t.grad_sink(gi)) {
          for (std::size_t i = 0; i < g.size(); ++i) (*gg)[i % cols] += g[i] * xhat[i];
        }
        Tensor* gx = t.grad_sink(xi);
        if (gx == nullptr) return;
        const double n = static_cast<double>(nodes);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t c = 0; c < cols; ++c) {
            double sum_d = 0.0, sum_dx = 0.0;
            for (std::size_t k = 0; k < nodes; ++k) {
              const double d = g.at(b, k, c) * gv[c];
              sum_d += d;
              sum_dx += d * xhat.at(b, k, c);
            }
            const double is = inv_std[b * cols + c];
            for (std::size_t k = 0; k < nodes; ++k) {
              const double d = g.at(b, k, c) * gv[c];
              gx->at(b, k, c) += is / n * (n * d - sum_d - xhat.at(b, k, c) * sum_dx);
            }
          }
        }
      });
}

namespace {

// Index permutation shared by split_heads and merge_heads.
struct HeadLayout {
  std::size_t batch, nodes, heads, width;
  std::size_t split_index(std::size_t b, std::size_t n, std::size_t h, std::size_t j) const {
    return ((b * heads + h) * nodes + n) * width + j;
  }
  std::size_t merged_index(std::size_t b, std::size_t n, std::size_t h, std::size_t j) const {
    return (b * nodes + n) * heads * width + h * width + j;
  }
  template <typename F>
  void for_each(F&& f) const {
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t n = 0; n < nodes; ++n)
        for (std::size_t h = 0; h < heads; ++h)
          for (std::size_t j = 0; j < width; ++j) f(merged_index(b, n, h, j), split_index(b, n, h, j));
  }
};

}  // namespace

Var split_heads(Var x, std::size_t heads) {
  const Tensor& xv = x.value();
  expect_rank3(xv, "split_heads");
  expect(heads > 0 && xv.dim(2) % heads == 0, "head count must divide the model width");
  const HeadLayout lay{xv.dim(0), xv.dim(1), heads, xv.dim(2) / heads};
  Tensor out({lay.batch * heads, lay.nodes, lay.width});
  lay.for_each([&](std::size_t m, std::size_t s) { out[s] = xv[m]; });
  const std::size_t xi = x.id();
  return x.tape()->record(std::move(out), {x}, [xi, lay](Tape& t, std::size_t self) {
    Tensor* gx = t.grad_sink(xi);
    if (gx == nullptr) return;
    const Tensor& g = t.grad(self);
    lay.for_each([&](std::size_t m, std::size_t s) { (*gx)[m] += g[s]; });
  });
}

Var merge_heads(Var x, std::size_t heads) {
  const Tensor& xv = x.value();
  expect_rank3(xv, "merge_heads");
  expect(heads > 0 && xv.dim(0) % heads == 0, "leading axis must be a multiple of the head count");
  const HeadLayout lay{xv.dim(0) / heads, xv.dim(1), heads, xv.dim(2)};
  Tensor out({lay.batch, lay.nodes, heads * lay.width});
  lay.for_each([&](std::size_t m, std::size_t s) { out[m] = xv[s]; });
  const std::size_t xi = x.id();
  return x.tape()->record(std::move(out), {x}, [xi, lay](Tape& t, std::size_t self) {
    Tensor* gx = t.grad_sink(xi);
    if (gx == nullptr) return;
    const Tensor& g = t.grad(self);
    lay.for_each([&](std::size_t m, std::size_t s) { (*gx)[s] += g[m]; });
  });
}

Var bmm(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  expect_rank3(av, "bmm");
  expect_rank3(bv, "bmm");
  expect(av.dim(0) == bv.dim(0) && av.dim(2) == bv.dim(1),
         "bmm shape mismatch " + shape_string(av.shape()) + " x " + shape_string(bv.shape()));
  const std::size_t groups = av.dim(0), m = av.dim(1), k = av.dim(2), p = bv.dim(2);
  Tensor out({groups, m, p});
  for (std::size_t g = 0; g < groups; ++g) {
    MapMat(out.data() + g * m * p, m, p).noalias() =
        ConstMapMat(av.data() + g * m * k, m, k) * ConstMapMat(bv.data() + g * k * p, k, p);
  }
  const std::size_t ai = a.id(), bi = b.id();
  return a.tape()->record(std::move(out), {a, b}, [ai, bi, groups, m, k, p](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor* ga = t.grad_sink(ai);
    Tensor* gb = t.grad_sink(bi);
    const Tensor& av = t.value(ai);
    const Tensor& bv = t.value(bi);
    for (std::size_t q = 0; q < groups; ++q) {
      const ConstMapMat gq(g.data() + q * m * p, m, p);
      if (ga) MapMat(ga->data() + q * m * k, m, k).noalias() += gq * ConstMapMat(bv.data() + q * k * p, k, p).transpose();
      if (gb) MapMat(gb->data() + q * k * p, k, p).noalias() += ConstMapMat(av.data() + q * m * k, m, k).transpose() * gq;
    }
  });
}

Var bmm_nt(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  expect_rank3(av, "bmm_nt");
  expect_rank3(bv, "bmm_nt");
  expect(av.dim(0) == bv.dim(0) && av.dim(2) == bv.dim(2),
         "bmm_nt shape mismatch " + shape_string(av.shape()) + " x " + shape_string(bv.shape()));
  const std::size_t groups = av.dim(0), m = av.dim(1), k = av.dim(2), p = bv.dim(1);
  Tensor out({groups, m, p});
  for (std::size_t g = 0; g < groups; ++g) {
    MapMat(out.data() + g * m * p, m, p).noalias() =
        ConstMapMat(av.data() + g * m * k, m, k) * ConstMapMat(bv.data() + g * p * k, p, k).transpose();
  }
  const std::size_t ai = a.id(), bi = b.id();
  return a.tape()->record(std::move(out), {a, b}, [ai, bi, groups, m, k, p](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor* ga = t.grad_sink(ai);
    Tensor* gb = t.grad_sink(bi);
    const Tensor& av = t.value(ai);
    const Tensor& bv = t.value(bi);
    for (std::size_t q = 0; q < groups; ++q) {
      const ConstMapMat gq(g.data() + q * m * p, m, p);
      if (ga) MapMat(ga->data() + q * m * k, m, k).noalias() += gq * ConstMapMat(bv.data() + q * p * k, p, k);
      if (gb) MapMat(gb->data() + q * p * k, p, k).noalias() += gq.transpose() * ConstMapMat(av.data() + q * m * k, m, k);
    }
  });
}

namespace {

// Writes the masked softmax of every row of `x` into `out`.
void softmax_rows(const Tensor& x, const Mask& mask, Tensor& out) {
  const std::size_t rows = x.rows(), cols = x.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < cols; ++c) {
      if (mask[r * cols + c]) top = std::max(top, x[r * cols + c]);
    }
    require(top != -std::numeric_limits<double>::infinity(), ErrorCode::kInvalidState,
            "softmax row " + std::to_string(r) + " has every entry masked");
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t i = r * cols + c;
      out[i] = mask[i] ? std::exp(x[i] - top) : 0.0;
      total += out[i];
    }
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] /= total;
  }
}

}  // namespace

Var masked_softmax(Var logits, const Mask& mask) {
  const Tensor& x = logits.value();
  expect(mask.size() == x.size(), "mask size " + std::to_string(mask.size()) + " does not match logits " +
                                      shape_string(x.shape()));
  Tensor out(x.shape());
  softmax_rows(x, mask, out);
  const std::size_t xi = logits.id(), rows = x.rows(), cols = x.cols();
  return logits.tape()->record(std::move(out), {logits}, [xi, rows, cols](Tape& t, std::size_t self) {
    Tensor* gx = t.grad_sink(xi);
    if (gx == nullptr) return;
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += g[r * cols + c] * y[r * cols + c];
      for (std::size_t c = 0; c < cols; ++c) {
        const std::size_t i = r * cols + c;
        (*gx)[i] += y[i] * (g[i] - dot);
      }
    }
  });
}

Var log_softmax_pick(Var logits, const Mask& mask, std::span<const std::size_t> pick) {
  const Tensor& x = logits.value();
  const std::size_t rows = x.rows(), cols = x.cols();
  expect(mask.size() == x.size(), "mask size does not match logits");
  expect(pick.size() == rows, "one pick per row is required");
  Tensor probs(x.shape());
  softmax_rows(x, mask, probs);
  Tensor out({rows});
  std::vector<std::size_t> picks(pick.begin(), pick.end());
  for (std::size_t r = 0; r < rows; ++r) {
    expect(picks[r] < cols, "pick index out of range");
    require(mask[r * cols + picks[r]] != 0, ErrorCode::kInvalidState, "picked a masked entry");
    out[r] = std::log(probs[r * cols + picks[r]]);
  }
  const std::size_t xi = logits.id();
  return logits.tape()->record(
      std::move(out), {logits},
      [xi, rows, cols, probs = std::move(probs), picks = std::move(picks)](Tape& t, std::size_t self) {
        Tensor* gx = t.grad_sink(xi);
        if (gx == nullptr) return;
        const Tensor& g = t.grad(self);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < cols; ++c) {
            const std::size_t i = r * cols + c;
            (*gx)[i] += g[r] * ((c == picks[r] ? 1.0 : 0.0) - probs[i]);
          }
        }
      });
}

Var mean_nodes(Var x) {
  const Tensor& xv = x.value();
  expect_rank3(xv, "mean_nodes");
  const std::size_t batch = xv.dim(0), nodes = xv.dim(1), cols = xv.dim(2);
  Tensor out({batch, cols});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t n = 0; n < nodes; ++n)
      for (std::size_t c = 0; c < cols; ++c) out.at(b, c) += xv.at(b, n, c);
  for (double& v : out.storage()) v /= static_cast<double>(nodes);
  const std::size_t xi = x.id();
  return x.tape()->record(std::move(out), {x}, [xi, batch, nodes, cols](Tape& t, std::size_t self) {
    Tensor* gx = t.grad_sink(xi);
    if (gx == nullptr) return;
    const Tensor& g = t.grad(self);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t n = 0; n < nodes; ++n)
        for (std::size_t c = 0; c < cols; ++c) gx->at(b, n, c) += g.at(b, c) / static_cast<double>(nodes);
  });
}

Var gather_nodes(Var x, std::span<const std::size_t> index) {
  const Tensor& xv = x.value();
  expect_rank3(xv, "gather_nodes");
  const std::size_t batch = xv.dim(0), nodes = xv.dim(1), cols = xv.dim(2);
  expect(index.size() == batch, "gather_nodes needs one index per batch entry");
  std::vector<std::size_t> idx(index.begin(), index.end());
  Tensor out({batch, cols});
  for (std::size_t b = 0; b < batch; ++b) {
    expect(idx[b] < nodes, "gather_nodes index out of range");
    for (std::size_t c = 0; c < cols; ++c) out.at(b, c) = xv.at(b, idx[b], c);
  }
  const std::size_t xi = x.id();
  return x.tape()->record(std::move(out), {x}, [xi, batch, cols, idx = std::move(idx)](Tape& t, std::size_t self) {
    Tensor* gx = t.grad_sink(xi);
    if (gx == nullptr) return;
    const Tensor& g = t.grad(self);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t c = 0; c < cols; ++c) gx->at(b, idx[b], c) += g.at(b, c);
  });
}

Var concat_nodes(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  expect_rank3(av, "concat_nodes");
  expect_rank3(bv, "concat_nodes");
  expect(av.dim(0) == bv.dim(0) && av.dim(2) == bv.dim(2), "concat_nodes shape mismatch");
  const std::size_t batch = av.dim(0), na = av.dim(1), nb = bv.dim(1), cols = av.dim(2);
  Tensor out({batch, na + nb, cols});
  for (std::size_t q = 0; q < batch; ++q) {
    std::copy_n(av.data() + q * na * cols, na * cols, out.data() + q * (na + nb) * cols);
    std::copy_n(bv.data() + q * nb * cols, nb * cols, out.data() + (q * (na + nb) + na) * cols);
  }
  const std::size_t ai = a.id(), bi = b.id();
  return a.tape()->record(std::move(out), {a, b}, [ai, bi, batch, na, nb, cols](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor* ga = t.grad_sink(ai);
    Tensor* gb = t.grad_sink(bi);
    for (std::size_t q = 0; q < batch; ++q) {
      const double* src = g.data() + q * (na + nb) * cols;
      if (ga) for (std::size_t i = 0; i < na * cols; ++i) ga->data()[q * na * cols + i] += src[i];
      if (gb) for (std::size_t i = 0; i < nb * cols; ++i) gb->data()[q * nb * cols + i] += src[na * cols + i];
    }
  });
}

Var slice_nodes(Var x, std::size_t start, std::size_t count) {
  const Tensor& xv = x.value();
  expect_rank3(xv, "slice_nodes");
  const std::size_t batch = xv.dim(0), nodes = xv.dim(1), cols = xv.dim(2);
  expect(start + count <= nodes && count > 0, "slice_nodes range out of bounds");
  Tensor out({batch, count, cols});
  for (std::size_t q = 0; q < batch; ++q) {
    std::copy_n(xv.data() + (q * nodes + start) * cols, count * cols, out.data() + q * count * cols);
  }
  const std::size_t xi = x.id();
  return x.tape()->record(std::move(out), {x}, [xi, batch, nodes, cols, start, count](Tape& t, std::size_t self) {
    Tensor* gx = t.grad_sink(xi);
    if (gx == nullptr) return;
    const Tensor& g = t.grad(self);
    for (std::size_t q = 0; q < batch; ++q)
      for (std::size_t i = 0; i < count * cols; ++i) gx->data()[(q * nodes + start) * cols + i] += g[q * count * cols + i];
  });
}

Var repeat_batch(Var x, std::size_t times) {
  const Tensor& xv = x.value();
  expect(xv.rank() >= 1 && times >= 1, "repeat_batch needs a leading axis and times >= 1");
  const std::size_t batch = xv.dim(0), slice = xv.size() / std::max<std::size_t>(batch, 1);
  Shape shape = xv.shape();
  shape[0] *= times;
  Tensor out(shape);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t k = 0; k < times; ++k) std::copy_n(xv.data() + b * slice, slice, out.data() + (b * times + k) * slice);
  const std::size_t xi = x.id();
  return x.tape()->record(std::move(out), {x}, [xi, batch, slice, times](Tape& t, std::size_t self) {
    Tensor* gx = t.grad_sink(xi);
    if (gx == nullptr) return;
    const Tensor& g = t.grad(self);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t k = 0; k < times; ++k)
        for (std::size_t i = 0; i < slice; ++i) gx->data()[b * slice + i] += g[(b * times + k) * slice + i];
  });
}

Var sum(Var x) {
  const Tensor& xv = x.value();
  double total = 0.0;
  for (double v : xv.values()) total += v;
  const std::size_t xi = x.id();
  return x.tape()->record(Tensor::scalar(total), {x}, [xi](Tape& t, std::size_t self) {
    Tensor* gx = t.grad_sink(xi);
    if (gx == nullptr) return;
    const double g = t.grad(self)[0];
    for (double& v : gx->storage()) v += g;
  });
}

Var weighted_sum(Var x, std::span<const double> weights) {
  const Tensor& xv = x.value();
  expect(weights.size() == xv.size(), "weighted_sum needs one weight per entry");
  std::vector<double> w(weights.begin(), weights.end());
  double total = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) total += w[i] * xv[i];
  const std::size_t xi = x.id();
  return x.tape()->record(Tensor::scalar(total), {x}, [xi, w = std::move(w)](Tape& t, std::size_t self) {
    Tensor* gx = t.grad_sink(xi);
    if (gx == nullptr) return;
    const double g = t.grad(self)[0];
    for (std::size_t i = 0; i < w.size(); ++i) (*gx)[i] += g * w[i];
  });
}

Var block_low_rank(Var a, Var b, BlockLayout layout) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  expect_rank3(av, "block_low_rank");
  expect_rank3(bv, "block_low_rank");
  expect(av.dim(0) == bv.dim(0) && av.dim(2) == bv.dim(1), "block_low_rank factor shapes do not chain");
  const std::size_t blocks = av.dim(0), in = av.dim(1), rank = av.dim(2), out_w = bv.dim(2);
  const bool cols_layout = layout == BlockLayout::kColumns;
  const std::size_t total_rows = cols_layout ? in : blocks * in;
  const std::size_t total_cols = cols_layout ? blocks * out_w : out_w;
  Tensor out({total_rows, total_cols});
  auto block = [=](Tensor& m, std::size_t h) {
    const std::size_t r0 = cols_layout ? 0 : h * in;
    const std::size_t c0 = cols_layout ? h * out_w : 0;
    return as_matrix(m, total_rows, total_cols).block(r0, c0, in, out_w);
  };
  for (std::size_t h = 0; h < blocks; ++h) {
    block(out, h).noalias() =
        ConstMapMat(av.data() + h * in * rank, in, rank) * ConstMapMat(bv.data() + h * rank * out_w, rank, out_w);
  }
  const std::size_t ai = a.id(), bi = b.id();
  return a.tape()->record(
      std::move(out), {a, b}, [ai, bi, blocks, in, rank, out_w, total_rows, total_cols, cols_layout](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        Tensor* ga = t.grad_sink(ai);
        Tensor* gb = t.grad_sink(bi);
        const Tensor& av = t.value(ai);
        const Tensor& bv = t.value(bi);
        for (std::size_t h = 0; h < blocks; ++h) {
          const std::size_t r0 = cols_layout ? 0 : h * in;
          const std::size_t c0 = cols_layout ? h * out_w : 0;
          const auto gh = as_matrix(g, total_rows, total_cols).block(r0, c0, in, out_w);
          if (ga) MapMat(ga->data() + h * in * rank, in, rank).noalias() += gh * ConstMapMat(bv.data() + h * rank * out_w, rank, out_w).transpose();
          if (gb) MapMat(gb->data() + h * rank * out_w, rank, out_w).noalias() += ConstMapMat(av.data() + h * in * rank, in, rank).transpose() * gh;
        }
      });
}

}  // namespace xpl::nn
