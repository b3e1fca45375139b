#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "xpl/nn/tape.hpp"

namespace xpl::nn {

// 1 marks an admissible position, 0 a masked one.
using Mask = std::vector<std::uint8_t>;

inline constexpr double kLeakySlope = 0.01;

// x (..., k) times w (k, m) -> (..., m).
Var matmul(Var x, Var w);
// x·w + b with b broadcast over all leading axes.
Var affine(Var x, Var w, Var b);
Var add(Var a, Var b);
Var add_bias(Var x, Var b);
Var scale(Var x, double factor);
Var relu(Var x);
Var leaky_relu(Var x, double slope = kLeakySlope);
Var tanh(Var x);
Var reshape(Var x, Shape shape);

// Running statistics consulted in inference mode. In training mode the
// batch statistics are blended into `*_out` with the given momentum when
// those are set.
struct RunningStats {
  const Tensor* mean = nullptr;
  const Tensor* var = nullptr;
  Tensor* mean_out = nullptr;
  Tensor* var_out = nullptr;
};

// Normalizes every feature (last axis) over all rows.
Var batch_norm(Var x, Var gamma, Var beta, RunningStats stats, bool training, double momentum = 0.1,
               double eps = 1e-5);
// Normalizes every feature over the node axis of each instance: x (B, N, C).
Var instance_norm(Var x, Var gamma, Var beta, double eps = 1e-5);

// (B, N, H*k) <-> (B*H, N, k)
Var split_heads(Var x, std::size_t heads);
Var merge_heads(Var x, std::size_t heads);
// (G, M, K)·(G, K, P) and (G, M, K)·(G, P, K)^T
Var bmm(Var a, Var b);
Var bmm_nt(Var a, Var b);

// Softmax over the last axis restricted to unmasked entries. Masked entries
// are exactly zero. A row with every entry masked is an invalid state.
Var masked_softmax(Var logits, const Mask& mask);
// Log-probability of entry pick[r] in every row r under masked softmax.
Var log_softmax_pick(Var logits, const Mask& mask, std::span<const std::size_t> pick);

// Node-axis helpers on (B, N, C) tensors.
Var mean_nodes(Var x);
Var gather_nodes(Var x, std::span<const std::size_t> index);
Var concat_nodes(Var a, Var b);
Var slice_nodes(Var x, std::size_t start, std::size_t count);
// Repeats every leading-axis slice `times` times consecutively.
Var repeat_batch(Var x, std::size_t times);

Var sum(Var x);
Var weighted_sum(Var x, std::span<const double> weights);

// Block low-rank matrix: blocks A_h (in_h, r) and B_h (r, out_h) stacked as
// a (H, in_h, r) and b (H, r, out_h). With kColumns the products A_h·B_h
// fill consecutive column blocks of an (in_h, H*out_h) matrix; with kRows
// they fill consecutive row blocks of an (H*in_h, out_h) matrix.
enum class BlockLayout : std::uint8_t { kColumns, kRows };
Var block_low_rank(Var a, Var b, BlockLayout layout);

}  // namespace xpl::nn
