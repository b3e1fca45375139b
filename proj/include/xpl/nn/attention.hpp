#pragma once

#include <cstddef>
#include <optional>

#include "xpl/nn/ops.hpp"

namespace xpl::nn {

struct AttentionWeights {
  Var query;  // (d, d), head h owns columns [h*k, (h+1)*k)
  Var key;
  Var value;
  Var out;    // (d, d), head h owns rows [h*k, (h+1)*k)
  std::optional<Var> out_bias;
};

// Scaled dot-product attention on head-split tensors q (G, M, k),
// k (G, N, k), v (G, N, k). `mask` (G*M*N entries) may be null.
Var scaled_dot_attention(Var q, Var k, Var v, const Mask* mask);

// Repeats a per-instance mask (B*M*N) for every head: (B*H*M*N).
Mask repeat_mask_for_heads(const Mask& mask, std::size_t batch, std::size_t heads);

// queries (B, M, d); keys and values (B, N, d); mask (B*M*N) or null.
Var multi_head_attention(const AttentionWeights& w, Var queries, Var keys, Var values, const Mask* mask,
                         std::size_t heads);

}  // namespace xpl::nn
