#include "xpl/nn/attention.hpp"

#include <cmath>

#include "xpl/core/error.hpp"

namespace xpl::nn {

Var scaled_dot_attention(Var q, Var k, Var v, const Mask* mask) {
  const std::size_t width = q.shape().at(2);
  Var logits = scale(bmm_nt(q, k), 1.0 / std::sqrt(static_cast<double>(width)));
  const Mask all(logits.value().size(), 1);
  Var weights = masked_softmax(logits, mask ? *mask : all);
  return bmm(weights, v);
}

Mask repeat_mask_for_heads(const Mask& mask, std::size_t batch, std::size_t heads) {
  require(batch > 0 && mask.size() % batch == 0, ErrorCode::kInvalidArgument, "mask size is not a multiple of batch");
  const std::size_t per = mask.size() / batch;
  Mask out;
  out.reserve(mask.size() * heads);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t h = 0; h < heads; ++h) out.insert(out.end(), mask.begin() + b * per, mask.begin() + (b + 1) * per);
  return out;
}

Var multi_head_attention(const AttentionWeights& w, Var queries, Var keys, Var values, const Mask* mask,
                         std::size_t heads) {
  const std::size_t d = queries.shape().at(2);
  require(heads > 0 && d % heads == 0, ErrorCode::kInvalidArgument, "head count must divide the model width");
  const std::size_t batch = queries.shape().at(0);
  const std::size_t m = queries.shape().at(1), n = keys.shape().at(1);
  Mask expanded;
  if (mask != nullptr) {
    require(mask->size() == batch * m * n, ErrorCode::kInvalidArgument, "attention mask shape mismatch");
    expanded = repeat_mask_for_heads(*mask, batch, heads);
  }
  Var q = split_heads(matmul(queries, w.query), heads);
  Var k = split_heads(matmul(keys, w.key), heads);
  Var v = split_heads(matmul(values, w.value), heads);
  Var heads_out = merge_heads(scaled_dot_attention(q, k, v, mask ? &expanded : nullptr), heads);
  Var out = matmul(heads_out, w.out);
  return w.out_bias ? add_bias(out, *w.out_bias) : out;
}

}  // namespace xpl::nn
