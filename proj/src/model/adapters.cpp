#include "xpl/model/adapters.hpp"

#include "xpl/core/error.hpp"
#include "xpl/nn/attention.hpp"

namespace xpl::model {

nn::Var inside_forward(Forward& fwd, const InsideRef& adapter, nn::Var h) {
  const std::size_t d = fwd.model().param(adapter.down.weight).value.dim(0);
  require(h.value().cols() == d, ErrorCode::kInvalidArgument, "inside adapter width mismatch");
  return fwd.affine(adapter.up, nn::leaky_relu(fwd.affine(adapter.down, h)));
}

namespace {

// Separate maps for the depot row (node 0) and the customer rows.
nn::Var split_affine(Forward& fwd, const AffineRef& customers, const std::optional<AffineRef>& depot, nn::Var x) {
  if (!depot) return fwd.affine(customers, x);
  const std::size_t n = x.value().dim(1);
  nn::Var head = fwd.affine(*depot, nn::slice_nodes(x, 0, 1));
  nn::Var tail = fwd.affine(customers, nn::slice_nodes(x, 1, n - 1));
  return nn::concat_nodes(head, tail);
}

}  // namespace

nn::Var side_forward(Forward& fwd, const SideRef& adapter, nn::Var h0, std::size_t batch) {
  const bool batch_norm = fwd.model().config().profile == Profile::kAm;
  require(!(fwd.training() && batch_norm && batch < 2), ErrorCode::kInvalidState,
          "side adapter training needs a batch of at least 2 instances");
  const std::size_t heads = fwd.model().heads();
  const EncoderLayerRef& blk = adapter.block;
  nn::AttentionWeights w{fwd.param(blk.attention.query), fwd.param(blk.attention.key),
                         fwd.param(blk.attention.value), fwd.param(blk.attention.out), std::nullopt};
  if (blk.attention.out_bias) w.out_bias = fwd.param(*blk.attention.out_bias);
  nn::Var h = fwd.norm(blk.norm1, nn::add(h0, nn::multi_head_attention(w, h0, h0, h0, nullptr, heads)));
  nn::Var f = fwd.affine(blk.ff_out, nn::relu(fwd.affine(blk.ff_in, h)));
  h = fwd.norm(blk.norm2, nn::add(h, f));
  nn::Var s = fwd.norm(adapter.norm0, nn::leaky_relu(split_affine(fwd, adapter.stage0, adapter.depot_stage0, h)));
  return fwd.norm(adapter.norm1, nn::leaky_relu(split_affine(fwd, adapter.stage1, adapter.depot_stage1, s)));
}

nn::Var side_combine(nn::Var encoder_out, nn::Var correction) { return nn::add(encoder_out, correction); }

nn::Var lora_weight(Forward& fwd, nn::Var frozen, const LoraRef& adapter) {
  nn::Var delta = nn::block_low_rank(fwd.param(adapter.down), fwd.param(adapter.up), adapter.layout);
  require(delta.shape() == frozen.shape(), ErrorCode::kInvalidArgument, "low-rank correction shape mismatch");
  return nn::add(frozen, delta);
}

nn::Var lora_forward(nn::Var frozen, nn::Var down, nn::Var up, nn::Var h) {
  const nn::Shape& w = frozen.shape();
  require(w.size() == 2 && down.shape().size() == 2 && up.shape().size() == 2, ErrorCode::kInvalidArgument,
          "low-rank factors must be matrices");
  require(down.shape()[0] == w[0] && up.shape()[1] == w[1] && down.shape()[1] == up.shape()[0],
          ErrorCode::kInvalidArgument, "low-rank factor shapes do not match the frozen matrix");
  return nn::add(nn::matmul(h, frozen), nn::matmul(nn::matmul(h, down), up));
}

}  // namespace xpl::model
