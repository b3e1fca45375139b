#pragma once

#include "xpl/model/policy.hpp"
#include "xpl/nn/ops.hpp"

namespace xpl::model {

// Bottleneck adapter on every row of h (..., d): up(LeakyReLU(down(h))).
nn::Var inside_forward(Forward& fwd, const InsideRef& adapter, nn::Var h);

// Correction computed once from the initial embeddings h0 (B, N, d): an
// encoder-style attention + feed-forward block followed by two
// norm(LeakyReLU(affine)) stages. A training pass with batch norm needs
// at least two instances.
nn::Var side_forward(Forward& fwd, const SideRef& adapter, nn::Var h0, std::size_t batch);
nn::Var side_combine(nn::Var encoder_out, nn::Var correction);

// Effective weight of a low-rank adapted matrix: W + blocks(A·B).
nn::Var lora_weight(Forward& fwd, nn::Var frozen, const LoraRef& adapter);

// y = h·W + (h·A)·B for a plain matrix W (in, out), A (in, r), B (r, out).
nn::Var lora_forward(nn::Var frozen, nn::Var down, nn::Var up, nn::Var h);

}  // namespace xpl::model
