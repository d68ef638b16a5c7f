#pragma once

#include <string>

#include "priorfill/numerics/ops.hpp"
#include "priorfill/numerics/params.hpp"

namespace priorfill {

/// Pre-norm ViT block: x + attn(LN(x)), then x + mlp(LN(x)).
struct TransformerBlock {
    int64_t dim = 0, heads = 0;
    Tensor ln1_g, ln1_b, qkv_w, qkv_b, proj_w, proj_b;
    Tensor ln2_g, ln2_b, fc1_w, fc1_b, fc2_w, fc2_b;

    static TransformerBlock create(ParamSet& ps, const std::string& prefix, int64_t dim,
                                   int64_t heads, int64_t mlp_ratio, Rng& rng);
};

struct BlockOutput {
    Tensor out;     // [B, N, dim]
    Tensor logits;  // [B, heads, N, N] scaled QK^T, detached; only when recorded
    Tensor attn;    // [B, N, N] softmax averaged over heads, detached; only when recorded
};

BlockOutput block_forward(const TransformerBlock& blk, const Tensor& x, bool record = false);

/// Fixed 2D sine-cosine table [gh*gw, dim]; the first half of the channels
/// encodes the column, the second half the row. dim must be divisible by 4.
Tensor sincos_pos_embed_2d(int64_t dim, int64_t gh, int64_t gw, DType dt = default_dtype());

}  // namespace priorfill
