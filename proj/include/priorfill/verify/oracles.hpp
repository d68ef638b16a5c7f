#pragma once

#include <vector>

#include "priorfill/mae/mae.hpp"

namespace priorfill {

/// Explicit-loop prior attention for one image [1,C,H,W]: per decoder layer
/// QK^T / sqrt(head_dim) with masked keys at -inf, softmax, mean over heads,
/// then mean over the used layers. Row-major [T*T].
std::vector<double> prior_attention_oracle(const MaeModel& model, const Tensor& img, const TokenMask& mask);

struct ContextualOracle {
    std::vector<double> weights;  // [T*T]
    std::vector<double> output;   // [c*fh*fw]
};

/// Explicit-loop contextual aggregation for one feature map [1,c,fh,fw]:
/// cosine similarity between token cells, softmax over unmasked keys for
/// masked queries, feats + beta * weighted sum of unmasked cells.
ContextualOracle contextual_oracle(const Tensor& feats, const TokenMask& mask, double beta);

}  // namespace priorfill
