#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "priorfill/numerics/rng.hpp"
#include "priorfill/numerics/tensor.hpp"

namespace priorfill {

/// Pixel mask, 1 = masked.
struct MaskMap {
    int64_t h = 0, w = 0;
    std::vector<uint8_t> bits;

    MaskMap() = default;
    MaskMap(int64_t h_, int64_t w_) : h(h_), w(w_), bits(static_cast<size_t>(h_ * w_), 0) {}

    uint8_t at(int64_t y, int64_t x) const { return bits[static_cast<size_t>(y * w + x)]; }
    void set(int64_t y, int64_t x, uint8_t v = 1) { bits[static_cast<size_t>(y * w + x)] = v; }
    int64_t count() const;
    double ratio() const;
    bool operator==(const MaskMap&) const = default;
};

/// Patch-token mask, 1 = masked token. Row-major over (gh, gw).
struct TokenMask {
    int64_t gh = 0, gw = 0;
    std::vector<uint8_t> bits;

    TokenMask() = default;
    TokenMask(int64_t gh_, int64_t gw_) : gh(gh_), gw(gw_), bits(static_cast<size_t>(gh_ * gw_), 0) {}

    int64_t tokens() const { return gh * gw; }
    bool masked(int64_t t) const { return bits[static_cast<size_t>(t)] != 0; }
    int64_t count() const;
    std::vector<int64_t> masked_indices() const;
    std::vector<int64_t> unmasked_indices() const;
    bool operator==(const TokenMask&) const = default;
};

enum class MaskFamily { irregular, polygon, combined };

const char* mask_family_name(MaskFamily f);

struct TrainingMask {
    MaskMap mask;
    MaskFamily family;
};

/// Random-walk brush strokes painted until the masked ratio reaches the target.
MaskMap gen_irregular(Rng& rng, int64_t h, int64_t w, double target_ratio);

/// One convex polygon (5-12 vertices on a random ellipse of about `area`
/// pixels) painted into `m`.
void paint_convex_polygon(Rng& rng, MaskMap& m, double area);

/// Random convex polygons unioned until the masked ratio reaches the target.
MaskMap gen_polygon(Rng& rng, int64_t h, int64_t w, double target_ratio);

/// One family at a ratio in [0.10, 0.50] with probability 0.8; both unioned otherwise.
TrainingMask gen_acr_training_mask(Rng& rng, int64_t h, int64_t w);

/// Max-pool enlargement: a token is masked iff any of its pixels is.
TokenMask downsample_to_tokens(const MaskMap& m, int64_t patch);

/// Pixel view of a token mask.
MaskMap upsample_tokens(const TokenMask& t, int64_t patch);

/// Continuous mask enlarged to tokens, then padded or trimmed to exactly
/// round(0.75 * gh * gw) masked tokens.
TokenMask gen_mae_pretrain_mask(Rng& rng, int64_t gh, int64_t gw, double continuous_ratio);

/// Exactly round(ratio * gh * gw) tokens sampled without replacement.
TokenMask gen_random_token_mask(Rng& rng, int64_t gh, int64_t gw, double ratio = 0.75);

/// Centered square covering about `ratio` of the image.
MaskMap square_mask(int64_t h, int64_t w, double ratio);

/// [B, 1, h, w] tensor of 0/1 values.
Tensor masks_to_tensor(const std::vector<MaskMap>& masks, DType dt = default_dtype());

}  // namespace priorfill
