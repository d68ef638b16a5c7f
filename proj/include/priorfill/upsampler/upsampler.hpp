#pragma once

#include <array>

#include "priorfill/mae/mae.hpp"
#include "priorfill/numerics/ops.hpp"
#include "priorfill/numerics/params.hpp"

namespace priorfill {

/// [2,h,w]: channel 0 holds x, channel 1 holds y, both spaced over [-1,1]
/// with the corners exactly at +-1.
Tensor cartesian_grid(int64_t h, int64_t w, DType dt = default_dtype());

/// Prior features [B,gh,gw,d] resized to (h/8, w/8) and concatenated with the
/// Cartesian grid: [B,d+2,h/8,w/8].
Tensor build_fp_prime(const MaePriors& priors, int64_t h, int64_t w);

/// Gated convolution (or stride-2 transposed convolution), then batch norm and ReLU:
/// relu(bn(feature(x) * sigmoid(gate(x)))).
struct GatedBlock {
    Tensor feat_w, feat_b, gate_w, gate_b, bn_g, bn_b;
    BatchNormState bn;
    bool transposed = false;

    static GatedBlock create(ParamSet& ps, const std::string& prefix, int64_t cin, int64_t cout,
                             bool transposed, Rng& rng);
};

Tensor gated_block_forward(GatedBlock& blk, const Tensor& x, bool training);
/// The sigmoid gate alone, for inspection.
Tensor gated_block_gate(const GatedBlock& blk, const Tensor& x);

/// Prior-feature pyramid and its zero-initialised blend scalars. Index j = 0..3
/// is P1..P4 at h/8, h/4, h/2, h.
struct UpsamplerConfig {
    int64_t prior_dim = 64;
    std::array<int64_t, 4> widths{128, 128, 64, 32};
    double alpha_init = 0.0;
};

class Upsampler {
   public:
    Upsampler(const UpsamplerConfig& cfg, uint64_t seed = 0);

    const UpsamplerConfig& config() const { return cfg_; }
    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }

    std::array<GatedBlock, 4> blocks;
    std::array<Tensor, 4> alpha;  // each [1]

   private:
    UpsamplerConfig cfg_;
    ParamSet params_;
};

struct Pyramid {
    std::array<Tensor, 4> levels;  // P1..P4
    std::array<Tensor, 4> alpha;
};

std::array<Tensor, 4> gated_pyramid(Upsampler& up, const Tensor& fp_prime, bool training);
Pyramid build_pyramid(Upsampler& up, const MaePriors& priors, int64_t h, int64_t w, bool training);

/// feats + alpha * p; shapes must agree.
Tensor inject(const Tensor& feats, const Tensor& p, const Tensor& alpha);

}  // namespace priorfill
