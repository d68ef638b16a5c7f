#include "priorfill/upsampler/upsampler.hpp"

namespace priorfill {

Tensor cartesian_grid(int64_t h, int64_t w, DType dt) {
    std::vector<double> v(static_cast<size_t>(2 * h * w));
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            v[static_cast<size_t>(y * w + x)] = w > 1 ? -1.0 + 2.0 * double(x) / double(w - 1) : 0.0;
            v[static_cast<size_t>(h * w + y * w + x)] = h > 1 ? -1.0 + 2.0 * double(y) / double(h - 1) : 0.0;
        }
    return Tensor::from_vector(v, {2, h, w}, dt);
}

Tensor build_fp_prime(const MaePriors& priors, int64_t h, int64_t w) {
    if (h % 8 != 0 || w % 8 != 0)
        throw ShapeError("build_fp_prime: " + std::to_string(h) + "x" + std::to_string(w) + " not divisible by 8");
    const Tensor& f = priors.features;
    if (f.ndim() != 4) throw ShapeError("build_fp_prime: features must be [B,gh,gw,d]");
    const int64_t B = f.dim(0);
    Tensor x = bilinear_resize(permute(f, {0, 3, 1, 2}), h / 8, w / 8);
    Tensor grid = expand_to(reshape(cartesian_grid(h / 8, w / 8, f.dtype()), {1, 2, h / 8, w / 8}),
                            {B, 2, h / 8, w / 8});
    return concat({x, grid}, 1);
}

GatedBlock GatedBlock::create(ParamSet& ps, const std::string& prefix, int64_t cin, int64_t cout,
                              bool transposed, Rng& rng) {
    GatedBlock b;
    b.transposed = transposed;
    if (transposed) {
        b.feat_w = ps.add(prefix + "feat.w", kaiming_uniform({cin, cout, 3, 3}, std::max<int64_t>(1, cin * 9 / 4), rng));
        b.gate_w = ps.add(prefix + "gate.w", kaiming_uniform({cin, cout, 3, 3}, std::max<int64_t>(1, cin * 9 / 4), rng));
    } else {
        b.feat_w = ps.add(prefix + "feat.w", kaiming_uniform({cout, cin, 3, 3}, cin * 9, rng));
        b.gate_w = ps.add(prefix + "gate.w", kaiming_uniform({cout, cin, 3, 3}, cin * 9, rng));
    }
    b.feat_b = ps.add(prefix + "feat.b", Tensor::zeros({cout}));
    b.gate_b = ps.add(prefix + "gate.b", Tensor::zeros({cout}));
    b.bn_g = ps.add(prefix + "bn.g", Tensor::ones({cout}));
    b.bn_b = ps.add(prefix + "bn.b", Tensor::zeros({cout}));
    b.bn.running_mean = ps.add_buffer(prefix + "bn.mean", Tensor::zeros({cout}));
    b.bn.running_var = ps.add_buffer(prefix + "bn.var", Tensor::ones({cout}));
    return b;
}

namespace {

Tensor branch(const GatedBlock& blk, const Tensor& x, const Tensor& w, const Tensor& b) {
    return blk.transposed ? deconv2d(x, w, b, 2, 1, 1) : conv2d(x, w, b, {.stride = 1, .pad = 1});
}

}  // namespace

Tensor gated_block_gate(const GatedBlock& blk, const Tensor& x) {
    // Logits bounded to +-15 keep the gate strictly inside (0,1) in 32-bit arithmetic.
    constexpr double bound = 15.0;
    Tensor z = branch(blk, x, blk.gate_w, blk.gate_b);
    return sigmoid(neg(clamp_min(neg(clamp_min(z, -bound)), -bound)));
}

Tensor gated_block_forward(GatedBlock& blk, const Tensor& x, bool training) {
    Tensor g = mul(branch(blk, x, blk.feat_w, blk.feat_b), gated_block_gate(blk, x));
    return relu(batch_norm(g, blk.bn_g, blk.bn_b, blk.bn, training));
}

Upsampler::Upsampler(const UpsamplerConfig& cfg, uint64_t seed) : cfg_(cfg) {
    Rng rng(seed);
    int64_t cin = cfg_.prior_dim + 2;
    for (int j = 0; j < 4; ++j) {
        blocks[static_cast<size_t>(j)] = GatedBlock::create(params_, "gc" + std::to_string(j + 1) + ".", cin,
                                                            cfg_.widths[static_cast<size_t>(j)], j > 0, rng);
        cin = cfg_.widths[static_cast<size_t>(j)];
    }
    for (int j = 0; j < 4; ++j)
        alpha[static_cast<size_t>(j)] =
            params_.add("alpha" + std::to_string(j + 1), Tensor::full({1}, cfg_.alpha_init));
}

std::array<Tensor, 4> gated_pyramid(Upsampler& up, const Tensor& fp_prime, bool training) {
    if (fp_prime.ndim() != 4 || fp_prime.dim(1) != up.config().prior_dim + 2)
        throw ShapeError("gated_pyramid: expected [B," + std::to_string(up.config().prior_dim + 2) +
                         ",h/8,w/8], got " + shape_str(fp_prime.shape()));
    std::array<Tensor, 4> out;
    Tensor x = fp_prime;
    for (size_t j = 0; j < 4; ++j) {
        x = gated_block_forward(up.blocks[j], x, training);
        out[j] = x;
    }
    return out;
}

Pyramid build_pyramid(Upsampler& up, const MaePriors& priors, int64_t h, int64_t w, bool training) {
    Pyramid p;
    p.levels = gated_pyramid(up, build_fp_prime(priors, h, w), training);
    p.alpha = up.alpha;
    return p;
}

Tensor inject(const Tensor& feats, const Tensor& p, const Tensor& alpha) {
    if (feats.shape() != p.shape())
        throw ShapeError("inject: features " + shape_str(feats.shape()) + " vs prior " + shape_str(p.shape()));
    return add(feats, mul(p, alpha));
}

}  // namespace priorfill
