#include "priorfill/losses/losses.hpp"

namespace priorfill {

namespace {

constexpr double kLogClamp = 1e-7;

Tensor log_sigmoid_clamped(const Tensor& logits) { return log(clamp_min(sigmoid(logits), kLogClamp)); }

Tensor log_one_minus_sigmoid_clamped(const Tensor& logits) {
    return log(clamp_min(add_scalar(neg(sigmoid(logits)), 1.0), kLogClamp));
}

}  // namespace

void LossWeights::validate() const {
    for (double w : {l1, adv, fm, hrf, gp})
        if (!(w >= 0.0)) throw ConfigError("loss weights must be non-negative");
}

Tensor l1_unmasked(const Tensor& pred, const Tensor& gt, const Tensor& mask) {
    if (pred.shape() != gt.shape()) throw ShapeError("l1: prediction and target shapes differ");
    Tensor keep = add_scalar(neg(mask), 1.0);
    return mean(mul(abs(sub(pred, gt)), keep));
}

Tensor mask_to_score_grid(const Tensor& mask, int64_t sh, int64_t sw) {
    if (mask.ndim() != 4 || mask.dim(1) != 1) throw ShapeError("mask must be [B,1,H,W]");
    const int64_t H = mask.dim(2), W = mask.dim(3);
    if (sh < 1 || sw < 1 || H % sh != 0 || W % sw != 0 || H / sh != W / sw)
        throw ShapeError("mask cannot be pooled onto a " + std::to_string(sh) + "x" + std::to_string(sw) + " grid");
    NoGradGuard ng;
    const int k = static_cast<int>(H / sh);
    return k == 1 ? mask.detach() : max_pool2d(mask.detach(), k, k);
}

Tensor disc_loss(const Tensor& real_logits, const Tensor& fake_logits, const Tensor& mask) {
    Tensor m = mask_to_score_grid(mask, fake_logits.dim(2), fake_logits.dim(3));
    Tensor real_term = neg(mean(log_sigmoid_clamped(real_logits)));
    Tensor keep = add_scalar(neg(m), 1.0);
    Tensor fake_known = neg(mean(mul(log_sigmoid_clamped(fake_logits), keep)));
    Tensor fake_hole = neg(mean(mul(log_one_minus_sigmoid_clamped(fake_logits), m)));
    return add(real_term, add(fake_known, fake_hole));
}

Tensor disc_loss(const DiscFn& d, const Tensor& real, const Tensor& fake, const Tensor& mask) {
    return disc_loss(d(real.detach()).logits, d(fake.detach()).logits, mask);
}

Tensor gen_adv_loss(const Tensor& fake_logits) { return neg(mean(log_sigmoid_clamped(fake_logits))); }

Tensor gen_adv_loss(const DiscFn& d, const Tensor& fake) { return gen_adv_loss(d(fake).logits); }

Tensor gradient_penalty(const DiscFn& d, const Tensor& real) {
    Tensor x = real.detach();
    x.set_requires_grad(true);
    Tensor out = d(x).logits;
    std::vector<Tensor> g = grad(sum(out), {x}, true);
    Tensor gx = g.front().defined() ? g.front() : Tensor::zeros(x.shape(), x.dtype());
    return mul_scalar(sum(square(gx)), 1.0 / double(real.dim(0)));
}

Tensor feature_match(const std::vector<Tensor>& real_features, const std::vector<Tensor>& fake_features) {
    if (real_features.size() != fake_features.size() || real_features.empty())
        throw ShapeError("feature_match: feature lists differ");
    Tensor acc;
    for (size_t i = 0; i < real_features.size(); ++i) {
        Tensor t = mean(abs(sub(fake_features[i], real_features[i].detach())));
        acc = acc.defined() ? add(acc, t) : t;
    }
    return mul_scalar(acc, 1.0 / double(real_features.size()));
}

Tensor feature_match(const DiscFn& d, const Tensor& real, const Tensor& fake) {
    std::vector<Tensor> rf;
    {
        NoGradGuard ng;
        rf = d(real.detach()).features;
    }
    return feature_match(rf, d(fake).features);
}

HrfExtractor::HrfExtractor(uint64_t seed, int64_t channels) : seed_(seed) {
    Rng rng(seed);
    const std::array<int64_t, 4> widths{channels, 16, 32, 32};
    for (size_t i = 0; i < 3; ++i) {
        w_[i] = kaiming_uniform({widths[i + 1], widths[i], 3, 3}, widths[i] * 9, rng);
        b_[i] = Tensor::zeros({widths[i + 1]});
        params_.add_buffer("hrf" + std::to_string(i) + ".w", w_[i]);
        params_.add_buffer("hrf" + std::to_string(i) + ".b", b_[i]);
    }
}

std::vector<Tensor> HrfExtractor::features(const Tensor& img) const {
    std::vector<Tensor> out;
    Tensor x = img;
    const int stride[3] = {1, 2, 1}, dilation[3] = {1, 2, 4};
    for (size_t i = 0; i < 3; ++i) {
        Tensor w = w_[i].to(img.dtype()), b = b_[i].to(img.dtype());
        x = relu(conv2d(x, w, b, {.stride = stride[i], .pad = dilation[i], .dilation = dilation[i]}));
        out.push_back(x);
    }
    return out;
}

Tensor hrf_loss(const HrfExtractor& ex, const Tensor& real, const Tensor& fake) {
    if (real.shape() != fake.shape()) throw ShapeError("hrf: image shapes differ");
    std::vector<Tensor> rf;
    {
        NoGradGuard ng;
        rf = ex.features(real.detach());
    }
    std::vector<Tensor> ff = ex.features(fake);
    Tensor acc;
    for (size_t i = 0; i < rf.size(); ++i) {
        Tensor t = mean(square(sub(ff[i], rf[i])));
        acc = acc.defined() ? add(acc, t) : t;
    }
    return acc;
}

Tensor total_generator_loss(const GeneratorLossTerms& t, const LossWeights& w) {
    return add(add(mul_scalar(t.l1, w.l1), mul_scalar(t.adv, w.adv)),
               add(mul_scalar(t.fm, w.fm), mul_scalar(t.hrf, w.hrf)));
}

}  // namespace priorfill
