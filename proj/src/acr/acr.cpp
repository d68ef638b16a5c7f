#include "priorfill/acr/acr.hpp"

#include <cmath>

namespace priorfill {

const char* aggregation_mode_name(AggregationMode m) {
    switch (m) {
        case AggregationMode::none: return "none";
        case AggregationMode::prior_attention: return "prior_attention";
        case AggregationMode::contextual: return "contextual";
    }
    return "none";
}

AggregationMode aggregation_mode_from_name(const std::string& name) {
    if (name == "none") return AggregationMode::none;
    if (name == "prior_attention") return AggregationMode::prior_attention;
    if (name == "contextual") return AggregationMode::contextual;
    throw ConfigError("unknown aggregation mode: " + name);
}

int64_t AcrConfig::global_channels() const {
    return static_cast<int64_t>(std::llround(global_ratio * double(bottleneck())));
}

void AcrConfig::validate() const {
    if (image_channels < 1) throw ConfigError("acr: image_channels must be positive");
    for (int64_t w : widths)
        if (w < 1) throw ConfigError("acr: widths must be positive");
    if (n_ffc < 1) throw ConfigError("acr: n_ffc must be at least 1");
    if (global_ratio < 0.0 || global_ratio > 1.0) throw ConfigError("acr: global_ratio must lie in [0,1]");
    if (global_ratio > 0.0 && global_channels() < 1)
        throw ConfigError("acr: global branch would have no channels");
}

ConvBn ConvBn::create(ParamSet& ps, const std::string& prefix, int64_t cin, int64_t cout, int k, int stride,
                      int pad, bool transposed, Rng& rng, int output_pad) {
    ConvBn c;
    c.stride = stride;
    c.pad = pad;
    c.output_pad = output_pad;
    c.transposed = transposed;
    const int64_t kk = int64_t(k) * k;
    c.w = transposed ? ps.add(prefix + "w", kaiming_uniform({cin, cout, k, k}, std::max<int64_t>(1, cin * kk / 4), rng))
                     : ps.add(prefix + "w", kaiming_uniform({cout, cin, k, k}, cin * kk, rng));
    c.b = ps.add(prefix + "b", Tensor::zeros({cout}));
    c.g = ps.add(prefix + "bn.g", Tensor::ones({cout}));
    c.beta = ps.add(prefix + "bn.b", Tensor::zeros({cout}));
    c.bn.running_mean = ps.add_buffer(prefix + "bn.mean", Tensor::zeros({cout}));
    c.bn.running_var = ps.add_buffer(prefix + "bn.var", Tensor::ones({cout}));
    return c;
}

Tensor conv_bn_forward(ConvBn& c, const Tensor& x, bool training, bool act) {
    Tensor y = c.transposed ? deconv2d(x, c.w, c.b, c.stride, c.pad, c.output_pad)
                            : conv2d(x, c.w, c.b, {.stride = c.stride, .pad = c.pad});
    y = batch_norm(y, c.g, c.beta, c.bn, training);
    return act ? relu(y) : y;
}

FfcBlock FfcBlock::create(ParamSet& ps, const std::string& prefix, int64_t channels, int64_t global_channels,
                          Rng& rng) {
    FfcBlock f;
    f.channels = channels;
    f.global_channels = global_channels;
    const int64_t cl = channels - global_channels, cg = global_channels;
    if (cl > 0) {
        f.l2l_w = ps.add(prefix + "l2l.w", kaiming_uniform({cl, cl, 3, 3}, cl * 9, rng));
        f.l2l_b = ps.add(prefix + "l2l.b", Tensor::zeros({cl}));
    }
    if (cl > 0 && cg > 0) {
        f.l2g_w = ps.add(prefix + "l2g.w", kaiming_uniform({cg, cl, 3, 3}, cl * 9, rng));
        f.l2g_b = ps.add(prefix + "l2g.b", Tensor::zeros({cg}));
        f.g2l_w = ps.add(prefix + "g2l.w", kaiming_uniform({cl, cg, 3, 3}, cg * 9, rng));
        f.g2l_b = ps.add(prefix + "g2l.b", Tensor::zeros({cl}));
    }
    if (cg > 0) {
        f.spec_w = ps.add(prefix + "spec.w", kaiming_uniform({2 * cg, 2 * cg, 1, 1}, 2 * cg, rng));
        f.spec_b = ps.add(prefix + "spec.b", Tensor::zeros({2 * cg}));
        f.spec_g = ps.add(prefix + "spec.bn.g", Tensor::ones({2 * cg}));
        f.spec_beta = ps.add(prefix + "spec.bn.b", Tensor::zeros({2 * cg}));
        f.spec_bn.running_mean = ps.add_buffer(prefix + "spec.bn.mean", Tensor::zeros({2 * cg}));
        f.spec_bn.running_var = ps.add_buffer(prefix + "spec.bn.var", Tensor::ones({2 * cg}));
    }
    f.out_g = ps.add(prefix + "bn.g", Tensor::ones({channels}));
    f.out_beta = ps.add(prefix + "bn.b", Tensor::zeros({channels}));
    f.out_bn.running_mean = ps.add_buffer(prefix + "bn.mean", Tensor::zeros({channels}));
    f.out_bn.running_var = ps.add_buffer(prefix + "bn.var", Tensor::ones({channels}));
    return f;
}

Tensor ffc_spectral(FfcBlock& blk, const Tensor& xg, bool training) {
    Tensor s = fft2d_stacked(xg);
    s = relu(batch_norm(conv2d(s, blk.spec_w, blk.spec_b), blk.spec_g, blk.spec_beta, blk.spec_bn, training));
    return ifft2d_stacked(s);
}

Tensor ffc_forward(FfcBlock& blk, const Tensor& x, bool training) {
    if (x.ndim() != 4 || x.dim(1) != blk.channels)
        throw ShapeError("ffc: expected [B," + std::to_string(blk.channels) + ",H,W], got " + shape_str(x.shape()));
    const int64_t cl = blk.channels - blk.global_channels, cg = blk.global_channels;
    const Conv2dOptions same{.stride = 1, .pad = 1};
    Tensor y;
    if (cg == 0) {
        y = conv2d(x, blk.l2l_w, blk.l2l_b, same);
    } else if (cl == 0) {
        y = ffc_spectral(blk, x, training);
    } else {
        Tensor xl = slice(x, 1, 0, cl), xg = slice(x, 1, cl, cl + cg);
        Tensor out_l = add(conv2d(xl, blk.l2l_w, blk.l2l_b, same), conv2d(xg, blk.g2l_w, blk.g2l_b, same));
        Tensor out_g = add(conv2d(xl, blk.l2g_w, blk.l2g_b, same), ffc_spectral(blk, xg, training));
        y = concat({out_l, out_g}, 1);
    }
    return add(x, relu(batch_norm(y, blk.out_g, blk.out_beta, blk.out_bn, training)));
}

AcrModel::AcrModel(const AcrConfig& cfg, uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    const auto& w = cfg_.widths;
    stem = ConvBn::create(params_, "stem.", cfg_.in_channels(), w[0], 3, 1, 1, false, rng);
    for (size_t i = 0; i < 3; ++i)
        down[i] = ConvBn::create(params_, "down" + std::to_string(i) + ".", w[i], w[i + 1], 3, 2, 1, false, rng);
    for (int64_t i = 0; i < cfg_.n_ffc; ++i)
        ffc.push_back(FfcBlock::create(params_, "ffc" + std::to_string(i) + ".", cfg_.bottleneck(),
                                       cfg_.global_channels(), rng));
    beta_start = params_.add("beta_start", Tensor::full({1}, cfg_.beta_init));
    beta_end = params_.add("beta_end", Tensor::full({1}, cfg_.beta_init));
    for (size_t i = 0; i < 3; ++i)
        up[i] = ConvBn::create(params_, "up" + std::to_string(i) + ".", w[3 - i], w[2 - i], 3, 2, 1, true, rng, 1);
    out_w = params_.add("out.w", kaiming_uniform({cfg_.image_channels, w[0], 3, 3}, w[0] * 9, rng));
    out_b = params_.add("out.b", Tensor::zeros({cfg_.image_channels}));
}

Tensor to_token_cells(const Tensor& feats, int64_t gh, int64_t gw) {
    if (feats.ndim() != 4) throw ShapeError("token cells: expected [B,c,fh,fw]");
    const int64_t B = feats.dim(0), c = feats.dim(1), fh = feats.dim(2), fw = feats.dim(3);
    if (gh < 1 || gw < 1 || fh % gh != 0 || fw % gw != 0 || fh / gh != fw / gw)
        throw ShapeError("token cells: feature grid " + std::to_string(fh) + "x" + std::to_string(fw) +
                         " is incompatible with token grid " + std::to_string(gh) + "x" + std::to_string(gw));
    const int64_t s = fh / gh;
    Tensor t = permute(reshape(feats, {B, c, gh, s, gw, s}), {0, 2, 4, 1, 3, 5});
    return reshape(t, {B, gh * gw, c * s * s});
}

Tensor from_token_cells(const Tensor& cells, int64_t c, int64_t gh, int64_t gw, int64_t s) {
    const int64_t B = cells.dim(0);
    Tensor t = permute(reshape(cells, {B, gh, gw, c, s, s}), {0, 3, 1, 4, 2, 5});
    return reshape(t, {B, c, gh * s, gw * s});
}

namespace {

// [B,T,1] with 1 at masked tokens and [B,1,T] with 1 at unmasked tokens.
std::pair<Tensor, Tensor> token_selectors(const std::vector<TokenMask>& masks, int64_t B, DType dt) {
    if (static_cast<int64_t>(masks.size()) != B) throw ShapeError("aggregation: one token mask per image");
    const int64_t T = masks.front().tokens();
    Tensor q = Tensor::zeros({B, T, 1}, dt), k = Tensor::zeros({B, 1, T}, dt);
    for (int64_t b = 0; b < B; ++b) {
        const TokenMask& m = masks[static_cast<size_t>(b)];
        if (m.tokens() != T) throw ShapeError("aggregation: token masks differ in size");
        for (int64_t t = 0; t < T; ++t) (m.masked(t) ? q : k).set(b * T + t, 1.0);
    }
    return {q, k};
}

}  // namespace

Tensor prior_attention_aggregate(const Tensor& feats, const Tensor& attention,
                                 const std::vector<TokenMask>& masks, const Tensor& beta) {
    if (masks.empty()) throw ShapeError("aggregation: no token masks");
    const int64_t B = feats.dim(0), gh = masks.front().gh, gw = masks.front().gw, T = gh * gw;
    Tensor cells = to_token_cells(feats, gh, gw);
    if (attention.shape() != Shape{B, T, T})
        throw ShapeError("aggregation: attention " + shape_str(attention.shape()) + " does not match " +
                         std::to_string(T) + " tokens");
    auto [q, k] = token_selectors(masks, B, feats.dtype());
    Tensor r = mul(mul(attention.detach(), q), k);
    Tensor delta = from_token_cells(matmul(r, cells), feats.dim(1), gh, gw, feats.dim(2) / gh);
    return add(feats, mul(delta, beta));
}

Tensor contextual_weights(const Tensor& feats, const std::vector<TokenMask>& masks) {
    if (masks.empty()) throw ShapeError("contextual attention: no token masks");
    const int64_t B = feats.dim(0);
    Tensor cells = to_token_cells(feats, masks.front().gh, masks.front().gw);
    auto [q, k] = token_selectors(masks, B, feats.dtype());
    Tensor norm = add_scalar(sqrt(add_scalar(sum_dim(square(cells), 2, true), 1e-16)), 1e-8);
    Tensor unit = div(cells, norm);
    Tensor cos = matmul(unit, transpose(unit, 1, 2));
    Tensor key_masked = add_scalar(neg(k), 1.0);
    return mul(softmax_lastdim(cos, key_masked), q);
}

Tensor contextual_attention(const Tensor& feats, const std::vector<TokenMask>& masks, const Tensor& beta) {
    const int64_t gh = masks.front().gh, gw = masks.front().gw;
    Tensor r = contextual_weights(feats, masks);
    Tensor cells = to_token_cells(feats, gh, gw);
    Tensor delta = from_token_cells(matmul(r, cells), feats.dim(1), gh, gw, feats.dim(2) / gh);
    return add(feats, mul(delta, beta));
}

std::vector<TokenMask> bottleneck_masks(const Tensor& mask, int64_t factor) {
    if (mask.ndim() != 4 || mask.dim(1) != 1) throw ShapeError("mask tensor must be [B,1,H,W]");
    const int64_t B = mask.dim(0), H = mask.dim(2), W = mask.dim(3);
    std::vector<TokenMask> out;
    auto v = mask.to_vector();
    for (int64_t b = 0; b < B; ++b) {
        MaskMap m(H, W);
        for (int64_t i = 0; i < H * W; ++i) m.bits[static_cast<size_t>(i)] = v[static_cast<size_t>(b * H * W + i)] > 0.5;
        out.push_back(prior_token_mask(m, factor));
    }
    return out;
}

Tensor acr_forward(AcrModel& model, const Tensor& img_masked, const Tensor& mask, const MaePriors* priors,
                   const Pyramid* pyramid, bool training) {
    const AcrConfig& c = model.config();
    if (img_masked.ndim() != 4 || img_masked.dim(1) != c.image_channels)
        throw ShapeError("acr: expected image [B," + std::to_string(c.image_channels) + ",H,W], got " +
                         shape_str(img_masked.shape()));
    const int64_t B = img_masked.dim(0), H = img_masked.dim(2), W = img_masked.dim(3);
    if (mask.shape() != Shape{B, 1, H, W}) throw ShapeError("acr: mask must be [B,1,H,W]");
    if (H % 8 != 0 || W % 8 != 0) throw ShapeError("acr: extents must be divisible by 8");

    Tensor f = conv_bn_forward(model.stem, concat({img_masked, mask}, 1), training);
    if (pyramid) f = inject(f, pyramid->levels[3], pyramid->alpha[3]);
    for (size_t i = 0; i < 3; ++i) {
        f = conv_bn_forward(model.down[i], f, training);
        if (pyramid) f = inject(f, pyramid->levels[2 - i], pyramid->alpha[2 - i]);
    }

    std::function<Tensor(const Tensor&, const Tensor&)> aggregate;
    if (c.mode == AggregationMode::prior_attention && priors) {
        if (f.dim(2) % priors->masks.front().gh != 0 || f.dim(3) % priors->masks.front().gw != 0)
            throw ShapeError("acr: prior token grid does not divide the bottleneck grid");
        aggregate = [priors](const Tensor& x, const Tensor& beta) {
            return prior_attention_aggregate(x, priors->attention, priors->masks, beta);
        };
    } else if (c.mode == AggregationMode::contextual) {
        auto masks = bottleneck_masks(mask, H / f.dim(2));
        aggregate = [masks](const Tensor& x, const Tensor& beta) { return contextual_attention(x, masks, beta); };
    }
    const size_t n = model.ffc.size();
    for (size_t i = 0; i < n; ++i) {
        if (aggregate && i == n - 1) f = aggregate(f, model.beta_end);
        f = ffc_forward(model.ffc[i], f, training);
        if (aggregate && i == 0) f = aggregate(f, model.beta_start);
    }
    for (auto& u : model.up) f = conv_bn_forward(u, f, training);
    Tensor out = tanh(conv2d(f, model.out_w, model.out_b, {.stride = 1, .pad = 1}));
    return mul_scalar(add_scalar(out, 1.0), 0.5);
}

Discriminator::Discriminator(const DiscConfig& cfg, uint64_t seed) : cfg_(cfg) {
    Rng rng(seed);
    int64_t cin = cfg_.image_channels;
    for (size_t i = 0; i < 4; ++i) {
        const int64_t cout = cfg_.widths[i];
        w[i] = params_.add("d" + std::to_string(i) + ".w", kaiming_uniform({cout, cin, 4, 4}, cin * 16, rng));
        b[i] = params_.add("d" + std::to_string(i) + ".b", Tensor::zeros({cout}));
        cin = cout;
    }
    head_w = params_.add("head.w", kaiming_uniform({1, cin, 3, 3}, cin * 9, rng));
    head_b = params_.add("head.b", Tensor::zeros({1}));
}

DiscOutput discriminate(const Discriminator& d, const Tensor& img) {
    if (img.ndim() != 4 || img.dim(1) != d.config().image_channels)
        throw ShapeError("discriminator: expected [B," + std::to_string(d.config().image_channels) +
                         ",H,W], got " + shape_str(img.shape()));
    if (img.dim(2) % 16 != 0 || img.dim(3) % 16 != 0)
        throw ShapeError("discriminator: extents must be divisible by 16");
    DiscOutput out;
    Tensor x = img;
    for (size_t i = 0; i < 4; ++i) {
        x = leaky_relu(conv2d(x, d.w[i], d.b[i], {.stride = 2, .pad = 1}), 0.2);
        out.features.push_back(x);
    }
    out.logits = conv2d(x, d.head_w, d.head_b, {.stride = 1, .pad = 1});
    return out;
}

DiscFn as_disc_fn(const Discriminator& d) {
    return [&d](const Tensor& img) { return discriminate(d, img); };
}

}  // namespace priorfill
