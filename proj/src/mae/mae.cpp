#include "priorfill/mae/mae.hpp"

#include <algorithm>

namespace priorfill {

namespace {

std::vector<std::vector<int64_t>> visible_rows(const std::vector<TokenMask>& masks, int64_t B,
                                               int64_t gh, int64_t gw) {
    if (static_cast<int64_t>(masks.size()) != B)
        throw ShapeError("mae: expected " + std::to_string(B) + " token masks, got " +
                         std::to_string(masks.size()));
    std::vector<std::vector<int64_t>> idx;
    idx.reserve(masks.size());
    for (const auto& m : masks) {
        if (m.gh != gh || m.gw != gw)
            throw ShapeError("mae: token mask grid " + std::to_string(m.gh) + "x" + std::to_string(m.gw) +
                             " does not match " + std::to_string(gh) + "x" + std::to_string(gw));
        idx.push_back(m.unmasked_indices());
        if (idx.back().empty()) throw ContractError("mae: every token is masked");
        if (idx.back().size() != idx.front().size())
            throw ContractError("mae: masks in one batch must keep the same number of tokens");
    }
    return idx;
}

void check_images(const MaeConfig& c, const Tensor& imgs) {
    if (imgs.ndim() != 4 || imgs.dim(1) != c.channels || imgs.dim(2) != c.img || imgs.dim(3) != c.img)
        throw ShapeError("mae: expected [B," + std::to_string(c.channels) + "," + std::to_string(c.img) +
                         "," + std::to_string(c.img) + "], got " + shape_str(imgs.shape()));
}

Tensor unsqueeze0(const Tensor& x) {
    Shape s = x.shape();
    s.insert(s.begin(), 1);
    return reshape(x, s);
}

Tensor squeeze0(const Tensor& x) {
    Shape s(x.shape().begin() + 1, x.shape().end());
    return reshape(x, s);
}

// [B,T,1] selector: 1 where the decoder takes the partial projection.
Tensor partial_selector(const std::vector<TokenMask>& masks, const std::vector<MaskMap>& pix,
                        int64_t patch, DType dt) {
    const int64_t B = static_cast<int64_t>(masks.size()), T = masks.front().tokens();
    const int64_t gw = masks.front().gw;
    Tensor sel = Tensor::zeros({B, T, 1}, dt);
    for (int64_t b = 0; b < B; ++b) {
        const MaskMap& m = pix[static_cast<size_t>(b)];
        for (int64_t t = 0; t < T; ++t) {
            if (!masks[static_cast<size_t>(b)].masked(t)) continue;
            const int64_t y0 = (t / gw) * patch, x0 = (t % gw) * patch;
            int64_t n = 0;
            for (int64_t y = 0; y < patch; ++y)
                for (int64_t x = 0; x < patch; ++x) n += m.at(y0 + y, x0 + x);
            if (n < patch * patch) sel.set(b * T + t, 1.0);
        }
    }
    return sel;
}

}  // namespace

void MaeConfig::validate() const {
    if (img < 1 || patch < 1 || img % patch != 0) throw ConfigError("mae: img must be divisible by patch");
    if (grid() * grid() < 2) throw ConfigError("mae: need at least two tokens");
    if (channels < 1 || enc_layers < 1 || dec_layers < 1 || mlp_ratio < 1)
        throw ConfigError("mae: layer counts and channels must be positive");
    if (heads < 1 || dim % heads != 0) throw ConfigError("mae: dim must be divisible by heads");
    if (dim % 4 != 0) throw ConfigError("mae: dim must be divisible by 4");
    if (attn_layers_used < 1 || attn_layers_used > dec_layers)
        throw ConfigError("mae: attn_layers_used must lie in [1, dec_layers]");
    if (feature_layer < 1 || feature_layer > dec_layers)
        throw ConfigError("mae: feature_layer must lie in [1, dec_layers]");
}

MaeModel::MaeModel(const MaeConfig& cfg, uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    const int64_t d = cfg_.dim, P = cfg_.patch_dim(), g = cfg_.grid();
    patch_w = params_.add("patch.w", xavier_uniform({P, d}, P, d, rng));
    patch_b = params_.add("patch.b", Tensor::zeros({d}));
    enc_pos = sincos_pos_embed_2d(d, g, g);
    dec_pos = sincos_pos_embed_2d(d, g, g);
    for (int64_t i = 0; i < cfg_.enc_layers; ++i)
        enc_blocks.push_back(TransformerBlock::create(params_, "enc." + std::to_string(i) + ".", d,
                                                      cfg_.heads, cfg_.mlp_ratio, rng));
    enc_norm_g = params_.add("enc_norm.g", Tensor::ones({d}));
    enc_norm_b = params_.add("enc_norm.b", Tensor::zeros({d}));
    dec_embed_w = params_.add("dec_embed.w", xavier_uniform({d, d}, d, d, rng));
    dec_embed_b = params_.add("dec_embed.b", Tensor::zeros({d}));
    mask_token = params_.add("mask_token", normal_init({d}, 0.02, rng));
    for (int64_t i = 0; i < cfg_.dec_layers; ++i)
        dec_blocks.push_back(TransformerBlock::create(params_, "dec." + std::to_string(i) + ".", d,
                                                      cfg_.heads, cfg_.mlp_ratio, rng));
    dec_norm_g = params_.add("dec_norm.g", Tensor::ones({d}));
    dec_norm_b = params_.add("dec_norm.b", Tensor::zeros({d}));
    pred_w = params_.add("pred.w", xavier_uniform({d, P}, d, P, rng));
    pred_b = params_.add("pred.b", Tensor::zeros({P}));
    if (cfg_.partial_embed) {
        const int64_t Pin = cfg_.patch * cfg_.patch * 4;
        partial_w = params_.add("partial.w", xavier_uniform({Pin, d}, Pin, d, rng));
        partial_b = params_.add("partial.b", Tensor::zeros({d}));
    }
}

Tensor patchify(const Tensor& img, int64_t patch) {
    if (img.ndim() == 3) return squeeze0(patchify(unsqueeze0(img), patch));
    if (img.ndim() != 4) throw ShapeError("patchify: expected [C,H,W] or [B,C,H,W]");
    const int64_t B = img.dim(0), C = img.dim(1), H = img.dim(2), W = img.dim(3);
    if (patch < 1 || H % patch != 0 || W % patch != 0)
        throw ShapeError("patchify: " + shape_str(img.shape()) + " not divisible by patch " +
                         std::to_string(patch));
    const int64_t gh = H / patch, gw = W / patch;
    Tensor t = reshape(img, {B, C, gh, patch, gw, patch});
    t = permute(t, {0, 2, 4, 3, 5, 1});
    return reshape(t, {B, gh * gw, patch * patch * C});
}

Tensor unpatchify(const Tensor& tokens, int64_t patch, int64_t channels, int64_t gh, int64_t gw) {
    if (tokens.ndim() == 2) return squeeze0(unpatchify(unsqueeze0(tokens), patch, channels, gh, gw));
    if (tokens.ndim() != 3 || tokens.dim(1) != gh * gw || tokens.dim(2) != patch * patch * channels)
        throw ShapeError("unpatchify: token tensor " + shape_str(tokens.shape()) +
                         " does not match the requested layout");
    const int64_t B = tokens.dim(0);
    Tensor t = reshape(tokens, {B, gh, gw, patch, patch, channels});
    t = permute(t, {0, 5, 1, 3, 2, 4});
    return reshape(t, {B, channels, gh * patch, gw * patch});
}

Tensor encode_visible(const MaeModel& model, const Tensor& imgs, const std::vector<TokenMask>& masks) {
    const MaeConfig& c = model.config();
    check_images(c, imgs);
    const int64_t B = imgs.dim(0), T = c.tokens();
    auto idx = visible_rows(masks, B, c.grid(), c.grid());
    const int64_t U = static_cast<int64_t>(idx.front().size());

    Tensor patches = gather_rows(patchify(imgs, c.patch), idx);  // [B,U,P]
    Tensor pos;
    {
        NoGradGuard ng;
        pos = gather_rows(expand_to(unsqueeze0(model.enc_pos.to(imgs.dtype())), {B, T, c.dim}), idx);
    }
    Tensor x = add(linear(patches, model.patch_w, model.patch_b), pos);
    for (const auto& blk : model.enc_blocks) {
        x = block_forward(blk, x).out;
        if (x.dim(1) != U) throw ContractError("mae: encoder materialised masked tokens");
    }
    return layer_norm(x, model.enc_norm_g, model.enc_norm_b, 1e-6);
}

Tensor encode_image(const MaeModel& model, const Tensor& img, const TokenMask& mask) {
    return squeeze0(encode_visible(model, unsqueeze0(img), std::vector<TokenMask>{mask}));
}

Tensor partial_patch_input(const Tensor& imgs, const std::vector<MaskMap>& pixel_masks, int64_t patch) {
    if (imgs.ndim() != 4 || static_cast<int64_t>(pixel_masks.size()) != imgs.dim(0))
        throw ShapeError("partial_patch_input: one pixel mask per image required");
    for (const auto& m : pixel_masks)
        if (m.h != imgs.dim(2) || m.w != imgs.dim(3))
            throw ShapeError("partial_patch_input: pixel mask size does not match the image");
    Tensor m = masks_to_tensor(pixel_masks, imgs.dtype());
    Tensor kept = mul(imgs, add_scalar(neg(m), 1.0));
    return patchify(concat({kept, m}, 1), patch);
}

DecodeResult decode(const MaeModel& model, const Tensor& enc_out, const std::vector<TokenMask>& masks,
                    const PartialMaskInput* partial, bool record) {
    const MaeConfig& c = model.config();
    if (enc_out.ndim() != 3 || enc_out.dim(2) != c.dim)
        throw ShapeError("decode: expected [B,U," + std::to_string(c.dim) + "], got " +
                         shape_str(enc_out.shape()));
    const int64_t B = enc_out.dim(0), T = c.tokens();
    auto idx = visible_rows(masks, B, c.grid(), c.grid());
    if (static_cast<int64_t>(idx.front().size()) != enc_out.dim(1))
        throw ShapeError("decode: encoder rows " + std::to_string(enc_out.dim(1)) +
                         " do not match the unmasked count " + std::to_string(idx.front().size()));

    Tensor y = linear(enc_out, model.dec_embed_w, model.dec_embed_b);
    Tensor base = expand_to(reshape(model.mask_token, {1, 1, c.dim}), {B, T, c.dim});
    if (partial) {
        if (!model.partial_w.defined())
            throw ConfigError("decode: model was built without the partial-mask projection");
        Tensor proj = linear(partial_patch_input(partial->images, partial->pixel_masks, c.patch),
                             model.partial_w, model.partial_b);
        Tensor sel = partial_selector(masks, partial->pixel_masks, c.patch, enc_out.dtype());
        base = add(mul(base, add_scalar(neg(sel), 1.0)), mul(proj, sel));
    }
    Tensor x = add(scatter_rows(base, y, idx), model.dec_pos.to(enc_out.dtype()));

    DecodeResult r;
    r.input = x;
    for (const auto& blk : model.dec_blocks) {
        BlockOutput bo = block_forward(blk, x, record);
        x = bo.out;
        r.tokens.push_back(x);
        if (record) {
            r.attn.push_back(bo.attn);
            r.logits.push_back(bo.logits);
        }
    }
    r.pixel_pred = linear(layer_norm(x, model.dec_norm_g, model.dec_norm_b, 1e-6), model.pred_w, model.pred_b);
    return r;
}

Tensor normalize_patches(const Tensor& patches, double eps) {
    const int last = patches.ndim() - 1;
    Tensor centered = sub(patches, mean_dim(patches, last, true));
    Tensor var = mean_dim(square(centered), last, true);
    return div(centered, sqrt(add_scalar(var, eps)));
}

Tensor reconstruction_loss(const Tensor& pixel_pred, const Tensor& imgs, const std::vector<TokenMask>& masks,
                           int64_t patch, bool norm_pixel_target) {
    Tensor target = patchify(imgs, patch);
    if (target.shape() != pixel_pred.shape())
        throw ShapeError("reconstruction_loss: prediction " + shape_str(pixel_pred.shape()) +
                         " vs target " + shape_str(target.shape()));
    const int64_t B = target.dim(0), T = target.dim(1);
    if (static_cast<int64_t>(masks.size()) != B) throw ShapeError("reconstruction_loss: one mask per image");
    if (norm_pixel_target) {
        NoGradGuard ng;
        target = normalize_patches(target.detach());
    }
    Tensor w = Tensor::zeros({B, T, 1}, pixel_pred.dtype());
    int64_t count = 0;
    for (int64_t b = 0; b < B; ++b) {
        const TokenMask& m = masks[static_cast<size_t>(b)];
        if (m.tokens() != T) throw ShapeError("reconstruction_loss: token mask size mismatch");
        for (int64_t t = 0; t < T; ++t)
            if (m.masked(t)) {
                w.set(b * T + t, 1.0);
                ++count;
            }
    }
    if (count == 0) throw ContractError("reconstruction_loss: no masked tokens");
    Tensor err = mul(square(sub(pixel_pred, target)), w);
    return mul_scalar(sum(err), 1.0 / double(count * target.dim(2)));
}

Tensor masked_prior_attention(const std::vector<Tensor>& logits, const TokenMask& mask, int64_t layers_used) {
    if (layers_used < 1 || layers_used > static_cast<int64_t>(logits.size()))
        throw ConfigError("prior attention: layers_used must lie in [1, " + std::to_string(logits.size()) + "]");
    const int64_t T = mask.tokens();
    std::vector<double> km(static_cast<size_t>(T));
    for (int64_t t = 0; t < T; ++t) km[static_cast<size_t>(t)] = mask.masked(t) ? 1.0 : 0.0;
    Tensor acc;
    for (int64_t l = 0; l < layers_used; ++l) {
        const Tensor& lg = logits[static_cast<size_t>(l)];
        if (lg.numel() % (T * T) != 0 || lg.dim(lg.ndim() - 1) != T)
            throw ShapeError("prior attention: logits " + shape_str(lg.shape()) + " do not match " +
                             std::to_string(T) + " tokens");
        Tensor heads = reshape(lg, {-1, T, T});
        Tensor key_mask = Tensor::from_vector(km, {1, 1, T}, lg.dtype());
        Tensor a = mean_dim(softmax_lastdim(heads, key_mask), 0);
        acc = acc.defined() ? add(acc, a) : a;
    }
    return mul_scalar(acc, 1.0 / double(layers_used));
}

MaePriors extract_priors(const MaeModel& model, const Tensor& imgs, const std::vector<TokenMask>& masks,
                         const std::vector<MaskMap>* pixel_masks) {
    const MaeConfig& c = model.config();
    check_images(c, imgs);
    const int64_t B = imgs.dim(0), g = c.grid();
    if (static_cast<int64_t>(masks.size()) != B) throw ShapeError("extract_priors: one mask per image");
    if (pixel_masks && static_cast<int64_t>(pixel_masks->size()) != B)
        throw ShapeError("extract_priors: one pixel mask per image");
    NoGradGuard ng;
    std::vector<Tensor> feats, attns;
    for (int64_t b = 0; b < B; ++b) {
        Tensor img = slice(imgs, 0, b, b + 1);
        std::vector<TokenMask> m{masks[static_cast<size_t>(b)]};
        Tensor enc = encode_visible(model, img, m);
        PartialMaskInput pin;
        const PartialMaskInput* pp = nullptr;
        if (pixel_masks && c.partial_embed) {
            pin = {img, {(*pixel_masks)[static_cast<size_t>(b)]}};
            pp = &pin;
        }
        DecodeResult dr = decode(model, enc, m, pp, true);
        Tensor f = dr.tokens[static_cast<size_t>(c.feature_layer - 1)];
        if (c.feature_layer == c.dec_layers) f = layer_norm(f, model.dec_norm_g, model.dec_norm_b, 1e-6);
        feats.push_back(reshape(f, {1, g, g, c.dim}));
        attns.push_back(unsqueeze0(masked_prior_attention(dr.logits, m.front(), c.attn_layers_used)));
    }
    return {concat(feats, 0), concat(attns, 0), masks};
}

TokenMask prior_token_mask(const MaskMap& m, int64_t patch) {
    TokenMask t = downsample_to_tokens(m, patch);
    if (t.count() < t.tokens()) return t;
    int64_t best = 0, best_n = patch * patch + 1;
    for (int64_t i = 0; i < t.tokens(); ++i) {
        const int64_t y0 = (i / t.gw) * patch, x0 = (i % t.gw) * patch;
        int64_t n = 0;
        for (int64_t y = 0; y < patch; ++y)
            for (int64_t x = 0; x < patch; ++x) n += m.at(y0 + y, x0 + x);
        if (n < best_n) {
            best_n = n;
            best = i;
        }
    }
    t.bits[static_cast<size_t>(best)] = 0;
    return t;
}

double mae_pretrain_step(MaeModel& model, Adam& opt, const Tensor& batch, Rng& rng, double lr) {
    const MaeConfig& c = model.config();
    check_images(c, batch);
    std::vector<TokenMask> masks;
    for (int64_t b = 0; b < batch.dim(0); ++b) {
        const double cont = rng.uniform(0.10, 0.50);
        masks.push_back(gen_mae_pretrain_mask(rng, c.grid(), c.grid(), cont));
    }
    model.params().zero_grad();
    Tensor enc = encode_visible(model, batch, masks);
    DecodeResult dr = decode(model, enc, masks, nullptr, false);
    Tensor loss = reconstruction_loss(dr.pixel_pred, batch, masks, c.patch, c.norm_pixel_target);
    backward(loss);
    opt.step(lr);
    return loss.item();
}

}  // namespace priorfill
