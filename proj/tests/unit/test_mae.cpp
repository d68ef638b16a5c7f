#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "priorfill/mae/mae.hpp"
#include "priorfill/verify/gradcheck.hpp"

using namespace priorfill;

namespace {

MaeConfig tiny_config() {
    MaeConfig c;
    c.img = 16;
    c.patch = 4;
    c.enc_layers = 2;
    c.dec_layers = 2;
    c.dim = 16;
    c.heads = 2;
    c.mlp_ratio = 2;
    c.attn_layers_used = 2;
    c.feature_layer = 2;
    return c;
}

TokenMask mask_from(int64_t g, std::initializer_list<int64_t> masked) {
    TokenMask t(g, g);
    for (int64_t i : masked) t.bits[static_cast<size_t>(i)] = 1;
    return t;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    auto va = a.to_vector(), vb = b.to_vector();
    REQUIRE(va.size() == vb.size());
    double m = 0;
    for (size_t i = 0; i < va.size(); ++i) m = std::max(m, std::abs(va[i] - vb[i]));
    return m;
}

// Explicit-loop attention of one decoder block on pre-norm inputs x [T,d].
std::vector<double> oracle_layer(const TransformerBlock& blk, const Tensor& x_in, const TokenMask& mask) {
    const int64_t d = blk.dim, H = blk.heads, hd = d / H, T = x_in.dim(0);
    Tensor h = layer_norm(x_in, blk.ln1_g, blk.ln1_b, 1e-6);
    auto hv = h.to_vector(), w = blk.qkv_w.to_vector(), bv = blk.qkv_b.to_vector();
    std::vector<double> qkv(static_cast<size_t>(T * 3 * d), 0.0);
    for (int64_t t = 0; t < T; ++t)
        for (int64_t o = 0; o < 3 * d; ++o) {
            double s = bv[static_cast<size_t>(o)];
            for (int64_t i = 0; i < d; ++i) s += hv[static_cast<size_t>(t * d + i)] * w[static_cast<size_t>(i * 3 * d + o)];
            qkv[static_cast<size_t>(t * 3 * d + o)] = s;
        }
    std::vector<double> out(static_cast<size_t>(T * T), 0.0);
    for (int64_t head = 0; head < H; ++head)
        for (int64_t q = 0; q < T; ++q) {
            std::vector<double> e(static_cast<size_t>(T), 0.0);
            double z = 0;
            for (int64_t k = 0; k < T; ++k) {
                if (mask.masked(k)) continue;
                double s = 0;
                for (int64_t i = 0; i < hd; ++i)
                    s += qkv[static_cast<size_t>(q * 3 * d + head * hd + i)] *
                         qkv[static_cast<size_t>(k * 3 * d + d + head * hd + i)];
                e[static_cast<size_t>(k)] = std::exp(s / std::sqrt(double(hd)));
                z += e[static_cast<size_t>(k)];
            }
            for (int64_t k = 0; k < T; ++k) out[static_cast<size_t>(q * T + k)] += e[static_cast<size_t>(k)] / z / double(H);
        }
    return out;
}

}  // namespace

TEST_CASE("patchify layout and roundtrip") {
    Tensor img = rand_uniform({3, 32, 32}, 1);
    Tensor tok = patchify(img, 4);
    CHECK(tok.shape() == Shape{64, 48});
    // Token (0,0) holds pixels [0,4)x[0,4), channels innermost.
    for (int64_t y = 0; y < 4; ++y)
        for (int64_t x = 0; x < 4; ++x)
            for (int64_t c = 0; c < 3; ++c)
                CHECK(tok.at((y * 4 + x) * 3 + c) == img.at(c * 1024 + y * 32 + x));
    // Token (1,2) starts at pixel (4,8).
    CHECK(tok.at((1 * 8 + 2) * 48) == img.at(4 * 32 + 8));
    Tensor back = unpatchify(tok, 4, 3, 8, 8);
    CHECK(back.to_vector() == img.to_vector());
    Tensor batch = rand_uniform({2, 3, 16, 8}, 2);
    CHECK(unpatchify(patchify(batch, 4), 4, 3, 4, 2).to_vector() == batch.to_vector());
    CHECK_THROWS_AS(patchify(rand_uniform({3, 30, 32}, 1), 4), ShapeError);
}

TEST_CASE("config validation") {
    MaeConfig c;
    CHECK_NOTHROW(c.validate());
    c.heads = 5;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = MaeConfig{};
    c.img = 30;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = MaeConfig{};
    c.attn_layers_used = 5;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("encoder sees only visible tokens") {
    MaeModel m(MaeConfig{}, 3);
    Rng rng(4);
    TokenMask t = gen_random_token_mask(rng, 8, 8, 0.75);
    REQUIRE(t.count() == 48);
    Tensor img = rand_uniform({3, 32, 32}, 5);
    Tensor enc = encode_image(m, img, t);
    CHECK(enc.shape() == Shape{16, 64});
    CHECK(encode_image(m, img, t).to_vector() == enc.to_vector());
    TokenMask all(8, 8);
    std::fill(all.bits.begin(), all.bits.end(), 1);
    CHECK_THROWS_AS(encode_image(m, img, all), ContractError);

    // A visible token's output depends on the pixels of visible tokens only.
    Tensor img2 = img.clone();
    const int64_t hidden = t.masked_indices().front();
    const int64_t y0 = (hidden / 8) * 4, x0 = (hidden % 8) * 4;
    img2.set(y0 * 32 + x0, img2.at(y0 * 32 + x0) + 0.5);
    CHECK(encode_image(m, img2, t).to_vector() == enc.to_vector());
}

TEST_CASE("decoder output and recorded attention") {
    MaeModel m(tiny_config(), 6);
    TokenMask t = mask_from(4, {0, 1, 5, 6, 7, 10, 12, 13, 14, 15});
    Tensor img = rand_uniform({1, 3, 16, 16}, 7);
    DecodeResult r = decode(m, encode_visible(m, img, {t}), {t});
    CHECK(r.pixel_pred.shape() == Shape{1, 16, 48});
    REQUIRE(r.attn.size() == 2);
    for (const auto& a : r.attn) {
        CHECK(a.shape() == Shape{1, 16, 16});
        for (int64_t q = 0; q < 16; ++q) {
            double s = 0;
            for (int64_t k = 0; k < 16; ++k) s += a.at(q * 16 + k);
            CHECK(std::abs(s - 1.0) < 1e-6);
        }
    }
    Tensor wrong = rand_uniform({1, 5, 16}, 1);
    CHECK_THROWS_AS(decode(m, wrong, {t}), ShapeError);
}

TEST_CASE("mask token drives the masked predictions") {
    MaeConfig c = tiny_config();
    c.dec_layers = 1;
    c.attn_layers_used = 1;
    c.feature_layer = 1;
    MaeModel m(c, 8);
    TokenMask t = mask_from(4, {2, 3, 9});
    Tensor img = rand_uniform({1, 3, 16, 16}, 9);
    Tensor enc = encode_visible(m, img, {t});
    Tensor before = decode(m, enc, {t}).pixel_pred.clone();
    m.mask_token.copy_from(rand_uniform({16}, 10, -1, 1));
    Tensor after = decode(m, enc, {t}).pixel_pred;
    for (int64_t tok : {2, 3, 9}) {
        double diff = 0;
        for (int64_t i = 0; i < 48; ++i) diff += std::abs(after.at(tok * 48 + i) - before.at(tok * 48 + i));
        CHECK(diff > 1e-3);
    }
}

TEST_CASE("reconstruction loss") {
    Tensor img = rand_uniform({2, 3, 8, 8}, 11);
    std::vector<TokenMask> masks{mask_from(2, {0, 3}), mask_from(2, {1})};
    Tensor target = patchify(img, 4);
    CHECK(reconstruction_loss(target, img, masks, 4, false).item() == 0.0);

    // Differences on unmasked tokens only.
    Tensor pred = target.clone();
    pred.set(1 * 48 + 5, 9.0);
    pred.set(4 * 48 + 2, -3.0);
    CHECK(reconstruction_loss(pred, img, masks, 4, false).item() == 0.0);

    Tensor noisy = rand_uniform({2, 4, 48}, 12);
    double oracle = 0;
    int n = 0;
    for (int64_t b = 0; b < 2; ++b)
        for (int64_t tk = 0; tk < 4; ++tk) {
            if (!masks[static_cast<size_t>(b)].masked(tk)) continue;
            for (int64_t i = 0; i < 48; ++i) {
                const int64_t f = (b * 4 + tk) * 48 + i;
                oracle += std::pow(noisy.at(f) - target.at(f), 2);
                ++n;
            }
        }
    CHECK(std::abs(reconstruction_loss(noisy, img, masks, 4, false).item() - oracle / n) < 1e-7);

    Tensor norm;
    {
        DTypeScope f64(DType::f64);
        norm = normalize_patches(rand_uniform({5, 48}, 13, 0, 1, DType::f64));
    }
    for (int64_t r = 0; r < 5; ++r) {
        double mu = 0, var = 0;
        for (int64_t i = 0; i < 48; ++i) mu += norm.at(r * 48 + i) / 48;
        for (int64_t i = 0; i < 48; ++i) var += std::pow(norm.at(r * 48 + i) - mu, 2) / 48;
        CHECK(std::abs(mu) < 1e-6);
        CHECK(std::abs(std::sqrt(var) - 1) < 1e-4);
    }
    CHECK_THROWS_AS(reconstruction_loss(target, img, {TokenMask(2, 2), TokenMask(2, 2)}, 4, false),
                    ContractError);
}

TEST_CASE("prior attention matches the brute-force oracle") {
    DTypeScope f64(DType::f64);
    for (uint64_t seed = 0; seed < 4; ++seed) {
        MaeConfig c = tiny_config();
        c.dec_layers = 1 + static_cast<int64_t>(seed % 2);
        c.heads = 1 + static_cast<int64_t>((seed / 2) % 2);
        c.attn_layers_used = c.dec_layers;
        c.feature_layer = c.dec_layers;
        MaeModel m(c, seed);
        Rng rng(seed + 100);
        TokenMask t = gen_random_token_mask(rng, 4, 4, 0.5);
        Tensor img = rand_uniform({1, 3, 16, 16}, seed + 200, 0, 1, DType::f64);
        MaePriors p = extract_priors(m, img, {t});
        CHECK(p.features.shape() == Shape{1, 4, 4, 16});
        CHECK(p.attention.shape() == Shape{1, 16, 16});

        DecodeResult r = decode(m, encode_visible(m, img, {t}), {t});
        std::vector<double> oracle(256, 0.0);
        for (int64_t l = 0; l < c.dec_layers; ++l) {
            Tensor x = reshape(l == 0 ? r.input : r.tokens[static_cast<size_t>(l - 1)], {16, 16});
            auto o = oracle_layer(m.dec_blocks[static_cast<size_t>(l)], x, t);
            for (size_t i = 0; i < 256; ++i) oracle[i] += o[i] / double(c.dec_layers);
        }
        double diff = 0;
        for (size_t i = 0; i < 256; ++i) diff = std::max(diff, std::abs(oracle[i] - p.attention.at(int64_t(i))));
        CHECK(diff < 1e-5);

        for (int64_t q = 0; q < 16; ++q) {
            double s = 0;
            for (int64_t k = 0; k < 16; ++k) {
                if (t.masked(k)) CHECK(p.attention.at(q * 16 + k) == 0.0);
                s += p.attention.at(q * 16 + k);
            }
            CHECK(std::abs(s - 1) < 1e-5);
        }
        CHECK(extract_priors(m, img, {t}).attention.to_vector() == p.attention.to_vector());
    }
}

TEST_CASE("prior attention edge cases") {
    MaeModel m(tiny_config(), 21);
    Tensor img = rand_uniform({1, 3, 16, 16}, 22);
    TokenMask one(4, 4);
    std::fill(one.bits.begin(), one.bits.end(), 1);
    one.bits[6] = 0;
    MaePriors p = extract_priors(m, img, {one});
    for (int64_t q = 0; q < 16; ++q)
        for (int64_t k = 0; k < 16; ++k) CHECK(p.attention.at(q * 16 + k) == doctest::Approx(k == 6 ? 1.0 : 0.0));

    MaeConfig c1 = tiny_config();
    c1.attn_layers_used = 1;
    MaeModel m1(c1, 21);
    TokenMask t = mask_from(4, {0, 5, 9, 10});
    Tensor a1 = extract_priors(m1, img, {t}).attention;
    DecodeResult r;
    {
        NoGradGuard ng;
        r = decode(m1, encode_visible(m1, img, {t}), {t});
    }
    Tensor direct = masked_prior_attention({r.logits[0]}, t, 1);
    CHECK(max_abs_diff(reshape(a1, {16, 16}), direct) == 0.0);
}

TEST_CASE("prior token mask keeps one token visible") {
    MaskMap full(8, 8);
    std::fill(full.bits.begin(), full.bits.end(), 1);
    full.set(7, 7, 0);
    TokenMask t = prior_token_mask(full, 4);
    CHECK(t.count() == 3);
    CHECK(!t.masked(3));
    MaskMap part(8, 8);
    part.set(0, 0);
    CHECK(prior_token_mask(part, 4) == downsample_to_tokens(part, 4));
}

TEST_CASE("partial mask decoder input") {
    MaeConfig c = tiny_config();
    c.partial_embed = true;
    MaeModel mp(c, 30);
    MaeModel base(tiny_config(), 30);
    Tensor img = rand_uniform({1, 3, 16, 16}, 31);

    MaskMap pix(16, 16);
    for (int64_t y = 0; y < 4; ++y)
        for (int64_t x = 0; x < 4; ++x) pix.set(y, x);  // token 0 fully masked
    pix.set(5, 9);                                       // token 6 partially masked
    TokenMask t = downsample_to_tokens(pix, 4);
    REQUIRE(t.count() == 2);

    Tensor pin = partial_patch_input(img, {pix}, 4);
    CHECK(pin.shape() == Shape{1, 16, 64});
    for (int64_t i = 0; i < 16; ++i) {
        for (int64_t ch = 0; ch < 3; ++ch) CHECK(pin.at(i * 4 + ch) == 0.0);
        CHECK(pin.at(i * 4 + 3) == 1.0);
    }

    Tensor enc = encode_visible(mp, img, {t});
    PartialMaskInput in{img, {pix}};
    DecodeResult with = decode(mp, enc, {t}, &in);
    DecodeResult without = decode(mp, enc, {t});
    DecodeResult plain = decode(base, encode_visible(base, img, {t}), {t});
    CHECK(without.pixel_pred.to_vector() == plain.pixel_pred.to_vector());
    for (int64_t tok = 0; tok < 16; ++tok) {
        double diff = 0;
        for (int64_t i = 0; i < 16; ++i)
            diff = std::max(diff, std::abs(with.input.at(tok * 16 + i) - without.input.at(tok * 16 + i)));
        if (tok == 6)
            CHECK(diff > 0);
        else
            CHECK(diff == 0.0);
    }
    CHECK_THROWS_AS(decode(base, enc, {t}, &in), ConfigError);
}

TEST_CASE("pretraining step") {
    MaeConfig c = tiny_config();
    Tensor batch = rand_uniform({4, 3, 16, 16}, 40);
    std::vector<double> losses[2];
    for (int run = 0; run < 2; ++run) {
        MaeModel m(c, 41);
        Adam opt(m.params());
        Rng rng(42);
        for (int i = 0; i < 3; ++i) losses[run].push_back(mae_pretrain_step(m, opt, batch, rng, 1e-3));
    }
    CHECK(std::isfinite(losses[0][0]));
    CHECK(losses[0][0] > 0);
    CHECK(losses[0] == losses[1]);
}

TEST_CASE("transformer block gradients") {
    DTypeScope f64(DType::f64);
    ParamSet ps;
    Rng rng(50);
    TransformerBlock blk = TransformerBlock::create(ps, "b.", 8, 2, 2, rng);
    // Non-trivial norm parameters and biases.
    for (Tensor t : {blk.ln1_g, blk.ln2_g}) t.copy_from(rand_uniform(t.shape(), 51, 0.5, 1.5, DType::f64));
    for (Tensor t : {blk.qkv_b, blk.fc1_b, blk.ln1_b}) t.copy_from(randn(t.shape(), 52, 0.1, DType::f64));
    auto f = [&](const std::vector<Tensor>& in) {
        TransformerBlock b = blk;
        b.qkv_w = in[1];
        b.fc1_w = in[2];
        b.ln1_g = in[3];
        b.proj_w = in[4];
        return weighted_sum(block_forward(b, in[0]).out);
    };
    auto r = check_gradients("transformer block", f,
                             {randn({2, 5, 8}, 53, 1.0, DType::f64), blk.qkv_w.clone(), blk.fc1_w.clone(),
                              blk.ln1_g.clone(), blk.proj_w.clone()});
    INFO("max rel err " << r.max_rel_err);
    CHECK(r.passed);

    // Through the encoder entry: patch embedding plus one block.
    MaeConfig c = tiny_config();
    c.enc_layers = 1;
    MaeModel m(c, 54);
    TokenMask t = mask_from(4, {1, 2, 3, 8, 9, 15});
    auto fe = [&](const std::vector<Tensor>& in) {
        MaeModel mm = m;
        mm.patch_w = in[1];
        return weighted_sum(encode_visible(mm, in[0], {t}));
    };
    auto re = check_gradients("encoder", fe, {rand_uniform({1, 3, 16, 16}, 55, 0, 1, DType::f64), m.patch_w.clone()});
    INFO("encoder max rel err " << re.max_rel_err);
    CHECK(re.passed);
}
