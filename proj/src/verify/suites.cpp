#include "priorfill/verify/suites.hpp"

#include <cmath>
#include <filesystem>
#include <functional>
#include <set>
#include <sstream>

#include "priorfill/metrics/metrics.hpp"
#include "priorfill/numerics/ops.hpp"
#include "priorfill/trainer/trainer.hpp"
#include "priorfill/verify/oracles.hpp"

namespace priorfill {

namespace {

using Inputs = std::vector<Tensor>;

struct Collector {
    std::vector<GradCheckResult> results;
    void check(const std::string& name, const ScalarFn& f, Inputs in) {
        results.push_back(check_gradients(name, f, std::move(in)));
    }
    void unary(const std::string& name, Tensor (*op)(const Tensor&), Tensor x) {
        check(name, [op](const Inputs& in) { return weighted_sum(op(in[0])); }, {std::move(x)});
    }
};

Tensor rn(const Shape& s, uint64_t seed, double scale = 1.0) { return randn(s, seed, scale, DType::f64); }
Tensor ru(const Shape& s, uint64_t seed, double lo, double hi) { return rand_uniform(s, seed, lo, hi, DType::f64); }

TokenMask token_mask(int64_t g, std::initializer_list<int64_t> masked) {
    TokenMask t(g, g);
    for (int64_t i : masked) t.bits[static_cast<size_t>(i)] = 1;
    return t;
}

std::vector<GradCheckResult> numerics_suite() {
    Collector c;
    auto bin = [&](const std::string& name, Tensor (*op)(const Tensor&, const Tensor&), Shape sa, Shape sb) {
        c.check(name, [op](const Inputs& in) { return weighted_sum(op(in[0], in[1])); }, {rn(sa, 1), rn(sb, 2)});
    };
    bin("add (broadcast)", add, {2, 3}, {3});
    bin("sub (broadcast)", sub, {2, 1, 3}, {4, 1});
    bin("mul (broadcast)", mul, {2, 3}, {2, 1});
    c.check("div", [](const Inputs& in) { return weighted_sum(div(in[0], in[1])); }, {rn({2, 3}, 3), ru({2, 3}, 4, 0.5, 2)});
    c.check("add_scalar", [](const Inputs& in) { return weighted_sum(add_scalar(in[0], 0.3)); }, {rn({5}, 5)});
    c.check("mul_scalar", [](const Inputs& in) { return weighted_sum(mul_scalar(in[0], -1.7)); }, {rn({5}, 6)});
    c.unary("neg", neg, rn({5}, 7));
    c.check("expand_to", [](const Inputs& in) { return weighted_sum(expand_to(in[0], {3, 2, 4})); }, {rn({2, 1}, 8)});
    c.check("sum_to", [](const Inputs& in) { return weighted_sum(sum_to(in[0], {1, 4})); }, {rn({3, 4}, 9)});
    c.unary("exp", exp, rn({6}, 10));
    c.unary("log", log, ru({6}, 11, 0.2, 3));
    c.unary("sqrt", sqrt, ru({6}, 12, 0.2, 3));
    c.unary("abs", abs, rn({6}, 13));
    c.unary("square", square, rn({6}, 14));
    c.check("clamp_min", [](const Inputs& in) { return weighted_sum(clamp_min(in[0], 0.1)); }, {rn({8}, 15)});
    c.unary("relu", relu, rn({8}, 16));
    c.check("leaky_relu", [](const Inputs& in) { return weighted_sum(leaky_relu(in[0], 0.2)); }, {rn({8}, 17)});
    c.unary("sigmoid", sigmoid, rn({8}, 18, 2));
    c.unary("gelu", gelu, rn({8}, 19, 2));
    c.unary("tanh", tanh, rn({8}, 20, 2));
    c.check("sum", [](const Inputs& in) { return mul(sum(in[0]), sum(in[0])); }, {rn({2, 3}, 21)});
    c.check("mean", [](const Inputs& in) { return square(mean(in[0])); }, {rn({2, 3}, 22)});
    c.check("sum_dim", [](const Inputs& in) { return weighted_sum(sum_dim(in[0], 1, true)); }, {rn({2, 3, 2}, 23)});
    c.check("mean_dim", [](const Inputs& in) { return weighted_sum(mean_dim(in[0], -1)); }, {rn({2, 3, 2}, 24)});
    c.check("reshape", [](const Inputs& in) { return weighted_sum(reshape(in[0], {3, 4})); }, {rn({2, 6}, 25)});
    c.check("permute", [](const Inputs& in) { return weighted_sum(permute(in[0], {2, 0, 1})); }, {rn({2, 3, 4}, 26)});
    c.check("transpose", [](const Inputs& in) { return weighted_sum(transpose(in[0], 0, 2)); }, {rn({2, 3, 4}, 27)});
    c.check("slice", [](const Inputs& in) { return weighted_sum(slice(in[0], 1, 1, 3)); }, {rn({2, 4}, 28)});
    c.check("concat", [](const Inputs& in) { return weighted_sum(concat({in[0], in[1]}, 1)); }, {rn({2, 2}, 29), rn({2, 3}, 30)});
    c.check("gather_rows", [](const Inputs& in) { return weighted_sum(gather_rows(in[0], {{2, 0}, {1, 3}})); }, {rn({2, 4, 3}, 31)});
    c.check("scatter_rows", [](const Inputs& in) { return weighted_sum(scatter_rows(in[0], in[1], {{1}, {3}})); },
            {rn({2, 4, 3}, 32), rn({2, 1, 3}, 33)});
    c.check("matmul (batched)", [](const Inputs& in) { return weighted_sum(matmul(in[0], in[1])); }, {rn({2, 3, 4}, 34), rn({2, 4, 2}, 35)});
    c.check("linear", [](const Inputs& in) { return weighted_sum(linear(in[0], in[1], in[2])); }, {rn({3, 4}, 36), rn({4, 2}, 37), rn({2}, 38)});
    c.check("softmax (masked keys)", [](const Inputs& in) {
        Tensor km = Tensor::from_vector({0, 1, 0, 0, 1}, {1, 5}, DType::f64);
        return weighted_sum(softmax_lastdim(in[0], km));
    }, {rn({3, 5}, 39)});
    c.check("layer_norm", [](const Inputs& in) { return weighted_sum(layer_norm(in[0], in[1], in[2])); },
            {rn({3, 6}, 40), ru({6}, 41, 0.5, 1.5), rn({6}, 42)});
    c.check("batch_norm (training)", [](const Inputs& in) {
        BatchNormState st{Tensor::zeros({3}, DType::f64), Tensor::ones({3}, DType::f64)};
        return weighted_sum(batch_norm(in[0], in[1], in[2], st, true));
    }, {rn({2, 3, 3, 3}, 43), ru({3}, 44, 0.5, 1.5), rn({3}, 45)});
    c.check("batch_norm (eval)", [](const Inputs& in) {
        BatchNormState st{ru({3}, 46, -0.5, 0.5), ru({3}, 47, 0.5, 2)};
        return weighted_sum(batch_norm(in[0], in[1], in[2], st, false));
    }, {rn({2, 3, 2, 2}, 48), ru({3}, 49, 0.5, 1.5), rn({3}, 50)});
    c.check("conv2d", [](const Inputs& in) { return weighted_sum(conv2d(in[0], in[1], in[2], {.stride = 1, .pad = 1})); },
            {rn({2, 2, 5, 5}, 51), rn({3, 2, 3, 3}, 52), rn({3}, 53)});
    c.check("conv2d (stride 2, dilation 2)", [](const Inputs& in) {
        return weighted_sum(conv2d(in[0], in[1], Tensor(), {.stride = 2, .pad = 2, .dilation = 2}));
    }, {rn({1, 2, 6, 6}, 54), rn({2, 2, 3, 3}, 55)});
    c.check("conv2d (groups)", [](const Inputs& in) { return weighted_sum(conv2d(in[0], in[1], Tensor(), {.pad = 1, .groups = 2})); },
            {rn({1, 4, 4, 4}, 56), rn({4, 2, 3, 3}, 57)});
    c.check("deconv2d", [](const Inputs& in) { return weighted_sum(deconv2d(in[0], in[1], in[2], 2, 1, 1)); },
            {rn({1, 2, 3, 3}, 58), rn({2, 3, 3, 3}, 59), rn({3}, 60)});
    c.check("max_pool2d", [](const Inputs& in) { return weighted_sum(max_pool2d(in[0], 2, 2)); }, {rn({1, 2, 4, 4}, 61)});
    c.check("bilinear_resize", [](const Inputs& in) { return weighted_sum(bilinear_resize(in[0], 5, 7)); }, {rn({1, 2, 3, 4}, 62)});
    c.check("fft2d", [](const Inputs& in) { return weighted_sum(fft2d_stacked(in[0])); }, {rn({1, 2, 4, 4}, 63)});
    c.check("ifft2d", [](const Inputs& in) { return weighted_sum(ifft2d_stacked(in[0])); }, {rn({1, 4, 4, 4}, 64)});
    return std::move(c.results);
}

MaeConfig small_mae() {
    MaeConfig c;
    c.img = 16;
    c.patch = 4;
    c.dim = 8;
    c.heads = 2;
    c.mlp_ratio = 2;
    c.enc_layers = 1;
    c.dec_layers = 1;
    c.attn_layers_used = 1;
    c.feature_layer = 1;
    return c;
}

std::vector<GradCheckResult> mae_suite() {
    DTypeScope f64(DType::f64);
    Collector c;
    ParamSet ps;
    Rng rng(70);
    TransformerBlock blk = TransformerBlock::create(ps, "b.", 8, 2, 2, rng);
    for (Tensor t : {blk.ln1_g, blk.ln2_g}) t.copy_from(ru(t.shape(), 71, 0.5, 1.5));
    for (Tensor t : {blk.qkv_b, blk.fc1_b, blk.ln1_b}) t.copy_from(rn(t.shape(), 72, 0.1));
    c.check("transformer block", [&](const Inputs& in) {
        TransformerBlock b = blk;
        b.qkv_w = in[1];
        b.fc1_w = in[2];
        b.ln1_g = in[3];
        b.proj_w = in[4];
        return weighted_sum(block_forward(b, in[0]).out);
    }, {rn({2, 5, 8}, 73), blk.qkv_w.clone(), blk.fc1_w.clone(), blk.ln1_g.clone(), blk.proj_w.clone()});

    MaeModel m(small_mae(), 74);
    const TokenMask t = token_mask(4, {1, 2, 3, 8, 9, 15});
    c.check("mae encoder", [&](const Inputs& in) {
        MaeModel mm = m;
        mm.patch_w = in[1];
        return weighted_sum(encode_visible(mm, in[0], {t}));
    }, {ru({1, 3, 16, 16}, 75, 0, 1), m.patch_w.clone()});
    const Tensor img = ru({1, 3, 16, 16}, 76, 0, 1);
    c.check("mae decoder", [&](const Inputs& in) {
        MaeModel mm = m;
        mm.mask_token = in[0];
        mm.dec_embed_w = in[1];
        mm.pred_w = in[2];
        return weighted_sum(decode(mm, encode_visible(mm, img, {t}), {t}).pixel_pred);
    }, {m.mask_token.clone(), m.dec_embed_w.clone(), m.pred_w.clone()});
    c.check("reconstruction loss", [&](const Inputs& in) { return reconstruction_loss(in[0], img, {t}, 4, true); },
            {rn({1, 16, 48}, 77)});
    return std::move(c.results);
}

std::vector<GradCheckResult> upsampler_suite() {
    DTypeScope f64(DType::f64);
    Collector c;
    for (bool transposed : {false, true}) {
        ParamSet ps;
        Rng rng(80);
        GatedBlock blk = GatedBlock::create(ps, "g.", 3, 2, transposed, rng);
        blk.feat_b.copy_from(rn({2}, 81, 0.1));
        blk.gate_b.copy_from(rn({2}, 82, 0.1));
        c.check(transposed ? "gated deconv block" : "gated conv block", [&](const Inputs& in) {
            GatedBlock b = blk;
            b.feat_w = in[1];
            b.gate_w = in[2];
            b.bn_g = in[3];
            return weighted_sum(gated_block_forward(b, in[0], true));
        }, {rn({2, 3, 3, 3}, 83), blk.feat_w.clone(), blk.gate_w.clone(), ru({2}, 84, 0.5, 1.5)});
    }
    c.check("prior feature resize", [](const Inputs& in) {
        MaePriors p{in[0], Tensor(), {}};
        return weighted_sum(build_fp_prime(p, 32, 32));
    }, {rn({1, 2, 2, 3}, 85)});
    c.check("inject", [](const Inputs& in) { return weighted_sum(inject(in[0], in[1], in[2])); },
            {rn({1, 2, 3, 3}, 86), rn({1, 2, 3, 3}, 87), rn({1}, 88)});
    return std::move(c.results);
}

std::vector<GradCheckResult> acr_suite() {
    DTypeScope f64(DType::f64);
    Collector c;
    {
        ParamSet ps;
        Rng rng(90);
        FfcBlock blk = FfcBlock::create(ps, "f.", 4, 2, rng);
        c.check("ffc block", [&](const Inputs& in) {
            FfcBlock b = blk;
            b.l2l_w = in[1];
            b.spec_w = in[2];
            b.g2l_w = in[3];
            return weighted_sum(ffc_forward(b, in[0], true));
        }, {rn({2, 4, 4, 4}, 91), blk.l2l_w.clone(), blk.spec_w.clone(), blk.g2l_w.clone()});
    }
    const std::vector<TokenMask> masks{token_mask(2, {0, 3}), token_mask(2, {1})};
    c.check("prior attention aggregation", [&](const Inputs& in) {
        Tensor r = softmax_lastdim(rn({2, 4, 4}, 92));
        return weighted_sum(prior_attention_aggregate(in[0], r, masks, in[1]));
    }, {rn({2, 3, 4, 4}, 93), rn({1}, 94)});
    c.check("contextual attention", [&](const Inputs& in) { return weighted_sum(contextual_attention(in[0], masks, in[1])); },
            {rn({2, 2, 4, 4}, 95), rn({1}, 96)});
    {
        DiscConfig dc{3, {2, 3, 3, 2}};
        Discriminator d(dc, 97);
        c.check("discriminator", [&](const Inputs& in) {
            Discriminator dd = d;
            dd.w[0] = in[1];
            dd.head_w = in[2];
            DiscOutput o = discriminate(dd, in[0]);
            return add(weighted_sum(o.logits), weighted_sum(o.features[1], 98));
        }, {ru({1, 3, 16, 16}, 99, 0, 1), d.w[0].clone(), d.head_w.clone()});
    }
    {
        AcrConfig ac;
        ac.widths = {2, 3, 4, 4};
        ac.n_ffc = 1;
        AcrModel model(ac, 100);
        MaskMap mm = square_mask(16, 16, 0.25);
        Tensor mask = masks_to_tensor({mm}, DType::f64);
        c.check("acr forward", [&](const Inputs& in) {
            AcrModel mdl = model;
            mdl.out_w = in[1];
            return weighted_sum(acr_forward(mdl, in[0], mask, nullptr, nullptr, true));
        }, {ru({1, 3, 16, 16}, 101, 0, 1), model.out_w.clone()});
    }
    return std::move(c.results);
}

std::vector<GradCheckResult> losses_suite() {
    DTypeScope f64(DType::f64);
    Collector c;
    const Tensor mask = masks_to_tensor({square_mask(16, 16, 0.25)}, DType::f64);
    const Tensor real = ru({1, 3, 16, 16}, 110, 0, 1);
    c.check("l1_unmasked", [&](const Inputs& in) { return l1_unmasked(in[0], real, mask); }, {ru({1, 3, 16, 16}, 111, 0, 1)});
    c.check("disc_loss", [&](const Inputs& in) { return disc_loss(in[0], in[1], mask); }, {rn({1, 1, 2, 2}, 112), rn({1, 1, 2, 2}, 113)});
    c.check("gen_adv_loss", [](const Inputs& in) { return gen_adv_loss(in[0]); }, {rn({1, 1, 2, 2}, 114)});
    DiscConfig dc{3, {2, 3, 3, 2}};
    Discriminator d(dc, 115);
    c.check("gradient_penalty", [&](const Inputs& in) {
        Discriminator dd = d;
        dd.w[0] = in[0];
        dd.head_w = in[1];
        return gradient_penalty(as_disc_fn(dd), real);
    }, {d.w[0].clone(), d.head_w.clone()});
    c.check("feature_match", [&](const Inputs& in) { return feature_match(as_disc_fn(d), real, in[0]); },
            {ru({1, 3, 16, 16}, 116, 0, 1)});
    HrfExtractor hrf(1234, 3);
    const Tensor small_real = ru({1, 3, 8, 8}, 118, 0, 1);
    c.check("hrf_loss", [&](const Inputs& in) { return hrf_loss(hrf, small_real, in[0]); }, {ru({1, 3, 8, 8}, 117, 0, 1)});
    return std::move(c.results);
}

}  // namespace

bool GradSuiteReport::passed() const {
    for (const auto& r : results)
        if (!r.passed) return false;
    return !results.empty();
}

const GradCheckResult& GradSuiteReport::worst() const {
    if (results.empty()) throw ContractError("gradient suite has no results");
    const GradCheckResult* w = &results.front();
    for (const auto& r : results)
        if (!r.passed && w->passed) w = &r;
        else if (r.passed == w->passed && !(r.max_rel_err <= w->max_rel_err)) w = &r;
    return *w;
}

const std::vector<std::string>& gradcheck_modules() {
    static const std::vector<std::string> names{"numerics", "mae", "upsampler", "acr", "losses"};
    return names;
}

GradSuiteReport run_gradcheck_suite(const std::string& module) {
    GradSuiteReport rep;
    rep.module = module;
    if (module == "numerics") rep.results = numerics_suite();
    else if (module == "mae") rep.results = mae_suite();
    else if (module == "upsampler") rep.results = upsampler_suite();
    else if (module == "acr") rep.results = acr_suite();
    else if (module == "losses") rep.results = losses_suite();
    else throw ConfigError("no gradient suite for module '" + module + "'");
    return rep;
}

const std::vector<std::string>& selftest_modules() {
    static const std::vector<std::string> names{"numerics", "masking", "mae",     "upsampler", "acr",
                                                "losses",   "trainer", "metrics", "cli"};
    return names;
}

namespace {

struct SelfRunner {
    std::vector<SelfCheck> checks;
    void run(const std::string& suite, const std::string& name, const std::function<std::string()>& body) {
        SelfCheck c{suite, name, false, ""};
        try {
            c.detail = body();
            c.passed = c.detail.empty();
        } catch (const std::exception& e) {
            c.detail = std::string("exception: ") + e.what();
        }
        checks.push_back(std::move(c));
    }
};

std::string fail_if(bool bad, const std::string& what) { return bad ? what : std::string(); }

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(3);
    os << v;
    return os.str();
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    auto va = a.to_vector(), vb = b.to_vector();
    if (va.size() != vb.size()) return INFINITY;
    double m = 0;
    for (size_t i = 0; i < va.size(); ++i) m = std::max(m, std::abs(va[i] - vb[i]));
    return m;
}

}  // namespace

std::vector<SelfCheck> run_selftest() {
    SelfRunner s;

    s.run("numerics", "fft roundtrip and Parseval", [] {
        DTypeScope f64(DType::f64);
        Tensor x = randn({2, 3, 8, 8}, 1);
        const double rt = max_abs_diff(ifft2d_stacked(fft2d_stacked(x)), x);
        const double e_x = sum(square(x)).item(), e_f = sum(square(fft2d_stacked(x))).item();
        return fail_if(rt > 1e-6 || std::abs(e_x - e_f) > 1e-5 * e_x, "roundtrip " + fmt(rt) + ", energy " + fmt(e_x - e_f));
    });
    s.run("numerics", "masked softmax rows", [] {
        Tensor km = Tensor::from_vector({0, 1, 1, 0}, {1, 4});
        Tensor p = softmax_lastdim(randn({5, 4}, 2, 3.0), km);
        for (int64_t r = 0; r < 5; ++r) {
            if (p.at(r * 4 + 1) != 0.0 || p.at(r * 4 + 2) != 0.0) return std::string("masked entry not zero");
            if (std::abs(p.at(r * 4) + p.at(r * 4 + 3) - 1) > 1e-6) return std::string("row does not sum to 1");
        }
        return std::string();
    });
    s.run("numerics", "conv gradient", [] {
        auto r = run_gradcheck_suite("numerics");
        for (const auto& g : r.results)
            if (g.name == "conv2d") return fail_if(!g.passed, "max rel err " + fmt(g.max_rel_err));
        return std::string("conv2d check missing");
    });

    s.run("masking", "pretraining token budget", [] {
        for (int64_t g : {2, 4, 8})
            for (uint64_t seed = 0; seed < 50; ++seed) {
                Rng r(seed);
                TokenMask t = gen_mae_pretrain_mask(r, g, g, r.uniform(0.1, 0.5));
                if (t.count() != std::llround(0.75 * double(g * g))) return "grid " + std::to_string(g);
            }
        return std::string();
    });
    s.run("masking", "combined-mask frequency", [] {
        int combined = 0;
        for (uint64_t seed = 0; seed < 2000; ++seed) {
            Rng r(seed);
            combined += gen_acr_training_mask(r, 32, 32).family == MaskFamily::combined;
        }
        const double f = combined / 2000.0;
        return fail_if(std::abs(f - 0.2) > 0.03, "frequency " + fmt(f));
    });
    s.run("masking", "token enlargement covers the mask", [] {
        for (uint64_t seed = 0; seed < 200; ++seed) {
            Rng r(seed);
            MaskMap m = gen_irregular(r, 8, 8, 0.3);
            MaskMap up = upsample_tokens(downsample_to_tokens(m, 2), 2);
            for (size_t i = 0; i < m.bits.size(); ++i)
                if (m.bits[i] && !up.bits[i]) return "seed " + std::to_string(seed);
        }
        return std::string();
    });

    s.run("mae", "prior attention oracle", [] {
        DTypeScope f64(DType::f64);
        MaeConfig c = small_mae();
        c.dec_layers = c.attn_layers_used = c.feature_layer = 2;
        MaeModel m(c, 3);
        TokenMask t = token_mask(4, {0, 1, 5, 6, 10, 15});
        Tensor img = ru({1, 3, 16, 16}, 4, 0, 1);
        MaePriors p = extract_priors(m, img, {t});
        auto o = prior_attention_oracle(m, img, t);
        double diff = 0;
        for (size_t i = 0; i < o.size(); ++i) diff = std::max(diff, std::abs(o[i] - p.attention.at(int64_t(i))));
        return fail_if(diff > 1e-5, "max diff " + fmt(diff));
    });
    s.run("mae", "attention rows normalised", [] {
        MaeModel m(small_mae(), 5);
        TokenMask t = token_mask(4, {2, 3, 7, 11});
        MaePriors p = extract_priors(m, rand_uniform({1, 3, 16, 16}, 6), {t});
        for (int64_t q = 0; q < 16; ++q) {
            double sum_row = 0;
            for (int64_t k = 0; k < 16; ++k) {
                if (t.masked(k) && p.attention.at(q * 16 + k) != 0.0) return std::string("masked key has weight");
                sum_row += p.attention.at(q * 16 + k);
            }
            if (std::abs(sum_row - 1) > 1e-5) return "row " + std::to_string(q) + " sums to " + fmt(sum_row);
        }
        return std::string();
    });

    s.run("upsampler", "zero-init inertness", [] {
        RunConfig c;
        c.mae = small_mae();
        c.mae.img = 32;
        c.mae.patch = 8;
        c.acr.widths = {4, 8, 8, 8};
        c.acr.n_ffc = 2;
        c.image_size = 32;
        auto mae = std::make_shared<MaeModel>(c.mae, 7);
        InpaintingModel with(c, mae);
        RunConfig off = c;
        off.use_mae = false;
        InpaintingModel without(off, nullptr);
        Tensor img = rand_uniform({1, 3, 32, 32}, 8);
        std::vector<MaskMap> m{square_mask(32, 32, 0.25)};
        const double d = max_abs_diff(with.forward(img, m, false), without.forward(img, m, false));
        return fail_if(d >= 1e-6, "max diff " + fmt(d));
    });
    s.run("upsampler", "gates strictly inside (0,1)", [] {
        ParamSet ps;
        Rng rng(9);
        GatedBlock b = GatedBlock::create(ps, "g.", 2, 3, false, rng);
        for (double v : gated_block_gate(b, randn({1, 2, 6, 6}, 10, 5.0)).to_vector())
            if (!(v > 0.0 && v < 1.0)) return "gate value " + fmt(v);
        return std::string();
    });

    s.run("acr", "global ratio 0 is the convolutional path", [] {
        DTypeScope f64(DType::f64);
        ParamSet ps;
        Rng rng(11);
        FfcBlock blk = FfcBlock::create(ps, "f.", 4, 0, rng);
        Tensor x = randn({1, 4, 4, 4}, 12);
        Tensor ref = add(x, relu(batch_norm(conv2d(x, blk.l2l_w, blk.l2l_b, {.pad = 1}), blk.out_g, blk.out_beta,
                                            blk.out_bn, false)));
        const double d = max_abs_diff(ffc_forward(blk, x, false), ref);
        return fail_if(d > 1e-6, "max diff " + fmt(d));
    });
    s.run("acr", "contextual attention oracle", [] {
        DTypeScope f64(DType::f64);
        Tensor f = randn({1, 3, 4, 4}, 13);
        TokenMask t = token_mask(2, {1, 2});
        auto o = contextual_oracle(f, t, 0.7);
        Tensor out = contextual_attention(f, {t}, Tensor::full({1}, 0.7));
        double d = 0;
        for (size_t i = 0; i < o.output.size(); ++i) d = std::max(d, std::abs(o.output[i] - out.at(int64_t(i))));
        return fail_if(d > 1e-5, "max diff " + fmt(d));
    });

    s.run("losses", "constant discriminator", [] {
        DTypeScope f64(DType::f64);
        Tensor z = Tensor::zeros({1, 1, 2, 2});
        Tensor m = Tensor::zeros({1, 1, 32, 32});
        const double v = disc_loss(z, z, m).item();
        return fail_if(std::abs(v - 2 * std::log(2.0)) > 1e-6, "loss " + fmt(v));
    });
    s.run("losses", "linear discriminator penalty", [] {
        DTypeScope f64(DType::f64);
        Tensor w = randn({1, 3, 4, 4}, 14);
        DiscFn d = [w](const Tensor& x) { return DiscOutput{sum_dim(reshape(mul(x, w), {1, -1}), 1, true), {}}; };
        const double gp = gradient_penalty(d, rand_uniform({1, 3, 4, 4}, 15)).item();
        const double ref = sum(square(w)).item();
        return fail_if(std::abs(gp - ref) > 1e-6 * ref, "penalty " + fmt(gp) + " vs " + fmt(ref));
    });

    s.run("trainer", "learning rate halving", [] {
        return fail_if(lr_schedule(850000, 1e-3, 200000) != 1e-3 / 16, "schedule");
    });
    s.run("trainer", "checkpoint roundtrip", [] {
        const auto dir = std::filesystem::temp_directory_path() / "priorfill_selftest_ckpt";
        Checkpoint ck;
        ck.model_kind = "selftest";
        ck.tensors.push_back({"x", randn({4, 5}, 16)});
        save_checkpoint(dir.string(), ck);
        Checkpoint back = load_checkpoint(dir.string());
        std::filesystem::remove_all(dir);
        return fail_if(back.tensor("x").to_vector() != ck.tensors[0].tensor.to_vector(), "tensor changed");
    });

    s.run("metrics", "psnr and ssim anchors", [] {
        DTypeScope f64(DType::f64);
        Tensor a = Tensor::full({3, 16, 16}, 0.5);
        const double p = psnr(a, add_scalar(a, 0.1));
        Tensor x = rand_uniform({3, 16, 16}, 17);
        const double q = ssim(x, x);
        return fail_if(std::abs(p - 20) > 0.01 || std::abs(q - 1) > 1e-9, "psnr " + fmt(p) + ", ssim " + fmt(q));
    });
    s.run("metrics", "attention argmax indexes visible tokens", [] {
        MaeModel m(small_mae(), 18);
        TokenMask t = token_mask(4, {0, 4, 5, 9, 13});
        auto am = attention_argmax_map(reshape(extract_priors(m, rand_uniform({1, 3, 16, 16}, 19), {t}).attention, {16, 16}), t);
        for (int64_t i = 0; i < 16; ++i) {
            const int64_t a = am[static_cast<size_t>(i)];
            if (t.masked(i) ? (a < 0 || t.masked(a)) : a != -1) return "token " + std::to_string(i);
        }
        return std::string();
    });

    s.run("cli", "selftest covers every module", [&s] {
        std::set<std::string> seen;
        for (const auto& c : s.checks) seen.insert(c.suite);
        for (const auto& m : selftest_modules())
            if (m != "cli" && !seen.count(m)) return "no check for " + m;
        return std::string();
    });
    return std::move(s.checks);
}

}  // namespace priorfill
