#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "priorfill/acr/acr.hpp"
#include "priorfill/metrics/metrics.hpp"
#include "priorfill/verify/gradcheck.hpp"
#include "priorfill/verify/oracles.hpp"

using namespace priorfill;

namespace {

double max_abs_diff(const Tensor& a, const Tensor& b) {
    auto va = a.to_vector(), vb = b.to_vector();
    REQUIRE(va.size() == vb.size());
    double m = 0;
    for (size_t i = 0; i < va.size(); ++i) m = std::max(m, std::abs(va[i] - vb[i]));
    return m;
}

TokenMask token_mask(int64_t g, std::initializer_list<int64_t> masked) {
    TokenMask t(g, g);
    for (int64_t i : masked) t.bits[static_cast<size_t>(i)] = 1;
    return t;
}

AcrConfig small_acr() {
    AcrConfig c;
    c.widths = {4, 8, 8, 8};
    c.n_ffc = 2;
    return c;
}

}  // namespace

TEST_CASE("fft roundtrip and energy") {
    DTypeScope f64(DType::f64);
    for (int64_t n : {4, 8, 16}) {
        Tensor x = randn({2, 3, n, n}, static_cast<uint64_t>(n));
        Tensor s = fft2d_stacked(x);
        CHECK(s.shape() == Shape{2, 6, n, n});
        CHECK(max_abs_diff(ifft2d_stacked(s), x) <= 1e-10);
        CHECK(sum(square(s)).item() == doctest::Approx(sum(square(x)).item()).epsilon(1e-10));
    }
}

TEST_CASE("global ratio 0 reduces the FFC to its convolution") {
    DTypeScope f64(DType::f64);
    ParamSet ps;
    Rng rng(1);
    FfcBlock blk = FfcBlock::create(ps, "f.", 4, 0, rng);
    Tensor x = randn({2, 4, 4, 4}, 2);
    for (bool training : {false, true}) {
        BatchNormState st = blk.out_bn;
        st.running_mean = st.running_mean.clone();
        st.running_var = st.running_var.clone();
        Tensor ref = add(x, relu(batch_norm(conv2d(x, blk.l2l_w, blk.l2l_b, {.pad = 1}), blk.out_g, blk.out_beta, st,
                                            training)));
        CHECK(max_abs_diff(ffc_forward(blk, x, training), ref) <= 1e-12);
    }
}

TEST_CASE("FFC preserves shape and rejects wrong channels") {
    ParamSet ps;
    Rng rng(3);
    FfcBlock blk = FfcBlock::create(ps, "f.", 8, 4, rng);
    CHECK(ffc_forward(blk, randn({1, 8, 8, 8}, 4), true).shape() == Shape{1, 8, 8, 8});
    CHECK(ffc_spectral(blk, randn({1, 4, 8, 8}, 5), true).shape() == Shape{1, 4, 8, 8});
    CHECK_THROWS_AS(ffc_forward(blk, randn({1, 6, 8, 8}, 6), true), ShapeError);
    CHECK_THROWS_AS(ffc_forward(blk, randn({1, 8, 6, 6}, 6), true), UnsupportedSizeError);
}

TEST_CASE("config validation") {
    AcrConfig c = small_acr();
    CHECK_NOTHROW(c.validate());
    c.global_ratio = 1.5;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = small_acr();
    c.n_ffc = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    CHECK(aggregation_mode_from_name("contextual") == AggregationMode::contextual);
    CHECK(std::string(aggregation_mode_name(AggregationMode::prior_attention)) == "prior_attention");
    CHECK_THROWS_AS(aggregation_mode_from_name("bogus"), ConfigError);
}

TEST_CASE("token cells roundtrip") {
    Tensor f = randn({2, 3, 8, 8}, 7);
    Tensor cells = to_token_cells(f, 4, 4);
    CHECK(cells.shape() == Shape{2, 16, 12});
    CHECK(from_token_cells(cells, 3, 4, 4, 2).to_vector() == f.to_vector());
    CHECK_THROWS_AS(to_token_cells(f, 3, 3), ShapeError);
}

TEST_CASE("prior attention aggregation matches explicit sums") {
    DTypeScope f64(DType::f64);
    const int64_t g = 2, s = 2, c = 3;
    Tensor f = randn({1, c, g * s, g * s}, 8);
    TokenMask m = token_mask(g, {0, 3});
    Tensor r = softmax_lastdim(randn({1, 4, 4}, 9));
    const double beta = 0.6;
    Tensor out = prior_attention_aggregate(f, r, {m}, Tensor::full({1}, beta));
    Tensor cells = to_token_cells(f, g, g);
    const int64_t D = c * s * s;
    std::vector<double> ref = cells.to_vector();
    for (int64_t q = 0; q < 4; ++q) {
        if (!m.masked(q)) continue;
        for (int64_t e = 0; e < D; ++e) {
            double acc = 0;
            for (int64_t u = 0; u < 4; ++u)
                if (!m.masked(u)) acc += r.at(q * 4 + u) * cells.at(u * D + e);
            ref[static_cast<size_t>(q * D + e)] += beta * acc;
        }
    }
    Tensor expect = from_token_cells(Tensor::from_vector(ref, {1, 4, D}), c, g, g, s);
    CHECK(max_abs_diff(out, expect) <= 1e-12);
    CHECK(prior_attention_aggregate(f, r, {m}, Tensor::zeros({1})).to_vector() == f.to_vector());
    CHECK_THROWS_AS(prior_attention_aggregate(f, randn({1, 9, 9}, 1), {m}, Tensor::zeros({1})), ShapeError);
}

TEST_CASE("aggregation does not differentiate through the attention") {
    DTypeScope f64(DType::f64);
    Tensor r = softmax_lastdim(randn({1, 4, 4}, 10));
    r.set_requires_grad(true);
    Tensor f = randn({1, 2, 4, 4}, 11);
    f.set_requires_grad(true);
    backward(sum(prior_attention_aggregate(f, r, {token_mask(2, {1})}, Tensor::ones({1}))));
    CHECK(f.grad().defined());
    CHECK_FALSE(r.grad().defined());
}

TEST_CASE("contextual attention matches the oracle") {
    DTypeScope f64(DType::f64);
    for (uint64_t seed = 0; seed < 5; ++seed) {
        Tensor f = randn({1, 3, 8, 8}, 20 + seed);
        TokenMask t = token_mask(4, {1, 2, 5, 10, 15});
        auto o = contextual_oracle(f, t, 0.7);
        Tensor out = contextual_attention(f, {t}, Tensor::full({1}, 0.7));
        Tensor w = contextual_weights(f, {t});
        // The oracle uses plain cosine; the kernel's norm epsilon moves results by ~1e-9.
        for (size_t i = 0; i < o.output.size(); ++i) REQUIRE(std::abs(o.output[i] - out.at(int64_t(i))) <= 1e-6);
        for (size_t i = 0; i < o.weights.size(); ++i) REQUIRE(std::abs(o.weights[i] - w.at(int64_t(i))) <= 1e-6);
    }
}

TEST_CASE("contextual argmax is invariant to positive rescaling") {
    TokenMask t = token_mask(4, {0, 5, 6, 9, 12});
    for (uint64_t seed = 0; seed < 10; ++seed) {
        Tensor f = randn({1, 4, 8, 8}, 40 + seed);
        auto base = attention_argmax_map(reshape(contextual_weights(f, {t}), {16, 16}), t);
        for (double k : {0.01, 3.0, 250.0}) {
            auto scaled = attention_argmax_map(reshape(contextual_weights(mul_scalar(f, k), {t}), {16, 16}), t);
            CHECK(scaled == base);
        }
    }
}

TEST_CASE("contextual weights only on masked queries over unmasked keys") {
    TokenMask t = token_mask(2, {0, 1});
    Tensor w = contextual_weights(randn({1, 2, 4, 4}, 50), {t});
    for (int64_t q = 0; q < 4; ++q) {
        double row = 0;
        for (int64_t k = 0; k < 4; ++k) {
            if (t.masked(k)) CHECK(w.at(q * 4 + k) == 0.0);
            row += w.at(q * 4 + k);
        }
        CHECK(row == doctest::Approx(t.masked(q) ? 1.0 : 0.0));
    }
}

TEST_CASE("acr forward shapes and range") {
    AcrModel m(small_acr(), 1);
    Tensor img = rand_uniform({2, 3, 32, 32}, 60);
    Tensor mask = masks_to_tensor({square_mask(32, 32, 0.25), square_mask(32, 32, 0.1)});
    Tensor out = acr_forward(m, img, mask, nullptr, nullptr, true);
    CHECK(out.shape() == Shape{2, 3, 32, 32});
    for (double v : out.to_vector()) REQUIRE((v >= 0.0 && v <= 1.0));
    CHECK_THROWS_AS(acr_forward(m, rand_uniform({1, 3, 36, 36}, 1), Tensor::zeros({1, 1, 36, 36}), nullptr,
                                nullptr, false),
                    ShapeError);
    CHECK_THROWS_AS(acr_forward(m, img, Tensor::zeros({2, 1, 16, 16}), nullptr, nullptr, false), ShapeError);
}

TEST_CASE("contextual mode runs and starts inert") {
    AcrConfig c = small_acr();
    AcrModel plain(c, 2);
    c.mode = AggregationMode::contextual;
    AcrModel ctx(c, 2);
    Tensor img = rand_uniform({1, 3, 32, 32}, 61);
    Tensor mask = masks_to_tensor({square_mask(32, 32, 0.25)});
    CHECK(max_abs_diff(acr_forward(plain, img, mask, nullptr, nullptr, false),
                       acr_forward(ctx, img, mask, nullptr, nullptr, false)) == 0.0);
}

TEST_CASE("discriminator shapes") {
    DiscConfig dc;
    dc.widths = {4, 8, 8, 8};
    Discriminator d(dc, 3);
    DiscOutput o = discriminate(d, rand_uniform({2, 3, 32, 32}, 62));
    CHECK(o.logits.shape() == Shape{2, 1, 2, 2});
    REQUIRE(o.features.size() == 4);
    CHECK(o.features[0].shape() == Shape{2, 4, 16, 16});
    CHECK(o.features[3].shape() == Shape{2, 8, 2, 2});
    CHECK_THROWS_AS(discriminate(d, rand_uniform({1, 3, 24, 24}, 63)), ShapeError);
    CHECK_THROWS_AS(discriminate(d, rand_uniform({1, 1, 32, 32}, 63)), ShapeError);
}
