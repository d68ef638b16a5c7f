#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "priorfill/masking/masks.hpp"

using namespace priorfill;

namespace {

bool covers(const TokenMask& t, const MaskMap& m, int64_t patch) {
    MaskMap up = upsample_tokens(t, patch);
    for (size_t i = 0; i < m.bits.size(); ++i)
        if (m.bits[i] && !up.bits[i]) return false;
    return true;
}

}  // namespace

TEST_CASE("irregular masks hit their target ratio") {
    for (double target : {0.10, 0.30, 0.50}) {
        double lo = 1, hi = 0;
        for (uint64_t seed = 0; seed < 1000; ++seed) {
            Rng rng(seed);
            double r = gen_irregular(rng, 32, 32, target).ratio();
            lo = std::min(lo, r);
            hi = std::max(hi, r);
        }
        INFO("target " << target << " range " << lo << ".." << hi);
        CHECK(lo >= target - 0.05);
        CHECK(hi <= target + 0.05);
    }
}

TEST_CASE("polygon masks hit their target ratio") {
    for (double target : {0.10, 0.30, 0.50}) {
        double lo = 1, hi = 0;
        for (uint64_t seed = 0; seed < 1000; ++seed) {
            Rng rng(seed);
            double r = gen_polygon(rng, 32, 32, target).ratio();
            lo = std::min(lo, r);
            hi = std::max(hi, r);
        }
        INFO("target " << target << " range " << lo << ".." << hi);
        CHECK(lo >= target - 0.05);
        CHECK(hi <= target + 0.05);
    }
}

TEST_CASE("generators are pure functions of the seed") {
    Rng a(42), b(42);
    CHECK(gen_irregular(a, 32, 32, 0.3) == gen_irregular(b, 32, 32, 0.3));
    CHECK(gen_polygon(a, 32, 32, 0.3) == gen_polygon(b, 32, 32, 0.3));
    CHECK(gen_acr_training_mask(a, 32, 32).mask == gen_acr_training_mask(b, 32, 32).mask);
    CHECK(gen_mae_pretrain_mask(a, 8, 8, 0.4) == gen_mae_pretrain_mask(b, 8, 8, 0.4));
    CHECK(gen_random_token_mask(a, 4, 4) == gen_random_token_mask(b, 4, 4));
}

TEST_CASE("stroke union never decreases the ratio") {
    Rng rng(3);
    double prev = 0;
    for (double t : {0.1, 0.2, 0.3, 0.4, 0.5}) {
        Rng r1(11);
        double cur = gen_irregular(r1, 32, 32, t).ratio();
        CHECK(cur >= prev);
        prev = cur;
    }
}

TEST_CASE("a single polygon is simply connected") {
    for (uint64_t seed = 0; seed < 50; ++seed) {
        Rng rng(seed);
        MaskMap m(32, 32);
        paint_convex_polygon(rng, m, 200.0);
        CHECK(m.count() > 0);
        // Every row and column meets the convex region in at most one run.
        for (int64_t y = 0; y < 32; ++y) {
            int row_runs = 0, col_runs = 0;
            for (int64_t x = 0; x < 32; ++x) {
                if (m.at(y, x) && (x == 0 || !m.at(y, x - 1))) ++row_runs;
                if (m.at(x, y) && (x == 0 || !m.at(x - 1, y))) ++col_runs;
            }
            CHECK(row_runs <= 1);
            CHECK(col_runs <= 1);
        }
    }
}

TEST_CASE("training masks mix families at the stated rate") {
    int combined = 0;
    double lo = 1, hi = 0;
    for (uint64_t seed = 0; seed < 10000; ++seed) {
        Rng rng(seed);
        TrainingMask tm = gen_acr_training_mask(rng, 32, 32);
        if (tm.family == MaskFamily::combined) ++combined;
        lo = std::min(lo, tm.mask.ratio());
        hi = std::max(hi, tm.mask.ratio());
    }
    const double freq = combined / 10000.0;
    INFO("combined frequency " << freq << ", ratios " << lo << ".." << hi);
    CHECK(std::abs(freq - 0.20) <= 0.02);
    CHECK(lo >= 0.05);
    CHECK(hi <= 0.60);
}

TEST_CASE("token enlargement") {
    MaskMap one(8, 8);
    one.set(5, 2);
    TokenMask t = downsample_to_tokens(one, 4);
    CHECK(t.count() == 1);
    CHECK(t.masked(1 * 2 + 0));
    CHECK(downsample_to_tokens(MaskMap(8, 8), 2).count() == 0);
    MaskMap full(8, 8);
    std::fill(full.bits.begin(), full.bits.end(), 1);
    CHECK(downsample_to_tokens(full, 2).count() == 16);
    CHECK_THROWS_AS(downsample_to_tokens(MaskMap(6, 8), 4), ShapeError);

    // Every 4x4 pixel mask, patch 2.
    for (uint32_t pattern = 0; pattern < (1u << 16); ++pattern) {
        MaskMap m(4, 4);
        for (int i = 0; i < 16; ++i) m.bits[static_cast<size_t>(i)] = (pattern >> i) & 1;
        TokenMask tk = downsample_to_tokens(m, 2);
        REQUIRE(covers(tk, m, 2));
    }
    // Generated 8x8 masks, patch 2.
    for (uint64_t seed = 0; seed < 2000; ++seed) {
        Rng rng(seed);
        MaskMap m = seed % 2 ? gen_irregular(rng, 8, 8, 0.3) : gen_polygon(rng, 8, 8, 0.3);
        REQUIRE(covers(downsample_to_tokens(m, 2), m, 2));
    }
}

TEST_CASE("pretraining masks have the exact token budget") {
    Rng rng(9);
    CHECK(gen_mae_pretrain_mask(rng, 8, 8, 0.3).count() == 48);
    CHECK(gen_mae_pretrain_mask(rng, 16, 16, 0.5).count() == 192);
    for (int64_t g : {2, 3, 4, 5, 8, 16})
        for (uint64_t seed = 0; seed < 200; ++seed) {
            Rng r(seed);
            double cont = r.uniform(0.10, 0.50);
            TokenMask t = gen_mae_pretrain_mask(r, g, g, cont);
            REQUIRE(t.count() == std::llround(0.75 * double(g * g)));
            REQUIRE(t.count() < t.tokens());
        }
    CHECK_THROWS_AS(gen_mae_pretrain_mask(rng, 1, 3, 0.3), ShapeError);
}

TEST_CASE("random token masks") {
    Rng rng(1);
    CHECK(gen_random_token_mask(rng, 4, 4).count() == 12);
    std::vector<int> hits(16, 0);
    // 40000 draws: at 10000 the sampling spread of the largest of 16
    // marginals already sits near the 0.01 tolerance.
    const int draws = 40000;
    for (uint64_t seed = 0; seed < draws; ++seed) {
        Rng r(seed);
        TokenMask t = gen_random_token_mask(r, 4, 4, 0.75);
        for (int i = 0; i < 16; ++i) hits[static_cast<size_t>(i)] += t.bits[static_cast<size_t>(i)];
    }
    for (int h : hits) CHECK(std::abs(double(h) / draws - 0.75) <= 0.01);
}

TEST_CASE("square mask and tensor view") {
    MaskMap sq = square_mask(32, 32, 0.25);
    CHECK(sq.ratio() == doctest::Approx(0.25));
    CHECK(sq.at(16, 16) == 1);
    CHECK(sq.at(0, 0) == 0);
    Tensor t = masks_to_tensor({sq, MaskMap(32, 32)});
    CHECK(t.shape() == Shape{2, 1, 32, 32});
    CHECK(t.at(16 * 32 + 16) == 1.0);
}

TEST_CASE("rng state roundtrip") {
    Rng a(77);
    a.uniform();
    Rng b;
    b.set_state(a.state());
    for (int i = 0; i < 10; ++i) CHECK(a.next() == b.next());
    CHECK_THROWS_AS(b.set_state("garbage"), ConfigError);
}
