// Acceptance run: one PASS/FAIL line per criterion.

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <set>
#include <sstream>

#include "priorfill/metrics/metrics.hpp"
#include "priorfill/trainer/trainer.hpp"
#include "priorfill/verify/gradcheck.hpp"
#include "priorfill/verify/oracles.hpp"
#include "priorfill/verify/suites.hpp"

using namespace priorfill;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool passed = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    auto va = a.to_vector(), vb = b.to_vector();
    if (va.size() != vb.size()) return INFINITY;
    double m = 0;
    for (size_t i = 0; i < va.size(); ++i) m = std::max(m, std::abs(va[i] - vb[i]));
    return m;
}

std::string read_file(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

fs::path scratch(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("priorfill_acceptance_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

// Token mask with at least one visible token.
TokenMask random_token_mask(Rng& rng, int64_t g, double ratio) {
    TokenMask t = gen_random_token_mask(rng, g, g, ratio);
    if (t.count() == t.tokens()) t.bits[static_cast<size_t>(rng.uniform_int(0, t.tokens() - 1))] = 0;
    return t;
}

// ---------------------------------------------------------------------------

Outcome gradient_integrity() {
    const auto t0 = std::chrono::steady_clock::now();
    int64_t checks = 0;
    GradCheckResult worst;
    std::vector<std::string> failed;
    std::set<std::string> names;
    for (const auto& m : gradcheck_modules()) {
        GradSuiteReport r = run_gradcheck_suite(m);
        for (const auto& g : r.results) {
            ++checks;
            names.insert(g.name);
            if (!g.passed) failed.push_back(m + "/" + g.name);
            if (g.max_rel_err >= worst.max_rel_err) worst = g;
        }
    }
    const double secs = seconds_since(t0);
    std::vector<std::string> missing;
    for (const char* n : {"gated deconv block", "ffc block", "transformer block", "discriminator"})
        if (!names.count(n)) missing.push_back(n);
    std::string detail = fmt("%lld checks, worst %s %.3e, %.1f s", static_cast<long long>(checks), worst.name.c_str(),
                             worst.max_rel_err, secs);
    for (const auto& f : failed) detail += ", failed " + f;
    for (const auto& m : missing) detail += ", missing " + m;
    return {failed.empty() && missing.empty() && secs < 180.0, detail};
}

Outcome prior_attention_oracle_check() {
    DTypeScope f64(DType::f64);
    double worst = 0, worst_row = 0;
    bool zeros_exact = true;
    int cases = 0;
    struct Shape2 {
        int64_t img, patch;
    };
    for (Shape2 s : {Shape2{8, 4}, Shape2{12, 4}, Shape2{16, 4}})
        for (int64_t layers : {1, 2})
            for (int64_t heads : {1, 2})
                for (uint64_t seed = 0; seed < 4; ++seed) {
                    MaeConfig c;
                    c.img = s.img;
                    c.patch = s.patch;
                    c.dim = 8;
                    c.heads = heads;
                    c.mlp_ratio = 2;
                    c.enc_layers = 1;
                    c.dec_layers = c.attn_layers_used = c.feature_layer = layers;
                    MaeModel m(c, 10 * seed + static_cast<uint64_t>(layers * 3 + heads));
                    Rng rng(seed * 7 + 1);
                    TokenMask t = random_token_mask(rng, c.grid(), rng.uniform(0.2, 0.8));
                    Tensor img = rand_uniform({1, 3, c.img, c.img}, seed + 100);
                    MaePriors p = extract_priors(m, img, {t});
                    auto o = prior_attention_oracle(m, img, t);
                    const int64_t T = c.tokens();
                    for (int64_t q = 0; q < T; ++q) {
                        double row = 0;
                        for (int64_t k = 0; k < T; ++k) {
                            const double v = p.attention.at(q * T + k);
                            worst = std::max(worst, std::abs(v - o[static_cast<size_t>(q * T + k)]));
                            if (t.masked(k) && v != 0.0) zeros_exact = false;
                            row += v;
                        }
                        if (t.masked(q)) worst_row = std::max(worst_row, std::abs(row - 1.0));
                    }
                    ++cases;
                }
    return {worst <= 1e-5 && worst_row <= 1e-5 && zeros_exact,
            fmt("%d models (T 4..16, 1-2 layers, 1-2 heads), max diff %.2e, row-sum err %.2e, masked keys %s", cases,
                worst, worst_row, zeros_exact ? "exactly 0" : "NONZERO")};
}

Outcome contextual_oracle_check() {
    DTypeScope f64(DType::f64);
    double worst = 0;
    int cases = 0, argmax_cases = 0;
    bool invariant = true;
    for (int64_t g : {2, 4})
        for (int64_t s : {1, 2})
            for (uint64_t seed = 0; seed < 5; ++seed) {
                const int64_t c = 3, n = g * s;
                Tensor f = randn({1, c, n, n}, seed * 13 + static_cast<uint64_t>(g + s));
                Rng rng(seed + 50);
                TokenMask t = random_token_mask(rng, g, 0.5);
                if (t.count() == 0) t.bits[0] = 1;
                const double beta = rng.uniform(-1, 1);
                auto o = contextual_oracle(f, t, beta);
                Tensor out = contextual_attention(f, {t}, Tensor::full({1}, beta));
                for (size_t i = 0; i < o.output.size(); ++i)
                    worst = std::max(worst, std::abs(o.output[i] - out.at(static_cast<int64_t>(i))));
                ++cases;

                // Each unmasked cell scaled by its own positive factor.
                Tensor scale = Tensor::ones({1, 1, n, n});
                for (int64_t tok = 0; tok < t.tokens(); ++tok) {
                    if (t.masked(tok)) continue;
                    const double k = std::exp(rng.uniform(-3, 3));
                    for (int64_t y = 0; y < s; ++y)
                        for (int64_t x = 0; x < s; ++x)
                            scale.set(((tok / g) * s + y) * n + (tok % g) * s + x, k);
                }
                const int64_t T = g * g;
                auto a = attention_argmax_map(reshape(contextual_weights(f, {t}), {T, T}), t);
                auto b = attention_argmax_map(reshape(contextual_weights(mul(f, scale), {t}), {T, T}), t);
                invariant = invariant && a == b;
                ++argmax_cases;
            }
    return {worst <= 1e-5 && invariant,
            fmt("%d cases, max diff %.2e; argmax %s under per-cell positive rescaling (%d cases)", cases, worst,
                invariant ? "unchanged" : "CHANGED", argmax_cases)};
}

Outcome masking_statistics() {
    int64_t budget_cases = 0, budget_bad = 0;
    for (int64_t gh : {2, 3, 4, 5, 6, 8, 16})
        for (int64_t gw : {2, 4, 7, 8, 16})
            for (uint64_t seed = 0; seed < 100; ++seed) {
                Rng r(seed);
                TokenMask t = gen_mae_pretrain_mask(r, gh, gw, r.uniform(0.10, 0.50));
                ++budget_cases;
                if (t.count() != std::llround(0.75 * double(gh * gw))) ++budget_bad;
            }

    int combined = 0;
    for (uint64_t seed = 0; seed < 10000; ++seed) {
        Rng r(seed);
        combined += gen_acr_training_mask(r, 32, 32).family == MaskFamily::combined;
    }
    const double freq = combined / 10000.0;

    // Token enlargement on 8x8 grids, patch 2: each token depends only on its
    // own 2x2 block, so every block pattern is tried at every token position
    // over random surroundings, and the token mask must equal "any pixel masked".
    int64_t enlarge_cases = 0, enlarge_bad = 0;
    auto check = [&](const MaskMap& m) {
        TokenMask t = downsample_to_tokens(m, 2);
        ++enlarge_cases;
        for (int64_t ty = 0; ty < 4; ++ty)
            for (int64_t tx = 0; tx < 4; ++tx) {
                bool any = false;
                for (int64_t y = 0; y < 2; ++y)
                    for (int64_t x = 0; x < 2; ++x) any = any || m.at(ty * 2 + y, tx * 2 + x);
                if (any != bool(t.masked(ty * 4 + tx))) {
                    ++enlarge_bad;
                    return;
                }
            }
    };
    Rng bg(99);
    for (int64_t tok = 0; tok < 16; ++tok)
        for (uint32_t pattern = 0; pattern < 16; ++pattern)
            for (int rep = 0; rep < 64; ++rep) {
                MaskMap m(8, 8);
                for (auto& b : m.bits) b = bg.bernoulli(0.5);
                for (int i = 0; i < 4; ++i)
                    m.set((tok / 4) * 2 + i / 2, (tok % 4) * 2 + i % 2, (pattern >> i) & 1);
                check(m);
            }
    for (uint64_t seed = 0; seed < 20000; ++seed) {
        Rng r(seed);
        check(seed % 2 ? gen_irregular(r, 8, 8, r.uniform(0.05, 0.6)) : gen_polygon(r, 8, 8, r.uniform(0.05, 0.6)));
    }

    return {budget_bad == 0 && std::abs(freq - 0.20) <= 0.02 && enlarge_bad == 0,
            fmt("75%% budget exact on %lld/%lld masks; combined frequency %.4f over 10000 seeds; enlargement exact on "
                "%lld/%lld 8x8 masks",
                static_cast<long long>(budget_cases - budget_bad), static_cast<long long>(budget_cases), freq,
                static_cast<long long>(enlarge_cases - enlarge_bad), static_cast<long long>(enlarge_cases))};
}

Outcome zero_init_inertness() {
    double worst = 0;
    for (uint64_t seed = 0; seed < 20; ++seed) {
        RunConfig c;
        c.seed = seed;
        RunConfig off = c;
        off.use_mae = false;
        auto mae = std::make_shared<MaeModel>(c.mae, seed + 500);
        InpaintingModel with(c, mae);
        InpaintingModel without(off, nullptr);
        Rng rng(seed + 1000);
        std::vector<MaskMap> masks{gen_acr_training_mask(rng, 32, 32).mask, gen_acr_training_mask(rng, 32, 32).mask};
        Tensor img = rand_uniform({2, 3, 32, 32}, seed + 2000);
        NoGradGuard ng;
        worst = std::max(worst, max_abs_diff(with.forward(img, masks, false), without.forward(img, masks, false)));
        worst = std::max(worst, max_abs_diff(with.forward(img, masks, true), without.forward(img, masks, true)));
    }
    return {worst < 1e-6, fmt("20 seeds, train and eval mode, max abs diff %.2e", worst)};
}

Outcome ffc_spectral_correctness() {
    DTypeScope f64(DType::f64);
    double rt = 0, parseval = 0, ratio0 = 0;
    for (int64_t n : {2, 4, 8, 16, 32})
        for (uint64_t seed = 0; seed < 3; ++seed) {
            Tensor x = randn({2, 3, n, n}, seed * 31 + static_cast<uint64_t>(n));
            Tensor s = fft2d_stacked(x);
            rt = std::max(rt, max_abs_diff(ifft2d_stacked(s), x));
            const double ex = sum(square(x)).item(), es = sum(square(s)).item();
            parseval = std::max(parseval, std::abs(ex - es) / ex);
        }
    for (uint64_t seed = 0; seed < 5; ++seed) {
        ParamSet ps;
        Rng rng(seed);
        FfcBlock blk = FfcBlock::create(ps, "f.", 6, 0, rng);
        Tensor x = randn({2, 6, 8, 8}, seed + 7);
        for (bool training : {false, true}) {
            BatchNormState st{blk.out_bn.running_mean.clone(), blk.out_bn.running_var.clone(), blk.out_bn.momentum,
                              blk.out_bn.eps};
            Tensor ref = add(x, relu(batch_norm(conv2d(x, blk.l2l_w, blk.l2l_b, {.pad = 1}), blk.out_g, blk.out_beta, st,
                                                training)));
            ratio0 = std::max(ratio0, max_abs_diff(ffc_forward(blk, x, training), ref));
        }
    }
    return {rt < 1e-6 && ratio0 < 1e-6 && parseval <= 1e-5,
            fmt("roundtrip %.2e, ratio-0 FFC vs conv path %.2e, Parseval rel err %.2e", rt, ratio0, parseval)};
}

Outcome loss_formulas() {
    DTypeScope f64(DType::f64);
    double err = 0;
    auto note = [&](double got, double want) { err = std::max(err, std::abs(got - want)); };

    // l1 against an explicit sum.
    Tensor p = rand_uniform({2, 3, 8, 8}, 1), g = rand_uniform({2, 3, 8, 8}, 2);
    Rng rng(3);
    MaskMap ma = gen_irregular(rng, 8, 8, 0.3), mb = gen_polygon(rng, 8, 8, 0.4);
    Tensor mask = masks_to_tensor({ma, mb});
    double l1 = 0;
    for (int64_t i = 0; i < p.numel(); ++i) l1 += std::abs(p.at(i) - g.at(i)) * (1.0 - mask.at(i / 192 * 64 + i % 64));
    note(l1_unmasked(p, g, mask).item(), l1 / double(p.numel()));

    // Constant discriminator.
    Tensor zero = Tensor::zeros({2, 1, 2, 2});
    note(disc_loss(zero, zero, Tensor::zeros({2, 1, 8, 8})).item(), 2 * std::log(2.0));
    note(disc_loss(zero, zero, Tensor::ones({2, 1, 8, 8})).item(), 2 * std::log(2.0));

    // Hand case: real logits r, fake logits f, one hole cell.
    Tensor rl = Tensor::from_vector({0.5, -1.0, 2.0, 0.0}, {1, 1, 2, 2});
    Tensor fl = Tensor::from_vector({1.0, -0.5, 0.3, -2.0}, {1, 1, 2, 2});
    Tensor hm = Tensor::zeros({1, 1, 2, 2});
    hm.set(3, 1.0);
    auto sig = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
    double real_term = 0, known = 0, hole = 0;
    for (int i = 0; i < 4; ++i) real_term -= std::log(sig(rl.at(i))) / 4;
    for (int i = 0; i < 3; ++i) known -= std::log(sig(fl.at(i))) / 4;
    hole -= std::log(1 - sig(fl.at(3))) / 4;
    note(disc_loss(rl, fl, hm).item(), real_term + known + hole);

    // Linear discriminator penalty.
    for (uint64_t seed = 0; seed < 3; ++seed) {
        Tensor w = randn({1, 3, 4, 4}, 10 + seed);
        DiscFn d = [w](const Tensor& x) {
            const int64_t B = x.dim(0);
            return DiscOutput{reshape(sum_dim(reshape(mul(x, w), {B, -1}), 1, true), {B, 1, 1, 1}), {}};
        };
        note(gradient_penalty(d, rand_uniform({2, 3, 4, 4}, 20 + seed)).item(), sum(square(w)).item());
    }

    // Feature matching against explicit means.
    std::vector<Tensor> fr{randn({1, 2, 4, 4}, 30), randn({1, 3, 2, 2}, 31)};
    std::vector<Tensor> ff{randn({1, 2, 4, 4}, 32), randn({1, 3, 2, 2}, 33)};
    double fm = 0;
    for (size_t k = 0; k < 2; ++k) {
        double s = 0;
        for (int64_t i = 0; i < fr[k].numel(); ++i) s += std::abs(fr[k].at(i) - ff[k].at(i));
        fm += s / double(fr[k].numel()) / 2;
    }
    note(feature_match(fr, ff).item(), fm);

    // Weights read from a config file.
    const fs::path dir = scratch("weights");
    save_run_config((dir / "run.json").string(), RunConfig{});
    RunConfig loaded = load_run_config((dir / "run.json").string());
    fs::remove_all(dir);
    const LossWeights& w = loaded.weights;
    const bool defaults = w.l1 == 10 && w.adv == 10 && w.fm == 100 && w.hrf == 30 && w.gp == 1e-3;
    GeneratorLossTerms t{Tensor::scalar(0.1), Tensor::scalar(0.2), Tensor::scalar(0.3), Tensor::scalar(0.4)};
    note(total_generator_loss(t, w).item(), 10 * 0.1 + 10 * 0.2 + 100 * 0.3 + 30 * 0.4);

    return {err <= 1e-6 && defaults,
            fmt("max oracle error %.2e; weights from config (%g, %g, %g, %g, GP %g)", err, w.l1, w.adv, w.fm, w.hrf, w.gp)};
}

// Shared by criteria 8 and 9.
struct MaeRun {
    RunConfig cfg;
    std::shared_ptr<MaeModel> model;
    MaeTrainResult result;
    double secs = 0;
};

MaeRun pretrain_toy_mae() {
    MaeRun r;
    r.cfg.seed = 0;
    r.cfg.deterministic = true;
    r.cfg.batch_size = 8;
    r.cfg.synthetic_count = 8;
    r.cfg.lr_mae = 1e-3;
    r.cfg.mae_steps = 5000;
    Dataset ds = Dataset::synthetic(8, r.cfg.mae.img, r.cfg.seed);
    MaeTrainOptions opt;
    opt.eval_every = 100;
    opt.stop_below = 0.01;
    const auto t0 = std::chrono::steady_clock::now();
    r.model = make_mae(r.cfg);
    r.result = pretrain_mae(r.cfg, *r.model, ds, opt);
    r.secs = seconds_since(t0);
    return r;
}

Outcome toy_mae(const MaeRun& first) {
    const auto& ev = first.result.evals;
    const bool reached = !ev.empty() && ev.back().second < 0.01;
    // Same run again from scratch: the loss curve must match bit for bit.
    MaeRun second = pretrain_toy_mae();
    const bool same = first.result.losses == second.result.losses;
    return {reached && same && first.secs < 600.0,
            fmt("masked MSE %.5f at step %lld (limit 5000), %.0f s; repeat run %s over %zu losses",
                ev.empty() ? NAN : ev.back().second, ev.empty() ? 0LL : static_cast<long long>(ev.back().first),
                first.secs, same ? "bit-identical" : "DIFFERS", first.result.losses.size())};
}

Outcome toy_acr(const MaeRun& mae_run, int seeds) {
    Dataset one = Dataset::synthetic(1, 32, mae_run.cfg.seed);
    const MaskMap hole = square_mask(32, 32, 0.25);
    const Tensor img = reshape(one.image(0), {1, 3, 32, 32});
    const Tensor mask_t = masks_to_tensor({hole});
    int lower = 0, above25 = 0;
    std::string per_seed;
    const auto t0 = std::chrono::steady_clock::now();
    for (int seed = 0; seed < seeds; ++seed) {
        double arm_psnr[2] = {0, 0};
        for (int arm = 0; arm < 2; ++arm) {
            RunConfig c;
            c.seed = static_cast<uint64_t>(seed);
            c.mae = mae_run.model->config();
            c.acr.widths = {16, 32, 64, 64};
            c.batch_size = 1;
            c.synthetic_count = 1;
            c.total_steps = 3000;
            c.deterministic = true;
            c.use_mae = arm == 0;
            const fs::path dir = scratch("acr");
            TrainOptions opt;
            opt.out_dir = dir.string();
            opt.fixed_mask = hole;
            TrainResult tr = train_acr(c, c.use_mae ? mae_run.model : nullptr, one, opt);
            InpaintingModel m = load_inpainting_model(tr.checkpoint_dir, c.use_mae ? mae_run.model : nullptr);
            NoGradGuard ng;
            Tensor pred = m.forward(img, {hole}, false);
            Tensor res = composite(img, pred, mask_t);
            arm_psnr[arm] = hole_psnr(res, img, hole);
            fs::remove_all(dir);
        }
        if (arm_psnr[0] > 25.0) ++above25;
        if (arm_psnr[1] < arm_psnr[0]) ++lower;
        per_seed += fmt("%s%d:%.2f/%.2f", seed ? " " : "", seed, arm_psnr[0], arm_psnr[1]);
        std::fprintf(stderr, "  seed %d hole PSNR with MAE %.3f dB, without %.3f dB (%.0f s)\n", seed, arm_psnr[0],
                     arm_psnr[1], seconds_since(t0));
    }
    return {above25 == seeds && lower >= 7,
            fmt("with-MAE hole PSNR > 25 dB on %d/%d seeds; no-MAE strictly lower on %d/%d (need 7); "
                "seed:with/without dB %s",
                above25, seeds, lower, seeds, per_seed.c_str())};
}

Outcome determinism_persistence() {
    RunConfig c;
    c.mae.dim = 16;
    c.mae.heads = 2;
    c.mae.enc_layers = 1;
    c.mae.dec_layers = c.mae.attn_layers_used = c.mae.feature_layer = 2;
    c.mae.mlp_ratio = 2;
    c.acr.widths = {8, 16, 16, 16};
    c.acr.n_ffc = 2;
    c.disc.widths = {8, 8, 16, 16};
    c.batch_size = 2;
    c.synthetic_count = 4;
    c.checkpoint_every = 10;
    auto mae = make_mae(c);
    Dataset ds = Dataset::synthetic(c.synthetic_count, c.image_size, c.seed);

    const fs::path full = scratch("full"), part = scratch("part");
    c.total_steps = 20;
    TrainOptions o1;
    o1.out_dir = full.string();
    TrainResult continuous = train_acr(c, mae, ds, o1);

    RunConfig first_half = c;
    first_half.total_steps = 10;
    TrainOptions o2;
    o2.out_dir = part.string();
    train_acr(first_half, mae, ds, o2);
    TrainOptions o3;
    o3.out_dir = part.string();
    o3.resume = (part / "checkpoint").string();
    TrainResult resumed = train_acr(c, mae, ds, o3);

    int same = 0;
    for (size_t i = 0; i < resumed.logs.size() && i + 10 < continuous.logs.size(); ++i)
        same += format_step_log(resumed.logs[i]) == format_step_log(continuous.logs[i + 10]) &&
                resumed.logs[i].loss_l1 == continuous.logs[i + 10].loss_l1 &&
                resumed.logs[i].loss_d == continuous.logs[i + 10].loss_d;
    const bool final_blob = read_file(full / "checkpoint" / "blob.bin") == read_file(part / "checkpoint" / "blob.bin");

    // Save, load, save: identical bytes and identical tensors.
    Checkpoint ck = load_checkpoint((full / "checkpoint").string());
    const fs::path again = scratch("again");
    save_checkpoint(again.string(), ck);
    const bool bytes = read_file(again / "blob.bin") == read_file(full / "checkpoint" / "blob.bin") &&
                       read_file(again / "manifest.json") == read_file(full / "checkpoint" / "manifest.json");
    Checkpoint back = load_checkpoint(again.string());
    bool tensors = back.tensors.size() == ck.tensors.size();
    for (size_t i = 0; tensors && i < ck.tensors.size(); ++i)
        tensors = back.tensors[i].name == ck.tensors[i].name &&
                  back.tensors[i].tensor.to_vector() == ck.tensors[i].tensor.to_vector();
    for (const auto& p : {full, part, again}) fs::remove_all(p);

    return {same == 10 && final_blob && bytes && tensors,
            fmt("checkpoint roundtrip %s; resumed steps 11-20 match the continuous run on %d/10 steps; final weights %s",
                bytes && tensors ? "bit-exact" : "DIFFERS", same, final_blob ? "identical" : "DIFFER")};
}

Outcome metrics_sanity() {
    DTypeScope f64(DType::f64);
    Tensor a = rand_uniform({3, 32, 32}, 1, 0.0, 0.9);
    const double p = psnr(a, add_scalar(a, 0.1));
    double ss = 0;
    for (uint64_t seed = 0; seed < 10; ++seed) {
        Tensor x = rand_uniform({3, 32, 32}, seed + 10);
        ss = std::max(ss, std::abs(ssim(x, x) - 1.0));
    }
    int64_t maps = 0, bad = 0;
    MaeConfig c;
    c.patch = 8;
    c.dim = 16;
    c.heads = 2;
    c.enc_layers = 1;
    c.dec_layers = c.attn_layers_used = c.feature_layer = 2;
    MaeModel m(c, 5);
    for (uint64_t seed = 0; seed < 200; ++seed) {
        Rng rng(seed);
        TokenMask t = random_token_mask(rng, 4, rng.uniform(0.1, 0.9));
        Tensor att = seed % 2 ? reshape(extract_priors(m, rand_uniform({1, 3, 32, 32}, seed), {t}).attention, {16, 16})
                              : rand_uniform({16, 16}, seed);
        auto am = attention_argmax_map(att, t);
        for (int64_t i = 0; i < 16; ++i) {
            const int64_t v = am[static_cast<size_t>(i)];
            if (t.masked(i) ? (v < 0 || v >= 16 || t.masked(v)) : v != -1) ++bad;
        }
        ++maps;
    }
    return {std::abs(p - 20.0) <= 0.01 && ss <= 1e-9 && bad == 0,
            fmt("psnr %.6f dB; max |ssim(x,x) - 1| %.1e; argmax maps %lld, masked targets %lld", p, ss,
                static_cast<long long>(maps), static_cast<long long>(bad))};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria"};
    std::vector<int> only;
    std::vector<int> known;
    int seeds = 10;
    app.add_option("--only", only, "Run only these criteria");
    app.add_option("--known-failure", known,
                   "Criteria whose FAIL is documented; the exit status ignores them but PASS/FAIL lines do not");
    app.add_option("--seeds", seeds, "Seeds for the toy ACR comparison")->check(CLI::Range(1, 100));
    CLI11_PARSE(app, argc, argv);

    auto selected = [&](int n) { return only.empty() || std::find(only.begin(), only.end(), n) != only.end(); };
    std::optional<MaeRun> mae_run;
    auto toy_mae_run = [&]() -> const MaeRun& {
        if (!mae_run) mae_run = pretrain_toy_mae();
        return *mae_run;
    };

    using Criterion = std::pair<std::string, std::function<Outcome()>>;
    const std::vector<Criterion> criteria{
        Criterion{"gradient integrity", gradient_integrity},
        Criterion{"prior attention oracle", prior_attention_oracle_check},
        Criterion{"contextual attention oracle", contextual_oracle_check},
        Criterion{"masking statistics", masking_statistics},
        Criterion{"zero-init inertness", zero_init_inertness},
        Criterion{"FFC spectral correctness", ffc_spectral_correctness},
        Criterion{"loss formulas", loss_formulas},
        Criterion{"toy MAE pretraining", [&] { return toy_mae(toy_mae_run()); }},
        Criterion{"toy ACR overfit", [&] { return toy_acr(toy_mae_run(), seeds); }},
        Criterion{"determinism and persistence", determinism_persistence},
        Criterion{"metrics sanity", metrics_sanity},
    };

    int unexpected = 0, passed = 0, run = 0;
    for (size_t i = 0; i < criteria.size(); ++i) {
        const int n = static_cast<int>(i) + 1;
        if (!selected(n)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const bool is_known = std::find(known.begin(), known.end(), n) != known.end();
        std::printf("%s %2d %s: %s [%.1f s]%s\n", o.passed ? "PASS" : "FAIL", n, criteria[i].first.c_str(),
                    o.detail.c_str(), seconds_since(t0), !o.passed && is_known ? " (known failure)" : "");
        std::fflush(stdout);
        ++run;
        passed += o.passed;
        if (!o.passed && !is_known) ++unexpected;
    }
    std::printf("%d/%d criteria passed\n", passed, run);
    return unexpected == 0 ? 0 : 1;
}
