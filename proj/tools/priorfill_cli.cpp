#include <CLI11.hpp>

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "priorfill/metrics/metrics.hpp"
#include "priorfill/numerics/ops.hpp"
#include "priorfill/trainer/trainer.hpp"
#include "priorfill/verify/suites.hpp"

using namespace priorfill;
namespace fs = std::filesystem;

namespace {

struct Shared {
    std::string config;
    std::optional<uint64_t> seed;
    std::string out;
    bool deterministic = false;
};

void add_shared(CLI::App* cmd, Shared& s) {
    cmd->add_option("--config", s.config, "Run configuration (JSON)")->check(CLI::ExistingFile);
    cmd->add_option("--seed", s.seed, "Random seed");
    cmd->add_option("--out", s.out, "Output directory or file");
    cmd->add_flag("--deterministic", s.deterministic, "Serial batch assembly");
}

RunConfig resolve_config(const Shared& s) {
    RunConfig c = s.config.empty() ? RunConfig{} : load_run_config(s.config);
    if (s.seed) c.seed = *s.seed;
    if (s.deterministic) c.deterministic = true;
    c.validate();
    return c;
}

Dataset resolve_dataset(const RunConfig& c, const std::string& dir_flag, int64_t size) {
    const std::string dir = dir_flag.empty() ? c.dataset_dir : dir_flag;
    if (!dir.empty()) return Dataset::from_directory(dir, size);
    return Dataset::synthetic(c.synthetic_count, size, c.seed);
}

std::string require_out(const Shared& s) {
    if (s.out.empty()) throw ConfigError("--out is required");
    return s.out;
}

Tensor batch_of(const Tensor& chw) { return reshape(chw, {1, chw.dim(0), chw.dim(1), chw.dim(2)}); }

// Composites at 8 bits so unmasked pixels are copied from the input verbatim.
Image8 composite8(const Image8& input, const Image8& pred, const MaskMap& mask) {
    Image8 out = input;
    for (int64_t y = 0; y < input.height; ++y)
        for (int64_t x = 0; x < input.width; ++x) {
            if (!mask.at(y, x)) continue;
            const size_t p = static_cast<size_t>(y * input.width + x);
            if (input.channels == 3)
                for (size_t ch = 0; ch < 3; ++ch) out.pixels[p * 3 + ch] = pred.pixels[p * 3 + ch];
            else
                out.pixels[p] = static_cast<uint8_t>(
                    (int(pred.pixels[p * 3]) + pred.pixels[p * 3 + 1] + pred.pixels[p * 3 + 2] + 1) / 3);
        }
    return out;
}

Tensor image8_to_tensor(const Image8& img) {
    std::vector<double> v(static_cast<size_t>(3 * img.height * img.width));
    const int64_t hw = img.height * img.width;
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t i = 0; i < hw; ++i)
            v[static_cast<size_t>(c * hw + i)] =
                img.pixels[static_cast<size_t>(i * img.channels + (img.channels == 3 ? c : 0))] / 255.0;
    return Tensor::from_vector(v, {3, img.height, img.width});
}

std::shared_ptr<MaeModel> maybe_mae(const std::string& dir) { return dir.empty() ? nullptr : load_mae(dir); }

void print_step(const StepLog& l, int64_t every) {
    if (every > 0 && l.step % every == 0)
        std::printf("step %" PRId64 " l1 %.5f adv %.4f fm %.5f hrf %.5f d %.4f gp %.4g\n", l.step, l.loss_l1, l.loss_adv,
                    l.loss_fm, l.loss_hrf, l.loss_d, l.gp);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"priorfill: masked-autoencoder priors for image inpainting"};
    app.require_subcommand(1);

    // genmask
    Shared gm_s;
    std::string gm_kind = "training";
    int64_t gm_size = 32, gm_count = 1;
    double gm_ratio = 0.3;
    auto* gm = app.add_subcommand("genmask", "Generate mask PNGs");
    add_shared(gm, gm_s);
    gm->add_option("--kind", gm_kind, "training | irregular | polygon | square")
        ->check(CLI::IsMember({"training", "irregular", "polygon", "square"}));
    gm->add_option("--size", gm_size, "Mask extent");
    gm->add_option("--count", gm_count, "Number of masks");
    gm->add_option("--ratio", gm_ratio, "Target hole ratio (irregular, polygon, square)");

    // pretrain-mae
    Shared pm_s;
    std::string pm_data;
    std::optional<int64_t> pm_steps;
    int64_t pm_eval = 500, pm_log = 100;
    std::optional<double> pm_stop;
    auto* pm = app.add_subcommand("pretrain-mae", "Pretrain the masked autoencoder");
    add_shared(pm, pm_s);
    pm->add_option("--data", pm_data, "Directory of PNG images (default: synthetic set)");
    pm->add_option("--steps", pm_steps, "Override mae_steps");
    pm->add_option("--eval-every", pm_eval, "Masked-pixel MSE evaluation interval");
    pm->add_option("--stop-below", pm_stop, "Stop once the evaluated MSE is below this");
    pm->add_option("--log-every", pm_log, "Console progress interval");

    // train-acr
    Shared ta_s;
    std::string ta_data, ta_mae, ta_resume, ta_mask;
    std::optional<int64_t> ta_steps;
    std::optional<double> ta_square;
    bool ta_no_mae = false;
    int64_t ta_log = 100;
    auto* ta = app.add_subcommand("train-acr", "Train the restoration network against a frozen MAE");
    add_shared(ta, ta_s);
    ta->add_option("--data", ta_data, "Directory of PNG images (default: synthetic set)");
    ta->add_option("--mae", ta_mae, "MAE checkpoint directory");
    ta->add_option("--steps", ta_steps, "Override total_steps");
    ta->add_option("--resume", ta_resume, "Checkpoint directory to continue from");
    ta->add_option("--mask", ta_mask, "Fixed mask PNG for every image")->check(CLI::ExistingFile);
    ta->add_option("--square-mask", ta_square, "Fixed centred square mask with this hole ratio");
    ta->add_flag("--no-mae", ta_no_mae, "Disable the MAE branch");
    ta->add_option("--log-every", ta_log, "Console progress interval");

    // finetune-hr
    Shared ft_s;
    std::string ft_data, ft_mae, ft_ckpt;
    int64_t ft_steps = 100, ft_log = 50;
    auto* ft = app.add_subcommand("finetune-hr", "Dynamic-resolution finetuning of a trained ACR");
    add_shared(ft, ft_s);
    ft->add_option("--data", ft_data, "Directory of PNG images (default: synthetic set)");
    ft->add_option("--mae", ft_mae, "MAE checkpoint directory");
    ft->add_option("--ckpt", ft_ckpt, "ACR checkpoint to continue")->required();
    ft->add_option("--steps", ft_steps, "Finetuning steps");
    ft->add_option("--log-every", ft_log, "Console progress interval");

    // inpaint
    Shared ip_s;
    std::string ip_acr, ip_mae, ip_image, ip_mask, ip_gt;
    bool ip_raw = false;
    auto* ip = app.add_subcommand("inpaint", "Fill the masked region of one image");
    add_shared(ip, ip_s);
    ip->add_option("--ckpt-acr", ip_acr, "ACR checkpoint directory")->required();
    ip->add_option("--ckpt-mae", ip_mae, "MAE checkpoint directory");
    ip->add_option("--image", ip_image, "Input PNG")->required();
    ip->add_option("--mask", ip_mask, "Mask PNG (white = hole)")->required();
    ip->add_option("--gt", ip_gt, "Ground-truth PNG for PSNR");
    ip->add_flag("--raw", ip_raw, "Write the unblended generator output");

    // eval
    Shared ev_s;
    std::string ev_acr, ev_mae, ev_images, ev_masks;
    auto* ev = app.add_subcommand("eval", "PSNR/SSIM over an image set");
    add_shared(ev, ev_s);
    ev->add_option("--ckpt-acr", ev_acr, "ACR checkpoint directory")->required();
    ev->add_option("--ckpt-mae", ev_mae, "MAE checkpoint directory");
    ev->add_option("--images", ev_images, "Directory of ground-truth PNGs")->required();
    ev->add_option("--masks", ev_masks, "Directory of same-named mask PNGs (default: seeded training masks)");

    // vis-attn
    Shared va_s;
    std::string va_mae, va_image, va_mask;
    int64_t va_cell = 16;
    auto* va = app.add_subcommand("vis-attn", "Render the prior-attention argmax map");
    add_shared(va, va_s);
    va->add_option("--ckpt-mae", va_mae, "MAE checkpoint directory")->required();
    va->add_option("--image", va_image, "Input PNG")->required();
    va->add_option("--mask", va_mask, "Mask PNG (white = hole)")->required();
    va->add_option("--cell", va_cell, "Pixels per token in the rendering");

    // gradcheck
    Shared gc_s;
    std::string gc_module = "all";
    bool gc_fault = false;
    auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient suites");
    add_shared(gc, gc_s);
    std::vector<std::string> gc_choices = gradcheck_modules();
    gc_choices.push_back("all");
    gc->add_option("--module", gc_module, "Module to check")->check(CLI::IsMember(gc_choices));
    gc->add_flag("--inject-conv-fault", gc_fault, "Negate the conv input gradient (detector sanity check)");

    // selftest
    Shared st_s;
    auto* st = app.add_subcommand("selftest", "Run every module's invariant checks");
    add_shared(st, st_s);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*gm) {
            const std::string out = require_out(gm_s);
            fs::create_directories(out);
            Rng rng(gm_s.seed.value_or(0));
            for (int64_t i = 0; i < gm_count; ++i) {
                MaskMap m;
                std::string family = gm_kind;
                if (gm_kind == "training") {
                    TrainingMask tm = gen_acr_training_mask(rng, gm_size, gm_size);
                    m = tm.mask;
                    family = mask_family_name(tm.family);
                } else if (gm_kind == "irregular") {
                    m = gen_irregular(rng, gm_size, gm_size, gm_ratio);
                } else if (gm_kind == "polygon") {
                    m = gen_polygon(rng, gm_size, gm_size, gm_ratio);
                } else {
                    m = square_mask(gm_size, gm_size, gm_ratio);
                }
                char name[32];
                std::snprintf(name, sizeof name, "mask_%04" PRId64 ".png", i);
                write_mask_png((fs::path(out) / name).string(), m);
                std::printf("%s %s ratio %.4f\n", name, family.c_str(), m.ratio());
            }
            return 0;
        }
        if (*pm) {
            RunConfig c = resolve_config(pm_s);
            if (pm_steps) c.mae_steps = *pm_steps;
            Dataset ds = resolve_dataset(c, pm_data, c.mae.img);
            auto mae = make_mae(c);
            MaeTrainOptions opt;
            opt.out_dir = require_out(pm_s);
            opt.eval_every = pm_eval;
            opt.stop_below = pm_stop;
            opt.on_step = [&](int64_t step, double loss) {
                if (pm_log > 0 && step % pm_log == 0) std::printf("step %" PRId64 " loss %.6f\n", step, loss);
            };
            MaeTrainResult r = pretrain_mae(c, *mae, ds, opt);
            for (const auto& [step, mse] : r.evals) std::printf("eval step %" PRId64 " masked mse %.6f\n", step, mse);
            std::printf("checkpoint %s\n", r.checkpoint_dir.c_str());
            return 0;
        }
        if (*ta) {
            RunConfig c = resolve_config(ta_s);
            if (ta_steps) c.total_steps = *ta_steps;
            if (ta_no_mae) c.use_mae = false;
            c.validate();
            auto mae = c.use_mae ? maybe_mae(ta_mae) : nullptr;
            if (c.use_mae && !mae) throw ConfigError("train-acr needs --mae (or --no-mae)");
            Dataset ds = resolve_dataset(c, ta_data, c.image_size);
            TrainOptions opt;
            opt.out_dir = require_out(ta_s);
            opt.resume = ta_resume;
            if (!ta_mask.empty()) opt.fixed_mask = resize_mask(read_mask_png(ta_mask), c.image_size, c.image_size);
            if (ta_square) opt.fixed_mask = square_mask(c.image_size, c.image_size, *ta_square);
            opt.on_step = [&](const StepLog& l) { print_step(l, ta_log); };
            TrainResult r = train_acr(c, mae, ds, opt);
            std::printf("checkpoint %s\n", r.checkpoint_dir.c_str());
            return 0;
        }
        if (*ft) {
            RunConfig c = resolve_config(ft_s);
            auto mae = c.use_mae ? maybe_mae(ft_mae) : nullptr;
            if (c.use_mae && !mae) throw ConfigError("finetune-hr needs --mae");
            Dataset ds = resolve_dataset(c, ft_data, c.dyn_high);
            TrainOptions opt;
            opt.out_dir = require_out(ft_s);
            opt.on_step = [&](const StepLog& l) { print_step(l, ft_log); };
            TrainResult r = finetune_hr(c, mae, ds, ft_ckpt, ft_steps, opt);
            std::printf("checkpoint %s\n", r.checkpoint_dir.c_str());
            return 0;
        }
        if (*ip) {
            const std::string out = require_out(ip_s);
            InpaintingModel model = load_inpainting_model(ip_acr, maybe_mae(ip_mae));
            Image8 input = read_png(ip_image);
            MaskMap mask = read_mask_png(ip_mask);
            if (mask.h != input.height || mask.w != input.width)
                throw ShapeError("mask is " + std::to_string(mask.w) + "x" + std::to_string(mask.h) + ", image is " +
                                 std::to_string(input.width) + "x" + std::to_string(input.height));
            Tensor pred;
            {
                NoGradGuard ng;
                pred = model.forward(batch_of(image8_to_tensor(input)), {mask}, false);
            }
            Image8 pred8 = tensor_to_image8(reshape(pred, {3, input.height, input.width}));
            Image8 result = ip_raw ? pred8 : composite8(input, pred8, mask);
            write_png(out, result);
            if (!ip_gt.empty()) {
                Image8 gt8 = read_png(ip_gt);
                if (gt8.height != input.height || gt8.width != input.width)
                    throw ShapeError("ground truth extents differ from the input");
                Tensor gt = image8_to_tensor(gt8), res = image8_to_tensor(result);
                std::printf("psnr %.4f\n", psnr(res, gt));
                if (mask.count() > 0) std::printf("hole_psnr %.4f\n", hole_psnr(res, gt, mask));
            }
            return 0;
        }
        if (*ev) {
            const std::string out = require_out(ev_s);
            InpaintingModel model = load_inpainting_model(ev_acr, maybe_mae(ev_mae));
            std::vector<fs::path> files;
            for (const auto& e : fs::directory_iterator(ev_images))
                if (e.path().extension() == ".png") files.push_back(e.path());
            std::sort(files.begin(), files.end());
            if (files.empty()) throw ConfigError("no PNG images in " + ev_images);
            Rng rng(ev_s.seed.value_or(0));
            EvalReport rep;
            for (const auto& f : files) {
                Tensor gt = read_png_rgb(f.string());
                MaskMap mask = ev_masks.empty()
                                   ? gen_acr_training_mask(rng, gt.dim(1), gt.dim(2)).mask
                                   : read_mask_png((fs::path(ev_masks) / f.filename()).string());
                Tensor res;
                {
                    NoGradGuard ng;
                    Tensor pred = model.forward(batch_of(gt), {mask}, false);
                    res = reshape(composite(batch_of(gt), pred, masks_to_tensor({mask})), gt.shape());
                }
                rep.add({f.filename().string(), psnr(res, gt), ssim(res, gt), mask.ratio(), mask_ratio_bucket(mask.ratio())});
            }
            fs::create_directories(out);
            std::ofstream((fs::path(out) / "report.csv").string()) << rep.to_csv();
            std::ofstream((fs::path(out) / "report.json").string()) << rep.to_json();
            std::printf("images %zu psnr %.4f ssim %.4f\n", rep.entries.size(), rep.mean_psnr, rep.mean_ssim);
            return 0;
        }
        if (*va) {
            const std::string out = require_out(va_s);
            auto mae = load_mae(va_mae);
            const MaeConfig& mc = mae->config();
            Tensor img = read_png_rgb(va_image);
            MaskMap mask = read_mask_png(va_mask);
            if (mask.h != img.dim(1) || mask.w != img.dim(2)) throw ShapeError("mask and image extents differ");
            Tensor masked = mul(batch_of(img), add_scalar(neg(masks_to_tensor({mask})), 1.0));
            MaePriors p = compute_priors(*mae, masked, {mask}, false);
            const TokenMask& tm = p.masks.front();
            std::vector<int64_t> am = attention_argmax_map(reshape(p.attention, {mc.tokens(), mc.tokens()}), tm);
            write_png(out, render_attention_map(am, tm, va_cell));
            for (int64_t r = 0; r < tm.gh; ++r) {
                for (int64_t cidx = 0; cidx < tm.gw; ++cidx) std::printf("%4" PRId64, am[static_cast<size_t>(r * tm.gw + cidx)]);
                std::printf("\n");
            }
            return 0;
        }
        if (*gc) {
            set_conv_backward_fault(gc_fault);
            std::vector<std::string> modules = gc_module == "all" ? gradcheck_modules() : std::vector<std::string>{gc_module};
            bool ok = true;
            const GradCheckResult* worst = nullptr;
            std::vector<GradSuiteReport> reps;
            for (const auto& m : modules) reps.push_back(run_gradcheck_suite(m));
            for (const auto& rep : reps) {
                for (const auto& r : rep.results)
                    std::printf("%-10s %-34s max_rel_err %.3e checked %6" PRId64 " %s\n", rep.module.c_str(),
                                r.name.c_str(), r.max_rel_err, r.checked, r.passed ? "PASS" : "FAIL");
                const GradCheckResult& w = rep.worst();
                if (!worst || (!w.passed && worst->passed) || (w.passed == worst->passed && w.max_rel_err > worst->max_rel_err))
                    worst = &w;
                ok = ok && rep.passed();
            }
            std::printf("worst: %s max_rel_err %.3e\n", worst->name.c_str(), worst->max_rel_err);
            std::printf("%s\n", ok ? "gradcheck PASS" : "gradcheck FAIL");
            return ok ? 0 : 1;
        }
        if (*st) {
            bool ok = true;
            for (const auto& c : run_selftest()) {
                std::printf("%s %s: %s%s%s\n", c.passed ? "PASS" : "FAIL", c.suite.c_str(), c.name.c_str(),
                            c.detail.empty() ? "" : " - ", c.detail.c_str());
                ok = ok && c.passed;
            }
            std::printf("%s\n", ok ? "selftest PASS" : "selftest FAIL");
            return ok ? 0 : 1;
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 2;
}
