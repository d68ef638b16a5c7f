#include "priorfill/trainer/trainer.hpp"

#include <bit>
#include <cinttypes>
#include <cstdlib>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "priorfill/numerics/ops.hpp"

namespace priorfill {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Independent seeds for the run's random streams.
enum SeedStream : uint64_t { kAcr = 1, kUpsampler, kDisc, kBatches, kMaeBatches, kMaeMasks, kMaeInit, kFinetune, kMaeEval };

uint64_t derive_seed(uint64_t seed, SeedStream s) { return seed * 0x9E3779B97F4A7C15ull + static_cast<uint64_t>(s); }

/// Parts of a run configuration that fix the model layout.
json model_layout(const RunConfig& c) {
    return {{"mae", to_json(c.mae)},   {"acr", to_json(c.acr)},         {"disc", to_json(c.disc)},
            {"use_mae", c.use_mae},    {"partial_priors", c.partial_priors}, {"hrf_seed", c.hrf_seed}};
}

class CsvLog {
   public:
    CsvLog(const std::string& out_dir, const std::string& name, const std::string& header, bool append) {
        if (out_dir.empty()) return;
        fs::create_directories(out_dir);
        const fs::path p = fs::path(out_dir) / name;
        const bool had = append && fs::exists(p);
        out_.open(p, had ? std::ios::app : std::ios::trunc);
        if (!out_) throw ConfigError("cannot write " + p.string());
        if (!had) out_ << header << '\n';
    }
    void row(const std::string& line) {
        if (out_.is_open()) out_ << line << '\n' << std::flush;
    }

   private:
    std::ofstream out_;
};

}  // namespace

MaePriors compute_priors(const MaeModel& mae, const Tensor& imgs_masked, const std::vector<MaskMap>& masks,
                         bool partial) {
    const MaeConfig& c = mae.config();
    if (imgs_masked.ndim() != 4 || static_cast<size_t>(imgs_masked.dim(0)) != masks.size())
        throw ShapeError("compute_priors: expected [B,C,H,W] images with one mask each");
    NoGradGuard ng;
    Tensor x = imgs_masked.detach();
    std::vector<MaskMap> native = masks;
    if (x.dim(2) != c.img || x.dim(3) != c.img) {
        for (auto& m : native) m = resize_mask(m, c.img, c.img);
        // Re-zero holes so resampling cannot leak hole pixels into visible tokens.
        Tensor keep = add_scalar(neg(masks_to_tensor(native, x.dtype())), 1.0);
        x = mul(bilinear_resize(x, c.img, c.img), keep);
    }
    std::vector<TokenMask> tokens;
    for (const auto& m : native) tokens.push_back(prior_token_mask(m, c.patch));
    return extract_priors(mae, x, tokens, partial ? &native : nullptr);
}

Tensor composite(const Tensor& gt, const Tensor& pred, const Tensor& mask) {
    return add(mul(gt, add_scalar(neg(mask), 1.0)), mul(pred, mask));
}

InpaintingModel::InpaintingModel(const RunConfig& cfg, std::shared_ptr<MaeModel> mae)
    : cfg_(cfg),
      mae_(std::move(mae)),
      acr_(cfg.acr, derive_seed(cfg.seed, kAcr)),
      up_(upsampler_config_for(cfg.acr, cfg.mae), derive_seed(cfg.seed, kUpsampler)) {
    cfg_.validate();
    if (cfg_.use_mae && !mae_) throw ConfigError("inpainting model: the MAE branch is enabled but no MAE was given");
    if (mae_ && to_json(mae_->config()) != to_json(cfg_.mae))
        throw ConfigError("inpainting model: MAE checkpoint configuration differs from the run configuration");
    trainable_.merge("acr.", acr_.params());
    if (cfg_.use_mae) trainable_.merge("up.", up_.params());
}

Tensor InpaintingModel::forward(const Tensor& imgs, const std::vector<MaskMap>& masks, bool training) {
    if (imgs.ndim() != 4 || static_cast<size_t>(imgs.dim(0)) != masks.size())
        throw ShapeError("inpaint: expected [B,C,H,W] images with one mask each");
    for (const auto& m : masks)
        if (m.h != imgs.dim(2) || m.w != imgs.dim(3)) throw ShapeError("inpaint: mask and image extents differ");
    Tensor mask = masks_to_tensor(masks, imgs.dtype());
    Tensor masked = mul(imgs, add_scalar(neg(mask), 1.0));
    if (!cfg_.use_mae) return acr_forward(acr_, masked, mask, nullptr, nullptr, training);
    MaePriors priors = compute_priors(*mae_, masked, masks, cfg_.partial_priors);
    Pyramid pyr = build_pyramid(up_, priors, imgs.dim(2), imgs.dim(3), training);
    return acr_forward(acr_, masked, mask, &priors, &pyr, training);
}

std::string step_log_header() {
    return "step,loss_l1,loss_adv,loss_fm,loss_hrf,loss_d,gp,alpha1,alpha2,alpha3,alpha4,beta_start,beta_end,lr_g,lr_d";
}

std::string format_step_log(const StepLog& s) {
    char buf[512];
    std::snprintf(buf, sizeof buf, "%" PRId64 ",%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g",
                  s.step, s.loss_l1, s.loss_adv, s.loss_fm, s.loss_hrf, s.loss_d, s.gp, s.alpha[0], s.alpha[1],
                  s.alpha[2], s.alpha[3], s.beta_start, s.beta_end, s.lr_g, s.lr_d);
    return buf;
}

AcrTrainer::AcrTrainer(const RunConfig& cfg, std::shared_ptr<MaeModel> mae)
    : cfg_(cfg),
      model_(cfg, std::move(mae)),
      disc_(cfg.disc, derive_seed(cfg.seed, kDisc)),
      hrf_(cfg.hrf_seed, cfg.acr.image_channels),
      opt_g_(model_.trainable()),
      opt_d_(disc_.params()) {
    if (model_.mae()) mae_hash_ = model_.mae()->params().hash();
}

StepLog AcrTrainer::train_step(const TrainBatch& batch) {
    StepLog log;
    log.lr_g = lr_schedule(step_, cfg_.lr_gen, cfg_.halving_interval);
    log.lr_d = lr_schedule(step_, cfg_.lr_disc, cfg_.halving_interval);
    const Tensor& imgs = batch.images;
    Tensor mask = masks_to_tensor(batch.masks, imgs.dtype());
    DiscFn d = as_disc_fn(disc_);

    model_.trainable().zero_grad();
    Tensor pred = model_.forward(imgs, batch.masks, true);
    std::vector<Tensor> real_features;
    {
        NoGradGuard ng;
        real_features = d(imgs).features;
    }
    DiscOutput fake = d(pred);
    GeneratorLossTerms terms{l1_unmasked(pred, imgs, mask), gen_adv_loss(fake.logits),
                             feature_match(real_features, fake.features), hrf_loss(hrf_, imgs, pred)};
    backward(total_generator_loss(terms, cfg_.weights));
    opt_g_.step(log.lr_g);

    disc_.params().zero_grad();
    Tensor ld = disc_loss(d, imgs, pred.detach(), mask);
    Tensor gp = gradient_penalty(d, imgs);
    backward(add(ld, mul_scalar(gp, cfg_.weights.gp)));
    opt_d_.step(log.lr_d);

    log.step = ++step_;
    log.loss_l1 = terms.l1.item();
    log.loss_adv = terms.adv.item();
    log.loss_fm = terms.fm.item();
    log.loss_hrf = terms.hrf.item();
    log.loss_d = ld.item();
    log.gp = gp.item();
    if (cfg_.use_mae)
        for (size_t j = 0; j < 4; ++j) log.alpha[j] = model_.upsampler().alpha[j].item();
    log.beta_start = model_.acr().beta_start.item();
    log.beta_end = model_.acr().beta_end.item();
    return log;
}

void AcrTrainer::verify_mae_frozen() const {
    if (model_.mae() && model_.mae()->params().hash() != mae_hash_)
        throw ContractError("frozen MAE parameters changed during ACR training");
}

Checkpoint AcrTrainer::checkpoint(const json& stream_state) const {
    Checkpoint ck;
    ck.model_kind = "acr";
    ck.config = to_json(cfg_);
    ck.step = step_;
    ck.rng_state = {{"batches", stream_state}};
    ck.extra = {{"adam_g_steps", opt_g_.step_count()}, {"adam_d_steps", opt_d_.step_count()}, {"mae_hash", mae_hash_}};
    append_tensors(ck.tensors, "model.", model_.trainable().all());
    append_tensors(ck.tensors, "disc.", disc_.params().all());
    append_tensors(ck.tensors, "opt_g.", opt_g_.state());
    append_tensors(ck.tensors, "opt_d.", opt_d_.state());
    return ck;
}

void AcrTrainer::restore(const Checkpoint& ck) {
    if (ck.model_kind != "acr") throw CheckpointError("expected an ACR checkpoint, got '" + ck.model_kind + "'");
    RunConfig saved;
    try {
        saved = run_config_from_json(ck.config);
    } catch (const ConfigError& e) {
        throw CheckpointError(std::string("checkpoint config: ") + e.what());
    }
    if (model_layout(saved) != model_layout(cfg_))
        throw CheckpointError("checkpoint model layout differs from the run configuration");
    uint64_t hash = 0;
    int64_t g_steps = 0, d_steps = 0;
    try {
        hash = ck.extra.at("mae_hash").get<uint64_t>();
        g_steps = ck.extra.at("adam_g_steps").get<int64_t>();
        d_steps = ck.extra.at("adam_d_steps").get<int64_t>();
    } catch (const json::exception& e) {
        throw CheckpointError(std::string("checkpoint metadata: ") + e.what());
    }
    if (hash != mae_hash_) throw CheckpointError("checkpoint was trained against a different MAE");
    // Validate every group before writing any of them.
    const std::vector<std::pair<std::string, std::vector<NamedTensor>>> groups{{"model.", model_.trainable().all()},
                                                                               {"disc.", disc_.params().all()},
                                                                               {"opt_g.", opt_g_.state()},
                                                                               {"opt_d.", opt_d_.state()}};
    std::vector<NamedTensor> all;
    for (const auto& [prefix, ts] : groups)
        for (const auto& nt : ts) all.push_back({prefix + nt.name, nt.tensor});
    restore_tensors(ck, "", all);
    opt_g_.set_step_count(g_steps);
    opt_d_.set_step_count(d_steps);
    step_ = ck.step;
}

TrainResult train_acr(const RunConfig& cfg, std::shared_ptr<MaeModel> mae, const Dataset& data,
                      const TrainOptions& opt) {
    cfg.validate();
    if (data.size() == 0) throw ConfigError("train_acr: dataset is empty");
    AcrTrainer tr(cfg, std::move(mae));
    json state = nullptr;
    if (!opt.resume.empty()) {
        Checkpoint ck = load_checkpoint(opt.resume);
        tr.restore(ck);
        state = ck.rng_state.at("batches");
    }
    BatchStreamConfig bc;
    bc.batch_size = cfg.batch_size;
    bc.seed = derive_seed(cfg.seed, kBatches);
    bc.policy = opt.fixed_mask ? MaskPolicy::fixed : MaskPolicy::training;
    if (opt.fixed_mask) bc.fixed_mask = *opt.fixed_mask;
    bc.resolution = [size = cfg.image_size](int64_t) { return size; };
    bc.prefetch = !cfg.deterministic;
    BatchStream stream(data, bc, state);

    CsvLog csv(opt.out_dir, "train_log.csv", step_log_header(), !opt.resume.empty());
    TrainResult res;
    while (tr.step() < cfg.total_steps) {
        TrainBatch b = stream.next();
        StepLog log = tr.train_step(b);
        state = b.state_after;
        csv.row(format_step_log(log));
        res.logs.push_back(log);
        if (opt.on_step) opt.on_step(log);
        if (!opt.out_dir.empty() && cfg.checkpoint_every > 0 && tr.step() % cfg.checkpoint_every == 0)
            save_checkpoint((fs::path(opt.out_dir) / ("checkpoint_step_" + std::to_string(tr.step()))).string(),
                            tr.checkpoint(state));
    }
    tr.verify_mae_frozen();
    if (!opt.out_dir.empty()) {
        res.checkpoint_dir = (fs::path(opt.out_dir) / "checkpoint").string();
        save_checkpoint(res.checkpoint_dir, tr.checkpoint(state));
    }
    return res;
}

std::vector<int64_t> dynamic_sizes(int64_t low, int64_t high) {
    if (low % 8 != 0 || high % 8 != 0) throw ConfigError("dynamic resolution: sizes must be divisible by 8");
    if (low < 8 || high < low) throw ConfigError("dynamic resolution: need 8 <= low <= high");
    std::vector<int64_t> out;
    for (int64_t s = low; s <= high; s += 8)
        if (std::has_single_bit(static_cast<uint64_t>(s / 8))) out.push_back(s);
    if (out.empty()) throw ConfigError("dynamic resolution: no FFT-compatible size in range");
    return out;
}

int64_t snap_resolution(int64_t size, int64_t low, int64_t high) {
    int64_t best = -1;
    for (int64_t s : dynamic_sizes(low, high))
        if (best < 0 || std::llabs(s - size) <= std::llabs(best - size)) best = s;
    return best;
}

std::vector<int64_t> resolution_cycle(int64_t low, int64_t high) {
    dynamic_sizes(low, high);
    std::vector<int64_t> out;
    for (int64_t s = high; s > low; s -= 8) out.push_back(snap_resolution(s, low, high));
    for (int64_t s = low; s < high; s += 8) out.push_back(snap_resolution(s, low, high));
    if (out.empty()) out.push_back(low);
    return out;
}

int64_t resolution_for_step(int64_t step, int64_t total, int64_t low, int64_t high, int64_t cycles) {
    if (total < 1 || cycles < 1) throw ConfigError("dynamic resolution: total steps and cycles must be positive");
    if (step < 0) throw ContractError("dynamic resolution: negative step");
    const std::vector<int64_t> cycle = resolution_cycle(low, high);
    const int64_t n = static_cast<int64_t>(cycle.size());
    const int64_t pos = (step * cycles * n / total) % n;
    return cycle[static_cast<size_t>(pos)];
}

TrainResult finetune_hr(const RunConfig& cfg, std::shared_ptr<MaeModel> mae, const Dataset& data,
                        const std::string& acr_checkpoint, int64_t steps, const TrainOptions& opt) {
    cfg.validate();
    if (data.size() == 0) throw ConfigError("finetune: dataset is empty");
    if (steps < 1) throw ConfigError("finetune: step count must be positive");
    AcrTrainer tr(cfg, std::move(mae));
    tr.restore(load_checkpoint(acr_checkpoint));
    const int64_t start = tr.step();

    BatchStreamConfig bc;
    bc.batch_size = cfg.batch_size;
    bc.seed = derive_seed(cfg.seed, kFinetune);
    bc.policy = opt.fixed_mask ? MaskPolicy::fixed : MaskPolicy::training;
    if (opt.fixed_mask) bc.fixed_mask = *opt.fixed_mask;
    bc.resolution = [&cfg, steps](int64_t i) {
        return resolution_for_step(i, steps, cfg.dyn_low, cfg.dyn_high, cfg.dyn_cycles);
    };
    bc.prefetch = !cfg.deterministic;
    BatchStream stream(data, bc);

    CsvLog csv(opt.out_dir, "finetune_log.csv", step_log_header(), false);
    TrainResult res;
    json state = nullptr;
    while (tr.step() < start + steps) {
        TrainBatch b = stream.next();
        StepLog log = tr.train_step(b);
        state = b.state_after;
        csv.row(format_step_log(log));
        res.logs.push_back(log);
        if (opt.on_step) opt.on_step(log);
    }
    tr.verify_mae_frozen();
    if (!opt.out_dir.empty()) {
        res.checkpoint_dir = (fs::path(opt.out_dir) / "checkpoint").string();
        save_checkpoint(res.checkpoint_dir, tr.checkpoint(state));
    }
    return res;
}

double mae_masked_mse(const MaeModel& model, const Tensor& images, uint64_t seed) {
    const MaeConfig& c = model.config();
    Rng rng(seed);
    std::vector<TokenMask> masks;
    for (int64_t b = 0; b < images.dim(0); ++b) masks.push_back(gen_mae_pretrain_mask(rng, c.grid(), c.grid(), 0.3));
    NoGradGuard ng;
    Tensor enc = encode_visible(model, images, masks);
    DecodeResult dec = decode(model, enc, masks, nullptr, false);
    return reconstruction_loss(dec.pixel_pred, images, masks, c.patch, c.norm_pixel_target).item();
}

MaeTrainResult pretrain_mae(const RunConfig& cfg, MaeModel& model, const Dataset& data, const MaeTrainOptions& opt) {
    cfg.validate();
    if (data.size() == 0) throw ConfigError("pretrain: dataset is empty");
    const MaeConfig& mc = model.config();
    Adam adam(model.params());
    Rng mask_rng(derive_seed(cfg.seed, kMaeMasks));
    BatchStreamConfig bc;
    bc.batch_size = cfg.batch_size;
    bc.seed = derive_seed(cfg.seed, kMaeBatches);
    bc.policy = MaskPolicy::none;
    bc.resolution = [size = mc.img](int64_t) { return size; };
    bc.prefetch = !cfg.deterministic;
    BatchStream stream(data, bc);

    const Dataset eval_set = data.resolution() == mc.img ? data : data.resized(mc.img);
    std::vector<int64_t> all(static_cast<size_t>(eval_set.size()));
    for (size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int64_t>(i);
    const Tensor eval_images = eval_set.batch(all);

    CsvLog csv(opt.out_dir, "mae_log.csv", "step,loss", false);
    MaeTrainResult res;
    for (int64_t step = 0; step < cfg.mae_steps; ++step) {
        TrainBatch b = stream.next();
        const double loss = mae_pretrain_step(model, adam, b.images, mask_rng, cfg.lr_mae);
        res.losses.push_back(loss);
        char row[64];
        std::snprintf(row, sizeof row, "%" PRId64 ",%.9g", step + 1, loss);
        csv.row(row);
        if (opt.on_step) opt.on_step(step + 1, loss);
        if (opt.eval_every > 0 && (step + 1) % opt.eval_every == 0) {
            const double mse = mae_masked_mse(model, eval_images, derive_seed(cfg.seed, kMaeEval));
            res.evals.emplace_back(step + 1, mse);
            if (opt.stop_below && mse < *opt.stop_below) break;
        }
    }
    if (!opt.out_dir.empty()) {
        res.checkpoint_dir = (fs::path(opt.out_dir) / "checkpoint").string();
        save_checkpoint(res.checkpoint_dir, mae_checkpoint(model, cfg, static_cast<int64_t>(res.losses.size())));
    }
    return res;
}

std::shared_ptr<MaeModel> make_mae(const RunConfig& cfg) {
    return std::make_shared<MaeModel>(cfg.mae, derive_seed(cfg.seed, kMaeInit));
}

Checkpoint mae_checkpoint(const MaeModel& model, const RunConfig& cfg, int64_t step) {
    Checkpoint ck;
    ck.model_kind = "mae";
    RunConfig c = cfg;
    c.mae = model.config();
    ck.config = to_json(c);
    ck.step = step;
    ck.extra = {{"param_hash", model.params().hash()}};
    append_tensors(ck.tensors, "mae.", model.params().all());
    return ck;
}

std::shared_ptr<MaeModel> load_mae(const std::string& dir) {
    Checkpoint ck = load_checkpoint(dir);
    if (ck.model_kind != "mae") throw CheckpointError("expected an MAE checkpoint, got '" + ck.model_kind + "'");
    MaeConfig mc;
    try {
        mc = mae_config_from_json(ck.config.at("mae"));
    } catch (const std::exception& e) {
        throw CheckpointError(std::string("MAE checkpoint config: ") + e.what());
    }
    auto model = std::make_shared<MaeModel>(mc);
    restore_tensors(ck, "mae.", model->params().all());
    return model;
}

InpaintingModel load_inpainting_model(const std::string& acr_dir, std::shared_ptr<MaeModel> mae) {
    Checkpoint ck = load_checkpoint(acr_dir);
    if (ck.model_kind != "acr") throw CheckpointError("expected an ACR checkpoint, got '" + ck.model_kind + "'");
    RunConfig cfg;
    try {
        cfg = run_config_from_json(ck.config);
    } catch (const ConfigError& e) {
        throw CheckpointError(std::string("checkpoint config: ") + e.what());
    }
    if (cfg.use_mae) {
        if (!mae) throw CheckpointError("this ACR checkpoint needs its MAE checkpoint");
        if (mae->params().hash() != ck.extra.value("mae_hash", uint64_t{0}))
            throw CheckpointError("MAE checkpoint does not match the one the ACR was trained with");
    } else {
        mae.reset();
    }
    InpaintingModel m(cfg, std::move(mae));
    restore_tensors(ck, "model.", m.trainable().all());
    return m;
}

}  // namespace priorfill
