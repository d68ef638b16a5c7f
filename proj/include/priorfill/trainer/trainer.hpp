#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "priorfill/losses/losses.hpp"
#include "priorfill/trainer/adam.hpp"
#include "priorfill/trainer/batches.hpp"
#include "priorfill/trainer/checkpoint.hpp"
#include "priorfill/trainer/config.hpp"

namespace priorfill {

/// Priors for masked images [B,C,H,W] computed at the MAE's native size:
/// images are resized bilinearly and masks conservatively before token enlargement.
MaePriors compute_priors(const MaeModel& mae, const Tensor& imgs_masked, const std::vector<MaskMap>& masks,
                         bool partial);

/// gt * (1 - mask) + pred * mask.
Tensor composite(const Tensor& gt, const Tensor& pred, const Tensor& mask);

/// Generator side of the pipeline: frozen MAE, prior upsampler and ACR.
class InpaintingModel {
   public:
    /// `mae` may be null only when cfg.use_mae is false.
    InpaintingModel(const RunConfig& cfg, std::shared_ptr<MaeModel> mae);

    /// Raw prediction in [0,1] for images [B,C,H,W] and their pixel masks.
    Tensor forward(const Tensor& imgs, const std::vector<MaskMap>& masks, bool training);

    const RunConfig& config() const { return cfg_; }
    bool uses_mae() const { return cfg_.use_mae; }
    const std::shared_ptr<MaeModel>& mae() const { return mae_; }
    AcrModel& acr() { return acr_; }
    Upsampler& upsampler() { return up_; }
    /// ACR entries under "acr.", plus upsampler entries under "up." when the MAE branch is used.
    const ParamSet& trainable() const { return trainable_; }

   private:
    RunConfig cfg_;
    std::shared_ptr<MaeModel> mae_;
    AcrModel acr_;
    Upsampler up_;
    ParamSet trainable_;
};

struct StepLog {
    int64_t step = 0;
    double loss_l1 = 0, loss_adv = 0, loss_fm = 0, loss_hrf = 0, loss_d = 0, gp = 0;
    std::array<double, 4> alpha{};
    double beta_start = 0, beta_end = 0, lr_g = 0, lr_d = 0;
};

std::string step_log_header();
std::string format_step_log(const StepLog& s);

/// Adversarial ACR training against a frozen MAE.
class AcrTrainer {
   public:
    AcrTrainer(const RunConfig& cfg, std::shared_ptr<MaeModel> mae);

    /// One generator update followed by one discriminator update.
    StepLog train_step(const TrainBatch& batch);

    InpaintingModel& model() { return model_; }
    Discriminator& discriminator() { return disc_; }
    int64_t step() const { return step_; }
    const RunConfig& config() const { return cfg_; }

    /// Throws ContractError if the MAE's parameters changed since construction.
    void verify_mae_frozen() const;

    Checkpoint checkpoint(const nlohmann::json& stream_state) const;
    /// Restores weights, optimizer moments and the step counter. The
    /// checkpoint must come from an identically configured run with the same MAE.
    void restore(const Checkpoint& ck);

   private:
    RunConfig cfg_;
    InpaintingModel model_;
    Discriminator disc_;
    HrfExtractor hrf_;
    Adam opt_g_, opt_d_;
    int64_t step_ = 0;
    uint64_t mae_hash_ = 0;
};

struct TrainOptions {
    std::string out_dir;
    /// Checkpoint directory to continue from.
    std::string resume;
    /// Fixed mask for every image instead of random training masks.
    std::optional<MaskMap> fixed_mask;
    std::function<void(const StepLog&)> on_step;
};

struct TrainResult {
    std::vector<StepLog> logs;
    std::string checkpoint_dir;
};

/// Trains for cfg.total_steps (counted from step 0, so a resumed run stops at
/// the same point), logging CSV rows to out_dir/train_log.csv and writing the
/// final checkpoint to out_dir/checkpoint.
TrainResult train_acr(const RunConfig& cfg, std::shared_ptr<MaeModel> mae, const Dataset& data,
                      const TrainOptions& opt);

/// Valid dynamic-resolution sizes in [low, high]: multiples of 8 whose
/// bottleneck extent is a power of two.
std::vector<int64_t> dynamic_sizes(int64_t low, int64_t high);
/// Nearest valid size, ties toward the larger.
int64_t snap_resolution(int64_t size, int64_t low, int64_t high);
/// One triangular cycle high -> low -> high in steps of 8, snapped, without the closing high.
std::vector<int64_t> resolution_cycle(int64_t low, int64_t high);
/// Resolution at `step` when `total` steps hold `cycles` cycles.
int64_t resolution_for_step(int64_t step, int64_t total, int64_t low, int64_t high, int64_t cycles);

/// Continues a trained ACR checkpoint for `steps` more steps under the
/// dynamic-resolution cycle. `data` is loaded at cfg.dyn_high.
TrainResult finetune_hr(const RunConfig& cfg, std::shared_ptr<MaeModel> mae, const Dataset& data,
                        const std::string& acr_checkpoint, int64_t steps, const TrainOptions& opt);

struct MaeTrainOptions {
    std::string out_dir;
    /// Evaluate masked-pixel MSE every this many steps (0: never).
    int64_t eval_every = 0;
    /// Stop once the evaluated MSE falls below this.
    std::optional<double> stop_below;
    std::function<void(int64_t step, double loss)> on_step;
};

struct MaeTrainResult {
    std::vector<double> losses;
    std::vector<std::pair<int64_t, double>> evals;
    std::string checkpoint_dir;
};

/// Masked-pixel MSE over every image with a fixed seeded 75% token mask each.
double mae_masked_mse(const MaeModel& model, const Tensor& images, uint64_t seed);

/// Pretrains `model` for cfg.mae_steps at cfg.lr_mae. Logs `step,loss` rows to
/// out_dir/mae_log.csv and checkpoints to out_dir/checkpoint when out_dir is set.
MaeTrainResult pretrain_mae(const RunConfig& cfg, MaeModel& model, const Dataset& data, const MaeTrainOptions& opt);

/// Freshly initialised MAE for a run.
std::shared_ptr<MaeModel> make_mae(const RunConfig& cfg);
Checkpoint mae_checkpoint(const MaeModel& model, const RunConfig& cfg, int64_t step);
/// Rebuilds an MAE from a checkpoint written by pretrain_mae.
std::shared_ptr<MaeModel> load_mae(const std::string& dir);
/// Rebuilds the generator side from an ACR checkpoint and its MAE.
InpaintingModel load_inpainting_model(const std::string& acr_dir, std::shared_ptr<MaeModel> mae);

}  // namespace priorfill
