#pragma once

#include <json.hpp>
#include <string>
#include <vector>

#include "priorfill/acr/acr.hpp"
#include "priorfill/losses/losses.hpp"
#include "priorfill/mae/mae.hpp"

namespace priorfill {

struct RunConfig {
    uint64_t seed = 0;
    int64_t image_size = 32;
    /// Patch 8 keeps the token grid a divisor of the ACR bottleneck grid.
    MaeConfig mae = [] {
        MaeConfig m;
        m.patch = 8;
        return m;
    }();
    AcrConfig acr;
    DiscConfig disc;
    LossWeights weights;
    double lr_gen = 1e-3;
    double lr_disc = 1e-4;
    double lr_mae = 1e-3;
    int64_t halving_interval = 1000;
    int64_t total_steps = 3000;
    int64_t mae_steps = 5000;
    int64_t batch_size = 8;
    /// Dynamic-resolution finetuning: largest and smallest sizes and cycle count.
    int64_t dyn_high = 64;
    int64_t dyn_low = 32;
    int64_t dyn_cycles = 4;
    /// Empty: use `synthetic_count` generated images.
    std::string dataset_dir;
    int64_t synthetic_count = 8;
    uint64_t hrf_seed = 1234;
    /// Attach the MAE branch (priors, pyramid and prior attention) during ACR training.
    bool use_mae = true;
    /// Partial-mask decoder inputs during prior extraction.
    bool partial_priors = false;
    int64_t checkpoint_every = 0;
    bool deterministic = false;

    void validate() const;
};

nlohmann::json to_json(const MaeConfig& c);
nlohmann::json to_json(const AcrConfig& c);
nlohmann::json to_json(const DiscConfig& c);
nlohmann::json to_json(const LossWeights& w);
nlohmann::json to_json(const RunConfig& c);

/// Missing keys keep their defaults; unknown keys and bad values are ConfigErrors.
MaeConfig mae_config_from_json(const nlohmann::json& j, MaeConfig base = {});
AcrConfig acr_config_from_json(const nlohmann::json& j);
DiscConfig disc_config_from_json(const nlohmann::json& j);
LossWeights loss_weights_from_json(const nlohmann::json& j);
RunConfig run_config_from_json(const nlohmann::json& j);

RunConfig load_run_config(const std::string& path);
void save_run_config(const std::string& path, const RunConfig& c);

/// Upsampler layout feeding an ACR encoder from an MAE of the given width.
UpsamplerConfig upsampler_config_for(const AcrConfig& acr, const MaeConfig& mae);

}  // namespace priorfill
