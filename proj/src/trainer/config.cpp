#include "priorfill/trainer/config.hpp"

#include <fstream>
#include <set>

namespace priorfill {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const char* what) {
    if (!j.is_object()) throw ConfigError(std::string(what) + ": expected a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.count(it.key())) throw ConfigError(std::string(what) + ": unknown key '" + it.key() + "'");
}

template <class T>
void read(const json& j, const char* key, T& out, const char* what) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string(what) + "." + key + ": " + e.what());
    }
}

template <class T, size_t N>
void read_array(const json& j, const char* key, std::array<T, N>& out, const char* what) {
    if (!j.contains(key)) return;
    std::vector<T> v;
    read(j, key, v, what);
    if (v.size() != N) throw ConfigError(std::string(what) + "." + key + ": expected " + std::to_string(N) + " values");
    std::copy(v.begin(), v.end(), out.begin());
}

}  // namespace

json to_json(const MaeConfig& c) {
    return {{"img", c.img},
            {"patch", c.patch},
            {"channels", c.channels},
            {"enc_layers", c.enc_layers},
            {"dec_layers", c.dec_layers},
            {"dim", c.dim},
            {"heads", c.heads},
            {"mlp_ratio", c.mlp_ratio},
            {"norm_pixel_target", c.norm_pixel_target},
            {"attn_layers_used", c.attn_layers_used},
            {"feature_layer", c.feature_layer},
            {"partial_embed", c.partial_embed}};
}

json to_json(const AcrConfig& c) {
    return {{"image_channels", c.image_channels},
            {"widths", std::vector<int64_t>(c.widths.begin(), c.widths.end())},
            {"n_ffc", c.n_ffc},
            {"global_ratio", c.global_ratio},
            {"mode", aggregation_mode_name(c.mode)},
            {"beta_init", c.beta_init}};
}

json to_json(const DiscConfig& c) {
    return {{"image_channels", c.image_channels}, {"widths", std::vector<int64_t>(c.widths.begin(), c.widths.end())}};
}

json to_json(const LossWeights& w) {
    return {{"l1", w.l1}, {"adv", w.adv}, {"fm", w.fm}, {"hrf", w.hrf}, {"gp", w.gp}};
}

json to_json(const RunConfig& c) {
    return {{"seed", c.seed},
            {"image_size", c.image_size},
            {"mae", to_json(c.mae)},
            {"acr", to_json(c.acr)},
            {"disc", to_json(c.disc)},
            {"weights", to_json(c.weights)},
            {"lr_gen", c.lr_gen},
            {"lr_disc", c.lr_disc},
            {"lr_mae", c.lr_mae},
            {"halving_interval", c.halving_interval},
            {"total_steps", c.total_steps},
            {"mae_steps", c.mae_steps},
            {"batch_size", c.batch_size},
            {"dyn_high", c.dyn_high},
            {"dyn_low", c.dyn_low},
            {"dyn_cycles", c.dyn_cycles},
            {"dataset_dir", c.dataset_dir},
            {"synthetic_count", c.synthetic_count},
            {"hrf_seed", c.hrf_seed},
            {"use_mae", c.use_mae},
            {"partial_priors", c.partial_priors},
            {"checkpoint_every", c.checkpoint_every},
            {"deterministic", c.deterministic}};
}

MaeConfig mae_config_from_json(const json& j, MaeConfig c) {
    const char* w = "mae";
    reject_unknown(j, {"img", "patch", "channels", "enc_layers", "dec_layers", "dim", "heads", "mlp_ratio",
                       "norm_pixel_target", "attn_layers_used", "feature_layer", "partial_embed"},
                   w);
    // Layer knobs follow dec_layers unless given explicitly.
    read(j, "dec_layers", c.dec_layers, w);
    if (j.contains("dec_layers")) c.attn_layers_used = c.feature_layer = c.dec_layers;
    read(j, "img", c.img, w);
    read(j, "patch", c.patch, w);
    read(j, "channels", c.channels, w);
    read(j, "enc_layers", c.enc_layers, w);
    read(j, "dim", c.dim, w);
    read(j, "heads", c.heads, w);
    read(j, "mlp_ratio", c.mlp_ratio, w);
    read(j, "norm_pixel_target", c.norm_pixel_target, w);
    read(j, "attn_layers_used", c.attn_layers_used, w);
    read(j, "feature_layer", c.feature_layer, w);
    read(j, "partial_embed", c.partial_embed, w);
    c.validate();
    return c;
}

AcrConfig acr_config_from_json(const json& j) {
    const char* w = "acr";
    reject_unknown(j, {"image_channels", "widths", "n_ffc", "global_ratio", "mode", "beta_init"}, w);
    AcrConfig c;
    read(j, "image_channels", c.image_channels, w);
    read_array(j, "widths", c.widths, w);
    read(j, "n_ffc", c.n_ffc, w);
    read(j, "global_ratio", c.global_ratio, w);
    std::string mode = aggregation_mode_name(c.mode);
    read(j, "mode", mode, w);
    c.mode = aggregation_mode_from_name(mode);
    read(j, "beta_init", c.beta_init, w);
    c.validate();
    return c;
}

DiscConfig disc_config_from_json(const json& j) {
    const char* w = "disc";
    reject_unknown(j, {"image_channels", "widths"}, w);
    DiscConfig c;
    read(j, "image_channels", c.image_channels, w);
    read_array(j, "widths", c.widths, w);
    return c;
}

LossWeights loss_weights_from_json(const json& j) {
    const char* w = "weights";
    reject_unknown(j, {"l1", "adv", "fm", "hrf", "gp"}, w);
    LossWeights l;
    read(j, "l1", l.l1, w);
    read(j, "adv", l.adv, w);
    read(j, "fm", l.fm, w);
    read(j, "hrf", l.hrf, w);
    read(j, "gp", l.gp, w);
    l.validate();
    return l;
}

RunConfig run_config_from_json(const json& j) {
    const char* w = "config";
    reject_unknown(j, {"seed", "image_size", "mae", "acr", "disc", "weights", "lr_gen", "lr_disc", "lr_mae",
                       "halving_interval", "total_steps", "mae_steps", "batch_size", "dyn_high", "dyn_low",
                       "dyn_cycles", "dataset_dir", "synthetic_count", "hrf_seed", "use_mae", "partial_priors",
                       "checkpoint_every", "deterministic"},
                   w);
    RunConfig c;
    read(j, "seed", c.seed, w);
    read(j, "image_size", c.image_size, w);
    if (j.contains("mae")) c.mae = mae_config_from_json(j.at("mae"), c.mae);
    if (j.contains("acr")) c.acr = acr_config_from_json(j.at("acr"));
    if (j.contains("disc")) c.disc = disc_config_from_json(j.at("disc"));
    if (j.contains("weights")) c.weights = loss_weights_from_json(j.at("weights"));
    read(j, "lr_gen", c.lr_gen, w);
    read(j, "lr_disc", c.lr_disc, w);
    read(j, "lr_mae", c.lr_mae, w);
    read(j, "halving_interval", c.halving_interval, w);
    read(j, "total_steps", c.total_steps, w);
    read(j, "mae_steps", c.mae_steps, w);
    read(j, "batch_size", c.batch_size, w);
    read(j, "dyn_high", c.dyn_high, w);
    read(j, "dyn_low", c.dyn_low, w);
    read(j, "dyn_cycles", c.dyn_cycles, w);
    read(j, "dataset_dir", c.dataset_dir, w);
    read(j, "synthetic_count", c.synthetic_count, w);
    read(j, "hrf_seed", c.hrf_seed, w);
    read(j, "use_mae", c.use_mae, w);
    read(j, "partial_priors", c.partial_priors, w);
    read(j, "checkpoint_every", c.checkpoint_every, w);
    read(j, "deterministic", c.deterministic, w);
    c.validate();
    return c;
}

void RunConfig::validate() const {
    mae.validate();
    acr.validate();
    weights.validate();
    if (image_size < 8 || image_size % 8 != 0) throw ConfigError("config: image_size must be a positive multiple of 8");
    if (!(lr_gen > 0) || !(lr_disc > 0) || !(lr_mae > 0)) throw ConfigError("config: learning rates must be positive");
    if (halving_interval <= 0) throw ConfigError("config: halving_interval must be positive");
    if (total_steps < 0 || mae_steps < 0) throw ConfigError("config: step counts must be non-negative");
    if (batch_size < 1) throw ConfigError("config: batch_size must be positive");
    if (dyn_low < 8 || dyn_high < dyn_low || dyn_low % 8 != 0 || dyn_high % 8 != 0)
        throw ConfigError("config: dynamic resolutions must be multiples of 8 with dyn_low <= dyn_high");
    if (dyn_cycles < 1) throw ConfigError("config: dyn_cycles must be positive");
    if (synthetic_count < 1) throw ConfigError("config: synthetic_count must be positive");
    if (acr.image_channels != mae.channels || disc.image_channels != acr.image_channels)
        throw ConfigError("config: image channel counts disagree");
    if (use_mae && acr.mode == AggregationMode::prior_attention) {
        const int64_t grid = mae.grid();
        for (int64_t s : {image_size, dyn_low, dyn_high})
            if ((s / 8) % grid != 0)
                throw ConfigError("config: MAE token grid " + std::to_string(grid) + " must divide the bottleneck grid " +
                                  std::to_string(s / 8) + " at resolution " + std::to_string(s));
    }
    if (partial_priors && !mae.partial_embed) throw ConfigError("config: partial_priors requires mae.partial_embed");
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("malformed config " + path + ": " + e.what());
    }
    return run_config_from_json(j);
}

void save_run_config(const std::string& path, const RunConfig& c) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write config file: " + path);
    out << to_json(c).dump(2) << '\n';
}

UpsamplerConfig upsampler_config_for(const AcrConfig& acr, const MaeConfig& mae) {
    UpsamplerConfig u;
    u.prior_dim = mae.dim;
    u.widths = {acr.widths[3], acr.widths[2], acr.widths[1], acr.widths[0]};
    return u;
}

}  // namespace priorfill
