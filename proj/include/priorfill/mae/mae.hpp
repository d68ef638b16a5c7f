#pragma once

#include <vector>

#include "priorfill/mae/transformer.hpp"
#include "priorfill/masking/masks.hpp"
#include "priorfill/trainer/adam.hpp"

namespace priorfill {

struct MaeConfig {
    int64_t img = 32;
    int64_t patch = 4;
    int64_t channels = 3;
    int64_t enc_layers = 6;
    int64_t dec_layers = 4;
    int64_t dim = 64;
    int64_t heads = 4;
    int64_t mlp_ratio = 4;
    bool norm_pixel_target = false;
    int64_t attn_layers_used = 4;
    int64_t feature_layer = 4;
    bool partial_embed = false;

    int64_t grid() const { return img / patch; }
    int64_t tokens() const { return grid() * grid(); }
    int64_t patch_dim() const { return patch * patch * channels; }
    /// Throws ConfigError on an inconsistent configuration.
    void validate() const;
};

class MaeModel {
   public:
    explicit MaeModel(const MaeConfig& cfg, uint64_t seed = 0);

    const MaeConfig& config() const { return cfg_; }
    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }

    Tensor patch_w, patch_b;
    Tensor enc_pos, dec_pos;  // fixed tables [T, dim]
    std::vector<TransformerBlock> enc_blocks, dec_blocks;
    Tensor enc_norm_g, enc_norm_b;
    Tensor dec_embed_w, dec_embed_b;
    Tensor mask_token;  // [dim]
    Tensor dec_norm_g, dec_norm_b;
    Tensor pred_w, pred_b;
    Tensor partial_w, partial_b;  // undefined unless cfg.partial_embed

   private:
    MaeConfig cfg_;
    ParamSet params_;
};

/// [C,H,W] -> [T, p*p*C] or [B,C,H,W] -> [B,T,p*p*C]. Each token lists its
/// pixels row-major with the channels innermost.
Tensor patchify(const Tensor& img, int64_t patch);
/// Inverse of patchify for a gh x gw token grid.
Tensor unpatchify(const Tensor& tokens, int64_t patch, int64_t channels, int64_t gh, int64_t gw);

/// Encoder over the visible tokens only: [B,C,H,W] -> [B,U,dim]. Every mask
/// in the batch must keep the same number U >= 1 of tokens.
Tensor encode_visible(const MaeModel& model, const Tensor& imgs, const std::vector<TokenMask>& masks);
/// Single image: [C,H,W] -> [U, dim].
Tensor encode_image(const MaeModel& model, const Tensor& img, const TokenMask& mask);

/// Pixel-level view used by the partial-mask decoder input.
struct PartialMaskInput {
    Tensor images;                  // [B,C,H,W]
    std::vector<MaskMap> pixel_masks;
};

struct DecodeResult {
    Tensor input;                 // [B,T,dim] decoder input after positional embeddings
    std::vector<Tensor> tokens;   // per layer, [B,T,dim]
    std::vector<Tensor> attn;     // per layer, head-averaged softmax [B,T,T]
    std::vector<Tensor> logits;   // per layer, [B,heads,T,T]
    Tensor pixel_pred;            // [B,T,p*p*C]
};

DecodeResult decode(const MaeModel& model, const Tensor& enc_out, const std::vector<TokenMask>& masks,
                    const PartialMaskInput* partial = nullptr, bool record = true);

/// Per-token partial-mask descriptor [B,T,p*p*4]: pixels with masked entries
/// zeroed, followed by the 0-1 mask, per pixel.
Tensor partial_patch_input(const Tensor& imgs, const std::vector<MaskMap>& pixel_masks, int64_t patch);

/// Each row standardised to mean 0, variance 1 (eps added to the variance).
Tensor normalize_patches(const Tensor& patches, double eps = 1e-6);

/// Mean squared error over the masked tokens of [B,T,P] predictions.
Tensor reconstruction_loss(const Tensor& pixel_pred, const Tensor& imgs,
                           const std::vector<TokenMask>& masks, int64_t patch, bool norm_pixel_target);

struct MaePriors {
    Tensor features;   // [B,gh,gw,dim]
    Tensor attention;  // [B,T,T]
    std::vector<TokenMask> masks;
};

/// Masked-key softmax of per-layer logits [heads,T,T] averaged over heads,
/// then over the first `layers_used` layers: [T,T].
Tensor masked_prior_attention(const std::vector<Tensor>& logits, const TokenMask& mask,
                              int64_t layers_used);

/// Frozen prior extraction, one image at a time. With `pixel_masks` and a
/// partial projection, partially masked tokens use the partial input.
MaePriors extract_priors(const MaeModel& model, const Tensor& imgs, const std::vector<TokenMask>& masks,
                         const std::vector<MaskMap>* pixel_masks = nullptr);

/// Token mask for prior extraction from a pixel mask. If enlargement masks
/// every token, the token with the fewest masked pixels is kept visible.
TokenMask prior_token_mask(const MaskMap& m, int64_t patch);

/// Samples a 75% pretraining mask per image, applies one Adam update and
/// returns the loss.
double mae_pretrain_step(MaeModel& model, Adam& opt, const Tensor& batch, Rng& rng, double lr);

}  // namespace priorfill
