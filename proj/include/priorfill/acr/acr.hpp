#pragma once

#include <array>
#include <functional>

#include "priorfill/mae/mae.hpp"
#include "priorfill/upsampler/upsampler.hpp"

namespace priorfill {

enum class AggregationMode { none, prior_attention, contextual };

const char* aggregation_mode_name(AggregationMode m);
AggregationMode aggregation_mode_from_name(const std::string& name);

struct AcrConfig {
    int64_t image_channels = 3;
    /// Stem width followed by the three stride-2 stages.
    std::array<int64_t, 4> widths{32, 64, 128, 128};
    int64_t n_ffc = 3;
    double global_ratio = 0.5;
    AggregationMode mode = AggregationMode::prior_attention;
    double beta_init = 0.0;

    int64_t in_channels() const { return image_channels + 1; }
    int64_t bottleneck() const { return widths[3]; }
    int64_t global_channels() const;
    void validate() const;
};

/// Convolution (or transposed convolution), batch norm, optional ReLU.
struct ConvBn {
    Tensor w, b, g, beta;
    BatchNormState bn;
    int stride = 1, pad = 1, output_pad = 0;
    bool transposed = false;

    static ConvBn create(ParamSet& ps, const std::string& prefix, int64_t cin, int64_t cout, int k,
                         int stride, int pad, bool transposed, Rng& rng, int output_pad = 0);
};

Tensor conv_bn_forward(ConvBn& c, const Tensor& x, bool training, bool act = true);

struct FfcBlock {
    int64_t channels = 0, global_channels = 0;
    Tensor l2l_w, l2l_b, l2g_w, l2g_b, g2l_w, g2l_b;
    Tensor spec_w, spec_b, spec_g, spec_beta;
    BatchNormState spec_bn;
    Tensor out_g, out_beta;
    BatchNormState out_bn;

    static FfcBlock create(ParamSet& ps, const std::string& prefix, int64_t channels, int64_t global_channels,
                           Rng& rng);
};

/// x + relu(bn([l2l(x_l) + g2l(x_g) | l2g(x_l) + spectral(x_g)])), where
/// spectral = ifft(relu(bn(conv1x1(fft(x_g))))) on stacked real/imaginary channels.
Tensor ffc_forward(FfcBlock& blk, const Tensor& x, bool training);
/// The global branch's frequency-domain transform alone.
Tensor ffc_spectral(FfcBlock& blk, const Tensor& xg, bool training);

class AcrModel {
   public:
    explicit AcrModel(const AcrConfig& cfg, uint64_t seed = 0);

    const AcrConfig& config() const { return cfg_; }
    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }

    ConvBn stem;
    std::array<ConvBn, 3> down;
    std::vector<FfcBlock> ffc;
    Tensor beta_start, beta_end;  // each [1]
    std::array<ConvBn, 3> up;
    Tensor out_w, out_b;

   private:
    AcrConfig cfg_;
    ParamSet params_;
};

/// feats + beta * D, where D holds sum_u R[m,u] * F_u at masked token cells
/// and zero elsewhere. feats [B,c,fh,fw]; R [B,T,T]; each token covers an
/// s x s block of cells, s = fh / gh.
Tensor prior_attention_aggregate(const Tensor& feats, const Tensor& attention,
                                 const std::vector<TokenMask>& masks, const Tensor& beta);

/// Cosine-similarity softmax over unmasked token cells, aggregated into the
/// masked cells: feats + beta * D.
Tensor contextual_attention(const Tensor& feats, const std::vector<TokenMask>& masks, const Tensor& beta);
/// The [B,T,T] weights used by contextual_attention (rows of unmasked queries are zero).
Tensor contextual_weights(const Tensor& feats, const std::vector<TokenMask>& masks);

/// [B,c,fh,fw] -> [B,T,c*s*s] token-aligned cells, and back.
Tensor to_token_cells(const Tensor& feats, int64_t gh, int64_t gw);
Tensor from_token_cells(const Tensor& cells, int64_t c, int64_t gh, int64_t gw, int64_t s);

/// Token mask at the bottleneck grid of a pixel mask tensor [B,1,H,W].
std::vector<TokenMask> bottleneck_masks(const Tensor& mask, int64_t factor);

/// img_masked [B,C,H,W] with holes zeroed, mask [B,1,H,W]. Output in [0,1].
Tensor acr_forward(AcrModel& model, const Tensor& img_masked, const Tensor& mask, const MaePriors* priors,
                   const Pyramid* pyramid, bool training);

/// PatchGAN discriminator outputs: raw logits [B,1,H/16,W/16] and the four
/// stage feature maps.
struct DiscOutput {
    Tensor logits;
    std::vector<Tensor> features;
};
using DiscFn = std::function<DiscOutput(const Tensor&)>;

struct DiscConfig {
    int64_t image_channels = 3;
    std::array<int64_t, 4> widths{32, 64, 128, 128};
};

class Discriminator {
   public:
    explicit Discriminator(const DiscConfig& cfg, uint64_t seed = 0);
    const DiscConfig& config() const { return cfg_; }
    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }

    std::array<Tensor, 4> w, b;
    Tensor head_w, head_b;

   private:
    DiscConfig cfg_;
    ParamSet params_;
};

DiscOutput discriminate(const Discriminator& d, const Tensor& img);
DiscFn as_disc_fn(const Discriminator& d);

}  // namespace priorfill
