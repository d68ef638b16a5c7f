#pragma once

#include <array>

#include "priorfill/acr/acr.hpp"

namespace priorfill {

struct LossWeights {
    double l1 = 10.0;
    double adv = 10.0;
    double fm = 100.0;
    double hrf = 30.0;
    double gp = 1e-3;
    void validate() const;
};

/// mean((1 - M) * |pred - gt|) over every element.
Tensor l1_unmasked(const Tensor& pred, const Tensor& gt, const Tensor& mask);

/// Pixel mask [B,1,H,W] max-pooled onto a score grid [.., sh, sw].
Tensor mask_to_score_grid(const Tensor& mask, int64_t sh, int64_t sw);

/// Non-saturating PatchGAN log-loss. Known pixels of the fake count as real.
Tensor disc_loss(const Tensor& real_logits, const Tensor& fake_logits, const Tensor& mask);
Tensor disc_loss(const DiscFn& d, const Tensor& real, const Tensor& fake, const Tensor& mask);

/// -mean(log sigmoid(D(fake))).
Tensor gen_adv_loss(const Tensor& fake_logits);
Tensor gen_adv_loss(const DiscFn& d, const Tensor& fake);

/// Batch mean of ||d sum(D(real)) / d real||^2. Differentiable in D's parameters.
Tensor gradient_penalty(const DiscFn& d, const Tensor& real);

/// Mean over stages of mean |f_real - f_fake|; real features are detached.
Tensor feature_match(const std::vector<Tensor>& real_features, const std::vector<Tensor>& fake_features);
Tensor feature_match(const DiscFn& d, const Tensor& real, const Tensor& fake);

/// Frozen random dilated-convolution pyramid used as the perceptual feature extractor.
class HrfExtractor {
   public:
    explicit HrfExtractor(uint64_t seed = 1234, int64_t channels = 3);
    std::vector<Tensor> features(const Tensor& img) const;
    uint64_t seed() const { return seed_; }
    const ParamSet& params() const { return params_; }

   private:
    uint64_t seed_;
    std::array<Tensor, 3> w_, b_;
    ParamSet params_;
};

/// Sum over stages of the feature mean squared error; real features are detached.
Tensor hrf_loss(const HrfExtractor& ex, const Tensor& real, const Tensor& fake);

struct GeneratorLossTerms {
    Tensor l1, adv, fm, hrf;
};

Tensor total_generator_loss(const GeneratorLossTerms& terms, const LossWeights& w);

}  // namespace priorfill
