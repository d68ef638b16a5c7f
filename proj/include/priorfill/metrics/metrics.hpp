#pragma once

#include <string>
#include <vector>

#include "priorfill/metrics/image_io.hpp"

namespace priorfill {

/// 10 log10(peak^2 / MSE); identical inputs give the 99 dB cap.
double psnr(const Tensor& a, const Tensor& b, double peak = 1.0);
/// PSNR over the masked pixels only (all channels). a, b: [C,H,W] or [1,C,H,W].
double hole_psnr(const Tensor& a, const Tensor& b, const MaskMap& mask, double peak = 1.0);

/// Mean local SSIM with an 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
/// K2 = 0.03, peak 1, valid windows only. Multi-channel inputs [C,H,W] are
/// averaged over channels. Extents below 11 are a ContractError.
double ssim(const Tensor& a, const Tensor& b);

/// For each masked token, the unmasked token with the largest weight in its
/// row of R [T,T] (ties to the lowest index); -1 for unmasked tokens.
std::vector<int64_t> attention_argmax_map(const Tensor& attention, const TokenMask& mask);

/// Token grid rendered at `cell` pixels per token: unmasked tokens black,
/// masked tokens coloured by the position of the token they attend to.
Image8 render_attention_map(const std::vector<int64_t>& argmax, const TokenMask& mask, int64_t cell = 8);

struct EvalEntry {
    std::string name;
    double psnr = 0.0;
    double ssim = 0.0;
    double mask_ratio = 0.0;
    std::string bucket;
};

struct EvalReport {
    std::vector<EvalEntry> entries;
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;

    void add(EvalEntry e);
    std::string to_csv() const;
    std::string to_json() const;
};

/// Mask-ratio bucket tag such as "10-20%".
std::string mask_ratio_bucket(double ratio);

}  // namespace priorfill
