#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "priorfill/numerics/params.hpp"

namespace priorfill {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Bias-corrected Adam over the trainable entries of a ParamSet.
/// Parameters without a gradient are skipped for that step.
class Adam {
   public:
    explicit Adam(const ParamSet& params, AdamConfig cfg = {});

    /// Throws NumericError naming the step and parameter if any gradient is
    /// non-finite; nothing is updated in that case.
    void step(double lr);

    int64_t step_count() const { return t_; }
    void set_step_count(int64_t t) { t_ = t; }
    const AdamConfig& config() const { return cfg_; }

    /// First and second moments as "<param>.m" / "<param>.v".
    std::vector<NamedTensor> state() const;

   private:
    std::vector<NamedTensor> params_;
    std::vector<Tensor> m_, v_;
    AdamConfig cfg_;
    int64_t t_ = 0;
};

/// base_lr * 0.5^floor(step / interval).
double lr_schedule(int64_t step, double base_lr, int64_t interval);

}  // namespace priorfill
