#pragma once

#include <functional>
#include <string>
#include <vector>

#include "priorfill/numerics/tensor.hpp"

namespace priorfill {

struct GradCheckResult {
    std::string name;
    double max_rel_err = 0.0;
    int64_t checked = 0;  // elements compared (tiny pairs excluded)
    bool passed = false;
};

struct GradCheckOptions {
    double step = 1e-4;
    double tolerance = 1e-3;
    double tiny = 1e-8;
};

using ScalarFn = std::function<Tensor(const std::vector<Tensor>&)>;

/// Compares reverse-mode gradients of `f` against central differences in
/// 64-bit precision. Inputs are converted to f64 and marked as requiring grad.
GradCheckResult check_gradients(const std::string& name, const ScalarFn& f,
                                std::vector<Tensor> inputs, GradCheckOptions opt = {});

/// Fixed random weighting turning a tensor into a scalar, so every output
/// element contributes a distinct coefficient.
Tensor weighted_sum(const Tensor& out, uint64_t seed = 7);

/// Standard-normal tensor from a seeded generator.
Tensor randn(const Shape& shape, uint64_t seed, double scale = 1.0, DType dt = default_dtype());
/// Uniform [lo, hi) tensor from a seeded generator.
Tensor rand_uniform(const Shape& shape, uint64_t seed, double lo = 0.0, double hi = 1.0,
                    DType dt = default_dtype());

}  // namespace priorfill
