#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "priorfill/numerics/rng.hpp"
#include "priorfill/numerics/tensor.hpp"

namespace priorfill {

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

/// Named trainable parameters plus non-trainable buffers (running stats).
/// Handles are shared with the owning model, so in-place updates are visible
/// to both.
class ParamSet {
   public:
    Tensor add(const std::string& name, Tensor init);
    Tensor add_buffer(const std::string& name, Tensor init);
    /// Registers every entry of `other` under `prefix`.
    void merge(const std::string& prefix, const ParamSet& other);

    const std::vector<NamedTensor>& params() const { return params_; }
    const std::vector<NamedTensor>& buffers() const { return buffers_; }
    /// Parameters followed by buffers.
    std::vector<NamedTensor> all() const;
    Tensor find(const std::string& name) const;

    void zero_grad() const;
    int64_t numel() const;
    /// FNV-1a over every parameter and buffer byte, for freeze checks.
    uint64_t hash() const;

   private:
    void check_unique(const std::string& name) const;
    std::vector<NamedTensor> params_;
    std::vector<NamedTensor> buffers_;
};

/// Glorot-uniform init with the given fans.
Tensor xavier_uniform(const Shape& shape, int64_t fan_in, int64_t fan_out, Rng& rng,
                      DType dt = default_dtype());
/// He-uniform init scaled for ReLU-family activations.
Tensor kaiming_uniform(const Shape& shape, int64_t fan_in, Rng& rng, DType dt = default_dtype());
Tensor normal_init(const Shape& shape, double std, Rng& rng, DType dt = default_dtype());

}  // namespace priorfill
