#pragma once

#include <string>
#include <vector>

#include "priorfill/numerics/rng.hpp"
#include "priorfill/numerics/tensor.hpp"

namespace priorfill {

/// Seeded toy scene [3,size,size] in [0,1]: a two-colour linear gradient
/// with a few flat rectangles and discs.
Tensor synthetic_image(uint64_t seed, int64_t size, DType dt = default_dtype());

/// In-memory image set, each image [3,size,size].
class Dataset {
   public:
    static Dataset synthetic(int64_t count, int64_t size, uint64_t seed);
    /// Every PNG in `dir` (sorted by name), resized to size x size.
    /// An empty or missing directory is a ConfigError.
    static Dataset from_directory(const std::string& dir, int64_t size);

    int64_t size() const { return static_cast<int64_t>(images_.size()); }
    int64_t resolution() const { return resolution_; }
    const Tensor& image(int64_t i) const { return images_.at(static_cast<size_t>(i)); }
    /// [n,3,size,size] batch of the given indices.
    Tensor batch(const std::vector<int64_t>& indices) const;
    /// Same images resampled to another resolution.
    Dataset resized(int64_t size) const;

   private:
    std::vector<Tensor> images_;
    int64_t resolution_ = 0;
};

}  // namespace priorfill
