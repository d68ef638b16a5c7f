#pragma once

#include <condition_variable>
#include <deque>
#include <functional>
#include <json.hpp>
#include <map>
#include <mutex>
#include <optional>
#include <thread>

#include "priorfill/masking/masks.hpp"
#include "priorfill/trainer/dataset.hpp"

namespace priorfill {

enum class MaskPolicy {
    training,  // fresh ACR training mask per image
    fixed,     // the same mask for every image
    none,      // images only
};

struct TrainBatch {
    int64_t index = 0;
    Tensor images;  // [B,C,H,W]
    std::vector<MaskMap> masks;
    /// Stream state after producing this batch; resuming from it continues with batch index + 1.
    nlohmann::json state_after;
};

struct BatchStreamConfig {
    int64_t batch_size = 8;
    uint64_t seed = 0;
    MaskPolicy policy = MaskPolicy::training;
    MaskMap fixed_mask;
    /// Resolution of batch i; empty means the dataset's own resolution.
    std::function<int64_t(int64_t)> resolution;
    /// Assemble batches on a producer thread, at most two ahead.
    bool prefetch = false;
};

/// Deterministic batch and mask sequence. Images are drawn by walking seeded
/// permutations of the dataset; the sequence is identical with or without
/// prefetching because the producer owns the only random stream.
class BatchStream {
   public:
    BatchStream(const Dataset& data, BatchStreamConfig cfg, const nlohmann::json& resume_state = nullptr);
    ~BatchStream();
    BatchStream(const BatchStream&) = delete;
    BatchStream& operator=(const BatchStream&) = delete;

    TrainBatch next();

   private:
    struct Cursor {
        Rng rng;
        std::vector<int64_t> perm;
        size_t pos = 0;
        int64_t produced = 0;
    };
    TrainBatch produce();
    nlohmann::json cursor_state() const;
    const Dataset& dataset_for(int64_t res);
    void producer_loop();

    const Dataset& data_;
    BatchStreamConfig cfg_;
    std::map<int64_t, Dataset> resized_;
    Cursor cur_;

    std::thread worker_;
    std::mutex mu_;
    std::condition_variable cv_;
    std::deque<TrainBatch> queue_;
    std::exception_ptr error_;
    bool stop_ = false;
};

/// Pixel mask resampled to h x w. Downsampling marks a pixel when any pixel it
/// covers is masked; upsampling is nearest-neighbour.
MaskMap resize_mask(const MaskMap& m, int64_t h, int64_t w);

}  // namespace priorfill
