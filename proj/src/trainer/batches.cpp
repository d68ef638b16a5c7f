#include "priorfill/trainer/batches.hpp"

#include "priorfill/numerics/ops.hpp"

namespace priorfill {

using nlohmann::json;

namespace {
constexpr size_t kQueueDepth = 2;
}

BatchStream::BatchStream(const Dataset& data, BatchStreamConfig cfg, const json& resume_state)
    : data_(data), cfg_(std::move(cfg)), cur_{Rng(cfg_.seed), {}, 0, 0} {
    if (data_.size() == 0) throw ConfigError("batch stream: dataset is empty");
    if (cfg_.batch_size < 1) throw ConfigError("batch stream: batch size must be positive");
    if (cfg_.policy == MaskPolicy::fixed && cfg_.fixed_mask.bits.empty())
        throw ConfigError("batch stream: fixed mask policy needs a mask");
    if (!resume_state.is_null()) {
        try {
            cur_.rng.set_state(resume_state.at("rng").get<std::string>());
            cur_.perm = resume_state.at("perm").get<std::vector<int64_t>>();
            cur_.pos = resume_state.at("pos").get<size_t>();
            cur_.produced = resume_state.at("produced").get<int64_t>();
        } catch (const json::exception& e) {
            throw ConfigError(std::string("batch stream: malformed resume state: ") + e.what());
        }
        for (int64_t i : cur_.perm)
            if (i < 0 || i >= data_.size()) throw ConfigError("batch stream: resume state does not fit the dataset");
        if (cur_.pos > cur_.perm.size()) throw ConfigError("batch stream: resume state position out of range");
    }
    if (cfg_.prefetch) {
        const DType dt = default_dtype();
        worker_ = std::thread([this, dt] {
            DTypeScope scope(dt);
            producer_loop();
        });
    }
}

BatchStream::~BatchStream() {
    if (worker_.joinable()) {
        {
            std::lock_guard<std::mutex> lk(mu_);
            stop_ = true;
        }
        cv_.notify_all();
        worker_.join();
    }
}

json BatchStream::cursor_state() const {
    return {{"rng", cur_.rng.state()}, {"perm", cur_.perm}, {"pos", cur_.pos}, {"produced", cur_.produced}};
}

const Dataset& BatchStream::dataset_for(int64_t res) {
    if (res == data_.resolution()) return data_;
    auto it = resized_.find(res);
    if (it == resized_.end()) it = resized_.emplace(res, data_.resized(res)).first;
    return it->second;
}

TrainBatch BatchStream::produce() {
    TrainBatch b;
    b.index = cur_.produced;
    const int64_t res = cfg_.resolution ? cfg_.resolution(b.index) : data_.resolution();
    const Dataset& ds = dataset_for(res);
    std::vector<int64_t> idx;
    for (int64_t k = 0; k < cfg_.batch_size; ++k) {
        if (cur_.pos >= cur_.perm.size()) {
            cur_.perm.resize(static_cast<size_t>(data_.size()));
            for (int64_t i = 0; i < data_.size(); ++i) cur_.perm[static_cast<size_t>(i)] = i;
            cur_.rng.shuffle(cur_.perm);
            cur_.pos = 0;
        }
        idx.push_back(cur_.perm[cur_.pos++]);
    }
    b.images = ds.batch(idx);
    for (int64_t k = 0; k < cfg_.batch_size; ++k) {
        if (cfg_.policy == MaskPolicy::training)
            b.masks.push_back(gen_acr_training_mask(cur_.rng, res, res).mask);
        else if (cfg_.policy == MaskPolicy::fixed)
            b.masks.push_back(resize_mask(cfg_.fixed_mask, res, res));
    }
    ++cur_.produced;
    b.state_after = cursor_state();
    return b;
}

void BatchStream::producer_loop() {
    try {
        for (;;) {
            {
                std::unique_lock<std::mutex> lk(mu_);
                cv_.wait(lk, [this] { return stop_ || queue_.size() < kQueueDepth; });
                if (stop_) return;
            }
            TrainBatch b = produce();
            {
                std::lock_guard<std::mutex> lk(mu_);
                queue_.push_back(std::move(b));
            }
            cv_.notify_all();
        }
    } catch (...) {
        std::lock_guard<std::mutex> lk(mu_);
        error_ = std::current_exception();
        cv_.notify_all();
    }
}

TrainBatch BatchStream::next() {
    if (!cfg_.prefetch) return produce();
    std::unique_lock<std::mutex> lk(mu_);
    cv_.wait(lk, [this] { return !queue_.empty() || error_; });
    if (queue_.empty()) std::rethrow_exception(error_);
    TrainBatch b = std::move(queue_.front());
    queue_.pop_front();
    lk.unlock();
    cv_.notify_all();
    return b;
}

MaskMap resize_mask(const MaskMap& m, int64_t h, int64_t w) {
    if (h < 1 || w < 1) throw ShapeError("resize_mask: extents must be positive");
    if (m.h == h && m.w == w) return m;
    MaskMap out(h, w);
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            // Source rectangle covered by the destination pixel.
            const int64_t y0 = y * m.h / h, y1 = std::max(y0 + 1, (y + 1) * m.h / h);
            const int64_t x0 = x * m.w / w, x1 = std::max(x0 + 1, (x + 1) * m.w / w);
            bool any = false;
            for (int64_t sy = y0; sy < y1 && !any; ++sy)
                for (int64_t sx = x0; sx < x1 && !any; ++sx) any = m.at(sy, sx);
            if (any) out.set(y, x);
        }
    return out;
}

}  // namespace priorfill
