#include "priorfill/numerics/params.hpp"

#include <cmath>
#include <cstring>

namespace priorfill {

void ParamSet::check_unique(const std::string& name) const {
    for (const auto& p : params_)
        if (p.name == name) throw ContractError("duplicate parameter name '" + name + "'");
    for (const auto& b : buffers_)
        if (b.name == name) throw ContractError("duplicate buffer name '" + name + "'");
}

Tensor ParamSet::add(const std::string& name, Tensor init) {
    check_unique(name);
    init.set_requires_grad(true);
    params_.push_back({name, init});
    return init;
}

Tensor ParamSet::add_buffer(const std::string& name, Tensor init) {
    check_unique(name);
    buffers_.push_back({name, init});
    return init;
}

void ParamSet::merge(const std::string& prefix, const ParamSet& other) {
    for (const auto& p : other.params_) {
        check_unique(prefix + p.name);
        params_.push_back({prefix + p.name, p.tensor});
    }
    for (const auto& b : other.buffers_) {
        check_unique(prefix + b.name);
        buffers_.push_back({prefix + b.name, b.tensor});
    }
}

std::vector<NamedTensor> ParamSet::all() const {
    std::vector<NamedTensor> out = params_;
    out.insert(out.end(), buffers_.begin(), buffers_.end());
    return out;
}

Tensor ParamSet::find(const std::string& name) const {
    for (const auto& p : params_)
        if (p.name == name) return p.tensor;
    for (const auto& b : buffers_)
        if (b.name == name) return b.tensor;
    throw ContractError("no parameter named '" + name + "'");
}

void ParamSet::zero_grad() const {
    for (const auto& p : params_) Tensor(p.tensor).zero_grad();
}

int64_t ParamSet::numel() const {
    int64_t n = 0;
    for (const auto& p : params_) n += p.tensor.numel();
    return n;
}

uint64_t ParamSet::hash() const {
    uint64_t h = 1469598103934665603ull;
    auto feed = [&h](const void* data, size_t n) {
        const auto* b = static_cast<const unsigned char*>(data);
        for (size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 1099511628211ull;
        }
    };
    for (const auto& e : all()) {
        feed(e.name.data(), e.name.size());
        dispatch(e.tensor.dtype(), [&]<class T>() {
            feed(e.tensor.data<T>(), static_cast<size_t>(e.tensor.numel()) * sizeof(T));
        });
    }
    return h;
}

namespace {
Tensor fill_uniform(const Shape& shape, double bound, Rng& rng, DType dt) {
    std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
    for (auto& e : v) e = rng.uniform(-bound, bound);
    return Tensor::from_vector(v, shape, dt);
}
}  // namespace

Tensor xavier_uniform(const Shape& shape, int64_t fan_in, int64_t fan_out, Rng& rng, DType dt) {
    return fill_uniform(shape, std::sqrt(6.0 / double(fan_in + fan_out)), rng, dt);
}

Tensor kaiming_uniform(const Shape& shape, int64_t fan_in, Rng& rng, DType dt) {
    return fill_uniform(shape, std::sqrt(6.0 / double(fan_in)), rng, dt);
}

Tensor normal_init(const Shape& shape, double std, Rng& rng, DType dt) {
    std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
    for (auto& e : v) e = rng.normal() * std;
    return Tensor::from_vector(v, shape, dt);
}

}  // namespace priorfill
