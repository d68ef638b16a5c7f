#include "priorfill/trainer/adam.hpp"

#include <cmath>

namespace priorfill {

Adam::Adam(const ParamSet& params, AdamConfig cfg) : params_(params.params()), cfg_(cfg) {
    for (const auto& p : params_) {
        m_.push_back(Tensor::zeros(p.tensor.shape(), p.tensor.dtype()));
        v_.push_back(Tensor::zeros(p.tensor.shape(), p.tensor.dtype()));
    }
}

void Adam::step(double lr) {
    for (const auto& p : params_) {
        Tensor g = p.tensor.grad();
        if (!g.defined()) continue;
        dispatch(g.dtype(), [&]<class T>() {
            const T* pg = g.data<T>();
            for (int64_t i = 0, n_ = g.numel(); i < n_; ++i)
                if (!std::isfinite(pg[i]))
                    throw NumericError("non-finite gradient at step " + std::to_string(t_ + 1) +
                                       " in parameter '" + p.name + "'");
        });
    }
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, double(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, double(t_));
    for (size_t k = 0; k < params_.size(); ++k) {
        Tensor param = params_[k].tensor;
        Tensor g = param.grad();
        if (!g.defined()) continue;
        dispatch(param.dtype(), [&]<class T>() {
            T* pp = param.data<T>();
            const T* pg = g.data<T>();
            T* pm = m_[k].data<T>();
            T* pv = v_[k].data<T>();
            const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
            const T inv_c1 = static_cast<T>(1.0 / c1), inv_c2 = static_cast<T>(1.0 / c2);
            const T step = static_cast<T>(lr), eps = static_cast<T>(cfg_.eps);
            for (int64_t i = 0, n = param.numel(); i < n; ++i) {
                pm[i] = b1 * pm[i] + (1 - b1) * pg[i];
                pv[i] = b2 * pv[i] + (1 - b2) * pg[i] * pg[i];
                pp[i] -= step * (pm[i] * inv_c1) / (std::sqrt(pv[i] * inv_c2) + eps);
            }
        });
    }
}

std::vector<NamedTensor> Adam::state() const {
    std::vector<NamedTensor> out;
    for (size_t k = 0; k < params_.size(); ++k) {
        out.push_back({params_[k].name + ".m", m_[k]});
        out.push_back({params_[k].name + ".v", v_[k]});
    }
    return out;
}

double lr_schedule(int64_t step, double base_lr, int64_t interval) {
    if (interval <= 0) throw ConfigError("lr_schedule: interval must be positive");
    if (step < 0) throw ContractError("lr_schedule: negative step");
    return base_lr * std::pow(0.5, double(step / interval));
}

}  // namespace priorfill
