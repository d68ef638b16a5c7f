#include "priorfill/verify/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "priorfill/numerics/ops.hpp"

namespace priorfill {

GradCheckResult check_gradients(const std::string& name, const ScalarFn& f,
                                std::vector<Tensor> inputs, GradCheckOptions opt) {
    DTypeScope scope(DType::f64);
    for (Tensor& t : inputs) {
        t = t.to(DType::f64).clone();
        t.set_requires_grad(true);
    }
    Tensor out = f(inputs);
    std::vector<Tensor> analytic = grad(out, inputs);

    GradCheckResult res;
    res.name = name;
    for (size_t k = 0; k < inputs.size(); ++k) {
        Tensor& x = inputs[k];
        for (int64_t i = 0, n_ = x.numel(); i < n_; ++i) {
            const double orig = x.at(i);
            x.set(i, orig + opt.step);
            const double fp = f(inputs).item();
            x.set(i, orig - opt.step);
            const double fm = f(inputs).item();
            x.set(i, orig);
            const double num = (fp - fm) / (2 * opt.step);
            const double ana = analytic[k].at(i);
            const double denom = std::max(std::abs(num), std::abs(ana));
            if (denom < opt.tiny) continue;
            res.max_rel_err = std::max(res.max_rel_err, std::abs(num - ana) / denom);
            ++res.checked;
        }
    }
    res.passed = std::isfinite(res.max_rel_err) && res.max_rel_err < opt.tolerance;
    return res;
}

Tensor weighted_sum(const Tensor& out, uint64_t seed) {
    Tensor w = randn(out.shape(), seed, 1.0, out.dtype());
    return sum(mul(out, w));
}

Tensor randn(const Shape& shape, uint64_t seed, double scale, DType dt) {
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> nd(0.0, 1.0);
    std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
    for (auto& e : v) e = nd(gen) * scale;
    return Tensor::from_vector(v, shape, dt);
}

Tensor rand_uniform(const Shape& shape, uint64_t seed, double lo, double hi, DType dt) {
    std::mt19937_64 gen(seed);
    std::uniform_real_distribution<double> ud(lo, hi);
    std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
    for (auto& e : v) e = ud(gen);
    return Tensor::from_vector(v, shape, dt);
}

}  // namespace priorfill
