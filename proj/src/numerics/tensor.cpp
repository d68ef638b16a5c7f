#include "priorfill/numerics/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "priorfill/numerics/ops.hpp"

namespace priorfill {

namespace {
thread_local DType g_default_dtype = DType::f32;
thread_local bool g_grad_enabled = true;

std::shared_ptr<Storage> make_storage(DType dt, int64_t n) {
    auto st = std::make_shared<Storage>();
    if (dt == DType::f32)
        st->buf = std::vector<float>(static_cast<size_t>(n), 0.0f);
    else
        st->buf = std::vector<double>(static_cast<size_t>(n), 0.0);
    return st;
}
}  // namespace

const char* dtype_name(DType dt) { return dt == DType::f32 ? "f32" : "f64"; }

DType dtype_from_name(const std::string& name) {
    if (name == "f32") return DType::f32;
    if (name == "f64") return DType::f64;
    throw ConfigError("unknown dtype '" + name + "'");
}

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (auto e : s) n *= e;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

DType default_dtype() { return g_default_dtype; }
DTypeScope::DTypeScope(DType dt) : prev_(g_default_dtype) { g_default_dtype = dt; }
DTypeScope::~DTypeScope() { g_default_dtype = prev_; }

bool grad_enabled() { return g_grad_enabled; }
GradModeGuard::GradModeGuard(bool enabled) : prev_(g_grad_enabled) { g_grad_enabled = enabled; }
GradModeGuard::~GradModeGuard() { g_grad_enabled = prev_; }

Tensor Tensor::empty(const Shape& shape, DType dt) {
    for (auto e : shape)
        if (e < 0) throw ShapeError("negative extent in " + shape_str(shape));
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = shape;
    impl->dtype = dt;
    impl->storage = make_storage(dt, shape_numel(shape));
    return Tensor(std::move(impl));
}

Tensor Tensor::zeros(const Shape& shape, DType dt) { return empty(shape, dt); }

Tensor Tensor::ones(const Shape& shape, DType dt) { return full(shape, 1.0, dt); }

Tensor Tensor::full(const Shape& shape, double value, DType dt) {
    Tensor t = empty(shape, dt);
    dispatch(dt, [&]<class T>() { std::fill_n(t.data<T>(), t.numel(), static_cast<T>(value)); });
    return t;
}

Tensor Tensor::scalar(double value, DType dt) { return full({}, value, dt); }

Tensor Tensor::from_vector(std::span<const double> values, const Shape& shape, DType dt) {
    if (static_cast<int64_t>(values.size()) != shape_numel(shape))
        throw ShapeError("from_vector: " + std::to_string(values.size()) +
                         " values for shape " + shape_str(shape));
    Tensor t = empty(shape, dt);
    dispatch(dt, [&]<class T>() {
        T* p = t.data<T>();
        for (size_t i = 0; i < values.size(); ++i) p[i] = static_cast<T>(values[i]);
    });
    return t;
}

Tensor Tensor::from_vector(std::initializer_list<double> values, const Shape& shape, DType dt) {
    return from_vector(std::span<const double>(values.begin(), values.size()), shape, dt);
}

const Shape& Tensor::shape() const {
    if (!impl_) throw ContractError("use of undefined tensor");
    return impl_->shape;
}

int64_t Tensor::dim(int i) const {
    const auto& s = shape();
    int n = static_cast<int>(s.size());
    int j = i < 0 ? i + n : i;
    if (j < 0 || j >= n)
        throw ShapeError("axis " + std::to_string(i) + " out of range for " + shape_str(s));
    return s[static_cast<size_t>(j)];
}

int64_t Tensor::numel() const { return shape_numel(shape()); }

DType Tensor::dtype() const {
    if (!impl_) throw ContractError("use of undefined tensor");
    return impl_->dtype;
}

template <class T>
T* Tensor::data() {
    auto* v = std::get_if<std::vector<T>>(&impl_->storage->buf);
    if (!v) throw ContractError("tensor dtype mismatch on data access");
    return v->data();
}

template <class T>
const T* Tensor::data() const {
    const auto* v = std::get_if<std::vector<T>>(&impl_->storage->buf);
    if (!v) throw ContractError("tensor dtype mismatch on data access");
    return v->data();
}

template float* Tensor::data<float>();
template double* Tensor::data<double>();
template const float* Tensor::data<float>() const;
template const double* Tensor::data<double>() const;

double Tensor::item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return at(0);
}

double Tensor::at(int64_t flat) const {
    return dispatch(dtype(), [&]<class T>() { return static_cast<double>(data<T>()[flat]); });
}

void Tensor::set(int64_t flat, double v) {
    dispatch(dtype(), [&]<class T>() { data<T>()[flat] = static_cast<T>(v); });
}

std::vector<double> Tensor::to_vector() const {
    std::vector<double> out(static_cast<size_t>(numel()));
    dispatch(dtype(), [&]<class T>() {
        const T* p = data<T>();
        for (size_t i = 0; i < out.size(); ++i) out[i] = static_cast<double>(p[i]);
    });
    return out;
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool rg) {
    if (!impl_) throw ContractError("use of undefined tensor");
    if (impl_->grad_fn && !rg)
        throw ContractError("cannot clear requires_grad on a non-leaf tensor");
    impl_->requires_grad = rg;
    return *this;
}

Tensor Tensor::grad() const {
    if (!impl_ || !impl_->grad) return Tensor();
    return Tensor(impl_->grad);
}

void Tensor::zero_grad() {
    if (impl_) impl_->grad.reset();
}

void Tensor::accumulate_grad(const Tensor& g) {
    if (g.shape() != shape())
        throw ShapeError("gradient shape " + shape_str(g.shape()) + " != " + shape_str(shape()));
    if (!impl_->grad) {
        impl_->grad = g.detach().to(dtype()).clone().impl_ptr();
        return;
    }
    Tensor acc(impl_->grad);
    dispatch(dtype(), [&]<class T>() {
        T* a = acc.data<T>();
        Tensor gg = g.dtype() == dtype() ? g : g.to(dtype());
        const T* b = gg.data<T>();
        for (int64_t i = 0, n_ = acc.numel(); i < n_; ++i) a[i] += b[i];
    });
}

const std::shared_ptr<GradFn>& Tensor::grad_fn() const {
    static const std::shared_ptr<GradFn> none;
    return impl_ ? impl_->grad_fn : none;
}

Tensor Tensor::detach() const {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = shape();
    impl->dtype = dtype();
    impl->storage = impl_->storage;
    return Tensor(std::move(impl));
}

Tensor Tensor::clone() const {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = shape();
    impl->dtype = dtype();
    impl->storage = std::make_shared<Storage>(*impl_->storage);
    return Tensor(std::move(impl));
}

void Tensor::copy_from(const Tensor& src) {
    if (src.shape() != shape())
        throw ShapeError("copy_from: " + shape_str(src.shape()) + " into " + shape_str(shape()));
    Tensor s = src.dtype() == dtype() ? src : src.to(dtype());
    dispatch(dtype(), [&]<class T>() { std::copy_n(s.data<T>(), numel(), data<T>()); });
}

Tensor Tensor::to(DType dt) const {
    if (dt == dtype()) return detach();
    Tensor out = empty(shape(), dt);
    dispatch(dtype(), [&]<class S>() {
        const S* src = data<S>();
        dispatch(dt, [&]<class D>() {
            D* dst = out.data<D>();
            for (int64_t i = 0, n_ = numel(); i < n_; ++i) dst[i] = static_cast<D>(src[i]);
        });
    });
    return out;
}

Tensor attach_grad_fn(Tensor out, std::vector<Tensor> inputs, std::string name, BackwardFn fn) {
    if (!grad_enabled()) return out;
    bool any = std::any_of(inputs.begin(), inputs.end(),
                           [](const Tensor& t) { return t.requires_grad(); });
    if (!any) return out;
    auto gf = std::make_shared<GradFn>();
    gf->name = std::move(name);
    gf->inputs = std::move(inputs);
    gf->fn = std::move(fn);
    out.impl()->grad_fn = std::move(gf);
    out.impl()->requires_grad = true;
    return out;
}

void require_first_order(const char* op, const Tensor& grad_out,
                         std::initializer_list<const Tensor*> saved) {
    if (!grad_enabled()) return;
    bool tracked = grad_out.requires_grad();
    for (const Tensor* t : saved) tracked = tracked || (t && t->requires_grad());
    if (tracked)
        throw ContractError(std::string("double backward is not supported through ") + op);
}

}  // namespace priorfill
