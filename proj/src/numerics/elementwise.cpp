#include <cmath>
#include <numbers>

#include "priorfill/numerics/ops.hpp"

namespace priorfill {

namespace {

void check_same_dtype(const Tensor& a, const Tensor& b, const char* op) {
    if (a.dtype() != b.dtype())
        throw ContractError(std::string(op) + ": mixed dtypes " + dtype_name(a.dtype()) + "/" +
                            dtype_name(b.dtype()));
}

// Strides of `in` viewed inside the broadcast shape `out` (0 on stretched axes).
std::vector<int64_t> broadcast_strides(const Shape& in, const Shape& out) {
    const size_t n = out.size();
    const size_t off = n - in.size();
    std::vector<int64_t> contiguous(in.size(), 1);
    for (size_t i = in.size(); i-- > 1;) contiguous[i - 1] = contiguous[i] * in[i];
    std::vector<int64_t> s(n, 0);
    for (size_t i = off; i < n; ++i) {
        size_t j = i - off;
        s[i] = (in[j] == 1 && out[i] != 1) ? 0 : contiguous[j];
    }
    return s;
}

// Calls f(out_flat, off_a, off_b) over every element of `out`.
template <class F>
void for_each_broadcast(const Shape& out, const std::vector<int64_t>& sa,
                        const std::vector<int64_t>& sb, F&& f) {
    const int n = static_cast<int>(out.size());
    const int64_t total = shape_numel(out);
    if (total == 0) return;
    if (n == 0) {
        f(0, 0, 0);
        return;
    }
    const int64_t inner = out[n - 1];
    const int64_t ia = sa[n - 1], ib = sb[n - 1];
    std::vector<int64_t> idx(n, 0);
    int64_t oa = 0, ob = 0;
    for (int64_t base = 0; base < total; base += inner) {
        for (int64_t k = 0; k < inner; ++k) f(base + k, oa + k * ia, ob + k * ib);
        for (int d = n - 2; d >= 0; --d) {
            ++idx[d];
            oa += sa[d];
            ob += sb[d];
            if (idx[d] < out[d]) break;
            oa -= sa[d] * out[d];
            ob -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

template <class T>
T apply_binary(BinaryKind k, T x, T y) {
    switch (k) {
        case BinaryKind::add: return x + y;
        case BinaryKind::sub: return x - y;
        case BinaryKind::mul: return x * y;
        case BinaryKind::div: return x / y;
    }
    return T(0);
}

Tensor binary_forward(const Tensor& a, const Tensor& b, BinaryKind kind) {
    check_same_dtype(a, b, "binary_elementwise");
    Shape out_shape = broadcast_shapes(a.shape(), b.shape());
    Tensor out = Tensor::empty(out_shape, a.dtype());
    dispatch(a.dtype(), [&]<class T>() {
        const T* pa = a.data<T>();
        const T* pb = b.data<T>();
        T* po = out.data<T>();
        const int64_t n = out.numel();
        if (a.shape() == b.shape()) {
            switch (kind) {
                case BinaryKind::add: for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i]; break;
                case BinaryKind::sub: for (int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i]; break;
                case BinaryKind::mul: for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i]; break;
                case BinaryKind::div: for (int64_t i = 0; i < n; ++i) po[i] = pa[i] / pb[i]; break;
            }
            return;
        }
        auto sa = broadcast_strides(a.shape(), out_shape);
        auto sb = broadcast_strides(b.shape(), out_shape);
        for_each_broadcast(out_shape, sa, sb, [&](int64_t o, int64_t ia, int64_t ib) {
            po[o] = apply_binary(kind, pa[ia], pb[ib]);
        });
    });
    return out;
}

template <class F>
Tensor map_unary(const Tensor& x, F&& f) {
    Tensor out = Tensor::empty(x.shape(), x.dtype());
    dispatch(x.dtype(), [&]<class T>() {
        const T* px = x.data<T>();
        T* po = out.data<T>();
        for (int64_t i = 0, n_ = x.numel(); i < n_; ++i) po[i] = static_cast<T>(f(px[i]));
    });
    return out;
}

// out = g * f(x, y) computed elementwise; used by first-order-only closures.
template <class F>
Tensor grad_map(const Tensor& g, const Tensor& x, const Tensor& y, F&& f) {
    Tensor out = Tensor::empty(x.shape(), x.dtype());
    dispatch(x.dtype(), [&]<class T>() {
        const T* pg = g.data<T>();
        const T* px = x.data<T>();
        const T* py = y.data<T>();
        T* po = out.data<T>();
        for (int64_t i = 0, n_ = x.numel(); i < n_; ++i) po[i] = static_cast<T>(pg[i] * f(px[i], py[i]));
    });
    return out;
}

}  // namespace

Shape broadcast_shapes(const Shape& a, const Shape& b) {
    const size_t n = std::max(a.size(), b.size());
    Shape out(n, 1);
    for (size_t i = 0; i < n; ++i) {
        int64_t ea = i < n - a.size() ? 1 : a[i - (n - a.size())];
        int64_t eb = i < n - b.size() ? 1 : b[i - (n - b.size())];
        if (ea != eb && ea != 1 && eb != 1)
            throw ShapeError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
        out[i] = ea == 1 ? eb : ea;
    }
    return out;
}

Tensor binary_elementwise(const Tensor& a, const Tensor& b, BinaryKind kind) {
    Tensor out = binary_forward(a, b, kind);
    return attach_grad_fn(
        out, {a, b}, "binary_elementwise",
        [a, b, kind](const Tensor& g, const std::vector<bool>& needs) -> std::vector<Tensor> {
            Tensor ga, gb;
            switch (kind) {
                case BinaryKind::add:
                    if (needs[0]) ga = sum_to(g, a.shape());
                    if (needs[1]) gb = sum_to(g, b.shape());
                    break;
                case BinaryKind::sub:
                    if (needs[0]) ga = sum_to(g, a.shape());
                    if (needs[1]) gb = neg(sum_to(g, b.shape()));
                    break;
                case BinaryKind::mul:
                    if (needs[0]) ga = sum_to(mul(g, b), a.shape());
                    if (needs[1]) gb = sum_to(mul(g, a), b.shape());
                    break;
                case BinaryKind::div:
                    if (needs[0]) ga = sum_to(div(g, b), a.shape());
                    if (needs[1]) gb = sum_to(neg(div(mul(g, a), mul(b, b))), b.shape());
                    break;
            }
            return {ga, gb};
        });
}

Tensor add(const Tensor& a, const Tensor& b) { return binary_elementwise(a, b, BinaryKind::add); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_elementwise(a, b, BinaryKind::sub); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_elementwise(a, b, BinaryKind::mul); }
Tensor div(const Tensor& a, const Tensor& b) { return binary_elementwise(a, b, BinaryKind::div); }

Tensor add_scalar(const Tensor& x, double s) {
    Tensor out = map_unary(x, [s](auto v) { return v + s; });
    return attach_grad_fn(out, {x}, "add_scalar",
                          [](const Tensor& g, const std::vector<bool>&) -> std::vector<Tensor> {
                              return {g};
                          });
}

Tensor mul_scalar(const Tensor& x, double s) {
    Tensor out = map_unary(x, [s](auto v) { return v * s; });
    return attach_grad_fn(out, {x}, "mul_scalar",
                          [s](const Tensor& g, const std::vector<bool>&) -> std::vector<Tensor> {
                              return {mul_scalar(g, s)};
                          });
}

Tensor neg(const Tensor& x) { return mul_scalar(x, -1.0); }

Tensor expand_to(const Tensor& x, const Shape& shape) {
    if (x.shape() == shape) return x;
    if (broadcast_shapes(x.shape(), shape) != shape)
        throw ShapeError("expand_to: " + shape_str(x.shape()) + " -> " + shape_str(shape));
    Tensor out = Tensor::empty(shape, x.dtype());
    dispatch(x.dtype(), [&]<class T>() {
        const T* px = x.data<T>();
        T* po = out.data<T>();
        auto sx = broadcast_strides(x.shape(), shape);
        std::vector<int64_t> zero(shape.size(), 0);
        for_each_broadcast(shape, sx, zero, [&](int64_t o, int64_t ix, int64_t) { po[o] = px[ix]; });
    });
    Shape in_shape = x.shape();
    return attach_grad_fn(out, {x}, "expand_to",
                          [in_shape](const Tensor& g, const std::vector<bool>&) -> std::vector<Tensor> {
                              return {sum_to(g, in_shape)};
                          });
}

Tensor sum_to(const Tensor& x, const Shape& shape) {
    if (x.shape() == shape) return x;
    if (broadcast_shapes(shape, x.shape()) != x.shape())
        throw ShapeError("sum_to: " + shape_str(x.shape()) + " -> " + shape_str(shape));
    Tensor out = Tensor::zeros(shape, x.dtype());
    dispatch(x.dtype(), [&]<class T>() {
        const T* px = x.data<T>();
        T* po = out.data<T>();
        auto so = broadcast_strides(shape, x.shape());
        std::vector<int64_t> ident(x.shape().size(), 0);
        for (size_t i = ident.size(), s = 1; i-- > 0;) {
            ident[i] = static_cast<int64_t>(s);
            s *= static_cast<size_t>(x.shape()[i]);
        }
        for_each_broadcast(x.shape(), ident, so,
                           [&](int64_t, int64_t ix, int64_t io) { po[io] += px[ix]; });
    });
    Shape in_shape = x.shape();
    return attach_grad_fn(out, {x}, "sum_to",
                          [in_shape](const Tensor& g, const std::vector<bool>&) -> std::vector<Tensor> {
                              return {expand_to(g, in_shape)};
                          });
}

// ---------------------------------------------------------------------------

Tensor exp(const Tensor& x) {
    Tensor y = map_unary(x, [](auto v) { return std::exp(v); });
    Tensor ys = y.detach();
    return attach_grad_fn(y, {x}, "exp",
                          [x, ys](const Tensor& g, const std::vector<bool>&) -> std::vector<Tensor> {
                              require_first_order("exp", g, {&x});
                              return {grad_map(g, x, ys, [](auto, auto yv) { return yv; })};
                          });
}

Tensor log(const Tensor& x) {
    Tensor y = map_unary(x, [](auto v) { return std::log(v); });
    return attach_grad_fn(y, {x}, "log",
                          [x](const Tensor& g, const std::vector<bool>&) -> std::vector<Tensor> {
                              return {div(g, x)};
                          });
}

Tensor sqrt(const Tensor& x) {
    Tensor y = map_unary(x, [](auto v) { return std::sqrt(v); });
    Tensor ys = y.detach();
    return attach_grad_fn(y, {x}, "sqrt",
                          [x, ys](const Tensor& g, const std::vector<bool>&) -> std::vector<Tensor> {
                              require_first_order("sqrt", g, {&x});
                              return {grad_map(g, x, ys, [](auto, auto yv) { return 0.5 / yv; })};
                          });
}

Tensor abs(const Tensor& x) {
    Tensor y = map_unary(x, [](auto v) { return std::abs(v); });
    Tensor sign = map_unary(x, [](auto v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
    return attach_grad_fn(y, {x}, "abs",
                          [sign](const Tensor& g, const std::vector<bool>&) -> std::vector<Tensor> {
                              return {mul(g, sign)};
                          });
}

Tensor square(const Tensor& x) {
    Tensor y = map_unary(x, [](auto v) { return v * v; });
    return attach_grad_fn(y, {x}, "square",
                          [x](const Tensor& g, const std::vector<bool>&) -> std::vector<Tensor> {
                              return {mul(g, mul_scalar(x, 2.0))};
                          });
}

Tensor clamp_min(const Tensor& x, double lo) {
    Tensor y = map_unary(x, [lo](auto v) { return v < lo ? lo : v; });
    Tensor pass = map_unary(x, [lo](auto v) { return v < lo ? 0.0 : 1.0; });
    return attach_grad_fn(y, {x}, "clamp_min",
                          [pass](const Tensor& g, const std::vector<bool>&) -> std::vector<Tensor> {
                              return {mul(g, pass)};
                          });
}

Tensor leaky_relu(const Tensor& x, double negative_slope) {
    Tensor y = map_unary(x, [negative_slope](auto v) { return v > 0 ? v : v * negative_slope; });
    Tensor slope = map_unary(x, [negative_slope](auto v) { return v > 0 ? 1.0 : negative_slope; });
    return attach_grad_fn(y, {x}, "leaky_relu",
                          [slope](const Tensor& g, const std::vector<bool>&) -> std::vector<Tensor> {
                              return {mul(g, slope)};
                          });
}

Tensor relu(const Tensor& x) { return leaky_relu(x, 0.0); }

Tensor sigmoid(const Tensor& x) {
    Tensor y = map_unary(x, [](auto v) {
        using T = decltype(v);
        return v >= 0 ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
    });
    Tensor ys = y.detach();
    return attach_grad_fn(y, {x}, "sigmoid",
                          [x, ys](const Tensor& g, const std::vector<bool>&) -> std::vector<Tensor> {
                              require_first_order("sigmoid", g, {&x});
                              return {grad_map(g, x, ys, [](auto, auto s) { return s * (1 - s); })};
                          });
}

constexpr double inv_sqrt2 = 0.7071067811865475244;

Tensor gelu(const Tensor& x) {
    Tensor y = map_unary(x, [](auto v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); });
    return attach_grad_fn(
        y, {x}, "gelu", [x](const Tensor& g, const std::vector<bool>&) -> std::vector<Tensor> {
            require_first_order("gelu", g, {&x});
            return {grad_map(g, x, x, [](auto v, auto) {
                const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
                const double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * std::numbers::pi);
                return cdf + v * pdf;
            })};
        });
}

Tensor tanh(const Tensor& x) {
    Tensor y = map_unary(x, [](auto v) { return std::tanh(v); });
    Tensor ys = y.detach();
    return attach_grad_fn(y, {x}, "tanh",
                          [x, ys](const Tensor& g, const std::vector<bool>&) -> std::vector<Tensor> {
                              require_first_order("tanh", g, {&x});
                              return {grad_map(g, x, ys, [](auto, auto t) { return 1 - t * t; })};
                          });
}

Tensor activation(const Tensor& x, Activation kind, double negative_slope) {
    switch (kind) {
        case Activation::relu: return relu(x);
        case Activation::leaky_relu: return leaky_relu(x, negative_slope);
        case Activation::sigmoid: return sigmoid(x);
        case Activation::gelu: return gelu(x);
        case Activation::tanh: return tanh(x);
    }
    throw ContractError("unknown activation");
}

// ---------------------------------------------------------------------------

Tensor sum(const Tensor& x) {
    Tensor out = Tensor::zeros({}, x.dtype());
    dispatch(x.dtype(), [&]<class T>() {
        const T* px = x.data<T>();
        double acc = 0.0;
        for (int64_t i = 0, n_ = x.numel(); i < n_; ++i) acc += static_cast<double>(px[i]);
        out.data<T>()[0] = static_cast<T>(acc);
    });
    Shape in_shape = x.shape();
    return attach_grad_fn(out, {x}, "sum",
                          [in_shape](const Tensor& g, const std::vector<bool>&) -> std::vector<Tensor> {
                              return {expand_to(g, in_shape)};
                          });
}

Tensor mean(const Tensor& x) {
    if (x.numel() == 0) throw ShapeError("mean of an empty tensor");
    return mul_scalar(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor sum_dim(const Tensor& x, int dim, bool keepdim) {
    const int n = x.ndim();
    const int d = dim < 0 ? dim + n : dim;
    if (d < 0 || d >= n) throw ShapeError("sum_dim: axis out of range");
    Shape kept = x.shape();
    kept[static_cast<size_t>(d)] = 1;
    Tensor out = sum_to(x, kept);
    if (keepdim) return out;
    Shape squeezed = x.shape();
    squeezed.erase(squeezed.begin() + d);
    return reshape(out, squeezed);
}

Tensor mean_dim(const Tensor& x, int dim, bool keepdim) {
    const int64_t extent = x.dim(dim);
    if (extent == 0) throw ShapeError("mean_dim over an empty axis");
    return mul_scalar(sum_dim(x, dim, keepdim), 1.0 / static_cast<double>(extent));
}

}  // namespace priorfill
