#include <algorithm>
#include <numeric>

#include "priorfill/numerics/ops.hpp"

namespace priorfill {

namespace {

std::vector<int64_t> contiguous_strides(const Shape& s) {
    std::vector<int64_t> st(s.size(), 1);
    for (size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
    return st;
}

int normalize_axis(int dim, int n, const char* op) {
    int d = dim < 0 ? dim + n : dim;
    if (d < 0 || d >= n) throw ShapeError(std::string(op) + ": axis out of range");
    return d;
}

// Copies x into the [start, start+len) window of `out` along `dim`.
void copy_block(const Tensor& x, Tensor& out, int dim, int64_t start) {
    const Shape& xs = x.shape();
    const Shape& os = out.shape();
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < dim; ++i) outer *= xs[static_cast<size_t>(i)];
    for (size_t i = static_cast<size_t>(dim) + 1; i < xs.size(); ++i) inner *= xs[i];
    const int64_t len = xs[static_cast<size_t>(dim)];
    const int64_t olen = os[static_cast<size_t>(dim)];
    dispatch(x.dtype(), [&]<class T>() {
        const T* px = x.data<T>();
        T* po = out.data<T>();
        for (int64_t o = 0; o < outer; ++o)
            std::copy_n(px + o * len * inner, len * inner, po + (o * olen + start) * inner);
    });
}

// Inverse of copy_block: extracts a window of `src` along `dim`.
Tensor take_block(const Tensor& src, int dim, int64_t start, int64_t len) {
    Shape s = src.shape();
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < dim; ++i) outer *= s[static_cast<size_t>(i)];
    for (size_t i = static_cast<size_t>(dim) + 1; i < s.size(); ++i) inner *= s[i];
    const int64_t slen = s[static_cast<size_t>(dim)];
    s[static_cast<size_t>(dim)] = len;
    Tensor out = Tensor::empty(s, src.dtype());
    dispatch(src.dtype(), [&]<class T>() {
        const T* ps = src.data<T>();
        T* po = out.data<T>();
        for (int64_t o = 0; o < outer; ++o)
            std::copy_n(ps + (o * slen + start) * inner, len * inner, po + o * len * inner);
    });
    return out;
}

void check_row_index(const Tensor& x, const std::vector<std::vector<int64_t>>& idx, const char* op) {
    if (x.ndim() != 3) throw ShapeError(std::string(op) + ": expected [B,T,D]");
    if (static_cast<int64_t>(idx.size()) != x.dim(0))
        throw ShapeError(std::string(op) + ": index batch mismatch");
    for (const auto& row : idx) {
        if (row.size() != idx[0].size())
            throw ContractError(std::string(op) + ": ragged row indices");
        for (auto r : row)
            if (r < 0 || r >= x.dim(1)) throw ShapeError(std::string(op) + ": row out of range");
    }
}

}  // namespace

Tensor reshape(const Tensor& x, Shape shape) {
    int infer = -1;
    int64_t known = 1;
    for (size_t i = 0; i < shape.size(); ++i) {
        if (shape[i] == -1) {
            if (infer >= 0) throw ShapeError("reshape: more than one -1");
            infer = static_cast<int>(i);
        } else {
            known *= shape[i];
        }
    }
    if (infer >= 0) {
        if (known == 0 || x.numel() % known != 0)
            throw ShapeError("reshape: cannot infer extent for " + shape_str(x.shape()));
        shape[static_cast<size_t>(infer)] = x.numel() / known;
    }
    if (shape_numel(shape) != x.numel())
        throw ShapeError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
    if (shape == x.shape()) return x;
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = shape;
    impl->dtype = x.dtype();
    impl->storage = x.impl()->storage;
    Shape in_shape = x.shape();
    return attach_grad_fn(Tensor(std::move(impl)), {x}, "reshape",
                          [in_shape](const Tensor& g, const std::vector<bool>&) -> std::vector<Tensor> {
                              return {reshape(g, in_shape)};
                          });
}

Tensor permute(const Tensor& x, const std::vector<int>& perm) {
    const int n = x.ndim();
    if (static_cast<int>(perm.size()) != n) throw ShapeError("permute: rank mismatch");
    std::vector<int> check(perm);
    std::sort(check.begin(), check.end());
    for (int i = 0; i < n; ++i)
        if (check[static_cast<size_t>(i)] != i) throw ShapeError("permute: not a permutation");

    Shape out_shape(static_cast<size_t>(n));
    auto in_strides = contiguous_strides(x.shape());
    std::vector<int64_t> src_strides(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        out_shape[static_cast<size_t>(i)] = x.shape()[static_cast<size_t>(perm[static_cast<size_t>(i)])];
        src_strides[static_cast<size_t>(i)] = in_strides[static_cast<size_t>(perm[static_cast<size_t>(i)])];
    }
    Tensor out = Tensor::empty(out_shape, x.dtype());
    dispatch(x.dtype(), [&]<class T>() {
        const T* px = x.data<T>();
        T* po = out.data<T>();
        const int64_t total = out.numel();
        if (total == 0) return;
        if (n == 0) {
            po[0] = px[0];
            return;
        }
        std::vector<int64_t> idx(static_cast<size_t>(n), 0);
        int64_t src = 0;
        const int64_t inner = out_shape[static_cast<size_t>(n - 1)];
        const int64_t inner_stride = src_strides[static_cast<size_t>(n - 1)];
        for (int64_t base = 0; base < total; base += inner) {
            for (int64_t k = 0; k < inner; ++k) po[base + k] = px[src + k * inner_stride];
            for (int d = n - 2; d >= 0; --d) {
                auto ud = static_cast<size_t>(d);
                ++idx[ud];
                src += src_strides[ud];
                if (idx[ud] < out_shape[ud]) break;
                src -= src_strides[ud] * out_shape[ud];
                idx[ud] = 0;
            }
        }
    });
    std::vector<int> inverse(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) inverse[static_cast<size_t>(perm[static_cast<size_t>(i)])] = i;
    return attach_grad_fn(out, {x}, "permute",
                          [inverse](const Tensor& g, const std::vector<bool>&) -> std::vector<Tensor> {
                              return {permute(g, inverse)};
                          });
}

Tensor transpose(const Tensor& x, int d0, int d1) {
    const int n = x.ndim();
    d0 = normalize_axis(d0, n, "transpose");
    d1 = normalize_axis(d1, n, "transpose");
    std::vector<int> perm(static_cast<size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    std::swap(perm[static_cast<size_t>(d0)], perm[static_cast<size_t>(d1)]);
    return permute(x, perm);
}

Tensor slice(const Tensor& x, int dim, int64_t start, int64_t end) {
    const int d = normalize_axis(dim, x.ndim(), "slice");
    const int64_t extent = x.dim(d);
    if (start < 0 || end > extent || start > end)
        throw ShapeError("slice: range [" + std::to_string(start) + "," + std::to_string(end) +
                         ") outside extent " + std::to_string(extent));
    Tensor out = take_block(x, d, start, end - start);
    Shape in_shape = x.shape();
    return attach_grad_fn(out, {x}, "slice",
                          [in_shape, d, start](const Tensor& g, const std::vector<bool>&) -> std::vector<Tensor> {
                              require_first_order("slice", g);
                              Tensor gx = Tensor::zeros(in_shape, g.dtype());
                              copy_block(g, gx, d, start);
                              return {gx};
                          });
}

Tensor concat(const std::vector<Tensor>& xs, int dim) {
    if (xs.empty()) throw ShapeError("concat: no inputs");
    const int d = normalize_axis(dim, xs[0].ndim(), "concat");
    Shape out_shape = xs[0].shape();
    int64_t total = 0;
    for (const Tensor& t : xs) {
        if (t.dtype() != xs[0].dtype()) throw ContractError("concat: mixed dtypes");
        Shape s = t.shape();
        if (s.size() != out_shape.size()) throw ShapeError("concat: rank mismatch");
        for (size_t i = 0; i < s.size(); ++i)
            if (static_cast<int>(i) != d && s[i] != out_shape[i])
                throw ShapeError("concat: " + shape_str(s) + " vs " + shape_str(out_shape));
        total += s[static_cast<size_t>(d)];
    }
    out_shape[static_cast<size_t>(d)] = total;
    Tensor out = Tensor::empty(out_shape, xs[0].dtype());
    std::vector<int64_t> starts;
    int64_t off = 0;
    for (const Tensor& t : xs) {
        starts.push_back(off);
        copy_block(t, out, d, off);
        off += t.dim(d);
    }
    std::vector<int64_t> lens;
    for (const Tensor& t : xs) lens.push_back(t.dim(d));
    return attach_grad_fn(out, xs, "concat",
                          [d, starts, lens](const Tensor& g, const std::vector<bool>& needs) {
                              std::vector<Tensor> gs(starts.size());
                              for (size_t i = 0; i < starts.size(); ++i)
                                  if (needs[i]) gs[i] = slice(g, d, starts[i], starts[i] + lens[i]);
                              return gs;
                          });
}

Tensor gather_rows(const Tensor& x, const std::vector<std::vector<int64_t>>& idx) {
    check_row_index(x, idx, "gather_rows");
    const int64_t B = x.dim(0), T = x.dim(1), D = x.dim(2);
    const auto U = static_cast<int64_t>(idx.empty() ? 0 : idx[0].size());
    Tensor out = Tensor::empty({B, U, D}, x.dtype());
    dispatch(x.dtype(), [&]<class S>() {
        const S* px = x.data<S>();
        S* po = out.data<S>();
        for (int64_t b = 0; b < B; ++b)
            for (int64_t u = 0; u < U; ++u)
                std::copy_n(px + (b * T + idx[static_cast<size_t>(b)][static_cast<size_t>(u)]) * D, D,
                            po + (b * U + u) * D);
    });
    Shape in_shape = x.shape();
    return attach_grad_fn(out, {x}, "gather_rows",
                          [in_shape, idx](const Tensor& g, const std::vector<bool>&) -> std::vector<Tensor> {
                              return {scatter_rows(Tensor::zeros(in_shape, g.dtype()), g, idx)};
                          });
}

Tensor scatter_rows(const Tensor& base, const Tensor& src,
                    const std::vector<std::vector<int64_t>>& idx) {
    check_row_index(base, idx, "scatter_rows");
    const int64_t B = base.dim(0), T = base.dim(1), D = base.dim(2);
    const auto U = static_cast<int64_t>(idx.empty() ? 0 : idx[0].size());
    if (src.shape() != Shape{B, U, D})
        throw ShapeError("scatter_rows: src " + shape_str(src.shape()) + " for base " +
                         shape_str(base.shape()));
    Tensor out = base.clone();
    dispatch(base.dtype(), [&]<class S>() {
        const S* ps = src.data<S>();
        S* po = out.data<S>();
        for (int64_t b = 0; b < B; ++b)
            for (int64_t u = 0; u < U; ++u)
                std::copy_n(ps + (b * U + u) * D, D,
                            po + (b * T + idx[static_cast<size_t>(b)][static_cast<size_t>(u)]) * D);
    });
    return attach_grad_fn(
        out, {base, src}, "scatter_rows",
        [idx, B, T, D](const Tensor& g, const std::vector<bool>& needs) -> std::vector<Tensor> {
            Tensor gbase, gsrc;
            if (needs[0]) {
                std::vector<double> keep(static_cast<size_t>(B * T), 1.0);
                for (int64_t b = 0; b < B; ++b)
                    for (auto r : idx[static_cast<size_t>(b)]) keep[static_cast<size_t>(b * T + r)] = 0.0;
                gbase = mul(g, Tensor::from_vector(keep, {B, T, 1}, g.dtype()));
            }
            if (needs[1]) gsrc = gather_rows(g, idx);
            return {gbase, gsrc};
        });
}

}  // namespace priorfill
