#include <Eigen/Core>
#include <cmath>
#include <limits>

#include "priorfill/numerics/ops.hpp"

namespace priorfill {

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapC = Eigen::Map<const RowMat<T>>;
template <class T>
using MapM = Eigen::Map<RowMat<T>>;

Tensor matmul_forward(const Tensor& a, const Tensor& b) {
    const int na = a.ndim(), nb = b.ndim();
    if (na < 2 || nb < 2) throw ShapeError("matmul: operands need rank >= 2");
    if (a.dtype() != b.dtype()) throw ContractError("matmul: mixed dtypes");
    const int64_t M = a.dim(-2), K = a.dim(-1), K2 = b.dim(-2), N = b.dim(-1);
    if (K != K2)
        throw ShapeError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    Shape lead_a(a.shape().begin(), a.shape().end() - 2);
    Shape lead_b(b.shape().begin(), b.shape().end() - 2);
    const bool shared_b = lead_b.empty();
    if (!shared_b && lead_a != lead_b)
        throw ShapeError("matmul: batch extents " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    Shape out_shape = lead_a;
    out_shape.push_back(M);
    out_shape.push_back(N);
    Tensor out = Tensor::empty(out_shape, a.dtype());
    const int64_t batches = shape_numel(lead_a);
    dispatch(a.dtype(), [&]<class T>() {
        const T* pa = a.data<T>();
        const T* pb = b.data<T>();
        T* po = out.data<T>();
        if (shared_b) {
            MapC<T> A(pa, batches * M, K);
            MapC<T> B(pb, K, N);
            MapM<T> O(po, batches * M, N);
            O.noalias() = A * B;
            return;
        }
        for (int64_t i = 0; i < batches; ++i) {
            MapC<T> A(pa + i * M * K, M, K);
            MapC<T> B(pb + i * K * N, K, N);
            MapM<T> O(po + i * M * N, M, N);
            O.noalias() = A * B;
        }
    });
    return out;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    Tensor out = matmul_forward(a, b);
    return attach_grad_fn(
        out, {a, b}, "matmul",
        [a, b](const Tensor& g, const std::vector<bool>& needs) -> std::vector<Tensor> {
            Tensor ga, gb;
            if (needs[0]) ga = matmul(g, transpose(b, -2, -1));
            if (needs[1]) {
                if (b.ndim() == 2 && a.ndim() > 2) {
                    Tensor a2 = reshape(a, {-1, a.dim(-1)});
                    Tensor g2 = reshape(g, {-1, g.dim(-1)});
                    gb = matmul(transpose(a2, 0, 1), g2);
                } else {
                    gb = matmul(transpose(a, -2, -1), g);
                }
            }
            return {ga, gb};
        });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (w.ndim() != 2 || x.dim(-1) != w.dim(0))
        throw ShapeError("linear: x " + shape_str(x.shape()) + " w " + shape_str(w.shape()));
    Tensor y = x.ndim() == 1 ? reshape(matmul(reshape(x, {1, -1}), w), {w.dim(1)}) : matmul(x, w);
    if (b.defined()) {
        if (b.shape() != Shape{w.dim(1)}) throw ShapeError("linear: bias " + shape_str(b.shape()));
        y = add(y, b);
    }
    return y;
}

Tensor softmax_lastdim(const Tensor& x, const Tensor& key_mask) {
    if (x.ndim() < 1) throw ShapeError("softmax_lastdim: scalar input");
    Tensor mask;
    if (key_mask.defined()) {
        NoGradGuard ng;
        mask = expand_to(key_mask.dtype() == x.dtype() ? key_mask.detach() : key_mask.to(x.dtype()),
                         x.shape());
    }
    const int64_t L = x.dim(-1);
    const int64_t rows = L == 0 ? 0 : x.numel() / L;
    Tensor y = Tensor::empty(x.shape(), x.dtype());
    dispatch(x.dtype(), [&]<class T>() {
        const T* px = x.data<T>();
        const T* pm = mask.defined() ? mask.data<T>() : nullptr;
        T* py = y.data<T>();
        for (int64_t r = 0; r < rows; ++r) {
            const T* xr = px + r * L;
            T* yr = py + r * L;
            T mx = -std::numeric_limits<T>::infinity();
            bool any = false;
            for (int64_t j = 0; j < L; ++j) {
                if (pm && pm[r * L + j] != 0) continue;
                any = true;
                mx = std::max(mx, xr[j]);
            }
            if (!any) throw ContractError("softmax_lastdim: every key in a row is masked");
            double s = 0;
            for (int64_t j = 0; j < L; ++j) {
                if (pm && pm[r * L + j] != 0) {
                    yr[j] = 0;
                    continue;
                }
                yr[j] = std::exp(xr[j] - mx);
                s += yr[j];
            }
            const T inv = static_cast<T>(1.0 / s);
            for (int64_t j = 0; j < L; ++j) yr[j] *= inv;
        }
    });
    Tensor ys = y.detach();
    return attach_grad_fn(
        y, {x}, "softmax", [ys, L, rows](const Tensor& g, const std::vector<bool>&) -> std::vector<Tensor> {
            require_first_order("softmax", g);
            Tensor gx = Tensor::empty(ys.shape(), ys.dtype());
            dispatch(ys.dtype(), [&]<class T>() {
                const T* pg = g.data<T>();
                const T* py = ys.data<T>();
                T* po = gx.data<T>();
                for (int64_t r = 0; r < rows; ++r) {
                    double dot = 0;
                    for (int64_t j = 0; j < L; ++j) dot += double(pg[r * L + j]) * py[r * L + j];
                    for (int64_t j = 0; j < L; ++j)
                        po[r * L + j] = static_cast<T>(py[r * L + j] * (pg[r * L + j] - dot));
                }
            });
            return {gx};
        });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    const int64_t D = x.dim(-1);
    const int64_t rows = x.numel() / D;
    if (gamma.defined() && gamma.shape() != Shape{D}) throw ShapeError("layer_norm: gamma shape");
    if (beta.defined() && beta.shape() != Shape{D}) throw ShapeError("layer_norm: beta shape");
    Tensor y = Tensor::empty(x.shape(), x.dtype());
    Tensor xhat = Tensor::empty(x.shape(), x.dtype());
    Tensor rstd = Tensor::empty({rows}, x.dtype());
    dispatch(x.dtype(), [&]<class T>() {
        const T* px = x.data<T>();
        const T* pg = gamma.defined() ? gamma.data<T>() : nullptr;
        const T* pb = beta.defined() ? beta.data<T>() : nullptr;
        T* py = y.data<T>();
        T* ph = xhat.data<T>();
        T* pr = rstd.data<T>();
        for (int64_t r = 0; r < rows; ++r) {
            const T* xr = px + r * D;
            double mu = 0, var = 0;
            for (int64_t j = 0; j < D; ++j) mu += xr[j];
            mu /= double(D);
            for (int64_t j = 0; j < D; ++j) var += (xr[j] - mu) * (xr[j] - mu);
            var /= double(D);
            const double rs = 1.0 / std::sqrt(var + eps);
            pr[r] = static_cast<T>(rs);
            for (int64_t j = 0; j < D; ++j) {
                T h = static_cast<T>((xr[j] - mu) * rs);
                ph[r * D + j] = h;
                py[r * D + j] = h * (pg ? pg[j] : T(1)) + (pb ? pb[j] : T(0));
            }
        }
    });
    return attach_grad_fn(
        y, {x, gamma, beta}, "layer_norm",
        [gamma, xhat, rstd, D, rows](const Tensor& g, const std::vector<bool>& needs) -> std::vector<Tensor> {
            require_first_order("layer_norm", g, {&gamma});
            Tensor gx, gg, gb;
            dispatch(g.dtype(), [&]<class T>() {
                const T* pgo = g.data<T>();
                const T* ph = xhat.data<T>();
                const T* pr = rstd.data<T>();
                const T* pgam = gamma.defined() ? gamma.data<T>() : nullptr;
                if (needs[0]) {
                    gx = Tensor::empty(xhat.shape(), g.dtype());
                    T* po = gx.data<T>();
                    for (int64_t r = 0; r < rows; ++r) {
                        double m1 = 0, m2 = 0;
                        for (int64_t j = 0; j < D; ++j) {
                            double dh = double(pgo[r * D + j]) * (pgam ? pgam[j] : T(1));
                            m1 += dh;
                            m2 += dh * ph[r * D + j];
                        }
                        m1 /= double(D);
                        m2 /= double(D);
                        for (int64_t j = 0; j < D; ++j) {
                            double dh = double(pgo[r * D + j]) * (pgam ? pgam[j] : T(1));
                            po[r * D + j] = static_cast<T>(pr[r] * (dh - m1 - ph[r * D + j] * m2));
                        }
                    }
                }
                if (needs[1] || needs[2]) {
                    std::vector<double> sg(static_cast<size_t>(D), 0.0), sb(static_cast<size_t>(D), 0.0);
                    for (int64_t r = 0; r < rows; ++r)
                        for (int64_t j = 0; j < D; ++j) {
                            sg[static_cast<size_t>(j)] += double(pgo[r * D + j]) * ph[r * D + j];
                            sb[static_cast<size_t>(j)] += pgo[r * D + j];
                        }
                    if (needs[1]) gg = Tensor::from_vector(sg, {D}, g.dtype());
                    if (needs[2]) gb = Tensor::from_vector(sb, {D}, g.dtype());
                }
            });
            return {gx, gg, gb};
        });
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                  bool training) {
    if (x.ndim() != 4 && x.ndim() != 2) throw ShapeError("batch_norm: expected [B,C,H,W] or [B,C]");
    const int64_t B = x.dim(0), C = x.dim(1);
    const int64_t HW = x.ndim() == 4 ? x.dim(2) * x.dim(3) : 1;
    const int64_t N = B * HW;
    if (!state.running_mean.defined()) {
        state.running_mean = Tensor::zeros({C}, x.dtype());
        state.running_var = Tensor::ones({C}, x.dtype());
    }
    if (state.running_mean.numel() != C) throw ShapeError("batch_norm: channel count changed");
    if (training && N < 1) throw ShapeError("batch_norm: empty batch");

    Tensor y = Tensor::empty(x.shape(), x.dtype());
    Tensor xhat = Tensor::empty(x.shape(), x.dtype());
    std::vector<double> rstd(static_cast<size_t>(C));
    dispatch(x.dtype(), [&]<class T>() {
        const T* px = x.data<T>();
        const T* pg = gamma.defined() ? gamma.data<T>() : nullptr;
        const T* pb = beta.defined() ? beta.data<T>() : nullptr;
        T* py = y.data<T>();
        T* ph = xhat.data<T>();
        T* rm = state.running_mean.data<T>();
        T* rv = state.running_var.data<T>();
        for (int64_t c = 0; c < C; ++c) {
            double mu, var;
            if (training) {
                mu = 0;
                for (int64_t b = 0; b < B; ++b)
                    for (int64_t i = 0; i < HW; ++i) mu += px[(b * C + c) * HW + i];
                mu /= double(N);
                var = 0;
                for (int64_t b = 0; b < B; ++b)
                    for (int64_t i = 0; i < HW; ++i) {
                        double d = px[(b * C + c) * HW + i] - mu;
                        var += d * d;
                    }
                var /= double(N);
                const double unbiased = N > 1 ? var * double(N) / double(N - 1) : var;
                rm[c] = static_cast<T>((1 - state.momentum) * rm[c] + state.momentum * mu);
                rv[c] = static_cast<T>((1 - state.momentum) * rv[c] + state.momentum * unbiased);
            } else {
                mu = rm[c];
                var = rv[c];
            }
            const double rs = 1.0 / std::sqrt(var + state.eps);
            rstd[static_cast<size_t>(c)] = rs;
            const T gm = pg ? pg[c] : T(1), bt = pb ? pb[c] : T(0);
            for (int64_t b = 0; b < B; ++b)
                for (int64_t i = 0; i < HW; ++i) {
                    const int64_t k = (b * C + c) * HW + i;
                    ph[k] = static_cast<T>((px[k] - mu) * rs);
                    py[k] = ph[k] * gm + bt;
                }
        }
    });
    return attach_grad_fn(
        y, {x, gamma, beta}, "batch_norm",
        [gamma, xhat, rstd, B, C, HW, N, training](const Tensor& g,
                                                    const std::vector<bool>& needs) -> std::vector<Tensor> {
            require_first_order("batch_norm", g, {&gamma});
            Tensor gx, gg, gb;
            std::vector<double> sg(static_cast<size_t>(C), 0.0), sb(static_cast<size_t>(C), 0.0);
            dispatch(g.dtype(), [&]<class T>() {
                const T* pgo = g.data<T>();
                const T* ph = xhat.data<T>();
                const T* pgam = gamma.defined() ? gamma.data<T>() : nullptr;
                for (int64_t c = 0; c < C; ++c)
                    for (int64_t b = 0; b < B; ++b)
                        for (int64_t i = 0; i < HW; ++i) {
                            const int64_t k = (b * C + c) * HW + i;
                            sg[static_cast<size_t>(c)] += double(pgo[k]) * ph[k];
                            sb[static_cast<size_t>(c)] += pgo[k];
                        }
                if (needs[0]) {
                    gx = Tensor::empty(xhat.shape(), g.dtype());
                    T* po = gx.data<T>();
                    for (int64_t c = 0; c < C; ++c) {
                        const double gm = pgam ? double(pgam[c]) : 1.0;
                        const double rs = rstd[static_cast<size_t>(c)];
                        const double m1 = sb[static_cast<size_t>(c)] / double(N);
                        const double m2 = sg[static_cast<size_t>(c)] / double(N);
                        for (int64_t b = 0; b < B; ++b)
                            for (int64_t i = 0; i < HW; ++i) {
                                const int64_t k = (b * C + c) * HW + i;
                                po[k] = training
                                            ? static_cast<T>(gm * rs * (pgo[k] - m1 - ph[k] * m2))
                                            : static_cast<T>(gm * rs * pgo[k]);
                            }
                    }
                }
            });
            if (needs[1]) gg = Tensor::from_vector(sg, {C}, g.dtype());
            if (needs[2]) gb = Tensor::from_vector(sb, {C}, g.dtype());
            return {gx, gg, gb};
        });
}

}  // namespace priorfill
