#include <Eigen/Core>
#include <algorithm>
#include <atomic>
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

struct ConvGeom {
    int64_t B, C, H, W;     // input
    int64_t O, kh, kw;      // weight
    int64_t Ho, Wo;         // output
    int64_t Cg, Og, K, P;   // per group: in channels, out channels, patch length, positions
    Conv2dOptions opt;

    bool pointwise() const {
        return kh == 1 && kw == 1 && opt.stride == 1 && opt.pad == 0 && Ho == H && Wo == W;
    }
};

ConvGeom make_geom(const Shape& x, const Shape& w, Conv2dOptions opt) {
    if (x.size() != 4) throw ShapeError("conv2d: input must be [B,C,H,W], got " + shape_str(x));
    if (w.size() != 4) throw ShapeError("conv2d: weight must be [O,C/g,kh,kw], got " + shape_str(w));
    if (opt.stride < 1 || opt.dilation < 1 || opt.groups < 1 || opt.pad < 0)
        throw ContractError("conv2d: invalid stride/pad/dilation/groups");
    ConvGeom g{};
    g.B = x[0];
    g.C = x[1];
    g.H = x[2];
    g.W = x[3];
    g.O = w[0];
    g.kh = w[2];
    g.kw = w[3];
    g.opt = opt;
    if (g.C % opt.groups != 0 || g.O % opt.groups != 0)
        throw ShapeError("conv2d: channels not divisible by groups");
    g.Cg = g.C / opt.groups;
    g.Og = g.O / opt.groups;
    if (w[1] != g.Cg)
        throw ShapeError("conv2d: weight " + shape_str(w) + " for input " + shape_str(x));
    const int64_t eh = opt.dilation * (g.kh - 1) + 1, ew = opt.dilation * (g.kw - 1) + 1;
    if (g.H + 2 * opt.pad < eh || g.W + 2 * opt.pad < ew)
        throw ShapeError("conv2d: kernel larger than padded input " + shape_str(x));
    g.Ho = (g.H + 2 * opt.pad - eh) / opt.stride + 1;
    g.Wo = (g.W + 2 * opt.pad - ew) / opt.stride + 1;
    g.K = g.Cg * g.kh * g.kw;
    g.P = g.Ho * g.Wo;
    return g;
}

// cols[K, P] from one group of one image (x points at its first channel).
template <class T>
void im2col(const T* x, const ConvGeom& g, T* cols) {
    const int s = g.opt.stride, p = g.opt.pad, d = g.opt.dilation;
    for (int64_t c = 0; c < g.Cg; ++c)
        for (int64_t ki = 0; ki < g.kh; ++ki)
            for (int64_t kj = 0; kj < g.kw; ++kj) {
                T* row = cols + ((c * g.kh + ki) * g.kw + kj) * g.P;
                const T* xc = x + c * g.H * g.W;
                for (int64_t oy = 0; oy < g.Ho; ++oy) {
                    const int64_t iy = oy * s - p + ki * d;
                    T* r = row + oy * g.Wo;
                    if (iy < 0 || iy >= g.H) {
                        std::fill_n(r, g.Wo, T(0));
                        continue;
                    }
                    const T* xr = xc + iy * g.W;
                    for (int64_t ox = 0; ox < g.Wo; ++ox) {
                        const int64_t ix = ox * s - p + kj * d;
                        r[ox] = (ix >= 0 && ix < g.W) ? xr[ix] : T(0);
                    }
                }
            }
}

// Adjoint of im2col: accumulates cols into x.
template <class T>
void col2im(const T* cols, const ConvGeom& g, T* x) {
    const int s = g.opt.stride, p = g.opt.pad, d = g.opt.dilation;
    for (int64_t c = 0; c < g.Cg; ++c)
        for (int64_t ki = 0; ki < g.kh; ++ki)
            for (int64_t kj = 0; kj < g.kw; ++kj) {
                const T* row = cols + ((c * g.kh + ki) * g.kw + kj) * g.P;
                T* xc = x + c * g.H * g.W;
                for (int64_t oy = 0; oy < g.Ho; ++oy) {
                    const int64_t iy = oy * s - p + ki * d;
                    if (iy < 0 || iy >= g.H) continue;
                    const T* r = row + oy * g.Wo;
                    T* xr = xc + iy * g.W;
                    for (int64_t ox = 0; ox < g.Wo; ++ox) {
                        const int64_t ix = ox * s - p + kj * d;
                        if (ix >= 0 && ix < g.W) xr[ix] += r[ox];
                    }
                }
            }
}

Tensor conv_fwd(const Tensor& x, const Tensor& w, const ConvGeom& g) {
    Tensor y = Tensor::empty({g.B, g.O, g.Ho, g.Wo}, x.dtype());
    dispatch(x.dtype(), [&]<class T>() {
        const T* px = x.data<T>();
        const T* pw = w.data<T>();
        T* py = y.data<T>();
        std::vector<T> cols(g.pointwise() ? 0 : static_cast<size_t>(g.K * g.P));
        for (int64_t b = 0; b < g.B; ++b)
            for (int64_t gr = 0; gr < g.opt.groups; ++gr) {
                const T* xg = px + (b * g.C + gr * g.Cg) * g.H * g.W;
                const T* src = xg;
                if (!g.pointwise()) {
                    im2col(xg, g, cols.data());
                    src = cols.data();
                }
                MapC<T> Wm(pw + gr * g.Og * g.K, g.Og, g.K);
                MapC<T> Cm(src, g.K, g.P);
                MapM<T> Ym(py + (b * g.O + gr * g.Og) * g.P, g.Og, g.P);
                Ym.noalias() = Wm * Cm;
            }
    });
    return y;
}

// Gradient of conv_fwd with respect to its input, given the output gradient.
Tensor conv_bwd_input(const Tensor& gy, const Tensor& w, const ConvGeom& g) {
    Tensor gx = Tensor::zeros({g.B, g.C, g.H, g.W}, gy.dtype());
    dispatch(gy.dtype(), [&]<class T>() {
        const T* pg = gy.data<T>();
        const T* pw = w.data<T>();
        T* px = gx.data<T>();
        std::vector<T> cols(g.pointwise() ? 0 : static_cast<size_t>(g.K * g.P));
        for (int64_t b = 0; b < g.B; ++b)
            for (int64_t gr = 0; gr < g.opt.groups; ++gr) {
                MapC<T> Wm(pw + gr * g.Og * g.K, g.Og, g.K);
                MapC<T> Gm(pg + (b * g.O + gr * g.Og) * g.P, g.Og, g.P);
                T* xg = px + (b * g.C + gr * g.Cg) * g.H * g.W;
                if (g.pointwise()) {
                    MapM<T> Xm(xg, g.K, g.P);
                    Xm.noalias() = Wm.transpose() * Gm;
                } else {
                    MapM<T> Cm(cols.data(), g.K, g.P);
                    Cm.noalias() = Wm.transpose() * Gm;
                    col2im(cols.data(), g, xg);
                }
            }
    });
    return gx;
}

// Gradient of conv_fwd with respect to its weight.
Tensor conv_bwd_weight(const Tensor& gy, const Tensor& x, const ConvGeom& g) {
    Tensor gw = Tensor::zeros({g.O, g.Cg, g.kh, g.kw}, gy.dtype());
    dispatch(gy.dtype(), [&]<class T>() {
        const T* pg = gy.data<T>();
        const T* px = x.data<T>();
        T* pw = gw.data<T>();
        std::vector<T> cols(g.pointwise() ? 0 : static_cast<size_t>(g.K * g.P));
        for (int64_t b = 0; b < g.B; ++b)
            for (int64_t gr = 0; gr < g.opt.groups; ++gr) {
                const T* xg = px + (b * g.C + gr * g.Cg) * g.H * g.W;
                const T* src = xg;
                if (!g.pointwise()) {
                    im2col(xg, g, cols.data());
                    src = cols.data();
                }
                MapC<T> Cm(src, g.K, g.P);
                MapC<T> Gm(pg + (b * g.O + gr * g.Og) * g.P, g.Og, g.P);
                MapM<T> Wm(pw + gr * g.Og * g.K, g.Og, g.K);
                Wm.noalias() += Gm * Cm.transpose();
            }
    });
    return gw;
}

Tensor add_channel_bias(const Tensor& y, const Tensor& bias) {
    if (!bias.defined()) return y;
    if (bias.shape() != Shape{y.dim(1)})
        throw ShapeError("conv bias " + shape_str(bias.shape()) + " for " + shape_str(y.shape()));
    return add(y, reshape(bias, {1, y.dim(1), 1, 1}));
}

std::atomic<bool> g_conv_fault{false};

Tensor conv_core(const Tensor& x, const Tensor& w, Conv2dOptions opt);

// Input-gradient of a convolution as a differentiable op in both arguments;
// also serves as the transposed convolution.
Tensor conv_adjoint(const Tensor& gy, const Tensor& w, const Shape& in_shape, Conv2dOptions opt) {
    if (gy.dtype() != w.dtype()) throw ContractError("conv: mixed dtypes");
    ConvGeom g = make_geom(in_shape, w.shape(), opt);
    if (gy.shape() != Shape{g.B, g.O, g.Ho, g.Wo})
        throw ShapeError("conv adjoint: gradient " + shape_str(gy.shape()) + " for input " +
                         shape_str(in_shape));
    Tensor gx = conv_bwd_input(gy, w, g);
    return attach_grad_fn(
        gx, {gy, w}, "conv_adjoint",
        [gy, w, g, opt](const Tensor& z, const std::vector<bool>& needs) -> std::vector<Tensor> {
            Tensor ggy, gw;
            if (needs[0]) ggy = conv_core(z, w, opt);
            if (needs[1]) {
                require_first_order("conv_adjoint weight", z, {&gy});
                gw = conv_bwd_weight(gy, z, g);
            }
            return {ggy, gw};
        });
}

Tensor conv_core(const Tensor& x, const Tensor& w, Conv2dOptions opt) {
    if (x.dtype() != w.dtype()) throw ContractError("conv2d: mixed dtypes");
    ConvGeom g = make_geom(x.shape(), w.shape(), opt);
    Tensor y = conv_fwd(x, w, g);
    Shape in_shape = x.shape();
    return attach_grad_fn(
        y, {x, w}, "conv2d",
        [x, w, g, opt, in_shape](const Tensor& gy, const std::vector<bool>& needs) -> std::vector<Tensor> {
            Tensor gx, gw;
            if (needs[0]) {
                gx = conv_adjoint(gy, w, in_shape, opt);
                if (conv_backward_fault()) gx = neg(gx);
            }
            if (needs[1]) {
                require_first_order("conv2d weight", gy, {&x});
                gw = conv_bwd_weight(gy, x, g);
            }
            return {gx, gw};
        });
}

// Align-corners interpolation along one axis: (lower index, upper index, upper weight).
struct Tap {
    int64_t i0, i1;
    double t;
};

std::vector<Tap> resize_taps(int64_t in, int64_t out) {
    std::vector<Tap> taps(static_cast<size_t>(out));
    for (int64_t o = 0; o < out; ++o) {
        double src = out > 1 ? double(o) * double(in - 1) / double(out - 1) : 0.0;
        int64_t i0 = std::min<int64_t>(static_cast<int64_t>(std::floor(src)), in - 1);
        int64_t i1 = std::min<int64_t>(i0 + 1, in - 1);
        taps[static_cast<size_t>(o)] = {i0, i1, src - double(i0)};
    }
    return taps;
}

// adjoint=false: [.., h, w] -> [.., oh, ow]; adjoint=true maps back.
Tensor resize_apply(const Tensor& x, int64_t h, int64_t w, int64_t oh, int64_t ow, bool adjoint) {
    auto ty = resize_taps(h, oh);
    auto tx = resize_taps(w, ow);
    Shape out_shape = x.shape();
    out_shape[out_shape.size() - 2] = adjoint ? h : oh;
    out_shape[out_shape.size() - 1] = adjoint ? w : ow;
    const int64_t planes = x.numel() / (x.dim(-2) * x.dim(-1));
    Tensor y = Tensor::zeros(out_shape, x.dtype());
    dispatch(x.dtype(), [&]<class T>() {
        const T* px = x.data<T>();
        T* py = y.data<T>();
        for (int64_t pl = 0; pl < planes; ++pl) {
            const T* src = px + pl * (adjoint ? oh * ow : h * w);
            T* dst = py + pl * (adjoint ? h * w : oh * ow);
            for (int64_t oy = 0; oy < oh; ++oy) {
                const Tap& a = ty[static_cast<size_t>(oy)];
                for (int64_t ox = 0; ox < ow; ++ox) {
                    const Tap& b = tx[static_cast<size_t>(ox)];
                    const double w00 = (1 - a.t) * (1 - b.t), w01 = (1 - a.t) * b.t;
                    const double w10 = a.t * (1 - b.t), w11 = a.t * b.t;
                    if (!adjoint) {
                        dst[oy * ow + ox] = static_cast<T>(
                            w00 * src[a.i0 * w + b.i0] + w01 * src[a.i0 * w + b.i1] +
                            w10 * src[a.i1 * w + b.i0] + w11 * src[a.i1 * w + b.i1]);
                    } else {
                        const double v = src[oy * ow + ox];
                        dst[a.i0 * w + b.i0] += static_cast<T>(w00 * v);
                        dst[a.i0 * w + b.i1] += static_cast<T>(w01 * v);
                        dst[a.i1 * w + b.i0] += static_cast<T>(w10 * v);
                        dst[a.i1 * w + b.i1] += static_cast<T>(w11 * v);
                    }
                }
            }
        }
    });
    return attach_grad_fn(y, {x}, "bilinear_resize",
                          [h, w, oh, ow, adjoint](const Tensor& g, const std::vector<bool>&) -> std::vector<Tensor> {
                              return {resize_apply(g, h, w, oh, ow, !adjoint)};
                          });
}

}  // namespace

void set_conv_backward_fault(bool enabled) { g_conv_fault = enabled; }
bool conv_backward_fault() { return g_conv_fault; }

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, Conv2dOptions opt) {
    return add_channel_bias(conv_core(x, w, opt), bias);
}

Tensor deconv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad,
                int output_pad) {
    if (x.ndim() != 4 || w.ndim() != 4)
        throw ShapeError("deconv2d: expected [B,C,H,W] input and [Cin,Cout,kh,kw] weight");
    if (w.dim(0) != x.dim(1))
        throw ShapeError("deconv2d: weight " + shape_str(w.shape()) + " for input " +
                         shape_str(x.shape()));
    if (output_pad < 0 || output_pad >= stride) throw ContractError("deconv2d: invalid output_pad");
    const int64_t oh = (x.dim(2) - 1) * stride - 2 * pad + w.dim(2) + output_pad;
    const int64_t ow = (x.dim(3) - 1) * stride - 2 * pad + w.dim(3) + output_pad;
    if (oh <= 0 || ow <= 0) throw ShapeError("deconv2d: empty output");
    Shape out_shape{x.dim(0), w.dim(1), oh, ow};
    Conv2dOptions opt;
    opt.stride = stride;
    opt.pad = pad;
    return add_channel_bias(conv_adjoint(x, w, out_shape, opt), bias);
}

Tensor max_pool2d(const Tensor& x, int kernel, int stride) {
    if (x.ndim() != 4) throw ShapeError("max_pool2d: expected [B,C,H,W]");
    if (kernel < 1 || stride < 1) throw ContractError("max_pool2d: invalid kernel/stride");
    const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (H < kernel || W < kernel) throw ShapeError("max_pool2d: kernel larger than input");
    const int64_t Ho = (H - kernel) / stride + 1, Wo = (W - kernel) / stride + 1;
    Tensor y = Tensor::empty({B, C, Ho, Wo}, x.dtype());
    std::vector<int64_t> arg(static_cast<size_t>(y.numel()));
    dispatch(x.dtype(), [&]<class T>() {
        const T* px = x.data<T>();
        T* py = y.data<T>();
        for (int64_t pl = 0; pl < B * C; ++pl)
            for (int64_t oy = 0; oy < Ho; ++oy)
                for (int64_t ox = 0; ox < Wo; ++ox) {
                    T best = -std::numeric_limits<T>::infinity();
                    int64_t bi = -1;
                    for (int ky = 0; ky < kernel; ++ky)
                        for (int kx = 0; kx < kernel; ++kx) {
                            const int64_t k = pl * H * W + (oy * stride + ky) * W + ox * stride + kx;
                            if (bi < 0 || px[k] > best) {
                                best = px[k];
                                bi = k;
                            }
                        }
                    const int64_t o = (pl * Ho + oy) * Wo + ox;
                    py[o] = best;
                    arg[static_cast<size_t>(o)] = bi;
                }
    });
    Shape in_shape = x.shape();
    return attach_grad_fn(y, {x}, "max_pool2d",
                          [arg, in_shape](const Tensor& g, const std::vector<bool>&) -> std::vector<Tensor> {
                              require_first_order("max_pool2d", g);
                              Tensor gx = Tensor::zeros(in_shape, g.dtype());
                              dispatch(g.dtype(), [&]<class T>() {
                                  const T* pg = g.data<T>();
                                  T* px = gx.data<T>();
                                  for (size_t o = 0; o < arg.size(); ++o) px[arg[o]] += pg[o];
                              });
                              return {gx};
                          });
}

Tensor bilinear_resize(const Tensor& x, int64_t out_h, int64_t out_w) {
    if (x.ndim() < 2) throw ShapeError("bilinear_resize: need at least 2 axes");
    if (out_h < 1 || out_w < 1) throw ShapeError("bilinear_resize: empty output");
    const int64_t h = x.dim(-2), w = x.dim(-1);
    if (h == out_h && w == out_w) return x;
    return resize_apply(x, h, w, out_h, out_w, false);
}

}  // namespace priorfill
