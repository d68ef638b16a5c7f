#include <cmath>
#include <complex>
#include <numbers>

#include "priorfill/numerics/ops.hpp"

namespace priorfill {

namespace {

using cd = std::complex<double>;

bool is_pow2(int64_t n) { return n > 0 && (n & (n - 1)) == 0; }

// In-place iterative radix-2 transform of n points spaced `stride` apart.
void fft1d(cd* a, int64_t n, int64_t stride, bool inverse, std::vector<cd>& buf) {
    buf.resize(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) buf[static_cast<size_t>(i)] = a[i * stride];
    for (int64_t i = 1, j = 0; i < n; ++i) {
        int64_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(buf[static_cast<size_t>(i)], buf[static_cast<size_t>(j)]);
    }
    for (int64_t len = 2; len <= n; len <<= 1) {
        const double ang = 2 * std::numbers::pi / double(len) * (inverse ? 1 : -1);
        const cd wl(std::cos(ang), std::sin(ang));
        for (int64_t i = 0; i < n; i += len) {
            cd w(1);
            for (int64_t k = 0; k < len / 2; ++k) {
                cd u = buf[static_cast<size_t>(i + k)];
                cd v = buf[static_cast<size_t>(i + k + len / 2)] * w;
                buf[static_cast<size_t>(i + k)] = u + v;
                buf[static_cast<size_t>(i + k + len / 2)] = u - v;
                w *= wl;
            }
        }
    }
    for (int64_t i = 0; i < n; ++i) a[i * stride] = buf[static_cast<size_t>(i)];
}

void fft2d_plane(std::vector<cd>& p, int64_t H, int64_t W, bool inverse) {
    std::vector<cd> buf;
    for (int64_t r = 0; r < H; ++r) fft1d(p.data() + r * W, W, 1, inverse, buf);
    for (int64_t c = 0; c < W; ++c) fft1d(p.data() + c, H, W, inverse, buf);
    const double scale = 1.0 / std::sqrt(double(H * W));
    for (auto& v : p) v *= scale;
}

void check_spectral(const Tensor& x, const char* op) {
    if (x.ndim() != 4) throw ShapeError(std::string(op) + ": expected [B,C,H,W]");
    if (!is_pow2(x.dim(2)) || !is_pow2(x.dim(3)))
        throw UnsupportedSizeError(std::string(op) + ": spatial extents must be powers of two, got " +
                                   shape_str(x.shape()));
}

}  // namespace

Tensor fft2d_stacked(const Tensor& x) {
    check_spectral(x, "fft2d");
    const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), HW = H * W;
    Tensor out = Tensor::empty({B, 2 * C, H, W}, x.dtype());
    dispatch(x.dtype(), [&]<class T>() {
        const T* px = x.data<T>();
        T* po = out.data<T>();
        std::vector<cd> plane(static_cast<size_t>(HW));
        for (int64_t b = 0; b < B; ++b)
            for (int64_t c = 0; c < C; ++c) {
                const T* src = px + (b * C + c) * HW;
                for (int64_t i = 0; i < HW; ++i) plane[static_cast<size_t>(i)] = cd(src[i], 0);
                fft2d_plane(plane, H, W, false);
                T* re = po + (b * 2 * C + c) * HW;
                T* im = po + (b * 2 * C + C + c) * HW;
                for (int64_t i = 0; i < HW; ++i) {
                    re[i] = static_cast<T>(plane[static_cast<size_t>(i)].real());
                    im[i] = static_cast<T>(plane[static_cast<size_t>(i)].imag());
                }
            }
    });
    return attach_grad_fn(out, {x}, "fft2d",
                          [](const Tensor& g, const std::vector<bool>&) -> std::vector<Tensor> {
                              return {ifft2d_stacked(g)};
                          });
}

Tensor ifft2d_stacked(const Tensor& spectrum) {
    check_spectral(spectrum, "ifft2d");
    if (spectrum.dim(1) % 2 != 0) throw ShapeError("ifft2d: channel count must be even");
    const int64_t B = spectrum.dim(0), C = spectrum.dim(1) / 2, H = spectrum.dim(2),
                  W = spectrum.dim(3), HW = H * W;
    Tensor out = Tensor::empty({B, C, H, W}, spectrum.dtype());
    dispatch(spectrum.dtype(), [&]<class T>() {
        const T* ps = spectrum.data<T>();
        T* po = out.data<T>();
        std::vector<cd> plane(static_cast<size_t>(HW));
        for (int64_t b = 0; b < B; ++b)
            for (int64_t c = 0; c < C; ++c) {
                const T* re = ps + (b * 2 * C + c) * HW;
                const T* im = ps + (b * 2 * C + C + c) * HW;
                for (int64_t i = 0; i < HW; ++i) plane[static_cast<size_t>(i)] = cd(re[i], im[i]);
                fft2d_plane(plane, H, W, true);
                T* dst = po + (b * C + c) * HW;
                for (int64_t i = 0; i < HW; ++i) dst[i] = static_cast<T>(plane[static_cast<size_t>(i)].real());
            }
    });
    return attach_grad_fn(out, {spectrum}, "ifft2d",
                          [](const Tensor& g, const std::vector<bool>&) -> std::vector<Tensor> {
                              return {fft2d_stacked(g)};
                          });
}

ComplexGrid fft2d(const Tensor& x) {
    Tensor s = fft2d_stacked(x);
    const int64_t C = x.dim(1);
    return {slice(s, 1, 0, C), slice(s, 1, C, 2 * C)};
}

Tensor ifft2d(const ComplexGrid& g) {
    if (g.real.shape() != g.imag.shape()) throw ShapeError("ifft2d: real/imag shape mismatch");
    return ifft2d_stacked(concat({g.real, g.imag}, 1));
}

}  // namespace priorfill
