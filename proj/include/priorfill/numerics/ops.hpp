#pragma once

#include <cstdint>
#include <vector>

#include "priorfill/numerics/tensor.hpp"

namespace priorfill {

// ---------------------------------------------------------------------------
// Elementwise arithmetic. Broadcasting stretches size-1 axes and prepends
// missing leading axes; gradients are summed back onto the operand shape.

enum class BinaryKind { add, sub, mul, div };

Shape broadcast_shapes(const Shape& a, const Shape& b);
Tensor binary_elementwise(const Tensor& a, const Tensor& b, BinaryKind kind);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& x, double s);
Tensor mul_scalar(const Tensor& x, double s);
Tensor neg(const Tensor& x);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator+(const Tensor& a, double s) { return add_scalar(a, s); }
inline Tensor operator-(const Tensor& a, double s) { return add_scalar(a, -s); }
inline Tensor operator*(const Tensor& a, double s) { return mul_scalar(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return mul_scalar(a, s); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

/// Broadcast `x` up to `shape`.
Tensor expand_to(const Tensor& x, const Shape& shape);
/// Sum `x` down to `shape` (inverse of broadcasting).
Tensor sum_to(const Tensor& x, const Shape& shape);

// ---------------------------------------------------------------------------
// Unary maps

Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor square(const Tensor& x);
/// max(x, lo); gradient is zero where clamped.
Tensor clamp_min(const Tensor& x, double lo);

enum class Activation { relu, leaky_relu, sigmoid, gelu, tanh };

Tensor activation(const Tensor& x, Activation kind, double negative_slope = 0.2);
Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double negative_slope = 0.2);
Tensor sigmoid(const Tensor& x);
/// Exact (erf) GELU.
Tensor gelu(const Tensor& x);
Tensor tanh(const Tensor& x);

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum_dim(const Tensor& x, int dim, bool keepdim = false);
Tensor mean_dim(const Tensor& x, int dim, bool keepdim = false);

// ---------------------------------------------------------------------------
// Layout

/// Shares storage. One extent may be -1.
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<int>& perm);
Tensor transpose(const Tensor& x, int d0, int d1);
/// Half-open range [start, end) along `dim`.
Tensor slice(const Tensor& x, int dim, int64_t start, int64_t end);
Tensor concat(const std::vector<Tensor>& xs, int dim);

/// x: [B, T, D]; idx[b] lists the rows to keep (same count for every b).
Tensor gather_rows(const Tensor& x, const std::vector<std::vector<int64_t>>& idx);
/// Copy of `base` [B, T, D] with rows idx[b][u] replaced by src[b, u].
Tensor scatter_rows(const Tensor& base, const Tensor& src,
                    const std::vector<std::vector<int64_t>>& idx);

// ---------------------------------------------------------------------------
// Linear algebra and normalisation

/// [M,K]x[K,N], or batched [...,M,K]x[...,K,N] with equal leading extents.
Tensor matmul(const Tensor& a, const Tensor& b);
/// x: [..., in], w: [in, out], b: [out] (optional).
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

/// Softmax over the last axis. Where `key_mask` (broadcastable to x) is
/// nonzero the logit is treated as -inf: the output there is exactly 0.
/// A row with every entry masked is a ContractError.
Tensor softmax_lastdim(const Tensor& x, const Tensor& key_mask = Tensor());

/// Normalises over the last axis, then applies gamma/beta (optional).
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

struct BatchNormState {
    Tensor running_mean;
    Tensor running_var;
    double momentum = 0.1;
    double eps = 1e-5;
};

/// x: [B, C, H, W] (or [B, C]). Training mode uses batch statistics and
/// updates the running estimates; eval mode uses the running estimates.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  BatchNormState& state, bool training);

enum class NormKind { layer_norm, batch_norm };

// ---------------------------------------------------------------------------
// Spatial ops, NCHW layout

struct Conv2dOptions {
    int stride = 1;
    int pad = 0;
    int dilation = 1;
    int groups = 1;
};

/// Cross-correlation with zero padding. w: [O, C/groups, kh, kw].
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, Conv2dOptions opt = {});

/// Transposed convolution, the adjoint of conv2d in its input.
/// w: [Cin, Cout, kh, kw]; output extent (H-1)*stride - 2*pad + k + output_pad.
Tensor deconv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad,
                int output_pad = 0);

/// Verification hook: when enabled, conv2d's input gradient is negated so a
/// gradient check can be shown to catch a broken backward pass.
void set_conv_backward_fault(bool enabled);
bool conv_backward_fault();

Tensor max_pool2d(const Tensor& x, int kernel, int stride);

/// Align-corners bilinear resampling of the two trailing axes.
Tensor bilinear_resize(const Tensor& x, int64_t out_h, int64_t out_w);

// ---------------------------------------------------------------------------
// Spectral ops (unitary normalisation, power-of-two extents)

struct ComplexGrid {
    Tensor real;  // [B, C, H, W]
    Tensor imag;  // [B, C, H, W]
};

/// 2D DFT of each channel. Output [B, 2C, H, W]: real parts, then imaginary.
Tensor fft2d_stacked(const Tensor& x);
/// Real part of the inverse 2D DFT of a stacked [B, 2C, H, W] spectrum.
Tensor ifft2d_stacked(const Tensor& spectrum);

ComplexGrid fft2d(const Tensor& x);
Tensor ifft2d(const ComplexGrid& g);

}  // namespace priorfill
