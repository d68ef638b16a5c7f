#include "priorfill/mae/transformer.hpp"

#include <cmath>

namespace priorfill {

TransformerBlock TransformerBlock::create(ParamSet& ps, const std::string& prefix, int64_t dim,
                                          int64_t heads, int64_t mlp_ratio, Rng& rng) {
    if (heads < 1 || dim % heads != 0) throw ConfigError("transformer: dim not divisible by heads");
    TransformerBlock b;
    b.dim = dim;
    b.heads = heads;
    const int64_t hidden = dim * mlp_ratio;
    b.ln1_g = ps.add(prefix + "ln1.g", Tensor::ones({dim}));
    b.ln1_b = ps.add(prefix + "ln1.b", Tensor::zeros({dim}));
    b.qkv_w = ps.add(prefix + "qkv.w", xavier_uniform({dim, 3 * dim}, dim, 3 * dim, rng));
    b.qkv_b = ps.add(prefix + "qkv.b", Tensor::zeros({3 * dim}));
    b.proj_w = ps.add(prefix + "proj.w", xavier_uniform({dim, dim}, dim, dim, rng));
    b.proj_b = ps.add(prefix + "proj.b", Tensor::zeros({dim}));
    b.ln2_g = ps.add(prefix + "ln2.g", Tensor::ones({dim}));
    b.ln2_b = ps.add(prefix + "ln2.b", Tensor::zeros({dim}));
    b.fc1_w = ps.add(prefix + "fc1.w", xavier_uniform({dim, hidden}, dim, hidden, rng));
    b.fc1_b = ps.add(prefix + "fc1.b", Tensor::zeros({hidden}));
    b.fc2_w = ps.add(prefix + "fc2.w", xavier_uniform({hidden, dim}, hidden, dim, rng));
    b.fc2_b = ps.add(prefix + "fc2.b", Tensor::zeros({dim}));
    return b;
}

BlockOutput block_forward(const TransformerBlock& blk, const Tensor& x, bool record) {
    if (x.ndim() != 3 || x.dim(2) != blk.dim)
        throw ShapeError("block_forward: expected [B,N," + std::to_string(blk.dim) + "], got " +
                         shape_str(x.shape()));
    const int64_t B = x.dim(0), N = x.dim(1), H = blk.heads, hd = blk.dim / blk.heads;
    BlockOutput res;

    Tensor h = layer_norm(x, blk.ln1_g, blk.ln1_b, 1e-6);
    Tensor qkv = linear(h, blk.qkv_w, blk.qkv_b);                        // [B,N,3d]
    qkv = permute(reshape(qkv, {B, N, 3, H, hd}), {2, 0, 3, 1, 4});      // [3,B,H,N,hd]
    Tensor q = reshape(slice(qkv, 0, 0, 1), {B * H, N, hd});
    Tensor k = reshape(slice(qkv, 0, 1, 2), {B * H, N, hd});
    Tensor v = reshape(slice(qkv, 0, 2, 3), {B * H, N, hd});
    Tensor logits = mul_scalar(matmul(q, transpose(k, 1, 2)), 1.0 / std::sqrt(double(hd)));
    Tensor attn = softmax_lastdim(logits);
    if (record) {
        res.logits = reshape(logits.detach(), {B, H, N, N});
        NoGradGuard ng;
        res.attn = mean_dim(reshape(attn.detach(), {B, H, N, N}), 1);
    }
    Tensor ctx = matmul(attn, v);                                          // [B*H,N,hd]
    ctx = reshape(permute(reshape(ctx, {B, H, N, hd}), {0, 2, 1, 3}), {B, N, blk.dim});
    Tensor y = add(x, linear(ctx, blk.proj_w, blk.proj_b));

    Tensor m = layer_norm(y, blk.ln2_g, blk.ln2_b, 1e-6);
    m = linear(gelu(linear(m, blk.fc1_w, blk.fc1_b)), blk.fc2_w, blk.fc2_b);
    res.out = add(y, m);
    return res;
}

Tensor sincos_pos_embed_2d(int64_t dim, int64_t gh, int64_t gw, DType dt) {
    if (dim % 4 != 0) throw ConfigError("positional embedding dim must be divisible by 4");
    const int64_t quarter = dim / 4;
    std::vector<double> v(static_cast<size_t>(gh * gw * dim));
    for (int64_t r = 0; r < gh; ++r)
        for (int64_t c = 0; c < gw; ++c) {
            double* row = v.data() + (r * gw + c) * dim;
            for (int64_t i = 0; i < quarter; ++i) {
                const double omega = 1.0 / std::pow(10000.0, double(i) / double(quarter));
                row[i] = std::sin(double(c) * omega);
                row[quarter + i] = std::cos(double(c) * omega);
                row[2 * quarter + i] = std::sin(double(r) * omega);
                row[3 * quarter + i] = std::cos(double(r) * omega);
            }
        }
    return Tensor::from_vector(v, {gh * gw, dim}, dt);
}

}  // namespace priorfill
