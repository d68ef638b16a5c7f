#include "priorfill/verify/oracles.hpp"

#include <cmath>
#include <limits>

#include "priorfill/numerics/ops.hpp"

namespace priorfill {

namespace {

std::vector<double> layer_oracle(const TransformerBlock& blk, const Tensor& x_in, const TokenMask& mask) {
    const int64_t d = blk.dim, H = blk.heads, hd = d / H, T = x_in.dim(0);
    const auto hv = layer_norm(x_in, blk.ln1_g, blk.ln1_b, 1e-6).to_vector();
    const auto w = blk.qkv_w.to_vector(), bv = blk.qkv_b.to_vector();
    auto at = [](const std::vector<double>& v, int64_t i) { return v[static_cast<size_t>(i)]; };
    std::vector<double> qkv(static_cast<size_t>(T * 3 * d));
    for (int64_t t = 0; t < T; ++t)
        for (int64_t o = 0; o < 3 * d; ++o) {
            double s = at(bv, o);
            for (int64_t i = 0; i < d; ++i) s += at(hv, t * d + i) * at(w, i * 3 * d + o);
            qkv[static_cast<size_t>(t * 3 * d + o)] = s;
        }
    std::vector<double> out(static_cast<size_t>(T * T), 0.0);
    for (int64_t head = 0; head < H; ++head)
        for (int64_t q = 0; q < T; ++q) {
            std::vector<double> logit(static_cast<size_t>(T), -std::numeric_limits<double>::infinity());
            double mx = -std::numeric_limits<double>::infinity();
            for (int64_t k = 0; k < T; ++k) {
                if (mask.masked(k)) continue;
                double s = 0;
                for (int64_t i = 0; i < hd; ++i) s += at(qkv, q * 3 * d + head * hd + i) * at(qkv, k * 3 * d + d + head * hd + i);
                logit[static_cast<size_t>(k)] = s / std::sqrt(double(hd));
                mx = std::max(mx, logit[static_cast<size_t>(k)]);
            }
            double z = 0;
            for (double& l : logit) z += (l = std::exp(l - mx));
            for (int64_t k = 0; k < T; ++k) out[static_cast<size_t>(q * T + k)] += logit[static_cast<size_t>(k)] / z / double(H);
        }
    return out;
}

}  // namespace

std::vector<double> prior_attention_oracle(const MaeModel& model, const Tensor& img, const TokenMask& mask) {
    const MaeConfig& c = model.config();
    const int64_t T = c.tokens();
    NoGradGuard ng;
    DecodeResult r = decode(model, encode_visible(model, img, {mask}), {mask});
    std::vector<double> acc(static_cast<size_t>(T * T), 0.0);
    for (int64_t l = 0; l < c.attn_layers_used; ++l) {
        Tensor x = reshape(l == 0 ? r.input : r.tokens[static_cast<size_t>(l - 1)], {T, c.dim});
        auto o = layer_oracle(model.dec_blocks[static_cast<size_t>(l)], x, mask);
        for (size_t i = 0; i < acc.size(); ++i) acc[i] += o[i] / double(c.attn_layers_used);
    }
    return acc;
}

ContextualOracle contextual_oracle(const Tensor& feats, const TokenMask& mask, double beta) {
    const int64_t C = feats.dim(1), fh = feats.dim(2), fw = feats.dim(3);
    const int64_t gh = mask.gh, gw = mask.gw, T = mask.tokens(), s = fh / gh;
    const auto f = feats.to_vector();
    auto cell = [&](int64_t t) {
        std::vector<double> v;
        const int64_t y0 = (t / gw) * s, x0 = (t % gw) * s;
        for (int64_t ch = 0; ch < C; ++ch)
            for (int64_t y = 0; y < s; ++y)
                for (int64_t x = 0; x < s; ++x) v.push_back(f[static_cast<size_t>((ch * fh + y0 + y) * fw + x0 + x)]);
        return v;
    };
    std::vector<std::vector<double>> cells;
    for (int64_t t = 0; t < T; ++t) cells.push_back(cell(t));
    auto dot = [](const std::vector<double>& a, const std::vector<double>& b) {
        double r = 0;
        for (size_t i = 0; i < a.size(); ++i) r += a[i] * b[i];
        return r;
    };
    ContextualOracle res;
    res.weights.assign(static_cast<size_t>(T * T), 0.0);
    res.output = f;
    for (int64_t q = 0; q < T; ++q) {
        if (!mask.masked(q)) continue;
        std::vector<double> e(static_cast<size_t>(T), 0.0);
        double mx = -std::numeric_limits<double>::infinity();
        for (int64_t k = 0; k < T; ++k) {
            if (mask.masked(k)) continue;
            const double na = std::sqrt(dot(cells[size_t(q)], cells[size_t(q)]));
            const double nb = std::sqrt(dot(cells[size_t(k)], cells[size_t(k)]));
            e[size_t(k)] = dot(cells[size_t(q)], cells[size_t(k)]) / (na * nb);
            mx = std::max(mx, e[size_t(k)]);
        }
        double z = 0;
        for (int64_t k = 0; k < T; ++k)
            if (!mask.masked(k)) z += (e[size_t(k)] = std::exp(e[size_t(k)] - mx));
        for (int64_t k = 0; k < T; ++k)
            if (!mask.masked(k)) res.weights[size_t(q * T + k)] = e[size_t(k)] / z;
        const int64_t y0 = (q / gw) * s, x0 = (q % gw) * s;
        for (int64_t ch = 0; ch < C; ++ch)
            for (int64_t y = 0; y < s; ++y)
                for (int64_t x = 0; x < s; ++x) {
                    const size_t within = static_cast<size_t>((ch * s + y) * s + x);
                    double agg = 0;
                    for (int64_t k = 0; k < T; ++k) agg += res.weights[size_t(q * T + k)] * cells[size_t(k)][within];
                    res.output[static_cast<size_t>((ch * fh + y0 + y) * fw + x0 + x)] += beta * agg;
                }
    }
    return res;
}

}  // namespace priorfill
