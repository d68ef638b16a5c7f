#include "priorfill/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <json.hpp>
#include <sstream>

namespace priorfill {

namespace {

constexpr double kPsnrCap = 99.0;

double psnr_from_mse(double mse, double peak) {
    if (mse <= 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / mse));
}

// Separable 11-tap Gaussian filter over the valid region of an H x W plane.
std::vector<double> gauss_valid(const std::vector<double>& p, int64_t H, int64_t W, const std::vector<double>& k) {
    const int64_t K = static_cast<int64_t>(k.size()), oh = H - K + 1, ow = W - K + 1;
    std::vector<double> tmp(static_cast<size_t>(H * ow)), out(static_cast<size_t>(oh * ow));
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < ow; ++x) {
            double s = 0;
            for (int64_t i = 0; i < K; ++i) s += k[static_cast<size_t>(i)] * p[static_cast<size_t>(y * W + x + i)];
            tmp[static_cast<size_t>(y * ow + x)] = s;
        }
    for (int64_t y = 0; y < oh; ++y)
        for (int64_t x = 0; x < ow; ++x) {
            double s = 0;
            for (int64_t i = 0; i < K; ++i) s += k[static_cast<size_t>(i)] * tmp[static_cast<size_t>((y + i) * ow + x)];
            out[static_cast<size_t>(y * ow + x)] = s;
        }
    return out;
}

double ssim_plane(const std::vector<double>& a, const std::vector<double>& b, int64_t H, int64_t W) {
    std::vector<double> k(11);
    double z = 0;
    for (int i = 0; i < 11; ++i) {
        k[static_cast<size_t>(i)] = std::exp(-double((i - 5) * (i - 5)) / (2 * 1.5 * 1.5));
        z += k[static_cast<size_t>(i)];
    }
    for (double& v : k) v /= z;
    const size_t n = a.size();
    std::vector<double> aa(n), bb(n), ab(n);
    for (size_t i = 0; i < n; ++i) {
        aa[i] = a[i] * a[i];
        bb[i] = b[i] * b[i];
        ab[i] = a[i] * b[i];
    }
    auto mu_a = gauss_valid(a, H, W, k), mu_b = gauss_valid(b, H, W, k);
    auto s_aa = gauss_valid(aa, H, W, k), s_bb = gauss_valid(bb, H, W, k), s_ab = gauss_valid(ab, H, W, k);
    const double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
    double total = 0;
    for (size_t i = 0; i < mu_a.size(); ++i) {
        const double ma = mu_a[i], mb = mu_b[i];
        const double va = s_aa[i] - ma * ma, vb = s_bb[i] - mb * mb, cov = s_ab[i] - ma * mb;
        total += ((2 * ma * mb + C1) * (2 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2));
    }
    return total / double(mu_a.size());
}

Shape image_shape(const Tensor& t) {
    Shape s = t.shape();
    if (s.size() == 4 && s[0] == 1) s.erase(s.begin());
    if (s.size() == 2) s.insert(s.begin(), 1);
    if (s.size() != 3) throw ShapeError("expected an image [C,H,W], got " + shape_str(t.shape()));
    return s;
}

}  // namespace

double psnr(const Tensor& a, const Tensor& b, double peak) {
    if (a.shape() != b.shape()) throw ShapeError("psnr: shapes differ");
    auto va = a.to_vector(), vb = b.to_vector();
    double s = 0;
    for (size_t i = 0; i < va.size(); ++i) s += (va[i] - vb[i]) * (va[i] - vb[i]);
    return psnr_from_mse(s / double(va.size()), peak);
}

double hole_psnr(const Tensor& a, const Tensor& b, const MaskMap& mask, double peak) {
    if (a.shape() != b.shape()) throw ShapeError("hole_psnr: shapes differ");
    Shape s = image_shape(a);
    if (s[1] != mask.h || s[2] != mask.w) throw ShapeError("hole_psnr: mask size differs from the image");
    auto va = a.to_vector(), vb = b.to_vector();
    const int64_t HW = mask.h * mask.w;
    double acc = 0;
    int64_t n = 0;
    for (int64_t c = 0; c < s[0]; ++c)
        for (int64_t i = 0; i < HW; ++i)
            if (mask.bits[static_cast<size_t>(i)]) {
                const double d = va[static_cast<size_t>(c * HW + i)] - vb[static_cast<size_t>(c * HW + i)];
                acc += d * d;
                ++n;
            }
    if (n == 0) throw ContractError("hole_psnr: empty mask");
    return psnr_from_mse(acc / double(n), peak);
}

double ssim(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw ShapeError("ssim: shapes differ");
    Shape s = image_shape(a);
    const int64_t C = s[0], H = s[1], W = s[2];
    if (H < 11 || W < 11) throw ContractError("ssim: images must be at least 11x11");
    auto va = a.to_vector(), vb = b.to_vector();
    double total = 0;
    for (int64_t c = 0; c < C; ++c) {
        std::vector<double> pa(va.begin() + c * H * W, va.begin() + (c + 1) * H * W);
        std::vector<double> pb(vb.begin() + c * H * W, vb.begin() + (c + 1) * H * W);
        total += ssim_plane(pa, pb, H, W);
    }
    return total / double(C);
}

std::vector<int64_t> attention_argmax_map(const Tensor& attention, const TokenMask& mask) {
    const int64_t T = mask.tokens();
    if (attention.numel() != T * T) throw ShapeError("attention map: expected [T,T] with T = " + std::to_string(T));
    if (mask.count() == T) throw ContractError("attention map: every token is masked");
    auto v = attention.to_vector();
    std::vector<int64_t> out(static_cast<size_t>(T), -1);
    for (int64_t q = 0; q < T; ++q) {
        if (!mask.masked(q)) continue;
        int64_t best = -1;
        for (int64_t k = 0; k < T; ++k) {
            if (mask.masked(k)) continue;
            if (best < 0 || v[static_cast<size_t>(q * T + k)] > v[static_cast<size_t>(q * T + best)]) best = k;
        }
        out[static_cast<size_t>(q)] = best;
    }
    return out;
}

Image8 render_attention_map(const std::vector<int64_t>& argmax, const TokenMask& mask, int64_t cell) {
    Image8 img;
    img.channels = 3;
    img.width = mask.gw * cell;
    img.height = mask.gh * cell;
    img.pixels.assign(static_cast<size_t>(img.width * img.height * 3), 0);
    for (int64_t t = 0; t < mask.tokens(); ++t) {
        const int64_t target = argmax.at(static_cast<size_t>(t));
        if (!mask.masked(t) || target < 0) continue;
        // Colour encodes the attended position: red by column, green by row.
        const double cx = mask.gw > 1 ? double(target % mask.gw) / double(mask.gw - 1) : 0.5;
        const double cy = mask.gh > 1 ? double(target / mask.gw) / double(mask.gh - 1) : 0.5;
        const uint8_t rgb[3] = {static_cast<uint8_t>(55 + 200 * cx), static_cast<uint8_t>(55 + 200 * cy),
                                static_cast<uint8_t>(255 - 100 * (cx + cy) / 2)};
        const int64_t y0 = (t / mask.gw) * cell, x0 = (t % mask.gw) * cell;
        for (int64_t y = 0; y < cell; ++y)
            for (int64_t x = 0; x < cell; ++x)
                for (int c = 0; c < 3; ++c)
                    img.pixels[static_cast<size_t>(((y0 + y) * img.width + x0 + x) * 3 + c)] = rgb[c];
    }
    return img;
}

void EvalReport::add(EvalEntry e) {
    entries.push_back(std::move(e));
    double p = 0, s = 0;
    for (const auto& x : entries) {
        p += x.psnr;
        s += x.ssim;
    }
    mean_psnr = p / double(entries.size());
    mean_ssim = s / double(entries.size());
}

std::string EvalReport::to_csv() const {
    std::ostringstream os;
    os << std::setprecision(10) << "name,psnr,ssim,mask_ratio,bucket\n";
    for (const auto& e : entries) os << e.name << ',' << e.psnr << ',' << e.ssim << ',' << e.mask_ratio << ',' << e.bucket << '\n';
    os << "mean," << mean_psnr << ',' << mean_ssim << ",,\n";
    return os.str();
}

std::string EvalReport::to_json() const {
    nlohmann::json j;
    j["mean_psnr"] = mean_psnr;
    j["mean_ssim"] = mean_ssim;
    j["images"] = nlohmann::json::array();
    for (const auto& e : entries)
        j["images"].push_back({{"name", e.name}, {"psnr", e.psnr}, {"ssim", e.ssim}, {"mask_ratio", e.mask_ratio},
                               {"bucket", e.bucket}});
    return j.dump(2);
}

std::string mask_ratio_bucket(double ratio) {
    const int lo = std::clamp(static_cast<int>(std::floor(ratio * 10.0)), 0, 9) * 10;
    return std::to_string(lo) + "-" + std::to_string(lo + 10) + "%";
}

}  // namespace priorfill
