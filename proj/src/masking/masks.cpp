#include "priorfill/masking/masks.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace priorfill {

namespace {

constexpr int kMaxShapes = 64;

void check_extent(int64_t h, int64_t w, const char* op) {
    if (h < 1 || w < 1) throw ShapeError(std::string(op) + ": empty mask extent");
}

void check_ratio(double r, const char* op) {
    if (!(r >= 0.0 && r <= 1.0)) throw ContractError(std::string(op) + ": ratio outside [0,1]");
}

// Tracks the masked count while painting.
struct Canvas {
    MaskMap& m;
    int64_t filled;

    explicit Canvas(MaskMap& mm) : m(mm), filled(mm.count()) {}
    double ratio() const { return double(filled) / double(m.h * m.w); }
    void paint(int64_t y, int64_t x) {
        uint8_t& b = m.bits[static_cast<size_t>(y * m.w + x)];
        if (!b) {
            b = 1;
            ++filled;
        }
    }
    void dab(double cx, double cy, double radius) {
        const int64_t x0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(cx - radius)));
        const int64_t x1 = std::min<int64_t>(m.w - 1, static_cast<int64_t>(std::floor(cx + radius)));
        const int64_t y0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(cy - radius)));
        const int64_t y1 = std::min<int64_t>(m.h - 1, static_cast<int64_t>(std::floor(cy + radius)));
        for (int64_t y = y0; y <= y1; ++y)
            for (int64_t x = x0; x <= x1; ++x) {
                const double dx = double(x) + 0.5 - cx, dy = double(y) + 0.5 - cy;
                if (dx * dx + dy * dy <= radius * radius) paint(y, x);
            }
        const int64_t px = std::clamp<int64_t>(static_cast<int64_t>(cx), 0, m.w - 1);
        const int64_t py = std::clamp<int64_t>(static_cast<int64_t>(cy), 0, m.h - 1);
        paint(py, px);
    }
};

void paint_strokes(Rng& rng, MaskMap& m, double target) {
    Canvas c(m);
    const double h = double(m.h), w = double(m.w);
    const double lo_w = std::max(1.0, h / 16), hi_w = std::max(1.0, h / 8);
    for (int s = 0; s < kMaxShapes && c.ratio() < target; ++s) {
        const int64_t vertices = rng.uniform_int(4, 12);
        const double radius = rng.uniform(lo_w, hi_w) / 2;
        double x = rng.uniform(0, w), y = rng.uniform(0, h);
        double angle = rng.uniform(0, 2 * std::numbers::pi);
        c.dab(x, y, radius);
        if (c.ratio() >= target) return;
        for (int64_t v = 1; v < vertices; ++v) {
            angle += rng.uniform(-std::numbers::pi / 2, std::numbers::pi / 2);
            const double len = std::max(1.0, rng.uniform(h / 8, h / 4));
            const double dx = std::cos(angle), dy = std::sin(angle);
            for (int k = 1; k <= static_cast<int>(std::ceil(len)); ++k) {
                x = std::clamp(x + dx, 0.0, w - 1e-9);
                y = std::clamp(y + dy, 0.0, h - 1e-9);
                c.dab(x, y, radius);
                if (c.ratio() >= target) return;
            }
        }
    }
}

void fill_convex(Canvas& c, const std::vector<std::pair<double, double>>& pts) {
    double xmin = pts[0].first, xmax = xmin, ymin = pts[0].second, ymax = ymin;
    for (auto [px, py] : pts) {
        xmin = std::min(xmin, px);
        xmax = std::max(xmax, px);
        ymin = std::min(ymin, py);
        ymax = std::max(ymax, py);
    }
    const int64_t x0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(xmin)));
    const int64_t x1 = std::min<int64_t>(c.m.w - 1, static_cast<int64_t>(std::ceil(xmax)));
    const int64_t y0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(ymin)));
    const int64_t y1 = std::min<int64_t>(c.m.h - 1, static_cast<int64_t>(std::ceil(ymax)));
    const size_t n = pts.size();
    for (int64_t y = y0; y <= y1; ++y)
        for (int64_t x = x0; x <= x1; ++x) {
            const double px = double(x) + 0.5, py = double(y) + 0.5;
            bool inside = true;
            for (size_t i = 0; i < n && inside; ++i) {
                auto [ax, ay] = pts[i];
                auto [bx, by] = pts[(i + 1) % n];
                inside = (bx - ax) * (py - ay) - (by - ay) * (px - ax) >= 0;
            }
            if (inside) c.paint(y, x);
        }
}

void draw_polygon(Rng& rng, Canvas& c, double area) {
    const double aspect = rng.uniform(0.5, 2.0);
    const double a = std::sqrt(area / std::numbers::pi * aspect);
    const double b = std::sqrt(area / std::numbers::pi / aspect);
    const double cx = rng.uniform(0, double(c.m.w)), cy = rng.uniform(0, double(c.m.h));
    const double rot = rng.uniform(0, std::numbers::pi);
    const int64_t n = rng.uniform_int(5, 12);
    std::vector<double> angles(static_cast<size_t>(n));
    for (auto& t : angles) t = rng.uniform(0, 2 * std::numbers::pi);
    std::sort(angles.begin(), angles.end());
    std::vector<std::pair<double, double>> pts;
    for (double t : angles) {
        const double ex = a * std::cos(t), ey = b * std::sin(t);
        pts.emplace_back(cx + ex * std::cos(rot) - ey * std::sin(rot),
                         cy + ex * std::sin(rot) + ey * std::cos(rot));
    }
    fill_convex(c, pts);
}

void paint_polygons(Rng& rng, MaskMap& m, double target) {
    Canvas c(m);
    const double area = double(m.h * m.w);
    for (int s = 0; s < kMaxShapes && c.ratio() < target; ++s)
        draw_polygon(rng, c, std::max((target - c.ratio()) * area * rng.uniform(0.6, 1.0), 4.0));
}

}  // namespace

int64_t MaskMap::count() const { return std::count(bits.begin(), bits.end(), uint8_t{1}); }

double MaskMap::ratio() const { return h * w == 0 ? 0.0 : double(count()) / double(h * w); }

int64_t TokenMask::count() const { return std::count(bits.begin(), bits.end(), uint8_t{1}); }

std::vector<int64_t> TokenMask::masked_indices() const {
    std::vector<int64_t> out;
    for (int64_t t = 0; t < tokens(); ++t)
        if (masked(t)) out.push_back(t);
    return out;
}

std::vector<int64_t> TokenMask::unmasked_indices() const {
    std::vector<int64_t> out;
    for (int64_t t = 0; t < tokens(); ++t)
        if (!masked(t)) out.push_back(t);
    return out;
}

const char* mask_family_name(MaskFamily f) {
    switch (f) {
        case MaskFamily::irregular: return "irregular";
        case MaskFamily::polygon: return "polygon";
        case MaskFamily::combined: return "combined";
    }
    return "unknown";
}

MaskMap gen_irregular(Rng& rng, int64_t h, int64_t w, double target_ratio) {
    check_extent(h, w, "gen_irregular");
    check_ratio(target_ratio, "gen_irregular");
    MaskMap m(h, w);
    paint_strokes(rng, m, target_ratio);
    return m;
}

void paint_convex_polygon(Rng& rng, MaskMap& m, double area) {
    Canvas c(m);
    draw_polygon(rng, c, area);
}

MaskMap gen_polygon(Rng& rng, int64_t h, int64_t w, double target_ratio) {
    check_extent(h, w, "gen_polygon");
    check_ratio(target_ratio, "gen_polygon");
    MaskMap m(h, w);
    paint_polygons(rng, m, target_ratio);
    return m;
}

TrainingMask gen_acr_training_mask(Rng& rng, int64_t h, int64_t w) {
    check_extent(h, w, "gen_acr_training_mask");
    const bool combined = rng.bernoulli(0.2);
    const double target = rng.uniform(0.10, 0.50);
    MaskMap m(h, w);
    if (combined) {
        paint_strokes(rng, m, target * rng.uniform(0.3, 0.7));
        paint_polygons(rng, m, target);
        return {m, MaskFamily::combined};
    }
    if (rng.bernoulli(0.5)) {
        paint_strokes(rng, m, target);
        return {m, MaskFamily::irregular};
    }
    paint_polygons(rng, m, target);
    return {m, MaskFamily::polygon};
}

TokenMask downsample_to_tokens(const MaskMap& m, int64_t patch) {
    if (patch < 1 || m.h % patch != 0 || m.w % patch != 0)
        throw ShapeError("downsample_to_tokens: " + std::to_string(m.h) + "x" + std::to_string(m.w) +
                         " not divisible by patch " + std::to_string(patch));
    TokenMask t(m.h / patch, m.w / patch);
    for (int64_t y = 0; y < m.h; ++y)
        for (int64_t x = 0; x < m.w; ++x)
            if (m.at(y, x)) t.bits[static_cast<size_t>((y / patch) * t.gw + x / patch)] = 1;
    return t;
}

MaskMap upsample_tokens(const TokenMask& t, int64_t patch) {
    MaskMap m(t.gh * patch, t.gw * patch);
    for (int64_t y = 0; y < m.h; ++y)
        for (int64_t x = 0; x < m.w; ++x)
            m.set(y, x, t.bits[static_cast<size_t>((y / patch) * t.gw + x / patch)]);
    return m;
}

TokenMask gen_mae_pretrain_mask(Rng& rng, int64_t gh, int64_t gw, double continuous_ratio) {
    if (gh * gw < 4) throw ShapeError("gen_mae_pretrain_mask: grid needs at least 4 tokens");
    check_ratio(continuous_ratio, "gen_mae_pretrain_mask");
    constexpr int64_t px = 4;
    MaskMap cont = rng.bernoulli(0.5) ? gen_irregular(rng, gh * px, gw * px, continuous_ratio)
                                      : gen_polygon(rng, gh * px, gw * px, continuous_ratio);
    TokenMask t = downsample_to_tokens(cont, px);
    const int64_t want = std::llround(0.75 * double(gh * gw));
    int64_t have = t.count();
    if (have < want) {
        std::vector<int64_t> free = t.unmasked_indices();
        for (int64_t i = 0; i < want - have; ++i) {
            auto j = static_cast<size_t>(rng.uniform_int(i, static_cast<int64_t>(free.size()) - 1));
            std::swap(free[static_cast<size_t>(i)], free[j]);
            t.bits[static_cast<size_t>(free[static_cast<size_t>(i)])] = 1;
        }
    }
    while (t.count() > want) {
        // Masked tokens touching an unmasked one erode first.
        std::vector<int64_t> border;
        for (int64_t i : t.masked_indices()) {
            const int64_t y = i / gw, x = i % gw;
            const bool edge = (y > 0 && !t.masked(i - gw)) || (y + 1 < gh && !t.masked(i + gw)) ||
                              (x > 0 && !t.masked(i - 1)) || (x + 1 < gw && !t.masked(i + 1));
            if (edge) border.push_back(i);
        }
        if (border.empty()) border = t.masked_indices();
        const auto pick = border[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(border.size()) - 1))];
        t.bits[static_cast<size_t>(pick)] = 0;
    }
    return t;
}

TokenMask gen_random_token_mask(Rng& rng, int64_t gh, int64_t gw, double ratio) {
    check_extent(gh, gw, "gen_random_token_mask");
    check_ratio(ratio, "gen_random_token_mask");
    TokenMask t(gh, gw);
    const int64_t T = gh * gw;
    const int64_t k = std::llround(ratio * double(T));
    std::vector<int64_t> idx(static_cast<size_t>(T));
    for (int64_t i = 0; i < T; ++i) idx[static_cast<size_t>(i)] = i;
    for (int64_t i = 0; i < k; ++i) {
        auto j = static_cast<size_t>(rng.uniform_int(i, T - 1));
        std::swap(idx[static_cast<size_t>(i)], idx[j]);
        t.bits[static_cast<size_t>(idx[static_cast<size_t>(i)])] = 1;
    }
    return t;
}

MaskMap square_mask(int64_t h, int64_t w, double ratio) {
    check_extent(h, w, "square_mask");
    check_ratio(ratio, "square_mask");
    MaskMap m(h, w);
    const int64_t sh = std::llround(double(h) * std::sqrt(ratio));
    const int64_t sw = std::llround(double(w) * std::sqrt(ratio));
    const int64_t y0 = (h - sh) / 2, x0 = (w - sw) / 2;
    for (int64_t y = y0; y < y0 + sh; ++y)
        for (int64_t x = x0; x < x0 + sw; ++x) m.set(y, x);
    return m;
}

Tensor masks_to_tensor(const std::vector<MaskMap>& masks, DType dt) {
    if (masks.empty()) throw ShapeError("masks_to_tensor: empty batch");
    const int64_t h = masks[0].h, w = masks[0].w;
    std::vector<double> v;
    v.reserve(masks.size() * static_cast<size_t>(h * w));
    for (const MaskMap& m : masks) {
        if (m.h != h || m.w != w) throw ShapeError("masks_to_tensor: mixed extents");
        for (uint8_t b : m.bits) v.push_back(b);
    }
    return Tensor::from_vector(v, {static_cast<int64_t>(masks.size()), 1, h, w}, dt);
}

}  // namespace priorfill
