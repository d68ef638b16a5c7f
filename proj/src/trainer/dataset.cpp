#include "priorfill/trainer/dataset.hpp"

#include <algorithm>
#include <filesystem>

#include "priorfill/metrics/image_io.hpp"
#include "priorfill/numerics/ops.hpp"

namespace priorfill {

Tensor synthetic_image(uint64_t seed, int64_t size, DType dt) {
    Rng rng(seed);
    double c0[3], c1[3];
    for (int c = 0; c < 3; ++c) {
        c0[c] = rng.uniform();
        c1[c] = rng.uniform();
    }
    const double ang = rng.uniform(0.0, 6.283185307179586);
    const double dx = std::cos(ang), dy = std::sin(ang);
    std::vector<double> v(static_cast<size_t>(3 * size * size));
    for (int64_t y = 0; y < size; ++y)
        for (int64_t x = 0; x < size; ++x) {
            const double u = 0.5 + 0.5 * ((x / double(size - 1) - 0.5) * dx + (y / double(size - 1) - 0.5) * dy) * 1.41421356;
            for (int c = 0; c < 3; ++c)
                v[static_cast<size_t>((c * size + y) * size + x)] = c0[c] + (c1[c] - c0[c]) * u;
        }
    const int64_t shapes = rng.uniform_int(2, 4);
    for (int64_t s = 0; s < shapes; ++s) {
        const bool disc = rng.bernoulli(0.5);
        double col[3];
        for (double& c : col) c = rng.uniform();
        const double cx = rng.uniform(0.15, 0.85) * size, cy = rng.uniform(0.15, 0.85) * size;
        const double rx = rng.uniform(0.10, 0.30) * size, ry = rng.uniform(0.10, 0.30) * size;
        for (int64_t y = 0; y < size; ++y)
            for (int64_t x = 0; x < size; ++x) {
                const double px = (x + 0.5 - cx) / rx, py = (y + 0.5 - cy) / ry;
                const bool inside = disc ? px * px + py * py <= 1.0 : std::abs(px) <= 1.0 && std::abs(py) <= 1.0;
                if (!inside) continue;
                for (int c = 0; c < 3; ++c) v[static_cast<size_t>((c * size + y) * size + x)] = col[c];
            }
    }
    return Tensor::from_vector(v, {3, size, size}, dt);
}

Dataset Dataset::synthetic(int64_t count, int64_t size, uint64_t seed) {
    if (count < 1) throw ConfigError("dataset: synthetic image count must be positive");
    Dataset d;
    d.resolution_ = size;
    for (int64_t i = 0; i < count; ++i) d.images_.push_back(synthetic_image(seed * 1000003ULL + uint64_t(i), size));
    return d;
}

Dataset Dataset::from_directory(const std::string& dir, int64_t size) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw ConfigError("dataset: not a directory: " + dir);
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        std::string ext = e.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
        if (e.is_regular_file() && ext == ".png") files.push_back(e.path());
    }
    if (files.empty()) throw ConfigError("dataset: no PNG images in " + dir);
    std::sort(files.begin(), files.end());
    Dataset d;
    d.resolution_ = size;
    for (const auto& f : files) {
        Tensor img = read_png_rgb(f.string());
        NoGradGuard ng;
        img = reshape(bilinear_resize(reshape(img, {1, 3, img.dim(1), img.dim(2)}), size, size), {3, size, size});
        d.images_.push_back(img);
    }
    return d;
}

Tensor Dataset::batch(const std::vector<int64_t>& indices) const {
    if (indices.empty()) throw ContractError("dataset: empty batch");
    std::vector<Tensor> parts;
    for (int64_t i : indices) {
        if (i < 0 || i >= size()) throw ContractError("dataset: index out of range");
        parts.push_back(reshape(images_[static_cast<size_t>(i)], {1, 3, resolution_, resolution_}));
    }
    NoGradGuard ng;
    return concat(parts, 0);
}

Dataset Dataset::resized(int64_t size) const {
    Dataset d;
    d.resolution_ = size;
    NoGradGuard ng;
    for (const auto& img : images_)
        d.images_.push_back(reshape(bilinear_resize(reshape(img, {1, 3, resolution_, resolution_}), size, size),
                                    {3, size, size}));
    return d;
}

}  // namespace priorfill
