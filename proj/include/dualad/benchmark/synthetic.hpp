#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "dualad/backbone/spec.hpp"
#include "dualad/core/error.hpp"
#include "dualad/core/random.hpp"
#include "dualad/core/types.hpp"

namespace dualad::benchmark {

struct BlobImageOptions {
    int num_classes = 4;
    int per_class = 50;
    int side = 16;
    double noise = 0.05;           // per-pixel Gaussian noise around the class prototype
    std::uint64_t seed = 0;        // sample noise
    std::uint64_t class_seed = 1;  // class prototypes; keep fixed across train/test
    std::string id_prefix = "blobs";
};

/// Smooth RGB prototype for class c: a few random plane waves per channel.
inline std::vector<float> blob_prototype(int side, std::uint64_t class_seed, int c) {
    Rng rng(derive_seed(class_seed, static_cast<std::uint64_t>(c)));
    constexpr int kWaves = 3;
    std::array<std::array<double, 4>, 3 * kWaves> waves{};
    for (auto& w : waves) {
        const double angle = 6.283185307179586 * uniform01(rng);
        const double freq = 0.5 + 2.0 * uniform01(rng);
        w = {freq * std::cos(angle), freq * std::sin(angle), 6.283185307179586 * uniform01(rng),
             0.25 * (0.5 + uniform01(rng))};
    }
    std::vector<float> out(static_cast<std::size_t>(side * side * 3));
    for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x)
            for (int ch = 0; ch < 3; ++ch) {
                double v = 0.5;
                const double u = static_cast<double>(x) / side, t = static_cast<double>(y) / side;
                for (int k = 0; k < kWaves; ++k) {
                    const auto& w = waves[static_cast<std::size_t>(ch * kWaves + k)];
                    v += w[3] * std::sin(6.283185307179586 * (w[0] * u + w[1] * t) + w[2]) / kWaves * 2.0;
                }
                out[static_cast<std::size_t>((y * side + x) * 3 + ch)] = static_cast<float>(v);
            }
    return out;
}

/// Labelled images: class prototypes plus isotropic pixel noise, clamped to [0, 1].
inline backbone::ImageBatch blob_images(const BlobImageOptions& o) {
    if (o.num_classes < 1 || o.per_class < 0 || o.side < 1) throw ConfigError("blob_images: bad size");
    backbone::ImageBatch b;
    b.height = b.width = static_cast<std::size_t>(o.side);
    b.channels = 3;
    Rng rng(o.seed);
    for (int c = 0; c < o.num_classes; ++c) {
        const auto proto = blob_prototype(o.side, o.class_seed, c);
        for (int i = 0; i < o.per_class; ++i) {
            for (float p : proto)
                b.pixels.push_back(static_cast<float>(std::clamp(p + o.noise * standard_normal(rng), 0.0, 1.0)));
            b.labels.push_back(c);
            b.ids.push_back(o.id_prefix + "/s" + std::to_string(o.seed) + "/c" + std::to_string(c) + "/" +
                            std::to_string(i));
        }
    }
    return b;
}

} // namespace dualad::benchmark
