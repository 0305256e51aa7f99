#pragma once

#include <algorithm>
#include <cmath>

#include "dualad/backbone/spec.hpp"

namespace dualad::backbone {

namespace detail {

// Half-pixel-center source coordinate, matching torch's bilinear resize with
// align_corners=false.
struct LerpIndex {
    std::size_t lo = 0;
    std::size_t hi = 0;
    float frac = 0.0f;
};

inline std::vector<LerpIndex> lerp_table(std::size_t in, std::size_t out) {
    std::vector<LerpIndex> table(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t o = 0; o < out; ++o) {
        double src = std::max(0.0, (static_cast<double>(o) + 0.5) * scale - 0.5);
        auto lo = std::min(static_cast<std::size_t>(src), in - 1);
        table[o] = {lo, std::min(lo + 1, in - 1), static_cast<float>(src - static_cast<double>(lo))};
    }
    return table;
}

inline float lerp(float a, float b, float t) { return a + t * (b - a); }

} // namespace detail

/// Resize to input_resolution^2 (bilinear), replicate grayscale to three
/// channels and normalize with the pretraining statistics. Always starts from
/// raw [0,1] pixels; an already-normalized batch is rejected.
inline ImageBatch preprocess(const ImageBatch& batch, const BackboneSpec& spec) {
    batch.validate();
    if (batch.normalized) throw DataError("preprocess expects raw [0,1] pixels, got a normalized batch");
    if (spec.input_resolution < 1) throw ConfigError("input_resolution must be positive");
    for (float s : spec.stddev)
        if (!(s > 0.0f)) throw ConfigError("normalization std must be positive");

    const auto res = static_cast<std::size_t>(spec.input_resolution);
    const auto ys = detail::lerp_table(batch.height, res);
    const auto xs = detail::lerp_table(batch.width, res);

    ImageBatch out;
    out.height = res;
    out.width = res;
    out.channels = 3;
    out.labels = batch.labels;
    out.ids = batch.ids;
    out.normalized = true;
    out.pixels.resize(batch.size() * res * res * 3);

    float* dst = out.pixels.data();
    for (std::size_t i = 0; i < batch.size(); ++i) {
        for (std::size_t y = 0; y < res; ++y) {
            const auto& ly = ys[y];
            for (std::size_t x = 0; x < res; ++x) {
                const auto& lx = xs[x];
                for (std::size_t c = 0; c < 3; ++c) {
                    const std::size_t sc = batch.channels == 1 ? 0 : c;
                    const float top = detail::lerp(batch.at(i, ly.lo, lx.lo, sc), batch.at(i, ly.lo, lx.hi, sc), lx.frac);
                    const float bottom = detail::lerp(batch.at(i, ly.hi, lx.lo, sc), batch.at(i, ly.hi, lx.hi, sc), lx.frac);
                    const float v = detail::lerp(top, bottom, ly.frac);
                    *dst++ = (v - spec.mean[c]) / spec.stddev[c];
                }
            }
        }
    }
    return out;
}

} // namespace dualad::backbone
