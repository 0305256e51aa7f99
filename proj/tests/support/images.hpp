#pragma once

#include <cmath>
#include <string>

#include "dualad/backbone/spec.hpp"

namespace testdata {

/// Deterministic smooth test images, no RNG involved.
inline dualad::backbone::ImageBatch pattern_batch(std::size_t n, std::size_t side, std::size_t channels) {
    dualad::backbone::ImageBatch b;
    b.height = side;
    b.width = side;
    b.channels = channels;
    for (std::size_t i = 0; i < n; ++i) {
        b.ids.push_back("pattern/" + std::to_string(i));
        b.labels.push_back(static_cast<int>(i % 3));
        for (std::size_t y = 0; y < side; ++y)
            for (std::size_t x = 0; x < side; ++x)
                for (std::size_t c = 0; c < channels; ++c) {
                    const double v = 0.5 + 0.4 * std::sin(0.37 * static_cast<double>(x + 1) * static_cast<double>(i + 1) +
                                                          0.23 * static_cast<double>(y) + 1.1 * static_cast<double>(c));
                    b.pixels.push_back(static_cast<float>(v));
                }
    }
    return b;
}

} // namespace testdata
