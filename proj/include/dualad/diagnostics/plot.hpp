#pragma once

#include <array>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <vector>

#include <png.h>

#include "dualad/core/error.hpp"
#include "dualad/core/types.hpp"

namespace dualad::diagnostics {

using Rgb = std::array<std::uint8_t, 3>;

inline Rgb class_colour(int c) {
    static constexpr std::array<Rgb, 10> palette{{{31, 119, 180}, {255, 127, 14}, {44, 160, 44}, {214, 39, 40},
                                                  {148, 103, 189}, {140, 86, 75}, {227, 119, 194}, {127, 127, 127},
                                                  {188, 189, 34}, {23, 190, 207}}};
    return palette[static_cast<std::size_t>(((c % 10) + 10) % 10)];
}

/// RGB raster, row-major.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> rgb;

    Image(int w, int h) : width(w), height(h), rgb(static_cast<std::size_t>(w * h * 3), 255) {}

    void put(int x, int y, Rgb c) {
        if (x < 0 || y < 0 || x >= width || y >= height) return;
        auto* p = &rgb[static_cast<std::size_t>((y * width + x) * 3)];
        p[0] = c[0];
        p[1] = c[1];
        p[2] = c[2];
    }
};

inline void write_png(const std::filesystem::path& path, const Image& img) {
    const auto tmp = std::filesystem::path(path).concat(".tmp");
    std::unique_ptr<FILE, int (*)(FILE*)> f(std::fopen(tmp.c_str(), "wb"), &std::fclose);
    if (!f) throw DataError("cannot open " + tmp.string() + " for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, nullptr);
        throw DataError("libpng initialisation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw DataError("libpng failed while writing " + path.string());
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < img.height; ++y)
        png_write_row(png, const_cast<png_bytep>(&img.rgb[static_cast<std::size_t>(y * img.width * 3)]));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    f.reset();
    std::filesystem::rename(tmp, path);
}

/// Scatter plot of 2-D coordinates, one colour per label.
inline Image scatter_image(const Matrix& xy, const std::vector<int>& labels, int size = 512) {
    if (xy.cols() != 2 || static_cast<std::size_t>(xy.rows()) != labels.size())
        throw DataError("scatter plot needs n x 2 coordinates and n labels");
    Image img(size, size);
    if (xy.rows() == 0) return img;
    const double margin = 0.05 * size;
    const Eigen::RowVector2d lo = xy.colwise().minCoeff(), hi = xy.colwise().maxCoeff();
    const Eigen::RowVector2d span = (hi - lo).cwiseMax(1e-12);
    for (Eigen::Index i = 0; i < xy.rows(); ++i) {
        const int px = static_cast<int>(margin + (xy(i, 0) - lo[0]) / span[0] * (size - 2 * margin));
        const int py = static_cast<int>(size - margin - (xy(i, 1) - lo[1]) / span[1] * (size - 2 * margin));
        const Rgb c = class_colour(labels[static_cast<std::size_t>(i)]);
        for (int dy = -2; dy <= 2; ++dy)
            for (int dx = -2; dx <= 2; ++dx) img.put(px + dx, py + dy, c);
    }
    return img;
}

inline void write_scatter_png(const std::filesystem::path& path, const Matrix& xy, const std::vector<int>& labels,
                              int size = 512) {
    write_png(path, scatter_image(xy, labels, size));
}

} // namespace dualad::diagnostics
