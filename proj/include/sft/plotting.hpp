#pragma once

// Dependency-free plot emission: grayscale frame grids as binary PGM,
// metric curves as binary PPM line plots, and the raw curve data as CSV.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sft/data_io.hpp"

namespace sft {

// 8-bit grayscale image, row-major
struct GrayImage {
    int64_t h = 0, w = 0;
    std::vector<uint8_t> pixels;

    GrayImage() = default;
    GrayImage(int64_t h_, int64_t w_) : h(h_), w(w_), pixels(static_cast<size_t>(h_ * w_), 0) {}
    uint8_t& at(int64_t y, int64_t x) { return pixels[y * w + x]; }
};

// 8-bit RGB image, row-major interleaved
struct RgbImage {
    int64_t h = 0, w = 0;
    std::vector<uint8_t> pixels;

    RgbImage() = default;
    RgbImage(int64_t h_, int64_t w_)
        : h(h_), w(w_), pixels(static_cast<size_t>(3 * h_ * w_), 255) {}
    void set(int64_t y, int64_t x, uint8_t r, uint8_t g, uint8_t b) {
        if (y < 0 || y >= h || x < 0 || x >= w) return;
        size_t i = static_cast<size_t>(3 * (y * w + x));
        pixels[i] = r;
        pixels[i + 1] = g;
        pixels[i + 2] = b;
    }
};

void write_pgm(const GrayImage& img, const std::filesystem::path& file);
void write_ppm(const RgbImage& img, const std::filesystem::path& file);

// rows of frame sequences rendered side by side; all rows must share H and W.
// image dims: (rows * H) x (T_max * W), [0,1] mapped linearly to 0..255
GrayImage frame_grid(const std::vector<const EchoSequence*>& rows);

// one curve per series; std::nullopt points are skipped (gaps stay visible)
struct CurveSeries {
    std::string label;
    std::vector<std::optional<double>> values;  // indexed by lead time - 1
    uint8_t r = 0, g = 0, b = 0;
};

// line plot over lead times 1..N with axes and y range [lo, hi]
RgbImage curve_plot(const std::vector<CurveSeries>& series, double lo, double hi,
                    int64_t plot_w = 640, int64_t plot_h = 400);

// CSV with one row per lead time, one column per series; missing -> empty cell
void write_curve_csv(const std::vector<CurveSeries>& series, const std::filesystem::path& file);

}  // namespace sft
