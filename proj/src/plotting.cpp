#include "sft/plotting.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "sft/tensor.hpp"

namespace sft {

namespace fs = std::filesystem;

void write_pgm(const GrayImage& img, const fs::path& file) {
    std::ofstream f(file, std::ios::binary);
    if (!f) throw std::runtime_error("write_pgm: cannot open " + file.string());
    f << "P5\n" << img.w << " " << img.h << "\n255\n";
    f.write(reinterpret_cast<const char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
    if (!f.good()) throw std::runtime_error("write_pgm: write failed for " + file.string());
}

void write_ppm(const RgbImage& img, const fs::path& file) {
    std::ofstream f(file, std::ios::binary);
    if (!f) throw std::runtime_error("write_ppm: cannot open " + file.string());
    f << "P6\n" << img.w << " " << img.h << "\n255\n";
    f.write(reinterpret_cast<const char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
    if (!f.good()) throw std::runtime_error("write_ppm: write failed for " + file.string());
}

static uint8_t to_gray(float v) {
    double c = std::clamp(static_cast<double>(v), 0.0, 1.0);
    return static_cast<uint8_t>(std::lround(c * 255.0));
}

GrayImage frame_grid(const std::vector<const EchoSequence*>& rows) {
    check(!rows.empty(), "frame_grid: no rows");
    int64_t H = rows[0]->h, W = rows[0]->w, Tmax = 0;
    for (const auto* r : rows) {
        check(r->h == H && r->w == W, "frame_grid: rows must share frame dimensions");
        Tmax = std::max(Tmax, r->t);
    }
    GrayImage img(static_cast<int64_t>(rows.size()) * H, Tmax * W);
    for (size_t r = 0; r < rows.size(); ++r)
        for (int64_t t = 0; t < rows[r]->t; ++t)
            for (int64_t y = 0; y < H; ++y)
                for (int64_t x = 0; x < W; ++x)
                    img.at(static_cast<int64_t>(r) * H + y, t * W + x) =
                        to_gray(rows[r]->at(t, y, x));
    return img;
}

static void draw_line(RgbImage& img, int64_t x0, int64_t y0, int64_t x1, int64_t y1, uint8_t r,
                      uint8_t g, uint8_t b) {
    // Bresenham
    int64_t dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
    int64_t dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
    int64_t err = dx + dy;
    while (true) {
        img.set(y0, x0, r, g, b);
        if (x0 == x1 && y0 == y1) break;
        int64_t e2 = 2 * err;
        if (e2 >= dy) {
            err += dy;
            x0 += sx;
        }
        if (e2 <= dx) {
            err += dx;
            y0 += sy;
        }
    }
}

RgbImage curve_plot(const std::vector<CurveSeries>& series, double lo, double hi, int64_t plot_w,
                    int64_t plot_h) {
    check(!series.empty() && hi > lo, "curve_plot: need series and hi > lo");
    size_t n = 0;
    for (const auto& s : series) n = std::max(n, s.values.size());
    check(n >= 1, "curve_plot: empty series");

    RgbImage img(plot_h, plot_w);
    int64_t ml = 48, mr = 16, mt = 16, mb = 32;  // margins
    int64_t x0 = ml, x1 = plot_w - mr, y0 = plot_h - mb, y1 = mt;

    auto px = [&](size_t lead_idx) {
        double f = n > 1 ? static_cast<double>(lead_idx) / static_cast<double>(n - 1) : 0.0;
        return x0 + static_cast<int64_t>(std::lround(f * static_cast<double>(x1 - x0)));
    };
    auto py = [&](double v) {
        double f = (std::clamp(v, lo, hi) - lo) / (hi - lo);
        return y0 - static_cast<int64_t>(std::lround(f * static_cast<double>(y0 - y1)));
    };

    // axes + horizontal gridlines at quarters
    for (int q = 0; q <= 4; ++q) {
        int64_t y = py(lo + (hi - lo) * q / 4.0);
        draw_line(img, x0, y, x1, y, 220, 220, 220);
    }
    draw_line(img, x0, y0, x1, y0, 0, 0, 0);
    draw_line(img, x0, y0, x0, y1, 0, 0, 0);
    // lead-time ticks
    for (size_t k = 0; k < n; ++k) draw_line(img, px(k), y0, px(k), y0 + 4, 0, 0, 0);

    for (const auto& s : series) {
        std::optional<std::pair<int64_t, int64_t>> prev;
        for (size_t k = 0; k < s.values.size(); ++k) {
            if (!s.values[k]) {
                prev.reset();  // gaps at missing cells, never drawn as zero
                continue;
            }
            int64_t x = px(k), y = py(*s.values[k]);
            if (prev) draw_line(img, prev->first, prev->second, x, y, s.r, s.g, s.b);
            // small square marker
            for (int64_t dy = -1; dy <= 1; ++dy)
                for (int64_t dx = -1; dx <= 1; ++dx) img.set(y + dy, x + dx, s.r, s.g, s.b);
            prev = {x, y};
        }
    }
    return img;
}

void write_curve_csv(const std::vector<CurveSeries>& series, const fs::path& file) {
    std::ofstream f(file);
    if (!f) throw std::runtime_error("write_curve_csv: cannot open " + file.string());
    f << "lead";
    for (const auto& s : series) f << "," << s.label;
    f << "\n";
    size_t n = 0;
    for (const auto& s : series) n = std::max(n, s.values.size());
    f.precision(12);
    for (size_t k = 0; k < n; ++k) {
        f << (k + 1);
        for (const auto& s : series) {
            f << ",";
            if (k < s.values.size() && s.values[k]) f << *s.values[k];
        }
        f << "\n";
    }
    if (!f.good()) throw std::runtime_error("write_curve_csv: write failed for " + file.string());
}

}  // namespace sft
