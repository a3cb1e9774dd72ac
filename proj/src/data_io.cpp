#include "sft/data_io.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <random>

#include "sft/tensor.hpp"

namespace sft {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "container I/O assumes a little-endian host");

static std::string convention_name(ValueConvention c) {
    return c == ValueConvention::normalized_unit ? "normalized_unit" : "dbz_8bit";
}

static ValueConvention convention_from(const std::string& s) {
    if (s == "normalized_unit") return ValueConvention::normalized_unit;
    if (s == "dbz_8bit") return ValueConvention::dbz_8bit;
    throw format_error("unknown value convention: " + s);
}

void write_sequence(const EchoSequence& seq, const fs::path& dir) {
    if (seq.t < 1 || static_cast<int64_t>(seq.frames.size()) != seq.t * seq.h * seq.w)
        throw format_error("write_sequence: inconsistent sequence shape");
    std::error_code ec;
    fs::create_directories(dir, ec);
    json manifest = {{"shape", {seq.t, seq.h, seq.w}},
                     {"dtype", "f32le"},
                     {"interval_min", seq.interval_min},
                     {"convention", convention_name(seq.convention)},
                     {"source_id", seq.source_id},
                     {"byte_order", "little"}};
    {
        std::ofstream mf(dir / "manifest.json");
        if (!mf) throw std::runtime_error("write_sequence: cannot open manifest in " + dir.string());
        mf << manifest.dump(2) << "\n";
        if (!mf.good()) throw std::runtime_error("write_sequence: manifest write failed");
    }
    std::ofstream bf(dir / "frames.bin", std::ios::binary);
    if (!bf) throw std::runtime_error("write_sequence: cannot open frames.bin in " + dir.string());
    bf.write(reinterpret_cast<const char*>(seq.frames.data()),
             static_cast<std::streamsize>(seq.frames.size() * sizeof(float)));
    if (!bf.good()) throw std::runtime_error("write_sequence: payload write failed");
}

EchoSequence read_sequence(const fs::path& dir) {
    std::ifstream mf(dir / "manifest.json");
    if (!mf) throw std::runtime_error("read_sequence: missing manifest in " + dir.string());
    json manifest;
    try {
        mf >> manifest;
    } catch (const json::exception& e) {
        throw format_error("read_sequence: bad manifest: " + std::string(e.what()));
    }
    EchoSequence seq;
    try {
        auto shape = manifest.at("shape");
        if (shape.size() != 3) throw format_error("read_sequence: shape must have 3 entries");
        seq.t = shape[0];
        seq.h = shape[1];
        seq.w = shape[2];
        if (manifest.at("dtype") != "f32le")
            throw format_error("read_sequence: unsupported dtype");
        seq.interval_min = manifest.value("interval_min", 6);
        seq.convention = convention_from(manifest.value("convention", "normalized_unit"));
        seq.source_id = manifest.value("source_id", "");
    } catch (const json::exception& e) {
        throw format_error("read_sequence: bad manifest: " + std::string(e.what()));
    }
    if (seq.t < 1 || seq.h < 1 || seq.w < 1)
        throw format_error("read_sequence: non-positive dimensions in manifest");

    std::ifstream bf(dir / "frames.bin", std::ios::binary | std::ios::ate);
    if (!bf) throw std::runtime_error("read_sequence: missing frames.bin in " + dir.string());
    auto bytes = static_cast<int64_t>(bf.tellg());
    int64_t expect = seq.t * seq.h * seq.w * static_cast<int64_t>(sizeof(float));
    if (bytes != expect)
        throw format_error("read_sequence: payload is " + std::to_string(bytes) +
                           " bytes, manifest expects " + std::to_string(expect));
    bf.seekg(0);
    seq.frames.resize(static_cast<size_t>(seq.t * seq.h * seq.w));
    bf.read(reinterpret_cast<char*>(seq.frames.data()), expect);
    if (!bf.good()) throw std::runtime_error("read_sequence: payload read failed");
    return seq;
}

std::vector<SequenceWindow> build_windows(const EchoSequence& seq, int64_t width, int64_t stride,
                                          int64_t t_in) {
    check(width > t_in && t_in >= 1, "build_windows: need width > t_in >= 1");
    check(stride >= 1, "build_windows: stride must be >= 1");
    std::vector<SequenceWindow> out;
    if (seq.t < width) return out;
    int64_t count = (seq.t - width) / stride + 1;
    int64_t fsz = seq.h * seq.w;
    for (int64_t k = 0; k < count; ++k) {
        int64_t start = k * stride;
        SequenceWindow win;
        win.origin_offset = start;
        auto slice = [&](int64_t from, int64_t len) {
            EchoSequence s;
            s.t = len;
            s.h = seq.h;
            s.w = seq.w;
            s.interval_min = seq.interval_min;
            s.convention = seq.convention;
            s.source_id = seq.source_id;
            s.frames.assign(seq.frames.begin() + from * fsz,
                            seq.frames.begin() + (from + len) * fsz);
            return s;
        };
        win.input = slice(start, t_in);
        win.target = slice(start + t_in, width - t_in);
        out.push_back(std::move(win));
    }
    return out;
}

double rate_to_pixel(double rain_rate_mmh, double zr_a, double zr_b) {
    if (rain_rate_mmh <= 0.0) throw std::domain_error("rate_to_pixel: rate must be positive");
    check(zr_a > 0.0 && zr_b > 0.0, "rate_to_pixel: Z-R coefficients must be positive");
    double dbz = 10.0 * std::log10(zr_a) + 10.0 * zr_b * std::log10(rain_rate_mmh);
    return std::clamp((dbz + 10.0) / 70.0, 0.0, 1.0);
}

std::vector<ThresholdMap> default_thresholds() {
    std::vector<ThresholdMap> out;
    for (double r : {0.5, 2.0, 5.0, 10.0, 30.0}) out.push_back({r, rate_to_pixel(r)});
    return out;
}

void render_cells(const std::vector<GaussianCell>& cells, EchoSequence& seq) {
    std::fill(seq.frames.begin(), seq.frames.end(), 0.0f);
    for (const auto& c : cells) {
        for (int64_t t = 0; t < seq.t; ++t) {
            double age = static_cast<double>(t) - c.birth;
            if (age < 0.0 || age > c.lifespan) continue;
            // smooth rise-and-decay hump, symmetric about mid-life
            double env = std::sin(M_PI * age / c.lifespan);
            env *= env;
            double a = c.amp * env;
            if (a <= 0.0) continue;
            double cx = c.cx + c.vx * t, cy = c.cy + c.vy * t;
            double th = c.theta + c.omega * t;
            double ct = std::cos(th), st = std::sin(th);
            double inv2sx = 1.0 / (2.0 * c.sx * c.sx), inv2sy = 1.0 / (2.0 * c.sy * c.sy);
            for (int64_t y = 0; y < seq.h; ++y)
                for (int64_t x = 0; x < seq.w; ++x) {
                    double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
                    double u = ct * dx + st * dy, v = -st * dx + ct * dy;
                    double g = a * std::exp(-(u * u * inv2sx + v * v * inv2sy));
                    seq.at(t, y, x) += static_cast<float>(g);
                }
        }
    }
    for (auto& v : seq.frames) v = std::clamp(v, 0.0f, 1.0f);
}

std::vector<EchoSequence> generate_synthetic(uint64_t seed, int n_sequences, int64_t t_seq,
                                             int64_t h, int64_t w, const SyntheticParams& p) {
    check(n_sequences >= 1 && t_seq >= 1 && h >= 1 && w >= 1,
          "generate_synthetic: dimensions must be positive");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto uni = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

    std::vector<EchoSequence> out;
    out.reserve(static_cast<size_t>(n_sequences));
    double smin = p.sigma_min * static_cast<double>(std::min(h, w));
    double smax = p.sigma_max * static_cast<double>(std::min(h, w));
    for (int s = 0; s < n_sequences; ++s) {
        int n_cells = p.min_cells +
                      static_cast<int>(unit(rng) * static_cast<double>(p.max_cells - p.min_cells + 1));
        n_cells = std::clamp(n_cells, p.min_cells, p.max_cells);
        std::vector<GaussianCell> cells;
        for (int i = 0; i < n_cells; ++i) {
            GaussianCell c;
            c.cx = uni(0.2, 0.8) * static_cast<double>(w);
            c.cy = uni(0.2, 0.8) * static_cast<double>(h);
            double speed = uni(p.vmin, p.vmax);
            double dir = uni(0.0, 2.0 * M_PI);
            c.vx = speed * std::cos(dir);
            c.vy = speed * std::sin(dir);
            c.sx = uni(smin, smax);
            c.sy = uni(smin, smax);
            c.theta = uni(0.0, M_PI);
            c.omega = uni(-p.rot_max, p.rot_max);
            c.birth = uni(-0.25 * static_cast<double>(t_seq), 0.25 * static_cast<double>(t_seq));
            c.lifespan = uni(0.9 * static_cast<double>(t_seq), 1.8 * static_cast<double>(t_seq));
            c.amp = uni(p.amp_min, p.amp_max);
            cells.push_back(c);
        }
        EchoSequence seq;
        seq.t = t_seq;
        seq.h = h;
        seq.w = w;
        seq.frames.assign(static_cast<size_t>(t_seq * h * w), 0.0f);
        seq.source_id = "synthetic-" + std::to_string(seed) + "-" + std::to_string(s);
        render_cells(cells, seq);
        out.push_back(std::move(seq));
    }
    return out;
}

}  // namespace sft
