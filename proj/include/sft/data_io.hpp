#pragma once

// Echo-sequence container (manifest + flat little-endian f32 binary),
// sliding-window dataset construction, rain-rate to pixel-threshold
// conversion, and the synthetic lifecycle generator.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace sft {

enum class ValueConvention { normalized_unit, dbz_8bit };

struct EchoSequence {
    std::vector<float> frames;  // T*H*W, frame-major row-major
    int64_t t = 0, h = 0, w = 0;
    int interval_min = 6;
    ValueConvention convention = ValueConvention::normalized_unit;
    std::string source_id;

    float& at(int64_t ti, int64_t y, int64_t x) { return frames[(ti * h + y) * w + x]; }
    float at(int64_t ti, int64_t y, int64_t x) const { return frames[(ti * h + y) * w + x]; }
    const float* frame(int64_t ti) const { return frames.data() + ti * h * w; }
};

struct SequenceWindow {
    EchoSequence input;   // length t_in
    EchoSequence target;  // length width - t_in
    int64_t origin_offset = 0;
};

struct ThresholdMap {
    double rain_rate_mmh = 0.0;
    double pixel_threshold = 0.0;
};

void write_sequence(const EchoSequence& seq, const std::filesystem::path& dir);
EchoSequence read_sequence(const std::filesystem::path& dir);

std::vector<SequenceWindow> build_windows(const EchoSequence& seq, int64_t width, int64_t stride,
                                          int64_t t_in);

// dBZ = 10*log10(a) + 10*b*log10(rate); pixel = clamp((dBZ + 10)/70, 0, 1)
double rate_to_pixel(double rain_rate_mmh, double zr_a = 58.53, double zr_b = 1.56);

std::vector<ThresholdMap> default_thresholds();

// synthetic lifecycle generator: advecting anisotropic Gaussian cells with a
// rise-and-decay intensity envelope
struct GaussianCell {
    double cx = 0, cy = 0;       // center at t = 0 (pixels)
    double vx = 0, vy = 0;       // pixels per frame
    double sx = 4, sy = 4;       // principal std deviations
    double theta = 0;            // anisotropy axis angle at t = 0
    double omega = 0;            // axis rotation per frame
    double birth = 0;            // frame of first nonzero intensity
    double lifespan = 10;        // frames from birth to extinction
    double amp = 1;              // peak amplitude
};

struct SyntheticParams {
    int min_cells = 1, max_cells = 4;
    double vmin = 1.0, vmax = 2.5;           // speed range, px/frame
    double sigma_min = 0.06, sigma_max = 0.16;  // cell size as fraction of min(H,W)
    double amp_min = 0.6, amp_max = 1.0;
    double rot_max = 0.05;                   // radians/frame
};

void render_cells(const std::vector<GaussianCell>& cells, EchoSequence& seq);

std::vector<EchoSequence> generate_synthetic(uint64_t seed, int n_sequences, int64_t t_seq,
                                             int64_t h, int64_t w,
                                             const SyntheticParams& params = {});

}  // namespace sft
