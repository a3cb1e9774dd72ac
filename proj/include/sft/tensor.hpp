#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace sft {

// Dense row-major tensor with value semantics. The autodiff graph in
// autodiff.hpp wraps these; everything here is plain storage + helpers.
template <typename S>
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<S> data;

    Tensor() = default;
    explicit Tensor(std::vector<int64_t> shp) : shape(std::move(shp)) {
        data.assign(static_cast<size_t>(count(shape)), S(0));
    }
    Tensor(std::vector<int64_t> shp, std::vector<S> values)
        : shape(std::move(shp)), data(std::move(values)) {
        if (static_cast<int64_t>(data.size()) != count(shape))
            throw std::invalid_argument("tensor: data size does not match shape");
    }

    static int64_t count(const std::vector<int64_t>& shp) {
        int64_t n = 1;
        for (int64_t d : shp) {
            if (d < 0) throw std::invalid_argument("tensor: negative dimension");
            n *= d;
        }
        return n;
    }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    int64_t dim(int i) const { return shape.at(static_cast<size_t>(i)); }

    S& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
    const S& operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

    static Tensor zeros(std::vector<int64_t> shp) { return Tensor(std::move(shp)); }
    static Tensor full(std::vector<int64_t> shp, S v) {
        Tensor t(std::move(shp));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }
    static Tensor ones(std::vector<int64_t> shp) { return full(std::move(shp), S(1)); }

    template <typename Rng>
    static Tensor randn(std::vector<int64_t> shp, Rng& rng, S stddev = S(1)) {
        Tensor t(std::move(shp));
        std::normal_distribution<double> dist(0.0, 1.0);
        for (auto& v : t.data) v = static_cast<S>(dist(rng) * static_cast<double>(stddev));
        return t;
    }
    template <typename Rng>
    static Tensor uniform(std::vector<int64_t> shp, Rng& rng, S lo, S hi) {
        Tensor t(std::move(shp));
        std::uniform_real_distribution<double> dist(static_cast<double>(lo), static_cast<double>(hi));
        for (auto& v : t.data) v = static_cast<S>(dist(rng));
        return t;
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (S v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    S max_abs() const {
        S m = S(0);
        for (S v : data) m = std::max(m, static_cast<S>(std::abs(static_cast<double>(v))));
        return m;
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << '[';
        for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
        os << ']';
        return os.str();
    }
};

inline void check(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

struct config_error : std::runtime_error {
    explicit config_error(const std::string& m) : std::runtime_error(m) {}
};
struct format_error : std::runtime_error {
    explicit format_error(const std::string& m) : std::runtime_error(m) {}
};
struct numerical_error : std::runtime_error {
    explicit numerical_error(const std::string& m) : std::runtime_error(m) {}
};

}  // namespace sft
