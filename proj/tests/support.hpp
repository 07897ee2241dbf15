#pragma once

// Shared helpers for the test suites: random fixtures, brute-force oracles and
// scratch directories.

#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <sstream>
#include <string>

#include "holopr/holopr.hpp"

namespace testing_support {

using holopr::Complex;
using holopr::ComplexGrid;
using holopr::GrayImage;

inline GrayImage random_image(std::size_t h, std::size_t w, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
    holopr::Rng rng(seed);
    GrayImage g(h, w);
    for (auto& v : g) v = rng.uniform(lo, hi);
    return g;
}

inline GrayImage binary_image(std::size_t h, std::size_t w, std::uint64_t seed) {
    holopr::Rng rng(seed);
    GrayImage g(h, w);
    for (auto& v : g) v = rng.coin() ? 1.0 : 0.0;
    return g;
}

/// Direct O(N^2) DFT of `src` zero-padded to h x w, sign exp(-2 pi i (uk/H + vl/W)).
inline ComplexGrid brute_dft(const GrayImage& src, std::size_t h, std::size_t w) {
    ComplexGrid out(h, w);
    for (std::size_t u = 0; u < h; ++u)
        for (std::size_t v = 0; v < w; ++v) {
            Complex acc{};
            for (std::size_t k = 0; k < src.height(); ++k)
                for (std::size_t l = 0; l < src.width(); ++l) {
                    const double phase = -2.0 * std::numbers::pi *
                                         (static_cast<double>(u * k) / static_cast<double>(h) +
                                          static_cast<double>(v * l) / static_cast<double>(w));
                    acc += src(k, l) * Complex(std::cos(phase), std::sin(phase));
                }
            out(u, v) = acc;
        }
    return out;
}

/// Central finite difference of f along every coordinate of x.
inline std::vector<double> numeric_gradient(const std::function<double(const std::vector<double>&)>& f,
                                            std::vector<double> x, double step = 1e-6) {
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        x[i] = keep + step;
        const double fp = f(x);
        x[i] = keep - step;
        const double fm = f(x);
        x[i] = keep;
        g[i] = (fp - fm) / (2.0 * step);
    }
    return g;
}

/// ||a - b|| / max(||b||, tiny).
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num += (a[i] - b[i]) * (a[i] - b[i]);
        den += b[i] * b[i];
    }
    return std::sqrt(num) / std::max(std::sqrt(den), 1e-300);
}

/// Fresh empty directory under the system temp dir, named after the running test.
inline std::filesystem::path scratch_dir(const std::string& tag = "") {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    std::string name = std::string("holopr_") + info->test_suite_name() + "_" + info->name() + tag;
    for (auto& ch : name)
        if (ch == '/') ch = '_';
    const auto dir = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

inline std::string data_path(const std::string& name) { return std::string(HOLOPR_TEST_DATA) + "/" + name; }

}  // namespace testing_support
