#pragma once

// Thin FFTW wrapper. Plans are created once per (shape, direction) under a
// global lock and executed through the new-array interface, which FFTW allows
// from any thread. FFTW_UNALIGNED pins the codelet choice so results do not
// depend on buffer alignment.

#include <fftw3.h>

#include <map>
#include <mutex>
#include <tuple>
#include <vector>

#include "holopr/grid.hpp"

namespace holopr::fft {

enum class Direction { forward, inverse };

namespace detail {

class PlanCache {
public:
    static PlanCache& instance() {
        static PlanCache cache;
        return cache;
    }

    fftw_plan get(std::size_t h, std::size_t w, Direction dir) {
        std::lock_guard lock(mutex_);
        auto key = std::make_tuple(h, w, dir == Direction::forward);
        if (auto it = plans_.find(key); it != plans_.end()) return it->second;
        // In-place plan: transform_inplace executes with in == out.
        std::vector<Complex> buf(h * w);
        auto* p = reinterpret_cast<fftw_complex*>(buf.data());
        fftw_plan plan = fftw_plan_dft_2d(static_cast<int>(h), static_cast<int>(w), p, p,
                                          dir == Direction::forward ? FFTW_FORWARD : FFTW_BACKWARD,
                                          FFTW_ESTIMATE | FFTW_UNALIGNED);
        if (plan == nullptr) throw Error("fft: FFTW failed to create a plan");
        plans_.emplace(key, plan);
        return plan;
    }

    PlanCache(const PlanCache&) = delete;
    PlanCache& operator=(const PlanCache&) = delete;

private:
    PlanCache() = default;
    ~PlanCache() {
        for (auto& [key, plan] : plans_) fftw_destroy_plan(plan);
    }

    std::mutex mutex_;
    std::map<std::tuple<std::size_t, std::size_t, bool>, fftw_plan> plans_;
};

}  // namespace detail

/// Unnormalized 2-D DFT. Forward uses exp(-2 pi i (uk/H + vl/W)); inverse uses
/// the conjugate kernel without the 1/(HW) factor (the exact adjoint of forward).
inline void transform_inplace(ComplexGrid& g, Direction dir) {
    if (g.empty()) return;
    fftw_plan plan = detail::PlanCache::instance().get(g.height(), g.width(), dir);
    auto* p = reinterpret_cast<fftw_complex*>(g.data());
    fftw_execute_dft(plan, p, p);
}

inline ComplexGrid forward(ComplexGrid g) {
    transform_inplace(g, Direction::forward);
    return g;
}

/// Unnormalized inverse (adjoint) DFT.
inline ComplexGrid adjoint(ComplexGrid g) {
    transform_inplace(g, Direction::inverse);
    return g;
}

/// Normalized inverse DFT, so that inverse(forward(g)) == g.
inline ComplexGrid inverse(ComplexGrid g) {
    transform_inplace(g, Direction::inverse);
    const double scale = 1.0 / static_cast<double>(g.size());
    for (auto& v : g) v *= scale;
    return g;
}

/// Embeds a real grid into the top-left corner of a zero complex grid of the given shape.
inline ComplexGrid zero_padded(const GrayImage& src, std::size_t h, std::size_t w) {
    if (src.height() > h || src.width() > w) throw Error("fft: padded shape smaller than source");
    ComplexGrid out(h, w);
    for (std::size_t r = 0; r < src.height(); ++r)
        for (std::size_t c = 0; c < src.width(); ++c) out(r, c) = src(r, c);
    return out;
}

}  // namespace holopr::fft
