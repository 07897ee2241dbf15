#pragma once

// Classical holographic reconstructions: inverse filtering, Wiener filtering
// and HIO with a reference projection (HIO-Holo).
//
// Filtering geometry. With the detector frame Y = |F(Z)|^2, its normalized
// inverse DFT is the circular autocorrelation
//     A(t) = sum_q Z(q + t) Z(q),
// which splits into the specimen and reference autocorrelations (lags within
// +-(m-1) columns of the origin), the cross term
//     C(t) = sum_q X0(q) R0(q + t)
// and its mirror C(-t). For the reference's top-left corner at (r0, c0) and an
// m x m specimen at the origin, C occupies
//     rows [r0 - (m-1), r0 + rh - 1],  cols [c0 - (m-1), c0 + rw - 1]   (mod detector)
//
//     lag col:  -(m-1) .. (m-1) | m .. c0-m | c0-(m-1) .. c0+rw-1 | ... | mirror
//               autocorrelations   zeros        cross term C            C(-t)
//
// For (X | 0 | R) with gamma >= 2 these blocks do not overlap. DFT(C) equals
// conj(F X0) . F R0, so F X0 = conj(DFT(C)) . F R0 / |F R0|^2.

#include <chrono>
#include <cmath>
#include <limits>

#include "holopr/fft.hpp"
#include "holopr/forward.hpp"
#include "holopr/grid.hpp"
#include "holopr/objective.hpp"
#include "holopr/optimize.hpp"
#include "holopr/random.hpp"

namespace holopr::baselines {

/// Throws unless filtering is well-defined: full separation and gamma >= 2.
inline void require_filterable(const forward::Scene& scene, double gamma) {
    if (!forward::fully_separated(scene))
        throw Error("filtering requires full holographic separation (X | 0 | R); layout is " + scene.layout.name());
    if (!(gamma >= 2.0)) throw Error("filtering requires an oversampling factor >= 2");
}

namespace detail {

inline std::size_t wrap(long v, std::size_t n) {
    const long nn = static_cast<long>(n);
    return static_cast<std::size_t>(((v % nn) + nn) % nn);
}

// DFT of the cross-correlation block C extracted from the autocorrelation of y.
inline ComplexGrid cross_term_spectrum(const forward::Measurement& y, const forward::Scene& scene) {
    ComplexGrid autocorr(y.y.height(), y.y.width());
    for (std::size_t i = 0; i < y.y.size(); ++i) autocorr[i] = y.y[i];  // beamstopped pixels are already zero
    autocorr = fft::inverse(std::move(autocorr));
    const auto m = static_cast<long>(scene.x_region.height);
    const auto& r = scene.r_region;
    ComplexGrid block(autocorr.height(), autocorr.width());
    for (long tr = static_cast<long>(r.row) - (m - 1); tr <= static_cast<long>(r.row_end()) - 1; ++tr)
        for (long tc = static_cast<long>(r.col) - (m - 1); tc <= static_cast<long>(r.col_end()) - 1; ++tc) {
            const std::size_t i = wrap(tr, block.height()), j = wrap(tc, block.width());
            block(i, j) = autocorr(i, j);
        }
    return fft::forward(std::move(block));
}

inline ComplexGrid reference_spectrum(const forward::Scene& scene, double gamma) {
    GrayImage r0(scene.canvas.height(), scene.canvas.width());
    paste(r0, scene.reference, scene.r_region.row, scene.r_region.col);
    return forward::oversampled_dft(r0, gamma);
}

// Inverts F X0 from the cross-term spectrum with the given quotient and crops the specimen.
template <typename Quotient>
GrayImage deconvolve(const forward::Measurement& y, const forward::Scene& scene, Quotient quotient) {
    const ComplexGrid g = cross_term_spectrum(y, scene);
    const ComplexGrid h = reference_spectrum(scene, y.gamma);
    require_same_shape(g, h, "deconvolve");
    ComplexGrid fx(g.height(), g.width());
    for (std::size_t i = 0; i < fx.size(); ++i) fx[i] = std::conj(g[i]) * quotient(h[i]);
    fx = fft::inverse(std::move(fx));
    GrayImage out(scene.x_region.height, scene.x_region.width);
    for (std::size_t r = 0; r < out.height(); ++r)
        for (std::size_t c = 0; c < out.width(); ++c)
            out(r, c) = fx(scene.x_region.row + r, scene.x_region.col + c).real();
    return out;
}

inline double max_modulus(const ComplexGrid& g) {
    double mx = 0.0;
    for (const auto& v : g) mx = std::max(mx, std::abs(v));
    return mx;
}

}  // namespace detail

/// Inverse filtering with hard division by the reference spectrum; frequencies
/// where |F R| < 1e-8 max|F R| are set to zero.
inline GrayImage inverse_filter(const forward::Measurement& y, const forward::Scene& scene) {
    require_filterable(scene, y.gamma);
    const double guard = 1e-8 * detail::max_modulus(detail::reference_spectrum(scene, y.gamma));
    return detail::deconvolve(y, scene, [guard](Complex h) -> Complex {
        const double mag = std::abs(h);
        return mag < guard ? Complex{} : h / (mag * mag);
    });
}

inline GrayImage inverse_filter(const forward::Measurement& y, const GrayImage& reference,
                                const forward::Layout& layout) {
    const std::size_t m = optimize::infer_specimen_size(y);
    return inverse_filter(y, forward::assemble_scene(GrayImage(m, m), reference, layout));
}

/// Default Wiener regularizer (C / Np) * N_det / ||F R||^2; zero for noiseless frames.
inline double default_wiener_sigma2(const forward::Measurement& y, const forward::Scene& scene) {
    if (y.is_noiseless()) return 0.0;
    const ComplexGrid h = detail::reference_spectrum(scene, y.gamma);
    double energy = 0.0;
    for (const auto& v : h) energy += std::norm(v);
    if (!(energy > 0.0)) throw Error("wiener_filter: reference has zero energy");
    return (y.c_norm / y.np) * static_cast<double>(h.size()) / energy;
}

/// Wiener deconvolution with the regularized quotient conj(H) / (|H|^2 + sigma2),
/// applied to the mirrored cross term. sigma2 = 0 falls back to the guarded inverse.
inline GrayImage wiener_filter(const forward::Measurement& y, const forward::Scene& scene, double sigma2) {
    require_filterable(scene, y.gamma);
    if (!(sigma2 >= 0.0)) throw Error("wiener_filter: sigma2 must be >= 0");
    if (sigma2 == 0.0) return inverse_filter(y, scene);
    return detail::deconvolve(y, scene, [sigma2](Complex h) -> Complex { return h / (std::norm(h) + sigma2); });
}

inline GrayImage wiener_filter(const forward::Measurement& y, const forward::Scene& scene) {
    require_filterable(scene, y.gamma);
    return wiener_filter(y, scene, default_wiener_sigma2(y, scene));
}

// ---------------------------------------------------------------------------
// HIO-Holo

struct HioConfig {
    std::size_t iterations = 1000;
    double beta = 0.9;
    std::uint64_t seed = 0;
    std::size_t log_every = 10;

    void validate() const {
        if (iterations < 1) throw Error("hio: iterations must be >= 1");
        if (!(beta > 0.0 && beta <= 1.0)) throw Error("hio: beta must lie in (0, 1]");
        if (log_every < 1) throw Error("hio: log_every must be >= 1");
    }
};

/// Detector-sized object estimate: U[0,1] on the specimen, R on the reference, zero elsewhere.
inline GrayImage hio_initial_estimate(const forward::Measurement& y, const forward::Scene& scene, std::uint64_t seed) {
    GrayImage z(y.y.height(), y.y.width());
    Rng rng(seed);
    const auto& xr = scene.x_region;
    for (std::size_t r = xr.row; r < xr.row_end(); ++r)
        for (std::size_t c = xr.col; c < xr.col_end(); ++c) z(r, c) = rng.uniform();
    paste(z, scene.reference, scene.r_region.row, scene.r_region.col);
    return z;
}

/// One HIO-Holo iteration on the detector-sized estimate `z`:
///  1. Fourier magnitudes replaced by sqrt(y) where B = 1 (phase kept); B = 0 untouched.
///  2. Real part of the normalized inverse transform.
///  3. Specimen region takes the new values, the reference region is reset to R,
///     everything else gets the HIO feedback z - beta * z_new.
inline void hio_step(GrayImage& z, const forward::Measurement& y, const forward::Scene& scene, double beta) {
    require_same_shape(z, y.y, "hio_step");
    ComplexGrid field(z.height(), z.width());
    for (std::size_t i = 0; i < z.size(); ++i) field[i] = z[i];
    fft::transform_inplace(field, fft::Direction::forward);
    for (std::size_t i = 0; i < field.size(); ++i) {
        if (y.mask.grid[i] == 0.0) continue;
        const double target = std::sqrt(y.y[i]);
        const double mag = std::abs(field[i]);
        field[i] = mag > 0.0 ? field[i] * (target / mag) : Complex{target, 0.0};
    }
    field = fft::inverse(std::move(field));
    const auto& xr = scene.x_region;
    const auto& rr = scene.r_region;
    for (std::size_t r = 0; r < z.height(); ++r)
        for (std::size_t c = 0; c < z.width(); ++c) {
            const double fresh = field(r, c).real();
            if (xr.contains(r, c))
                z(r, c) = fresh;
            else if (rr.contains(r, c))
                z(r, c) = scene.reference(r - rr.row, c - rr.col);
            else
                z(r, c) -= beta * fresh;
        }
}

/// HIO-Holo with best-residual iterate selection over the logged iterations.
inline optimize::ReconstructionResult hio_holo(const forward::Measurement& y, const forward::Scene& scene,
                                               const HioConfig& cfg) {
    cfg.validate();
    if (y.mask.observed_count() == 0) throw Error("hio_holo: beamstop mask hides every detector pixel");
    if (forward::detector_shape(shape_of(scene.canvas), y.gamma) != y.shape())
        throw Error("hio_holo: measurement shape does not match the scene layout");
    const auto start = std::chrono::steady_clock::now();
    optimize::ReconstructionResult result;
    result.seed = cfg.seed;
    double best = std::numeric_limits<double>::infinity();
    forward::Scene model = scene;
    GrayImage z = hio_initial_estimate(y, scene, cfg.seed);
    for (std::size_t t = 0;; ++t) {
        if (t % cfg.log_every == 0 || t == cfg.iterations) {
            GrayImage x = crop(z, scene.x_region);
            forward::set_unknown(model, x);
            const GrayImage intensity = forward::intensity(model.canvas, y.gamma);
            const double res = optimize::residual_from_intensity(y, intensity);
            result.trace.push_back({t, objective::poisson_objective(y.y, y.mask.grid, intensity), res});
            if (res < best) {
                best = res;
                result.best_iteration = t;
                result.x_hat = std::move(x);
            }
        }
        if (t == cfg.iterations) break;
        hio_step(z, y, scene, cfg.beta);
    }
    result.elapsed_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return result;
}

}  // namespace holopr::baselines
