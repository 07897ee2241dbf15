#pragma once

// Data-fidelity objectives in maximized form, smoothed TV, and their analytic
// gradients with respect to the real canvas.
//
// With F the unnormalized DFT of the zero-padded canvas and I = |F|^2, the
// derivative of sum_k G_k I_k with respect to canvas pixel p is
//     2 Re[ sum_k G_k conj(F_k) e^{-2 pi i k p / N} ] = 2 Re[ F^H (G .* F) ](p),
// where F^H is the unnormalized inverse DFT (the adjoint of F).

#include <cmath>
#include <string>

#include "holopr/fft.hpp"
#include "holopr/forward.hpp"
#include "holopr/grid.hpp"

namespace holopr::objective {

enum class Kind { poisson, squared };

struct ObjectiveSpec {
    Kind kind = Kind::poisson;
    double tv_weight = 0.0;
    double tv_epsilon = 1e-3;
    double log_guard = 1e-12;

    void validate() const {
        if (!(tv_weight >= 0.0) || !std::isfinite(tv_weight)) throw Error("objective: tv_weight must be >= 0");
        if (!(tv_epsilon > 0.0)) throw Error("objective: tv_epsilon must be > 0");
        if (!(log_guard > 0.0)) throw Error("objective: log_guard must be > 0");
    }
};

/// sum over B = 1 of  y log(I + eps) - I.
inline double poisson_objective(const GrayImage& y, const GrayImage& mask, const GrayImage& intensity,
                                double log_guard = 1e-12) {
    require_same_shape(y, intensity, "poisson_objective");
    require_same_shape(y, mask, "poisson_objective");
    double total = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i)
        if (mask[i] != 0.0) total += y[i] * std::log(intensity[i] + log_guard) - intensity[i];
    return total;
}

/// -sum over B = 1 of (y - I)^2.
inline double squared_objective(const GrayImage& y, const GrayImage& mask, const GrayImage& intensity) {
    require_same_shape(y, intensity, "squared_objective");
    require_same_shape(y, mask, "squared_objective");
    double total = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i)
        if (mask[i] != 0.0) {
            const double d = y[i] - intensity[i];
            total -= d * d;
        }
    return total;
}

inline double evaluate(const ObjectiveSpec& spec, const GrayImage& y, const GrayImage& mask,
                       const GrayImage& intensity) {
    return spec.kind == Kind::poisson ? poisson_objective(y, mask, intensity, spec.log_guard)
                                      : squared_objective(y, mask, intensity);
}

/// Derivative of the data objective with respect to each intensity pixel.
inline GrayImage intensity_gradient(const ObjectiveSpec& spec, const GrayImage& y, const GrayImage& mask,
                                    const GrayImage& intensity) {
    require_same_shape(y, intensity, "intensity_gradient");
    require_same_shape(y, mask, "intensity_gradient");
    GrayImage g(y.height(), y.width());
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (mask[i] == 0.0) continue;
        g[i] = spec.kind == Kind::poisson ? y[i] / (intensity[i] + spec.log_guard) - 1.0
                                          : 2.0 * (y[i] - intensity[i]);
    }
    return g;
}

/// Pulls an intensity-domain gradient G back to the canvas: 2 Re[F^H (G .* F)],
/// cropped to the canvas support.
inline GrayImage pullback_to_canvas(const ComplexGrid& field, const GrayImage& g, Shape canvas) {
    require_same_shape(field, g, "pullback_to_canvas");
    ComplexGrid w(field.height(), field.width());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = g[i] * field[i];
    fft::transform_inplace(w, fft::Direction::inverse);
    GrayImage out(canvas.height, canvas.width);
    for (std::size_t r = 0; r < canvas.height; ++r)
        for (std::size_t c = 0; c < canvas.width; ++c) out(r, c) = 2.0 * w(r, c).real();
    return out;
}

struct CanvasEvaluation {
    double value = 0.0;
    GrayImage gradient;   // d objective / d canvas
    GrayImage intensity;  // I(Z), reused for residuals
};

/// Data objective at `canvas` and its gradient over the full canvas.
inline CanvasEvaluation objective_grad_canvas(const forward::Measurement& y, const GrayImage& canvas,
                                              const ObjectiveSpec& spec) {
    const ComplexGrid field = forward::oversampled_dft(canvas, y.gamma);
    require_same_shape(field, y.y, "objective_grad_canvas");
    CanvasEvaluation out;
    out.intensity = forward::squared_modulus(field);
    out.value = evaluate(spec, y.y, y.mask.grid, out.intensity);
    out.gradient = pullback_to_canvas(field, intensity_gradient(spec, y.y, y.mask.grid, out.intensity),
                                      shape_of(canvas));
    return out;
}

inline CanvasEvaluation objective_grad_canvas(const forward::Measurement& y, const forward::Scene& scene,
                                              const ObjectiveSpec& spec) {
    return objective_grad_canvas(y, scene.canvas, spec);
}

/// Crops a canvas gradient to the specimen region; reference and zero regions are fixed.
inline GrayImage restrict_to_unknown(const GrayImage& canvas_grad, const forward::Scene& scene) {
    require_same_shape(canvas_grad, scene.canvas, "restrict_to_unknown");
    return crop(canvas_grad, scene.x_region);
}

/// Adjoint of restrict_to_unknown: zero canvas with `x` written into the specimen region.
inline GrayImage embed_unknown(const GrayImage& x, const forward::Scene& scene) {
    GrayImage out(scene.canvas.height(), scene.canvas.width());
    if (x.height() != scene.x_region.height || x.width() != scene.x_region.width)
        throw Error("embed_unknown: shape does not match the specimen region");
    paste(out, x, scene.x_region.row, scene.x_region.col);
    return out;
}

struct TvResult {
    double value = 0.0;
    GrayImage gradient;
};

/// Smoothed isotropic total variation sum sqrt(Dh^2 + Dv^2 + eps^2) with forward
/// differences; differences across the last row/column are zero.
inline TvResult tv_value_grad(const GrayImage& x, double eps) {
    if (!(eps > 0.0)) throw Error("tv_value_grad: eps must be > 0");
    const std::size_t h = x.height(), w = x.width();
    TvResult out{0.0, GrayImage(h, w)};
    const double eps2 = eps * eps;
    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) {
            const double dh = c + 1 < w ? x(r, c + 1) - x(r, c) : 0.0;
            const double dv = r + 1 < h ? x(r + 1, c) - x(r, c) : 0.0;
            const double t = std::sqrt(dh * dh + dv * dv + eps2);
            out.value += t;
            const double gh = dh / t, gv = dv / t;
            out.gradient(r, c) -= gh + gv;
            if (c + 1 < w) out.gradient(r, c + 1) += gh;
            if (r + 1 < h) out.gradient(r + 1, c) += gv;
        }
    }
    return out;
}

}  // namespace holopr::objective
