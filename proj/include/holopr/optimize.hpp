#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "holopr/decoder.hpp"
#include "holopr/forward.hpp"
#include "holopr/grid.hpp"
#include "holopr/imaging.hpp"
#include "holopr/objective.hpp"
#include "holopr/random.hpp"

namespace holopr::optimize {

/// Adam with bias correction, applied as gradient *ascent*.
struct AdamState {
    std::vector<double> first_moment;
    std::vector<double> second_moment;
    std::uint64_t step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double lr = 0.1;

    AdamState() = default;
    AdamState(std::size_t n, double learning_rate)
        : first_moment(n, 0.0), second_moment(n, 0.0), lr(learning_rate) {}
};

inline void adam_step(AdamState& state, std::span<double> params, std::span<const double> grads) {
    if (params.size() != grads.size() || params.size() != state.first_moment.size() ||
        params.size() != state.second_moment.size())
        throw Error("adam_step: parameter, gradient and moment sizes differ");
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(state.beta1, t);
    const double c2 = 1.0 - std::pow(state.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        double& m = state.first_moment[i];
        double& v = state.second_moment[i];
        m = state.beta1 * m + (1.0 - state.beta1) * g;
        v = state.beta2 * v + (1.0 - state.beta2) * g * g;
        params[i] += state.lr * (m / c1) / (std::sqrt(v / c2) + state.epsilon);
    }
}

enum class Variant { P, S, P_TV, S_TV, P_DD, P_DD_TV };

inline constexpr std::string_view variant_name(Variant v) {
    switch (v) {
        case Variant::P: return "HoloOpt-P";
        case Variant::S: return "HoloOpt-S";
        case Variant::P_TV: return "HoloOpt-P-TV";
        case Variant::S_TV: return "HoloOpt-S-TV";
        case Variant::P_DD: return "HoloOpt-P-DD";
        case Variant::P_DD_TV: return "HoloOpt-P-DD-TV";
    }
    return "?";
}

/// Accepts the full method name ("HoloOpt-P-TV") or the short suffix ("P-TV").
inline std::optional<Variant> parse_variant(std::string_view name) {
    for (Variant v : {Variant::P, Variant::S, Variant::P_TV, Variant::S_TV, Variant::P_DD, Variant::P_DD_TV}) {
        const auto full = variant_name(v);
        if (name == full || name == full.substr(8)) return v;
    }
    return std::nullopt;
}

inline constexpr bool uses_tv(Variant v) { return v == Variant::P_TV || v == Variant::S_TV || v == Variant::P_DD_TV; }
inline constexpr bool uses_decoder(Variant v) { return v == Variant::P_DD || v == Variant::P_DD_TV; }
inline constexpr objective::Kind objective_kind(Variant v) {
    return v == Variant::S || v == Variant::S_TV ? objective::Kind::squared : objective::Kind::poisson;
}

struct RunConfig {
    Variant variant = Variant::P;
    std::size_t iterations = 1000;
    double lr = 0.1;
    double tv_weight = 0.0;
    double tv_epsilon = 1e-3;
    double log_guard = 1e-12;
    /// Required for DD variants. A zero latent size means "derive from the specimen size".
    std::optional<decoder::DecoderConfig> decoder;
    std::uint64_t seed = 0;
    std::size_t log_every = 10;

    void validate() const {
        if (iterations < 1) throw Error("run config: iterations must be >= 1");
        if (log_every < 1) throw Error("run config: log_every must be >= 1");
        if (!(lr >= 0.0) || !std::isfinite(lr)) throw Error("run config: lr must be finite and >= 0");
        if (tv_weight > 0.0 && !uses_tv(variant))
            throw Error("run config: tv_weight > 0 requires a TV variant, got " + std::string(variant_name(variant)));
        if (uses_decoder(variant) && !decoder)
            throw Error("run config: " + std::string(variant_name(variant)) + " requires a decoder configuration");
        objective::ObjectiveSpec{objective_kind(variant), tv_weight, tv_epsilon, log_guard}.validate();
    }
};

struct TracePoint {
    std::size_t iteration = 0;
    double objective = 0.0;
    double residual = 0.0;
};

struct ReconstructionResult {
    GrayImage x_hat;
    std::vector<TracePoint> trace;  // logged iterations, ascending
    std::size_t best_iteration = 0;
    std::uint64_t seed = 0;
    double elapsed_seconds = 0.0;

    double best_residual() const {
        for (const auto& p : trace)
            if (p.iteration == best_iteration) return p.residual;
        return std::numeric_limits<double>::quiet_NaN();
    }
};

/// ||y - I .* B|| / ||y|| for a precomputed model intensity.
inline double residual_from_intensity(const forward::Measurement& y, const GrayImage& model_intensity) {
    require_same_shape(y.y, model_intensity, "residual_error");
    const double norm_y = l2_norm(y.y.values());
    if (!(norm_y > 0.0)) throw Error("residual_error: measurement has zero norm");
    double acc = 0.0;
    for (std::size_t i = 0; i < y.y.size(); ++i) {
        const double d = y.y[i] - model_intensity[i] * y.mask.grid[i];
        acc += d * d;
    }
    return std::sqrt(acc) / norm_y;
}

/// Relative residual of the noiseless forward model for specimen `x_hat`.
inline double residual_error(const forward::Measurement& y, const GrayImage& x_hat, const forward::Scene& scene) {
    forward::Scene s = scene;
    forward::set_unknown(s, x_hat);
    return residual_from_intensity(y, forward::intensity(s.canvas, y.gamma));
}

/// Specimen size m whose m x 3m canvas oversamples to the measurement's detector.
inline std::size_t infer_specimen_size(const forward::Measurement& y) {
    const Shape det = y.shape();
    for (std::size_t m = 1; m <= det.height; ++m)
        if (forward::oversampled_extent(m, y.gamma) == det.height &&
            forward::oversampled_extent(3 * m, y.gamma) == det.width)
            return m;
    throw Error("measurement shape is not an oversampled m x 3m canvas for gamma " +
                imaging::format_real(y.gamma));
}

namespace detail {

inline decoder::DecoderConfig resolve_decoder(decoder::DecoderConfig cfg, std::size_t m) {
    if (cfg.latent_height == 0 || cfg.latent_width == 0) {
        const std::size_t f = std::size_t{1} << cfg.depth;
        if (m % f != 0)
            throw Error("run config: specimen size " + std::to_string(m) + " is not divisible by 2^depth");
        cfg.latent_height = cfg.latent_width = m / f;
    }
    cfg.validate();
    const Shape out = cfg.output_shape();
    if (out.height != m || out.width != m)
        throw Error("run config: decoder output " + std::to_string(out.height) + "x" + std::to_string(out.width) +
                    " does not match specimen size " + std::to_string(m));
    return cfg;
}

// Evaluates the maximized objective at the specimen currently in `scene` and
// its gradient with respect to that specimen.
struct StepEvaluation {
    double value = 0.0;
    GrayImage grad_x;
    GrayImage intensity;
};

inline StepEvaluation evaluate_step(const forward::Measurement& y, const forward::Scene& scene, const GrayImage& x,
                                    const objective::ObjectiveSpec& spec) {
    auto eval = objective::objective_grad_canvas(y, scene.canvas, spec);
    StepEvaluation out{eval.value, objective::restrict_to_unknown(eval.gradient, scene), std::move(eval.intensity)};
    if (spec.tv_weight > 0.0) {
        const auto tv = objective::tv_value_grad(x, spec.tv_epsilon);
        out.value -= spec.tv_weight * tv.value;
        for (std::size_t i = 0; i < out.grad_x.size(); ++i) out.grad_x[i] -= spec.tv_weight * tv.gradient[i];
    }
    return out;
}

}  // namespace detail

/// Gradient-ascent reconstruction of the specimen in `scene_template.x_region`.
/// Residuals are logged every `log_every` iterations (including 0) and at the
/// final iteration; the iterate with the smallest logged residual is returned.
inline ReconstructionResult reconstruct(const forward::Measurement& y, const forward::Scene& scene_template,
                                        const RunConfig& cfg) {
    cfg.validate();
    if (y.mask.observed_count() == 0) throw Error("reconstruct: beamstop mask hides every detector pixel");
    const std::size_t m = scene_template.x_region.height;
    if (forward::detector_shape(shape_of(scene_template.canvas), y.gamma) != y.shape())
        throw Error("reconstruct: measurement shape does not match the scene layout");

    const auto start = std::chrono::steady_clock::now();
    const objective::ObjectiveSpec spec{objective_kind(cfg.variant), cfg.tv_weight, cfg.tv_epsilon, cfg.log_guard};
    forward::Scene scene = scene_template;
    ReconstructionResult result;
    result.seed = cfg.seed;
    double best = std::numeric_limits<double>::infinity();

    auto log_point = [&](std::size_t t, const detail::StepEvaluation& ev, const GrayImage& x) {
        if (t % cfg.log_every != 0 && t != cfg.iterations) return;
        const double res = residual_from_intensity(y, ev.intensity);
        result.trace.push_back({t, ev.value, res});
        if (res < best) {
            best = res;
            result.best_iteration = t;
            result.x_hat = x;
        }
    };

    if (!uses_decoder(cfg.variant)) {
        Rng rng(cfg.seed);
        GrayImage x(m, m);
        for (auto& v : x) v = rng.uniform();
        AdamState adam(x.size(), cfg.lr);
        for (std::size_t t = 0;; ++t) {
            forward::set_unknown(scene, x);
            const auto ev = detail::evaluate_step(y, scene, x, spec);
            log_point(t, ev, x);
            if (t == cfg.iterations) break;
            adam_step(adam, x.values(), ev.grad_x.values());
        }
    } else {
        const auto dcfg = detail::resolve_decoder(*cfg.decoder, m);
        auto [params, z] = decoder::init_decoder(dcfg, cfg.seed);
        AdamState adam(params.values().size(), cfg.lr);
        for (std::size_t t = 0;; ++t) {
            auto [x, cache] = decoder::decoder_forward(params, z);
            forward::set_unknown(scene, x);
            const auto ev = detail::evaluate_step(y, scene, x, spec);
            log_point(t, ev, x);
            if (t == cfg.iterations) break;
            const auto grads = decoder::decoder_backward(params, z, cache, ev.grad_x);
            adam_step(adam, params.values(), grads);
        }
    }
    result.elapsed_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return result;
}

inline ReconstructionResult reconstruct(const forward::Measurement& y, const GrayImage& reference,
                                        const forward::Layout& layout, const RunConfig& cfg) {
    const std::size_t m = infer_specimen_size(y);
    return reconstruct(y, forward::assemble_scene(GrayImage(m, m), reference, layout), cfg);
}

inline imaging::CsvTable trace_table(const ReconstructionResult& result) {
    imaging::CsvTable table{{"iteration", "objective", "residual"}, {}};
    for (const auto& p : result.trace)
        table.rows.push_back({static_cast<std::int64_t>(p.iteration), p.objective, p.residual});
    return table;
}

// ---------------------------------------------------------------------------
// JSON run configuration

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j, const std::set<std::string>& allowed, const char* what) {
    if (!j.is_object()) throw Error(std::string(what) + ": expected a JSON object");
    for (const auto& [key, _] : j.items())
        if (!allowed.count(key)) throw Error(std::string(what) + ": unknown key '" + key + "'");
}

inline double get_number(const nlohmann::json& j, const char* key, const char* what) {
    if (!j[key].is_number()) throw Error(std::string(what) + ": '" + key + "' must be a number");
    return j[key].get<double>();
}

inline std::size_t get_count(const nlohmann::json& j, const char* key, const char* what) {
    if (!j[key].is_number_integer() || j[key].get<long long>() < 0)
        throw Error(std::string(what) + ": '" + key + "' must be a non-negative integer");
    return j[key].get<std::size_t>();
}

}  // namespace detail

/// Decoder block: {"depth": d, "channels": c | [c1..c_{d+1}], "latent": [h, w] (optional)}.
inline decoder::DecoderConfig decoder_config_from_json(const nlohmann::json& j) {
    detail::reject_unknown_keys(j, {"depth", "channels", "latent"}, "decoder config");
    if (!j.contains("depth") || !j.contains("channels")) throw Error("decoder config: 'depth' and 'channels' required");
    decoder::DecoderConfig cfg;
    cfg.depth = detail::get_count(j, "depth", "decoder config");
    if (j["channels"].is_array()) {
        for (const auto& c : j["channels"]) {
            if (!c.is_number_integer()) throw Error("decoder config: channels must be integers");
            cfg.channels.push_back(c.get<std::size_t>());
        }
    } else {
        cfg.channels.assign(cfg.depth + 1, detail::get_count(j, "channels", "decoder config"));
    }
    cfg.latent_height = cfg.latent_width = 0;
    if (j.contains("latent")) {
        const auto& l = j["latent"];
        if (!l.is_array() || l.size() != 2 || !l[0].is_number_integer() || !l[1].is_number_integer())
            throw Error("decoder config: 'latent' must be [height, width]");
        cfg.latent_height = l[0].get<std::size_t>();
        cfg.latent_width = l[1].get<std::size_t>();
    }
    return cfg;
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
    constexpr const char* what = "run config";
    detail::reject_unknown_keys(
        j, {"variant", "iterations", "lr", "tv_weight", "tv_epsilon", "log_guard", "decoder", "seed", "log_every"},
        what);
    RunConfig cfg;
    if (j.contains("variant")) {
        if (!j["variant"].is_string()) throw Error("run config: 'variant' must be a string");
        const auto v = parse_variant(j["variant"].get<std::string>());
        if (!v) throw Error("run config: unknown variant '" + j["variant"].get<std::string>() + "'");
        cfg.variant = *v;
    }
    if (j.contains("iterations")) cfg.iterations = detail::get_count(j, "iterations", what);
    if (j.contains("lr")) cfg.lr = detail::get_number(j, "lr", what);
    if (j.contains("tv_weight")) cfg.tv_weight = detail::get_number(j, "tv_weight", what);
    if (j.contains("tv_epsilon")) cfg.tv_epsilon = detail::get_number(j, "tv_epsilon", what);
    if (j.contains("log_guard")) cfg.log_guard = detail::get_number(j, "log_guard", what);
    if (j.contains("seed")) {
        if (!j["seed"].is_number_unsigned() && !j["seed"].is_number_integer())
            throw Error("run config: 'seed' must be an integer");
        cfg.seed = j["seed"].get<std::uint64_t>();
    }
    if (j.contains("log_every")) cfg.log_every = detail::get_count(j, "log_every", what);
    if (j.contains("decoder")) cfg.decoder = decoder_config_from_json(j["decoder"]);
    cfg.validate();
    return cfg;
}

}  // namespace holopr::optimize
