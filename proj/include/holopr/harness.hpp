#pragma once

// Experiment runners: parameter sweeps over photon count, beamstop area,
// reference separation and oversampling, plus FID-based decoder depth selection.
//
// Every (image, swept value, trial) cell gets a child seed
//     seed = mix_seed({master_seed, image index, value index, trial})
// used for the Poisson frame; methods are initialized from mix_seed({seed, 1}).
// Cells run on a worker pool and land in pre-allocated slots, so output order
// (image, value, trial, method as listed) never depends on scheduling.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "holopr/baselines.hpp"
#include "holopr/decoder.hpp"
#include "holopr/forward.hpp"
#include "holopr/grid.hpp"
#include "holopr/imaging.hpp"
#include "holopr/metrics.hpp"
#include "holopr/optimize.hpp"
#include "holopr/random.hpp"

namespace holopr::harness {

using json = nlohmann::json;

enum class SweepKind { noise, beamstop, separation, oversampling, depth_selection };

inline std::string_view sweep_kind_name(SweepKind k) {
    switch (k) {
        case SweepKind::noise: return "noise";
        case SweepKind::beamstop: return "beamstop";
        case SweepKind::separation: return "separation";
        case SweepKind::oversampling: return "oversampling";
        case SweepKind::depth_selection: return "depth_selection";
    }
    return "?";
}

inline SweepKind parse_sweep_kind(const std::string& s) {
    for (auto k : {SweepKind::noise, SweepKind::beamstop, SweepKind::separation, SweepKind::oversampling,
                   SweepKind::depth_selection})
        if (sweep_kind_name(k) == s) return k;
    throw Error("sweep: unknown kind '" + s + "'");
}

struct MeasurementParams {
    double np = 10.0;  // forward::noiseless for noiseless frames
    double gamma = 2.0;
    double a = 0.0;
    forward::Layout layout = forward::Layout::separated();
};

/// Known reference: i.i.d. binary pixels, a single unit pixel, or an image file.
/// `size` is the reference side as a fraction of the specimen side.
struct ReferenceSpec {
    enum class Kind { binary, delta, file };
    Kind kind = Kind::binary;
    double size = 1.0;
    std::optional<std::uint64_t> seed;
    std::filesystem::path path;
};

inline GrayImage make_reference(const ReferenceSpec& spec, std::size_t m, std::uint64_t fallback_seed) {
    if (spec.kind == ReferenceSpec::Kind::file) {
        GrayImage r = imaging::load_image(spec.path);
        const auto side = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(spec.size * m)));
        return (r.height() == side && r.width() == side) ? r : imaging::resize_bilinear(r, side, side);
    }
    if (!(spec.size > 0.0 && spec.size <= 1.0)) throw Error("reference: size must lie in (0, 1]");
    const auto side = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(spec.size * m)));
    GrayImage r(side, side);
    if (spec.kind == ReferenceSpec::Kind::delta) {
        r(0, 0) = 1.0;
        return r;
    }
    Rng rng(spec.seed.value_or(fallback_seed));
    for (auto& v : r) v = rng.coin() ? 1.0 : 0.0;
    return r;
}

/// Method identifiers: the six HoloOpt variants plus "inverse", "wiener" and "HIO-Holo".
struct Method {
    enum class Kind { holoopt, inverse, wiener, hio };
    Kind kind = Kind::holoopt;
    optimize::Variant variant = optimize::Variant::P;

    std::string name() const {
        switch (kind) {
            case Kind::holoopt: return std::string(optimize::variant_name(variant));
            case Kind::inverse: return "inverse";
            case Kind::wiener: return "wiener";
            case Kind::hio: return "HIO-Holo";
        }
        return "?";
    }
    bool is_filter() const { return kind == Kind::inverse || kind == Kind::wiener; }
};

inline Method parse_method(const std::string& s) {
    if (s == "inverse" || s == "inverse_filter") return {Method::Kind::inverse};
    if (s == "wiener" || s == "wiener_filter") return {Method::Kind::wiener};
    if (s == "HIO-Holo" || s == "hio" || s == "hio_holo") return {Method::Kind::hio};
    if (auto v = optimize::parse_variant(s)) return {Method::Kind::holoopt, *v};
    throw Error("unknown method '" + s + "'");
}

/// Per-method overrides: run config fields for HoloOpt, {iterations, beta, log_every}
/// for HIO-Holo, {sigma2} for Wiener.
struct MethodOptions {
    json holoopt = json::object();
    baselines::HioConfig hio;
    std::optional<double> wiener_sigma2;
};

// Decoder hyperparameters and step counts keyed by photon count.
struct ScheduleEntry {
    std::size_t iterations = 0;
    std::size_t depth = 2;
    std::size_t channels = 128;
};

/// Deep decoder depth / channels / optimizer steps per photon count.
inline const std::map<double, ScheduleEntry>& standard_schedule() {
    static const std::map<double, ScheduleEntry> table = {
        {1000.0, {10000, 2, 128}}, {100.0, {10000, 3, 128}}, {10.0, {5000, 2, 128}},
        {1.0, {2500, 1, 128}},     {0.1, {1250, 1, 128}},
    };
    return table;
}

struct SweepSpec {
    SweepKind kind = SweepKind::noise;
    std::vector<double> grid;
    MeasurementParams fixed;
    ReferenceSpec reference;
    std::vector<Method> methods;
    std::map<std::string, MethodOptions> options;  // keyed by Method::name()
    std::vector<std::filesystem::path> images;
    std::size_t image_size = 0;  // 0 keeps the native size
    std::size_t trials = 1;
    std::uint64_t master_seed = 0;
    std::size_t iterations = 1000;  // HoloOpt default when no schedule entry applies
    std::map<double, ScheduleEntry> schedule;
    std::size_t workers = 1;
    bool write_png = true;
    // depth selection
    std::vector<std::filesystem::path> prior_images;
    std::vector<std::filesystem::path> eval_images;

    void validate() const {
        if (grid.empty()) throw Error("sweep: grid must be non-empty");
        if (trials < 1) throw Error("sweep: trials must be >= 1");
        if (kind != SweepKind::depth_selection && methods.empty()) throw Error("sweep: methods must be non-empty");
        if (kind != SweepKind::depth_selection && images.empty()) throw Error("sweep: images must be non-empty");
        if (workers < 1) throw Error("sweep: workers must be >= 1");
        for (double v : grid)
            if (!std::isfinite(v)) throw Error("sweep: grid values must be finite");
    }
};

/// Measurement parameters of one cell: the fixed ones with the swept value substituted.
inline MeasurementParams cell_params(const SweepSpec& spec, double value) {
    MeasurementParams p = spec.fixed;
    switch (spec.kind) {
        case SweepKind::noise: p.np = value; break;
        case SweepKind::beamstop: p.a = value; break;
        case SweepKind::separation: p.layout = forward::Layout::offset(value); break;
        case SweepKind::oversampling: p.gamma = value; break;
        case SweepKind::depth_selection: break;
    }
    return p;
}

inline std::uint64_t cell_seed(std::uint64_t master, std::size_t image, std::size_t value, std::size_t trial) {
    return mix_seed({master, image, value, trial});
}

inline std::optional<ScheduleEntry> schedule_for(const SweepSpec& spec, double np) {
    for (const auto& [key, entry] : spec.schedule)
        if (std::abs(key - np) <= 1e-9 * std::max(1.0, std::abs(key))) return entry;
    return std::nullopt;
}

/// Resolved HoloOpt run config for a cell: explicit per-method options win over
/// the photon-count schedule, which wins over the sweep-wide iteration default.
inline optimize::RunConfig holoopt_config(const SweepSpec& spec, const Method& method, double np,
                                          std::uint64_t seed) {
    json j = json::object();
    if (auto it = spec.options.find(method.name()); it != spec.options.end()) j = it->second.holoopt;
    const auto entry = schedule_for(spec, np);
    if (!j.contains("iterations")) j["iterations"] = entry ? entry->iterations : spec.iterations;
    if (optimize::uses_decoder(method.variant)) {
        if (!j.contains("lr")) j["lr"] = 0.01;
        if (!j.contains("decoder")) {
            const ScheduleEntry e = entry.value_or(ScheduleEntry{0, 2, 128});
            j["decoder"] = {{"depth", e.depth}, {"channels", e.channels}};
        }
    }
    j["variant"] = method.name();
    j["seed"] = seed;
    return optimize::run_config_from_json(j);
}

// ---------------------------------------------------------------------------
// Results

struct SweepRecord {
    std::string image_id;
    std::string method;
    double swept_value = 0.0;
    std::size_t trial = 0;
    std::size_t iterations = 0;  // 0 for the filters
    double relative_mse = 0.0;
    double ssim = 0.0;
    double residual = 0.0;
    double elapsed_s = 0.0;
    std::uint64_t seed = 0;
};

struct SkippedCell {
    std::string image_id;
    std::string method;
    double swept_value = 0.0;
    std::size_t trial = 0;
    std::string reason;
};

struct CellImages {
    std::string image_id;
    std::size_t value_index = 0;
    std::size_t trial = 0;
    GrayImage truth;
    std::vector<std::optional<GrayImage>> reconstructions;  // one per method, empty when skipped
};

struct SweepResult {
    std::vector<SweepRecord> records;
    std::vector<SkippedCell> skipped;
    std::vector<CellImages> cells;
};

inline std::string image_id(const std::filesystem::path& p) { return p.stem().string(); }

inline GrayImage load_specimen(const std::filesystem::path& path, std::size_t size) {
    GrayImage x = imaging::load_image(path);
    if (x.height() != x.width() && size == 0)
        throw Error("image '" + path.string() + "' is not square; set image_size to resize it");
    if (size != 0 && (x.height() != size || x.width() != size)) x = imaging::resize_bilinear(x, size, size);
    return x;
}

/// Why `method` cannot run on a cell, or nullopt if it can.
inline std::optional<std::string> inapplicable(const Method& method, const forward::Scene& scene, double gamma) {
    if (!method.is_filter()) return std::nullopt;
    if (!forward::fully_separated(scene)) return "layout " + scene.layout.name() + " violates full separation";
    if (gamma < 2.0) return "oversampling factor " + imaging::format_real(gamma) + " < 2";
    return std::nullopt;
}

namespace detail {

struct CellTask {
    std::size_t image = 0, value = 0, trial = 0;
};

struct CellOutput {
    std::vector<SweepRecord> records;
    std::vector<SkippedCell> skipped;
    CellImages images;
};

inline CellOutput run_cell(const SweepSpec& spec, const CellTask& task, const GrayImage& x,
                           const std::string& id, const GrayImage& reference) {
    CellOutput out;
    const double value = spec.grid[task.value];
    const std::uint64_t seed = cell_seed(spec.master_seed, task.image, task.value, task.trial);
    const std::uint64_t method_seed = mix_seed({seed, 1});
    out.images = {id, task.value, task.trial, x, {}};

    auto skip_all = [&](const std::string& reason) {
        for (const auto& m : spec.methods) {
            out.skipped.push_back({id, m.name(), value, task.trial, reason});
            out.images.reconstructions.emplace_back();
        }
    };

    const MeasurementParams p = cell_params(spec, value);
    forward::Scene scene;
    forward::Measurement y;
    try {
        scene = forward::assemble_scene(x, reference, p.layout);
        y = forward::simulate(scene, p.gamma, p.a, p.np, seed);
    } catch (const Error& e) {
        skip_all(std::string("measurement: ") + e.what());
        return out;
    }

    for (const auto& method : spec.methods) {
        const auto reason = inapplicable(method, scene, p.gamma);
        if (reason) {
            out.skipped.push_back({id, method.name(), value, task.trial, *reason});
            out.images.reconstructions.emplace_back();
            continue;
        }
        const MethodOptions* opts = nullptr;
        if (auto it = spec.options.find(method.name()); it != spec.options.end()) opts = &it->second;
        try {
            const auto start = std::chrono::steady_clock::now();
            GrayImage x_hat;
            std::size_t iterations = 0;
            switch (method.kind) {
                case Method::Kind::inverse: x_hat = baselines::inverse_filter(y, scene); break;
                case Method::Kind::wiener:
                    x_hat = opts && opts->wiener_sigma2 ? baselines::wiener_filter(y, scene, *opts->wiener_sigma2)
                                                        : baselines::wiener_filter(y, scene);
                    break;
                case Method::Kind::hio: {
                    baselines::HioConfig cfg = opts ? opts->hio : baselines::HioConfig{};
                    cfg.seed = method_seed;
                    iterations = cfg.iterations;
                    x_hat = baselines::hio_holo(y, scene, cfg).x_hat;
                    break;
                }
                case Method::Kind::holoopt: {
                    const auto cfg = holoopt_config(spec, method, p.np, method_seed);
                    iterations = cfg.iterations;
                    x_hat = optimize::reconstruct(y, scene, cfg).x_hat;
                    break;
                }
            }
            const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            SweepRecord r{id,
                          method.name(),
                          value,
                          task.trial,
                          iterations,
                          metrics::relative_mse(x_hat, x),
                          metrics::ssim(x_hat, x),
                          optimize::residual_error(y, x_hat, scene),
                          elapsed,
                          seed};
            if (!std::isfinite(r.relative_mse) || !std::isfinite(r.ssim) || !std::isfinite(r.residual))
                throw Error("non-finite metric");
            out.records.push_back(std::move(r));
            out.images.reconstructions.emplace_back(std::move(x_hat));
        } catch (const Error& e) {
            out.skipped.push_back({id, method.name(), value, task.trial, e.what()});
            out.images.reconstructions.emplace_back();
        }
    }
    return out;
}

}  // namespace detail

/// Worker count from HOLOPR_WORKERS, or `fallback` when unset or invalid.
inline std::size_t workers_from_env(std::size_t fallback) {
    if (const char* env = std::getenv("HOLOPR_WORKERS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && v >= 1) return static_cast<std::size_t>(v);
    }
    return fallback;
}

/// Runs `count` independent jobs on up to `workers` threads.
inline void parallel_for(std::size_t count, std::size_t workers, const std::function<void(std::size_t)>& job) {
    workers = std::max<std::size_t>(1, std::min(workers, count));
    if (workers == 1) {
        for (std::size_t i = 0; i < count; ++i) job(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = next++; i < count; i = next++) job(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

inline SweepResult run_sweep(const SweepSpec& spec) {
    spec.validate();
    if (spec.kind == SweepKind::depth_selection) throw Error("run_sweep: use run_depth_selection for depth sweeps");
    std::vector<GrayImage> images;
    std::vector<std::string> ids;
    for (const auto& path : spec.images) {
        images.push_back(load_specimen(path, spec.image_size));
        ids.push_back(image_id(path));
    }
    // One reference per image size, shared by all cells of that image.
    std::vector<GrayImage> references;
    for (const auto& x : images)
        references.push_back(make_reference(spec.reference, x.height(), mix_seed({spec.master_seed, 0x52})));

    std::vector<detail::CellTask> tasks;
    for (std::size_t i = 0; i < images.size(); ++i)
        for (std::size_t v = 0; v < spec.grid.size(); ++v)
            for (std::size_t t = 0; t < spec.trials; ++t) tasks.push_back({i, v, t});

    std::vector<detail::CellOutput> outputs(tasks.size());
    parallel_for(tasks.size(), spec.workers, [&](std::size_t k) {
        const auto& task = tasks[k];
        outputs[k] = detail::run_cell(spec, task, images[task.image], ids[task.image], references[task.image]);
    });

    SweepResult result;
    for (auto& o : outputs) {
        for (auto& r : o.records) result.records.push_back(std::move(r));
        for (auto& s : o.skipped) result.skipped.push_back(std::move(s));
        result.cells.push_back(std::move(o.images));
    }
    return result;
}

// ---------------------------------------------------------------------------
// Emission

inline imaging::CsvTable records_table(const SweepResult& r) {
    imaging::CsvTable t{{"image_id", "method", "swept_value", "trial", "iterations", "relative_mse", "ssim",
                         "residual", "seed"},
                        {}};
    for (const auto& rec : r.records)
        t.add_row({rec.image_id, rec.method, rec.swept_value, static_cast<std::int64_t>(rec.trial),
                   static_cast<std::int64_t>(rec.iterations), rec.relative_mse, rec.ssim, rec.residual,
                   std::to_string(rec.seed)});
    return t;
}

/// Wall-clock times live apart from the records so those stay byte-reproducible.
inline imaging::CsvTable timings_table(const SweepResult& r) {
    imaging::CsvTable t{{"image_id", "method", "swept_value", "trial", "elapsed_s"}, {}};
    for (const auto& rec : r.records)
        t.add_row({rec.image_id, rec.method, rec.swept_value, static_cast<std::int64_t>(rec.trial), rec.elapsed_s});
    return t;
}

inline imaging::CsvTable skipped_table(const SweepResult& r) {
    imaging::CsvTable t{{"image_id", "method", "swept_value", "trial", "reason"}, {}};
    for (const auto& s : r.skipped)
        t.add_row({s.image_id, s.method, s.swept_value, static_cast<std::int64_t>(s.trial), s.reason});
    return t;
}

struct Aggregate {
    std::string method;
    double swept_value = 0.0;
    std::size_t count = 0;
    double mse_mean = 0.0, mse_std = 0.0;
    double ssim_mean = 0.0, ssim_std = 0.0;
    double residual_mean = 0.0, residual_std = 0.0;
};

namespace detail {

inline std::pair<double, double> mean_std(const std::vector<double>& v) {
    const double n = static_cast<double>(v.size());
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= n;
    if (v.size() < 2) return {mean, 0.0};
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return {mean, std::sqrt(ss / (n - 1.0))};
}

}  // namespace detail

/// Mean and sample standard deviation over images and trials, per (method, value),
/// in method-then-grid order.
inline std::vector<Aggregate> aggregate(const SweepSpec& spec, const SweepResult& r) {
    std::vector<Aggregate> out;
    for (const auto& m : spec.methods)
        for (double v : spec.grid) {
            std::vector<double> mse, ss, res;
            for (const auto& rec : r.records)
                if (rec.method == m.name() && rec.swept_value == v) {
                    mse.push_back(rec.relative_mse);
                    ss.push_back(rec.ssim);
                    res.push_back(rec.residual);
                }
            if (mse.empty()) continue;
            Aggregate a{m.name(), v, mse.size()};
            std::tie(a.mse_mean, a.mse_std) = detail::mean_std(mse);
            std::tie(a.ssim_mean, a.ssim_std) = detail::mean_std(ss);
            std::tie(a.residual_mean, a.residual_std) = detail::mean_std(res);
            out.push_back(a);
        }
    return out;
}

inline imaging::CsvTable aggregates_table(const std::vector<Aggregate>& aggs) {
    imaging::CsvTable t{{"method", "swept_value", "count", "relative_mse_mean", "relative_mse_std", "ssim_mean",
                         "ssim_std", "residual_mean", "residual_std"},
                        {}};
    for (const auto& a : aggs)
        t.add_row({a.method, a.swept_value, static_cast<std::int64_t>(a.count), a.mse_mean, a.mse_std, a.ssim_mean,
                   a.ssim_std, a.residual_mean, a.residual_std});
    return t;
}

/// Ground truth followed by each method's reconstruction, side by side with a
/// 2-pixel gap; every panel is percentile-rescaled on its own, skipped methods stay blank.
inline GrayImage cell_grid(const CellImages& cell) {
    const std::size_t h = cell.truth.height(), w = cell.truth.width(), gap = 2;
    const std::size_t panels = 1 + cell.reconstructions.size();
    GrayImage out(h, panels * w + (panels - 1) * gap, 1.0);
    paste(out, imaging::percentile_rescale(cell.truth), 0, 0);
    for (std::size_t k = 0; k < cell.reconstructions.size(); ++k) {
        const std::size_t col = (k + 1) * (w + gap);
        if (cell.reconstructions[k])
            paste(out, imaging::percentile_rescale(*cell.reconstructions[k]), 0, col);
        else
            paste(out, GrayImage(h, w, 0.0), 0, col);
    }
    return out;
}

/// Writes records.csv, aggregates.csv, skipped.csv, timings.csv and (optionally)
/// png/<image>_v<value index>_t<trial>.png into `dir`.
inline void write_sweep_outputs(const SweepSpec& spec, const SweepResult& r, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    imaging::save_csv(records_table(r), dir / "records.csv");
    imaging::save_csv(aggregates_table(aggregate(spec, r)), dir / "aggregates.csv");
    imaging::save_csv(skipped_table(r), dir / "skipped.csv");
    imaging::save_csv(timings_table(r), dir / "timings.csv");
    if (!spec.write_png) return;
    std::filesystem::create_directories(dir / "png");
    for (const auto& cell : r.cells)
        imaging::save_png(cell_grid(cell), dir / "png" /
                                               (cell.image_id + "_v" + std::to_string(cell.value_index) + "_t" +
                                                std::to_string(cell.trial) + ".png"));
}

// ---------------------------------------------------------------------------
// Depth selection

struct DepthRow {
    std::optional<std::size_t> depth;  // nullopt: ground-truth floor row
    double fid = 0.0;
    double mean_relative_mse = 0.0;
};

/// Reconstructs eval image `index` (ground truth `truth`) with a decoder of `depth`.
using DepthReconstructor =
    std::function<GrayImage(const GrayImage& truth, std::size_t index, std::size_t depth)>;

/// HoloOpt-P-DD on a simulated frame of each eval image under the sweep's fixed parameters.
inline DepthReconstructor holoopt_dd_reconstructor(const SweepSpec& spec) {
    return [&spec](const GrayImage& truth, std::size_t index, std::size_t depth) {
        const GrayImage r = make_reference(spec.reference, truth.height(), mix_seed({spec.master_seed, 0x52}));
        const auto scene = forward::assemble_scene(truth, r, spec.fixed.layout);
        const std::uint64_t seed = cell_seed(spec.master_seed, index, 0, 0);
        const auto y = forward::simulate(scene, spec.fixed.gamma, spec.fixed.a, spec.fixed.np, seed);
        const Method method{Method::Kind::holoopt, optimize::Variant::P_DD};
        optimize::RunConfig cfg = holoopt_config(spec, method, spec.fixed.np, mix_seed({seed, 1}));
        cfg.decoder->depth = depth;
        if (cfg.decoder->channels.size() != depth + 1)
            cfg.decoder->channels.assign(depth + 1, cfg.decoder->channels.front());
        cfg.decoder->latent_height = cfg.decoder->latent_width = 0;
        return optimize::reconstruct(y, scene, cfg).x_hat;
    };
}

/// FID of eval-set reconstructions against the prior set's ground truth, per depth,
/// followed by a floor row comparing the eval ground truth itself.
inline std::vector<DepthRow> run_depth_selection(const std::vector<GrayImage>& prior,
                                                 const std::vector<GrayImage>& eval,
                                                 const std::vector<std::size_t>& depths,
                                                 const DepthReconstructor& reconstruct_fn,
                                                 const metrics::FeatureExtractor& extractor =
                                                     metrics::pooled_pixel_features,
                                                 std::size_t workers = 1) {
    if (prior.size() < 2 || eval.size() < 2)
        throw Error("depth selection: prior and eval sets need at least two images each");
    if (depths.empty()) throw Error("depth selection: depth grid must be non-empty");
    auto stats_of = [&](const std::vector<GrayImage>& imgs) {
        std::vector<metrics::FeatureVector> f;
        for (const auto& x : imgs) f.push_back(metrics::extract_features(x, extractor));
        return metrics::gaussian_stats(f);
    };
    const auto prior_stats = stats_of(prior);

    std::vector<GrayImage> recon(depths.size() * eval.size());
    parallel_for(recon.size(), workers, [&](std::size_t k) {
        const std::size_t d = k / eval.size(), i = k % eval.size();
        recon[k] = reconstruct_fn(eval[i], i, depths[d]);
    });

    std::vector<DepthRow> rows;
    for (std::size_t d = 0; d < depths.size(); ++d) {
        std::vector<GrayImage> set(recon.begin() + d * eval.size(), recon.begin() + (d + 1) * eval.size());
        double mse = 0.0;
        for (std::size_t i = 0; i < eval.size(); ++i) mse += metrics::relative_mse(set[i], eval[i]);
        rows.push_back({depths[d], metrics::frechet_distance(stats_of(set), prior_stats),
                        mse / static_cast<double>(eval.size())});
    }
    rows.push_back({std::nullopt, metrics::frechet_distance(stats_of(eval), prior_stats), 0.0});
    return rows;
}

inline void require_disjoint(const std::vector<std::filesystem::path>& a, const std::vector<std::filesystem::path>& b) {
    for (const auto& p : a)
        for (const auto& q : b)
            if (std::filesystem::weakly_canonical(p) == std::filesystem::weakly_canonical(q))
                throw Error("depth selection: '" + p.string() + "' is in both prior and eval sets");
}

inline std::vector<DepthRow> run_depth_selection(const SweepSpec& spec) {
    spec.validate();
    require_disjoint(spec.prior_images, spec.eval_images);
    std::vector<GrayImage> prior, eval;
    for (const auto& p : spec.prior_images) prior.push_back(load_specimen(p, spec.image_size));
    for (const auto& p : spec.eval_images) eval.push_back(load_specimen(p, spec.image_size));
    std::vector<std::size_t> depths;
    for (double v : spec.grid) {
        if (!(v >= 1.0) || v != std::floor(v)) throw Error("depth selection: depths must be positive integers");
        depths.push_back(static_cast<std::size_t>(v));
    }
    return run_depth_selection(prior, eval, depths, holoopt_dd_reconstructor(spec), metrics::pooled_pixel_features,
                               spec.workers);
}

inline imaging::CsvTable depth_table(const std::vector<DepthRow>& rows) {
    imaging::CsvTable t{{"depth", "fid", "mean_relative_mse"}, {}};
    for (const auto& r : rows)
        t.add_row({r.depth ? std::to_string(*r.depth) : std::string("truth"), r.fid, r.mean_relative_mse});
    return t;
}

/// Depth with the smallest value of `key` among non-floor rows.
inline std::size_t argmin_depth(const std::vector<DepthRow>& rows, double DepthRow::*key) {
    const DepthRow* best = nullptr;
    for (const auto& r : rows)
        if (r.depth && (!best || r.*key < best->*key)) best = &r;
    if (!best) throw Error("argmin_depth: no depth rows");
    return *best->depth;
}

// ---------------------------------------------------------------------------
// JSON

namespace detail {

inline std::vector<std::filesystem::path> expand_images(const json& j, const std::filesystem::path& base,
                                                        const char* key) {
    if (!j.is_array()) throw Error(std::string("sweep: '") + key + "' must be an array of paths");
    std::vector<std::filesystem::path> out;
    for (const auto& item : j) {
        if (!item.is_string()) throw Error(std::string("sweep: '") + key + "' entries must be strings");
        std::filesystem::path p = item.get<std::string>();
        if (p.is_relative()) p = base / p;
        if (std::filesystem::is_directory(p)) {
            std::vector<std::filesystem::path> found;
            for (const auto& e : std::filesystem::directory_iterator(p)) {
                const auto ext = e.path().extension().string();
                if (e.is_regular_file() && (ext == ".png" || ext == ".pgm")) found.push_back(e.path());
            }
            std::sort(found.begin(), found.end());
            out.insert(out.end(), found.begin(), found.end());
        } else {
            if (!std::filesystem::exists(p)) throw Error("sweep: image '" + p.string() + "' not found");
            out.push_back(p);
        }
    }
    return out;
}

inline double np_from_json(const json& v) {
    if (v.is_null()) return forward::noiseless;
    if (v.is_string() && v.get<std::string>() == "inf") return forward::noiseless;
    if (!v.is_number() || !(v.get<double>() > 0.0)) throw Error("sweep: 'np' must be a positive number or null");
    return v.get<double>();
}

inline MethodOptions method_options_from_json(const Method& m, const json& j) {
    if (!j.is_object()) throw Error("sweep: options for " + m.name() + " must be an object");
    MethodOptions o;
    switch (m.kind) {
        case Method::Kind::holoopt:
            optimize::detail::reject_unknown_keys(j, {"iterations", "lr", "tv_weight", "tv_epsilon", "log_guard",
                                                      "decoder", "log_every"},
                                                  "method options");
            o.holoopt = j;
            break;
        case Method::Kind::hio:
            optimize::detail::reject_unknown_keys(j, {"iterations", "beta", "log_every"}, "HIO-Holo options");
            if (j.contains("iterations")) o.hio.iterations = optimize::detail::get_count(j, "iterations", "HIO-Holo");
            if (j.contains("beta")) o.hio.beta = optimize::detail::get_number(j, "beta", "HIO-Holo");
            if (j.contains("log_every")) o.hio.log_every = optimize::detail::get_count(j, "log_every", "HIO-Holo");
            o.hio.validate();
            break;
        case Method::Kind::wiener:
            optimize::detail::reject_unknown_keys(j, {"sigma2"}, "wiener options");
            if (j.contains("sigma2")) {
                o.wiener_sigma2 = optimize::detail::get_number(j, "sigma2", "wiener");
                if (!(*o.wiener_sigma2 >= 0.0)) throw Error("wiener options: sigma2 must be >= 0");
            }
            break;
        case Method::Kind::inverse:
            optimize::detail::reject_unknown_keys(j, {}, "inverse options");
            break;
    }
    return o;
}

inline ReferenceSpec reference_from_json(const json& j, const std::filesystem::path& base) {
    optimize::detail::reject_unknown_keys(j, {"kind", "size", "seed", "path"}, "reference");
    ReferenceSpec r;
    if (j.contains("kind")) {
        const auto k = j["kind"].is_string() ? j["kind"].get<std::string>() : std::string();
        if (k == "binary") r.kind = ReferenceSpec::Kind::binary;
        else if (k == "delta") r.kind = ReferenceSpec::Kind::delta;
        else if (k == "file") r.kind = ReferenceSpec::Kind::file;
        else throw Error("reference: kind must be binary, delta or file");
    }
    if (j.contains("size")) r.size = optimize::detail::get_number(j, "size", "reference");
    if (j.contains("seed")) {
        if (!j["seed"].is_number_integer()) throw Error("reference: 'seed' must be an integer");
        r.seed = j["seed"].get<std::uint64_t>();
    }
    if (j.contains("path")) {
        if (!j["path"].is_string()) throw Error("reference: 'path' must be a string");
        r.path = j["path"].get<std::string>();
        if (r.path.is_relative()) r.path = base / r.path;
    }
    if (r.kind == ReferenceSpec::Kind::file && r.path.empty()) throw Error("reference: kind 'file' requires 'path'");
    return r;
}

}  // namespace detail

/// Parses and validates a sweep document; relative paths resolve against `base`.
inline SweepSpec sweep_spec_from_json(const json& j, const std::filesystem::path& base = ".") {
    if (!j.is_object()) throw Error("sweep: document must be a JSON object");
    optimize::detail::reject_unknown_keys(
        j, {"kind", "grid", "fixed", "reference", "methods", "method_options", "images", "image_size", "trials",
            "master_seed", "iterations", "schedule", "workers", "write_png", "prior_images", "eval_images"},
        "sweep");
    SweepSpec s;
    if (!j.contains("kind") || !j["kind"].is_string()) throw Error("sweep: missing string 'kind'");
    s.kind = parse_sweep_kind(j["kind"].get<std::string>());
    if (!j.contains("grid") || !j["grid"].is_array()) throw Error("sweep: missing array 'grid'");
    for (const auto& v : j["grid"]) {
        if (s.kind == SweepKind::noise) {
            s.grid.push_back(detail::np_from_json(v));
            if (std::isinf(s.grid.back())) throw Error("sweep: noise grid values must be finite photon counts");
        } else {
            if (!v.is_number()) throw Error("sweep: grid values must be numbers");
            s.grid.push_back(v.get<double>());
        }
    }
    if (j.contains("fixed")) {
        const auto& f = j["fixed"];
        optimize::detail::reject_unknown_keys(f, {"np", "gamma", "a", "layout"}, "sweep.fixed");
        if (f.contains("np")) s.fixed.np = detail::np_from_json(f["np"]);
        if (f.contains("gamma")) s.fixed.gamma = optimize::detail::get_number(f, "gamma", "sweep.fixed");
        if (f.contains("a")) s.fixed.a = optimize::detail::get_number(f, "a", "sweep.fixed");
        if (f.contains("layout")) s.fixed.layout = forward::layout_from_json(f["layout"]);
    }
    if (j.contains("reference")) s.reference = detail::reference_from_json(j["reference"], base);
    if (j.contains("methods")) {
        if (!j["methods"].is_array()) throw Error("sweep: 'methods' must be an array");
        for (const auto& m : j["methods"]) {
            if (!m.is_string()) throw Error("sweep: method names must be strings");
            s.methods.push_back(parse_method(m.get<std::string>()));
        }
    }
    if (j.contains("method_options")) {
        if (!j["method_options"].is_object()) throw Error("sweep: 'method_options' must be an object");
        for (const auto& [name, opts] : j["method_options"].items()) {
            const Method m = parse_method(name);
            s.options[m.name()] = detail::method_options_from_json(m, opts);
        }
    }
    if (j.contains("images")) s.images = detail::expand_images(j["images"], base, "images");
    if (j.contains("prior_images")) s.prior_images = detail::expand_images(j["prior_images"], base, "prior_images");
    if (j.contains("eval_images")) s.eval_images = detail::expand_images(j["eval_images"], base, "eval_images");
    if (j.contains("image_size")) s.image_size = optimize::detail::get_count(j, "image_size", "sweep");
    if (j.contains("trials")) s.trials = optimize::detail::get_count(j, "trials", "sweep");
    if (j.contains("master_seed")) {
        if (!j["master_seed"].is_number_integer()) throw Error("sweep: 'master_seed' must be an integer");
        s.master_seed = j["master_seed"].get<std::uint64_t>();
    }
    if (j.contains("iterations")) s.iterations = optimize::detail::get_count(j, "iterations", "sweep");
    if (j.contains("schedule")) {
        const auto& sc = j["schedule"];
        if (sc.is_string() && sc.get<std::string>() == "standard") {
            s.schedule = standard_schedule();
        } else if (sc.is_object()) {
            for (const auto& [key, entry] : sc.items()) {
                double np = 0.0;
                try {
                    np = std::stod(key);
                } catch (const std::exception&) {
                    throw Error("sweep.schedule: key '" + key + "' is not a photon count");
                }
                ScheduleEntry e;
                if (entry.is_number_integer()) {
                    e.iterations = entry.get<std::size_t>();
                } else if (entry.is_object()) {
                    optimize::detail::reject_unknown_keys(entry, {"iterations", "depth", "channels"}, "sweep.schedule");
                    e.iterations = optimize::detail::get_count(entry, "iterations", "sweep.schedule");
                    if (entry.contains("depth")) e.depth = optimize::detail::get_count(entry, "depth", "sweep.schedule");
                    if (entry.contains("channels"))
                        e.channels = optimize::detail::get_count(entry, "channels", "sweep.schedule");
                } else {
                    throw Error("sweep.schedule: entries must be iteration counts or objects");
                }
                if (e.iterations < 1) throw Error("sweep.schedule: iterations must be >= 1");
                s.schedule[np] = e;
            }
        } else {
            throw Error("sweep.schedule: expected \"standard\" or an object keyed by photon count");
        }
    }
    if (j.contains("workers")) s.workers = optimize::detail::get_count(j, "workers", "sweep");
    if (j.contains("write_png")) {
        if (!j["write_png"].is_boolean()) throw Error("sweep: 'write_png' must be a boolean");
        s.write_png = j["write_png"].get<bool>();
    }
    if (s.kind == SweepKind::depth_selection && (s.prior_images.size() < 2 || s.eval_images.size() < 2))
        throw Error("depth selection: prior_images and eval_images need at least two images each");
    s.validate();
    return s;
}

inline SweepSpec load_sweep_spec(const std::filesystem::path& path) {
    json j;
    try {
        j = json::parse(imaging::detail::read_bytes(path));
    } catch (const json::exception& e) {
        throw Error("sweep '" + path.string() + "': " + e.what());
    }
    return sweep_spec_from_json(j, path.parent_path());
}

}  // namespace holopr::harness
