// holopr command-line front end: simulate, reconstruct, sweep, metrics, select-depth.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "holopr/holopr.hpp"

namespace fs = std::filesystem;
using namespace holopr;
using nlohmann::json;

namespace {

imaging::CsvTable grid_table(const GrayImage& g) {
    imaging::CsvTable t{{"row", "col", "value"}, {}};
    for (std::size_t r = 0; r < g.height(); ++r)
        for (std::size_t c = 0; c < g.width(); ++c)
            t.rows.push_back({static_cast<std::int64_t>(r), static_cast<std::int64_t>(c), g(r, c)});
    return t;
}

GrayImage grid_from_csv(const fs::path& path) {
    const auto csv = imaging::load_csv(path);
    const auto ci = csv.column("row"), cj = csv.column("col"), cv = csv.column("value");
    std::size_t h = 0, w = 0;
    for (const auto& row : csv.rows) {
        h = std::max(h, static_cast<std::size_t>(imaging::parse_real(row[ci])) + 1);
        w = std::max(w, static_cast<std::size_t>(imaging::parse_real(row[cj])) + 1);
    }
    GrayImage g(h, w);
    for (const auto& row : csv.rows)
        g(static_cast<std::size_t>(imaging::parse_real(row[ci])), static_cast<std::size_t>(imaging::parse_real(row[cj]))) =
            imaging::parse_real(row[cv]);
    validate_image(g, path.string().c_str());
    return g;
}

// A reference given as a grid CSV keeps full precision; anything else goes through load_image.
GrayImage load_reference(const fs::path& path) {
    return path.extension() == ".csv" ? grid_from_csv(path) : imaging::load_image(path);
}

json read_json(const fs::path& path) {
    try {
        return json::parse(imaging::detail::read_bytes(path));
    } catch (const json::exception& e) {
        throw Error("'" + path.string() + "': " + e.what());
    }
}

fs::path with_suffix(const fs::path& stem, const std::string& suffix) {
    fs::path p = stem;
    p += suffix;
    return p;
}

// ---------------------------------------------------------------------------

struct SimulateArgs {
    std::string image, config, out;
    std::optional<double> np, gamma, a;
    std::optional<std::uint64_t> seed;
    bool noiseless = false;
};

// Config keys: np (null = noiseless), gamma, a, layout, reference, image_size, seed.
int run_simulate(const SimulateArgs& args) {
    json cfg = args.config.empty() ? json::object() : read_json(args.config);
    optimize::detail::reject_unknown_keys(cfg, {"np", "gamma", "a", "layout", "reference", "image_size", "seed"},
                                          "simulate config");
    const fs::path base = args.config.empty() ? fs::path(".") : fs::path(args.config).parent_path();
    double np = cfg.contains("np") ? (cfg["np"].is_null() ? forward::noiseless : cfg["np"].get<double>()) : 10.0;
    double gamma = cfg.value("gamma", 2.0);
    double a = cfg.value("a", 0.0);
    std::uint64_t seed = cfg.value("seed", std::uint64_t{0});
    if (args.np) np = *args.np;
    if (args.noiseless) np = forward::noiseless;
    if (args.gamma) gamma = *args.gamma;
    if (args.a) a = *args.a;
    if (args.seed) seed = *args.seed;
    const auto layout = cfg.contains("layout") ? forward::layout_from_json(cfg["layout"]) : forward::Layout::separated();
    const auto ref_spec = cfg.contains("reference") ? harness::detail::reference_from_json(cfg["reference"], base)
                                                    : harness::ReferenceSpec{};
    const std::size_t size = cfg.contains("image_size") ? optimize::detail::get_count(cfg, "image_size", "simulate config") : 0;

    const GrayImage x = harness::load_specimen(args.image, size);
    const GrayImage r = harness::make_reference(ref_spec, x.height(), mix_seed({seed, 0x52}));
    const auto scene = forward::assemble_scene(x, r, layout);
    const auto y = forward::simulate(scene, gamma, a, np, seed);

    const fs::path stem = args.out;
    if (stem.has_parent_path()) fs::create_directories(stem.parent_path());
    forward::save_measurement(y, layout, x.height(), stem);
    const fs::path ref_path = with_suffix(stem, "_reference.csv");
    imaging::save_csv(grid_table(r), ref_path);
    imaging::save_png(x, with_suffix(stem, "_truth.png"));
    json meta = read_json(with_suffix(stem, ".json"));
    meta["reference"] = ref_path.filename().string();
    imaging::write_text(with_suffix(stem, ".json"), meta.dump(2) + "\n");
    std::cout << "wrote " << with_suffix(stem, ".json").string() << " (" << y.y.height() << "x" << y.y.width()
              << " detector, C/N = " << imaging::format_real(y.c_norm) << ")\n";
    return 0;
}

// ---------------------------------------------------------------------------

struct ReconstructArgs {
    std::string measurement, method, config, reference, truth, out;
    std::optional<std::size_t> iterations;
    std::optional<std::uint64_t> seed;
    std::optional<double> sigma2, beta;
};

int run_reconstruct(const ReconstructArgs& args) {
    const fs::path meta_path = args.measurement;
    const auto loaded = forward::load_measurement(meta_path);
    const auto& y = loaded.measurement;
    fs::path ref_path = args.reference;
    if (ref_path.empty()) {
        const json meta = read_json(meta_path);
        if (!meta.contains("reference")) throw Error("no --reference given and the sidecar names none");
        ref_path = meta_path.parent_path() / meta["reference"].get<std::string>();
    }
    const GrayImage r = load_reference(ref_path);
    const std::size_t m = loaded.specimen_size;
    const auto scene = forward::assemble_scene(GrayImage(m, m), r, loaded.layout);
    json cfg = args.config.empty() ? json::object() : read_json(args.config);
    // Without -m a HoloOpt config names its own variant.
    std::string method_name = args.method;
    if (method_name.empty())
        method_name = cfg.contains("variant") && cfg["variant"].is_string() ? cfg["variant"].get<std::string>() : "HoloOpt-P";
    const auto method = harness::parse_method(method_name);
    if (method.kind == harness::Method::Kind::holoopt && cfg.contains("variant")) {
        const auto v = cfg["variant"].is_string() ? optimize::parse_variant(cfg["variant"].get<std::string>()) : std::nullopt;
        if (v != method.variant) throw Error("--method " + method.name() + " conflicts with the config's variant");
    }

    const fs::path out = args.out;
    fs::create_directories(out);
    GrayImage x_hat;
    json summary = {{"method", method.name()}};
    std::optional<optimize::ReconstructionResult> traced;
    switch (method.kind) {
        case harness::Method::Kind::inverse:
            x_hat = baselines::inverse_filter(y, scene);
            break;
        case harness::Method::Kind::wiener: {
            const double s2 = args.sigma2 ? *args.sigma2
                              : cfg.contains("sigma2") ? cfg["sigma2"].get<double>()
                                                       : baselines::default_wiener_sigma2(y, scene);
            x_hat = baselines::wiener_filter(y, scene, s2);
            summary["sigma2"] = s2;
            break;
        }
        case harness::Method::Kind::hio: {
            auto opts = harness::detail::method_options_from_json(method, cfg);
            if (args.iterations) opts.hio.iterations = *args.iterations;
            if (args.beta) opts.hio.beta = *args.beta;
            opts.hio.seed = args.seed.value_or(y.seed);
            traced = baselines::hio_holo(y, scene, opts.hio);
            break;
        }
        case harness::Method::Kind::holoopt: {
            if (!cfg.contains("variant")) cfg["variant"] = method.name();
            if (args.iterations) cfg["iterations"] = *args.iterations;
            if (args.seed) cfg["seed"] = *args.seed;
            if (optimize::uses_decoder(method.variant) && !cfg.contains("decoder"))
                cfg["decoder"] = {{"depth", 2}, {"channels", 64}};
            if (optimize::uses_decoder(method.variant) && !cfg.contains("lr")) cfg["lr"] = 0.01;
            traced = optimize::reconstruct(y, scene, optimize::run_config_from_json(cfg));
            break;
        }
    }
    if (traced) {
        x_hat = traced->x_hat;
        imaging::save_csv(optimize::trace_table(*traced), out / "trace.csv");
        summary["best_iteration"] = traced->best_iteration;
        summary["seed"] = traced->seed;
    }
    const double residual = optimize::residual_error(y, x_hat, scene);
    summary["residual"] = residual;
    imaging::save_csv(grid_table(x_hat), out / "reconstruction.csv");
    imaging::save_png(x_hat, out / "reconstruction.png");
    imaging::save_png(imaging::percentile_rescale(x_hat), out / "reconstruction_display.png");
    if (!args.truth.empty()) {
        const GrayImage truth = imaging::load_image(args.truth);
        summary["relative_mse"] = metrics::relative_mse(x_hat, truth);
        summary["ssim"] = metrics::ssim(x_hat, truth);
    }
    imaging::write_text(out / "summary.json", summary.dump(2) + "\n");
    std::cout << method.name() << ": residual=" << imaging::format_real(residual);
    if (summary.contains("ssim"))
        std::cout << " relative_mse=" << imaging::format_real(summary["relative_mse"].get<double>())
                  << " ssim=" << imaging::format_real(summary["ssim"].get<double>());
    std::cout << "\n";
    return 0;
}

// ---------------------------------------------------------------------------

struct SweepArgs {
    std::string spec, out;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> workers;
};

harness::SweepSpec resolve_spec(const SweepArgs& args) {
    auto spec = harness::load_sweep_spec(args.spec);
    if (args.seed) spec.master_seed = *args.seed;
    spec.workers = args.workers.value_or(harness::workers_from_env(spec.workers));
    return spec;
}

int run_select_depth(const harness::SweepSpec& spec, const fs::path& out) {
    if (spec.kind != harness::SweepKind::depth_selection) throw Error("select-depth: spec kind must be depth_selection");
    const auto rows = harness::run_depth_selection(spec);
    fs::create_directories(out);
    imaging::save_csv(harness::depth_table(rows), out / "depth_selection.csv");
    const auto by_fid = harness::argmin_depth(rows, &harness::DepthRow::fid);
    const auto by_mse = harness::argmin_depth(rows, &harness::DepthRow::mean_relative_mse);
    std::cout << "selected depth (min FID): " << by_fid << "\nmin-MSE depth: " << by_mse << "\n";
    return 0;
}

int run_sweep_cmd(const SweepArgs& args) {
    const auto spec = resolve_spec(args);
    if (spec.kind == harness::SweepKind::depth_selection) return run_select_depth(spec, args.out);
    const auto result = harness::run_sweep(spec);
    harness::write_sweep_outputs(spec, result, args.out);
    std::cout << result.records.size() << " records, " << result.skipped.size() << " skipped -> " << args.out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------

std::vector<metrics::FeatureVector> feature_set(const fs::path& path) {
    std::vector<metrics::FeatureVector> out;
    if (path.extension() == ".csv") {
        for (auto& nf : metrics::load_feature_csv(path)) out.push_back(std::move(nf.features));
        return out;
    }
    for (const auto& p : harness::detail::expand_images(json::array({path.string()}), ".", "fid"))
        out.push_back(metrics::extract_features(imaging::load_image(p)));
    return out;
}

struct MetricsArgs {
    std::vector<std::string> images;
    std::vector<std::string> fid;
};

int run_metrics(const MetricsArgs& args) {
    if (!args.fid.empty()) {
        const auto a = metrics::gaussian_stats(feature_set(args.fid[0]));
        const auto b = metrics::gaussian_stats(feature_set(args.fid[1]));
        std::cout << "fid=" << imaging::format_real(metrics::frechet_distance(a, b)) << "\n";
        return 0;
    }
    if (args.images.size() != 2) throw Error("metrics: expected two images (reconstruction, ground truth)");
    const GrayImage a = imaging::load_image(args.images[0]);
    const GrayImage b = imaging::load_image(args.images[1]);
    std::cout << "relative_mse=" << imaging::format_real(metrics::relative_mse(a, b)) << "\n"
              << "ssim=" << imaging::format_real(metrics::ssim(a, b)) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Holographic phase retrieval: simulation, reconstruction and experiment sweeps"};
    app.require_subcommand(1);

    SimulateArgs sim;
    auto* simulate = app.add_subcommand("simulate", "Simulate a measurement from an image");
    simulate->add_option("image", sim.image, "Specimen image (PNG or PGM)")->required()->check(CLI::ExistingFile);
    simulate->add_option("-c,--config", sim.config, "Measurement config JSON")->check(CLI::ExistingFile);
    simulate->add_option("-o,--out", sim.out, "Output stem (writes <stem>.json, <stem>.csv, ...)")->required();
    simulate->add_option("--np", sim.np, "Photons per pixel");
    simulate->add_flag("--noiseless", sim.noiseless, "Skip Poisson sampling");
    simulate->add_option("--gamma", sim.gamma, "Oversampling factor");
    simulate->add_option("--beamstop", sim.a, "Beamstop area fraction");
    simulate->add_option("--seed", sim.seed, "Noise seed");

    ReconstructArgs rec;
    auto* reconstruct = app.add_subcommand("reconstruct", "Reconstruct a specimen from a measurement");
    reconstruct->add_option("measurement", rec.measurement, "Measurement sidecar JSON")
        ->required()
        ->check(CLI::ExistingFile);
    reconstruct->add_option("-m,--method", rec.method,
                            "HoloOpt-P|S|P-TV|S-TV|P-DD|P-DD-TV, inverse, wiener or HIO-Holo "
                            "(default: the config's variant, else HoloOpt-P)");
    reconstruct->add_option("-c,--config", rec.config, "Method config JSON")->check(CLI::ExistingFile);
    reconstruct->add_option("-r,--reference", rec.reference, "Reference (grid CSV or image)")
        ->check(CLI::ExistingFile);
    reconstruct->add_option("-t,--truth", rec.truth, "Ground truth image for metrics")->check(CLI::ExistingFile);
    reconstruct->add_option("-o,--out", rec.out, "Output directory")->required();
    reconstruct->add_option("--iterations", rec.iterations, "Iteration count");
    reconstruct->add_option("--seed", rec.seed, "Initialization seed");
    reconstruct->add_option("--sigma2", rec.sigma2, "Wiener noise power");
    reconstruct->add_option("--beta", rec.beta, "HIO relaxation");

    SweepArgs sw;
    auto* sweep = app.add_subcommand("sweep", "Run a parameter sweep from a JSON spec");
    sweep->add_option("spec", sw.spec, "Sweep spec JSON")->required()->check(CLI::ExistingFile);
    sweep->add_option("-o,--out", sw.out, "Output directory")->required();
    sweep->add_option("--seed", sw.seed, "Override master_seed");
    sweep->add_option("-j,--workers", sw.workers, "Worker threads (default: HOLOPR_WORKERS or spec)");

    SweepArgs sd;
    auto* select = app.add_subcommand("select-depth", "Pick the decoder depth by Frechet distance to a prior set");
    select->add_option("spec", sd.spec, "Depth-selection spec JSON")->required()->check(CLI::ExistingFile);
    select->add_option("-o,--out", sd.out, "Output directory")->required();
    select->add_option("--seed", sd.seed, "Override master_seed");
    select->add_option("-j,--workers", sd.workers, "Worker threads");

    MetricsArgs met;
    auto* metrics_cmd = app.add_subcommand("metrics", "Compare two images, or two image sets by FID");
    metrics_cmd->add_option("images", met.images, "Reconstruction and ground truth")->check(CLI::ExistingFile);
    metrics_cmd->add_option("--fid", met.fid, "Two image directories or feature CSVs")
        ->expected(2)
        ->check(CLI::ExistingPath);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*simulate) return run_simulate(sim);
        if (*reconstruct) return run_reconstruct(rec);
        if (*sweep) return run_sweep_cmd(sw);
        if (*select) return run_select_depth(resolve_spec(sd), sd.out);
        if (*metrics_cmd) return run_metrics(met);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
