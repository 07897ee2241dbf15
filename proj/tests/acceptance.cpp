// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.
// Usage: acceptance [criterion ...]   (default: all)

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <set>
#include <thread>

#include "support.hpp"

using namespace holopr;
using namespace testing_support;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double median3(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
}

GrayImage camera(std::size_t m) {
    return imaging::resize_bilinear(imaging::load_image(fs::path(HOLOPR_TEST_DATA) / "camera128.png"), m, m);
}

GrayImage binary_reference(std::size_t m, double size = 1.0) {
    harness::ReferenceSpec spec;
    spec.size = size;
    return harness::make_reference(spec, m, 7);
}

double spectral_floor(const forward::Scene& s, double gamma) {
    const auto h = baselines::detail::reference_spectrum(s, gamma);
    double lo = 1e300, hi = 0.0;
    for (const auto& v : h) {
        lo = std::min(lo, std::abs(v));
        hi = std::max(hi, std::abs(v));
    }
    return lo / hi;
}

optimize::ReconstructionResult holoopt_p(const forward::Measurement& y, const forward::Scene& s, std::size_t iters,
                                         std::uint64_t seed) {
    optimize::RunConfig cfg;
    cfg.iterations = iters;
    cfg.lr = 0.1;
    cfg.seed = seed;
    return optimize::reconstruct(y, s, cfg);
}

// 1. Gradient checks.
Outcome gradients() {
    const auto t0 = std::chrono::steady_clock::now();
    double worst = 0.0;
    int instances = 0;
    auto track = [&](const std::vector<double>& analytic, const std::vector<double>& fd) {
        worst = std::max(worst, relative_error(analytic, fd));
        ++instances;
    };
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto s = forward::assemble_scene(random_image(3, 3, seed, 0.2, 1.0), binary_image(3, 3, seed + 50),
                                               forward::Layout::separated());
        const auto y = forward::simulate(s, 2.0, 0.05, 50.0, seed);
        const GrayImage canvas = random_image(s.canvas.height(), s.canvas.width(), seed + 100, 0.1, 1.0);
        for (auto kind : {objective::Kind::poisson, objective::Kind::squared}) {
            const objective::ObjectiveSpec spec{kind};
            const auto ev = objective::objective_grad_canvas(y, canvas, spec);
            auto f = [&](const std::vector<double>& v) {
                return objective::evaluate(spec, y.y, y.mask.grid,
                                           forward::intensity(GrayImage(canvas.height(), canvas.width(), v), y.gamma));
            };
            track({ev.gradient.begin(), ev.gradient.end()}, numeric_gradient(f, {canvas.begin(), canvas.end()}));
        }
        const GrayImage x = random_image(12, 12, seed + 200);
        const auto tv = objective::tv_value_grad(x, 1e-3);
        auto ftv = [&](const std::vector<double>& v) { return objective::tv_value_grad(GrayImage(12, 12, v), 1e-3).value; };
        track({tv.gradient.begin(), tv.gradient.end()}, numeric_gradient(ftv, {x.begin(), x.end()}));

        decoder::DecoderConfig dc{2, {3, 4, 3}, 2 + seed % 2, 2};
        dc.validate();
        auto [p, z] = decoder::init_decoder(dc, seed);
        for (auto& v : p.values()) v *= 3.0;
        const Shape out = dc.output_shape();
        const GrayImage w = random_image(out.height, out.width, seed + 300, -1.0, 1.0);
        const auto [xd, cache] = decoder::decoder_forward(p, z);
        const auto g = decoder::decoder_backward(p, z, cache, w);
        decoder::DecoderParams probe = p;
        auto fd = [&](const std::vector<double>& v) {
            probe.values() = v;
            const auto xo = decoder::decoder_forward(probe, z).first;
            double acc = 0.0;
            for (std::size_t i = 0; i < xo.size(); ++i) acc += w[i] * xo[i];
            return acc;
        };
        track(g, numeric_gradient(fd, p.values()));
    }
    const double t = seconds_since(t0);
    return {worst <= 1e-5 && t < 30.0,
            fmt("%d instances, worst relative error %.2e (<= 1e-5), %.1fs (< 30s)", instances, worst, t)};
}

// 2. Noiseless recovery with HoloOpt-P.
Outcome noiseless_recovery() {
    const auto t0 = std::chrono::steady_clock::now();
    const GrayImage x = camera(32);
    const auto s = forward::assemble_scene(x, binary_reference(32), forward::Layout::separated());
    const auto y = forward::simulate(s, 2.0, 0.0, forward::noiseless, 1);
    const auto r = holoopt_p(y, s, 5000, 3);
    const double mse = metrics::relative_mse(r.x_hat, x), t = seconds_since(t0);
    return {mse <= 1e-3 && t < 60.0, fmt("relative MSE %.2e (<= 1e-3) after 5000 iterations, %.1fs (< 60s)", mse, t)};
}

// 3. Inverse-filter exactness.
Outcome inverse_exactness() {
    const auto t0 = std::chrono::steady_clock::now();
    const GrayImage x = camera(32);
    const auto sd = forward::assemble_scene(x, GrayImage(1, 1, 1.0), forward::Layout::separated());
    const double delta =
        metrics::relative_mse(baselines::inverse_filter(forward::simulate(sd, 2.0, 0.0, forward::noiseless, 1), sd), x);
    const auto sb = forward::assemble_scene(x, binary_reference(32), forward::Layout::separated());
    const double floor = spectral_floor(sb, 2.0);
    const double binary =
        metrics::relative_mse(baselines::inverse_filter(forward::simulate(sb, 2.0, 0.0, forward::noiseless, 1), sb), x);
    const double t = seconds_since(t0);
    return {delta <= 1e-10 && binary <= 1e-6 && t < 5.0,
            fmt("delta %.2e (<= 1e-10), binary %.2e (<= 1e-6, spectral floor %.2e), %.2fs (< 5s)", delta, binary, floor,
                t)};
}

// 4. Poisson sampler statistics.
Outcome poisson_statistics() {
    GrayImage specimen(4, 4), ref(4, 4);
    specimen(0, 0) = 1.0;
    ref(0, 0) = 1.0;
    const auto scene = forward::assemble_scene(specimen, ref, forward::Layout::separated());  // 4 x 12
    const GrayImage i = forward::intensity(scene.canvas, 2.0);
    const auto mask = forward::make_beamstop(shape_of(i), 0.0);
    const double np = 10.0;
    const std::size_t frames = 10000, n = i.size();
    std::vector<double> sum(n, 0.0), sum2(n, 0.0);
    double c = 0.0;
    for (std::size_t f = 0; f < frames; ++f) {
        const auto y = forward::sample_measurement(i, mask, np, mix_seed({4, f}), 2.0);
        c = y.c_norm;
        for (std::size_t k = 0; k < n; ++k) {
            const double counts = std::round(y.y[k] * np / y.c_norm);
            sum[k] += counts;
            sum2[k] += counts * counts;
        }
    }
    std::size_t within = 0;
    double pooled_var = 0.0, pooled_mean = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const double lambda = np * i[k] / c;
        const double mean = sum[k] / frames;
        const double var = (sum2[k] - frames * mean * mean) / (frames - 1.0);
        const double se = std::sqrt(lambda / frames);
        if (std::abs(mean - lambda) <= 3.0 * se) ++within;
        pooled_var += var;
        pooled_mean += mean;
    }
    const double frac = static_cast<double>(within) / n, ratio = pooled_var / pooled_mean;
    return {frac >= 0.99 && ratio >= 0.9 && ratio <= 1.1,
            fmt("%zu/%zu pixels within 3 SE (%.1f%%, >= 99%%), pooled var/mean %.4f (in [0.9, 1.1])", within, n,
                100.0 * frac, ratio)};
}

// Shared 64 x 64 fixture for 5-7.
struct Bench {
    GrayImage x = camera(64);
    forward::Scene scene = forward::assemble_scene(x, binary_reference(64), forward::Layout::separated());
    std::size_t iters = 1000;
};

// 5. HoloOpt-P beats the filters across photon counts.
Outcome photon_trend(const Bench& b) {
    const auto t0 = std::chrono::steady_clock::now();
    bool ok = true;
    std::string detail;
    for (double np : {1.0, 10.0}) {
        std::vector<double> p, inv, wie;
        for (std::uint64_t s = 0; s < 3; ++s) {
            const auto y = forward::simulate(b.scene, 2.0, 0.0, np, 100 + s);
            p.push_back(metrics::ssim(holoopt_p(y, b.scene, b.iters, s).x_hat, b.x));
            inv.push_back(metrics::ssim(baselines::inverse_filter(y, b.scene), b.x));
            wie.push_back(metrics::ssim(baselines::wiener_filter(y, b.scene), b.x));
        }
        const double mp = median3(p), mi = median3(inv), mw = median3(wie);
        ok = ok && mp > mi && mp > mw;
        detail += fmt("Np=%g SSIM P %.3f inverse %.3f Wiener %.3f; ", np, mp, mi, mw);
    }
    const double t = seconds_since(t0);
    return {ok && t < 600.0, detail + fmt("%.0fs (< 600s)", t)};
}

// 6. Beamstop robustness.
Outcome beamstop_trend(const Bench& b) {
    std::vector<double> med;
    double p_res = 0.0, inv_res = 0.0;
    std::string detail = "median SSIM";
    bool ran = true;
    for (double a : {1e-4, 1e-3, 1e-2, 1e-1}) {
        std::vector<double> ss, pr, ir;
        for (std::uint64_t s = 0; s < 3; ++s) {
            try {
                const auto y = forward::simulate(b.scene, 2.0, a, 10.0, 200 + s);
                const auto r = holoopt_p(y, b.scene, b.iters, s);
                ss.push_back(metrics::ssim(r.x_hat, b.x));
                if (a == 1e-2) {
                    pr.push_back(optimize::residual_error(y, r.x_hat, b.scene));
                    ir.push_back(optimize::residual_error(y, baselines::inverse_filter(y, b.scene), b.scene));
                }
            } catch (const std::exception& e) {
                ran = false;
                detail += fmt(" [a=%g seed %d: %s]", a, static_cast<int>(s), e.what());
                ss.push_back(-1.0);
            }
        }
        med.push_back(median3(ss));
        detail += fmt(" a=%g:%.3f", a, med.back());
        if (a == 1e-2 && pr.size() == 3) {
            p_res = median3(pr);
            inv_res = median3(ir);
        }
    }
    bool monotone = true;
    for (std::size_t k = 1; k < med.size(); ++k) monotone = monotone && med[k] <= med[k - 1] + 0.02;
    const bool worse = p_res > 0.0 && inv_res >= 2.0 * p_res;
    return {ran && monotone && worse,
            detail + fmt("; residual at a=1e-2: inverse %.3f vs P %.3f (ratio %.2f >= 2)", inv_res, p_res,
                         p_res > 0.0 ? inv_res / p_res : 0.0)};
}

// 7. Separation robustness with a 0.1m reference.
Outcome separation_trend(const Bench& b) {
    const GrayImage r = binary_reference(64, 0.1);
    auto median_mse = [&](const forward::Layout& layout) {
        const auto s = forward::assemble_scene(b.x, r, layout);
        std::vector<double> v;
        for (std::uint64_t k = 0; k < 3; ++k) {
            const auto y = forward::simulate(s, 2.0, 0.0, 10.0, 300 + k);
            v.push_back(metrics::relative_mse(holoopt_p(y, s, b.iters, k).x_hat, b.x));
        }
        return median3(v);
    };
    const double touching = median_mse(forward::Layout::offset(0.0));
    const double separated = median_mse(forward::Layout::separated());
    const double ratio = touching / separated;
    return {ratio <= 2.0, fmt("%zux%zu reference, MSE at separation 0 %.4f vs separated %.4f (ratio %.2f <= 2)",
                              r.height(), r.width(), touching, separated, ratio)};
}

GrayImage box_blur(const GrayImage& x) {
    GrayImage out(x.height(), x.width());
    const long h = static_cast<long>(x.height()), w = static_cast<long>(x.width());
    for (long r = 0; r < h; ++r)
        for (long c = 0; c < w; ++c) {
            double acc = 0.0, n = 0.0;
            for (long rr = std::max(0L, r - 2); rr <= std::min(h - 1, r + 2); ++rr)
                for (long cc = std::max(0L, c - 2); cc <= std::min(w - 1, c + 2); ++cc) {
                    acc += x(rr, cc);
                    n += 1.0;
                }
            out(r, c) = acc / n;
        }
    return out;
}

// 8. Depth selection on the synthetic blur family: depth 2 exact, the others blurred.
Outcome depth_selection() {
    std::vector<GrayImage> prior, eval;
    for (std::uint64_t s = 0; s < 200; ++s) prior.push_back(imaging::resize_bilinear(random_image(8, 8, 300 + s), 32, 32));
    for (std::uint64_t s = 0; s < 200; ++s) eval.push_back(imaging::resize_bilinear(random_image(8, 8, 600 + s), 32, 32));
    auto family = [](const GrayImage& truth, std::size_t, std::size_t depth) {
        if (depth == 2) return truth;
        GrayImage x = box_blur(truth);
        return depth == 1 ? box_blur(x) : x;
    };
    const auto rows = harness::run_depth_selection(prior, eval, {1, 2, 3}, family, metrics::pooled_pixel_features, 3);
    const auto by_fid = harness::argmin_depth(rows, &harness::DepthRow::fid);
    const auto by_mse = harness::argmin_depth(rows, &harness::DepthRow::mean_relative_mse);
    std::string detail = fmt("argmin FID depth %zu, argmin MSE depth %zu; FID", by_fid, by_mse);
    for (const auto& r : rows)
        if (r.depth) detail += fmt(" d%zu=%.4f", *r.depth, r.fid);
    return {by_fid == by_mse, detail};
}

// 9. Metric exactness.
Outcome metric_exactness() {
    bool ok = true;
    std::vector<std::string> bad;
    auto check = [&](bool cond, const char* what) {
        if (!cond) bad.push_back(what);
        ok = ok && cond;
    };
    const GrayImage x = random_image(32, 32, 1, 0.1, 1.0);
    check(metrics::ssim(x, x) == 1.0, "ssim(x,x)");
    check(metrics::relative_mse(x, x) == 0.0, "relative_mse(x,x)");
    check(metrics::relative_mse(GrayImage(32, 32), x) == 1.0, "relative_mse(0,x)");
    GrayImage twice = x;
    for (auto& v : twice) v *= 2.0;
    check(metrics::relative_mse(twice, x) == 1.0, "relative_mse(2x,x)");
    auto g1 = [](double mu, double var) { return metrics::GaussianStats{{mu}, metrics::Matrix::diagonal({var})}; };
    check(std::abs(metrics::frechet_distance(g1(1, 1), g1(3, 1)) - 4.0) <= 1e-12, "frechet shift");
    check(std::abs(metrics::frechet_distance(g1(0, 1), g1(0, 4)) - 1.0) <= 1e-12, "frechet scale");
    check(std::abs(metrics::frechet_distance(g1(0.5, 0.25), g1(-1, 9)) - 8.5) <= 1e-12, "frechet mixed");
    double worst = 0.0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        Rng rng(seed);
        metrics::Matrix b(6), m(6);
        for (auto& v : b.a) v = rng.uniform(-1.0, 1.0);
        for (std::size_t i = 0; i < 6; ++i)
            for (std::size_t j = 0; j < 6; ++j)
                for (std::size_t k = 0; k < 6; ++k) m(i, j) += b(i, k) * b(j, k);
        const metrics::Matrix r = metrics::sym_psd_sqrt(m);
        const metrics::Matrix rr = r * r;
        for (std::size_t i = 0; i < m.a.size(); ++i) worst = std::max(worst, std::abs(rr.a[i] - m.a[i]));
    }
    check(worst <= 1e-8, "sqrt reconstruction");
    std::string detail = fmt("ssim, relative_mse, 1-D Frechet exact; sqrt reconstruction %.1e (<= 1e-8)", worst);
    for (const auto& b : bad) detail += " [failed: " + b + "]";
    return {ok, detail};
}

// 10. CLI determinism, including maximal worker parallelism.
int run_cli(const std::string& args, const fs::path& log) {
    const std::string cmd = std::string("\"") + HOLOPR_CLI + "\" " + args + " > \"" + log.string() + "\" 2>&1";
    const int raw = std::system(cmd.c_str());
    return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

Outcome cli_determinism() {
    const fs::path dir = fs::temp_directory_path() / ("holopr_acceptance_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir / "images");
    fs::create_directories(dir / "prior");
    fs::create_directories(dir / "eval");
    for (std::uint64_t s = 0; s < 3; ++s) {
        imaging::save_png(imaging::resize_bilinear(random_image(4, 4, s), 16, 16), dir / "images" / fmt("i%d.png", int(s)));
        imaging::save_png(imaging::resize_bilinear(random_image(4, 4, 10 + s), 16, 16), dir / "prior" / fmt("p%d.png", int(s)));
        imaging::save_png(imaging::resize_bilinear(random_image(4, 4, 20 + s), 16, 16), dir / "eval" / fmt("e%d.png", int(s)));
    }
    imaging::write_text(dir / "sim.json", R"({"np": 10, "gamma": 2, "a": 0.01, "seed": 4})");
    imaging::write_text(dir / "sweep.json", R"({
        "kind": "noise", "grid": [1, 10, 100],
        "methods": ["HoloOpt-P", "HoloOpt-P-TV", "inverse", "wiener", "HIO-Holo"],
        "method_options": {"HoloOpt-P-TV": {"tv_weight": 0.05}, "HIO-Holo": {"iterations": 30}},
        "images": ["images"], "trials": 2, "master_seed": 5, "iterations": 30})");
    imaging::write_text(dir / "depth.json", R"({
        "kind": "depth_selection", "grid": [1, 2], "fixed": {"np": 10},
        "prior_images": ["prior"], "eval_images": ["eval"], "master_seed": 1,
        "method_options": {"HoloOpt-P-DD": {"iterations": 10, "decoder": {"depth": 1, "channels": 4}}}})");

    const unsigned max_workers = std::max(8u, std::thread::hardware_concurrency());
    const fs::path log = dir / "log.txt";
    std::vector<std::string> failures;
    auto run = [&](const std::string& args) {
        if (run_cli(args, log) != 0) failures.push_back(args + ": " + slurp(log));
    };
    const std::string img = q(dir / "images" / "i0.png");
    for (const std::string tag : {"a", "b"}) {
        const fs::path o = dir / tag;
        run("simulate " + img + " -c " + q(dir / "sim.json") + " -o " + q(o / "meas"));
        run("reconstruct " + q(o / "meas.json") + " -m HoloOpt-P --iterations 40 --seed 2 -o " + q(o / "p"));
        run("reconstruct " + q(o / "meas.json") + " -m HIO-Holo --iterations 40 --seed 2 -o " + q(o / "hio"));
        run("select-depth " + q(dir / "depth.json") + " -o " + q(o / "depth"));
    }
    run("sweep " + q(dir / "sweep.json") + " -j 1 -o " + q(dir / "s1"));
    run("sweep " + q(dir / "sweep.json") + " -j 1 -o " + q(dir / "s2"));
    run("sweep " + q(dir / "sweep.json") + " -j " + std::to_string(max_workers) + " -o " + q(dir / "s3"));

    std::size_t compared = 0;
    std::vector<std::string> differ;
    auto same = [&](const fs::path& a, const fs::path& b) {
        ++compared;
        if (!fs::exists(a) || !fs::exists(b) || slurp(a) != slurp(b)) differ.push_back(a.filename().string());
    };
    for (const char* f : {"meas.csv", "meas_reference.csv", "p/reconstruction.csv", "p/trace.csv",
                          "hio/reconstruction.csv", "hio/trace.csv", "depth/depth_selection.csv"})
        same(dir / "a" / f, dir / "b" / f);
    for (const char* f : {"records.csv", "aggregates.csv", "skipped.csv"}) {
        same(dir / "s1" / f, dir / "s2" / f);
        same(dir / "s1" / f, dir / "s3" / f);
    }
    const bool ok = failures.empty() && differ.empty();
    std::string detail = fmt("%zu CSV pairs byte-identical (sweep at -j 1 and -j %u)", compared - differ.size(), max_workers);
    for (const auto& d : differ) detail += " [differs: " + d + "]";
    for (const auto& f : failures) detail += " [command failed: " + f + "]";
    if (ok) fs::remove_all(dir);
    return {ok, detail};
}

}  // namespace

int main(int argc, char** argv) {
    std::set<int> wanted;
    for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
    auto want = [&](int n) { return wanted.empty() || wanted.count(n) > 0; };

    int failed = 0;
    auto report = [&](int n, const std::function<Outcome()>& fn) {
        if (!want(n)) return;
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        std::printf("%s criterion %d: %s\n", o.pass ? "PASS" : "FAIL", n, o.detail.c_str());
        std::fflush(stdout);
        if (!o.pass) ++failed;
    };

    const Bench bench;
    report(1, gradients);
    report(2, noiseless_recovery);
    report(3, inverse_exactness);
    report(4, poisson_statistics);
    report(5, [&] { return photon_trend(bench); });
    report(6, [&] { return beamstop_trend(bench); });
    report(7, [&] { return separation_trend(bench); });
    report(8, depth_selection);
    report(9, metric_exactness);
    report(10, cli_determinism);
    return failed == 0 ? 0 : 1;
}
