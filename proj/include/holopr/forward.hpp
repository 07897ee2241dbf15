#pragma once

// Holographic CDI forward model: scene assembly (specimen | gap | reference),
// oversampled Fourier intensity, square beamstop and Poisson photon counting.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "holopr/fft.hpp"
#include "holopr/grid.hpp"
#include "holopr/imaging.hpp"
#include "holopr/random.hpp"

namespace holopr::forward {

/// Placement of the reference relative to an m x m specimen on an m x 3m canvas.
/// `separation` is the gap between the specimen's right edge and the reference's
/// left edge in units of m; the separated layout (X | 0 | R) is separation 1.
struct Layout {
    enum class Kind { separated, offset };
    Kind kind = Kind::separated;
    double separation = 1.0;

    static Layout separated() { return {Kind::separated, 1.0}; }
    static Layout offset(double s) { return {Kind::offset, s}; }

    std::string name() const {
        if (kind == Kind::separated) return "separated";
        return "offset(" + imaging::format_real(separation) + ")";
    }
    friend bool operator==(const Layout&, const Layout&) = default;
};

inline nlohmann::json to_json(const Layout& layout) {
    if (layout.kind == Layout::Kind::separated) return {{"kind", "separated"}};
    return {{"kind", "offset"}, {"separation", layout.separation}};
}

inline Layout layout_from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("kind") || !j["kind"].is_string())
        throw Error("layout: expected an object with a string 'kind'");
    const auto kind = j["kind"].get<std::string>();
    if (kind == "separated") return Layout::separated();
    if (kind == "offset") {
        if (!j.contains("separation") || !j["separation"].is_number())
            throw Error("layout: 'offset' requires numeric 'separation'");
        return Layout::offset(j["separation"].get<double>());
    }
    throw Error("layout: unknown kind '" + kind + "'");
}

struct Scene {
    GrayImage canvas;
    Rect x_region;
    Rect r_region;
    GrayImage reference;
    Layout layout;

    std::size_t specimen_size() const noexcept { return x_region.height; }
};

/// Builds Z = X0 + R0. The specimen sits at columns [0, m); the reference's left
/// edge at column m + round(s * m), vertically centred in the m rows.
inline Scene assemble_scene(const GrayImage& x, const GrayImage& r, const Layout& layout) {
    validate_image(x, "assemble_scene (specimen)");
    validate_image(r, "assemble_scene (reference)");
    if (x.height() != x.width()) throw Error("assemble_scene: specimen must be square");
    const std::size_t m = x.height();
    const std::size_t canvas_w = 3 * m;
    if (!(layout.separation >= 0.0) || !std::isfinite(layout.separation))
        throw Error("assemble_scene: reference would overlap the specimen (negative separation)");
    if (r.height() > m) throw Error("assemble_scene: reference taller than the specimen rows");
    const auto gap = static_cast<std::size_t>(std::llround(layout.separation * static_cast<double>(m)));
    const Rect r_region{(m - r.height()) / 2, m + gap, r.height(), r.width()};
    if (r_region.col_end() > canvas_w) throw Error("assemble_scene: reference exceeds the canvas");
    Scene scene{GrayImage(m, canvas_w), Rect{0, 0, m, m}, r_region, r, layout};
    paste(scene.canvas, x, 0, 0);
    paste(scene.canvas, r, r_region.row, r_region.col);
    return scene;
}

/// Overwrites the specimen region of the canvas.
inline void set_unknown(Scene& scene, const GrayImage& x) {
    if (x.height() != scene.x_region.height || x.width() != scene.x_region.width)
        throw Error("set_unknown: specimen shape does not match the scene");
    paste(scene.canvas, x, scene.x_region.row, scene.x_region.col);
}

/// Whether the zero gap between specimen and reference is at least the specimen width.
inline bool fully_separated(const Scene& scene) {
    return scene.r_region.col >= scene.x_region.col_end() + scene.x_region.width;
}

inline std::size_t oversampled_extent(std::size_t n, double gamma) {
    return static_cast<std::size_t>(std::ceil(gamma * static_cast<double>(n) - 1e-9));
}

inline Shape detector_shape(Shape canvas, double gamma) {
    if (!(gamma >= 1.0) || !std::isfinite(gamma)) throw Error("oversampling factor must be >= 1");
    return {oversampled_extent(canvas.height, gamma), oversampled_extent(canvas.width, gamma)};
}

/// Unnormalized DFT of the canvas zero-padded (bottom/right) to ceil(gamma*m) x ceil(gamma*W).
inline ComplexGrid oversampled_dft(const GrayImage& canvas, double gamma) {
    const Shape det = detector_shape(shape_of(canvas), gamma);
    return fft::forward(fft::zero_padded(canvas, det.height, det.width));
}

inline GrayImage squared_modulus(const ComplexGrid& field) {
    GrayImage out(field.height(), field.width());
    for (std::size_t i = 0; i < field.size(); ++i) out[i] = std::norm(field[i]);
    return out;
}

/// Detector intensity |F(Z)|^2.
inline GrayImage intensity(const GrayImage& canvas, double gamma) {
    return squared_modulus(oversampled_dft(canvas, gamma));
}

struct BeamstopMask {
    GrayImage grid;  // 1 = observed, 0 = occluded
    double area_fraction = 0.0;

    Shape shape() const { return shape_of(grid); }
    std::size_t observed_count() const {
        std::size_t n = 0;
        for (double v : grid) n += v != 0.0;
        return n;
    }
};

namespace detail {

// Side length near `target` with the parity of `extent` (so the block is
// centred on the middle of the fftshifted axis); ties go to the smaller area.
inline std::size_t beamstop_side(double target, std::size_t extent) {
    if (target <= 0.0) return 0;
    const long parity = static_cast<long>(extent % 2);
    long lo = static_cast<long>(std::floor(target));
    if ((lo - parity) % 2 != 0) lo -= 1;
    const long hi = lo + 2;
    lo = std::max(lo, 0L);
    const double t2 = target * target;
    const double dlo = std::abs(static_cast<double>(lo * lo) - t2);
    const double dhi = std::abs(static_cast<double>(hi * hi) - t2);
    const auto side = static_cast<std::size_t>(dhi < dlo ? hi : lo);
    return std::min(side, extent);
}

}  // namespace detail

/// Square beamstop of area fraction `a` centred on the zero frequency. The block
/// occupies rows [(H - s)/2, (H + s)/2) of the centred (fftshifted) spectrum and
/// is stored in unshifted DFT order, so it wraps around the four corners.
inline BeamstopMask make_beamstop(Shape detector, double a) {
    if (!(a >= 0.0 && a < 1.0)) throw Error("make_beamstop: area fraction must lie in [0, 1)");
    if (detector.count() == 0) throw Error("make_beamstop: empty detector");
    BeamstopMask mask{GrayImage(detector.height, detector.width, 1.0), a};
    const double target = std::sqrt(a * static_cast<double>(detector.count()));
    const std::size_t sh = detail::beamstop_side(target, detector.height);
    const std::size_t sw = detail::beamstop_side(target, detector.width);
    if (sh == 0 || sw == 0) return mask;
    const std::size_t h = detector.height, w = detector.width;
    // Centred index i maps to unshifted index (i + ceil(n/2)) mod n (inverse fftshift).
    for (std::size_t i = (h - sh) / 2; i < (h - sh) / 2 + sh; ++i) {
        const std::size_t r = (i + (h + 1) / 2) % h;
        for (std::size_t j = (w - sw) / 2; j < (w - sw) / 2 + sw; ++j) mask.grid(r, (j + (w + 1) / 2) % w) = 0.0;
    }
    return mask;
}

/// Sum of the full (un-beamstopped) intensity.
inline double total_intensity(const GrayImage& intensity_grid) {
    const double c = sum(intensity_grid.values());
    if (!(c > 0.0) || !std::isfinite(c)) throw Error("total_intensity: zero scene, normalization undefined");
    return c;
}

/// Exact Poisson variate: multiplication method below 30, PTRS (Hormann's
/// transformed rejection with squeeze) above.
inline std::uint64_t poisson_draw(double lambda, Rng& rng) {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw Error("poisson_draw: rate must be finite and >= 0");
    if (lambda == 0.0) return 0;
    if (lambda < 30.0) {
        const double limit = std::exp(-lambda);
        double prod = rng.uniform();
        std::uint64_t k = 0;
        while (prod > limit) {
            ++k;
            prod *= rng.uniform();
        }
        return k;
    }
    const double slam = std::sqrt(lambda);
    const double loglam = std::log(lambda);
    const double b = 0.931 + 2.53 * slam;
    const double a = -0.059 + 0.02483 * b;
    const double inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    const double vr = 0.9277 - 3.6224 / (b - 2.0);
    for (;;) {
        const double u = rng.uniform() - 0.5;
        const double v = rng.uniform();
        const double us = 0.5 - std::abs(u);
        const double k = std::floor((2.0 * a / us + b) * u + lambda + 0.43);
        if (us >= 0.07 && v <= vr) return static_cast<std::uint64_t>(k);
        if (k < 0.0 || (us < 0.013 && v > us)) continue;
        if (std::log(v) + std::log(inv_alpha) - std::log(a / (us * us) + b) <=
            -lambda + k * loglam - std::lgamma(k + 1.0))
            return static_cast<std::uint64_t>(k);
    }
}

inline constexpr double noiseless = std::numeric_limits<double>::infinity();

struct Measurement {
    GrayImage y;
    BeamstopMask mask;
    double np = noiseless;  // photons per pixel; infinity = noiseless
    double gamma = 2.0;
    double c_norm = 0.0;    // C / N_det: mean detector intensity before the beamstop
    std::uint64_t seed = 0;

    bool is_noiseless() const noexcept { return std::isinf(np); }
    Shape shape() const { return shape_of(y); }
};

/// Y = (c/Np) Poisson((Np/c) I .* B) with c = C / N_det, so a pixel of average
/// intensity receives Np photons on average and the frame holds N_det * Np in
/// total. Pixels are visited in row-major order from one generator, so a seed
/// fixes the frame bit for bit.
inline Measurement sample_measurement(const GrayImage& intensity_grid, const BeamstopMask& mask, double np,
                                      std::uint64_t seed, double gamma = 2.0) {
    require_same_shape(intensity_grid, mask.grid, "sample_measurement");
    if (!(np > 0.0)) throw Error("sample_measurement: photons per pixel must be > 0");
    const double c = total_intensity(intensity_grid) / static_cast<double>(intensity_grid.size());
    Measurement m{GrayImage(intensity_grid.height(), intensity_grid.width()), mask, np, gamma, c, seed};
    if (std::isinf(np)) {
        for (std::size_t i = 0; i < m.y.size(); ++i) m.y[i] = intensity_grid[i] * mask.grid[i];
        return m;
    }
    Rng rng(seed);
    const double rate = np / c;
    const double quantum = c / np;
    for (std::size_t i = 0; i < m.y.size(); ++i) {
        const double lambda = rate * intensity_grid[i] * mask.grid[i];
        m.y[i] = quantum * static_cast<double>(poisson_draw(lambda, rng));
    }
    return m;
}

/// Intensity, beamstop and sampled frame for a scene in one call.
inline Measurement simulate(const Scene& scene, double gamma, double area_fraction, double np, std::uint64_t seed) {
    const GrayImage i = intensity(scene.canvas, gamma);
    return sample_measurement(i, make_beamstop(shape_of(i), area_fraction), np, seed, gamma);
}

// ---------------------------------------------------------------------------
// Serialization: <stem>.csv holds (row, col, value) for every detector pixel,
// <stem>.json the acquisition metadata.

inline void save_measurement(const Measurement& m, const Layout& layout, std::size_t specimen_size,
                             const std::filesystem::path& stem) {
    imaging::CsvTable table{{"row", "col", "value"}, {}};
    table.rows.reserve(m.y.size());
    for (std::size_t r = 0; r < m.y.height(); ++r)
        for (std::size_t c = 0; c < m.y.width(); ++c)
            table.rows.push_back({static_cast<std::int64_t>(r), static_cast<std::int64_t>(c), m.y(r, c)});
    auto csv_path = stem;
    csv_path += ".csv";
    imaging::save_csv(table, csv_path);
    nlohmann::json meta = {
        {"np", m.is_noiseless() ? nlohmann::json(nullptr) : nlohmann::json(m.np)},
        {"gamma", m.gamma},
        {"a", m.mask.area_fraction},
        {"seed", m.seed},
        {"c_norm", m.c_norm},
        {"layout", to_json(layout)},
        {"specimen_size", specimen_size},
        {"detector", {{"height", m.y.height()}, {"width", m.y.width()}}},
        {"values", csv_path.filename().string()},
    };
    auto json_path = stem;
    json_path += ".json";
    imaging::write_text(json_path, meta.dump(2) + "\n");
}

struct LoadedMeasurement {
    Measurement measurement;
    Layout layout;
    std::size_t specimen_size = 0;
};

inline LoadedMeasurement load_measurement(const std::filesystem::path& json_path) {
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(imaging::detail::read_bytes(json_path));
    } catch (const nlohmann::json::exception& e) {
        throw Error("measurement sidecar '" + json_path.string() + "': " + e.what());
    }
    auto need = [&](const char* key) -> const nlohmann::json& {
        if (!meta.contains(key)) throw Error("measurement sidecar: missing '" + std::string(key) + "'");
        return meta[key];
    };
    try {
        LoadedMeasurement out;
        out.layout = layout_from_json(need("layout"));
        out.specimen_size = need("specimen_size").get<std::size_t>();
        const auto h = need("detector").at("height").get<std::size_t>();
        const auto w = need("detector").at("width").get<std::size_t>();
        Measurement& m = out.measurement;
        m.np = need("np").is_null() ? noiseless : need("np").get<double>();
        m.gamma = need("gamma").get<double>();
        m.seed = need("seed").get<std::uint64_t>();
        m.c_norm = need("c_norm").get<double>();
        m.mask = make_beamstop({h, w}, need("a").get<double>());
        const auto csv = imaging::load_csv(json_path.parent_path() / need("values").get<std::string>());
        const auto ci = csv.column("row"), cj = csv.column("col"), cv = csv.column("value");
        m.y = GrayImage(h, w);
        for (const auto& row : csv.rows) {
            const auto r = static_cast<std::size_t>(imaging::parse_real(row[ci]));
            const auto c = static_cast<std::size_t>(imaging::parse_real(row[cj]));
            if (r >= h || c >= w) throw Error("measurement values: index outside detector");
            m.y(r, c) = imaging::parse_real(row[cv]);
        }
        return out;
    } catch (const nlohmann::json::exception& e) {
        throw Error("measurement sidecar '" + json_path.string() + "': " + e.what());
    }
}

}  // namespace holopr::forward
