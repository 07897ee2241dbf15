#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "holopr/grid.hpp"
#include "holopr/imaging.hpp"

namespace holopr::metrics {

/// ||x_hat - x|| / ||x||.
inline double relative_mse(const GrayImage& x_hat, const GrayImage& x_true) {
    require_same_shape(x_hat, x_true, "relative_mse");
    const double norm = l2_norm(x_true.values());
    if (!(norm > 0.0)) throw Error("relative_mse: ground truth has zero norm");
    double acc = 0.0;
    for (std::size_t i = 0; i < x_hat.size(); ++i) {
        const double d = x_hat[i] - x_true[i];
        acc += d * d;
    }
    return std::sqrt(acc) / norm;
}

struct SsimOptions {
    double dynamic_range = 1.0;
    std::size_t window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
};

namespace detail {

inline std::vector<double> gaussian_window(std::size_t size, double sigma) {
    std::vector<double> w(size);
    const double centre = (static_cast<double>(size) - 1.0) / 2.0;
    double total = 0.0;
    for (std::size_t i = 0; i < size; ++i) {
        const double d = static_cast<double>(i) - centre;
        w[i] = std::exp(-d * d / (2.0 * sigma * sigma));
        total += w[i];
    }
    for (auto& v : w) v /= total;
    return w;
}

// Separable "valid" correlation with a symmetric 1-D kernel.
inline GrayImage filter_valid(const GrayImage& img, const std::vector<double>& k) {
    const std::size_t n = k.size();
    const std::size_t h = img.height() - n + 1, w = img.width() - n + 1;
    GrayImage tmp(img.height(), w);
    for (std::size_t r = 0; r < img.height(); ++r)
        for (std::size_t c = 0; c < w; ++c) {
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) acc += k[i] * img(r, c + i);
            tmp(r, c) = acc;
        }
    GrayImage out(h, w);
    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c) {
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) acc += k[i] * tmp(r + i, c);
            out(r, c) = acc;
        }
    return out;
}

inline GrayImage product(const GrayImage& a, const GrayImage& b) {
    GrayImage out(a.height(), a.width());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
    return out;
}

}  // namespace detail

/// Mean structural similarity over all fully-contained Gaussian windows
/// (11 x 11, sigma 1.5, K1 = 0.01, K2 = 0.03 by default).
inline double ssim(const GrayImage& a, const GrayImage& b, const SsimOptions& opt = {}) {
    require_same_shape(a, b, "ssim");
    if (a.height() < opt.window || a.width() < opt.window)
        throw Error("ssim: images must be at least " + std::to_string(opt.window) + "x" +
                    std::to_string(opt.window));
    const auto k = detail::gaussian_window(opt.window, opt.sigma);
    const double c1 = (opt.k1 * opt.dynamic_range) * (opt.k1 * opt.dynamic_range);
    const double c2 = (opt.k2 * opt.dynamic_range) * (opt.k2 * opt.dynamic_range);
    const GrayImage mu_a = detail::filter_valid(a, k);
    const GrayImage mu_b = detail::filter_valid(b, k);
    const GrayImage e_aa = detail::filter_valid(detail::product(a, a), k);
    const GrayImage e_bb = detail::filter_valid(detail::product(b, b), k);
    const GrayImage e_ab = detail::filter_valid(detail::product(a, b), k);
    double total = 0.0;
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
        const double ma = mu_a[i], mb = mu_b[i];
        const double var_a = e_aa[i] - ma * ma;
        const double var_b = e_bb[i] - mb * mb;
        const double cov = e_ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
    }
    return total / static_cast<double>(mu_a.size());
}

// ---------------------------------------------------------------------------
// Feature statistics and Frechet distance

struct FeatureVector {
    std::vector<double> values;
    std::size_t dimension() const noexcept { return values.size(); }
};

using FeatureExtractor = std::function<FeatureVector(const GrayImage&)>;

/// Built-in extractor: bilinear 8 x 8 thumbnail flattened row-major (64 values),
/// then the image's global mean and population standard deviation (F = 66).
inline FeatureVector pooled_pixel_features(const GrayImage& x) {
    validate_image(x, "pooled_pixel_features");
    const GrayImage thumb = imaging::resize_bilinear(x, 8, 8);
    FeatureVector f{{thumb.begin(), thumb.end()}};
    const double n = static_cast<double>(x.size());
    const double mean = sum(x.values()) / n;
    double var = 0.0;
    for (double v : x) var += (v - mean) * (v - mean);
    f.values.push_back(mean);
    f.values.push_back(std::sqrt(var / n));
    return f;
}

inline FeatureVector extract_features(const GrayImage& x, const FeatureExtractor& extractor = pooled_pixel_features) {
    FeatureVector f = extractor(x);
    if (f.values.empty() || !std::all_of(f.values.begin(), f.values.end(), [](double v) { return std::isfinite(v); }))
        throw Error("extract_features: extractor returned an empty or non-finite vector");
    return f;
}

/// Dense square matrix, row-major.
struct Matrix {
    std::size_t n = 0;
    std::vector<double> a;

    Matrix() = default;
    explicit Matrix(std::size_t size, double fill = 0.0) : n(size), a(size * size, fill) {}
    static Matrix identity(std::size_t size) {
        Matrix m(size);
        for (std::size_t i = 0; i < size; ++i) m(i, i) = 1.0;
        return m;
    }
    static Matrix diagonal(const std::vector<double>& d) {
        Matrix m(d.size());
        for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
        return m;
    }

    double& operator()(std::size_t i, std::size_t j) noexcept { return a[i * n + j]; }
    double operator()(std::size_t i, std::size_t j) const noexcept { return a[i * n + j]; }

    double trace() const {
        double t = 0.0;
        for (std::size_t i = 0; i < n; ++i) t += (*this)(i, i);
        return t;
    }
    double max_abs() const {
        double m = 0.0;
        for (double v : a) m = std::max(m, std::abs(v));
        return m;
    }
    double frobenius() const { return l2_norm(a); }
};

inline Matrix operator*(const Matrix& x, const Matrix& y) {
    if (x.n != y.n) throw Error("matrix product: dimension mismatch");
    Matrix out(x.n);
    for (std::size_t i = 0; i < x.n; ++i)
        for (std::size_t k = 0; k < x.n; ++k) {
            const double v = x(i, k);
            if (v == 0.0) continue;
            for (std::size_t j = 0; j < x.n; ++j) out(i, j) += v * y(k, j);
        }
    return out;
}

struct GaussianStats {
    std::vector<double> mean;
    Matrix cov;
    std::size_t dimension() const noexcept { return mean.size(); }
};

/// Sample mean and unbiased (n - 1) covariance plus a ridge of 1e-10 * trace / F.
inline GaussianStats gaussian_stats(const std::vector<FeatureVector>& features) {
    if (features.size() < 2) throw Error("gaussian_stats: need at least two feature vectors");
    const std::size_t dim = features.front().dimension();
    if (dim == 0) throw Error("gaussian_stats: empty feature vectors");
    for (const auto& f : features)
        if (f.dimension() != dim) throw Error("gaussian_stats: feature dimensions differ");
    const double n = static_cast<double>(features.size());
    GaussianStats s{std::vector<double>(dim, 0.0), Matrix(dim)};
    for (const auto& f : features)
        for (std::size_t i = 0; i < dim; ++i) s.mean[i] += f.values[i];
    for (auto& v : s.mean) v /= n;
    for (const auto& f : features)
        for (std::size_t i = 0; i < dim; ++i) {
            const double di = f.values[i] - s.mean[i];
            for (std::size_t j = i; j < dim; ++j) s.cov(i, j) += di * (f.values[j] - s.mean[j]);
        }
    for (std::size_t i = 0; i < dim; ++i)
        for (std::size_t j = i; j < dim; ++j) {
            s.cov(i, j) /= n - 1.0;
            s.cov(j, i) = s.cov(i, j);
        }
    const double ridge = 1e-10 * s.cov.trace() / static_cast<double>(dim);
    for (std::size_t i = 0; i < dim; ++i) s.cov(i, i) += ridge;
    return s;
}

struct Eigen {
    std::vector<double> values;
    Matrix vectors;  // column k is the eigenvector for values[k]
};

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
inline Eigen symmetric_eigen(Matrix a) {
    const std::size_t n = a.n;
    Matrix v = Matrix::identity(n);
    const double scale = std::max(a.frobenius(), std::numeric_limits<double>::min());
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) off += a(i, j) * a(i, j);
        if (std::sqrt(off) <= 1e-15 * scale) break;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (apq == 0.0) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v(k, p), vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
    }
    Eigen e{std::vector<double>(n), std::move(v)};
    for (std::size_t i = 0; i < n; ++i) e.values[i] = a(i, i);
    return e;
}

namespace detail {

inline void require_symmetric(const Matrix& m, const char* what) {
    const double tol = 1e-10 * std::max(1.0, m.max_abs());
    for (std::size_t i = 0; i < m.n; ++i)
        for (std::size_t j = i + 1; j < m.n; ++j)
            if (std::abs(m(i, j) - m(j, i)) > tol) throw Error(std::string(what) + ": matrix is not symmetric");
}

inline Matrix symmetrized(const Matrix& m) {
    Matrix out(m.n);
    for (std::size_t i = 0; i < m.n; ++i)
        for (std::size_t j = 0; j < m.n; ++j) out(i, j) = 0.5 * (m(i, j) + m(j, i));
    return out;
}

// Eigenvalues of a PSD matrix with round-off negatives clamped to zero.
inline std::vector<double> clamped_eigenvalues(const Eigen& e, const char* what) {
    double largest = 0.0;
    for (double v : e.values) largest = std::max(largest, std::abs(v));
    const double tol = 1e-10 * std::max(1.0, largest);
    std::vector<double> out = e.values;
    for (auto& v : out) {
        if (v < -tol) throw Error(std::string(what) + ": matrix is not positive semidefinite");
        v = std::max(v, 0.0);
    }
    return out;
}

}  // namespace detail

/// Principal square root of a symmetric PSD matrix via Jacobi eigendecomposition.
inline Matrix sym_psd_sqrt(const Matrix& m) {
    detail::require_symmetric(m, "sym_psd_sqrt");
    const Eigen e = symmetric_eigen(detail::symmetrized(m));
    const auto lambda = detail::clamped_eigenvalues(e, "sym_psd_sqrt");
    Matrix out(m.n);
    for (std::size_t k = 0; k < m.n; ++k) {
        const double s = std::sqrt(lambda[k]);
        if (s == 0.0) continue;
        for (std::size_t i = 0; i < m.n; ++i) {
            const double vi = s * e.vectors(i, k);
            for (std::size_t j = 0; j < m.n; ++j) out(i, j) += vi * e.vectors(j, k);
        }
    }
    return out;
}

/// ||mu_a - mu_b||^2 + tr(A) + tr(B) - 2 tr( sqrt(A^1/2 B A^1/2) ). The covariance
/// term is clamped to zero when it falls below 1e-10 (tr A + tr B).
inline double frechet_distance(const GaussianStats& a, const GaussianStats& b) {
    if (a.dimension() != b.dimension() || a.cov.n != a.dimension() || b.cov.n != b.dimension())
        throw Error("frechet_distance: dimension mismatch");
    double mean_term = 0.0;
    for (std::size_t i = 0; i < a.dimension(); ++i) {
        const double d = a.mean[i] - b.mean[i];
        mean_term += d * d;
    }
    const Matrix root_a = sym_psd_sqrt(a.cov);
    detail::require_symmetric(b.cov, "frechet_distance");
    const Matrix sandwich = detail::symmetrized(root_a * b.cov * root_a);
    const auto lambda = detail::clamped_eigenvalues(symmetric_eigen(sandwich), "frechet_distance");
    double root_trace = 0.0;
    for (double v : lambda) root_trace += std::sqrt(v);
    const double traces = a.cov.trace() + b.cov.trace();
    double cov_term = traces - 2.0 * root_trace;
    if (cov_term < 1e-10 * traces) cov_term = 0.0;
    return mean_term + std::max(cov_term, 0.0);
}

// ---------------------------------------------------------------------------
// Feature CSV: header image_id,f0,...,f{F-1}

struct NamedFeatures {
    std::string image_id;
    FeatureVector features;
};

inline imaging::CsvTable feature_table(const std::vector<NamedFeatures>& rows) {
    if (rows.empty()) throw Error("feature_table: no rows");
    const std::size_t dim = rows.front().features.dimension();
    imaging::CsvTable t;
    t.header.push_back("image_id");
    for (std::size_t i = 0; i < dim; ++i) t.header.push_back("f" + std::to_string(i));
    for (const auto& r : rows) {
        if (r.features.dimension() != dim) throw Error("feature_table: feature dimensions differ");
        std::vector<imaging::CsvCell> row{r.image_id};
        for (double v : r.features.values) row.emplace_back(v);
        t.add_row(std::move(row));
    }
    return t;
}

inline std::vector<NamedFeatures> load_feature_csv(const std::filesystem::path& path) {
    const auto csv = imaging::load_csv(path);
    if (csv.header.size() < 2 || csv.header[0] != "image_id")
        throw Error("feature CSV '" + path.string() + "': header must start with image_id,f0");
    for (std::size_t i = 1; i < csv.header.size(); ++i)
        if (csv.header[i] != "f" + std::to_string(i - 1))
            throw Error("feature CSV '" + path.string() + "': expected column f" + std::to_string(i - 1));
    std::vector<NamedFeatures> out;
    for (const auto& row : csv.rows) {
        NamedFeatures nf{row[0], {}};
        for (std::size_t i = 1; i < row.size(); ++i) nf.features.values.push_back(imaging::parse_real(row[i]));
        out.push_back(std::move(nf));
    }
    return out;
}

}  // namespace holopr::metrics
