#include "support.hpp"

using namespace holopr;
using namespace holopr::metrics;
using namespace testing_support;

namespace {

GaussianStats stats1d(double mu, double var) { return {{mu}, Matrix::diagonal({var})}; }

Matrix random_spd(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    Matrix b(n);
    for (auto& v : b.a) v = rng.uniform(-1.0, 1.0);
    Matrix out(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t k = 0; k < n; ++k) out(i, j) += b(i, k) * b(j, k);
    return out;
}

std::vector<FeatureVector> random_features(std::size_t count, std::size_t dim, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<FeatureVector> out(count);
    for (auto& f : out)
        for (std::size_t d = 0; d < dim; ++d) f.values.push_back(rng.uniform(-1.0, 2.0));
    return out;
}

double max_diff(const Matrix& a, const Matrix& b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.a.size(); ++i) d = std::max(d, std::abs(a.a[i] - b.a[i]));
    return d;
}

}  // namespace

TEST(RelativeMse, TrivialCases) {
    const GrayImage x = random_image(5, 7, 1, 0.1, 1.0);
    EXPECT_EQ(relative_mse(x, x), 0.0);
    EXPECT_EQ(relative_mse(GrayImage(5, 7), x), 1.0);
    GrayImage twice = x;
    for (auto& v : twice) v *= 2.0;
    EXPECT_DOUBLE_EQ(relative_mse(twice, x), 1.0);
    EXPECT_THROW(relative_mse(x, GrayImage(5, 7)), Error);
    EXPECT_THROW(relative_mse(x, GrayImage(7, 5)), Error);
}

TEST(RelativeMse, HandCase) {
    GrayImage t(1, 2), e(1, 2);
    t(0, 0) = 3.0;
    t(0, 1) = 4.0;
    e(0, 0) = 3.0;
    EXPECT_DOUBLE_EQ(relative_mse(e, t), 4.0 / 5.0);
}

TEST(Ssim, IdentityAndSymmetry) {
    const GrayImage a = random_image(24, 20, 2), b = random_image(24, 20, 3);
    EXPECT_EQ(ssim(a, a), 1.0);
    EXPECT_NEAR(ssim(a, b), ssim(b, a), 1e-12);
    EXPECT_LT(ssim(a, b), 0.5);
    EXPECT_THROW(ssim(GrayImage(10, 20), GrayImage(10, 20)), Error);
}

TEST(Ssim, ConstantImagesHandFormula) {
    const double c = 0.25, d = 0.5;
    const double c1 = 1e-4;
    const double expect = (2 * c * (c + d) + c1) / (c * c + (c + d) * (c + d) + c1);
    EXPECT_NEAR(ssim(GrayImage(16, 16, c), GrayImage(16, 16, c + d)), expect, 1e-12);
}

TEST(Ssim, OnePixelChangeDropsSlightly) {
    const GrayImage a = random_image(32, 32, 4);
    GrayImage b = a;
    b(16, 16) = 1.0 - b(16, 16);
    const double s = ssim(a, b);
    EXPECT_LT(s, 1.0);
    EXPECT_GT(s, 0.9);
}

TEST(Ssim, DynamicRangeScales) {
    GrayImage a = random_image(16, 16, 5), b = random_image(16, 16, 6);
    const double base = ssim(a, b);
    for (auto& v : a) v *= 255.0;
    for (auto& v : b) v *= 255.0;
    EXPECT_NEAR(ssim(a, b, {255.0}), base, 1e-12);
}

TEST(Features, ConstantImage) {
    const auto f = pooled_pixel_features(GrayImage(32, 32, 0.3));
    ASSERT_EQ(f.dimension(), 66u);
    for (std::size_t i = 0; i < 65; ++i) EXPECT_NEAR(f.values[i], 0.3, 1e-14);
    EXPECT_NEAR(f.values[65], 0.0, 1e-14);
}

TEST(Features, EightByEightIsIdentityThumbnail) {
    const GrayImage x = random_image(8, 8, 7);
    const auto f = pooled_pixel_features(x);
    for (std::size_t i = 0; i < 64; ++i) EXPECT_EQ(f.values[i], x[i]);
    double mean = 0.0, var = 0.0;
    for (auto v : x) mean += v / 64.0;
    for (auto v : x) var += (v - mean) * (v - mean) / 64.0;
    EXPECT_NEAR(f.values[64], mean, 1e-15);
    EXPECT_NEAR(f.values[65], std::sqrt(var), 1e-15);
}

TEST(Features, DistinctImagesDiffer) {
    EXPECT_NE(pooled_pixel_features(random_image(16, 16, 8)).values,
              pooled_pixel_features(random_image(16, 16, 9)).values);
    EXPECT_THROW(extract_features(GrayImage(4, 4), [](const GrayImage&) { return FeatureVector{}; }), Error);
    EXPECT_THROW(extract_features(GrayImage(4, 4), [](const GrayImage&) { return FeatureVector{{NAN}}; }), Error);
}

TEST(GaussianStats, MatchesBruteForce) {
    const auto feats = random_features(10, 5, 10);
    const auto s = gaussian_stats(feats);
    std::vector<double> mu(5, 0.0);
    for (const auto& f : feats)
        for (std::size_t d = 0; d < 5; ++d) mu[d] += f.values[d] / 10.0;
    Matrix cov(5);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 5; ++j) {
            for (const auto& f : feats) cov(i, j) += (f.values[i] - mu[i]) * (f.values[j] - mu[j]);
            cov(i, j) /= 9.0;
        }
    for (std::size_t d = 0; d < 5; ++d) EXPECT_NEAR(s.mean[d], mu[d], 1e-14);
    EXPECT_LE(max_diff(s.cov, cov), 1e-9 * cov.max_abs());
}

TEST(GaussianStats, TwoPointsAndCopies) {
    const auto s = gaussian_stats({FeatureVector{{0.0}}, FeatureVector{{2.0}}});
    EXPECT_DOUBLE_EQ(s.mean[0], 1.0);
    EXPECT_NEAR(s.cov(0, 0), 2.0, 1e-9);
    const auto same = gaussian_stats({FeatureVector{{1.0, 2.0}}, FeatureVector{{1.0, 2.0}}, FeatureVector{{1.0, 2.0}}});
    EXPECT_EQ(same.cov.max_abs(), 0.0);
    EXPECT_THROW(gaussian_stats({FeatureVector{{1.0}}}), Error);
    EXPECT_THROW(gaussian_stats({FeatureVector{{1.0}}, FeatureVector{{1.0, 2.0}}}), Error);
}

TEST(GaussianStats, PermutationInvariant) {
    auto feats = random_features(8, 3, 11);
    const auto a = gaussian_stats(feats);
    std::reverse(feats.begin(), feats.end());
    const auto b = gaussian_stats(feats);
    EXPECT_LE(max_diff(a.cov, b.cov), 1e-14);
}

TEST(Frechet, OneDimensionalAnalytic) {
    // (mu1 - mu2)^2 + s1^2 + s2^2 - 2 s1 s2
    EXPECT_NEAR(frechet_distance(stats1d(0.0, 1.0), stats1d(0.0, 1.0)), 0.0, 1e-12);
    EXPECT_NEAR(frechet_distance(stats1d(1.0, 1.0), stats1d(3.0, 1.0)), 4.0, 1e-12);
    EXPECT_NEAR(frechet_distance(stats1d(0.0, 1.0), stats1d(0.0, 4.0)), 1.0, 1e-12);
    EXPECT_NEAR(frechet_distance(stats1d(0.5, 0.25), stats1d(-1.0, 9.0)), 2.25 + 0.25 + 9.0 - 2.0 * 0.5 * 3.0, 1e-12);
}

TEST(Frechet, DiagonalCovariances) {
    const GaussianStats a{{0.0, 1.0}, Matrix::diagonal({1.0, 4.0})};
    const GaussianStats b{{1.0, 1.0}, Matrix::diagonal({9.0, 1.0})};
    EXPECT_NEAR(frechet_distance(a, b), 1.0 + (1 + 9 - 6) + (4 + 1 - 4), 1e-12);
}

TEST(Frechet, SymmetricAndZeroOnSelf) {
    const auto a = gaussian_stats(random_features(12, 4, 12));
    const auto b = gaussian_stats(random_features(12, 4, 13));
    EXPECT_NEAR(frechet_distance(a, b), frechet_distance(b, a), 1e-9);
    EXPECT_EQ(frechet_distance(a, a), 0.0);
    EXPECT_GT(frechet_distance(a, b), 0.0);
    EXPECT_THROW(frechet_distance(a, stats1d(0.0, 1.0)), Error);
}

TEST(SymmetricEigen, ReconstructsMatrix) {
    const Matrix m = random_spd(6, 14);
    const auto e = symmetric_eigen(m);
    Matrix rebuilt(6);
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < 6; ++j)
            for (std::size_t k = 0; k < 6; ++k) rebuilt(i, j) += e.vectors(i, k) * e.values[k] * e.vectors(j, k);
    EXPECT_LE(max_diff(rebuilt, m), 1e-12 * m.max_abs());
}

TEST(SymPsdSqrt, SquaresBack) {
    for (std::uint64_t seed : {15u, 16u, 17u}) {
        const Matrix m = random_spd(5, seed);
        const Matrix r = sym_psd_sqrt(m);
        EXPECT_LE(max_diff(r * r, m), 1e-8);
        for (std::size_t i = 0; i < 5; ++i)
            for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(r(i, j), r(j, i), 1e-12);
    }
    const Matrix d = sym_psd_sqrt(Matrix::diagonal({4.0, 9.0, 0.0}));
    EXPECT_NEAR(d(0, 0), 2.0, 1e-15);
    EXPECT_NEAR(d(1, 1), 3.0, 1e-15);
    EXPECT_EQ(d(2, 2), 0.0);
}

TEST(SymPsdSqrt, RejectsAsymmetricAndIndefinite) {
    Matrix a = Matrix::identity(2);
    a(0, 1) = 0.5;
    EXPECT_THROW(sym_psd_sqrt(a), Error);
    EXPECT_THROW(sym_psd_sqrt(Matrix::diagonal({1.0, -0.5})), Error);
    // Tiny negative round-off is clamped to zero.
    const Matrix c = sym_psd_sqrt(Matrix::diagonal({1.0, -1e-14}));
    EXPECT_EQ(c(1, 1), 0.0);
}

TEST(FeatureCsv, RoundTrip) {
    const auto dir = scratch_dir();
    std::vector<NamedFeatures> rows{{"a", FeatureVector{{0.1, 1.0 / 3.0}}}, {"b", FeatureVector{{-2.0, 1e-300}}}};
    imaging::save_csv(feature_table(rows), dir / "f.csv");
    const auto back = load_feature_csv(dir / "f.csv");
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[0].image_id, "a");
    EXPECT_EQ(back[0].features.values, rows[0].features.values);
    EXPECT_EQ(back[1].features.values, rows[1].features.values);
    imaging::write_text(dir / "bad.csv", "name,f0\na,1\n");
    EXPECT_THROW(load_feature_csv(dir / "bad.csv"), Error);
}
