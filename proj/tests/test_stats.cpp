#include <gtest/gtest.h>

#include <cmath>

#include "dyncond/rng.hpp"
#include "dyncond/stats.hpp"

using namespace dyncond;

TEST(Stats, LinearFitExact) {
    std::vector<double> x{1, 2, 3, 4}, y{3, 5, 7, 9};
    auto f = stats::linear_fit(x, y);
    EXPECT_NEAR(f.slope, 2.0, 1e-14);
    EXPECT_NEAR(f.intercept, 1.0, 1e-14);
    auto g = stats::loglog_fit({1, 10, 100}, {1, 0.1, 0.01});
    EXPECT_NEAR(g.slope, -1.0, 1e-12);
}

TEST(Stats, CovarianceOfConstantsIsZero) {
    std::vector<double> a(500, 0.1), b(500, 0.7);
    EXPECT_EQ(stats::covariance(a.data(), b.data(), a.size()), 0.0);
    auto e = stats::batch_covariance(a, b);
    EXPECT_EQ(e.value, 0.0);
    EXPECT_EQ(e.stderr_, 0.0);
}

TEST(Stats, BatchMeanCoverage) {
    // Mean of 1000 standard normals: stderr should be close to 1/sqrt(1000).
    rng::Stream s(5);
    std::vector<double> v(1000);
    for (auto& x : v) x = s.normal();
    auto e = stats::batch_mean(v);
    EXPECT_NEAR(e.stderr_, 1 / std::sqrt(1000.0), 0.4 / std::sqrt(1000.0));
    EXPECT_THROW(stats::batch_mean(std::vector<double>(10, 1.0)), DomainError);
}

TEST(Stats, KolmogorovSmirnov) {
    std::vector<double> z{0.0};
    EXPECT_NEAR(stats::ks_normal(z), 0.5, 1e-15);
    EXPECT_NEAR(stats::ks_pvalue(0.0, 100), 1.0, 1e-12);
    // Kolmogorov distribution: P(K > 1.36) ~ 0.049
    EXPECT_NEAR(stats::ks_pvalue(1.36 / std::sqrt(1e6), 1e6), 0.0494, 0.002);
    EXPECT_NEAR(stats::ks_two_sample({1, 2, 3}, {1, 2, 3}), 0.0, 1e-15);
    EXPECT_NEAR(stats::ks_two_sample({1, 2}, {3, 4}), 1.0, 1e-15);
}

TEST(Stats, ChiSquare) {
    EXPECT_NEAR(stats::chi2_pvalue(3.841458820694124, 1), 0.05, 1e-9);
    EXPECT_NEAR(stats::chi2_counts_pvalue({50, 50}, {0.5, 0.5}), 1.0, 1e-12);
}
