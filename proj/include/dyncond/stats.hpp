#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>

#include "dyncond/errors.hpp"

namespace dyncond::stats {

struct Estimate {
    double value = 0;
    double stderr_ = 0;
};

inline constexpr int kBatches = 20;

inline double mean(const std::vector<double>& v) {
    require<DomainError>(!v.empty(), "mean of empty sample");
    double s = 0;
    for (double x : v) s += x;
    return s / double(v.size());
}

inline double variance(const std::vector<double>& v) {
    require<DomainError>(v.size() >= 2, "variance needs two points");
    double m = mean(v), s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return s / double(v.size() - 1);
}

// Evaluates est on [0,n) and on B contiguous batches; the stderr is the
// spread of the batch estimates over sqrt(B).
inline Estimate batch_estimate(std::size_t n, const std::function<double(std::size_t, std::size_t)>& est,
                               int B = kBatches) {
    require<DomainError>(B >= kBatches, "batch means needs at least 20 batches");
    require<DomainError>(n >= std::size_t(2 * B), "batch means: sample too small");
    Estimate e;
    e.value = est(0, n);
    std::vector<double> b(B);
    for (int k = 0; k < B; ++k) b[k] = est(n * k / B, n * (k + 1) / B);
    e.stderr_ = std::sqrt(variance(b) / B);
    return e;
}

inline Estimate batch_mean(const std::vector<double>& v, int B = kBatches) {
    return batch_estimate(v.size(), [&](std::size_t a, std::size_t b) {
        double s = 0;
        for (std::size_t i = a; i < b; ++i) s += v[i];
        return s / double(b - a);
    }, B);
}

// Covariance of paired samples, shifted by the first pair so constant inputs
// give exactly zero.
inline double covariance(const double* x, const double* y, std::size_t n) {
    double sx = 0, sy = 0, sxy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double a = x[i] - x[0], b = y[i] - y[0];
        sx += a;
        sy += b;
        sxy += a * b;
    }
    double dn = double(n);
    return sxy / dn - (sx / dn) * (sy / dn);
}

inline Estimate batch_covariance(const std::vector<double>& x, const std::vector<double>& y,
                                 int B = kBatches) {
    require<DomainError>(x.size() == y.size(), "covariance: size mismatch");
    return batch_estimate(x.size(), [&](std::size_t a, std::size_t b) {
        return covariance(x.data() + a, y.data() + a, b - a) * double(b - a) / double(b - a - 1);
    }, B);
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

// Sup distance between the empirical CDF and Phi.
inline double ks_normal(std::vector<double> v) {
    require<DomainError>(!v.empty(), "ks: empty sample");
    std::sort(v.begin(), v.end());
    double n = double(v.size()), D = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        double F = normal_cdf(v[i]);
        D = std::max({D, (i + 1) / n - F, F - i / n});
    }
    return D;
}

inline double ks_two_sample(std::vector<double> a, std::vector<double> b) {
    require<DomainError>(!a.empty() && !b.empty(), "ks: empty sample");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    std::size_t i = 0, j = 0;
    double D = 0, na = double(a.size()), nb = double(b.size());
    while (i < a.size() && j < b.size()) {
        double x = std::min(a[i], b[j]);
        while (i < a.size() && a[i] <= x) ++i;
        while (j < b.size() && b[j] <= x) ++j;
        D = std::max(D, std::abs(i / na - j / nb));
    }
    return D;
}

// Asymptotic Kolmogorov tail with the usual small-sample adjustment.
inline double ks_pvalue(double D, double n_eff) {
    double s = std::sqrt(n_eff);
    double lam = (s + 0.12 + 0.11 / s) * D;
    if (lam < 0.2) return 1.0;
    double sum = 0, sign = 1;
    for (int k = 1; k <= 100; ++k) {
        double term = std::exp(-2.0 * k * k * lam * lam);
        sum += sign * term;
        sign = -sign;
        if (term < 1e-16) break;
    }
    return std::clamp(2.0 * sum, 0.0, 1.0);
}

inline double chi2_pvalue(double stat, double dof) {
    boost::math::chi_squared dist(dof);
    return boost::math::cdf(boost::math::complement(dist, stat));
}

// Pearson goodness of fit of counts against expected probabilities.
inline double chi2_counts_pvalue(const std::vector<double>& counts, const std::vector<double>& probs) {
    require<DomainError>(counts.size() == probs.size() && counts.size() >= 2, "chi2: bad input");
    double n = std::accumulate(counts.begin(), counts.end(), 0.0);
    double stat = 0;
    int cells = 0;
    for (std::size_t i = 0; i < counts.size(); ++i) {
        double e = n * probs[i];
        if (e <= 0) continue;
        stat += (counts[i] - e) * (counts[i] - e) / e;
        ++cells;
    }
    return chi2_pvalue(stat, cells - 1);
}

struct LineFit {
    double slope = 0, intercept = 0, slope_se = 0, r2 = 0;
};

inline LineFit linear_fit(const std::vector<double>& x, const std::vector<double>& y) {
    require<DomainError>(x.size() == y.size() && x.size() >= 2, "fit: need two points");
    double n = double(x.size());
    double mx = mean(x), my = mean(y), sxx = 0, sxy = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    require<NumericError>(sxx > 0, "fit: degenerate abscissae");
    LineFit f;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    double sse = std::max(0.0, syy - f.slope * sxy);
    f.slope_se = x.size() > 2 ? std::sqrt(sse / (n - 2) / sxx) : 0.0;
    f.r2 = syy > 0 ? 1.0 - sse / syy : 1.0;
    return f;
}

inline LineFit loglog_fit(const std::vector<double>& x, const std::vector<double>& y) {
    std::vector<double> lx, ly;
    for (std::size_t i = 0; i < x.size(); ++i) {
        require<NumericError>(x[i] > 0 && y[i] > 0, "log-log fit: non-positive value");
        lx.push_back(std::log(x[i]));
        ly.push_back(std::log(y[i]));
    }
    return linear_fit(lx, ly);
}

} // namespace dyncond::stats
