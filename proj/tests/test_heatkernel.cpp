#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/bessel.hpp>

#include "dyncond/environment.hpp"
#include "dyncond/heatkernel.hpp"
#include "dyncond/walker.hpp"

using namespace dyncond;

namespace {

// First-order substepping of d/dt P = P A(t), with Richardson extrapolation
// over step h and h/2. Substeps never straddle a breakpoint.
Eigen::MatrixXd substep_oracle(const ConductancePath& env, double s, double t, double h) {
    auto run = [&](double hh) {
        int n = env.lattice->sites();
        Eigen::MatrixXd P = Eigen::MatrixXd::Identity(n, n);
        std::vector<double> cuts{s};
        for (double b : env.breakpoints(s, t)) cuts.push_back(b);
        cuts.push_back(t);
        for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
            double len = cuts[k + 1] - cuts[k];
            if (len <= 0) continue;
            int m = int(std::ceil(len / hh));
            double dt = len / m;
            Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n);
            for (int x = 0; x < n; ++x)
                for (int c = 0; c < env.lattice->moves(); ++c) {
                    double mu = env.conductance(x, c, cuts[k]);
                    A(x, env.lattice->neighbor(x, c)) += mu;
                    A(x, x) -= mu;
                }
            Eigen::MatrixXd step = Eigen::MatrixXd::Identity(n, n) + dt * A;
            for (int i = 0; i < m; ++i) P = P * step;
        }
        return P;
    };
    return 2.0 * run(h / 2) - run(h);
}

std::vector<EnvModelSpec> env_suite() {
    return {EnvModelSpec::constant(1.3), EnvModelSpec::iid(1, 3), EnvModelSpec::periodic(2, {1, 3, 2, 1, 1, 2, 3, 3}),
            EnvModelSpec::markov_flip(1, 2, 2.0), EnvModelSpec::ginzburg_landau(1, 2, 0.02, 1.0)};
}

} // namespace

TEST(HeatKernel, ThreeRingClosedForm) {
    TorusSpec t{1, 3, 1.0};
    auto env = sample_environment(EnvModelSpec::constant(1.0), t, 0);
    auto tm = solve_forward(env, 0.0, 1.0);
    EXPECT_NEAR(tm.P(0, 0), 1.0 / 3 + 2.0 / 3 * std::exp(-3.0), 1e-13);
    EXPECT_NEAR(tm.P(0, 1), 1.0 / 3 - 1.0 / 3 * std::exp(-3.0), 1e-13);
}

TEST(HeatKernel, SubstepOracle) {
    TorusSpec t{2, 2, 0.6};  // four sites, doubled edges
    TorusSpec r{1, 5, 0.6};
    for (auto ts : {t, r})
        for (auto& sp : {EnvModelSpec::iid(1, 2), EnvModelSpec::markov_flip(1, 2, 3.0)}) {
            auto env = sample_environment(sp, ts, 21);
            auto tm = solve_forward(env, 0.1, 0.6);
            auto oracle = substep_oracle(env, 0.1, 0.6, 1e-5);
            EXPECT_LT((tm.P - oracle).cwiseAbs().maxCoeff(), 1e-6) << sp.name();
        }
}

TEST(HeatKernel, StochasticPositiveChapmanKolmogorov) {
    TorusSpec t{2, 4, 3.0};
    for (auto& sp : env_suite()) {
        auto env = sample_environment(sp, t, 4);
        auto a = solve_forward(env, 0.0, 1.2), b = solve_forward(env, 1.2, 2.5), ab = solve_forward(env, 0.0, 2.5);
        EXPECT_LT((a.P.rowwise().sum().array() - 1).abs().maxCoeff(), 1e-9) << sp.name();
        EXPECT_LT((a.P.colwise().sum().array() - 1).abs().maxCoeff(), 1e-9) << sp.name();
        EXPECT_GT(ab.P.minCoeff(), 0.0);
        EXPECT_LT((a.P * b.P - ab.P).cwiseAbs().maxCoeff(), 1e-9) << sp.name();
        if (sp.is_static()) EXPECT_LT((ab.P - ab.P.transpose()).cwiseAbs().maxCoeff(), 1e-9);
        EXPECT_LT((solve_forward(env, 1.0, 1.0).P - Eigen::MatrixXd::Identity(16, 16)).norm(), 1e-15);
    }
}

TEST(HeatKernel, UniformizationMatchesDense) {
    TorusSpec t{2, 6, 4.0};
    for (auto& sp : env_suite()) {
        auto env = sample_environment(sp, t, 13);
        auto rows = propagate_row(env, 7, 0.5, {1.0, 3.7});
        auto d1 = solve_forward(env, 0.5, 1.0), d2 = solve_forward(env, 0.5, 3.7);
        EXPECT_LT((rows[0] - d1.P.row(7).transpose()).cwiseAbs().maxCoeff(), 1e-10) << sp.name();
        EXPECT_LT((rows[1] - d2.P.row(7).transpose()).cwiseAbs().maxCoeff(), 1e-10) << sp.name();
    }
}

TEST(HeatKernel, TimeIntegralMatchesQuadrature) {
    TorusSpec t{3, 4, 3.0};
    auto env = sample_environment(EnvModelSpec::markov_flip(1, 2, 1.0), t, 2);
    Eigen::VectorXd I = integrate_row(env, 0, 3.0);
    // Simpson on a fine grid of dense solves.
    int m = 600;
    Eigen::VectorXd S = Eigen::VectorXd::Zero(64);
    Eigen::VectorXd prev = Eigen::VectorXd::Zero(64);
    prev[0] = 1;
    std::vector<double> grid;
    for (int k = 1; k <= m; ++k) grid.push_back(3.0 * k / m);
    auto rows = propagate_row(env, 0, 0.0, grid);
    for (int k = 0; k < m; ++k) {
        const Eigen::VectorXd& a = k == 0 ? prev : rows[k - 1];
        S += 0.5 * (a + rows[k]) * (3.0 / m);
    }
    // Trapezoid error is O(h^2) but the kernel has kinks at breakpoints.
    EXPECT_LT((I - S).cwiseAbs().maxCoeff(), 1e-4);
    EXPECT_NEAR(I.sum(), 3.0, 1e-10);
}

TEST(HeatKernel, MonteCarloOccupation) {
    TorusSpec t{1, 6, 2.0};
    auto env = sample_environment(EnvModelSpec::markov_flip(1, 2, 1.0), t, 31);
    auto tm = solve_forward(env, 0.0, 2.0);
    std::vector<double> counts(6, 0.0), probs(6);
    rng::Stream root(32);
    for (int i = 0; i < 100000; ++i) {
        rng::Stream rs = root.split(std::uint64_t(i));
        counts[simulate_vsrw(env, 2, 0.0, 2.0, rs).site_at(2.0)] += 1;
    }
    for (int y = 0; y < 6; ++y) probs[y] = tm.P(2, y);
    EXPECT_GT(stats::chi2_counts_pvalue(counts, probs), 0.01);
}

TEST(HeatKernel, Errors) {
    TorusSpec t{1, 5, 1.0};
    auto env = sample_environment(EnvModelSpec::constant(1), t, 0);
    EXPECT_THROW(solve_forward(env, 0.5, 0.2), DomainError);
    EXPECT_THROW(solve_forward(env, 0.0, 1.5), DomainError);
    EXPECT_THROW(solve_forward(env, 0.0, 1.0, 4), ResourceError);
    Eigen::MatrixXd bad(2, 2);
    bad << 1, 2, 2, 1;
    EXPECT_THROW(gaussian_kernel(bad, 1.0, Eigen::VectorXd::Zero(2)), DomainError);
    EXPECT_THROW(gaussian_kernel(Eigen::MatrixXd::Identity(2, 2), 0.0, Eigen::VectorXd::Zero(2)), DomainError);
    EXPECT_THROW(green_function(env, 0, 1, 10.0), Unsupported);
}

TEST(HeatKernel, GaussianKernelNormalized) {
    Eigen::MatrixXd S(2, 2);
    S << 2.0, 0.5, 0.5, 1.0;
    double h = 0.05, sum = 0, t = 0.7;
    for (double x = -15; x <= 15; x += h)
        for (double y = -15; y <= 15; y += h) sum += gaussian_kernel(S, t, Eigen::Vector2d(x, y)) * h * h;
    EXPECT_NEAR(sum, 1.0, 1e-6);
}

// Green's function of the rate-1 walk on Z^3:
// G(x) = int_0^inf prod_i e^{-2t} I_{x_i}(2t) dt.
double green_z3(const std::vector<int>& x) {
    auto f = [&](double t) {
        if (t == 0) return 0.0;
        double p = 1;
        for (int v : x) p *= std::exp(-2 * t) * boost::math::cyl_bessel_i(v, 2 * t);
        return p;
    };
    double T = 300;
    double head = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, 0.0, T, 15, 1e-12);
    Eigen::MatrixXd S = 2 * Eigen::MatrixXd::Identity(3, 3);
    Eigen::Vector3d z(x[0], x[1], x[2]);
    return head + gaussian_time_integral(S, z, T, INFINITY);
}

TEST(HeatKernel, GreenFunctionAgainstLattice) {
    TorusSpec t{3, 25, 1.0};
    auto env = sample_environment(EnvModelSpec::constant(1.0), t, 0);
    Eigen::MatrixXd S = 2 * Eigen::MatrixXd::Identity(3, 3);
    GreenField g(env, 0, 200.0, S), g2(env, 0, 400.0, S);
    const Lattice& lat = *env.lattice;
    for (int r : {3, 5, 8}) {
        int y = lat.site(std::vector<int>{r, 0, 0});
        auto v = g.at(y), v2 = g2.at(y);
        double exact = green_z3({r, 0, 0});
        EXPECT_NEAR(v.extrapolated(), exact, 5e-5) << r;
        EXPECT_LT(std::abs(v2.value - v.value), v.tail) << r;
        // Leading-order constant: C(Sigma) |x|^{-1}, within 15% at |x| = 8.
        if (r == 8) EXPECT_NEAR(v.extrapolated() * r / green_constant(S, Eigen::Vector3d(1, 0, 0)), 1.0, 0.15);
    }
    EXPECT_NEAR(green_constant(S, Eigen::Vector3d(1, 0, 0)), 1.0 / (4 * std::numbers::pi), 1e-15);
}

TEST(HeatKernel, EnvelopeFitGaussianRegime) {
    TorusSpec t{1, 161, 80.0};
    auto env = sample_environment(EnvModelSpec::constant(1.0), t, 0);
    std::vector<double> times{8, 16, 32, 64};
    auto rows = propagate_row(env, 0, 0.0, times);
    std::vector<KernelSample> s;
    for (std::size_t k = 0; k < times.size(); ++k)
        for (int D = 0; D <= 40; ++D) s.push_back({times[k], double(D), rows[k][D]});
    auto f = hk_envelope_fit(s, 1);
    EXPECT_NEAR(f.c3, 0.25, 0.05);
    EXPECT_LT(f.violation_fraction, 0.01);
    std::vector<KernelSample> flat{{1, 1, 0.1}, {2, 2, 0.05}, {3, 3, 0.01}, {4, 4, 0.001}};
    EXPECT_THROW(hk_envelope_fit(flat, 1), NumericError);
}

TEST(HeatKernel, LocalLimitConstant) {
    TorusSpec t{1, 120, 200.0};
    auto env = sample_environment(EnvModelSpec::constant(1.0), t, 0);
    Eigen::MatrixXd S = 2 * Eigen::MatrixXd::Identity(1, 1);
    std::vector<std::vector<double>> xs;
    for (double x = -2; x <= 2; x += 0.5) xs.push_back({x});
    double prev = INFINITY;
    for (double n : {4.0, 16.0, 64.0}) {
        auto r = llt_discrepancy({&env}, n, {1.0, 2.0}, xs, S, false);
        EXPECT_LT(r.sup, prev);
        prev = r.sup;
    }
    EXPECT_LT(prev, 0.05 * gaussian_kernel(S, 2.0, Eigen::VectorXd::Zero(1)));
}
