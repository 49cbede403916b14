#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "dyncond/environment.hpp"
#include "dyncond/stats.hpp"
#include "dyncond/walker.hpp"

using namespace dyncond;

TEST(Walker, NoRejectionsAtUpperBound) {
    TorusSpec t{2, 5, 10.0};
    auto env = sample_environment(EnvModelSpec::constant(2.0), t, 0);
    rng::Stream rs(1);
    WalkCounters ctr;
    auto p = simulate_vsrw(env, 0, 0.0, 10.0, rs, &ctr);
    EXPECT_GT(ctr.candidates, 0);
    EXPECT_EQ(ctr.candidates, ctr.accepted);
    EXPECT_EQ(long(p.jumps()), ctr.accepted);
}

TEST(Walker, ConstantVariance) {
    // d = 1, rate c each way: X_t is a difference of two Poisson(ct) counts.
    double c = 1.5, t1 = 2.0;
    TorusSpec t{1, 7, t1};
    auto env = sample_environment(EnvModelSpec::constant(c), t, 0);
    std::vector<double> x;
    rng::Stream root(42);
    for (int i = 0; i < 20000; ++i) {
        rng::Stream rs = root.split(std::uint64_t(i));
        x.push_back(simulate_vsrw(env, 3, 0.0, t1, rs).final_displacement()[0]);
    }
    EXPECT_NEAR(stats::mean(x), 0.0, 4 * std::sqrt(2 * c * t1 / 20000));
    EXPECT_NEAR(stats::variance(x), 2 * c * t1, 4 * 2 * c * t1 * std::sqrt(2.0 / 20000));
}

TEST(Walker, AcceptanceRateMatchesMeanRate) {
    TorusSpec t{2, 6, 20.0};
    auto env = sample_environment(EnvModelSpec::markov_flip(1, 3, 0.5), t, 2);
    WalkCounters ctr;
    rng::Stream root(3);
    for (int i = 0; i < 200; ++i) {
        rng::Stream rs = root.split(std::uint64_t(i));
        simulate_vsrw(env, i % 36, 0.0, 20.0, rs, &ctr);
    }
    double Lam = 2 * 2 * 3.0;
    double expected = ctr.rate_sum / (Lam * ctr.candidates);
    double acc = double(ctr.accepted) / ctr.candidates;
    EXPECT_NEAR(acc, expected, 4 * std::sqrt(expected * (1 - expected) / ctr.candidates));
}

TEST(Walker, UniformLawIsInvariant) {
    // Counting measure is invariant for the time-inhomogeneous walk.
    TorusSpec t{1, 8, 3.0};
    auto env = sample_environment(EnvModelSpec::markov_flip(1, 2, 1.0), t, 5);
    std::vector<double> counts(8, 0.0);
    rng::Stream root(6);
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        rng::Stream rs = root.split(std::uint64_t(i));
        auto p = simulate_vsrw(env, i % 8, 0.0, 3.0, rs);
        counts[p.site_at(3.0)] += 1;
    }
    EXPECT_GT(stats::chi2_counts_pvalue(counts, std::vector<double>(8, 1.0 / 8)), 0.01);
}

TEST(Walker, CsrwJumpCount) {
    TorusSpec t{2, 5, 50.0};
    auto env = sample_environment(EnvModelSpec::iid(1, 4), t, 8);
    std::vector<double> n;
    rng::Stream root(9);
    for (int i = 0; i < 2000; ++i) {
        rng::Stream rs = root.split(std::uint64_t(i));
        n.push_back(double(simulate_csrw(env, 0, 0.0, 50.0, rs).jumps()));
    }
    EXPECT_NEAR(stats::mean(n), 50.0, 4 * std::sqrt(50.0 / 2000));
}

TEST(Walker, UnwrappedDisplacementMatchesSite) {
    TorusSpec t{2, 4, 30.0};
    auto env = sample_environment(EnvModelSpec::iid(1, 2), t, 1);
    rng::Stream rs(10);
    auto p = simulate_vsrw(env, 5, 0.0, 30.0, rs);
    const Lattice& lat = *env.lattice;
    auto c0 = lat.coords(5);
    bool wrapped = false;
    for (std::size_t k = 0; k < p.jumps(); ++k) {
        std::vector<int> c(2);
        for (int i = 0; i < 2; ++i) {
            c[i] = c0[i] + p.disp[k * 2 + i];
            wrapped |= std::abs(p.disp[k * 2 + i]) >= 4;
        }
        ASSERT_EQ(lat.site(c), p.sites[k]);
    }
    EXPECT_TRUE(wrapped);
}

TEST(Walker, Errors) {
    TorusSpec t{1, 5, 1.0};
    auto env = sample_environment(EnvModelSpec::constant(1), t, 0);
    rng::Stream rs(0);
    EXPECT_THROW(simulate_vsrw(env, 0, 0.0, 1.5, rs), DomainError);
    EXPECT_THROW(simulate_vsrw(env, 5, 0.0, 1.0, rs), DomainError);
    EXPECT_THROW(simulate_csrw(env, 0, 0.8, 0.5, rs), DomainError);
}

TEST(Walker, TwoWalksAndCsv) {
    TorusSpec t{1, 9, 5.0};
    auto env = sample_environment(EnvModelSpec::constant(1), t, 0);
    auto [a, b] = simulate_two_walks(WalkKind::VSRW, env, 0, 4, 5.0, 12);
    EXPECT_NE(a.jump_t, b.jump_t);
    std::ostringstream os;
    write_paths_csv({a, b}, os);
    std::string out = os.str();
    EXPECT_EQ(out.rfind("path_id,jump_time,site_index,dx_1\n", 0), 0u);
    std::size_t rows = std::count(out.begin(), out.end(), '\n');
    EXPECT_EQ(rows, 1 + 2 + a.jumps() + b.jumps());
}
