// Alternating (1, 3) conductances on a ring: effective diffusivity three ways.
#include <cstdio>

#include "dyncond/corrector.hpp"
#include "dyncond/heatkernel.hpp"
#include "dyncond/walker.hpp"

using namespace dyncond;

int main() {
    auto spec = EnvModelSpec::periodic(2, {1, 3});

    // Twice the harmonic mean of the conductances.
    std::printf("network   Sigma = %.6f\n", 2.0 / (0.5 / 1 + 0.5 / 3));

    auto sp = build_env_chain(spec, 1);
    auto S = diffusion_matrix(sp, solve_poisson(sp));
    std::printf("corrector Sigma = %.6f\n", S(0, 0));

    const double T = 200;
    TorusSpec torus{1, 16, T};
    auto env = sample_environment(spec, torus, 7);
    rng::Stream rs(11);
    const int n = 4000;
    double m = 0, q = 0;
    for (int i = 0; i < n; ++i) {
        auto p = simulate_vsrw(env, 0, 0, T, rs);
        double x = p.final_displacement()[0];
        m += x;
        q += x * x;
    }
    m /= n;
    std::printf("walk      Var/T = %.6f (%d paths)\n", (q / n - m * m) / T, n);

    auto tm = solve_forward(env, 0, 8);
    std::printf("p_8(0, 0) = %.6f, row sum = %.15f\n", tm.P(0, 0), tm.P.row(0).sum());
}
