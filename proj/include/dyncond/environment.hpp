#pragma once

#include <cstdio>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "dyncond/conductance.hpp"
#include "dyncond/gl.hpp"
#include "dyncond/rng.hpp"
#include "dyncond/stats.hpp"

namespace dyncond {

namespace detail {

inline ConductancePath blank_path(const EnvModelSpec& spec, const TorusSpec& t, int period) {
    ConductancePath c;
    c.torus = t;
    c.lattice = make_lattice(t);
    c.C_l = spec.C_l;
    c.C_u = spec.C_u;
    c.model = spec.name();
    c.set_tiling(period);
    return c;
}

} // namespace detail

inline ConductancePath sample_environment(const EnvModelSpec& spec, const TorusSpec& t,
                                          std::uint64_t seed) {
    spec.validate(t);
    rng::Stream rs = rng::Stream(seed).split("environment");
    return std::visit([&](auto& m) -> ConductancePath {
        using M = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<M, ConstantModel>) {
            auto c = detail::blank_path(spec, t, 1);
            c.values.assign(std::size_t(c.base_edges), m.c);
            return c;
        } else if constexpr (std::is_same_v<M, StaticIIDModel>) {
            auto c = detail::blank_path(spec, t, t.L);
            c.values.resize(std::size_t(c.base_edges));
            for (double& v : c.values) v = spec.C_l + (spec.C_u - spec.C_l) * rs.uniform();
            return c;
        } else if constexpr (std::is_same_v<M, StaticPeriodicModel>) {
            auto c = detail::blank_path(spec, t, m.period);
            c.values = m.pattern;
            return c;
        } else if constexpr (std::is_same_v<M, MarkovFlipModel>) {
            auto c = detail::blank_path(spec, t, m.period > 0 ? m.period : t.L);
            c.kind = ConductancePath::Kind::Records;
            c.offsets.push_back(0);
            for (int b = 0; b < c.base_edges; ++b) {
                rng::Stream es = rs.split(std::uint64_t(b));
                bool high = es.bernoulli(0.5);
                double s = 0;
                c.rec_t.push_back(0.0);
                c.rec_v.push_back(high ? m.b : m.a);
                for (;;) {
                    s += es.exponential(m.rate);
                    if (s > t.horizon) break;
                    high = !high;
                    c.rec_t.push_back(s);
                    c.rec_v.push_back(high ? m.b : m.a);
                }
                c.offsets.push_back(c.rec_t.size());
            }
            return c;
        } else if constexpr (std::is_same_v<M, MarkovModulatedModel>) {
            auto c = detail::blank_path(spec, t, m.period);
            c.kind = ConductancePath::Kind::Modulated;
            c.patterns = m.patterns;
            int n = int(m.patterns.size());
            int state = 0;
            if (n > 1) {
                Eigen::VectorXd pi = stationary_law(m.Q);
                double u = rs.uniform(), acc = 0;
                state = n - 1;
                for (int i = 0; i < n; ++i) {
                    acc += pi(i);
                    if (u < acc) {
                        state = i;
                        break;
                    }
                }
            }
            c.mod_t.push_back(0.0);
            c.mod_s.push_back(state);
            double s = 0;
            while (n > 1) {
                double out = -m.Q[state][state];
                if (out <= 0) break;
                s += rs.exponential(out);
                if (s > t.horizon) break;
                double u = rs.uniform() * out, acc = 0;
                int next = state;
                for (int j = 0; j < n; ++j) {
                    if (j == state) continue;
                    acc += m.Q[state][j];
                    next = j;
                    if (u < acc) break;
                }
                state = next;
                c.mod_t.push_back(s);
                c.mod_s.push_back(state);
            }
            return c;
        } else {
            GLPotential pot{m.c_minus, m.c_plus};
            auto f = simulate_gl(t, pot, m.dt, t.horizon, m.burn_in, rng::derive(seed, "gl"));
            auto c = gl_conductances(f);
            c.C_l = spec.C_l;
            c.C_u = spec.C_u;
            return c;
        }
    }, spec.model);
}

// Columns: edge_site_index, direction, breakpoint_time, value.
inline void write_environment_csv(const ConductancePath& c, std::ostream& os) {
    os << "edge_site_index,direction,breakpoint_time,value\n";
    char buf[128];
    int d = c.d();
    auto row = [&](int e, double t, double v) {
        std::snprintf(buf, sizeof buf, "%d,%d,%.17g,%.17g\n", e / d, e % d, t, v);
        os << buf;
    };
    for (int e = 0; e < c.lattice->edges(); ++e) {
        int b = c.base_edge(e);
        switch (c.kind) {
        case ConductancePath::Kind::Static:
            row(e, 0.0, c.values[b]);
            break;
        case ConductancePath::Kind::Records:
            for (std::size_t k = c.offsets[b]; k < c.offsets[b + 1]; ++k) row(e, c.rec_t[k], c.rec_v[k]);
            break;
        case ConductancePath::Kind::Grid: {
            double last = NAN;
            for (std::size_t k = 0; k < c.grid_t.size(); ++k) {
                double v = c.grid_v[k * c.base_edges + b];
                if (k == 0 || v != last) row(e, c.grid_t[k], v);
                last = v;
            }
            break;
        }
        case ConductancePath::Kind::Modulated: {
            double last = NAN;
            for (std::size_t k = 0; k < c.mod_t.size(); ++k) {
                double v = c.patterns[c.mod_s[k]][b];
                if (k == 0 || v != last) row(e, c.mod_t[k], v);
                last = v;
            }
            break;
        }
        }
    }
}

// A bounded local functional of the environment: either the conductance of
// one edge or the indicator that it exceeds a threshold.
struct Probe {
    int edge = 0;
    double time = 0;
    bool indicator = false;
    double threshold = 0;

    double eval(const ConductancePath& c) const {
        double v = c.conductance(edge, time);
        return indicator ? (v > threshold ? 1.0 : 0.0) : v;
    }
};

struct MixingEstimate {
    double covariance = 0;
    double stderr_ = 0;
    std::size_t samples = 0;
};

// |E[phi psi] - E phi E psi| estimated over independent realizations.
inline MixingEstimate empirical_mixing(const EnvModelSpec& spec, const TorusSpec& t, const Probe& phi,
                                       const Probe& psi, std::size_t samples, std::uint64_t seed) {
    require(samples >= 100, "empirical_mixing: need at least 100 samples");
    int ne = int(t.edges());
    require(phi.edge >= 0 && phi.edge < ne && psi.edge >= 0 && psi.edge < ne,
            "empirical_mixing: probe edge out of range");
    std::vector<double> a(samples), b(samples);
    for (std::size_t i = 0; i < samples; ++i) {
        auto env = sample_environment(spec, t, rng::derive(seed, std::uint64_t(i)));
        a[i] = phi.eval(env);
        b[i] = psi.eval(env);
    }
    auto e = stats::batch_covariance(a, b);
    return {std::abs(e.value), e.stderr_, samples};
}

} // namespace dyncond
