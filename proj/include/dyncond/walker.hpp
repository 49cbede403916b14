#pragma once

#include <algorithm>
#include <cstdio>
#include <ostream>
#include <vector>

#include "dyncond/conductance.hpp"
#include "dyncond/rng.hpp"

namespace dyncond {

enum class WalkKind { VSRW, CSRW };

inline const char* walk_name(WalkKind k) { return k == WalkKind::VSRW ? "VSRW" : "CSRW"; }

// Jump times and sites on the torus, plus the unwrapped displacement so
// winding around the torus is not lost.
struct WalkPath {
    int d = 1;
    int start_site = 0;
    double t0 = 0, t1 = 0;
    std::vector<double> jump_t;
    std::vector<int> sites;  // site after each jump
    std::vector<int> disp;   // cumulative displacement after each jump, d per jump

    std::size_t jumps() const { return jump_t.size(); }

    // Number of jumps at or before t.
    std::size_t count_at(double t) const {
        return std::size_t(std::upper_bound(jump_t.begin(), jump_t.end(), t) - jump_t.begin());
    }
    int site_at(double t) const {
        std::size_t k = count_at(t);
        return k == 0 ? start_site : sites[k - 1];
    }
    void displacement_at(double t, int* out) const {
        std::size_t k = count_at(t);
        for (int i = 0; i < d; ++i) out[i] = k == 0 ? 0 : disp[(k - 1) * d + i];
    }
    std::vector<int> displacement_at(double t) const {
        std::vector<int> v(d);
        displacement_at(t, v.data());
        return v;
    }
    std::vector<int> final_displacement() const { return displacement_at(t1); }
};

struct WalkCounters {
    long candidates = 0;
    long accepted = 0;
    double rate_sum = 0;  // sum of mu_x at candidate times
};

namespace detail {

inline void check_walk_args(const ConductancePath& env, int x0, double t0, double t1) {
    if (!(t0 >= 0 && t0 <= t1 && t1 <= env.horizon()))
        throw DomainError("walk: need 0 <= t0 <= t1 <= horizon");
    if (x0 < 0 || x0 >= env.lattice->sites()) throw DomainError("walk: start site outside torus");
}

inline void push_jump(WalkPath& p, const Lattice& lat, int& x, int code, double t, std::vector<int>& cur) {
    x = lat.neighbor(x, code);
    cur[Lattice::code_dir(code)] += Lattice::code_sign(code);
    p.jump_t.push_back(t);
    p.sites.push_back(x);
    p.disp.insert(p.disp.end(), cur.begin(), cur.end());
}

} // namespace detail

// Variable-speed walk by thinning a rate 2 d C_u Poisson clock: a candidate
// at time s moves across edge e with probability mu_e(s) / (2 d C_u).
inline WalkPath simulate_vsrw(const ConductancePath& env, int x0, double t0, double t1, rng::Stream& rs,
                              WalkCounters* ctr = nullptr) {
    detail::check_walk_args(env, x0, t0, t1);
    const Lattice& lat = *env.lattice;
    int d = lat.d(), moves = lat.moves();
    double Lam = 2.0 * d * env.C_u;
    WalkPath p;
    p.d = d;
    p.start_site = x0;
    p.t0 = t0;
    p.t1 = t1;
    std::vector<int> cur(d, 0);
    int x = x0;
    double t = t0;
    for (;;) {
        t += rs.exponential(Lam);
        if (t > t1) break;
        double u = rs.uniform() * Lam, acc = 0;
        int chosen = -1;
        for (int c = 0; c < moves; ++c) {
            acc += env.value_unchecked(env.base_edge(lat.edge_of_move(x, c)), t);
            if (u < acc) {
                chosen = c;
                break;
            }
        }
        if (ctr) {
            ++ctr->candidates;
            if (chosen >= 0) ++ctr->accepted;
            ctr->rate_sum += env.total_rate(x, t);
        }
        if (chosen >= 0) detail::push_jump(p, lat, x, chosen, t, cur);
    }
    return p;
}

// Constant-speed walk: Exp(1) holding times, neighbour chosen with
// probability mu_xy / mu_x evaluated at the jump time.
inline WalkPath simulate_csrw(const ConductancePath& env, int x0, double t0, double t1, rng::Stream& rs,
                              WalkCounters* ctr = nullptr) {
    detail::check_walk_args(env, x0, t0, t1);
    const Lattice& lat = *env.lattice;
    int d = lat.d(), moves = lat.moves();
    WalkPath p;
    p.d = d;
    p.start_site = x0;
    p.t0 = t0;
    p.t1 = t1;
    std::vector<int> cur(d, 0);
    double mu[6];
    int x = x0;
    double t = t0;
    for (;;) {
        t += rs.exponential(1.0);
        if (t > t1) break;
        double tot = 0;
        for (int c = 0; c < moves; ++c) tot += mu[c] = env.value_unchecked(env.base_edge(lat.edge_of_move(x, c)), t);
        double u = rs.uniform() * tot, acc = 0;
        int chosen = moves - 1;
        for (int c = 0; c < moves; ++c) {
            acc += mu[c];
            if (u < acc) {
                chosen = c;
                break;
            }
        }
        if (ctr) ++ctr->candidates, ++ctr->accepted;
        detail::push_jump(p, lat, x, chosen, t, cur);
    }
    return p;
}

inline WalkPath simulate_walk(WalkKind k, const ConductancePath& env, int x0, double t0, double t1,
                              rng::Stream& rs, WalkCounters* ctr = nullptr) {
    return k == WalkKind::VSRW ? simulate_vsrw(env, x0, t0, t1, rs, ctr)
                               : simulate_csrw(env, x0, t0, t1, rs, ctr);
}

// Two independent walks in the same environment.
inline std::pair<WalkPath, WalkPath> simulate_two_walks(WalkKind k, const ConductancePath& env, int x0, int y0,
                                                        double t1, std::uint64_t seed) {
    rng::Stream a = rng::Stream(seed).split("walk-a"), b = rng::Stream(seed).split("walk-b");
    auto p = simulate_walk(k, env, x0, 0.0, t1, a);
    auto q = simulate_walk(k, env, y0, 0.0, t1, b);
    return {std::move(p), std::move(q)};
}

// Columns: path_id, jump_time, site_index, dx_1..dx_d. The first row of each
// path is its start.
inline void write_paths_csv(const std::vector<WalkPath>& paths, std::ostream& os) {
    if (paths.empty()) return;
    int d = paths.front().d;
    os << "path_id,jump_time,site_index";
    for (int i = 1; i <= d; ++i) os << ",dx_" << i;
    os << "\n";
    char buf[64];
    for (std::size_t id = 0; id < paths.size(); ++id) {
        const auto& p = paths[id];
        std::snprintf(buf, sizeof buf, "%zu,%.17g,%d", id, p.t0, p.start_site);
        os << buf;
        for (int i = 0; i < d; ++i) os << ",0";
        os << "\n";
        for (std::size_t k = 0; k < p.jumps(); ++k) {
            std::snprintf(buf, sizeof buf, "%zu,%.17g,%d", id, p.jump_t[k], p.sites[k]);
            os << buf;
            for (int i = 0; i < d; ++i) os << "," << p.disp[k * d + i];
            os << "\n";
        }
    }
}

} // namespace dyncond
