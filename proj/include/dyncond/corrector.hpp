#pragma once

// The environment seen from the particle on a finite periodic state space:
// states are (m, x) with m the modulation state and x a shift in the period
// cell. The corrector solves the Poisson equation for the local drift.

#include <cmath>
#include <cstdint>
#include <queue>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "dyncond/conductance.hpp"
#include "dyncond/environment.hpp"
#include "dyncond/parallel.hpp"
#include "dyncond/rng.hpp"
#include "dyncond/stats.hpp"
#include "dyncond/walker.hpp"

namespace dyncond {

using SpMat = Eigen::SparseMatrix<double, Eigen::RowMajor>;

struct EnvChainLimits {
    int max_modulation_states = 64;
    int max_states = 50000;
};

class EnvStateSpace {
public:
    enum class Source { Static, Global, EdgeBits };

    int d = 1, P = 1;
    Lattice lat;
    int n_mod = 1, n_shift = 1;
    std::vector<std::vector<double>> patterns;  // per m, per cell edge
    Eigen::MatrixXd Q;                          // n_mod x n_mod
    Eigen::VectorXd pi_Q;
    Source source = Source::Static;
    double bit_high = 0;  // EdgeBits: value meaning bit = 1
    double C_l = 1, C_u = 1;
    std::string model;
    SpMat Lhat;
    Eigen::VectorXd pi;

    int states() const { return n_mod * n_shift; }
    int state(int m, int x) const { return m * n_shift + x; }
    int mod_of(int s) const { return s / n_shift; }
    int shift_of(int s) const { return s % n_shift; }

    // mu_{0,y}(sigma) for the move y given by code.
    double mu(int s, int code) const { return patterns[mod_of(s)][lat.edge_of_move(shift_of(s), code)]; }
    int moved(int s, int code) const { return state(mod_of(s), lat.neighbor(shift_of(s), code)); }
    int shifted(int s, const std::vector<int>& y) const { return state(mod_of(s), lat.shift(shift_of(s), y)); }

    // State of the environment seen from `site` at time t.
    int state_of(const ConductancePath& env, double t, int site) const {
        std::vector<int> c = env.lattice->coords(site);
        int x = lat.site(c.data());
        int m = 0;
        if (source == Source::Global) m = env.modulation_state(t);
        if (source == Source::EdgeBits) {
            require<InternalError>(env.base_side == P, "state_of: environment tiling does not match the chain");
            env.check_time(t);
            for (int b = 0; b < lat.edges(); ++b)
                if (env.value_unchecked(b, t) == bit_high) m |= 1 << b;
        }
        return state(m, x);
    }
};

namespace detail {

inline std::vector<double> tile_pattern(const std::vector<double>& pat, int d, int P, int side) {
    if (P == side) return pat;
    Lattice big(d, side), small(d, P);
    std::vector<double> out(std::size_t(big.edges()));
    std::vector<int> c(d);
    for (int x = 0; x < big.sites(); ++x) {
        big.coords(x, c.data());
        int bx = small.site(c.data());
        for (int j = 0; j < d; ++j) out[std::size_t(x) * d + j] = pat[std::size_t(bx) * d + j];
    }
    return out;
}

inline bool strongly_connected(const SpMat& A) {
    int n = int(A.rows());
    SpMat At = SpMat(A.transpose());
    auto reach = [&](const SpMat& M) {
        std::vector<char> seen(n, 0);
        std::queue<int> q;
        q.push(0);
        seen[0] = 1;
        int cnt = 1;
        while (!q.empty()) {
            int s = q.front();
            q.pop();
            for (SpMat::InnerIterator it(M, s); it; ++it)
                if (it.col() != s && it.value() > 0 && !seen[it.col()]) {
                    seen[it.col()] = 1;
                    ++cnt;
                    q.push(int(it.col()));
                }
        }
        return cnt == n;
    };
    return reach(A) && reach(At);
}

inline SpMat assemble(const EnvStateSpace& sp, double jump_floor, bool jumps, bool q_part, bool subtract_floor) {
    int n = sp.states();
    std::vector<Eigen::Triplet<double>> tr;
    tr.reserve(std::size_t(n) * (sp.lat.moves() + sp.n_mod + 1));
    for (int s = 0; s < n; ++s) {
        double diag = 0;
        if (jumps)
            for (int c = 0; c < sp.lat.moves(); ++c) {
                double r = subtract_floor ? sp.mu(s, c) - jump_floor : (jump_floor > 0 ? jump_floor : sp.mu(s, c));
                if (r == 0) continue;
                tr.emplace_back(s, sp.moved(s, c), r);
                diag -= r;
            }
        if (q_part) {
            int m = sp.mod_of(s), x = sp.shift_of(s);
            for (int k = 0; k < sp.n_mod; ++k) {
                if (k == m || sp.Q(m, k) == 0) continue;
                tr.emplace_back(s, sp.state(k, x), sp.Q(m, k));
                diag -= sp.Q(m, k);
            }
        }
        tr.emplace_back(s, s, diag);
    }
    SpMat A(n, n);
    A.setFromTriplets(tr.begin(), tr.end());
    A.makeCompressed();
    return A;
}

} // namespace detail

// side: torus side of the state space; 0 means the period of the law.
inline EnvStateSpace build_env_chain(const EnvModelSpec& spec, int d, int side = 0, EnvChainLimits lim = {}) {
    EnvStateSpace sp;
    sp.d = d;
    sp.C_l = spec.C_l;
    sp.C_u = spec.C_u;
    sp.model = spec.name();
    int P = spec.period(0);
    if (std::holds_alternative<StaticIIDModel>(spec.model) || std::holds_alternative<GinzburgLandauModel>(spec.model))
        throw Unsupported("build_env_chain: environment is not periodic");
    if (auto* m = std::get_if<MarkovFlipModel>(&spec.model); m && m->period == 0) P = side;
    if (P <= 0) throw Unsupported("build_env_chain: environment has no finite period");
    if (side == 0) side = P;
    require(side % P == 0, "build_env_chain: side must be a multiple of the period");
    int vL = side;
    while (vL < 3) vL += side;
    spec.validate(TorusSpec{d, vL, 1.0});
    sp.P = side;
    sp.lat = Lattice(d, side);
    sp.n_shift = sp.lat.sites();
    int ne = sp.lat.edges();

    std::visit([&](auto& m) {
        using M = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<M, ConstantModel>) {
            sp.patterns = {std::vector<double>(std::size_t(ne), m.c)};
        } else if constexpr (std::is_same_v<M, StaticPeriodicModel>) {
            sp.patterns = {detail::tile_pattern(m.pattern, d, m.period, side)};
        } else if constexpr (std::is_same_v<M, MarkovModulatedModel>) {
            sp.source = EnvStateSpace::Source::Global;
            for (auto& p : m.patterns) sp.patterns.push_back(detail::tile_pattern(p, d, m.period, side));
            sp.n_mod = int(m.patterns.size());
            require<ResourceError>(sp.n_mod <= lim.max_modulation_states, "build_env_chain: too many modulation states");
            sp.Q.resize(sp.n_mod, sp.n_mod);
            for (int i = 0; i < sp.n_mod; ++i)
                for (int j = 0; j < sp.n_mod; ++j) sp.Q(i, j) = m.Q[i][j];
        } else if constexpr (std::is_same_v<M, MarkovFlipModel>) {
            require(side == P, "build_env_chain: MarkovFlip chain must use its own period");
            sp.source = EnvStateSpace::Source::EdgeBits;
            sp.bit_high = m.b;
            require<ModelError>(m.a != m.b, "build_env_chain: MarkovFlip with a == b");
            require<ResourceError>(ne < 31 && (1 << ne) <= lim.max_modulation_states,
                                   "build_env_chain: too many modulation states");
            sp.n_mod = 1 << ne;
            sp.Q = Eigen::MatrixXd::Zero(sp.n_mod, sp.n_mod);
            sp.patterns.resize(std::size_t(sp.n_mod));
            for (int s = 0; s < sp.n_mod; ++s) {
                sp.patterns[s].resize(std::size_t(ne));
                for (int b = 0; b < ne; ++b) {
                    sp.patterns[s][b] = (s >> b) & 1 ? m.b : m.a;
                    sp.Q(s, s ^ (1 << b)) = m.rate;
                }
                sp.Q(s, s) = -m.rate * ne;
            }
        }
    }, spec.model);
    if (sp.n_mod == 1) sp.Q = Eigen::MatrixXd::Zero(1, 1);
    require<ResourceError>(sp.states() <= lim.max_states, "build_env_chain: state space too large");

    if (sp.n_mod > 1) {
        std::vector<std::vector<double>> q(std::size_t(sp.n_mod), std::vector<double>(std::size_t(sp.n_mod)));
        for (int i = 0; i < sp.n_mod; ++i)
            for (int j = 0; j < sp.n_mod; ++j) q[i][j] = sp.Q(i, j);
        sp.pi_Q = stationary_law(q);
    } else {
        sp.pi_Q = Eigen::VectorXd::Ones(1);
    }
    sp.Lhat = detail::assemble(sp, 0.0, true, true, false);
    if (!detail::strongly_connected(sp.Lhat)) throw ModelError("build_env_chain: chain is reducible");
    sp.pi.resize(sp.states());
    for (int s = 0; s < sp.states(); ++s) sp.pi[s] = sp.pi_Q[sp.mod_of(s)] / sp.n_shift;
    Eigen::VectorXd bal = sp.Lhat.transpose() * sp.pi;
    if (bal.cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, sp.C_u * 2 * d))
        throw InternalError("build_env_chain: product law is not invariant");
    return sp;
}

// V_j(sigma) = mu_{0,e_j} - mu_{0,-e_j}; one column per direction.
inline Eigen::MatrixXd local_drift(const EnvStateSpace& sp) {
    Eigen::MatrixXd V(sp.states(), sp.d);
    for (int s = 0; s < sp.states(); ++s)
        for (int j = 0; j < sp.d; ++j) V(s, j) = sp.mu(s, 2 * j) - sp.mu(s, 2 * j + 1);
    return V;
}

inline double pi_norm(const EnvStateSpace& sp, const Eigen::MatrixXd& U) {
    double s = 0;
    for (int i = 0; i < U.rows(); ++i) s += sp.pi[i] * U.row(i).squaredNorm();
    return std::sqrt(s);
}

struct CorrectorSolution {
    double lambda = 0;
    Eigen::MatrixXd U;  // one column per direction
    double residual = 0;
    double norm_u = 0;
};

inline double max_abs(const Eigen::MatrixXd& M) { return M.size() ? M.cwiseAbs().maxCoeff() : 0.0; }

// (lambda - L) u = V
inline CorrectorSolution solve_resolvent(const EnvStateSpace& sp, double lambda) {
    if (!(lambda > 0) || !std::isfinite(lambda)) throw DomainError("solve_resolvent: lambda must be positive");
    int n = sp.states();
    Eigen::SparseMatrix<double> A = Eigen::SparseMatrix<double>(-sp.Lhat);
    for (int i = 0; i < n; ++i) A.coeffRef(i, i) += lambda;
    A.makeCompressed();
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
    lu.compute(A);
    if (lu.info() != Eigen::Success) throw NumericError("solve_resolvent: factorization failed");
    Eigen::MatrixXd V = local_drift(sp);
    Eigen::MatrixXd U = lu.solve(V);
    Eigen::MatrixXd R = V - A * U;
    U += lu.solve(R);
    CorrectorSolution out{lambda, U, max_abs(V - A * U), pi_norm(sp, U)};
    if (out.residual > 1e-10 * std::max(1.0, max_abs(V))) throw NumericError("solve_resolvent: residual too large");
    return out;
}

// L u = -V with pi.u = 0, via the bordered system [L 1; pi^T 0].
inline CorrectorSolution solve_poisson(const EnvStateSpace& sp) {
    int n = sp.states();
    std::vector<Eigen::Triplet<double>> tr;
    for (int k = 0; k < sp.Lhat.outerSize(); ++k)
        for (SpMat::InnerIterator it(sp.Lhat, k); it; ++it) tr.emplace_back(int(it.row()), int(it.col()), it.value());
    for (int i = 0; i < n; ++i) {
        tr.emplace_back(i, n, 1.0);
        tr.emplace_back(n, i, sp.pi[i]);
    }
    Eigen::SparseMatrix<double> A(n + 1, n + 1);
    A.setFromTriplets(tr.begin(), tr.end());
    A.makeCompressed();
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
    lu.compute(A);
    if (lu.info() != Eigen::Success) throw ModelError("solve_poisson: bordered system is singular");
    Eigen::MatrixXd V = local_drift(sp);
    Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(n + 1, sp.d);
    rhs.topRows(n) = -V;
    Eigen::MatrixXd X = lu.solve(rhs);
    X += lu.solve(Eigen::MatrixXd(rhs - A * X));
    CorrectorSolution out;
    out.U = X.topRows(n);
    out.residual = std::max(max_abs(sp.Lhat * out.U + V), std::abs((sp.pi.transpose() * out.U).maxCoeff()));
    out.norm_u = pi_norm(sp, out.U);
    if (!(out.residual <= 1e-10 * std::max(1.0, max_abs(V)))) throw NumericError("solve_poisson: residual too large");
    return out;
}

// chi(0, y, sigma) = u(sigma + y) - u(sigma), one entry per direction.
inline Eigen::VectorXd corrector_value(const EnvStateSpace& sp, const CorrectorSolution& sol, int s,
                                       const std::vector<int>& y) {
    if (int(y.size()) != sp.d) throw DomainError("corrector: displacement has wrong dimension");
    if (s < 0 || s >= sp.states()) throw DomainError("corrector: state out of range");
    return (sol.U.row(sp.shifted(s, y)) - sol.U.row(s)).transpose();
}

// Sigma_ij = sum_sigma pi(sigma) sum_y mu_{0y}(sigma) Phi_i Phi_j with
// Phi(y, sigma) = y + u(sigma + y) - u(sigma), plus the modulation term
// sum_sigma pi(sigma) sum_m' Q(m, m') du_i du_j.
inline Eigen::MatrixXd diffusion_matrix(const EnvStateSpace& sp, const CorrectorSolution& sol) {
    Eigen::MatrixXd S = Eigen::MatrixXd::Zero(sp.d, sp.d);
    Eigen::VectorXd phi(sp.d);
    for (int s = 0; s < sp.states(); ++s)
        for (int c = 0; c < sp.lat.moves(); ++c) {
            phi = (sol.U.row(sp.moved(s, c)) - sol.U.row(s)).transpose();
            phi[Lattice::code_dir(c)] += Lattice::code_sign(c);
            S += sp.pi[s] * sp.mu(s, c) * phi * phi.transpose();
        }
    // u depends on the current modulation state, so M also jumps when the
    // environment switches; those jumps carry quadratic variation too.
    for (int s = 0; s < sp.states(); ++s) {
        int m = sp.mod_of(s), x = sp.shift_of(s);
        for (int k = 0; k < sp.n_mod; ++k) {
            if (k == m || sp.Q(m, k) == 0) continue;
            phi = (sol.U.row(sp.state(k, x)) - sol.U.row(s)).transpose();
            S += sp.pi[s] * sp.Q(m, k) * phi * phi.transpose();
        }
    }
    S = 0.5 * (S + S.transpose());
    Eigen::LLT<Eigen::MatrixXd> llt(S);
    if (llt.info() != Eigen::Success) throw NumericError("diffusion matrix is not positive definite");
    return S;
}

struct DirichletForm {
    double matrix_form = 0;  // <f, -L f>_pi
    double half_sum = 0;     // 1/2 sum pi(sigma) rate (f(sigma') - f(sigma))^2
};

inline DirichletForm dirichlet_form(const EnvStateSpace& sp, const Eigen::VectorXd& f) {
    require<DomainError>(f.size() == sp.states(), "dirichlet_form: wrong length");
    DirichletForm out;
    Eigen::VectorXd Lf = sp.Lhat * f;
    out.matrix_form = -(sp.pi.array() * f.array() * Lf.array()).sum();
    double h = 0;
    for (int s = 0; s < sp.states(); ++s) {
        for (int c = 0; c < sp.lat.moves(); ++c) {
            double g = f[sp.moved(s, c)] - f[s];
            h += sp.pi[s] * sp.mu(s, c) * g * g;
        }
        int m = sp.mod_of(s), x = sp.shift_of(s);
        for (int k = 0; k < sp.n_mod; ++k) {
            if (k == m) continue;
            double g = f[sp.state(k, x)] - f[s];
            h += sp.pi[s] * sp.Q(m, k) * g * g;
        }
    }
    out.half_sum = 0.5 * h;
    return out;
}

inline double h1_norm(const EnvStateSpace& sp, const Eigen::VectorXd& f) {
    return std::sqrt(std::max(0.0, dirichlet_form(sp, f).matrix_form));
}

struct DecompositionReport {
    double normality_defect = 0;
    double sector_constant = 0;
    double sector_bound = 0;
    double equiv_min = 0, equiv_max = 0;
    double equiv_lo = 0, equiv_hi = 0;
    bool sector_ok = false, equiv_ok = false;
};

// L = L0 + B with L0 the modulation part plus a rate-C_l Laplacian and B the
// remaining (mu - C_l) jumps. Sector and equivalence constants are taken as
// sup / inf over random probe functions.
inline DecompositionReport check_decomposition(const EnvStateSpace& sp, int probes, std::uint64_t seed) {
    require(probes >= 1, "check_decomposition: need probes");
    SpMat L0 = detail::assemble(sp, sp.C_l, true, true, false);
    SpMat B = detail::assemble(sp, sp.C_l, true, false, true);
    Eigen::VectorXd pinv = sp.pi.cwiseInverse();
    SpMat L0t = SpMat(L0.transpose());
    SpMat adj = SpMat(pinv.asDiagonal() * L0t * sp.pi.asDiagonal());
    SpMat comm = SpMat(L0 * adj) - SpMat(adj * L0);
    DecompositionReport r;
    for (int k = 0; k < comm.outerSize(); ++k)
        for (SpMat::InnerIterator it(comm, k); it; ++it) r.normality_defect = std::max(r.normality_defect, std::abs(it.value()));

    auto ip = [&](const Eigen::VectorXd& a, const Eigen::VectorXd& b) { return (sp.pi.array() * a.array() * b.array()).sum(); };
    rng::Stream rs = rng::Stream(seed).split("decomposition");
    int n = sp.states();
    r.equiv_min = INFINITY;
    r.equiv_max = 0;
    for (int p = 0; p < probes; ++p) {
        Eigen::VectorXd f(n), g(n);
        for (int i = 0; i < n; ++i) f[i] = rs.normal();
        for (int i = 0; i < n; ++i) g[i] = rs.normal();
        double ef = -ip(f, L0 * f), eg = -ip(g, L0 * g);
        if (ef <= 1e-14 || eg <= 1e-14) continue;
        double bfg = ip(f, B * g);
        r.sector_constant = std::max(r.sector_constant, bfg * bfg / (ef * eg));
        double ratio = -ip(f, sp.Lhat * f) / ef;
        r.equiv_min = std::min(r.equiv_min, ratio);
        r.equiv_max = std::max(r.equiv_max, ratio);
    }
    r.sector_bound = sp.C_u * sp.C_u * sp.d / (2 * sp.C_l * sp.C_l);
    r.equiv_lo = sp.C_l / sp.C_u;
    r.equiv_hi = sp.C_u / sp.C_l;
    r.sector_ok = r.sector_constant <= r.sector_bound;
    r.equiv_ok = r.equiv_min >= r.equiv_lo - 1e-12 && r.equiv_max <= r.equiv_hi + 1e-12;
    return r;
}

// e^{tL} by uniformization on the sparse generator, for ||int_0^t P_s V ds||.
class ChainPropagator {
public:
    explicit ChainPropagator(const SpMat& L) : L_(L) {
        lam_ = 0;
        for (int i = 0; i < L.rows(); ++i) lam_ = std::max(lam_, -L.coeff(i, i));
        if (lam_ <= 0) lam_ = 1.0;
    }
    // V <- P_h V, I += int_0^h P_s V ds
    void advance(Eigen::MatrixXd& V, double h, Eigen::MatrixXd& I) const {
        const double chunk = 40.0 / lam_;
        while (h > 0) {
            double dh = std::min(h, chunk);
            double m = lam_ * dh, w = std::exp(-m), cum = 0;
            Eigen::MatrixXd term = V, acc = Eigen::MatrixXd::Zero(V.rows(), V.cols());
            Eigen::MatrixXd iacc = acc;
            for (int k = 0;; ++k) {
                cum += w;
                acc += w * term;
                iacc += std::max(0.0, 1.0 - cum) * term;
                if (k > m && (w < 1e-18 || 1.0 - cum < 1e-17)) break;
                term = term + (L_ * term) / lam_;
                w *= m / double(k + 1);
            }
            I += iacc / lam_;
            V = acc;
            h -= dh;
        }
    }

private:
    const SpMat& L_;
    double lam_;
};

struct PtvReport {
    std::vector<double> t, integral_norm, ptv_norm;
    double v_norm = 0;
    double alpha_hat = 0;  // slope of log ||int P_s V|| against log t on the fit window
    std::vector<double> lambda, norm_u, lambda_u2;
    double alpha_resolvent = 0;  // slope of log ||u_lambda|| against log(1/lambda)
};

inline PtvReport ptv_growth(const EnvStateSpace& sp, std::vector<double> t_grid, const std::vector<double>& lambdas,
                            double fit_lo = 1.0, double fit_hi = 1e3) {
    std::sort(t_grid.begin(), t_grid.end());
    PtvReport r;
    Eigen::MatrixXd V = local_drift(sp);
    r.v_norm = pi_norm(sp, V);
    Eigen::MatrixXd I = Eigen::MatrixXd::Zero(V.rows(), V.cols());
    ChainPropagator prop(sp.Lhat);
    double cur = 0;
    std::vector<double> fx, fy;
    for (double t : t_grid) {
        require<DomainError>(t > 0, "ptv_growth: times must be positive");
        prop.advance(V, t - cur, I);
        cur = t;
        r.t.push_back(t);
        r.integral_norm.push_back(pi_norm(sp, I));
        r.ptv_norm.push_back(pi_norm(sp, V));
        if (t >= fit_lo && t <= fit_hi && r.integral_norm.back() > 0) {
            fx.push_back(t);
            fy.push_back(r.integral_norm.back());
        }
    }
    if (fx.size() >= 2) r.alpha_hat = stats::loglog_fit(fx, fy).slope;
    std::vector<double> lx, ly;
    for (double l : lambdas) {
        auto sol = solve_resolvent(sp, l);
        r.lambda.push_back(l);
        r.norm_u.push_back(sol.norm_u);
        r.lambda_u2.push_back(l * sol.norm_u * sol.norm_u);
        if (sol.norm_u > 0) {
            lx.push_back(1.0 / l);
            ly.push_back(sol.norm_u);
        }
    }
    if (lx.size() >= 2) r.alpha_resolvent = stats::loglog_fit(lx, ly).slope;
    return r;
}

// M_t = X_t + u(eta_t) - u(eta_0) along a path; one row per requested time.
inline Eigen::MatrixXd martingale_values(const EnvStateSpace& sp, const CorrectorSolution& sol,
                                         const ConductancePath& env, const WalkPath& path,
                                         const std::vector<double>& times) {
    Eigen::MatrixXd M(times.size(), sp.d);
    int s0 = sp.state_of(env, path.t0, path.start_site);
    std::vector<int> dx(sp.d);
    for (std::size_t k = 0; k < times.size(); ++k) {
        path.displacement_at(times[k], dx.data());
        int s = sp.state_of(env, times[k], path.site_at(times[k]));
        for (int j = 0; j < sp.d; ++j) M(Eigen::Index(k), j) = dx[j] + sol.U(s, j) - sol.U(s0, j);
    }
    return M;
}

struct MartingaleReport {
    std::vector<double> times;
    std::vector<std::vector<double>> inc_mean, inc_stderr;  // per time, per direction
    double var_ratio = 0, var_ratio_stderr = 0, expected = 0;  // Var(v.M_T)/T and v.Sigma.v
    double lag1_corr = 0, lag1_stderr = 0;
    int paths = 0;
};

// Increments of M are checked at every grid time. Each path runs in an
// independent environment (annealed); env_horizon_pad lets callers keep
// the environment horizon at the final time.
inline MartingaleReport martingale_check(const EnvStateSpace& sp, const CorrectorSolution& sol, const EnvModelSpec& spec,
                                         const TorusSpec& torus, const Eigen::MatrixXd& Sigma, int paths,
                                         std::uint64_t seed, std::vector<double> times, const Eigen::VectorXd& v,
                                         int threads = 1) {
    require(paths >= 2 * stats::kBatches, "martingale_check: too few paths");
    require(!times.empty(), "martingale_check: empty time grid");
    std::sort(times.begin(), times.end());
    double T = times.back();
    TorusSpec ts = torus;
    ts.horizon = std::max(T, 1.0 * std::ceil(T));
    int K = int(std::floor(T));
    std::vector<double> unit;
    for (int k = 0; k <= K; ++k) unit.push_back(double(k));
    std::size_t nt = times.size();
    std::vector<double> vals(std::size_t(paths) * nt * sp.d), proj(paths), lagA(paths), lagB(paths);
    parallel_for(std::size_t(paths), threads, [&](std::size_t i) {
        std::uint64_t ps = rng::derive(seed, std::uint64_t(i));
        auto env = sample_environment(spec, ts, rng::derive(ps, "env"));
        rng::Stream rs = rng::Stream(ps).split("walk");
        auto path = simulate_vsrw(env, 0, 0.0, T, rs);
        Eigen::MatrixXd M = martingale_values(sp, sol, env, path, times);
        for (std::size_t k = 0; k < nt; ++k)
            for (int j = 0; j < sp.d; ++j) vals[(i * nt + k) * sp.d + j] = M(Eigen::Index(k), j);
        proj[i] = M.row(Eigen::Index(nt - 1)).dot(v);
        if (K >= 2) {
            Eigen::MatrixXd Mu = martingale_values(sp, sol, env, path, unit);
            // pooled consecutive unit increments, projected on v
            double a = (Mu.row(1) - Mu.row(0)).dot(v), b = (Mu.row(2) - Mu.row(1)).dot(v);
            lagA[i] = a;
            lagB[i] = b;
        }
    });
    MartingaleReport r;
    r.times = times;
    r.paths = paths;
    for (std::size_t k = 0; k < nt; ++k) {
        std::vector<double> m, se;
        for (int j = 0; j < sp.d; ++j) {
            std::vector<double> col(paths);
            for (int i = 0; i < paths; ++i) col[i] = vals[(std::size_t(i) * nt + k) * sp.d + j];
            auto e = stats::batch_mean(col);
            m.push_back(e.value);
            se.push_back(e.stderr_);
        }
        r.inc_mean.push_back(m);
        r.inc_stderr.push_back(se);
    }
    auto var = stats::batch_estimate(proj.size(), [&](std::size_t a, std::size_t b) {
        std::vector<double> s(proj.begin() + std::ptrdiff_t(a), proj.begin() + std::ptrdiff_t(b));
        return stats::variance(s) / T;
    });
    r.var_ratio = var.value;
    r.var_ratio_stderr = var.stderr_;
    r.expected = v.dot(Sigma * v);
    if (K >= 2) {
        auto c = stats::batch_estimate(lagA.size(), [&](std::size_t a, std::size_t b) {
            std::vector<double> x(lagA.begin() + std::ptrdiff_t(a), lagA.begin() + std::ptrdiff_t(b));
            std::vector<double> y(lagB.begin() + std::ptrdiff_t(a), lagB.begin() + std::ptrdiff_t(b));
            double cv = stats::covariance(x.data(), y.data(), x.size());
            double sx = stats::variance(x), sy = stats::variance(y);
            return sx > 0 && sy > 0 ? cv / std::sqrt(sx * sy) : 0.0;
        });
        r.lag1_corr = c.value;
        r.lag1_stderr = c.stderr_;
    }
    return r;
}

// max |chi(0, x+y, sigma) - chi(0, x, sigma) - chi(0, y, sigma + x)| over random triples.
inline double cocycle_error(const EnvStateSpace& sp, const CorrectorSolution& sol, int triples, std::uint64_t seed) {
    rng::Stream rs = rng::Stream(seed).split("cocycle");
    double err = 0;
    for (int k = 0; k < triples; ++k) {
        int s = int(rs.below(std::uint64_t(sp.states())));
        std::vector<int> x(sp.d), y(sp.d), xy(sp.d);
        for (int i = 0; i < sp.d; ++i) {
            x[i] = int(rs.below(7)) - 3;
            y[i] = int(rs.below(7)) - 3;
            xy[i] = x[i] + y[i];
        }
        Eigen::VectorXd lhs = corrector_value(sp, sol, s, xy);
        Eigen::VectorXd rhs = corrector_value(sp, sol, s, x) + corrector_value(sp, sol, sp.shifted(s, x), y);
        err = std::max(err, (lhs - rhs).cwiseAbs().maxCoeff());
    }
    return err;
}

} // namespace dyncond
