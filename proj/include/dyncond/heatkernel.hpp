#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <optional>
#include <ostream>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>
#include <boost/math/special_functions/gamma.hpp>

#include "dyncond/conductance.hpp"
#include "dyncond/stats.hpp"

namespace dyncond {

// Generator at time t: A(x,y) = sum of mu over edges joining x and y,
// A(x,x) = -mu_x.
inline Eigen::MatrixXd generator_matrix(const ConductancePath& env, double t) {
    const Lattice& lat = *env.lattice;
    int n = lat.sites();
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n);
    for (int x = 0; x < n; ++x)
        for (int c = 0; c < lat.moves(); ++c) {
            double mu = env.conductance(x, c, t);
            A(x, lat.neighbor(x, c)) += mu;
            A(x, x) -= mu;
        }
    return A;
}

struct TransitionMatrix {
    double s = 0, t = 0;
    Eigen::MatrixXd P;  // P(x, y) = p(s, x; t, y)
};

inline constexpr int kDefaultSiteCap = 20000;

// Constant-coefficient pieces between consecutive breakpoints in [s, t].
inline std::vector<double> constant_pieces(const ConductancePath& env, double s, double t) {
    std::vector<double> cuts{s};
    for (double b : env.breakpoints(s, t)) cuts.push_back(b);
    cuts.push_back(t);
    return cuts;
}

inline TransitionMatrix solve_forward(const ConductancePath& env, double s, double t,
                                      int site_cap = kDefaultSiteCap) {
    if (!(s >= 0 && s <= t && t <= env.horizon())) throw DomainError("solve_forward: need 0 <= s <= t <= horizon");
    int n = env.lattice->sites();
    if (n > site_cap) throw ResourceError("solve_forward: torus exceeds the site cap");
    TransitionMatrix tm{s, t, Eigen::MatrixXd::Identity(n, n)};
    auto cuts = constant_pieces(env, s, t);
    for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
        double a = cuts[k], b = cuts[k + 1];
        if (b <= a) continue;
        Eigen::MatrixXd A = generator_matrix(env, a);
        if (!env.is_static() && generator_matrix(env, 0.5 * (a + b)) != A)
            throw InternalError("solve_forward: environment not constant on a piece");
        Eigen::MatrixXd E = (A * (b - a)).exp();
        tm.P = tm.P * E;
    }
    return tm;
}

// Columns: s, t, x_index, y_index, p.
inline void write_kernel_csv(const TransitionMatrix& tm, std::ostream& os, bool header = true) {
    if (header) os << "s,t,x_index,y_index,p\n";
    char buf[160];
    for (int x = 0; x < tm.P.rows(); ++x)
        for (int y = 0; y < tm.P.cols(); ++y) {
            std::snprintf(buf, sizeof buf, "%.17g,%.17g,%d,%d,%.17g\n", tm.s, tm.t, x, y, tm.P(x, y));
            os << buf;
        }
}

// Sparse action of the generator frozen at one time, used for uniformization:
// e^{hA} v = sum_k Pois(Lam h; k) (I + A/Lam)^k v.
class FrozenGenerator {
public:
    FrozenGenerator(const ConductancePath& env, double t) : lat_(env.lattice.get()) {
        int n = lat_->sites(), m = lat_->moves();
        mu_.resize(std::size_t(n) * m);
        lam_ = 0;
        for (int x = 0; x < n; ++x) {
            double tot = 0;
            for (int c = 0; c < m; ++c) tot += mu_[std::size_t(x) * m + c] = env.conductance(x, c, t);
            lam_ = std::max(lam_, tot);
        }
    }
    double lambda() const { return lam_; }

    // out = (I + A/Lam) v
    void step(const Eigen::VectorXd& v, Eigen::VectorXd& out) const {
        int n = lat_->sites(), m = lat_->moves();
        double inv = 1.0 / lam_;
        for (int x = 0; x < n; ++x) {
            double acc = 0;
            const double* mu = &mu_[std::size_t(x) * m];
            for (int c = 0; c < m; ++c) acc += mu[c] * (v[lat_->neighbor(x, c)] - v[x]);
            out[x] = v[x] + inv * acc;
        }
    }

    // v <- e^{hA} v; if integral is given, adds int_0^h e^{uA} v du to it.
    void advance(Eigen::VectorXd& v, double h, Eigen::VectorXd* integral = nullptr) const {
        const double chunk = 40.0 / lam_;
        while (h > 0) {
            double dh = std::min(h, chunk);
            advance_chunk(v, dh, integral);
            h -= dh;
        }
    }

private:
    void advance_chunk(Eigen::VectorXd& v, double h, Eigen::VectorXd* integral) const {
        double m = lam_ * h;
        Eigen::VectorXd term = v, next(v.size()), acc = Eigen::VectorXd::Zero(v.size());
        Eigen::VectorXd iacc;
        if (integral) iacc = Eigen::VectorXd::Zero(v.size());
        double w = std::exp(-m), cum = 0;
        for (int k = 0;; ++k) {
            cum += w;
            acc += w * term;
            if (integral) iacc += std::max(0.0, 1.0 - cum) * term;
            if (k > m && (w < 1e-18 || 1.0 - cum < 1e-17)) break;
            if (k > 100000) throw NumericError("uniformization did not converge");
            step(term, next);
            term.swap(next);
            w *= m / double(k + 1);
        }
        if (integral) *integral += (h / m) * iacc;
        v = acc;
    }

    const Lattice* lat_;
    std::vector<double> mu_;
    double lam_ = 0;
};

// Row p(s, x; t_k, .) at each requested (sorted) time.
inline std::vector<Eigen::VectorXd> propagate_row(const ConductancePath& env, int x, double s,
                                                  const std::vector<double>& times) {
    int n = env.lattice->sites();
    require<DomainError>(x >= 0 && x < n, "propagate_row: bad source");
    require<DomainError>(std::is_sorted(times.begin(), times.end()) && (times.empty() || times.front() >= s),
                         "propagate_row: times must be sorted and >= s");
    std::vector<Eigen::VectorXd> out;
    Eigen::VectorXd v = Eigen::VectorXd::Zero(n);
    v[x] = 1.0;
    double cur = s;
    std::optional<FrozenGenerator> G;
    if (env.is_static()) G.emplace(env, 0.0);
    for (double T : times) {
        if (!env.is_static() && T > env.horizon()) throw DomainError("propagate_row: time beyond horizon");
        auto cuts = env.is_static() ? std::vector<double>{cur, T} : constant_pieces(env, cur, T);
        for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
            if (cuts[k + 1] <= cuts[k]) continue;
            if (!env.is_static()) G.emplace(env, cuts[k]);
            G->advance(v, cuts[k + 1] - cuts[k]);
        }
        cur = T;
        out.push_back(v);
    }
    return out;
}

// int_0^T p(0, x; u, .) du. Static environments may be integrated past the horizon.
inline Eigen::VectorXd integrate_row(const ConductancePath& env, int x, double T) {
    int n = env.lattice->sites();
    require<DomainError>(x >= 0 && x < n, "integrate_row: bad source");
    if (!env.is_static() && T > env.horizon()) throw DomainError("integrate_row: T beyond horizon");
    Eigen::VectorXd v = Eigen::VectorXd::Zero(n), I = Eigen::VectorXd::Zero(n);
    v[x] = 1.0;
    auto cuts = env.is_static() ? std::vector<double>{0.0, T} : constant_pieces(env, 0.0, T);
    std::optional<FrozenGenerator> G;
    for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
        if (cuts[k + 1] <= cuts[k]) continue;
        G.emplace(env, env.is_static() ? 0.0 : cuts[k]);
        G->advance(v, cuts[k + 1] - cuts[k], &I);
    }
    return I;
}

inline void check_covariance(const Eigen::MatrixXd& S) {
    if (S.rows() != S.cols() || S.rows() < 1) throw DomainError("covariance must be square");
    if (!(S - S.transpose()).isZero(1e-9 * std::max(1.0, S.cwiseAbs().maxCoeff())))
        throw DomainError("covariance must be symmetric");
    Eigen::LLT<Eigen::MatrixXd> llt(S);
    if (llt.info() != Eigen::Success) throw DomainError("covariance must be positive definite");
}

// k_t(x) = ((2 pi t)^d det S)^{-1/2} exp(-x.S^{-1}x / 2t)
inline double gaussian_kernel(const Eigen::MatrixXd& S, double t, const Eigen::VectorXd& x) {
    check_covariance(S);
    if (!(t > 0)) throw DomainError("gaussian_kernel: t must be positive");
    int d = int(S.rows());
    double q = x.dot(S.ldlt().solve(x));
    return std::exp(-q / (2 * t)) / std::sqrt(std::pow(2 * std::numbers::pi * t, d) * S.determinant());
}

// int_a^b k_t(z) dt in closed form through incomplete gamma functions (d >= 3).
inline double gaussian_time_integral(const Eigen::MatrixXd& S, const Eigen::VectorXd& z, double a, double b) {
    int d = int(S.rows());
    double pref = 1.0 / std::sqrt(std::pow(2 * std::numbers::pi, d) * S.determinant());
    double q = z.dot(S.ldlt().solve(z));
    double s = 0.5 * d - 1.0;
    auto F = [&](double t) {  // int_t^inf t'^{-d/2} e^{-q/2t'} dt'
        if (t == INFINITY) return 0.0;
        if (q == 0) return std::pow(t, -s) / s;
        double u = q / (2 * t);
        return std::pow(q / 2, -s) * boost::math::tgamma_lower(s, u);
    };
    return pref * (F(a) - F(b));
}

// Leading constant of the Green's function of a centred Gaussian with
// covariance S in direction u: g(x) ~ C |x|^{2-d}.
inline double green_constant(const Eigen::MatrixXd& S, const Eigen::VectorXd& u) {
    int d = int(S.rows());
    Eigen::VectorXd e = u / u.norm();
    double q = e.dot(S.ldlt().solve(e));
    return std::tgamma(0.5 * d - 1) / (2 * std::pow(std::numbers::pi, 0.5 * d) * std::sqrt(S.determinant())) *
           std::pow(q, 1.0 - 0.5 * d);
}

struct GreenValue {
    double value = 0;           // int_0^T_cut p dt, wrap-around images removed
    double tail = 0;            // bound on the part beyond T_cut
    double raw = 0;             // torus integral before image removal
    double image_correction = 0;
    double tail_estimate = 0;   // Gaussian estimate of the part beyond T_cut
    double extrapolated() const { return value + tail_estimate; }
};

// Time-integrated kernel from one source. The Gaussian reference S is used
// to subtract the torus images and estimate the tail; without it only the
// raw torus integral and the tail bound are reported.
class GreenField {
public:
    GreenField(const ConductancePath& env, int source, double T_cut, std::optional<Eigen::MatrixXd> S = {})
        : env_(&env), source_(source), T_(T_cut), S_(std::move(S)) {
        if (env.d() < 3) throw Unsupported("Green's function needs d >= 3");
        if (!(T_cut > 0)) throw DomainError("green: T_cut must be positive");
        if (S_) check_covariance(*S_);
        raw_ = integrate_row(env, source, T_cut);
    }

    const Eigen::VectorXd& raw() const { return raw_; }
    double T_cut() const { return T_; }

    GreenValue at(int y) const {
        const Lattice& lat = *env_->lattice;
        int d = lat.d(), L = lat.L();
        GreenValue g;
        g.raw = raw_[y];
        double s = 0.5 * d - 1.0;
        double Cl = env_->C_l;
        g.tail = std::pow(2 * std::numbers::pi * 2 * Cl, -0.5 * d) * std::pow(T_, -s) / s;
        Eigen::VectorXd z = offset(source_, y);
        if (S_) {
            double lmax = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(*S_).eigenvalues().maxCoeff();
            int K = int(std::ceil(std::sqrt(2.0 * lmax * T_ * 40.0) / L)) + 1;
            std::vector<int> k(d, -K);
            double img = 0;
            for (;;) {
                bool zero = std::all_of(k.begin(), k.end(), [](int v) { return v == 0; });
                if (!zero) {
                    Eigen::VectorXd w = z;
                    for (int i = 0; i < d; ++i) w[i] += double(k[i]) * L;
                    img += gaussian_time_integral(*S_, w, 0.0, T_);
                }
                int i = 0;
                while (i < d && ++k[i] > K) k[i++] = -K;
                if (i == d) break;
            }
            g.image_correction = img;
            g.tail_estimate = gaussian_time_integral(*S_, z, T_, INFINITY);
        }
        g.value = g.raw - g.image_correction;
        return g;
    }

    // Minimum-image displacement from x to y.
    Eigen::VectorXd offset(int x, int y) const {
        const Lattice& lat = *env_->lattice;
        auto a = lat.coords(x), b = lat.coords(y);
        Eigen::VectorXd z(lat.d());
        for (int i = 0; i < lat.d(); ++i) {
            int dd = ((b[i] - a[i]) % lat.L() + lat.L()) % lat.L();
            if (dd > lat.L() / 2) dd -= lat.L();
            z[i] = dd;
        }
        return z;
    }

private:
    const ConductancePath* env_;
    int source_;
    double T_;
    std::optional<Eigen::MatrixXd> S_;
    Eigen::VectorXd raw_;
};

inline GreenValue green_function(const ConductancePath& env, int x, int y, double T_cut,
                                 std::optional<Eigen::MatrixXd> S = {}) {
    return GreenField(env, x, T_cut, std::move(S)).at(y);
}

struct KernelSample {
    double dt = 0, D = 0, p = 0;
};

// Gaussian regime: p <= c2 t^{-d/2} exp(-c3 D^2/t) for D <= c1 t.
// Poisson regime:  p <= c4 exp(-c5 D (1 + log(D/t))) for D > c1 t.
struct EnvelopeFit {
    double c1 = 0, c2 = 0, c3 = 0, c4 = 0, c5 = 0;
    double c2_fit = 0, c4_fit = 0;  // least-squares prefactors before enveloping
    double sse = 0;
    double violation_fraction = 0;  // against the enveloped constants, 5% slack
    int n_gauss = 0, n_poisson = 0;
};

inline EnvelopeFit hk_envelope_fit(std::vector<KernelSample> s, int d) {
    std::vector<KernelSample> ok;
    for (auto& k : s)
        if (k.p > 1e-300 && k.dt > 0) ok.push_back(k);
    std::sort(ok.begin(), ok.end(), [](auto& a, auto& b) { return a.D / a.dt < b.D / b.dt; });
    std::vector<double> ratios;
    for (auto& k : ok) ratios.push_back(k.D / k.dt);
    auto distinct = ratios;
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    if (distinct.size() < 2) throw NumericError("envelope fit: family has a single D/t ratio");

    auto gauss_xy = [&](const KernelSample& k, double& x, double& y) {
        x = k.D * k.D / k.dt;
        y = std::log(k.p) + 0.5 * d * std::log(k.dt);
    };
    auto pois_xy = [&](const KernelSample& k, double& x, double& y) {
        x = k.D * (1 + std::log(k.D / k.dt));
        y = std::log(k.p);
    };
    auto fit = [&](std::size_t a, std::size_t b, bool gauss, stats::LineFit& f) {
        std::vector<double> X, Y;
        for (std::size_t i = a; i < b; ++i) {
            double x, y;
            if (gauss) gauss_xy(ok[i], x, y); else pois_xy(ok[i], x, y);
            X.push_back(x);
            Y.push_back(y);
        }
        double mx = stats::mean(X);
        bool flat = std::all_of(X.begin(), X.end(), [&](double v) { return std::abs(v - mx) < 1e-12; });
        if (flat) return double(INFINITY);
        f = stats::linear_fit(X, Y);
        double sse = 0;
        for (std::size_t i = 0; i < X.size(); ++i) {
            double r = Y[i] - f.intercept - f.slope * X[i];
            sse += r * r;
        }
        return sse;
    };

    EnvelopeFit best;
    best.sse = INFINITY;
    std::size_t n = ok.size();
    for (std::size_t cut = 3; cut + 3 <= n; ++cut) {
        if (ratios[cut] == ratios[cut - 1]) continue;
        if (ok[cut].D <= 0) continue;
        stats::LineFit g, p;
        double e = fit(0, cut, true, g) + fit(cut, n, false, p);
        if (e < best.sse) {
            best.sse = e;
            best.c1 = 0.5 * (ratios[cut - 1] + ratios[cut]);
            best.c3 = -g.slope;
            best.c2_fit = std::exp(g.intercept);
            best.c5 = -p.slope;
            best.c4_fit = std::exp(p.intercept);
            best.n_gauss = int(cut);
            best.n_poisson = int(n - cut);
        }
    }
    if (!std::isfinite(best.sse)) throw NumericError("envelope fit: not enough samples on each side");
    // Envelope prefactors: smallest constants dominating every sample.
    for (std::size_t i = 0; i < n; ++i) {
        double x, y;
        if (int(i) < best.n_gauss) {
            gauss_xy(ok[i], x, y);
            best.c2 = std::max(best.c2, std::exp(y + best.c3 * x));
        } else {
            pois_xy(ok[i], x, y);
            best.c4 = std::max(best.c4, std::exp(y + best.c5 * x));
        }
    }
    int bad = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& k = ok[i];
        double bound = int(i) < best.n_gauss
                           ? best.c2 * std::pow(k.dt, -0.5 * d) * std::exp(-best.c3 * k.D * k.D / k.dt)
                           : best.c4 * std::exp(-best.c5 * k.D * (1 + std::log(k.D / k.dt)));
        if (k.p > 1.05 * bound) ++bad;
    }
    best.violation_fraction = double(bad) / double(n);
    return best;
}

struct LLTResult {
    double sup = 0;
    double stderr_ = 0;     // at the maximizing point (annealed) or across envs (quenched)
    double k0 = 0;          // k_T(0) at the largest grid time
    std::vector<double> values;  // per (t, x) point, t-major
};

// sup over the grid of |n^{d/2} p(0,0; n t, floor(sqrt(n) x)) - k_t(x)|.
// Annealed: average p over the ensemble first. Quenched: one sup per
// environment, averaged.
inline LLTResult llt_discrepancy(const std::vector<const ConductancePath*>& envs, double n,
                                 const std::vector<double>& t_grid,
                                 const std::vector<std::vector<double>>& x_grid, const Eigen::MatrixXd& S,
                                 bool annealed) {
    require(!envs.empty(), "llt: empty ensemble");
    check_covariance(S);
    const Lattice& lat = *envs.front()->lattice;
    int d = lat.d();
    double tmax = *std::max_element(t_grid.begin(), t_grid.end());
    for (auto* e : envs) {
        if (lat.L() < min_torus_side(d, e->C_u, n * tmax))
            throw ConfigError("llt: torus too small for the largest time");
        if (!e->is_static() && e->horizon() < n * tmax) throw ConfigError("llt: horizon too short");
    }
    std::vector<double> times;
    for (double t : t_grid) times.push_back(n * t);
    std::vector<double> sorted = times;
    std::sort(sorted.begin(), sorted.end());
    std::vector<int> targets;
    for (auto& x : x_grid) {
        require(int(x.size()) == d, "llt: x grid dimension mismatch");
        std::vector<int> c(d);
        for (int i = 0; i < d; ++i) c[i] = int(std::floor(std::sqrt(n) * x[i] + 1e-9));
        targets.push_back(lat.site(c));
    }
    std::size_t np = t_grid.size() * x_grid.size();
    std::vector<std::vector<double>> scaled(envs.size(), std::vector<double>(np));
    for (std::size_t e = 0; e < envs.size(); ++e) {
        auto rows = propagate_row(*envs[e], 0, 0.0, sorted);
        for (std::size_t a = 0; a < t_grid.size(); ++a) {
            auto it = std::find(sorted.begin(), sorted.end(), times[a]);
            const auto& r = rows[std::size_t(it - sorted.begin())];
            for (std::size_t b = 0; b < x_grid.size(); ++b)
                scaled[e][a * x_grid.size() + b] = std::pow(n, 0.5 * d) * r[targets[b]];
        }
    }
    std::vector<double> kv(np);
    for (std::size_t a = 0; a < t_grid.size(); ++a)
        for (std::size_t b = 0; b < x_grid.size(); ++b)
            kv[a * x_grid.size() + b] =
                gaussian_kernel(S, t_grid[a], Eigen::Map<const Eigen::VectorXd>(x_grid[b].data(), d));
    LLTResult res;
    res.k0 = gaussian_kernel(S, tmax, Eigen::VectorXd::Zero(d));
    res.values.resize(np);
    std::size_t ne = envs.size();
    if (annealed || ne == 1) {
        for (std::size_t i = 0; i < np; ++i) {
            std::vector<double> col(ne);
            for (std::size_t e = 0; e < ne; ++e) col[e] = scaled[e][i];
            double m = stats::mean(col);
            res.values[i] = std::abs(m - kv[i]);
            if (res.values[i] >= res.sup) {
                res.sup = res.values[i];
                res.stderr_ = ne > 1 ? std::sqrt(stats::variance(col) / double(ne)) : 0.0;
            }
        }
    } else {
        std::vector<double> sups(ne, 0.0);
        for (std::size_t e = 0; e < ne; ++e)
            for (std::size_t i = 0; i < np; ++i) sups[e] = std::max(sups[e], std::abs(scaled[e][i] - kv[i]));
        for (std::size_t i = 0; i < np; ++i) {
            double s = 0;
            for (std::size_t e = 0; e < ne; ++e) s += std::abs(scaled[e][i] - kv[i]);
            res.values[i] = s / double(ne);
        }
        res.sup = stats::mean(sups);
        res.stderr_ = std::sqrt(stats::variance(sups) / double(ne));
    }
    return res;
}

} // namespace dyncond
