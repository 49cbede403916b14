#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "dyncond/errors.hpp"
#include "dyncond/torus.hpp"

namespace dyncond {

struct ConstantModel {
    double c = 1.0;
};
// Uniform on [C_l, C_u], independent over edges.
struct StaticIIDModel {};
// pattern[base_site*d + j] on a torus of side `period`, tiled.
struct StaticPeriodicModel {
    int period = 1;
    std::vector<double> pattern;
};
// Each edge flips between a and b at rate `rate`, started from (1/2, 1/2).
// period > 0 ties edges together so the field is period-periodic in space.
struct MarkovFlipModel {
    double a = 1, b = 2, rate = 1;
    int period = 0;
};
// A global pattern index m(t) runs as a CTMC with generator Q.
struct MarkovModulatedModel {
    int period = 1;
    std::vector<std::vector<double>> patterns;
    std::vector<std::vector<double>> Q;
};
struct GinzburgLandauModel {
    double c_minus = 1, c_plus = 2, dt = 0.01, burn_in = 10;
};

using EnvModel = std::variant<ConstantModel, StaticIIDModel, StaticPeriodicModel, MarkovFlipModel,
                              MarkovModulatedModel, GinzburgLandauModel>;

inline Eigen::VectorXd stationary_law(const std::vector<std::vector<double>>& Q) {
    int n = int(Q.size());
    Eigen::MatrixXd A(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) A(j, i) = Q[i][j];
    A.row(n - 1).setOnes();
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
    rhs(n - 1) = 1.0;
    Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
    require<ModelError>(lu.isInvertible(), "modulating chain has no unique stationary law");
    Eigen::VectorXd pi = lu.solve(rhs);
    for (int i = 0; i < n; ++i) require<ModelError>(pi(i) > 0, "modulating chain is reducible");
    return pi;
}

struct EnvModelSpec {
    EnvModel model = ConstantModel{};
    double C_l = 1, C_u = 1;

    static EnvModelSpec constant(double c) { return {ConstantModel{c}, c, c}; }
    static EnvModelSpec iid(double lo, double hi) { return {StaticIIDModel{}, lo, hi}; }
    static EnvModelSpec periodic(int period, std::vector<double> pattern) {
        auto [lo, hi] = std::minmax_element(pattern.begin(), pattern.end());
        double l = pattern.empty() ? 0 : *lo, h = pattern.empty() ? 0 : *hi;
        return {StaticPeriodicModel{period, std::move(pattern)}, l, h};
    }
    static EnvModelSpec markov_flip(double a, double b, double rate, int period = 0) {
        return {MarkovFlipModel{a, b, rate, period}, std::min(a, b), std::max(a, b)};
    }
    static EnvModelSpec modulated(int period, std::vector<std::vector<double>> patterns,
                                  std::vector<std::vector<double>> Q) {
        double l = INFINITY, h = -INFINITY;
        for (auto& p : patterns)
            for (double v : p) l = std::min(l, v), h = std::max(h, v);
        return {MarkovModulatedModel{period, std::move(patterns), std::move(Q)}, l, h};
    }
    static EnvModelSpec ginzburg_landau(double c_minus, double c_plus, double dt, double burn_in) {
        return {GinzburgLandauModel{c_minus, c_plus, dt, burn_in}, c_minus, c_plus};
    }

    std::string name() const {
        static const char* names[] = {"Constant", "StaticIID", "StaticPeriodic",
                                      "MarkovFlip", "MarkovModulated", "GinzburgLandau"};
        return names[model.index()];
    }
    bool is_static() const { return model.index() <= 2; }

    // Spatial period of the law, or 0 when the environment is not periodic.
    int period(int L) const {
        if (std::holds_alternative<ConstantModel>(model)) return 1;
        if (auto* p = std::get_if<StaticPeriodicModel>(&model)) return p->period;
        if (auto* p = std::get_if<MarkovModulatedModel>(&model)) return p->period;
        if (auto* p = std::get_if<MarkovFlipModel>(&model)) return p->period;
        (void)L;
        return 0;
    }

    void validate(const TorusSpec& t) const {
        t.validate();
        require(std::isfinite(C_l) && std::isfinite(C_u), "environment: bounds must be finite");
        require(C_l > 0, "environment: C_l must be positive");
        require(C_l <= C_u, "environment: C_l > C_u");
        auto in = [&](double v) { return v >= C_l && v <= C_u && std::isfinite(v); };
        auto pattern_ok = [&](int P, const std::vector<double>& pat) {
            require(P >= 1, "environment: period must be >= 1");
            require(t.L % P == 0, "environment: period must divide L");
            std::size_t n = std::size_t(t.d);
            for (int i = 0; i < t.d; ++i) n *= std::size_t(P);
            require(pat.size() == n, "environment: pattern must have d*period^d entries");
            for (double v : pat) require(in(v), "environment: pattern value outside [C_l, C_u]");
        };
        std::visit([&](auto& m) {
            using M = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<M, ConstantModel>) {
                require(in(m.c), "Constant: c outside [C_l, C_u]");
            } else if constexpr (std::is_same_v<M, StaticPeriodicModel>) {
                pattern_ok(m.period, m.pattern);
            } else if constexpr (std::is_same_v<M, MarkovFlipModel>) {
                require(in(m.a) && in(m.b), "MarkovFlip: a, b outside [C_l, C_u]");
                require(std::isfinite(m.rate) && m.rate > 0, "MarkovFlip: rate must be positive");
                require(m.period >= 0 && (m.period == 0 || t.L % m.period == 0),
                        "MarkovFlip: period must divide L");
            } else if constexpr (std::is_same_v<M, MarkovModulatedModel>) {
                require(m.patterns.size() >= 1, "MarkovModulated: no patterns");
                require(m.Q.size() == m.patterns.size(), "MarkovModulated: Q shape");
                for (auto& p : m.patterns) pattern_ok(m.period, p);
                for (std::size_t i = 0; i < m.Q.size(); ++i) {
                    require(m.Q[i].size() == m.Q.size(), "MarkovModulated: Q must be square");
                    double s = 0;
                    for (std::size_t j = 0; j < m.Q.size(); ++j) {
                        require(std::isfinite(m.Q[i][j]), "MarkovModulated: Q not finite");
                        if (i != j) require(m.Q[i][j] >= 0, "MarkovModulated: negative rate");
                        s += m.Q[i][j];
                    }
                    require(std::abs(s) < 1e-9, "MarkovModulated: Q rows must sum to zero");
                }
                if (m.Q.size() > 1) stationary_law(m.Q);
            } else if constexpr (std::is_same_v<M, GinzburgLandauModel>) {
                require(m.c_minus > 0 && m.c_minus <= m.c_plus, "GL: need 0 < c_minus <= c_plus");
                require(C_l <= m.c_minus && m.c_plus <= C_u, "GL: [c_minus, c_plus] outside bounds");
                require(m.dt > 0 && m.dt < 1.0 / (2.0 * t.d * m.c_plus),
                        "GL: dt violates the stability bound dt < 1/(2 d c_plus)");
                require(m.burn_in >= 0, "GL: burn_in must be non-negative");
            }
        }, model);
    }
};

// One sampled realization on [0, horizon]. Values are right-continuous in t.
class ConductancePath {
public:
    enum class Kind { Static, Records, Grid, Modulated };

    TorusSpec torus;
    LatticePtr lattice;
    double C_l = 1, C_u = 1;
    std::string model;
    Kind kind = Kind::Static;

    int base_side = 0;         // side of the torus the values are stored on
    std::vector<int> base_of;  // edge -> base edge; empty means identity

    std::vector<double> values;  // Static: per base edge

    std::vector<std::size_t> offsets;  // Records: per base edge [offsets[b], offsets[b+1])
    std::vector<double> rec_t, rec_v;  // first record of each edge is at t = 0

    std::vector<double> grid_t;  // Grid: step start times, shared by all edges
    std::vector<double> grid_v;  // grid_t.size() x base edges
    int base_edges = 0;

    std::vector<double> mod_t;  // Modulated: switching times, first at 0
    std::vector<int> mod_s;
    std::vector<std::vector<double>> patterns;

    double horizon() const { return torus.horizon; }
    bool is_static() const { return kind == Kind::Static; }
    int d() const { return torus.d; }

    void set_tiling(int P) {
        base_side = P;
        base_edges = 1;
        for (int i = 0; i < torus.d; ++i) base_edges *= P;
        base_edges *= torus.d;
        base_of.clear();
        if (P == torus.L) return;
        Lattice base(torus.d, P);
        base_of.resize(std::size_t(lattice->edges()));
        std::vector<int> c(torus.d);
        for (int x = 0; x < lattice->sites(); ++x) {
            lattice->coords(x, c.data());
            int bx = base.site(c.data());
            for (int j = 0; j < torus.d; ++j) base_of[std::size_t(x) * torus.d + j] = bx * torus.d + j;
        }
    }

    int base_edge(int e) const { return base_of.empty() ? e : base_of[e]; }

    void check_time(double t) const {
        if (!(t >= 0.0 && t <= torus.horizon))
            throw DomainError("conductance queried outside [0, horizon]");
    }

    std::size_t grid_index(double t) const {
        auto n = grid_t.size();
        double dt = n > 1 ? grid_t[1] : 1.0;
        std::size_t k = std::size_t(std::min<double>(double(n - 1), std::floor(t / dt)));
        while (k + 1 < n && grid_t[k + 1] <= t) ++k;
        while (k > 0 && grid_t[k] > t) --k;
        return k;
    }
    std::size_t mod_index(double t) const {
        return std::size_t(std::upper_bound(mod_t.begin(), mod_t.end(), t) - mod_t.begin()) - 1;
    }
    int modulation_state(double t) const {
        require<InternalError>(kind == Kind::Modulated, "not a modulated environment");
        check_time(t);
        return mod_s[mod_index(t)];
    }

    double conductance(int e, double t) const {
        check_time(t);
        return value_unchecked(base_edge(e), t);
    }
    double conductance(int x, int code, double t) const {
        return conductance(lattice->edge_of_move(x, code), t);
    }
    double total_rate(int x, double t) const {
        double s = 0;
        for (int c = 0; c < lattice->moves(); ++c) s += conductance(x, c, t);
        return s;
    }

    double value_unchecked(int b, double t) const {
        switch (kind) {
        case Kind::Static:
            return values[b];
        case Kind::Records: {
            auto lo = rec_t.begin() + std::ptrdiff_t(offsets[b]);
            auto hi = rec_t.begin() + std::ptrdiff_t(offsets[b + 1]);
            auto it = std::upper_bound(lo, hi, t);
            return rec_v[std::size_t(it - rec_t.begin()) - 1];
        }
        case Kind::Grid:
            return grid_v[grid_index(t) * base_edges + b];
        case Kind::Modulated:
            return patterns[mod_s[mod_index(t)]][b];
        }
        return 0;
    }

    // Values of every edge at time t.
    std::vector<double> snapshot(double t) const {
        check_time(t);
        std::vector<double> out(std::size_t(lattice->edges()));
        for (int e = 0; e < lattice->edges(); ++e) out[e] = value_unchecked(base_edge(e), t);
        return out;
    }

    // Sorted distinct change times strictly inside (s, t).
    std::vector<double> breakpoints(double s, double t) const {
        std::vector<double> out;
        auto take = [&](const std::vector<double>& v) {
            for (double x : v)
                if (x > s && x < t) out.push_back(x);
        };
        if (kind == Kind::Records) take(rec_t);
        if (kind == Kind::Grid) take(grid_t);
        if (kind == Kind::Modulated) take(mod_t);
        std::sort(out.begin(), out.end());
        out.erase(std::unique(out.begin(), out.end()), out.end());
        return out;
    }

    std::size_t breakpoint_count() const {
        switch (kind) {
        case Kind::Records: return rec_t.size() - std::size_t(base_edges);
        case Kind::Grid: return grid_t.size() - 1;
        case Kind::Modulated: return mod_t.size() - 1;
        default: return 0;
        }
    }
};

} // namespace dyncond
