#pragma once

// Gradient (Ginzburg-Landau) dynamics on the torus, Euler-Maruyama with the
// noise projected onto mean-zero fields, and the conductances it induces.

#include <cmath>
#include <cstdint>
#include <vector>

#include "dyncond/conductance.hpp"
#include "dyncond/rng.hpp"

namespace dyncond {

// V''(r) = c_minus + (c_plus - c_minus)/(1 + r^2), so V'' takes values in
// (c_minus, c_plus]. c_minus == c_plus is the Gaussian case.
struct GLPotential {
    double c_minus = 1, c_plus = 2;
    double V1(double r) const { return c_minus * r + (c_plus - c_minus) * std::atan(r); }
    double V2(double r) const { return c_minus + (c_plus - c_minus) / (1.0 + r * r); }
};

struct GLOptions {
    bool noise = true;
    int record_stride = 1;
    std::vector<double> initial;  // empty: start from zero
};

struct GLFieldPath {
    TorusSpec torus;
    GLPotential pot;
    double dt = 0.01;
    int stride = 1;
    std::vector<double> fields;  // record k holds the field at time k*stride*dt
    int n_sites = 0;

    int records() const { return n_sites ? int(fields.size() / std::size_t(n_sites)) : 0; }
    const double* field(int k) const { return fields.data() + std::size_t(k) * n_sites; }
    double time(int k) const { return double(k) * stride * dt; }
};

class GLSimulator {
public:
    GLSimulator(const TorusSpec& t, GLPotential pot, double dt, std::uint64_t seed, GLOptions opt = {})
        : lat_(t.d, t.L), pot_(pot), dt_(dt), opt_(std::move(opt)),
          noise_(rng::Stream(seed).split("gl-noise")) {
        t.validate();
        require(pot.c_minus > 0 && pot.c_minus <= pot.c_plus, "GL: need 0 < c_minus <= c_plus");
        require(dt > 0 && dt < 1.0 / (2.0 * t.d * pot.c_plus),
                "GL: dt violates the stability bound dt < 1/(2 d c_plus)");
        phi_.assign(std::size_t(lat_.sites()), 0.0);
        if (!opt_.initial.empty()) {
            require(opt_.initial.size() == phi_.size(), "GL: initial field has wrong size");
            phi_ = opt_.initial;
        }
        drift_.resize(phi_.size());
        xi_.resize(phi_.size());
    }

    const std::vector<double>& field() const { return phi_; }
    const Lattice& lattice() const { return lat_; }

    void step() {
        int n = lat_.sites(), d = lat_.d();
        std::fill(drift_.begin(), drift_.end(), 0.0);
        for (int x = 0; x < n; ++x)
            for (int j = 0; j < d; ++j) {
                int y = lat_.neighbor(x, 2 * j);
                double f = pot_.V1(phi_[y] - phi_[x]);
                drift_[x] += f;
                drift_[y] -= f;
            }
        double md = 0, mx = 0;
        for (int x = 0; x < n; ++x) md += drift_[x];
        md /= n;
        if (opt_.noise) {
            for (int x = 0; x < n; ++x) xi_[x] = noise_.normal();
            for (int x = 0; x < n; ++x) mx += xi_[x];
            mx /= n;
        }
        double amp = std::sqrt(2.0 * dt_);
        for (int x = 0; x < n; ++x) {
            double inc = dt_ * (drift_[x] - md);
            if (opt_.noise) inc += amp * (xi_[x] - mx);
            phi_[x] += inc;
        }
    }

private:
    Lattice lat_;
    GLPotential pot_;
    double dt_;
    GLOptions opt_;
    rng::Stream noise_;
    std::vector<double> phi_, drift_, xi_;
};

inline long gl_steps(double T, double dt) { return std::lround(std::ceil(T / dt - 1e-9)); }

// Runs burn_in first, then records ceil(horizon/dt)+1 fields (every stride steps).
inline GLFieldPath simulate_gl(const TorusSpec& t, GLPotential pot, double dt, double horizon,
                               double burn_in, std::uint64_t seed, GLOptions opt = {}) {
    require(opt.record_stride >= 1, "GL: record_stride must be >= 1");
    require(horizon > 0 && burn_in >= 0, "GL: bad horizon or burn_in");
    GLFieldPath out;
    out.torus = t;
    out.torus.horizon = horizon;
    out.pot = pot;
    out.dt = dt;
    out.stride = opt.record_stride;
    int stride = opt.record_stride;
    GLSimulator sim(t, pot, dt, seed, std::move(opt));
    out.n_sites = sim.lattice().sites();
    for (long k = 0, nb = std::lround(burn_in / dt); k < nb; ++k) sim.step();
    long n = gl_steps(horizon, dt);
    require<ResourceError>(double(n / stride + 1) * out.n_sites <= 4.0e8, "GL: path too large to record");
    out.fields.reserve(std::size_t(n / stride + 1) * out.n_sites);
    auto rec = [&] { out.fields.insert(out.fields.end(), sim.field().begin(), sim.field().end()); };
    rec();
    for (long k = 1; k <= n; ++k) {
        sim.step();
        if (k % stride == 0) rec();
    }
    return out;
}

// Conductance of bond (x, x+e_j) on step k is V''(phi_k(x+e_j) - phi_k(x)).
inline ConductancePath gl_conductances(const GLFieldPath& f) {
    require(f.stride == 1, "GL: conductances need every Euler step recorded");
    ConductancePath c;
    c.torus = f.torus;
    c.lattice = make_lattice(f.torus);
    c.C_l = f.pot.c_minus;
    c.C_u = f.pot.c_plus;
    c.model = "GinzburgLandau";
    c.kind = ConductancePath::Kind::Grid;
    c.set_tiling(f.torus.L);
    int steps = f.records() - 1;
    require(steps >= 1, "GL: path has no steps");
    int ne = c.lattice->edges(), d = f.torus.d;
    c.grid_t.resize(std::size_t(steps));
    c.grid_v.resize(std::size_t(steps) * ne);
    for (int k = 0; k < steps; ++k) {
        c.grid_t[k] = double(k) * f.dt;
        const double* phi = f.field(k);
        for (int x = 0; x < f.n_sites; ++x)
            for (int j = 0; j < d; ++j)
                c.grid_v[std::size_t(k) * ne + x * d + j] =
                    f.pot.V2(phi[c.lattice->neighbor(x, 2 * j)] - phi[x]);
    }
    c.torus.horizon = std::min(f.torus.horizon, double(steps) * f.dt);
    return c;
}

// Mean squared gradient over the first and second half of the recorded path.
inline std::pair<double, double> gl_gradient_halves(const GLFieldPath& f) {
    Lattice lat(f.torus.d, f.torus.L);
    int K = f.records();
    double s[2] = {0, 0};
    long cnt[2] = {0, 0};
    for (int k = 0; k < K; ++k) {
        int h = k < K / 2 ? 0 : 1;
        const double* phi = f.field(k);
        for (int x = 0; x < f.n_sites; ++x)
            for (int j = 0; j < f.torus.d; ++j) {
                double g = phi[lat.neighbor(x, 2 * j)] - phi[x];
                s[h] += g * g;
                ++cnt[h];
            }
    }
    return {s[0] / double(cnt[0]), s[1] / double(cnt[1])};
}

} // namespace dyncond
