#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "dyncond/errors.hpp"

namespace dyncond {

// Sites are indexed x_0 + L*x_1 + L^2*x_2 + ...; edge id = site*d + j joins
// x and x+e_j. A move code is 2j for +e_j and 2j+1 for -e_j.
struct TorusSpec {
    int d = 1;
    int L = 3;
    double horizon = 1.0;

    void validate() const {
        require(d >= 1 && d <= 3, "torus: d must be in {1,2,3}");
        require(L >= 2, "torus: L must be >= 2");
        require(d != 1 || L >= 3, "torus: L >= 3 required when d = 1");
        require(std::isfinite(horizon) && horizon > 0, "torus: horizon must be positive");
        double n = std::pow(double(L), d);
        require<ResourceError>(n <= 2.0e7, "torus: too many sites");
    }
    std::int64_t sites() const {
        std::int64_t n = 1;
        for (int i = 0; i < d; ++i) n *= L;
        return n;
    }
    std::int64_t edges() const { return sites() * d; }
};

// Precomputed neighbour tables. Also used for the quotient torus of a
// periodic environment, where any side >= 1 is allowed.
class Lattice {
public:
    Lattice() = default;
    Lattice(int d, int L) : d_(d), L_(L) {
        require(d >= 1 && d <= 3 && L >= 1, "lattice: bad shape");
        n_ = 1;
        for (int i = 0; i < d; ++i) n_ *= L;
        nbr_.resize(std::size_t(n_) * 2 * d);
        edge_.resize(std::size_t(n_) * 2 * d);
        std::vector<int> c(d);
        for (int x = 0; x < n_; ++x) {
            coords(x, c.data());
            for (int j = 0; j < d; ++j) {
                int keep = c[j];
                c[j] = (keep + 1) % L;
                int up = site(c.data());
                c[j] = (keep - 1 + L) % L;
                int dn = site(c.data());
                c[j] = keep;
                nbr_[idx(x, 2 * j)] = up;
                nbr_[idx(x, 2 * j + 1)] = dn;
                edge_[idx(x, 2 * j)] = x * d + j;
                edge_[idx(x, 2 * j + 1)] = dn * d + j;
            }
        }
    }

    int d() const { return d_; }
    int L() const { return L_; }
    int sites() const { return n_; }
    int edges() const { return n_ * d_; }
    int moves() const { return 2 * d_; }

    int neighbor(int x, int code) const { return nbr_[idx(x, code)]; }
    int edge_of_move(int x, int code) const { return edge_[idx(x, code)]; }

    void coords(int x, int* c) const {
        for (int i = 0; i < d_; ++i) {
            c[i] = x % L_;
            x /= L_;
        }
    }
    std::vector<int> coords(int x) const {
        std::vector<int> c(d_);
        coords(x, c.data());
        return c;
    }
    int site(const int* c) const {
        int x = 0;
        for (int i = d_ - 1; i >= 0; --i) x = x * L_ + (((c[i] % L_) + L_) % L_);
        return x;
    }
    int site(const std::vector<int>& c) const {
        require<DomainError>(int(c.size()) == d_, "lattice: coordinate dimension mismatch");
        return site(c.data());
    }
    int shift(int x, const std::vector<int>& y) const {
        std::vector<int> c = coords(x);
        for (int i = 0; i < d_; ++i) c[i] += y.at(i);
        return site(c);
    }
    // Minimum-image squared Euclidean distance.
    double dist2(int x, int y) const {
        double s = 0;
        for (int i = 0; i < d_; ++i) {
            int a = x % L_, b = y % L_;
            x /= L_;
            y /= L_;
            int dd = std::abs(a - b);
            dd = std::min(dd, L_ - dd);
            s += double(dd) * dd;
        }
        return s;
    }

    static int code_dir(int code) { return code / 2; }
    static int code_sign(int code) { return (code & 1) ? -1 : 1; }

private:
    std::size_t idx(int x, int code) const { return std::size_t(x) * 2 * d_ + code; }
    int d_ = 1, L_ = 1, n_ = 1;
    std::vector<int> nbr_, edge_;
};

using LatticePtr = std::shared_ptr<const Lattice>;

inline LatticePtr make_lattice(const TorusSpec& t) {
    t.validate();
    return std::make_shared<const Lattice>(t.d, t.L);
}

// Side needed so a walk run up to time T stays away from the wrap-around:
// L >= 6 sqrt(2 d C_u T).
inline int min_torus_side(int d, double C_u, double T) {
    return int(std::ceil(6.0 * std::sqrt(2.0 * d * C_u * T)));
}

} // namespace dyncond
