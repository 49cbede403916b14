#pragma once

// Counter-based generator so every (seed, stage, path) triple owns an
// independent stream and results do not depend on thread scheduling.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace dyncond::rng {

using Block = std::array<std::uint32_t, 4>;
using Key = std::array<std::uint32_t, 2>;

// Philox4x32 with 10 rounds.
inline Block philox4x32(Block ctr, Key key) {
    constexpr std::uint32_t M0 = 0xD2511F53u, M1 = 0xCD9E8D57u;
    constexpr std::uint32_t W0 = 0x9E3779B9u, W1 = 0xBB67AE85u;
    for (int r = 0; r < 10; ++r) {
        if (r > 0) {
            key[0] += W0;
            key[1] += W1;
        }
        std::uint64_t p0 = std::uint64_t(M0) * ctr[0];
        std::uint64_t p1 = std::uint64_t(M1) * ctr[2];
        auto hi0 = std::uint32_t(p0 >> 32), lo0 = std::uint32_t(p0);
        auto hi1 = std::uint32_t(p1 >> 32), lo1 = std::uint32_t(p1);
        ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    }
    return ctr;
}

inline std::uint64_t splitmix64(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

// Child key derivation: derive(derive(seed, stage), path) etc.
inline std::uint64_t derive(std::uint64_t parent, std::uint64_t tag) {
    return splitmix64(parent ^ splitmix64(tag + 0x632BE59BD9B4E019ull));
}

inline std::uint64_t hash_tag(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t derive(std::uint64_t parent, std::string_view tag) {
    return derive(parent, hash_tag(tag));
}

class Stream {
public:
    explicit Stream(std::uint64_t key = 0) : key_(key) {}

    std::uint64_t key() const { return key_; }
    Stream split(std::uint64_t tag) const { return Stream(derive(key_, tag)); }
    Stream split(std::string_view tag) const { return Stream(derive(key_, tag)); }

    std::uint64_t next_u64() {
        if (avail_ == 0) {
            Block ctr{std::uint32_t(counter_), std::uint32_t(counter_ >> 32), 0u, 0u};
            Block out = philox4x32(ctr, {std::uint32_t(key_), std::uint32_t(key_ >> 32)});
            ++counter_;
            buf_[0] = (std::uint64_t(out[1]) << 32) | out[0];
            buf_[1] = (std::uint64_t(out[3]) << 32) | out[2];
            avail_ = 2;
        }
        return buf_[2 - avail_--];
    }

    // [0, 1)
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }
    // (0, 1]
    double uniform_pos() { return double((next_u64() >> 11) + 1) * 0x1.0p-53; }

    double exponential(double rate) { return -std::log(uniform_pos()) / rate; }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double r = std::sqrt(-2.0 * std::log(uniform_pos()));
        double a = 2.0 * std::numbers::pi * uniform();
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    std::uint64_t below(std::uint64_t n) {
        // Lemire's multiply-shift is fine here; bias is < 2^-32 for our n.
        return std::uint64_t((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    bool bernoulli(double p) { return uniform() < p; }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    std::uint64_t buf_[2] = {0, 0};
    int avail_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

} // namespace dyncond::rng
