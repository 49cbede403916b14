#pragma once

// Config-driven runner behind the `dyncond run` command.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include "dyncond/verify.hpp"

namespace dyncond::cli {

using json = nlohmann::json;
namespace fs = std::filesystem;

inline constexpr int kSchemaVersion = 1;
inline const std::vector<std::string> kStages{"simulate", "heatkernel", "corrector", "fclt",    "llt",    "green",
                                              "csrw",     "gl",         "twowalk",   "mixing"};

inline std::string sha1_hex(const std::string& data) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int n = 0;
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) != 1 ||
        EVP_DigestUpdate(ctx, data.data(), data.size()) != 1 || EVP_DigestFinal_ex(ctx, md, &n) != 1) {
        EVP_MD_CTX_free(ctx);
        throw InternalError("sha1: OpenSSL digest failed");
    }
    EVP_MD_CTX_free(ctx);
    std::ostringstream os;
    for (unsigned int i = 0; i < n; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
    return os.str();
}

// Same digest as `git hash-object`.
inline std::string git_blob_hash(const std::string& content) {
    std::string h = "blob " + std::to_string(content.size());
    h.push_back('\0');
    return sha1_hex(h + content);
}

// ------------------------------------------------------------ config reader

// Object view that tracks consumed keys (unknown keys are errors) and
// records every resolved value, defaults included, for the manifest.
class Node {
public:
    Node(const json& j, std::string path, json* sink) : j_(&j), path_(std::move(path)), sink_(sink) {
        if (!j.is_object()) fail(path_.empty() ? "top level" : path_, "expected an object");
    }

    bool has(const std::string& k) const { return j_->contains(k); }

    template <class T>
    T req(const std::string& k) {
        if (!has(k)) fail(at(k), "missing required field");
        return take<T>(k);
    }

    template <class T>
    T opt(const std::string& k, T def) {
        if (!has(k)) {
            if (sink_) (*sink_)[k] = def;
            return def;
        }
        return take<T>(k);
    }

    const json& raw(const std::string& k) {
        if (!has(k)) fail(at(k), "missing required field");
        used_.insert(k);
        if (sink_) (*sink_)[k] = (*j_)[k];
        return (*j_)[k];
    }

    Node child(const std::string& k) {
        if (!has(k)) fail(at(k), "missing required field");
        used_.insert(k);
        json* s = nullptr;
        if (sink_) s = &((*sink_)[k] = json::object());
        return Node((*j_)[k], at(k), s);
    }

    void skip(const std::string& k) { used_.insert(k); }

    void done() const {
        for (auto it = j_->begin(); it != j_->end(); ++it)
            if (!used_.count(it.key())) fail(at(it.key()), "unknown key");
    }

    std::string at(const std::string& k) const { return path_.empty() ? k : path_ + "." + k; }
    const std::string& path() const { return path_; }

    [[noreturn]] static void fail(const std::string& where, const std::string& what) {
        throw ConfigError("config: " + where + ": " + what);
    }

    template <class T>
    static T convert(const json& v, const std::string& where);

private:
    template <class T>
    T take(const std::string& k) {
        used_.insert(k);
        T v = convert<T>((*j_)[k], at(k));
        if (sink_) (*sink_)[k] = (*j_)[k];
        return v;
    }

    const json* j_;
    std::string path_;
    json* sink_;
    std::set<std::string> used_;
};

template <class T>
T Node::convert(const json& v, const std::string& where) {
    if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) fail(where, "expected a boolean");
        return v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) fail(where, "expected a string");
        return v.get<std::string>();
    } else if constexpr (std::is_same_v<T, std::uint64_t>) {
        if (!v.is_number_unsigned()) fail(where, "expected a non-negative integer");
        return v.get<std::uint64_t>();
    } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) fail(where, "expected an integer");
        return v.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) fail(where, "expected a number");
        double x = v.get<double>();
        if (!std::isfinite(x)) fail(where, "expected a finite number");
        return T(x);
    } else if constexpr (std::is_same_v<T, std::vector<double>> || std::is_same_v<T, std::vector<int>>) {
        if (!v.is_array()) fail(where, "expected an array");
        T out;
        for (std::size_t i = 0; i < v.size(); ++i)
            out.push_back(convert<typename T::value_type>(v[i], where + "[" + std::to_string(i) + "]"));
        return out;
    } else if constexpr (std::is_same_v<T, std::vector<std::vector<double>>> ||
                         std::is_same_v<T, std::vector<std::vector<int>>>) {
        if (!v.is_array()) fail(where, "expected an array of arrays");
        T out;
        for (std::size_t i = 0; i < v.size(); ++i)
            out.push_back(convert<typename T::value_type>(v[i], where + "[" + std::to_string(i) + "]"));
        return out;
    } else {
        static_assert(sizeof(T) == 0, "unsupported config type");
    }
}

template <>
inline std::vector<std::string> Node::convert<std::vector<std::string>>(const json& v, const std::string& where) {
    if (!v.is_array() || v.empty()) fail(where, "expected a non-empty array of strings");
    std::vector<std::string> out;
    for (std::size_t i = 0; i < v.size(); ++i) out.push_back(convert<std::string>(v[i], where + "[" + std::to_string(i) + "]"));
    return out;
}

inline json parse_json_text(const std::string& text, const std::string& name) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        std::size_t line = 1, col = 1;
        for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
            if (text[i] == '\n') ++line, col = 1;
            else ++col;
        }
        throw ConfigError(name + ":" + std::to_string(line) + ":" + std::to_string(col) + ": malformed JSON (" +
                          e.what() + ")");
    }
}

inline Eigen::MatrixXd to_matrix(const std::vector<std::vector<double>>& rows, const std::string& where) {
    if (rows.empty()) Node::fail(where, "empty matrix");
    Eigen::MatrixXd M(rows.size(), rows[0].size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != rows[0].size()) Node::fail(where, "ragged matrix");
        for (std::size_t j = 0; j < rows[i].size(); ++j) M(Eigen::Index(i), Eigen::Index(j)) = rows[i][j];
    }
    return M;
}

inline TorusSpec parse_torus(Node n) {
    TorusSpec t{n.req<int>("d"), n.req<int>("L"), n.req<double>("horizon")};
    n.done();
    t.validate();
    return t;
}

inline EnvModelSpec parse_environment(Node n) {
    auto m = n.req<std::string>("model");
    EnvModelSpec s;
    if (m == "constant") s = EnvModelSpec::constant(n.req<double>("c"));
    else if (m == "iid") s = EnvModelSpec::iid(n.req<double>("C_l"), n.req<double>("C_u"));
    else if (m == "periodic") s = EnvModelSpec::periodic(n.req<int>("period"), n.req<std::vector<double>>("pattern"));
    else if (m == "markov_flip")
        s = EnvModelSpec::markov_flip(n.req<double>("a"), n.req<double>("b"), n.req<double>("rate"), n.opt<int>("period", 0));
    else if (m == "modulated")
        s = EnvModelSpec::modulated(n.req<int>("period"), n.req<std::vector<std::vector<double>>>("patterns"),
                                    n.req<std::vector<std::vector<double>>>("Q"));
    else if (m == "ginzburg_landau")
        s = EnvModelSpec::ginzburg_landau(n.req<double>("c_minus"), n.req<double>("c_plus"), n.req<double>("dt"),
                                          n.req<double>("burn_in"));
    else Node::fail(n.at("model"), "unknown model '" + m + "'");
    n.done();
    return s;
}

inline WalkKind parse_walk(const std::string& s, const std::string& where) {
    if (s == "vsrw") return WalkKind::VSRW;
    if (s == "csrw") return WalkKind::CSRW;
    Node::fail(where, "expected 'vsrw' or 'csrw'");
}

inline bool parse_mode(const std::string& s, const std::string& where) {
    if (s == "annealed") return true;
    if (s == "quenched") return false;
    Node::fail(where, "expected 'annealed' or 'quenched'");
}

// ------------------------------------------------------------------ runner

struct RunOptions {
    std::string subcommand;
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<int> threads;
    bool quiet = false;
};

struct StageContext {
    std::string name;
    TorusSpec torus;
    EnvModelSpec env;
    WalkKind walk = WalkKind::VSRW;
    std::uint64_t seed = 0;
    int threads = 1;
    std::string config_hash;
};

struct StageOutput {
    std::vector<verify::EnsembleResult> results;
    std::vector<std::pair<std::string, std::string>> files;  // extra CSV outputs
    std::vector<std::pair<std::string, std::string>> summary;  // key, value rows
};

inline std::string fmt(double v) {
    char b[64];
    std::snprintf(b, sizeof b, "%.6g", v);
    return b;
}

// A d x d matrix, or "corrector" for the exact Sigma of the periodic chain.
inline Eigen::MatrixXd resolve_sigma(const json& v, const std::string& where, const StageContext& c,
                                     EnvChainLimits lim) {
    if (v.is_string()) {
        if (v.get<std::string>() != "corrector") Node::fail(where, "expected \"corrector\" or a matrix");
        auto sp = build_env_chain(c.env, c.torus.d, 0, lim);
        return diffusion_matrix(sp, solve_poisson(sp));
    }
    auto M = to_matrix(Node::convert<std::vector<std::vector<double>>>(v, where), where);
    if (M.rows() != c.torus.d || M.cols() != c.torus.d) Node::fail(where, "matrix must be d x d");
    return M;
}

inline EnvChainLimits parse_limits(Node& n) {
    EnvChainLimits lim;
    lim.max_modulation_states = n.opt<int>("max_modulation_states", lim.max_modulation_states);
    lim.max_states = n.opt<int>("max_states", lim.max_states);
    return lim;
}

inline StageOutput stage_simulate(Node n, const StageContext& c) {
    int paths = n.req<int>("paths");
    int x0 = n.opt<int>("start_site", 0);
    double t0 = n.opt<double>("t0", 0.0), t1 = n.opt<double>("t1", c.torus.horizon);
    n.done();
    require(paths >= 1, "simulate: paths must be >= 1");
    auto env = sample_environment(c.env, c.torus, rng::derive(c.seed, "env"));
    std::vector<WalkPath> ps(std::size_t(paths), WalkPath{});
    std::vector<WalkCounters> ctr(ps.size());
    parallel_for(ps.size(), c.threads, [&](std::size_t i) {
        rng::Stream rs = rng::Stream(rng::derive(c.seed, std::uint64_t(i))).split("walk");
        ps[i] = simulate_walk(c.walk, env, x0, t0, t1, rs, &ctr[i]);
    });
    // Path invariants: increasing jump times in (t0, t1], nearest-neighbour steps.
    bool ok = true;
    double jumps = 0, sq = 0;
    const Lattice& lat = *env.lattice;
    for (auto& p : ps) {
        int prev = p.start_site;
        double tp = t0;
        for (std::size_t k = 0; k < p.jump_t.size(); ++k) {
            ok &= p.jump_t[k] > tp && p.jump_t[k] <= t1;
            tp = p.jump_t[k];
            ok &= lat.dist2(prev, p.sites[k]) == 1;
            prev = p.sites[k];
        }
        jumps += double(p.jump_t.size());
        for (int v : p.final_displacement()) sq += double(v) * v;
    }
    std::ostringstream es, ws;
    write_environment_csv(env, es);
    write_paths_csv(ps, ws);
    StageOutput o;
    verify::EnsembleResult r;
    r.experiment = "simulate";
    r.levels.push_back(t1);
    r.estimates = {{"mean_jumps", jumps / paths}, {"mean_square_displacement", sq / paths},
                   {"breakpoints", env.breakpoint_count()}};
    r.fits = {{"path_invariants", ok}};
    r.pass = ok;
    o.results.push_back(r);
    o.files = {{"environment.csv", es.str()}, {"paths.csv", ws.str()}};
    o.summary = {{"mean jumps", fmt(jumps / paths)}, {"mean |X|^2", fmt(sq / paths)}};
    return o;
}

inline StageOutput stage_heatkernel(Node n, const StageContext& c) {
    double s = n.opt<double>("s", 0.0), t = n.opt<double>("t", c.torus.horizon);
    int cap = n.opt<int>("site_cap", kDefaultSiteCap);
    double tol = n.req<double>("tolerance");
    bool write = n.opt<bool>("write_matrix", true);
    n.done();
    auto env = sample_environment(c.env, c.torus, rng::derive(c.seed, "env"));
    auto tm = solve_forward(env, s, t, cap);
    double u = 0.5 * (s + t);
    auto a = solve_forward(env, s, u, cap), b = solve_forward(env, u, t, cap);
    double ck = (a.P * b.P - tm.P).cwiseAbs().maxCoeff();
    double rows = (tm.P.rowwise().sum().array() - 1).abs().maxCoeff();
    double cols = (tm.P.colwise().sum().array() - 1).abs().maxCoeff();
    double neg = std::max(0.0, -tm.P.minCoeff());
    StageOutput o;
    verify::EnsembleResult r;
    r.experiment = "heatkernel";
    r.levels = {s, t};
    r.estimates = {{"p_00", tm.P(0, 0)}, {"row_sum_error", rows}, {"column_sum_error", cols},
                   {"chapman_kolmogorov_error", ck}, {"negativity", neg}};
    r.fits = {{"tolerance", tol}};
    r.pass = rows <= tol && cols <= tol && ck <= tol && neg <= tol;
    o.results.push_back(r);
    if (write) {
        std::ostringstream ks;
        write_kernel_csv(tm, ks);
        o.files.push_back({"kernel.csv", ks.str()});
    }
    o.summary = {{"p(0,0)", fmt(tm.P(0, 0))}, {"max stochasticity error", fmt(std::max(rows, cols))},
                 {"CK error", fmt(ck)}};
    return o;
}

inline StageOutput stage_corrector(Node n, const StageContext& c) {
    auto lim = parse_limits(n);
    int side = n.opt<int>("side", 0);
    double res_tol = n.req<double>("residual_tolerance");
    double norm_tol = n.req<double>("normality_tolerance");
    int probes = n.opt<int>("decomposition_probes", 100);
    std::optional<Eigen::MatrixXd> expected;
    double sig_tol = 0;
    if (n.has("expected_sigma")) {
        expected = to_matrix(n.req<std::vector<std::vector<double>>>("expected_sigma"), n.at("expected_sigma"));
        sig_tol = n.req<double>("sigma_tolerance");
    }
    n.done();
    auto sp = build_env_chain(c.env, c.torus.d, side, lim);
    auto sol = solve_poisson(sp);
    auto S = diffusion_matrix(sp, sol);
    auto dec = check_decomposition(sp, probes, rng::derive(c.seed, "decomposition"));
    double sig_err = 0;
    if (expected) {
        if (expected->rows() != S.rows() || expected->cols() != S.cols()) Node::fail("expected_sigma", "wrong shape");
        sig_err = (S - *expected).cwiseAbs().maxCoeff();
    }
    std::ostringstream cs;
    cs << "state,modulation,shift";
    for (int j = 1; j <= sp.d; ++j) cs << ",u_" << j;
    cs << "\n";
    char buf[64];
    for (int st = 0; st < sp.states(); ++st) {
        cs << st << "," << sp.mod_of(st) << "," << sp.shift_of(st);
        for (int j = 0; j < sp.d; ++j) {
            std::snprintf(buf, sizeof buf, ",%.17g", sol.U(st, j));
            cs << buf;
        }
        cs << "\n";
    }
    StageOutput o;
    verify::EnsembleResult r;
    r.experiment = "corrector";
    r.levels.push_back(sp.states());
    r.estimates = {{"sigma", verify::to_json(S)},
                   {"residual", sol.residual},
                   {"corrector_norm", sol.norm_u},
                   {"normality_defect", dec.normality_defect},
                   {"sector_constant", dec.sector_constant},
                   {"sector_bound", dec.sector_bound}};
    r.fits = {{"residual_tolerance", res_tol}, {"normality_tolerance", norm_tol}, {"sector_ok", dec.sector_ok}};
    if (expected) {
        r.estimates["sigma_error"] = sig_err;
        r.fits["expected_sigma"] = verify::to_json(*expected);
        r.fits["sigma_tolerance"] = sig_tol;
    }
    r.pass = sol.residual <= res_tol && dec.normality_defect <= norm_tol && dec.sector_ok &&
             (!expected || sig_err <= sig_tol);
    o.results.push_back(r);
    o.files.push_back({"corrector.csv", cs.str()});
    std::ostringstream ss;
    ss << "[";
    for (int i = 0; i < S.rows(); ++i)
        for (int j = 0; j < S.cols(); ++j) ss << (i + j ? " " : "") << fmt(S(i, j));
    ss << "]";
    o.summary = {{"sigma", ss.str()}, {"residual", fmt(sol.residual)}, {"normality defect", fmt(dec.normality_defect)}};
    return o;
}

inline StageOutput stage_fclt(Node n, const StageContext& c) {
    verify::FcltConfig f{c.env, c.torus.d, c.torus.L, c.walk};
    auto lim = parse_limits(n);
    f.eps = n.req<std::vector<double>>("eps");
    f.paths = n.req<int>("paths");
    f.cov_sigmas = n.req<double>("cov_sigmas");
    auto modes = n.req<std::vector<std::string>>("modes");
    const json& sv = n.raw("sigma_ref");
    if (!(sv.is_string() && sv.get<std::string>() == "finest")) f.sigma_ref = resolve_sigma(sv, n.at("sigma_ref"), c, lim);
    n.done();
    f.threads = c.threads;
    StageOutput o;
    for (auto& m : modes) {
        f.annealed = parse_mode(m, n.at("modes"));
        f.seed = rng::derive(c.seed, m);
        auto rep = verify::fclt_test(f);
        std::string ks;
        for (auto& lv : rep.levels) ks += (ks.empty() ? "" : " ") + fmt(lv.ks);
        o.summary.push_back({m + " KS", ks});
        o.summary.push_back({m + " finest cov(0,0)",
                             fmt(rep.levels.back().cov(0, 0)) + " +- " + fmt(rep.levels.back().cov_se(0, 0))});
        o.results.push_back(rep.result);
    }
    return o;
}

inline StageOutput stage_llt(Node n, const StageContext& c) {
    verify::LltConfig l;
    l.env = c.env;
    l.d = c.torus.d;
    l.L = c.torus.L;
    auto lim = parse_limits(n);
    l.annealed = parse_mode(n.req<std::string>("mode"), n.at("mode"));
    l.ensemble = n.req<int>("ensemble");
    l.ns = n.req<std::vector<double>>("ns");
    l.t_grid = n.req<std::vector<double>>("t_grid");
    l.x_grid = n.req<std::vector<std::vector<double>>>("x_grid");
    l.sigma = resolve_sigma(n.raw("sigma"), n.at("sigma"), c, lim);
    l.final_fraction = n.req<double>("final_fraction");
    n.done();
    l.seed = c.seed;
    l.threads = c.threads;
    auto rep = verify::llt_suite(l);
    StageOutput o;
    std::string s;
    for (double v : rep.sup) s += (s.empty() ? "" : " ") + fmt(v);
    o.summary = {{"discrepancy", s}, {"k_T(0)", fmt(rep.k0)}};
    o.results.push_back(rep.result);
    return o;
}

inline StageOutput stage_green(Node n, const StageContext& c) {
    verify::GreenConfig g;
    g.env = c.env;
    g.d = c.torus.d;
    g.L = c.torus.L;
    auto lim = parse_limits(n);
    g.T_cut = n.req<double>("T_cut");
    g.radii = n.req<std::vector<int>>("radii");
    g.fit_lo = n.req<double>("fit_lo");
    g.fit_hi = n.req<double>("fit_hi");
    g.slope_target = n.req<double>("slope_target");
    g.slope_tol = n.req<double>("slope_tolerance");
    g.ratio_lo = n.req<double>("ratio_lo");
    g.ratio_hi = n.req<double>("ratio_hi");
    auto pc = n.req<std::string>("prefactor_constant");
    if (pc != "stated" && pc != "directional") Node::fail(n.at("prefactor_constant"), "expected 'stated' or 'directional'");
    g.stated_constant = pc == "stated";
    g.sigma = resolve_sigma(n.raw("sigma"), n.at("sigma"), c, lim);
    n.done();
    g.seed = c.seed;
    auto rep = verify::green_asymptotics(g);
    StageOutput o;
    std::ostringstream gs;
    gs << "radius,value,tail,raw,image_correction\n";
    char buf[200];
    for (std::size_t i = 0; i < rep.radii.size(); ++i) {
        auto& v = rep.values[i];
        std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g\n", rep.radii[i], v.extrapolated(), v.tail, v.raw,
                      v.image_correction);
        gs << buf;
    }
    o.files.push_back({"green.csv", gs.str()});
    o.results.push_back(rep.result);
    o.results.back().estimates["green"] = rep.green_json;
    o.summary = {{"slope", fmt(rep.slope)},
                 {"C_hat", fmt(rep.C_hat)},
                 {"ratio (stated constant)", fmt(rep.ratio_stated)},
                 {"ratio (directional constant)", fmt(rep.ratio_directional)}};
    return o;
}

inline StageOutput stage_csrw(Node n, const StageContext& c) {
    verify::RelationConfig r{c.env, c.torus.d, c.torus.L};
    r.eps = n.req<double>("eps");
    r.paths = n.req<int>("paths");
    r.annealed = parse_mode(n.req<std::string>("mode"), n.at("mode"));
    r.sigmas = n.req<double>("sigmas");
    n.done();
    r.seed = c.seed;
    r.threads = c.threads;
    auto rep = verify::csrw_vsrw_relation(r);
    StageOutput o;
    o.results.push_back(rep.result);
    o.summary = {{"Sigma_V(0,0)", fmt(rep.sv(0, 0))},
                 {"Sigma_C(0,0) E mu_0", fmt(rep.sc(0, 0) * rep.mean_rate)},
                 {"max |diff| / se", fmt((rep.diff.array().abs() / rep.combined_se.array()).maxCoeff())}};
    return o;
}

inline StageOutput stage_gl(Node n, const StageContext& c) {
    verify::GLCovConfig g;
    g.d = c.torus.d;
    g.L = c.torus.L;
    g.pot = {n.req<double>("c_minus"), n.req<double>("c_plus")};
    g.dt = n.req<double>("dt");
    g.burn_in = n.req<double>("burn_in");
    g.lags = n.req<std::vector<double>>("lags");
    g.shifts = n.req<std::vector<std::vector<int>>>("shifts");
    g.direct_replicas = n.req<int>("direct_replicas");
    g.direct_run = n.req<double>("direct_run");
    g.record_every = n.req<double>("record_every");
    g.hs_samples = n.req<int>("hs_samples");
    g.hs_tcut = n.req<double>("hs_tcut");
    g.sigmas = n.req<double>("sigmas");
    g.ladder = n.opt<std::vector<int>>("ladder", {});
    if (!g.ladder.empty()) {
        g.ladder_L0 = n.req<int>("ladder_L0");
        g.ladder_t = n.req<double>("ladder_t");
        g.ladder_y = n.req<std::vector<double>>("ladder_y");
        g.ladder_tcut0 = n.req<double>("ladder_tcut0");
        g.ladder_samples = n.opt<int>("ladder_samples", g.ladder_samples);
        g.sigma_paths = n.opt<int>("sigma_paths", g.sigma_paths);
        g.sigma_time = n.opt<double>("sigma_time", g.sigma_time);
    }
    n.done();
    g.seed = c.seed;
    g.threads = c.threads;
    auto rep = verify::gl_covariance_scaling(g);
    StageOutput o;
    o.results.push_back(rep.result);
    std::ostringstream cs;
    cs << "t,shift_index,direct,direct_stderr,hs,hs_stderr,hs_tail,gaussian_oracle\n";
    char buf[240];
    for (auto& p : rep.points) {
        std::snprintf(buf, sizeof buf, "%.17g,%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", p.t,
                      Lattice(g.d, g.L).site(p.y), p.direct.value, p.direct.stderr_, p.hs.value, p.hs.stderr_, p.tail,
                      p.oracle);
        cs << buf;
        o.summary.push_back({"t=" + fmt(p.t) + " y=" + std::to_string(p.y[0]),
                             "direct " + fmt(p.direct.value) + " +- " + fmt(p.direct.stderr_) + ", HS " +
                                 fmt(p.hs.value) + " +- " + fmt(p.hs.stderr_)});
    }
    o.files.push_back({"gl_covariance.csv", cs.str()});
    if (!rep.ladder.empty()) {
        std::string s;
        for (std::size_t i = 0; i < rep.ladder.size(); ++i) s += (i ? " " : "") + fmt(rep.scaled[i]);
        o.summary.push_back({"scaled cov over ladder", s + " (limit " + fmt(rep.limit) + ")"});
    }
    return o;
}

inline StageOutput stage_twowalk(Node n, const StageContext& c) {
    verify::TwoWalkConfig t{c.env, c.torus.d, c.torus.L};
    t.radii = n.req<std::vector<double>>("radii");
    t.times = n.req<std::vector<double>>("times");
    t.paths = n.req<int>("paths");
    t.stability_max = n.req<double>("stability_max");
    n.done();
    t.seed = c.seed;
    t.threads = c.threads;
    auto rep = verify::two_walk_suite(t);
    StageOutput o;
    o.results.push_back(rep.result);
    o.summary = {{"c", fmt(rep.c)}, {"stability", fmt(rep.stability)}};
    return o;
}

inline Probe parse_probe(Node n) {
    Probe p;
    p.edge = n.req<int>("edge");
    p.time = n.req<double>("time");
    p.indicator = n.opt<bool>("indicator", false);
    p.threshold = n.opt<double>("threshold", 0.0);
    n.done();
    return p;
}

inline StageOutput stage_mixing(Node n, const StageContext& c) {
    Probe a = parse_probe(n.child("phi")), b = parse_probe(n.child("psi"));
    int samples = n.req<int>("samples");
    double expected = n.req<double>("expected");
    double sig = n.req<double>("sigmas");
    n.done();
    require(a.edge >= 0 && a.edge < c.torus.edges() && b.edge >= 0 && b.edge < c.torus.edges(),
            "mixing: probe edge out of range");
    auto m = empirical_mixing(c.env, c.torus, a, b, std::size_t(samples), c.seed);
    StageOutput o;
    verify::EnsembleResult r;
    r.experiment = "mixing";
    r.levels.push_back(samples);
    r.estimates = {{"covariance", m.covariance}};
    r.stderr_ = {{"covariance", m.stderr_}};
    r.fits = {{"expected", expected}, {"sigmas", sig}};
    r.pass = std::abs(m.covariance - expected) <= sig * m.stderr_ || m.covariance == expected;
    o.results.push_back(r);
    o.summary = {{"|cov|", fmt(m.covariance) + " +- " + fmt(m.stderr_)}};
    return o;
}

inline StageOutput run_stage(const std::string& name, Node n, const StageContext& c) {
    if (name == "simulate") return stage_simulate(std::move(n), c);
    if (name == "heatkernel") return stage_heatkernel(std::move(n), c);
    if (name == "corrector") return stage_corrector(std::move(n), c);
    if (name == "fclt") return stage_fclt(std::move(n), c);
    if (name == "llt") return stage_llt(std::move(n), c);
    if (name == "green") return stage_green(std::move(n), c);
    if (name == "csrw") return stage_csrw(std::move(n), c);
    if (name == "gl") return stage_gl(std::move(n), c);
    if (name == "twowalk") return stage_twowalk(std::move(n), c);
    if (name == "mixing") return stage_mixing(std::move(n), c);
    throw ConfigError("unknown stage '" + name + "'");
}

inline void write_file(const fs::path& p, const std::string& s) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw ResourceError("cannot write " + p.string());
    f << s;
    if (!f) throw ResourceError("write failed: " + p.string());
}

struct RunResult {
    int exit_code = 1;
    fs::path out_dir;
    std::vector<std::string> json_files;
};

// Loads a config or a manifest written by a previous run. A manifest
// carries the config and the master seed it ran with.
inline std::pair<json, std::optional<std::uint64_t>> load_config(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot open config '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    json j = parse_json_text(ss.str(), path);
    if (j.is_object() && j.contains("manifest_version")) {
        if (!j.contains("config") || !j.contains("master_seed") || !j["master_seed"].is_number_unsigned())
            throw ConfigError(path + ": manifest lacks config or master_seed");
        return {j["config"], j["master_seed"].get<std::uint64_t>()};
    }
    return {j, std::nullopt};
}

inline RunResult run(const RunOptions& opt, std::ostream& out, std::ostream& err) {
    RunResult res;
    try {
        bool all = opt.subcommand == "all";
        if (!all && std::find(kStages.begin(), kStages.end(), opt.subcommand) == kStages.end())
            throw ConfigError("unknown subcommand '" + opt.subcommand + "'");
        auto [cfg, manifest_seed] = load_config(opt.config_path);
        json resolved = json::object();
        Node top(cfg, "", &resolved);
        int ver = top.req<int>("schema_version");
        if (ver != kSchemaVersion)
            Node::fail("schema_version", "unsupported version " + std::to_string(ver));
        auto experiment = top.req<std::string>("experiment");
        std::optional<std::uint64_t> cfg_seed;
        if (top.has("master_seed")) cfg_seed = top.req<std::uint64_t>("master_seed");
        int threads = top.opt<int>("threads", 1);
        auto out_dir = top.req<std::string>("output_dir");
        Node tn = top.child("torus");
        TorusSpec torus = parse_torus(tn);
        EnvModelSpec env = parse_environment(top.child("environment"));
        WalkKind walk = parse_walk(top.opt<std::string>("walk_kind", "vsrw"), "walk_kind");
        Node stages = top.child("stages");
        top.done();

        std::uint64_t seed;
        if (opt.seed) seed = *opt.seed;
        else if (manifest_seed) seed = *manifest_seed;
        else if (cfg_seed) seed = *cfg_seed;
        else if (const char* e = std::getenv("DYNCOND_SEED")) {
            char* end = nullptr;
            errno = 0;
            unsigned long long v = std::strtoull(e, &end, 10);
            if (!*e || *end || errno || e[0] == '-') throw ConfigError("DYNCOND_SEED is not a 64-bit unsigned integer");
            seed = v;
        } else throw ConfigError("no seed: pass --seed, set master_seed in the config, or set DYNCOND_SEED");
        if (opt.threads) threads = *opt.threads;
        require(threads >= 1, "threads must be >= 1");
        fs::path dir = opt.out ? fs::path(*opt.out) : fs::path(out_dir);
        res.out_dir = dir;

        std::vector<std::string> todo;
        if (all) {
            for (auto& s : kStages)
                if (stages.has(s)) todo.push_back(s);
            if (todo.empty()) throw ConfigError("config: stages: no stage sections for 'all'");
        } else {
            if (!stages.has(opt.subcommand)) Node::fail(stages.at(opt.subcommand), "missing stage section");
            todo.push_back(opt.subcommand);
        }
        // Validate every stage section present, so typos fail before any work.
        for (auto it = cfg["stages"].begin(); it != cfg["stages"].end(); ++it)
            if (std::find(kStages.begin(), kStages.end(), it.key()) == kStages.end())
                Node::fail("stages." + it.key(), "unknown stage");
        for (auto& s : kStages)
            if (stages.has(s)) stages.skip(s);
        stages.done();

        std::string config_hash = git_blob_hash(cfg.dump());
        fs::create_directories(dir);
        json manifest = {{"manifest_version", 1},
                         {"tool_version", DYNCOND_VERSION},
                         {"config", cfg},
                         {"config_hash", config_hash},
                         {"master_seed", seed},
                         {"threads", threads},
                         {"subcommand", opt.subcommand}};
        json stage_seeds = json::object(), wall = json::object(), inventory = json::object();
        std::ostringstream summary;
        summary << "experiment " << experiment << "  seed " << seed << "  config " << config_hash.substr(0, 12) << "\n";
        bool pass = true;
        std::string inputs;
        for (auto& name : todo) {
            json& rs = resolved["stages"][name];
            Node sn(cfg["stages"][name], "stages." + name, &rs);
            StageContext c{name, torus, env, walk, rng::derive(seed, name), threads, config_hash};
            if (sn.has("torus")) c.torus = parse_torus(sn.child("torus"));
            if (sn.has("environment")) c.env = parse_environment(sn.child("environment"));
            if (sn.has("walk_kind")) c.walk = parse_walk(sn.req<std::string>("walk_kind"), sn.at("walk_kind"));
            c.env.validate(c.torus);
            stage_seeds[name] = c.seed;
            auto t0 = std::chrono::steady_clock::now();
            StageOutput so = run_stage(name, std::move(sn), c);
            wall[name] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            summary << "\n[" << name << "]\n";
            std::size_t w = 8;
            for (auto& [k, v] : so.summary) w = std::max(w, k.size());
            for (auto& r : so.results) {
                r.config_hash = config_hash;
                r.seed = c.seed;
                std::string file = r.experiment + ".json";
                std::string body = r.to_json().dump(2) + "\n";
                write_file(dir / file, body);
                inventory[file] = git_blob_hash(body);
                res.json_files.push_back(file);
                summary << "  " << std::left << std::setw(int(w)) << r.experiment << "  " << (r.pass ? "PASS" : "FAIL")
                        << "\n";
                pass &= r.pass;
            }
            for (auto& [k, v] : so.summary) summary << "  " << std::left << std::setw(int(w)) << k << "  " << v << "\n";
            for (auto& [f, body] : so.files) {
                write_file(dir / f, body);
                inventory[f] = git_blob_hash(body);
            }
        }
        manifest["resolved"] = resolved;
        manifest["inputs_hash"] = git_blob_hash(resolved.dump());
        manifest["stage_seeds"] = stage_seeds;
        manifest["wall_clock_seconds"] = wall;
        summary << "\noverall " << (pass ? "PASS" : "FAIL") << "\n";
        write_file(dir / "summary.txt", summary.str());
        inventory["summary.txt"] = git_blob_hash(summary.str());
        manifest["outputs"] = inventory;
        write_file(dir / "manifest.json", manifest.dump(2) + "\n");
        if (!opt.quiet) out << summary.str();
        res.exit_code = pass ? 0 : 2;
    } catch (const Error& e) {
        err << "dyncond: " << e.kind() << ": " << e.what() << "\n";
        res.exit_code = 1;
    } catch (const json::exception& e) {
        err << "dyncond: config: " << e.what() << "\n";
        res.exit_code = 1;
    } catch (const std::exception& e) {
        err << "dyncond: error: " << e.what() << "\n";
        res.exit_code = 1;
    }
    return res;
}

} // namespace dyncond::cli
