// Acceptance suite: one PASS/FAIL line per criterion. Tolerances and budgets
// are fixed here. Run all criteria, or one with --criterion N.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "dyncond/cli.hpp"

using namespace dyncond;
using json = nlohmann::json;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Criterion {
    int id;
    const char* title;
    double budget_s;
    std::function<Outcome()> run;
};

std::string f(double v, const char* spec = "%.4g") {
    char b[64];
    std::snprintf(b, sizeof b, spec, v);
    return b;
}

constexpr std::uint64_t kSeed = 0x5eedACCE;

// Environments used for the stochasticity and composition checks.
struct EnvCase {
    std::string name;
    EnvModelSpec spec;
    TorusSpec torus;
};

std::vector<EnvCase> env_suite() {
    std::vector<double> pat2;
    for (int i = 0; i < 8; ++i) pat2.push_back(1.0 + 0.25 * i);
    return {
        {"constant-d1", EnvModelSpec::constant(1.0), {1, 7, 4}},
        {"constant-d2", EnvModelSpec::constant(2.0), {2, 4, 4}},
        {"iid-d1", EnvModelSpec::iid(0.5, 2.0), {1, 9, 4}},
        {"iid-d2", EnvModelSpec::iid(1.0, 3.0), {2, 4, 4}},
        {"periodic-d1", EnvModelSpec::periodic(2, {1, 3}), {1, 8, 4}},
        {"periodic-d2", EnvModelSpec::periodic(2, pat2), {2, 4, 4}},
        {"markovflip-d1", EnvModelSpec::markov_flip(1, 3, 1.0), {1, 8, 4}},
        {"markovflip-d2", EnvModelSpec::markov_flip(0.5, 2, 0.5), {2, 4, 3}},
        {"gl-d1", EnvModelSpec::ginzburg_landau(1, 2, 0.02, 5), {1, 8, 1}},
        {"gl-d2", EnvModelSpec::ginzburg_landau(1, 2, 0.02, 5), {2, 4, 0.5}},
    };
}

Outcome ac01() {
    auto env = sample_environment(EnvModelSpec::constant(1), {1, 3, 1}, 0);
    double p = solve_forward(env, 0, 1).P(0, 0);
    double exact = 1.0 / 3 + 2.0 / 3 * std::exp(-3.0);
    double err = std::abs(p - exact);
    return {err <= 1e-9, "p=" + f(p, "%.15f") + " err=" + f(err)};
}

Outcome ac02() {
    double worst = 0;
    int matrices = 0;
    for (auto& c : env_suite()) {
        auto env = sample_environment(c.spec, c.torus, rng::derive(kSeed, c.name));
        double T = c.torus.horizon;
        for (auto [s, t] : std::vector<std::pair<double, double>>{{0, T}, {0, T / 3}, {T / 4, T}, {T / 2, T / 2}}) {
            auto tm = solve_forward(env, s, t);
            worst = std::max({worst, (tm.P.rowwise().sum().array() - 1).abs().maxCoeff(),
                              (tm.P.colwise().sum().array() - 1).abs().maxCoeff()});
            ++matrices;
        }
    }
    return {worst <= 1e-9, std::to_string(matrices) + " matrices, max |sum-1|=" + f(worst)};
}

Outcome ac03() {
    double worst = 0;
    std::string where;
    for (auto& c : env_suite()) {
        auto env = sample_environment(c.spec, c.torus, rng::derive(kSeed, c.name));
        rng::Stream rs = rng::Stream(kSeed).split(c.name + "/ck");
        double T = c.torus.horizon;
        for (int k = 0; k < 20; ++k) {
            double a[3] = {rs.uniform() * T, rs.uniform() * T, rs.uniform() * T};
            std::sort(a, a + 3);
            auto P = solve_forward(env, a[0], a[2]).P;
            Eigen::MatrixXd Q = solve_forward(env, a[0], a[1]).P * solve_forward(env, a[1], a[2]).P;
            double e = (P - Q).cwiseAbs().maxCoeff();
            if (e > worst) worst = e, where = c.name;
        }
    }
    return {worst <= 1e-9, "20 triples x 10 envs, max err=" + f(worst) + (where.empty() ? "" : " (" + where + ")")};
}

Outcome ac04() {
    auto spec = EnvModelSpec::periodic(2, {1, 3});
    auto sp = build_env_chain(spec, 1);
    auto S = diffusion_matrix(sp, solve_poisson(sp));
    // Series resistors: effective conductance per unit length is the harmonic mean.
    double R = 1.0 / 1 + 1.0 / 3, network = 2.0 * 2.0 / R;
    bool exact = std::abs(S(0, 0) - 3.0) <= 1e-10 && std::abs(S(0, 0) - network) <= 1e-10;
    const double t = 100;
    const int paths = 100000;
    TorusSpec ts{1, 4, t};
    auto env = sample_environment(spec, ts, 0);
    std::vector<double> x(paths);
    for (int i = 0; i < paths; ++i) {
        rng::Stream rs = rng::Stream(rng::derive(kSeed, std::uint64_t(i))).split("walk");
        x[i] = simulate_vsrw(env, 0, 0, t, rs).final_displacement()[0];
    }
    auto v = stats::batch_estimate(x.size(), [&](std::size_t a, std::size_t b) {
        std::vector<double> s(x.begin() + std::ptrdiff_t(a), x.begin() + std::ptrdiff_t(b));
        return stats::variance(s) / t;
    });
    bool mc = std::abs(v.value - 3.0) <= 3 * v.stderr_;
    return {exact && mc, "Sigma=" + f(S(0, 0), "%.13f") + " network=" + f(network, "%.13f") + " Var/t=" +
                             f(v.value) + "+-" + f(v.stderr_)};
}

Outcome ac05() {
    bool ok = true;
    std::ostringstream d;
    for (int dim = 1; dim <= 3; ++dim) {
        double c = 1.0;
        auto spec = EnvModelSpec::constant(c);
        auto sp = build_env_chain(spec, dim);
        auto sol = solve_poisson(sp);
        auto S = diffusion_matrix(sp, sol);
        Eigen::MatrixXd ref = 2 * c * Eigen::MatrixXd::Identity(dim, dim);
        double se = (S - ref).cwiseAbs().maxCoeff();
        double chi = sol.U.cwiseAbs().maxCoeff();
        double ul = 0;
        for (double lam : {1.0, 1e-2, 1e-4}) ul = std::max(ul, solve_resolvent(sp, lam).U.cwiseAbs().maxCoeff());
        verify::FcltConfig fc{spec, dim, 4};
        fc.eps = {1.0, 1.0 / 16};
        fc.paths = 10000;
        fc.sigma_ref = ref;
        fc.seed = rng::derive(kSeed, std::uint64_t(dim));
        auto r = verify::fclt_test(fc);
        bool pass = se <= 1e-12 && chi <= 1e-12 && ul <= 1e-12 && r.cov_ok;
        ok &= pass;
        double z = ((r.levels.back().cov - ref).array().abs() / r.levels.back().cov_se.array()).maxCoeff();
        d << "d=" << dim << ": |S-2cI|=" << f(se) << " max|chi|=" << f(chi) << " max|u_l|=" << f(ul)
          << " cov z_max=" << f(z, "%.2f") << "; ";
    }
    return {ok, d.str()};
}

EnvModelSpec modulated_d2() {
    std::vector<std::vector<double>> pats;
    rng::Stream rs = rng::Stream(kSeed).split("patterns");
    for (int m = 0; m < 3; ++m) {
        std::vector<double> p(8);
        for (auto& v : p) v = 1.0 + 2.0 * rs.uniform();
        pats.push_back(p);
    }
    // Symmetric Q: the modulation is reversible, so the unperturbed part is normal.
    return EnvModelSpec::modulated(2, pats, {{-1.0, 0.6, 0.4}, {0.6, -1.5, 0.9}, {0.4, 0.9, -1.3}});
}

Outcome ac06() {
    auto sp = build_env_chain(modulated_d2(), 2);
    std::vector<double> ts, lams;
    for (double t = 1; t <= 1000; t *= 2) ts.push_back(t);
    ts.push_back(1000);
    for (int k = 0; k <= 20; ++k) lams.push_back(std::ldexp(1.0, -k));
    auto r = ptv_growth(sp, ts, lams, 1.0, 1e3);
    bool dec = true;
    for (std::size_t k = 1; k < r.lambda_u2.size(); ++k) dec &= r.lambda_u2[k] < r.lambda_u2[k - 1];
    double ratio = r.lambda_u2.back() / r.lambda_u2.front();
    bool pass = dec && ratio < 1e-3 && r.alpha_hat <= 0.1;
    return {pass, std::string("lambda|u|^2 strictly decreasing=") + (dec ? "yes" : "no") + " final/initial=" +
                      f(ratio) + " alpha_hat=" + f(r.alpha_hat) + " |int P_s V|(1e3)=" + f(r.integral_norm.back())};
}

Outcome ac07() {
    auto spec = EnvModelSpec::periodic(2, {1, 3});
    auto sp = build_env_chain(spec, 1);
    auto sol = solve_poisson(sp);
    auto S = diffusion_matrix(sp, sol);
    Eigen::VectorXd v = Eigen::VectorXd::Ones(1);
    auto m = martingale_check(sp, sol, spec, {1, 4, 100}, S, 10000, rng::derive(kSeed, "martingale"), {1, 10, 100}, v);
    bool means = true;
    for (std::size_t k = 0; k < 2; ++k) means &= std::abs(m.inc_mean[k][0]) <= 3 * m.inc_stderr[k][0];
    bool var = std::abs(m.var_ratio - 3.0) <= 3 * m.var_ratio_stderr;
    double coc = cocycle_error(sp, sol, 1000, kSeed);
    return {means && var && coc <= 1e-12,
            "E M_1=" + f(m.inc_mean[0][0]) + "+-" + f(m.inc_stderr[0][0]) + " E M_10=" + f(m.inc_mean[1][0]) + "+-" +
                f(m.inc_stderr[1][0]) + " Var(M_100)/100=" + f(m.var_ratio) + "+-" + f(m.var_ratio_stderr) +
                " cocycle=" + f(coc)};
}

Outcome ac08() {
    bool ok = true;
    std::ostringstream d;
    std::vector<std::pair<std::string, std::pair<EnvModelSpec, int>>> cases{
        {"periodic-d1", {EnvModelSpec::periodic(2, {1, 3}), 1}},
        {"modulated-d2", {modulated_d2(), 2}},
        {"markovflip-d1", {EnvModelSpec::markov_flip(1, 3, 1.0, 3), 1}},
    };
    for (auto& [name, c] : cases) {
        auto sp = build_env_chain(c.first, c.second);
        auto r = check_decomposition(sp, 100, rng::derive(kSeed, name));
        bool pass = r.normality_defect <= 1e-10 && r.sector_constant <= r.sector_bound;
        ok &= pass;
        d << name << ": defect=" << f(r.normality_defect) << " sector=" << f(r.sector_constant) << "<=" << f(r.sector_bound)
          << "; ";
    }
    return {ok, d.str()};
}

Outcome ac09() {
    auto spec = EnvModelSpec::markov_flip(1, 3, 4.0, 2);
    EnvChainLimits lim;
    lim.max_modulation_states = 256;
    auto sp = build_env_chain(spec, 2, 0, lim);
    Eigen::MatrixXd S = diffusion_matrix(sp, solve_poisson(sp));
    bool ok = true;
    std::ostringstream d;
    d << "Sigma=[" << f(S(0, 0)) << " " << f(S(0, 1)) << "; " << f(S(1, 0)) << " " << f(S(1, 1)) << "] ";
    for (bool annealed : {false, true}) {
        verify::FcltConfig c{spec, 2, 4};
        c.eps = {1.0 / 4, 1.0 / 8, 1.0 / 16};
        c.paths = 10000;
        c.annealed = annealed;
        c.sigma_ref = S;
        c.seed = rng::derive(kSeed, annealed ? "annealed" : "quenched");
        auto r = verify::fclt_test(c);
        ok &= r.ks_decreasing && r.cov_ok;
        auto& fin = r.levels.back();
        double z = ((fin.cov - S).array().abs() / fin.cov_se.array()).maxCoeff();
        d << (annealed ? "annealed" : "quenched") << " KS=";
        for (auto& lv : r.levels) d << f(lv.ks) << (&lv == &r.levels.back() ? "" : ">");
        d << " cov z_max=" << f(z, "%.2f") << "; ";
    }
    return {ok, d.str()};
}

Outcome ac10() {
    std::vector<std::vector<double>> xs;
    for (double x = -2; x <= 2 + 1e-9; x += 0.5) xs.push_back({x});
    verify::LltConfig c;
    c.ns = {4, 16, 64};
    c.t_grid = {1, 2};
    c.x_grid = xs;
    c.L = 112;
    c.sigma = Eigen::MatrixXd::Constant(1, 1, 2.0);
    auto a = verify::llt_suite(c);
    auto spec = EnvModelSpec::markov_flip(1, 3, 1.0, 4);
    auto sp = build_env_chain(spec, 1);
    verify::LltConfig e = c;
    e.env = spec;
    e.sigma = diffusion_matrix(sp, solve_poisson(sp));
    e.L = 168;
    e.ensemble = 50;
    e.annealed = true;
    e.seed = rng::derive(kSeed, "llt");
    auto b = verify::llt_suite(e);
    auto seq = [](const verify::LltReport& r) {
        std::string s;
        for (std::size_t i = 0; i < r.sup.size(); ++i)
            s += (i ? " " : "") + f(r.sup[i]) + (r.se[i] > 0 ? "+-" + f(r.se[i], "%.2g") : "");
        return s;
    };
    return {a.pass && b.pass, "constant: " + seq(a) + " (k_T(0)=" + f(a.k0) + "); markovflip x50: " + seq(b) +
                                  " (k_T(0)=" + f(b.k0) + ", Sigma=" + f(e.sigma(0, 0)) + ")"};
}

Outcome ac11() {
    verify::GreenConfig g;
    g.L = 25;
    g.T_cut = 200;
    g.sigma = 2 * Eigen::MatrixXd::Identity(3, 3);
    g.radii = {3, 4, 5, 6, 7, 8};
    g.fit_lo = 3;
    g.fit_hi = 8;
    g.slope_target = -1;
    g.slope_tol = 0.3;
    g.ratio_lo = 0.8;
    g.ratio_hi = 1.2;
    g.stated_constant = true;
    auto r = verify::green_asymptotics(g);
    return {r.slope_ok && r.prefactor_ok,
            "slope=" + f(r.slope) + (r.slope_ok ? " ok" : " out") + "; C_hat=" + f(r.C_hat) +
                " ratio vs stated constant " + f(r.C_stated) + " = " + f(r.ratio_stated) +
                (r.prefactor_ok ? " ok" : " out of [0.8,1.2]") + "; ratio vs covariance-correct constant " +
                f(r.C_directional) + " = " + f(r.ratio_directional)};
}

Outcome ac12() {
    bool ok = true;
    std::ostringstream d;
    std::vector<std::pair<std::string, EnvModelSpec>> cases{{"constant", EnvModelSpec::constant(1)},
                                                            {"alternating(1,3)", EnvModelSpec::periodic(2, {1, 3})}};
    for (auto& [name, spec] : cases) {
        verify::RelationConfig c{spec, 1, 4};
        c.eps = 1.0 / 16;
        c.paths = 10000;
        c.seed = rng::derive(kSeed, name);
        auto r = verify::csrw_vsrw_relation(c);
        ok &= r.pass;
        d << name << ": Sigma_V=" << f(r.sv(0, 0)) << " Sigma_C*E mu=" << f(r.sc(0, 0) * r.mean_rate)
          << " |diff|/se=" << f(std::abs(r.diff(0, 0)) / r.combined_se(0, 0), "%.2f") << "; ";
    }
    return {ok, d.str()};
}

Outcome ac13() {
    auto base = [](double cm, double cp) {
        verify::GLCovConfig g;
        g.d = 1;
        g.L = 32;
        g.pot = {cm, cp};
        g.dt = 0.01;
        g.burn_in = 200;
        g.lags = {0.5, 1.0};
        g.shifts = {{0}, {2}};
        g.direct_replicas = 40;
        g.direct_run = 2500;
        g.record_every = 0.5;
        g.hs_samples = 40;
        g.hs_tcut = 250;
        g.sigmas = 3;
        g.ladder.clear();
        return g;
    };
    auto q = base(1, 1);
    q.ladder = {2, 4, 8};
    q.ladder_L0 = 4;
    q.ladder_t = 0.5;
    q.ladder_y = {0.5};
    q.ladder_tcut0 = 10;
    q.seed = rng::derive(kSeed, "gl-quadratic");
    auto rq = verify::gl_covariance_scaling(q);
    auto n = base(1, 2);
    n.seed = rng::derive(kSeed, "gl-12");
    auto rn = verify::gl_covariance_scaling(n);
    std::ostringstream d;
    auto pts = [&](const verify::GLCovReport& r) {
        for (auto& p : r.points)
            d << "(t=" << p.t << ",y=" << p.y[0] << ") " << f(p.direct.value) << "+-" << f(p.direct.stderr_, "%.2g")
              << " vs " << f(p.hs.value) << (r.quadratic ? "" : "+-" + f(p.hs.stderr_, "%.2g")) << " ";
    };
    d << "quadratic: ";
    pts(rq);
    d << "trend N^{d-2}cov=";
    for (double v : rq.scaled) d << f(v) << " ";
    d << "-> " << f(rq.limit) << (rq.trend_monotone ? " monotone" : " not monotone") << "; (1,2): ";
    pts(rn);
    return {rq.pass && rn.pass, d.str()};
}

Outcome ac14() {
    bool ok = true;
    std::ostringstream d;
    std::vector<std::pair<std::string, std::pair<EnvModelSpec, int>>> cases{
        {"periodic-d1", {EnvModelSpec::periodic(2, {1, 3}), 1}},
        {"modulated-d2", {modulated_d2(), 2}},
    };
    for (auto& [name, c] : cases) {
        verify::SublinearityConfig s{c.first, c.second};
        s.ns = {10, 100, 1000};
        s.paths = 2000;
        s.exponent_max = 0.5;
        s.seed = rng::derive(kSeed, name);
        auto r = verify::corrector_sublinearity(s);
        ok &= r.pass;
        d << name << ": E|chi|^2/n=";
        for (double v : r.ratio) d << f(v) << " ";
        d << "2alpha=" << f(r.two_alpha) << "; ";
    }
    return {ok, d.str()};
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

Outcome ac15() {
    namespace fs = std::filesystem;
    auto root = fs::temp_directory_path() / "dyncond_acceptance_15";
    fs::remove_all(root);
    std::ostringstream sink;
    auto go = [&](const fs::path& cfg, const fs::path& out) {
        cli::RunOptions o;
        o.subcommand = "all";
        o.config_path = cfg.string();
        o.out = out.string();
        o.quiet = true;
        return cli::run(o, sink, sink);
    };
    auto first = go(fs::path(DYNCOND_CONFIG_DIR) / "smoke.json", root / "seed");
    if (first.exit_code == 1) return {false, "seed run failed: " + sink.str()};
    auto manifest = root / "seed" / "manifest.json";
    auto a = go(manifest, root / "a"), b = go(manifest, root / "b");
    if (a.exit_code == 1 || b.exit_code == 1) return {false, "manifest run failed: " + sink.str()};
    int files = 0, same = 0;
    for (auto& e : fs::directory_iterator(root / "a")) {
        if (e.path().extension() != ".json" || e.path().filename() == "manifest.json") continue;
        ++files;
        same += slurp(e.path()) == slurp(root / "b" / e.path().filename()) &&
                slurp(e.path()) == slurp(root / "seed" / e.path().filename());
    }
    // Manifests agree everywhere except the wall-clock record.
    auto strip = [&](const fs::path& p) {
        auto j = json::parse(slurp(p));
        j.erase("wall_clock_seconds");
        return j.dump();
    };
    bool man = strip(root / "a" / "manifest.json") == strip(root / "b" / "manifest.json");
    return {files > 0 && same == files && man,
            std::to_string(same) + "/" + std::to_string(files) + " result JSON files byte-identical across 3 runs; manifests " +
                (man ? "identical" : "differ") + " apart from wall clock"};
}

} // namespace

int main(int argc, char** argv) {
    std::vector<Criterion> all{
        {1, "exact heat kernel on the 3-ring", 1, ac01},
        {2, "double stochasticity over the env suite", 30, ac02},
        {3, "Chapman-Kolmogorov composition", 30, ac03},
        {4, "homogenization oracle (1,3)", 120, ac04},
        {5, "constant-environment battery", 180, ac05},
        {6, "resolvent and semigroup scaling", 60, ac06},
        {7, "martingale decomposition", 120, ac07},
        {8, "generator decomposition", 30, ac08},
        {9, "FCLT trend", 600, ac09},
        {10, "LLT trend", 600, ac10},
        {11, "Green's function asymptotics", 600, ac11},
        {12, "CSRW/VSRW relation", 300, ac12},
        {13, "Ginzburg-Landau HS consistency", 900, ac13},
        {14, "corrector sublinearity", 300, ac14},
        {15, "reproducibility of run all", 600, ac15},
    };
    int only = 0;
    for (int i = 1; i < argc; ++i) {
        if (!std::strcmp(argv[i], "--criterion") && i + 1 < argc) only = std::atoi(argv[++i]);
        else {
            std::fprintf(stderr, "usage: acceptance [--criterion N]\n");
            return 1;
        }
    }
    bool ok = true;
    int ran = 0;
    for (auto& c : all) {
        if (only && c.id != only) continue;
        ++ran;
        auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        bool in_time = secs < c.budget_s;
        bool pass = o.pass && in_time;
        std::printf("%s AC%02d %s: %s [%.2fs / %.0fs%s]\n", pass ? "PASS" : "FAIL", c.id, c.title, o.detail.c_str(),
                    secs, c.budget_s, in_time ? "" : " over budget");
        std::fflush(stdout);
        ok &= pass;
    }
    if (!ran) {
        std::fprintf(stderr, "no such criterion\n");
        return 1;
    }
    return ok ? 0 : 1;
}
