#include <CLI11.hpp>

#include "dyncond/cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"dyncond: random walks among dynamic random conductances"};
    app.set_version_flag("--version", std::string(DYNCOND_VERSION));
    app.require_subcommand(1);

    dyncond::cli::RunOptions opt;
    std::uint64_t seed = 0;
    std::string out;
    int threads = 0;
    auto* run = app.add_subcommand("run", "run an experiment stage (or all stages) from a config");
    run->add_option("subcommand", opt.subcommand, "simulate|heatkernel|corrector|fclt|llt|green|csrw|gl|twowalk|mixing|all")
        ->required();
    run->add_option("--config", opt.config_path, "config JSON (or a manifest from a previous run)")->required();
    auto* so = run->add_option("--seed", seed, "master seed, overrides the config and DYNCOND_SEED");
    auto* oo = run->add_option("--out", out, "output directory, overrides output_dir");
    auto* to = run->add_option("--threads", threads, "worker threads, overrides threads")->check(CLI::PositiveNumber);
    run->add_flag("--quiet", opt.quiet, "do not print the summary table");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }
    if (*so) opt.seed = seed;
    if (*oo) opt.out = out;
    if (*to) opt.threads = threads;
    return dyncond::cli::run(opt, std::cout, std::cerr).exit_code;
}
