// Experiment driver. One subcommand per experiment plus a dataset
// generator. Exit codes: 0 on success, 2 for configuration or input
// problems, 3 for numeric failures mid-run.

#include <cstdio>
#include <exception>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "bulkspace/config.hpp"
#include "bulkspace/errors.hpp"
#include "bulkspace/experiments.hpp"
#include "bulkspace/problems.hpp"

namespace {

struct ExperimentArgs {
    std::string config_path;
    std::optional<long long> seed;
    std::optional<std::string> out;
    std::optional<std::string> plots;
};

int run_one(const std::string& kind, const ExperimentArgs& args) {
    bulkspace::Config cfg = bulkspace::Config::parse_file(args.config_path);
    if (args.seed) cfg.set("seed", std::to_string(*args.seed));
    bulkspace::RunPaths paths;
    paths.metrics = args.out ? *args.out
                             : cfg.get_str("out", kind + "_metrics.jsonl");
    if (args.plots) {
        paths.plots = *args.plots;
    } else if (cfg.has("plots")) {
        paths.plots = cfg.get_str("plots");
    }
    bulkspace::run_experiment(kind, cfg, paths);
    std::printf("%s: wrote %s\n", kind.c_str(), paths.metrics.c_str());
    if (paths.plots) std::printf("%s: plots in %s\n", kind.c_str(), paths.plots->c_str());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"bulk-space filtration experiments"};
    app.require_subcommand(1);

    ExperimentArgs args;
    for (const std::string& kind : bulkspace::experiment_kinds()) {
        CLI::App* sub = app.add_subcommand(kind, kind + " experiment");
        sub->add_option("--config", args.config_path, "experiment config file")->required();
        sub->add_option("--seed", args.seed, "override the config seed");
        sub->add_option("--out", args.out, "metrics output path (jsonl)");
        sub->add_option("--plots", args.plots, "directory for SVG charts");
    }

    struct {
        long long n = 200;
        double noise = 0.1;
        long long seed = 0;
        std::string out = "two_moons.csv";
    } moons;
    CLI::App* gen = app.add_subcommand("two_moons", "generate the two-moons dataset as CSV");
    gen->add_option("--n", moons.n, "number of points");
    gen->add_option("--noise", moons.noise, "coordinate noise standard deviation");
    gen->add_option("--seed", moons.seed, "rng seed");
    gen->add_option("--out", moons.out, "output CSV path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (gen->parsed()) {
            if (moons.n <= 0) throw bulkspace::ConfigError("two_moons: --n must be positive");
            if (moons.seed < 0) throw bulkspace::ConfigError("two_moons: --seed must be nonnegative");
            const bulkspace::Dataset data = bulkspace::make_two_moons(
                static_cast<size_t>(moons.n), moons.noise, static_cast<uint64_t>(moons.seed));
            bulkspace::save_csv_dataset(data, moons.out);
            std::printf("two_moons: wrote %zu points to %s\n", data.size(), moons.out.c_str());
            return 0;
        }
        for (const std::string& kind : bulkspace::experiment_kinds()) {
            if (app.get_subcommand(kind)->parsed()) return run_one(kind, args);
        }
        std::fprintf(stderr, "no subcommand selected\n");
        return 2;
    } catch (const bulkspace::NumericError& e) {
        std::fprintf(stderr, "numeric failure: %s\n", e.what());
        return 3;
    } catch (const bulkspace::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "unexpected error: %s\n", e.what());
        return 1;
    }
}
