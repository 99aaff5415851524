#pragma once

#include <optional>
#include <string>
#include <vector>

#include "bulkspace/config.hpp"

namespace bulkspace {

struct RunPaths {
    std::string metrics;               // JSONL output path
    std::optional<std::string> plots;  // directory for SVG charts, absent = none
};

// Dispatches one experiment end to end: validates the config, builds the
// problem, runs the recipe, writes metrics, and renders plots when asked.
void run_experiment(const std::string& kind, const Config& cfg, const RunPaths& paths);

const std::vector<std::string>& experiment_kinds();

// The individual recipes, callable directly from tests.
void run_prop1(const Config& cfg, const RunPaths& paths);
void run_dichotomy(const Config& cfg, const RunPaths& paths);
void run_sweep(const Config& cfg, const RunPaths& paths);
void run_train(const Config& cfg, const RunPaths& paths);
void run_agreement(const Config& cfg, const RunPaths& paths);
void run_variance(const Config& cfg, const RunPaths& paths);
void run_quant_compare(const Config& cfg, const RunPaths& paths);

} // namespace bulkspace
