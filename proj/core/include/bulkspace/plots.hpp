#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "bulkspace/metrics.hpp"

namespace bulkspace {

// One chart over a metrics file. `metric` names a numeric record field;
// `group_key` names an extras field whose value splits records into series
// (empty = one series). `fit_range` annotates the least-squares slope of
// ln(metric) against step over that step interval.
struct PlotSpec {
    std::string metric;
    std::string group_key;
    bool log_y = false;
    std::optional<std::pair<size_t, size_t>> fit_range;
};

// Renders <out_dir>/<experiment>_<metric>.svg for each spec. Throws
// ConfigError when the records are empty or a metric never appears.
void emit_plots(const std::vector<json>& records, const std::string& experiment,
                const std::vector<PlotSpec>& specs, const std::string& out_dir);

void emit_plots_from_file(const std::string& metrics_path, const std::string& experiment,
                          const std::vector<PlotSpec>& specs, const std::string& out_dir);

} // namespace bulkspace
