#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "bulkspace/errors.hpp"

namespace bulkspace {

using json = nlohmann::ordered_json;

// One metrics line. Optional fields are omitted from the output when unset,
// never written as null. `extras` keeps insertion order.
struct MetricsRecord {
    size_t step = 0;
    double wall_ms = 0.0;
    double loss = 0.0;
    double lr = 0.0;
    std::optional<double> accuracy;
    std::optional<double> sin_theta;
    std::optional<double> dom_var;
    std::optional<double> bulk_var;
    std::vector<std::pair<std::string, json>> extras;

    void add_extra(const std::string& key, json value) {
        extras.emplace_back(key, std::move(value));
    }

    json to_json() const;
};

class MetricsWriter {
public:
    explicit MetricsWriter(const std::string& path);
    ~MetricsWriter();

    void write(const MetricsRecord& record);
    void close();
    const std::string& path() const { return path_; }
    size_t lines_written() const { return lines_; }

private:
    std::string path_;
    std::ofstream out_;
    size_t lines_ = 0;
};

// Reads a JSONL metrics file back into parsed records.
std::vector<json> read_metrics(const std::string& path);

// Byte comparison of two metrics files with timing fields removed, the check
// behind reproducibility claims. Returns true when they match exactly.
bool metrics_equal_ignoring_wall(const std::string& path_a, const std::string& path_b);

} // namespace bulkspace
