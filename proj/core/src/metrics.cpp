#include "bulkspace/metrics.hpp"

namespace bulkspace {

json MetricsRecord::to_json() const {
    json j;
    j["step"] = step;
    j["wall_ms"] = wall_ms;
    j["loss"] = loss;
    j["lr"] = lr;
    if (accuracy) j["accuracy"] = *accuracy;
    if (sin_theta) j["sin_theta"] = *sin_theta;
    if (dom_var) j["dom_var"] = *dom_var;
    if (bulk_var) j["bulk_var"] = *bulk_var;
    for (const auto& [key, value] : extras) j[key] = value;
    return j;
}

MetricsWriter::MetricsWriter(const std::string& path) : path_(path), out_(path, std::ios::trunc) {
    if (!out_) throw IoError("cannot open metrics file for writing: " + path);
}

MetricsWriter::~MetricsWriter() {
    if (out_.is_open()) out_.close();
}

void MetricsWriter::write(const MetricsRecord& record) {
    if (!out_.is_open()) throw IoError("metrics writer already closed: " + path_);
    out_ << record.to_json().dump() << "\n";
    if (!out_) throw IoError("write failed on metrics file: " + path_);
    ++lines_;
}

void MetricsWriter::close() {
    if (out_.is_open()) {
        out_.flush();
        out_.close();
    }
}

std::vector<json> read_metrics(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open metrics file: " + path);
    std::vector<json> records;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded()) {
            throw ParseError("metrics file " + path + " line " + std::to_string(lineno) +
                             ": invalid json");
        }
        records.push_back(std::move(j));
    }
    return records;
}

bool metrics_equal_ignoring_wall(const std::string& path_a, const std::string& path_b) {
    const std::vector<json> a = read_metrics(path_a);
    const std::vector<json> b = read_metrics(path_b);
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i) {
        json ja = a[i];
        json jb = b[i];
        ja.erase("wall_ms");
        jb.erase("wall_ms");
        if (ja.dump() != jb.dump()) return false;
    }
    return true;
}

} // namespace bulkspace
