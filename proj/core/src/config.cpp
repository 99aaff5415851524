#include "bulkspace/config.hpp"

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

namespace bulkspace {

namespace {

std::string trim(const std::string& s) {
    size_t b = 0;
    size_t e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

bool valid_key(const std::string& key) {
    if (key.empty() || key.front() == '.' || key.back() == '.') return false;
    for (char c : key) {
        const bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_';
        if (!ok) return false;
    }
    return true;
}

// Every key an experiment may consume. Grouped by section for upkeep.
const std::set<std::string>& schema() {
    static const std::set<std::string> keys = {
        // run-wide
        "seed",
        "steps",
        "out",
        "plots",
        "eval.every",
        // problem
        "problem.kind",
        "problem.dim",
        "problem.eigenvalues",
        "problem.spectrum",
        "problem.lambda_min",
        "problem.lambda_max",
        "problem.bulk_max",
        "problem.outliers",
        "problem.outlier_min",
        "problem.rotation_seed",
        "problem.init_seed",
        "problem.init_scale",
        "problem.widths",
        "problem.activation",
        "problem.loss",
        "problem.bias",
        "problem.dataset",
        "problem.n",
        "problem.noise",
        "problem.data_seed",
        "problem.batch",
        // optimizer and schedule
        "optim.kind",
        "optim.lr_max",
        "optim.lr_min",
        "optim.momentum",
        "optim.beta1",
        "optim.beta2",
        "optim.eps",
        "optim.weight_decay",
        "optim.clip",
        "optim.tune",
        "schedule.warmup",
        // filtration wrapper
        "bsfa.enabled",
        "bsfa.alpha",
        "bsfa.gamma",
        "bsfa.k",
        "bsfa.interval",
        "bsfa.history",
        "bsfa.estimator",
        "bsfa.quantized",
        "bsfa.group_size",
        "bsfa.exclude",
        "bsfa.store",
        "bsfa.lpe_iters",
        // experiment-specific knobs
        "prop1.fit_from",
        "prop1.fit_to",
        "dichotomy.switch_step",
        "dichotomy.horizon",
        "dichotomy.k",
        "dichotomy.refresh",
        "sweep.alphas",
        "sweep.gammas",
    };
    return keys;
}

} // namespace

Config Config::parse_string(const std::string& text) {
    Config cfg;
    std::istringstream in(text);
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ParseError("config line " + std::to_string(lineno) + ": expected key = value");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (!valid_key(key)) {
            throw ParseError("config line " + std::to_string(lineno) + ": bad key '" + key + "'");
        }
        if (value.empty()) {
            throw ParseError("config line " + std::to_string(lineno) + ": empty value for '" + key + "'");
        }
        if (cfg.kv_.count(key) > 0) {
            throw ParseError("config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
        }
        cfg.kv_[key] = value;
    }
    return cfg;
}

Config Config::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_string(buf.str());
}

std::string Config::serialize() const {
    std::ostringstream out;
    for (const auto& [key, value] : kv_) {
        out << key << " = " << value << "\n";
    }
    return out.str();
}

void Config::set(const std::string& key, const std::string& value) {
    if (!valid_key(key)) throw ConfigError("bad config key '" + key + "'");
    if (trim(value).empty()) throw ConfigError("empty value for config key '" + key + "'");
    kv_[key] = trim(value);
}

std::string Config::get_str(const std::string& key) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) throw ConfigError("missing required config key '" + key + "'");
    return it->second;
}

std::string Config::get_str(const std::string& key, const std::string& fallback) const {
    auto it = kv_.find(key);
    return it == kv_.end() ? fallback : it->second;
}

double Config::get_double(const std::string& key) const {
    const std::string raw = get_str(key);
    size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(raw, &used);
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': not a number: '" + raw + "'");
    }
    if (used != raw.size()) {
        throw ConfigError("config key '" + key + "': trailing characters in '" + raw + "'");
    }
    return v;
}

double Config::get_double(const std::string& key, double fallback) const {
    return has(key) ? get_double(key) : fallback;
}

int64_t Config::get_int(const std::string& key) const {
    const std::string raw = get_str(key);
    size_t used = 0;
    long long v = 0;
    try {
        v = std::stoll(raw, &used);
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': not an integer: '" + raw + "'");
    }
    if (used != raw.size()) {
        throw ConfigError("config key '" + key + "': trailing characters in '" + raw + "'");
    }
    return static_cast<int64_t>(v);
}

int64_t Config::get_int(const std::string& key, int64_t fallback) const {
    return has(key) ? get_int(key) : fallback;
}

uint64_t Config::get_uint(const std::string& key, uint64_t fallback) const {
    if (!has(key)) return fallback;
    const int64_t v = get_int(key);
    if (v < 0) throw ConfigError("config key '" + key + "': must be nonnegative");
    return static_cast<uint64_t>(v);
}

bool Config::get_bool(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const std::string raw = get_str(key);
    if (raw == "true" || raw == "1" || raw == "yes" || raw == "on") return true;
    if (raw == "false" || raw == "0" || raw == "no" || raw == "off") return false;
    throw ConfigError("config key '" + key + "': not a boolean: '" + raw + "'");
}

std::vector<std::string> Config::get_str_list(const std::string& key) const {
    const std::string raw = get_str(key);
    std::vector<std::string> items;
    std::string cur;
    std::istringstream in(raw);
    while (std::getline(in, cur, ',')) {
        cur = trim(cur);
        if (cur.empty()) {
            throw ConfigError("config key '" + key + "': empty list element in '" + raw + "'");
        }
        items.push_back(cur);
    }
    if (items.empty()) throw ConfigError("config key '" + key + "': empty list");
    return items;
}

std::vector<double> Config::get_double_list(const std::string& key) const {
    std::vector<double> out;
    for (const std::string& item : get_str_list(key)) {
        size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(item, &used);
        } catch (const std::exception&) {
            throw ConfigError("config key '" + key + "': not a number: '" + item + "'");
        }
        if (used != item.size()) {
            throw ConfigError("config key '" + key + "': trailing characters in '" + item + "'");
        }
        out.push_back(v);
    }
    return out;
}

void Config::check_known_keys() const {
    for (const auto& [key, value] : kv_) {
        (void)value;
        if (schema().count(key) == 0) {
            throw ConfigError("unknown config key '" + key + "'");
        }
    }
}

} // namespace bulkspace
