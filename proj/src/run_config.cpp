#include "semirep/run_config.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <sstream>

#include "semirep/errors.hpp"

namespace semirep {

namespace {

struct KeyDefault {
    const char* key;
    const char* value;
};

// The full key registry with defaults. Blank defaults mean "not set".
constexpr std::array<KeyDefault, 31> kRegistry = {{
    {"model.p", ""},                        // inferred from the data when blank
    {"smoother.auto", "true"},              // cross-validated bandwidth
    {"smoother.h", "0"},                    // fixed bandwidth when auto = false
    {"smoother.grid_points", "101"},        // display grid for the curve
    {"backfit.tol_outer", "1e-6"},
    {"backfit.max_outer", "50"},
    {"summary.functional", "survival"},     // survival | indicator-above-c | mean | second-moment
    {"summary.threshold", "0"},             // single threshold c
    {"summary.curve", ""},                  // comma list of c values for curve output
    {"summary.fix", ""},                    // fixed components, e.g. "x1=0.5,x3=6"
    {"summary.estimator", "semi"},          // semi | imputed | ipw
    {"variance.method", "plugin"},          // plugin | bootstrap | none
    {"bootstrap.B", "200"},
    {"bootstrap.scheme", "cluster"},        // cluster | parametric
    {"bootstrap.reselect_bandwidth", "false"},
    {"avar.grid", "41"},
    {"avar.trim", "0.01"},
    {"sim.n", "100"},
    {"sim.m", "2"},
    {"sim.R", "3"},
    {"sim.p", "2"},
    {"sim.beta", "1,1"},
    {"sim.sigma2", "1"},
    {"sim.rho", "0.4"},
    {"sim.theta", "sin8"},                  // sin8 | linear | constant
    {"sim.missingness", "none"},            // none | mcar | mar
    {"sim.keep_prob", "0.7"},
    {"sim.zeta", ""},                       // MAR coefficients, comma list
    {"sim.replicates", "200"},
    {"seed", "1"},
    {"threads", "1"},
}};

std::string trim(const std::string& text) {
    const size_t first = text.find_first_not_of(" \t");
    if (first == std::string::npos) return "";
    const size_t last = text.find_last_not_of(" \t");
    return text.substr(first, last - first + 1);
}

[[noreturn]] void key_fail(const std::string& key, const std::string& what) {
    throw_validation("invalid-config", "config key '" + key + "': " + what);
}

}  // namespace

RunConfig RunConfig::defaults() {
    RunConfig config;
    for (const KeyDefault& entry : kRegistry) config.values[entry.key] = entry.value;
    return config;
}

void RunConfig::set(const std::string& key, const std::string& value) {
    const auto it = values.find(key);
    if (it == values.end())
        throw_validation("invalid-config", "unknown config key '" + key + "'");
    it->second = value;
}

RunConfig RunConfig::from_text(const std::string& text) {
    RunConfig config = defaults();
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const std::string stripped = trim(line);
        if (stripped.empty() || stripped[0] == '#') continue;
        const size_t eq = stripped.find('=');
        if (eq == std::string::npos)
            throw_validation("invalid-config", "config line " + std::to_string(line_no) +
                                                   ": expected 'key = value', got '" + stripped +
                                                   "'");
        config.set(trim(stripped.substr(0, eq)), trim(stripped.substr(eq + 1)));
    }
    return config;
}

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw_validation("invalid-config", "cannot open config file '" + path + "'");
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return from_text(buffer.str());
}

const std::string& RunConfig::raw(const std::string& key) const {
    const auto it = values.find(key);
    if (it == values.end())
        throw_validation("invalid-config", "unknown config key '" + key + "'");
    return it->second;
}

bool RunConfig::is_blank(const std::string& key) const { return raw(key).empty(); }

long long RunConfig::get_int(const std::string& key) const {
    const std::string& text = raw(key);
    try {
        size_t used = 0;
        const long long value = std::stoll(text, &used);
        if (used != text.size()) throw std::invalid_argument(text);
        return value;
    } catch (const std::exception&) {
        key_fail(key, "expected an integer, got '" + text + "'");
    }
}

long long RunConfig::get_int_or(const std::string& key, long long fallback) const {
    return is_blank(key) ? fallback : get_int(key);
}

double RunConfig::get_double(const std::string& key) const {
    const std::string& text = raw(key);
    try {
        size_t used = 0;
        const double value = std::stod(text, &used);
        if (used != text.size() || !std::isfinite(value)) throw std::invalid_argument(text);
        return value;
    } catch (const std::exception&) {
        key_fail(key, "expected a finite number, got '" + text + "'");
    }
}

bool RunConfig::get_bool(const std::string& key) const {
    const std::string& text = raw(key);
    if (text == "true" || text == "1" || text == "yes") return true;
    if (text == "false" || text == "0" || text == "no") return false;
    key_fail(key, "expected true/false, got '" + text + "'");
}

std::string RunConfig::get_string(const std::string& key) const { return raw(key); }

std::vector<double> RunConfig::get_double_list(const std::string& key) const {
    const std::string& text = raw(key);
    std::vector<double> out;
    if (trim(text).empty()) return out;
    std::istringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        const std::string entry = trim(item);
        try {
            size_t used = 0;
            const double value = std::stod(entry, &used);
            if (used != entry.size() || !std::isfinite(value)) throw std::invalid_argument(entry);
            out.push_back(value);
        } catch (const std::exception&) {
            key_fail(key, "expected a comma-separated number list, got '" + entry + "'");
        }
    }
    if (out.empty()) key_fail(key, "expected at least one number");
    return out;
}

std::vector<std::pair<int, double>> RunConfig::get_fixed_columns(const std::string& key) const {
    const std::string& text = raw(key);
    std::vector<std::pair<int, double>> out;
    if (trim(text).empty()) return out;
    std::istringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        const std::string entry = trim(item);
        const size_t eq = entry.find('=');
        if (eq == std::string::npos || entry.size() < 4 || entry[0] != 'x')
            key_fail(key, "expected entries like 'x2=0.5', got '" + entry + "'");
        const std::string col_text = trim(entry.substr(1, eq - 1));
        const std::string val_text = trim(entry.substr(eq + 1));
        try {
            size_t used = 0;
            const long long column = std::stoll(col_text, &used);
            if (used != col_text.size() || column < 1) throw std::invalid_argument(col_text);
            size_t vused = 0;
            const double value = std::stod(val_text, &vused);
            if (vused != val_text.size() || !std::isfinite(value))
                throw std::invalid_argument(val_text);
            out.emplace_back(static_cast<int>(column) - 1, value);
        } catch (const std::exception&) {
            key_fail(key, "expected entries like 'x2=0.5', got '" + entry + "'");
        }
    }
    return out;
}

std::string RunConfig::echo_text() const {
    std::ostringstream out;
    for (const auto& [key, value] : values) out << key << " = " << value << "\n";
    return out.str();
}

}  // namespace semirep
