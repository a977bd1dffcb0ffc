#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

namespace semirep {

// Flat "dotted.path = value" configuration with a fixed key registry. Every
// key always carries a value (defaults fill the gaps), so echoing the resolved
// configuration and re-parsing it reproduces the run exactly.
struct RunConfig {
    std::map<std::string, std::string> values;

    // All registered keys at their default values.
    [[nodiscard]] static RunConfig defaults();
    // defaults() overlaid with "key = value" lines ('#' comments, blank lines
    // allowed). Unknown keys are rejected naming the offending path.
    [[nodiscard]] static RunConfig from_text(const std::string& text);
    [[nodiscard]] static RunConfig from_file(const std::string& path);

    // Overwrite one key; rejects paths outside the registry.
    void set(const std::string& key, const std::string& value);

    [[nodiscard]] const std::string& raw(const std::string& key) const;
    [[nodiscard]] bool is_blank(const std::string& key) const;  // empty value

    // Typed readers; parse failures name the key. *_or returns the fallback
    // when the value is blank.
    [[nodiscard]] long long get_int(const std::string& key) const;
    [[nodiscard]] long long get_int_or(const std::string& key, long long fallback) const;
    [[nodiscard]] double get_double(const std::string& key) const;
    [[nodiscard]] bool get_bool(const std::string& key) const;
    [[nodiscard]] std::string get_string(const std::string& key) const;
    [[nodiscard]] std::vector<double> get_double_list(const std::string& key) const;
    // "x2=0.5,x3=6" -> {(1, 0.5), (2, 6.0)} with zero-based column indices.
    [[nodiscard]] std::vector<std::pair<int, double>> get_fixed_columns(
        const std::string& key) const;

    // Sorted "key = value" lines; from_text(echo_text()) round-trips.
    [[nodiscard]] std::string echo_text() const;
};

}  // namespace semirep
