#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace semirep {

// Two failure families, mapped to process exit codes by the CLI:
// validation (bad inputs / config / data files, exit 1) and
// numerical (singular systems, non-convergent solves, unstable resampling, exit 2).
enum class ErrorKind { validation, numerical };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, std::string code, const std::string& message)
        : std::runtime_error(message), kind_(kind), code_(std::move(code)) {}

    [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }
    // Stable machine-readable identifier, e.g. "no-data-in-window".
    [[nodiscard]] const std::string& code() const noexcept { return code_; }

private:
    ErrorKind kind_;
    std::string code_;
};

[[noreturn]] inline void throw_validation(const std::string& code, const std::string& message) {
    throw Error(ErrorKind::validation, code, message);
}

[[noreturn]] inline void throw_numerical(const std::string& code, const std::string& message) {
    throw Error(ErrorKind::numerical, code, message);
}

}  // namespace semirep
