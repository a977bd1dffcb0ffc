#pragma once

#include <string>

namespace semirep {

// Symmetric density kernel with bounded support and unit variance.
struct Kernel {
    std::string id;
    double (*eval)(double) = nullptr;
    double support = 0.0;  // half-width s: eval(u) == 0 for |u| >= s

    [[nodiscard]] double operator()(double u) const { return eval(u); }
    // K_h(t) = h^-1 K(t/h).
    [[nodiscard]] double scaled(double t, double h) const { return eval(t / h) / h; }

    // Variance-1 Epanechnikov: K(u) = (3/(4 sqrt 5))(1 - u^2/5) on |u| <= sqrt 5.
    [[nodiscard]] static const Kernel& epanechnikov_var1();
};

// Default-kernel evaluation (the only kernel that ships).
[[nodiscard]] double kernel_eval(double u);

}  // namespace semirep
