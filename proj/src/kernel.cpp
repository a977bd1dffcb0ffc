#include "semirep/kernel.hpp"

#include <cmath>

namespace semirep {

namespace {

constexpr double kSqrt5 = 2.2360679774997896964;
constexpr double kScale = 0.33541019662496845446;  // 3/(4 sqrt 5)

double epanechnikov_var1_eval(double u) {
    if (std::abs(u) >= kSqrt5) return 0.0;
    return kScale * (1.0 - u * u / 5.0);
}

}  // namespace

const Kernel& Kernel::epanechnikov_var1() {
    static const Kernel instance{"epanechnikov-var1", &epanechnikov_var1_eval, kSqrt5};
    return instance;
}

double kernel_eval(double u) { return epanechnikov_var1_eval(u); }

}  // namespace semirep
