#pragma once

// Test-only oracle: inextensible, unshearable cantilever elastica under a dead
// tip load perpendicular to the clamped tangent. Solved by shooting on the root
// curvature with fixed-step RK4 and bisection; independent of the FEM code.

#include <array>
#include <cmath>
#include <stdexcept>

namespace icf::oracle {

struct ElasticaTip {
    double x_over_L;    // axial tip position
    double y_over_L;    // transverse tip deflection
    double tip_angle;   // rad
};

namespace detail {

// State: theta, theta', x, y over nondimensional s in [0, 1];
// theta'' = -alpha cos(theta) with alpha = F L^2 / EI.
inline std::array<double, 4> integrate(double alpha, double kappa0, int steps) {
    std::array<double, 4> y{0.0, kappa0, 0.0, 0.0};
    const double h = 1.0 / steps;
    auto f = [alpha](const std::array<double, 4>& s) {
        return std::array<double, 4>{s[1], -alpha * std::cos(s[0]), std::cos(s[0]), std::sin(s[0])};
    };
    for (int i = 0; i < steps; ++i) {
        auto k1 = f(y);
        std::array<double, 4> t;
        for (int j = 0; j < 4; ++j) t[j] = y[j] + 0.5 * h * k1[j];
        auto k2 = f(t);
        for (int j = 0; j < 4; ++j) t[j] = y[j] + 0.5 * h * k2[j];
        auto k3 = f(t);
        for (int j = 0; j < 4; ++j) t[j] = y[j] + h * k3[j];
        auto k4 = f(t);
        for (int j = 0; j < 4; ++j) y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
    }
    return y;
}

}  // namespace detail

/// Tip position of the elastica for load parameter alpha = F L^2 / EI.
inline ElasticaTip cantilever_tip(double alpha, int steps = 20000) {
    if (alpha == 0.0) return {1.0, 0.0, 0.0};
    // Free-end condition theta'(1) = 0; bracket the root curvature in [0, alpha].
    double lo = 0.0, hi = alpha;
    auto g = [&](double k) { return detail::integrate(alpha, k, steps)[1]; };
    double glo = g(lo);
    if (glo * g(hi) > 0.0) throw std::runtime_error("elastica oracle: root not bracketed");
    for (int it = 0; it < 200 && hi - lo > 1e-14; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double gm = g(mid);
        if ((gm < 0.0) == (glo < 0.0)) {
            lo = mid;
            glo = gm;
        } else {
            hi = mid;
        }
    }
    const auto y = detail::integrate(alpha, 0.5 * (lo + hi), steps);
    return {y[2], y[3], y[0]};
}

}  // namespace icf::oracle
