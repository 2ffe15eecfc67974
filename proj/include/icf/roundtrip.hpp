#pragma once

// Randomized inverse round trip: forward-simulate known contact forces, hand
// the deformed shape to the estimator and compare what comes back.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <random>
#include <vector>

#include "icf/estimator.hpp"
#include "icf/phantom_sim.hpp"
#include "icf/rigidity_profile.hpp"

namespace icf::sim {

struct RoundTripCase {
    WireSetup wire{{}, {1.0, 0.0}, uniform_profile(1000.0), {}, {}};
    double length = 0.0;
    std::vector<ContactForce> forces;
};

struct RoundTripOptions {
    double max_deflection = 0.25;      // fraction of the wire length
    std::optional<RigidityProfile> profile;  // random synthetic profile when empty
    est::ModelOptions model;
    fem::SolverOptions solver;
};

struct RoundTripResult {
    std::vector<ContactForce> truth;
    std::vector<est::ForceEstimate> estimated;
    double deflection = 0.0;       // largest nodal displacement from rest (mm)
    double magnitude_error = 0.0;  // worst relative magnitude error
    double angle_error = 0.0;      // worst direction error (rad)
};

/// Largest nodal displacement from the rest shape.
inline double max_deflection(const WireState& st) {
    double m = 0.0;
    for (std::size_t k = 0; k < st.node_s.size(); ++k)
        m = std::max(m, distance(st.solve.deformed_nodes[k].position(), st.mesh.rest_positions[k]));
    return m;
}

/// One to four contacts at least 8 mm apart, random directions, loads scaled
/// until the largest deflection is within the bound.
inline RoundTripCase random_case(std::mt19937_64& rng, const RoundTripOptions& opt = {}) {
    std::uniform_real_distribution<double> U(0.0, 1.0);
    RoundTripCase c;
    c.length = 120.0 + 120.0 * U(rng);
    const RigidityProfile profile =
        opt.profile ? *opt.profile : synthetic_profile(20.0 + 80.0 * U(rng), 500.0 + 1000.0 * U(rng), 20.0 + 60.0 * U(rng));
    c.wire = {{10.0 * U(rng), 10.0 * U(rng)}, rotate({1.0, 0.0}, 2.0 * std::numbers::pi * U(rng)), profile, {}, opt.model};
    const int m = 1 + static_cast<int>(4.0 * U(rng)) % 4;
    std::vector<double> s;
    for (int i = 0; i < m; ++i) s.push_back(c.length * (0.15 + 0.8 * U(rng)));
    std::sort(s.begin(), s.end());
    for (std::size_t i = 1; i < s.size(); ++i)
        if (s[i] - s[i - 1] < 8.0) s[i] = s[i - 1] + 8.0;
    while (s.back() > c.length - 4.0)
        for (double& v : s) v *= 0.97;
    for (double v : s) c.forces.push_back({v, rotate({0.02 + 0.2 * U(rng), 0.0}, 2.0 * std::numbers::pi * U(rng))});
    for (int guard = 0; guard < 20; ++guard) {
        const double d = max_deflection(forward_simulate(c.wire, c.length, c.forces, opt.solver));
        if (d <= opt.max_deflection * c.length) break;
        for (ContactForce& f : c.forces) f.force = f.force * (0.8 * opt.max_deflection * c.length / d);
    }
    return c;
}

/// Forward solve, observe, estimate with the clamp direction known.
inline RoundTripResult run_case(const RoundTripCase& c, const fem::SolverOptions& solver = {}) {
    const WireState st = forward_simulate(c.wire, c.length, c.forces, solver);
    est::ModelOptions mo = c.wire.options;
    mo.base_tangent = c.wire.tangent;
    const est::EstimateResult e =
        est::estimate_forces(est::build_model(observed_shape(c.wire, st), c.wire.profile, c.wire.intrinsic, mo), solver);
    if (e.forces.size() != c.forces.size()) throw NumericalError("round trip: contact count changed");
    RoundTripResult r{c.forces, e.forces, max_deflection(st), 0.0, 0.0};
    for (std::size_t i = 0; i < c.forces.size(); ++i) {
        const Vec2 t = c.forces[i].force, g = e.forces[i].force;
        r.magnitude_error = std::max(r.magnitude_error, std::abs(e.forces[i].magnitude - t.norm()) / t.norm());
        r.angle_error = std::max(r.angle_error, std::abs(std::atan2(cross(t, g), dot(t, g))));
    }
    return r;
}

}  // namespace icf::sim
