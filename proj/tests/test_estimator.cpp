#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "icf/estimator.hpp"
#include "icf/phantom_sim.hpp"

using namespace icf;
using namespace icf::est;

namespace {

seg::TrackedShape straight_shape(double length, double step = 1.0) {
    seg::TrackedShape sh;
    for (double s = 0.0; s < length - 1e-9; s += step) sh.centerline.push_back({s, 0.0, s});
    sh.centerline.push_back({length, 0.0, length});
    sh.tip = sh.centerline.back();
    return sh;
}

seg::TrackedShape transformed(const seg::TrackedShape& in, double angle, Vec2 shift) {
    seg::TrackedShape out = in;
    auto move = [&](auto& p) {
        const Vec2 q = rotate(p.position(), angle) + shift;
        p.x = q.x;
        p.y = q.y;
    };
    for (auto& p : out.centerline) move(p);
    for (auto& c : out.contacts) {
        move(c);
        if (c.wall_normal) c.wall_normal = rotate(*c.wall_normal, angle);
    }
    move(out.tip);
    return out;
}

// Small-deflection cantilever under a transverse point load F at x = a, traced
// by arc length: y' = F (2 a x - x^2) / (2 EI) up to a, straight beyond.
// Arc length by midpoint quadrature on a fine x grid.
seg::TrackedShape loaded_cantilever(double EI, double F, double a, double length, double* contact_x) {
    seg::TrackedShape sh;
    const int n = 200000;
    const double h = a / n;
    double s = 0.0, y = 0.0;
    auto slope = [&](double x) { return F * (2.0 * a * x - x * x) / (2.0 * EI); };
    sh.centerline.push_back({0.0, 0.0, 0.0});
    for (int i = 0; i < n; ++i) {
        const double xm = (i + 0.5) * h;
        const double sl = slope(xm);
        s += h * std::sqrt(1.0 + sl * sl);
        y += h * sl;
        if ((i + 1) % 500 == 0) sh.centerline.push_back({(i + 1) * h, y, s});
    }
    *contact_x = sh.centerline.back().x;
    // Rescale so the contact sits at arc length a exactly (x shrinks by the
    // foreshortening, y is unchanged to first order).
    const double k = a / s;
    for (auto& p : sh.centerline) {
        p.x *= k;
        p.s *= k;
    }
    *contact_x *= k;
    const Vec2 t = Vec2{1.0, slope(a)}.normalized();
    const Vec2 c = sh.centerline.back().position();
    for (double u = 1.0; u <= length - a + 1e-9; u += 1.0) {
        const Vec2 p = c + t * u;
        sh.centerline.push_back({p.x, p.y, a + u});
    }
    sh.tip = sh.centerline.back();
    sh.contacts.push_back({*contact_x, c.y, a, std::nullopt});
    return sh;
}

double angle_between(Vec2 a, Vec2 b) { return std::abs(std::atan2(cross(a, b), dot(a, b))); }

struct OracleCase {
    sim::WireSetup wire{{}, {1.0, 0.0}, uniform_profile(1000.0), {}, {}};
    double length = 0.0;
    std::vector<sim::ContactForce> forces;
};

sim::WireSetup oracle_wire(const RigidityProfile& profile, Vec2 origin = {}, Vec2 tangent = {1.0, 0.0}) {
    return {origin, tangent, profile, {}, {}};
}

// Forward-simulated observation and the matching estimate with the clamp
// direction known to the estimator.
EstimateResult replay(const OracleCase& c, sim::WireState* state = nullptr) {
    const sim::WireState st = sim::forward_simulate(c.wire, c.length, c.forces);
    if (state) *state = st;
    ModelOptions mo = c.wire.options;
    mo.base_tangent = c.wire.tangent;
    return estimate_forces(build_model(sim::observed_shape(c.wire, st), c.wire.profile, c.wire.intrinsic, mo));
}

double max_deflection(const sim::WireState& st) {
    double m = 0.0;
    for (std::size_t k = 0; k < st.node_s.size(); ++k)
        m = std::max(m, distance(st.solve.deformed_nodes[k].position(), st.mesh.rest_positions[k]));
    return m;
}

// Random 1-4 contact case whose largest deflection is at most `max_frac` of the length.
OracleCase random_case(std::mt19937_64& rng, double max_frac) {
    std::uniform_real_distribution<double> U(0.0, 1.0);
    OracleCase c;
    c.length = 120.0 + 120.0 * U(rng);
    const RigidityProfile profile = synthetic_profile(20.0 + 80.0 * U(rng), 500.0 + 1000.0 * U(rng), 20.0 + 60.0 * U(rng));
    c.wire = oracle_wire(profile, {10.0 * U(rng), 10.0 * U(rng)}, rotate({1.0, 0.0}, 2.0 * std::numbers::pi * U(rng)));
    const int m = 1 + static_cast<int>(4.0 * U(rng)) % 4;
    std::vector<double> s;
    for (int i = 0; i < m; ++i) s.push_back(c.length * (0.15 + 0.8 * U(rng)));
    std::sort(s.begin(), s.end());
    for (std::size_t i = 1; i < s.size(); ++i)
        if (s[i] - s[i - 1] < 8.0) s[i] = s[i - 1] + 8.0;
    while (s.back() > c.length - 4.0) {
        for (double& v : s) v *= 0.97;
    }
    for (double v : s) {
        const double ang = 2.0 * std::numbers::pi * U(rng);
        c.forces.push_back({v, rotate({0.02 + 0.2 * U(rng), 0.0}, ang)});
    }
    // Scale the loads into the deflection bound.
    for (int guard = 0; guard < 20; ++guard) {
        const double d = max_deflection(sim::forward_simulate(c.wire, c.length, c.forces));
        if (d <= max_frac * c.length) break;
        for (auto& f : c.forces) f.force = f.force * (0.8 * max_frac * c.length / d);
    }
    return c;
}

}  // namespace

// --- meshing -------------------------------------------------------------------

TEST(NodeGrid, BreakpointsLandOnNodes) {
    const std::vector<double> cuts{40.0, 90.0, 140.0, 180.0};
    const std::vector<double> s = node_grid(200.0, cuts, 64);
    ASSERT_EQ(s.size(), 65u);
    EXPECT_EQ(s.front(), 0.0);
    EXPECT_EQ(s.back(), 200.0);
    for (double c : cuts) EXPECT_TRUE(std::find(s.begin(), s.end(), c) != s.end()) << c;
    for (std::size_t i = 1; i < s.size(); ++i) EXPECT_GT(s[i], s[i - 1]);
}

TEST(NodeGrid, ElementsFollowIntervalLength) {
    const std::vector<double> cuts{25.0};
    const std::vector<double> s = node_grid(100.0, cuts, 8);
    // 25 mm and 75 mm intervals share 8 elements as 2 and 6.
    EXPECT_EQ(std::count_if(s.begin(), s.end(), [](double v) { return v > 0.0 && v <= 25.0; }), 2);
}

TEST(NodeGrid, Rejects) {
    EXPECT_THROW(node_grid(0.0, {}, 4), InvalidInput);
    EXPECT_THROW(node_grid(100.0, std::vector<double>{120.0}, 4), InvalidInput);
    EXPECT_THROW(node_grid(100.0, std::vector<double>{30.0, 30.0}, 4), InvalidInput);
    EXPECT_THROW(node_grid(100.0, std::vector<double>{10.0, 20.0, 30.0}, 3), InvalidInput);
}

TEST(RestShape, StraightAndArc) {
    const std::vector<double> s = node_grid(100.0, {}, 20);
    for (Vec2 p : rest_shape(s, 100.0, IntrinsicShape::straight())) EXPECT_NEAR(p.y, 0.0, 0.0);

    // Distal 30 mm bent through 45 degrees: the tip sits on the analytic arc.
    const double a = std::numbers::pi / 4.0, lt = 30.0, R = lt / a;
    const std::vector<double> g = node_grid(100.0, std::vector<double>{70.0}, 40);
    const std::vector<Vec2> p = rest_shape(g, 100.0, IntrinsicShape::angled_tip(lt, a));
    EXPECT_NEAR(p[std::find(g.begin(), g.end(), 70.0) - g.begin()].x, 70.0, 1e-9);
    EXPECT_NEAR(p.back().x, 70.0 + R * std::sin(a), 2e-4);
    EXPECT_NEAR(p.back().y, R * (1.0 - std::cos(a)), 2e-4);
}

// --- model ---------------------------------------------------------------------

TEST(BuildModel, StraightShapeGivesZeroDeflection) {
    seg::TrackedShape sh = straight_shape(150.0);
    sh.contacts = {{50.0, 0.0, 50.0, std::nullopt}, {120.0, 0.0, 120.0, std::nullopt}};
    const CantileverModel m = build_model(sh, uniform_profile(1000.0));
    ASSERT_EQ(m.bcs.size(), 2u);
    for (const ModelBC& b : m.bcs) {
        EXPECT_NEAR(b.deflection.x, 0.0, 1e-12);
        EXPECT_NEAR(b.deflection.y, 0.0, 1e-12);
    }
    EXPECT_DOUBLE_EQ(m.length, 150.0);
    EXPECT_DOUBLE_EQ(m.node_s[m.bcs[0].node], 50.0);
    EXPECT_DOUBLE_EQ(m.node_s[m.bcs[1].node], 120.0);
    EXPECT_NEAR(m.mesh.rest_length(), 150.0, 1e-9);
}

TEST(BuildModel, LateralContactDeflection) {
    seg::TrackedShape sh = straight_shape(200.0);
    sh.contacts = {{100.0, 5.0, 100.0, std::nullopt}};
    const CantileverModel m = build_model(sh, uniform_profile(1000.0));
    ASSERT_EQ(m.bcs.size(), 1u);
    EXPECT_NEAR(m.bcs[0].deflection.x, 0.0, 1e-12);
    EXPECT_NEAR(m.bcs[0].deflection.y, 5.0, 1e-12);
}

TEST(BuildModel, BaseFrameIsolation) {
    double cx = 0.0;
    seg::TrackedShape sh = loaded_cantilever(1000.0, 0.01, 80.0, 150.0, &cx);
    const CantileverModel m0 = build_model(sh, uniform_profile(1000.0));
    const double angle = std::numbers::pi / 6.0;
    const CantileverModel m1 = build_model(transformed(sh, angle, {0.0, 0.0}), uniform_profile(1000.0));
    ASSERT_EQ(m0.bcs.size(), m1.bcs.size());
    EXPECT_NEAR(angle_between(m1.base_tangent, rotate(m0.base_tangent, angle)), 0.0, 1e-12);
    for (std::size_t i = 0; i < m0.bcs.size(); ++i) {
        EXPECT_EQ(m0.bcs[i].node, m1.bcs[i].node);
        EXPECT_NEAR(m0.bcs[i].deflection.x, m1.bcs[i].deflection.x, 1e-10);
        EXPECT_NEAR(m0.bcs[i].deflection.y, m1.bcs[i].deflection.y, 1e-10);
    }
}

TEST(BuildModel, Errors) {
    const RigidityProfile p = uniform_profile(1000.0);
    seg::TrackedShape none = straight_shape(100.0);
    EXPECT_THROW(build_model(none, p), InvalidInput);

    seg::TrackedShape beyond = straight_shape(100.0);
    beyond.contacts = {{100.0, 0.0, 100.5, std::nullopt}};
    EXPECT_THROW(build_model(beyond, p), InvalidInput);

    seg::TrackedShape at_tip = straight_shape(100.0);
    at_tip.contacts = {{100.0, 0.0, 100.0, std::nullopt}};
    try {
        build_model(at_tip, p);
        FAIL() << "contact at the tip accepted";
    } catch (const InvalidInput& e) {
        EXPECT_NE(std::string(e.what()).find("inconsistent shape"), std::string::npos) << e.what();
    }

    seg::TrackedShape ok = straight_shape(100.0);
    ok.contacts = {{50.0, 0.0, 50.0, std::nullopt}};
    ModelOptions mo;
    mo.base_trim = 60.0;
    EXPECT_THROW(build_model(ok, p, {}, mo), InvalidInput);
    mo = {};
    mo.base_tangent = Vec2{0.0, 0.0};
    EXPECT_THROW(build_model(ok, p, {}, mo), InvalidInput);
}

TEST(BuildModel, ShortProfileWarns) {
    seg::TrackedShape sh = straight_shape(300.0);
    sh.contacts = {{100.0, 1.0, 100.0, std::nullopt}};
    const CantileverModel m = build_model(sh, uniform_profile(1000.0, 200.0));
    ASSERT_EQ(m.warnings.size(), 1u);
    EXPECT_NE(m.warnings[0].find("clamped"), std::string::npos);
    EXPECT_TRUE(build_model(sh, uniform_profile(1000.0, 400.0)).warnings.empty());
}

TEST(BuildModel, ElementRigidityFromTipDistance) {
    seg::TrackedShape sh = straight_shape(200.0);
    sh.contacts = {{100.0, 1.0, 100.0, std::nullopt}};
    const RigidityProfile p = synthetic_profile();
    const CantileverModel m = build_model(sh, p);
    for (std::size_t e = 0; e < m.mesh.elements.size(); ++e) {
        const double mid = 0.5 * (m.node_s[e] + m.node_s[e + 1]);
        EXPECT_DOUBLE_EQ(m.mesh.elements[e].props.EI, p.ei_at(200.0 - mid));
    }
}

// --- estimation ----------------------------------------------------------------

TEST(EstimateForces, ZeroDeflectionZeroForce) {
    seg::TrackedShape sh = straight_shape(150.0);
    sh.contacts = {{40.0, 0.0, 40.0, std::nullopt}, {110.0, 0.0, 110.0, std::nullopt}};
    ModelOptions mo;
    mo.base_tangent = Vec2{1.0, 0.0};
    const EstimateResult r = estimate_forces(build_model(sh, synthetic_profile(), {}, mo));
    ASSERT_EQ(r.forces.size(), 2u);
    for (const ForceEstimate& f : r.forces) {
        EXPECT_EQ(f.magnitude, 0.0);
        EXPECT_EQ(f.force.x, 0.0);
        EXPECT_EQ(f.force.y, 0.0);
    }
    // A fitted base tangent carries round-off into the local frame.
    const EstimateResult fitted = estimate_forces(build_model(transformed(sh, 0.7, {5.0, -3.0}), synthetic_profile()));
    for (const ForceEstimate& f : fitted.forces) EXPECT_LT(f.magnitude, 1e-9);
}

TEST(EstimateForces, SmallDeflectionClosedForm) {
    // Transverse load giving 0.5 mm at s = 100 mm on EI = 1000 N mm^2:
    // F = 3 EI delta / s^3 = 0.0015 N.
    const double EI = 1000.0, a = 100.0, delta = 0.5;
    const double F = 3.0 * EI * delta / (a * a * a);
    double cx = 0.0;
    const seg::TrackedShape sh = loaded_cantilever(EI, F, a, 150.0, &cx);
    ASSERT_NEAR(sh.contacts[0].y, delta, 1e-6);
    ModelOptions mo;
    mo.base_tangent = Vec2{1.0, 0.0};
    const EstimateResult r = estimate_forces(build_model(sh, uniform_profile(EI), {}, mo));
    ASSERT_EQ(r.forces.size(), 1u);
    EXPECT_NEAR(r.forces[0].magnitude, 0.0015, 0.02 * 0.0015);
    // The wall holds the wire up, so the wire pushes the wall down.
    EXPECT_LT(r.forces[0].force.y, 0.0);
}

TEST(EstimateForces, FourContactOracle) {
    // A strong second contact and the smallest force at
    // the distal end.
    OracleCase c;
    c.length = 200.0;
    c.wire = oracle_wire(synthetic_profile(30.0, 1200.0, 50.0), {20.0, 30.0}, rotate({1.0, 0.0}, 0.3));
    const Vec2 n = c.wire.tangent.perp();
    const std::vector<double> mag{0.17, 0.26, 0.09, 0.03};
    const std::vector<double> s{50.0, 100.0, 150.0, 185.0};
    for (std::size_t i = 0; i < 4; ++i) c.forces.push_back({s[i], n * (i % 2 ? -mag[i] : mag[i])});
    sim::WireState st;
    const EstimateResult r = replay(c, &st);
    ASSERT_EQ(r.forces.size(), 4u);
    ASSERT_GT(max_deflection(st), 5.0);
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_NEAR(r.forces[i].magnitude, mag[i], 0.02 * mag[i]) << i;
        EXPECT_LT(angle_between(r.forces[i].force, c.forces[i].force), 2.0 * std::numbers::pi / 180.0) << i;
        EXPECT_NEAR(r.forces[i].s, s[i], 1e-12);
    }
    for (std::size_t i = 0; i < 3; ++i) EXPECT_LT(r.forces[3].magnitude, r.forces[i].magnitude);
}

TEST(EstimateForces, SimulatedShapeMatchesObservation) {
    OracleCase c;
    c.length = 160.0;
    c.wire = oracle_wire(synthetic_profile());
    c.forces = {{60.0, {0.0, 0.05}}, {130.0, {0.01, -0.03}}};
    sim::WireState st;
    const EstimateResult r = replay(c, &st);
    const ShapeError e = shape_error(sim::observed_shape(c.wire, st), r.simulated);
    EXPECT_LT(e.maxe, 1e-4);
}

TEST(EstimateForces, NonConvergenceCarriesContext) {
    OracleCase c;
    c.length = 150.0;
    c.wire = oracle_wire(uniform_profile(200.0));
    c.forces = {{100.0, {0.0, 0.15}}};
    sim::WireState st = sim::forward_simulate(c.wire, c.length, c.forces);
    seg::TrackedShape sh = sim::observed_shape(c.wire, st, 2.5);
    ModelOptions mo;
    mo.base_tangent = Vec2{1.0, 0.0};
    CantileverModel m = build_model(sh, c.wire.profile, {}, mo);
    m.start.clear();
    fem::SolverOptions opt;
    opt.increments = 1;
    opt.max_iters = 1;
    opt.tol = 1e-14;
    try {
        estimate_forces(m, opt);
        FAIL() << "expected non-convergence";
    } catch (const NumericalError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("t=2.5"), std::string::npos) << msg;
        EXPECT_NE(msg.find("1 contacts"), std::string::npos) << msg;
        EXPECT_GT(e.residual(), 0.0);
    }
}

// --- decomposition and shape error ---------------------------------------------

TEST(Decompose, Examples) {
    const Decomposition a = decompose({0.0, 0.2}, {0.0, 1.0});
    EXPECT_DOUBLE_EQ(a.fn, 0.2);
    EXPECT_DOUBLE_EQ(a.ft, 0.0);

    const Vec2 f = rotate({0.1, 0.0}, std::numbers::pi / 4.0);
    const Decomposition b = decompose(f, {1.0, 0.0});
    EXPECT_NEAR(b.fn, 0.0707106781, 1e-9);
    EXPECT_NEAR(b.ft, 0.0707106781, 1e-9);

    EXPECT_THROW(decompose(f, {0.0, 0.0}), InvalidInput);
}

TEST(Decompose, ReconstructsMagnitude) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    for (int i = 0; i < 1000; ++i) {
        const Vec2 f{U(rng), U(rng)};
        const Vec2 n = rotate({1.0, 0.0}, 4.0 * U(rng));
        const Decomposition d = decompose(f, n);
        EXPECT_GE(d.fn, 0.0);
        EXPECT_GE(d.ft, 0.0);
        const double m2 = dot(f, f);
        EXPECT_NEAR(d.fn * d.fn + d.ft * d.ft, m2, 1e-12 * m2);
    }
}

TEST(EstimateForces, DecomposesWhenNormalKnown) {
    seg::TrackedShape sh = straight_shape(150.0);
    sh.contacts = {{75.0, 2.0, 75.0, Vec2{0.0, -1.0}}, {120.0, 0.0, 120.0, std::nullopt}};
    const EstimateResult r = estimate_forces(build_model(sh, uniform_profile(1000.0)));
    ASSERT_TRUE(r.forces[0].fn && r.forces[0].ft);
    EXPECT_FALSE(r.forces[1].fn || r.forces[1].ft);
    const ForceEstimate& f = r.forces[0];
    EXPECT_NEAR(*f.fn * *f.fn + *f.ft * *f.ft, f.magnitude * f.magnitude, 1e-12 * f.magnitude * f.magnitude);
}

TEST(ShapeErrorMetric, Examples) {
    const seg::TrackedShape sh = straight_shape(100.0);
    const ShapeError same = shape_error(sh, sh.centerline);
    EXPECT_EQ(same.rmse, 0.0);
    EXPECT_EQ(same.maxe, 0.0);

    std::vector<seg::CenterlinePoint> shifted = sh.centerline;
    for (auto& p : shifted) p.y += 1.0;
    const ShapeError one = shape_error(sh, shifted);
    EXPECT_NEAR(one.rmse, 1.0, 1e-12);
    EXPECT_NEAR(one.maxe, 1.0, 1e-12);
    EXPECT_EQ(one.samples.size(), shifted.size());

    std::vector<seg::CenterlinePoint> far = sh.centerline;
    for (auto& p : far) p.s += 500.0;
    EXPECT_THROW(shape_error(sh, far), InvalidInput);
}

TEST(ShapeErrorMetric, MaxAtLeastRms) {
    const seg::TrackedShape sh = straight_shape(100.0);
    std::vector<seg::CenterlinePoint> bent = sh.centerline;
    for (auto& p : bent) p.y = 0.001 * p.s * p.s;
    const ShapeError e = shape_error(sh, bent);
    EXPECT_GE(e.maxe, e.rmse);
    EXPECT_GT(e.rmse, 0.0);
}

// --- properties ----------------------------------------------------------------

TEST(EstimatorProperty, FrameIsolation) {
    OracleCase c;
    c.length = 180.0;
    c.wire = oracle_wire(synthetic_profile());
    c.forces = {{50.0, {0.0, 0.08}}, {120.0, {0.0, -0.04}}, {165.0, {0.0, 0.01}}};
    const sim::WireState st = sim::forward_simulate(c.wire, c.length, c.forces);
    const seg::TrackedShape sh = sim::observed_shape(c.wire, st);
    const EstimateResult r0 = estimate_forces(build_model(sh, c.wire.profile));
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    for (int k = 0; k < 5; ++k) {
        const double angle = std::numbers::pi * U(rng);
        const seg::TrackedShape moved = transformed(sh, angle, {300.0 * U(rng), 300.0 * U(rng)});
        const CantileverModel m0 = build_model(sh, c.wire.profile);
        const CantileverModel m1 = build_model(moved, c.wire.profile);
        const EstimateResult r1 = estimate_forces(m1);
        for (std::size_t i = 0; i < r0.forces.size(); ++i) {
            EXPECT_NEAR(m1.bcs[i].deflection.x, m0.bcs[i].deflection.x, 1e-9);
            EXPECT_NEAR(m1.bcs[i].deflection.y, m0.bcs[i].deflection.y, 1e-9);
            EXPECT_NEAR(r1.forces[i].magnitude, r0.forces[i].magnitude, 1e-6 * r0.forces[i].magnitude);
            EXPECT_LT(angle_between(r1.forces[i].force, rotate(r0.forces[i].force, angle)), 1e-6);
        }
    }
}

TEST(EstimatorProperty, LinearSuperposition) {
    // Two consistent observations whose deflection amplitudes differ by a
    // factor of two, both under 1% of the length.
    std::mt19937_64 rng(11);
    for (int k = 0; k < 20; ++k) {
        OracleCase c = random_case(rng, 0.004);
        for (auto& f : c.forces) f.force = c.wire.tangent.perp() * dot(f.force, c.wire.tangent.perp());
        OracleCase c2 = c;
        for (auto& f : c2.forces) f.force = f.force * 2.0;
        sim::WireState st1, st2;
        const EstimateResult r1 = replay(c, &st1);
        const EstimateResult r2 = replay(c2, &st2);
        ASSERT_LT(max_deflection(st2), 0.01 * c.length);
        const double amp = max_deflection(st2) / max_deflection(st1);
        ASSERT_NEAR(amp, 2.0, 0.01);
        for (std::size_t i = 0; i < r1.forces.size(); ++i) {
            const Vec2 expect = r1.forces[i].force * amp;
            EXPECT_LT((r2.forces[i].force - expect).norm(), 0.01 * expect.norm()) << "case " << k << " contact " << i;
        }
    }
}

TEST(EstimatorProperty, RandomizedOracleEquivalence) {
    std::mt19937_64 rng(2024);
    for (int k = 0; k < 60; ++k) {
        const OracleCase c = random_case(rng, 0.25);
        const EstimateResult r = replay(c);
        ASSERT_EQ(r.forces.size(), c.forces.size());
        for (std::size_t i = 0; i < c.forces.size(); ++i) {
            const double m = c.forces[i].force.norm();
            EXPECT_NEAR(r.forces[i].magnitude, m, 0.02 * m) << "case " << k << " contact " << i;
            EXPECT_LT(angle_between(r.forces[i].force, c.forces[i].force), 2.0 * std::numbers::pi / 180.0)
                << "case " << k << " contact " << i;
        }
    }
}

// Growing one contact's deflection along its own direction always raises the
// support reaction's component along that direction (the condensed stiffness
// is positive definite). The magnitude follows whenever that component is not
// negative to begin with; a contact held against its own deflection by its
// neighbours can first lose magnitude.
TEST(EstimatorProperty, MonotoneInOwnDeflection) {
    std::mt19937_64 rng(77);
    int magnitude_checked = 0;
    for (int k = 0; k < 30; ++k) {
        const OracleCase c = random_case(rng, 0.2);
        sim::WireState st;
        replay(c, &st);
        ModelOptions mo;
        mo.base_tangent = c.wire.tangent;
        const CantileverModel base = build_model(sim::observed_shape(c.wire, st), c.wire.profile, {}, mo);
        const EstimateResult r0 = estimate_forces(base);
        for (std::size_t i = 0; i < base.bcs.size(); ++i) {
            CantileverModel more = base;
            more.bcs[i].deflection = more.bcs[i].deflection * 1.1;
            more.start.clear();
            const EstimateResult r1 = estimate_forces(more);
            const Vec2 d = base.direction_to_global(base.bcs[i].deflection).normalized();
            const double along0 = dot(-r0.forces[i].force, d), along1 = dot(-r1.forces[i].force, d);
            EXPECT_GT(along1, along0) << "case " << k << " contact " << i;
            if (along0 >= 0.0) {
                ++magnitude_checked;
                EXPECT_GE(r1.forces[i].magnitude, r0.forces[i].magnitude) << "case " << k << " contact " << i;
            }
        }
    }
    EXPECT_GT(magnitude_checked, 40);
}

// --- files ---------------------------------------------------------------------

TEST(EstimateCsv, RoundTrip) {
    std::vector<ForceEstimate> in(3);
    in[0] = {0, 40.5, {10.0, 20.0}, {0.1, -0.2}, std::hypot(0.1, 0.2), 0.2, 0.1, 0.0};
    in[1] = {1, 90.25, {11.0, 21.0}, {0.0, 0.05}, 0.05, std::nullopt, std::nullopt, 0.0};
    in[2] = {0, 41.0, {10.5, 20.5}, {0.12, -0.2}, std::hypot(0.12, 0.2), 0.21, 0.09, 1.0 / 30.0};
    std::stringstream ss;
    write_estimates(ss, in);
    EXPECT_EQ(ss.str().substr(0, ss.str().find('\n')), kEstimateHeader);
    const std::vector<ForceEstimate> out = read_estimates(ss);
    ASSERT_EQ(out.size(), in.size());
    for (std::size_t i = 0; i < in.size(); ++i) {
        EXPECT_EQ(out[i].contact, in[i].contact);
        EXPECT_DOUBLE_EQ(out[i].timestamp, in[i].timestamp);
        EXPECT_DOUBLE_EQ(out[i].s, in[i].s);
        EXPECT_DOUBLE_EQ(out[i].force.x, in[i].force.x);
        EXPECT_DOUBLE_EQ(out[i].force.y, in[i].force.y);
        EXPECT_DOUBLE_EQ(out[i].magnitude, in[i].magnitude);
        EXPECT_EQ(out[i].fn.has_value(), in[i].fn.has_value());
        if (in[i].fn) {
            EXPECT_DOUBLE_EQ(*out[i].fn, *in[i].fn);
        }
    }
}

TEST(EstimateCsv, RejectsBadInput) {
    std::stringstream wrong("t,contact\n0,1\n");
    EXPECT_THROW(read_estimates(wrong), ParseError);
    std::stringstream back(std::string(kEstimateHeader) + "\n1,0,1,1,1,0,0,0,nan,nan\n0.5,0,1,1,1,0,0,0,nan,nan\n");
    EXPECT_THROW(read_estimates(back), ParseError);
    std::stringstream neg(std::string(kEstimateHeader) + "\n0,-1,1,1,1,0,0,0,nan,nan\n");
    EXPECT_THROW(read_estimates(neg), ParseError);
    std::stringstream text(std::string(kEstimateHeader) + "\n0,0,abc,1,1,0,0,0,nan,nan\n");
    EXPECT_THROW(read_estimates(text), ParseError);
}
