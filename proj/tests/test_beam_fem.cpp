#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "icf/beam_fem.hpp"
#include "oracles/elastica.hpp"

using namespace icf;
using namespace icf::fem;

namespace {

constexpr double kL = 100.0;
constexpr double kEI = 1000.0;

SectionProperties props(double kGA = 1e6) {
    return {kEI, 1e4 * kEI / (kL * kL), kGA, kDefaultShearCoefficient};
}

BeamMesh cantilever(std::size_t n = 64, double kGA = 1e6, Vec2 dir = {1.0, 0.0}) {
    return BeamMesh::straight({0.0, 0.0}, dir, kL, n, props(kGA));
}

SolveResult tip_load(const BeamMesh& mesh, Vec2 force, SolverOptions opt = {}) {
    const DirichletBC base = DirichletBC::clamp(0);
    const NodalLoad load{mesh.node_count() - 1, force, 0.0};
    return solve_static(mesh, std::span(&base, 1), std::span(&load, 1), opt);
}

double rel(double a, double b) { return std::abs(a - b) / std::abs(b); }

}  // namespace

// --- element_stiffness ------------------------------------------------------

TEST(ElementStiffness, ZeroAxialForceIsLinearPart) {
    const Matrix6 k0 = element_stiffness(props(), 2.0, 0.0);
    const Matrix6 k1 = element_stiffness(props(), 2.0, 0.7);
    // The geometric part only touches the transverse translations.
    Matrix6 diff = k1 - k0;
    EXPECT_NEAR(diff(1, 1), 0.35, 1e-12);
    EXPECT_NEAR(diff(4, 4), 0.35, 1e-12);
    EXPECT_NEAR(diff(1, 4), -0.35, 1e-12);
    diff(1, 1) = diff(4, 4) = diff(1, 4) = diff(4, 1) = 0.0;
    EXPECT_EQ(diff.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(k0(0, 0), props().EA / 2.0);
}

TEST(ElementStiffness, EulerBernoulliLimit) {
    const double l = 1.5;
    SectionProperties p = props();
    p.kGA = 1e12 * p.EI / (l * l);
    const Matrix6 k = element_stiffness(p, l, 0.0);
    const double eb = 12.0 * p.EI / (l * l * l);
    EXPECT_LT(rel(k(1, 1), eb), 1e-4);
    EXPECT_LT(rel(k(2, 2), 4.0 * p.EI / l), 1e-4);
}

TEST(ElementStiffness, Symmetric) {
    const Matrix6 k = element_stiffness(props(50.0), 1.5625, 0.5);
    EXPECT_LT((k - k.transpose()).cwiseAbs().maxCoeff(), 1e-12 * k.cwiseAbs().maxCoeff());
}

TEST(ElementStiffness, ShearFlexibleRowsBalanceRigidModes) {
    // Rigid translation and rigid rotation produce no nodal forces.
    const double l = 3.0;
    const Matrix6 k = element_stiffness(props(20.0), l, 0.0);
    Vector6 translate, rotate;
    translate << 0.3, -0.2, 0.0, 0.3, -0.2, 0.0;
    rotate << 0.0, 0.0, 1.0, 0.0, l, 1.0;
    EXPECT_LT((k * translate).norm(), 1e-10);
    EXPECT_LT((k * rotate).norm(), 1e-9);
}

TEST(ElementStiffness, RejectsInvalidInput) {
    EXPECT_THROW(element_stiffness(props(), 0.0, 0.0), InvalidInput);
    EXPECT_THROW(element_stiffness(props(), -1.0, 0.0), InvalidInput);
    SectionProperties bad = props();
    bad.EI = 0.0;
    EXPECT_THROW(element_stiffness(bad, 1.0, 0.0), InvalidInput);
    bad = props();
    bad.kappa = 1.2;
    EXPECT_THROW(element_stiffness(bad, 1.0, 0.0), InvalidInput);
}

// --- assemble_global --------------------------------------------------------

TEST(Assemble, SingleElementEqualsLocal) {
    const BeamMesh m = BeamMesh::straight({0, 0}, {1, 0}, 2.0, 1, props());
    const Eigen::MatrixXd K(assemble_global(m));
    const Matrix6 k = element_stiffness(props(), 2.0, 0.0);
    EXPECT_LT((K - k).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Assemble, SharedNodeBlockIsSum) {
    const BeamMesh m = BeamMesh::straight({0, 0}, {1, 0}, 4.0, 2, props());
    const Eigen::MatrixXd K(assemble_global(m));
    const Matrix6 k = element_stiffness(props(), 2.0, 0.0);
    const Eigen::Matrix3d expected = k.block<3, 3>(3, 3) + k.block<3, 3>(0, 0);
    EXPECT_LT((K.block(3, 3, 3, 3) - expected).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Assemble, RotatedElementSwapsAxialAndTransverse) {
    const double l = 2.0;
    const BeamMesh m = BeamMesh::straight({0, 0}, {0, 1}, l, 1, props());
    const Eigen::MatrixXd K(assemble_global(m));
    const Matrix6 k = element_stiffness(props(), l, 0.0);
    // Hand rotation for beta = 90 deg: global x is local -v, global y is local u.
    EXPECT_NEAR(K(0, 0), k(1, 1), 1e-9);
    EXPECT_NEAR(K(1, 1), k(0, 0), 1e-9);
    EXPECT_NEAR(K(0, 1), 0.0, 1e-9);
    const Matrix6 T = element_rotation(std::numbers::pi / 2);
    const Matrix6 expected = T.transpose() * k * T;
    EXPECT_LT((K - expected).cwiseAbs().maxCoeff(), 1e-9);
}

// --- solve_quasistatic ------------------------------------------------------

TEST(Solve, ZeroPrescribedDisplacementsGiveRestShape) {
    const BeamMesh m = cantilever(16);
    const std::vector<DirichletBC> bcs{DirichletBC::clamp(0), {8, 0.0, 0.0, false}, {16, 0.0, 0.0, false}};
    const SolveResult r = solve_quasistatic(m, bcs);
    ASSERT_TRUE(r.converged);
    for (std::size_t i = 0; i < m.node_count(); ++i) {
        EXPECT_EQ(r.deformed_nodes[i].x, m.rest_positions[i].x);
        EXPECT_EQ(r.deformed_nodes[i].y, m.rest_positions[i].y);
    }
    for (const Reaction& rx : r.reactions) EXPECT_EQ(rx.force.norm(), 0.0);
}

TEST(Solve, SmallDeflectionTipReaction) {
    const BeamMesh m = cantilever();
    const std::vector<DirichletBC> bcs{DirichletBC::clamp(0), {64, std::nullopt, 0.5, false}};
    const SolveResult r = solve_quasistatic(m, bcs);
    const double expected = 3.0 * kEI * 0.5 / (kL * kL * kL);
    ASSERT_EQ(r.reactions.size(), 2u);
    EXPECT_LT(rel(r.reactions[1].force.norm(), expected), 5e-3);
    EXPECT_FALSE(r.reactions[1].moment.has_value());
    EXPECT_TRUE(r.reactions[0].moment.has_value());
}

TEST(Solve, LargeDeflectionMatchesElastica) {
    const double alpha = 2.0;
    const double F = alpha * kEI / (kL * kL);
    SolveResult r = tip_load(cantilever(64, 1e12), {0.0, F});
    const auto oracle = oracle::cantilever_tip(alpha);
    const double ratio = r.deformed_nodes.back().y / kL;
    EXPECT_LT(rel(ratio, oracle.y_over_L), 0.02);
}

TEST(Solve, RequiresClampedBase) {
    const BeamMesh m = cantilever(8);
    const std::vector<DirichletBC> no_base{{8, 0.0, 1.0, false}};
    EXPECT_THROW(solve_quasistatic(m, no_base), InvalidInput);
    const std::vector<DirichletBC> pinned{{0, 0.0, 0.0, false}, {8, 0.0, 1.0, false}};
    EXPECT_THROW(solve_quasistatic(m, pinned), InvalidInput);
}

TEST(Solve, NonConvergenceCarriesResidual) {
    const BeamMesh m = cantilever(16);
    const std::vector<DirichletBC> bcs{DirichletBC::clamp(0), {16, -20.0, 60.0, false}};
    SolverOptions opt;
    opt.increments = 1;
    opt.max_iters = 1;
    opt.tol = 1e-14;
    try {
        solve_quasistatic(m, bcs, opt);
        FAIL() << "expected NumericalError";
    } catch (const NumericalError& e) {
        EXPECT_TRUE(std::isfinite(e.residual()));
        EXPECT_GT(e.residual(), 0.0);
    }
}

TEST(Solve, SingularTangentNamesUnconstrainedMode) {
    const BeamMesh m = cantilever(4);
    const NodalLoad load{4, {0.0, 1e-3}, 0.0};
    try {
        solve_static(m, {}, std::span(&load, 1));
        FAIL() << "expected NumericalError";
    } catch (const NumericalError& e) {
        EXPECT_NE(std::string(e.what()).find("node"), std::string::npos) << e.what();
    }
}

TEST(Solve, RejectsBadOptions) {
    const BeamMesh m = cantilever(4);
    const DirichletBC base = DirichletBC::clamp(0);
    SolverOptions opt;
    opt.increments = 0;
    EXPECT_THROW(solve_quasistatic(m, std::span(&base, 1), opt), InvalidInput);
    opt = {};
    opt.tol = 0.0;
    EXPECT_THROW(solve_quasistatic(m, std::span(&base, 1), opt), InvalidInput);
}

// --- recover_resultants -----------------------------------------------------

TEST(Resultants, UndeformedIsZero) {
    const BeamMesh m = cantilever(8);
    for (const ElementResultants& r : recover_resultants(m)) {
        EXPECT_EQ(r.axial, 0.0);
        EXPECT_EQ(r.shear, 0.0);
        EXPECT_EQ(r.moment_start, 0.0);
        EXPECT_EQ(r.moment_end, 0.0);
    }
}

TEST(Resultants, TipLoadedCantileverMomentDiagram) {
    const BeamMesh m = cantilever();
    const std::vector<DirichletBC> bcs{DirichletBC::clamp(0), {64, std::nullopt, 0.5, false}};
    const SolveResult r = solve_quasistatic(m, bcs);
    const auto res = recover_resultants(r, m);
    const double tip_load = r.reactions[1].force.y;  // support pushes the tip up
    ASSERT_GT(tip_load, 0.0);
    EXPECT_EQ(r.reactions[1].force.x, 0.0);
    EXPECT_LT(rel(res.front().moment_start, tip_load * kL), 0.01);
    EXPECT_NEAR(res.back().moment_end, 0.0, 1e-6 * tip_load * kL);
    // Linear decrease: M(s) ~ F (L - s).
    double s = 0.0;
    for (const ElementResultants& e : res) {
        s += kL / 64.0;
        EXPECT_NEAR(e.moment_end, tip_load * (kL - s), 0.01 * tip_load * kL);
        EXPECT_NEAR(e.shear, tip_load, 0.01 * tip_load);
    }
}

TEST(Resultants, StressNeedsSectionData) {
    const BeamMesh m = cantilever(8);
    const auto res = recover_resultants(m);
    EXPECT_THROW(bending_stress(res, std::nullopt), InvalidInput);
    EXPECT_THROW(bending_stress(res, SectionGeometry{0.4, 0.0}), InvalidInput);
    const auto sigma = bending_stress(res, SectionGeometry::solid_circular(0.4));
    EXPECT_EQ(sigma.size(), 8u);
}

TEST(Resultants, StressScalesWithMoment) {
    const BeamMesh m = cantilever(16);
    const std::vector<DirichletBC> bcs{DirichletBC::clamp(0), {16, 0.0, 2.0, false}};
    const SolveResult r = solve_quasistatic(m, bcs);
    const auto res = recover_resultants(r, m);
    const SectionGeometry sec = SectionGeometry::solid_circular(0.5);
    const auto sigma = bending_stress(res, sec);
    for (std::size_t e = 0; e < res.size(); ++e)
        EXPECT_DOUBLE_EQ(sigma[e], res[e].max_abs_moment() * 0.5 / sec.second_moment);
}

// --- invariants -------------------------------------------------------------

namespace {

BeamMesh randomly_deformed(std::mt19937& rng, std::size_t n = 12) {
    BeamMesh m = BeamMesh::straight({0, 0}, {1, 0}, kL, n, props(200.0));
    std::uniform_real_distribution<double> du(-2.0, 2.0), dp(-0.3, 0.3);
    Eigen::VectorXd u(m.dof_count());
    for (Eigen::Index i = 0; i < u.size(); ++i) u[i] = (i % 3 == 2) ? dp(rng) : du(rng) * static_cast<double>(i / 3) / n * 5.0;
    m.set_displacements(u);
    return m;
}

}  // namespace

TEST(Invariants, TangentSymmetricAlongSolve) {
    std::mt19937 rng(7);
    for (int trial = 0; trial < 10; ++trial) {
        const BeamMesh m = randomly_deformed(rng);
        const Eigen::MatrixXd K(assemble_global(m));
        const double scale = K.cwiseAbs().maxCoeff();
        EXPECT_LT((K - K.transpose()).cwiseAbs().maxCoeff(), 1e-9 * scale);
    }
}

TEST(Invariants, TangentConsistentWithInternalForce) {
    std::mt19937 rng(11);
    std::normal_distribution<double> nd;
    for (int trial = 0; trial < 10; ++trial) {
        BeamMesh m = randomly_deformed(rng);
        const Eigen::VectorXd u0 = m.displacements();
        const Eigen::MatrixXd K(assemble_global(m));
        Eigen::VectorXd dir(u0.size());
        for (Eigen::Index i = 0; i < dir.size(); ++i) dir[i] = (i % 3 == 2) ? nd(rng) / kL : nd(rng);
        dir /= dir.norm();
        const double h = 1e-6 * kL;
        m.set_displacements(u0 + h * dir);
        const Eigen::VectorXd fp = internal_force(m);
        m.set_displacements(u0 - h * dir);
        const Eigen::VectorXd fm = internal_force(m);
        const Eigen::VectorXd fd = (fp - fm) / (2.0 * h);
        const Eigen::VectorXd pred = K * dir;
        EXPECT_LT((fd - pred).norm() / pred.norm(), 1e-4);
    }
}

TEST(Invariants, ReactionsBalanceWithoutSpanLoads) {
    const BeamMesh m = cantilever(32);
    const std::vector<DirichletBC> bcs{DirichletBC::clamp(0), {10, 0.0, 8.0, false}, {20, -1.0, -3.0, false},
                                       {32, -4.0, 12.0, false}};
    const SolveResult r = solve_quasistatic(m, bcs);
    Vec2 sum;
    for (const Reaction& rx : r.reactions) sum += rx.force;
    EXPECT_LT(sum.norm(), 1e-6);
    // Moment balance about the origin.
    double moment = *r.reactions[0].moment;
    for (const Reaction& rx : r.reactions) {
        const Vec2 p = r.deformed_nodes[rx.node].position();
        moment += cross(p, rx.force);
    }
    EXPECT_LT(std::abs(moment), 1e-6 * kL);
}

TEST(Invariants, Objectivity) {
    const double theta = 0.7;
    const Vec2 dir{std::cos(theta), std::sin(theta)};
    const BeamMesh m0 = cantilever(32);
    const BeamMesh m1 = cantilever(32, 1e6, dir);
    const Vec2 d1{-3.0, 20.0}, d2{-10.0, 30.0};
    const Vec2 r1 = rotate(d1, theta), r2 = rotate(d2, theta);
    const std::vector<DirichletBC> b0{DirichletBC::clamp(0), {16, d1.x, d1.y, false}, {32, d2.x, d2.y, false}};
    const std::vector<DirichletBC> b1{DirichletBC::clamp(0), {16, r1.x, r1.y, false}, {32, r2.x, r2.y, false}};
    const SolveResult s0 = solve_quasistatic(m0, b0);
    const SolveResult s1 = solve_quasistatic(m1, b1);
    for (std::size_t i = 0; i < s0.reactions.size(); ++i) {
        const Vec2 a = rotate(s0.reactions[i].force, theta), b = s1.reactions[i].force;
        EXPECT_LT((a - b).norm(), 1e-8 * a.norm());
        EXPECT_LT(rel(s1.reactions[i].force.norm(), s0.reactions[i].force.norm()), 1e-8);
    }
}

TEST(Invariants, TimoshenkoConvergesToEulerBernoulli) {
    // Linear stiffness at rest: the element is exact, so the tip deflection is
    // F L^3 / 3EI + F L / kGA and the excess over Euler-Bernoulli shrinks with kGA.
    const double F = 0.01;
    const double eb = F * kL * kL * kL / (3.0 * kEI);
    double prev_err = std::numeric_limits<double>::infinity();
    for (double kGA : {1.0, 10.0, 100.0, 1e3, 1e4, 1e6}) {
        const BeamMesh m = cantilever(16, kGA);
        const Eigen::MatrixXd K = Eigen::MatrixXd(assemble_global(m)).bottomRightCorner(48, 48);
        Eigen::VectorXd f = Eigen::VectorXd::Zero(48);
        f(46) = F;
        const double tip = K.fullPivLu().solve(f)(46);
        EXPECT_LT(rel(tip, eb + F * kL / kGA), 1e-9) << "kGA=" << kGA;
        const double err = std::abs(tip - eb);
        EXPECT_LT(err, prev_err) << "kGA=" << kGA;
        prev_err = err;
    }
    EXPECT_LT(prev_err / eb, 1e-3);
}

TEST(Invariants, MeshConvergenceOfLargeDeflectionReaction) {
    // The tip is walked along the elastica family (alpha = 0.5 .. 5) with each
    // stage warm-started from the last; a straight-line path would cross
    // unstable branches of the clamped-pinned problem.
    double prev = 0.0;
    for (std::size_t n : {32u, 64u, 128u}) {
        const BeamMesh m = cantilever(n, 1e9);
        std::vector<NodeState> state = m.nodes;
        SolveResult r;
        for (int k = 1; k <= 10; ++k) {
            const auto o = oracle::cantilever_tip(0.5 * k);
            const Vec2 tip{(o.x_over_L - 1.0) * kL, o.y_over_L * kL};
            const std::vector<DirichletBC> bcs{DirichletBC::clamp(0), {n, tip.x, tip.y, false}};
            SolverOptions opt;
            opt.increments = 2;
            r = solve_quasistatic(m, bcs, opt, state);
            state = r.deformed_nodes;
        }
        const double f = r.reactions[1].force.norm();
        EXPECT_NEAR(f, 5.0 * kEI / (kL * kL), 0.05 * 5.0 * kEI / (kL * kL)) << n;
        if (prev > 0.0) {
            EXPECT_LT(rel(f, prev), 5e-3) << n;
        }
        prev = f;
    }
}

TEST(Solve, WarmStartRampsFromStartState) {
    const BeamMesh m = cantilever(16);
    const std::vector<DirichletBC> bcs{DirichletBC::clamp(0), {16, -2.0, 20.0, false}};
    const SolveResult cold = solve_quasistatic(m, bcs);
    const SolveResult warm = solve_quasistatic(m, bcs, {}, cold.deformed_nodes);
    EXPECT_LE(warm.total_iterations, 1);
    EXPECT_NEAR(warm.reactions[1].force.y, cold.reactions[1].force.y, 1e-9);
    const std::vector<NodeState> wrong(3);
    EXPECT_THROW(solve_quasistatic(m, bcs, {}, wrong), InvalidInput);
}

TEST(DebugDump, WritesOneRowPerNode) {
    const BeamMesh m = cantilever(4);
    const std::vector<DirichletBC> bcs{DirichletBC::clamp(0), {4, 0.0, 1.0, false}};
    std::ostringstream os;
    write_debug_csv(os, solve_quasistatic(m, bcs));
    const std::string s = os.str();
    EXPECT_EQ(std::count(s.begin(), s.end(), '\n'), 6);
    EXPECT_EQ(s.rfind("node,x_mm", 0), 0u);
}
