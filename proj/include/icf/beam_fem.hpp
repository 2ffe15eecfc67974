#pragma once

// Geometrically nonlinear planar Timoshenko beam: corotational two-node element,
// global assembly and incremental Newton-Raphson static solves under prescribed
// displacements and/or dead nodal loads.

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "icf/core.hpp"

namespace icf::fem {

using Matrix6 = Eigen::Matrix<double, 6, 6>;
using Vector6 = Eigen::Matrix<double, 6, 1>;

inline constexpr int kDofsPerNode = 3;
inline constexpr double kDefaultShearCoefficient = 0.9;
inline constexpr double kDefaultPoisson = 0.3;

struct NodeState {
    double x = 0.0;
    double y = 0.0;
    double phi = 0.0;  // rotation from the rest configuration (rad)

    Vec2 position() const { return {x, y}; }
};

struct SectionProperties {
    double EI = 0.0;     // N mm^2
    double EA = 0.0;     // N
    double kGA = 0.0;    // N, effective shear rigidity (kappa G A)
    double kappa = kDefaultShearCoefficient;

    void validate() const {
        if (!(EI > 0.0) || !std::isfinite(EI)) throw InvalidInput("section: EI must be positive");
        if (!(EA > 0.0) || !std::isfinite(EA)) throw InvalidInput("section: EA must be positive");
        if (!(kGA > 0.0)) throw InvalidInput("section: kGA must be positive");
        if (!(kappa > 0.0 && kappa <= 1.0)) throw InvalidInput("section: kappa must lie in (0, 1]");
    }

    /// Solid circular section where only EI and the radius are known:
    /// E = EI / I, G = E / 2(1 + nu), kGA = kappa G A.
    static SectionProperties solid_circular(double EI, double radius, double EA,
                                            double kappa = kDefaultShearCoefficient,
                                            double nu = kDefaultPoisson) {
        if (!(radius > 0.0)) throw InvalidInput("section: radius must be positive");
        const double area = std::numbers::pi * radius * radius;
        const double inertia = 0.25 * std::numbers::pi * std::pow(radius, 4);
        const double E = EI / inertia;
        const double G = E / (2.0 * (1.0 + nu));
        SectionProperties p{EI, EA, kappa * G * area, kappa};
        p.validate();
        return p;
    }
};

/// Two-node element joining node `first` and `first + 1`.
struct Element {
    std::size_t first = 0;
    SectionProperties props;
    double rest_length = 0.0;
};

struct BeamMesh {
    std::vector<NodeState> nodes;     // current configuration
    std::vector<Element> elements;
    std::vector<Vec2> rest_positions; // intrinsic (stress-free) shape

    std::size_t node_count() const { return nodes.size(); }
    std::size_t dof_count() const { return kDofsPerNode * nodes.size(); }

    /// Rest-shape mesh through `rest` with one property set per element.
    static BeamMesh from_rest_shape(std::vector<Vec2> rest, std::span<const SectionProperties> props) {
        if (rest.size() < 2) throw InvalidInput("mesh: need at least two nodes");
        if (props.size() != rest.size() - 1) throw InvalidInput("mesh: one property set per element required");
        BeamMesh m;
        m.rest_positions = std::move(rest);
        m.nodes.reserve(m.rest_positions.size());
        for (Vec2 p : m.rest_positions) m.nodes.push_back({p.x, p.y, 0.0});
        for (std::size_t e = 0; e + 1 < m.rest_positions.size(); ++e) {
            m.elements.push_back({e, props[e], distance(m.rest_positions[e], m.rest_positions[e + 1])});
        }
        m.validate();
        return m;
    }

    static BeamMesh straight(Vec2 origin, Vec2 direction, double length, std::size_t n_elements,
                             const SectionProperties& props) {
        if (n_elements == 0) throw InvalidInput("mesh: need at least one element");
        const Vec2 d = direction.normalized();
        std::vector<Vec2> rest;
        for (std::size_t i = 0; i <= n_elements; ++i)
            rest.push_back(origin + d * (length * static_cast<double>(i) / static_cast<double>(n_elements)));
        std::vector<SectionProperties> props_v(n_elements, props);
        return from_rest_shape(std::move(rest), props_v);
    }

    void validate() const {
        if (nodes.size() != rest_positions.size()) throw InvalidInput("mesh: node/rest count mismatch");
        if (elements.size() + 1 != nodes.size()) throw InvalidInput("mesh: expected N+1 nodes for N elements");
        for (std::size_t e = 0; e < elements.size(); ++e) {
            const Element& el = elements[e];
            if (el.first != e) throw InvalidInput("mesh: elements must join consecutive nodes");
            if (!(el.rest_length > 0.0)) throw InvalidInput("mesh: element " + std::to_string(e) + " has zero rest length");
            el.props.validate();
        }
        for (const NodeState& n : nodes)
            if (!std::isfinite(n.x) || !std::isfinite(n.y) || !std::isfinite(n.phi))
                throw InvalidInput("mesh: non-finite node state");
    }

    /// Displacement vector (ux, uy, phi per node) of the current configuration.
    Eigen::VectorXd displacements() const {
        Eigen::VectorXd u(dof_count());
        for (std::size_t i = 0; i < nodes.size(); ++i) {
            u[3 * i] = nodes[i].x - rest_positions[i].x;
            u[3 * i + 1] = nodes[i].y - rest_positions[i].y;
            u[3 * i + 2] = nodes[i].phi;
        }
        return u;
    }

    void set_displacements(const Eigen::VectorXd& u) {
        for (std::size_t i = 0; i < nodes.size(); ++i)
            nodes[i] = {rest_positions[i].x + u[3 * i], rest_positions[i].y + u[3 * i + 1], u[3 * i + 2]};
    }

    double rest_length() const {
        double L = 0.0;
        for (const Element& e : elements) L += e.rest_length;
        return L;
    }
};

/// Prescribed motion of one node. Unset translation components stay free.
struct DirichletBC {
    std::size_t node = 0;
    std::optional<double> ux;
    std::optional<double> uy;
    bool rotation_constrained = false;

    static DirichletBC clamp(std::size_t node) { return {node, 0.0, 0.0, true}; }
    static DirichletBC translation(std::size_t node, Vec2 d) { return {node, d.x, d.y, false}; }
};

struct NodalLoad {
    std::size_t node = 0;
    Vec2 force;
    double moment = 0.0;
};

struct Reaction {
    std::size_t node = 0;
    Vec2 force;                   // support force acting on the beam (N); zero along free components
    std::optional<double> moment; // N mm, only where rotation is constrained
};

/// Sign convention: axial tension positive; bending moment positive when it
/// produces counter-clockwise curvature; shear = -dM/ds.
struct ElementResultants {
    double axial = 0.0;
    double shear = 0.0;
    double moment_start = 0.0;
    double moment_end = 0.0;

    double moment() const { return 0.5 * (moment_start + moment_end); }
    double max_abs_moment() const { return std::max(std::abs(moment_start), std::abs(moment_end)); }
};

struct SolveResult {
    std::vector<NodeState> deformed_nodes;
    std::vector<Reaction> reactions;
    std::vector<ElementResultants> element_resultants;
    bool converged = false;
    int increments_used = 0;
    int total_iterations = 0;
    double residual_norm = 0.0;
};

struct SolverOptions {
    int increments = 10;
    double tol = 1e-6;  // N
    int max_iters = 50; // per increment
};

// ---------------------------------------------------------------------------
// Element level

namespace detail {

struct LocalStiffness {
    double axial;  // EA / L0
    double k11, k12, k22;
};

inline LocalStiffness local_stiffness(const SectionProperties& p, double l) {
    const double phi_s = 12.0 * p.EI / (p.kGA * l * l);
    const double c = p.EI / (l * (1.0 + phi_s));
    return {p.EA / l, c * (4.0 + phi_s), c * (2.0 - phi_s), c * (4.0 + phi_s)};
}

}  // namespace detail

/// Local-frame element tangent K = K_L + K_NL for DOFs (u1, v1, phi1, u2, v2, phi2).
/// K_L is the shear-flexible Timoshenko stiffness with exact (linked) interpolation;
/// K_NL is the geometric stiffness carried by the axial force.
inline Matrix6 element_stiffness(const SectionProperties& props, double l, double axial_force) {
    if (!(l > 0.0)) throw InvalidInput("element_stiffness: length must be positive");
    props.validate();
    const double phi_s = 12.0 * props.EI / (props.kGA * l * l);
    const double b = props.EI / ((1.0 + phi_s) * l * l * l);
    const double a = props.EA / l;
    Matrix6 K = Matrix6::Zero();
    K(0, 0) = a;  K(0, 3) = -a;
    K(3, 0) = -a; K(3, 3) = a;
    const std::array<int, 4> idx{1, 2, 4, 5};
    const double bend[4][4] = {
        {12.0, 6.0 * l, -12.0, 6.0 * l},
        {6.0 * l, (4.0 + phi_s) * l * l, -6.0 * l, (2.0 - phi_s) * l * l},
        {-12.0, -6.0 * l, 12.0, -6.0 * l},
        {6.0 * l, (2.0 - phi_s) * l * l, -6.0 * l, (4.0 + phi_s) * l * l},
    };
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) K(idx[i], idx[j]) = b * bend[i][j];

    if (axial_force != 0.0) {
        const double g = axial_force / l;
        K(1, 1) += g;  K(1, 4) -= g;
        K(4, 1) -= g;  K(4, 4) += g;
    }
    return K;
}

/// Rotation matrix mapping global element DOFs to the local frame at angle `beta`.
inline Matrix6 element_rotation(double beta) {
    const double c = std::cos(beta), s = std::sin(beta);
    Matrix6 T = Matrix6::Zero();
    for (int n = 0; n < 2; ++n) {
        const int o = 3 * n;
        T(o, o) = c;      T(o, o + 1) = s;
        T(o + 1, o) = -s; T(o + 1, o + 1) = c;
        T(o + 2, o + 2) = 1.0;
    }
    return T;
}

/// Corotational state of one element in the current configuration.
struct ElementState {
    Vector6 force;   // global internal force
    Matrix6 tangent; // consistent global tangent
    double axial = 0.0, m1 = 0.0, m2 = 0.0, current_length = 0.0;
};

inline ElementState element_state(const BeamMesh& mesh, const Element& el) {
    const std::size_t i = el.first, j = el.first + 1;
    const Vec2 X1 = mesh.rest_positions[i], X2 = mesh.rest_positions[j];
    const Vec2 x1 = mesh.nodes[i].position(), x2 = mesh.nodes[j].position();
    const double L0 = el.rest_length;
    const Vec2 e0 = (X2 - X1) / L0;
    const Vec2 d = x2 - x1;
    const double Ln = d.norm();
    if (!(Ln > 0.0)) throw NumericalError("element collapsed to zero length");
    const Vec2 e = d / Ln;
    const double c = e.x, s = e.y;

    const double alpha = std::atan2(cross(e0, e), dot(e0, e));
    const double ul = (Ln * Ln - L0 * L0) / (Ln + L0);
    const double t1 = mesh.nodes[i].phi - alpha;
    const double t2 = mesh.nodes[j].phi - alpha;

    const detail::LocalStiffness k = detail::local_stiffness(el.props, L0);
    const double N = k.axial * ul;
    const double M1 = k.k11 * t1 + k.k12 * t2;
    const double M2 = k.k12 * t1 + k.k22 * t2;

    Vector6 r, z;
    r << -c, -s, 0.0, c, s, 0.0;
    z << s, -c, 0.0, -s, c, 0.0;
    Eigen::Matrix<double, 3, 6> B;
    B.row(0) = r.transpose();
    B.row(1) = -z.transpose() / Ln;
    B.row(2) = -z.transpose() / Ln;
    B(1, 2) += 1.0;
    B(2, 5) += 1.0;

    Eigen::Matrix3d D;
    D << k.axial, 0.0, 0.0,
         0.0, k.k11, k.k12,
         0.0, k.k12, k.k22;

    ElementState st;
    st.force = B.transpose() * Eigen::Vector3d(N, M1, M2);
    st.tangent = B.transpose() * D * B + (N / Ln) * (z * z.transpose()) +
                 ((M1 + M2) / (Ln * Ln)) * (r * z.transpose() + z * r.transpose());
    st.axial = N;
    st.m1 = M1;
    st.m2 = M2;
    st.current_length = Ln;
    return st;
}

// ---------------------------------------------------------------------------
// Global level

/// Internal nodal force vector of the mesh in its current configuration.
inline Eigen::VectorXd internal_force(const BeamMesh& mesh) {
    Eigen::VectorXd f = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(mesh.dof_count()));
    for (const Element& el : mesh.elements) {
        const ElementState st = element_state(mesh, el);
        f.segment<6>(static_cast<Eigen::Index>(3 * el.first)) += st.force;
    }
    return f;
}

/// Global tangent stiffness at the mesh's current configuration.
inline Eigen::SparseMatrix<double> assemble_global(const BeamMesh& mesh) {
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(36 * mesh.elements.size());
    for (const Element& el : mesh.elements) {
        const ElementState st = element_state(mesh, el);
        const int o = static_cast<int>(3 * el.first);
        for (int a = 0; a < 6; ++a)
            for (int b = 0; b < 6; ++b) trips.emplace_back(o + a, o + b, st.tangent(a, b));
    }
    const auto n = static_cast<Eigen::Index>(mesh.dof_count());
    Eigen::SparseMatrix<double> K(n, n);
    K.setFromTriplets(trips.begin(), trips.end());
    return K;
}

inline std::string dof_name(std::size_t dof) {
    static constexpr const char* comp[] = {"ux", "uy", "phi"};
    return "node " + std::to_string(dof / 3) + " " + comp[dof % 3];
}

namespace detail {

/// Partition of DOFs into constrained (with target value) and free.
struct DofMap {
    std::vector<int> free;
    std::vector<int> fixed;
    Eigen::VectorXd fixed_target;  // indexed by position in `fixed`
};

inline DofMap make_dof_map(const BeamMesh& mesh, std::span<const DirichletBC> bcs) {
    const std::size_t n = mesh.dof_count();
    std::vector<int> state(n, 0);  // 0 free, 1 fixed
    std::vector<double> target(n, 0.0);
    for (const DirichletBC& bc : bcs) {
        if (bc.node >= mesh.node_count())
            throw InvalidInput("boundary condition references node " + std::to_string(bc.node) + " outside mesh");
        if ((bc.ux && !std::isfinite(*bc.ux)) || (bc.uy && !std::isfinite(*bc.uy)))
            throw InvalidInput("boundary condition at node " + std::to_string(bc.node) + " is not finite");
        const std::size_t o = 3 * bc.node;
        if (bc.ux) {
            state[o] = 1;
            target[o] = *bc.ux;
        }
        if (bc.uy) {
            state[o + 1] = 1;
            target[o + 1] = *bc.uy;
        }
        if (bc.rotation_constrained) {
            state[o + 2] = 1;
            target[o + 2] = 0.0;
        }
    }
    DofMap m;
    std::vector<double> tgt;
    for (std::size_t d = 0; d < n; ++d) {
        if (state[d]) {
            m.fixed.push_back(static_cast<int>(d));
            tgt.push_back(target[d]);
        } else {
            m.free.push_back(static_cast<int>(d));
        }
    }
    m.fixed_target = Eigen::Map<Eigen::VectorXd>(tgt.data(), static_cast<Eigen::Index>(tgt.size()));
    return m;
}

inline Eigen::SparseMatrix<double> restrict_matrix(const Eigen::SparseMatrix<double>& K,
                                                   const std::vector<int>& rows,
                                                   const std::vector<int>& cols) {
    std::vector<int> rmap(static_cast<std::size_t>(K.rows()), -1), cmap(static_cast<std::size_t>(K.cols()), -1);
    for (std::size_t i = 0; i < rows.size(); ++i) rmap[static_cast<std::size_t>(rows[i])] = static_cast<int>(i);
    for (std::size_t i = 0; i < cols.size(); ++i) cmap[static_cast<std::size_t>(cols[i])] = static_cast<int>(i);
    std::vector<Eigen::Triplet<double>> trips;
    for (int k = 0; k < K.outerSize(); ++k)
        for (Eigen::SparseMatrix<double>::InnerIterator it(K, k); it; ++it) {
            const int r = rmap[static_cast<std::size_t>(it.row())], c = cmap[static_cast<std::size_t>(it.col())];
            if (r >= 0 && c >= 0) trips.emplace_back(r, c, it.value());
        }
    Eigen::SparseMatrix<double> out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
    out.setFromTriplets(trips.begin(), trips.end());
    return out;
}

/// Mixed force/moment residual norm in N: moments are divided by the mean element length.
inline double residual_norm(const Eigen::VectorXd& r, const std::vector<int>& dofs, double moment_scale) {
    double acc = 0.0;
    for (int d : dofs) {
        const double v = (d % 3 == 2) ? r[d] / moment_scale : r[d];
        acc += v * v;
    }
    return std::sqrt(acc);
}

/// Throws with the name of the dominant DOF of the null space when the free block is singular.
inline void check_constrained(const Eigen::SparseMatrix<double>& Kff, const std::vector<int>& free) {
    if (free.empty()) return;
    const Eigen::MatrixXd dense(Kff);
    Eigen::FullPivLU<Eigen::MatrixXd> lu(dense);
    lu.setThreshold(1e-11);
    if (lu.rank() == dense.rows()) return;
    const Eigen::MatrixXd ker = lu.kernel();
    Eigen::Index arg = 0;
    ker.col(0).cwiseAbs().maxCoeff(&arg);
    throw NumericalError("singular tangent: unconstrained mode dominated by " +
                         dof_name(static_cast<std::size_t>(free[static_cast<std::size_t>(arg)])));
}

}  // namespace detail

inline std::vector<ElementResultants> recover_resultants(const BeamMesh& deformed) {
    std::vector<ElementResultants> out;
    out.reserve(deformed.elements.size());
    for (const Element& el : deformed.elements) {
        const ElementState st = element_state(deformed, el);
        out.push_back({st.axial, -(st.m1 + st.m2) / st.current_length, -st.m1, st.m2});
    }
    return out;
}

/// Incremental Newton-Raphson static solve. Prescribed displacements and nodal
/// loads are ramped together in `increments` equal steps; a step whose
/// equilibrium iterations fail is retried as two half steps (up to 6 levels).
/// A non-empty `start` (one state per node) replaces the rest configuration as
/// the starting point; prescribed DOFs then ramp from their start values.
inline SolveResult solve_static(const BeamMesh& mesh, std::span<const DirichletBC> bcs,
                                std::span<const NodalLoad> loads, const SolverOptions& opt = {},
                                std::span<const NodeState> start = {}) {
    mesh.validate();
    if (!start.empty() && start.size() != mesh.node_count())
        throw InvalidInput("solver: start state needs one entry per node");
    if (opt.increments < 1) throw InvalidInput("solver: increments must be >= 1");
    if (!(opt.tol > 0.0)) throw InvalidInput("solver: tolerance must be positive");
    if (opt.max_iters < 1) throw InvalidInput("solver: max_iters must be >= 1");

    const auto n = static_cast<Eigen::Index>(mesh.dof_count());
    const detail::DofMap map = detail::make_dof_map(mesh, bcs);
    Eigen::VectorXd fext = Eigen::VectorXd::Zero(n);
    for (const NodalLoad& l : loads) {
        if (l.node >= mesh.node_count()) throw InvalidInput("load references node outside mesh");
        if (!std::isfinite(l.force.x) || !std::isfinite(l.force.y) || !std::isfinite(l.moment))
            throw InvalidInput("load at node " + std::to_string(l.node) + " is not finite");
        fext[static_cast<Eigen::Index>(3 * l.node)] += l.force.x;
        fext[static_cast<Eigen::Index>(3 * l.node + 1)] += l.force.y;
        fext[static_cast<Eigen::Index>(3 * l.node + 2)] += l.moment;
    }
    const double moment_scale = mesh.rest_length() / static_cast<double>(mesh.elements.size());
    const auto n_free = static_cast<Eigen::Index>(map.free.size());
    const auto n_fixed = static_cast<Eigen::Index>(map.fixed.size());

    BeamMesh work = mesh;
    work.set_displacements(Eigen::VectorXd::Zero(n));
    detail::check_constrained(detail::restrict_matrix(assemble_global(work), map.free, map.free), map.free);

    Eigen::SparseLU<Eigen::SparseMatrix<double>, Eigen::COLAMDOrdering<int>> lu;
    bool pattern_analyzed = false;
    auto factorize = [&](const Eigen::SparseMatrix<double>& Kff) {
        if (!pattern_analyzed) {
            lu.analyzePattern(Kff);
            pattern_analyzed = true;
        }
        lu.factorize(Kff);
        return lu.info() == Eigen::Success;
    };
    auto free_part = [&](const Eigen::VectorXd& v) {
        Eigen::VectorXd out(n_free);
        for (Eigen::Index k = 0; k < n_free; ++k) out[k] = v[map.free[static_cast<std::size_t>(k)]];
        return out;
    };
    auto residual = [&](double lambda, double& norm) {
        const Eigen::VectorXd r = lambda * fext - internal_force(work);
        norm = detail::residual_norm(r, map.free, moment_scale);
        return r;
    };

    SolveResult res;
    Eigen::VectorXd u = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd u_fixed0 = Eigen::VectorXd::Zero(n_fixed);
    if (!start.empty()) {
        BeamMesh s0 = mesh;
        s0.nodes.assign(start.begin(), start.end());
        s0.validate();
        u = s0.displacements();
        for (Eigen::Index k = 0; k < n_fixed; ++k) u_fixed0[k] = u[map.fixed[static_cast<std::size_t>(k)]];
        work.set_displacements(u);
    }
    double last_residual = 0.0;
    std::string failure;

    // One load step from the converged state `u` at lambda0 to lambda1. Leaves
    // `u` untouched on failure.
    auto step = [&](double lambda0, double lambda1) -> bool {
        Eigen::VectorXd trial = u;
        try {
            Eigen::VectorXd du_c(n_fixed);
            for (Eigen::Index k = 0; k < n_fixed; ++k)
                du_c[k] = (lambda1 - lambda0) * (map.fixed_target[k] - u_fixed0[k]);
            // Tangent predictor including the motion of prescribed DOFs.
            double rn = 0.0;
            const Eigen::VectorXd r0 = residual(lambda1, rn);
            const Eigen::SparseMatrix<double> K0 = assemble_global(work);
            for (Eigen::Index k = 0; k < n_fixed; ++k) trial[map.fixed[static_cast<std::size_t>(k)]] += du_c[k];
            if (n_free > 0) {
                Eigen::VectorXd rhs = free_part(r0);
                if (n_fixed > 0) rhs -= detail::restrict_matrix(K0, map.free, map.fixed) * du_c;
                if (!factorize(detail::restrict_matrix(K0, map.free, map.free))) {
                    failure = "singular tangent in predictor";
                    throw NumericalError(failure);
                }
                const Eigen::VectorXd du = lu.solve(rhs);
                for (Eigen::Index k = 0; k < n_free; ++k) trial[map.free[static_cast<std::size_t>(k)]] += du[k];
            }
            work.set_displacements(trial);

            for (int iter = 0;; ++iter) {
                const Eigen::VectorXd r = residual(lambda1, rn);
                last_residual = rn;
                if (!std::isfinite(rn)) {
                    failure = "residual became non-finite";
                    break;
                }
                if (rn <= opt.tol) {
                    u = trial;
                    res.total_iterations += iter;
                    res.residual_norm = rn;
                    return true;
                }
                if (iter >= opt.max_iters) {
                    failure = "no convergence after " + std::to_string(iter) + " iterations";
                    break;
                }
                if (!factorize(detail::restrict_matrix(assemble_global(work), map.free, map.free))) {
                    failure = "singular tangent during equilibrium iterations";
                    break;
                }
                const Eigen::VectorXd du = lu.solve(free_part(r));
                // Backtrack when the full correction blows the residual up.
                double scale = 1.0;
                Eigen::VectorXd next = trial;
                for (int ls = 0; ls < 6; ++ls) {
                    next = trial;
                    for (Eigen::Index k = 0; k < n_free; ++k) next[map.free[static_cast<std::size_t>(k)]] += scale * du[k];
                    work.set_displacements(next);
                    double tn = 0.0;
                    bool ok = true;
                    try {
                        residual(lambda1, tn);
                    } catch (const NumericalError&) {
                        ok = false;
                    }
                    if (ok && std::isfinite(tn) && (tn < 10.0 * rn || tn <= opt.tol)) break;
                    scale *= 0.5;
                }
                trial = next;
                work.set_displacements(trial);
            }
        } catch (const NumericalError& e) {
            failure = e.what();
        }
        work.set_displacements(u);
        return false;
    };

    auto advance = [&](auto&& self, double lambda0, double lambda1, int depth) -> void {
        if (step(lambda0, lambda1)) {
            ++res.increments_used;
            return;
        }
        if (depth >= 6) {
            char buf[64];
            std::snprintf(buf, sizeof buf, "%.3e", last_residual);
            throw NumericalError("no equilibrium at load factor " + std::to_string(lambda1) + ": " + failure +
                                     " (residual " + buf + " N)",
                                 last_residual);
        }
        const double mid = 0.5 * (lambda0 + lambda1);
        self(self, lambda0, mid, depth + 1);
        self(self, mid, lambda1, depth + 1);
    };

    for (int inc = 1; inc <= opt.increments; ++inc)
        advance(advance, static_cast<double>(inc - 1) / opt.increments, static_cast<double>(inc) / opt.increments, 0);

    const Eigen::VectorXd fint = internal_force(work);
    std::vector<char> fixed(mesh.dof_count(), 0);
    for (int d : map.fixed) fixed[static_cast<std::size_t>(d)] = 1;
    for (const DirichletBC& bc : bcs) {
        const auto o = static_cast<Eigen::Index>(3 * bc.node);
        auto comp = [&](Eigen::Index d) { return fixed[static_cast<std::size_t>(d)] ? fint[d] - fext[d] : 0.0; };
        Reaction rx{bc.node, {comp(o), comp(o + 1)}, std::nullopt};
        if (bc.rotation_constrained) rx.moment = comp(o + 2);
        res.reactions.push_back(rx);
    }
    res.deformed_nodes = work.nodes;
    res.element_resultants = recover_resultants(work);
    res.converged = true;
    return res;
}

/// Displacement-controlled cantilever solve: node 0 must be clamped with zero
/// prescribed motion; other BCs prescribe translations.
inline SolveResult solve_quasistatic(const BeamMesh& mesh, std::span<const DirichletBC> bcs,
                                     const SolverOptions& opt = {}, std::span<const NodeState> start = {}) {
    const auto base = std::find_if(bcs.begin(), bcs.end(), [](const DirichletBC& b) { return b.node == 0; });
    if (base == bcs.end() || !base->rotation_constrained || !(base->ux == 0.0 && base->uy == 0.0))
        throw InvalidInput("solve_quasistatic: base node 0 must be fully clamped");
    return solve_static(mesh, bcs, {}, opt, start);
}

/// Mesh carrying the deformed configuration of `result`.
inline BeamMesh deformed_mesh(const BeamMesh& mesh, const SolveResult& result) {
    BeamMesh m = mesh;
    m.nodes = result.deformed_nodes;
    return m;
}

inline std::vector<ElementResultants> recover_resultants(const SolveResult& result, const BeamMesh& mesh) {
    if (!result.converged) throw InvalidInput("recover_resultants: result did not converge");
    return recover_resultants(deformed_mesh(mesh, result));
}

/// Section data needed for stresses; EI alone does not determine them.
struct SectionGeometry {
    double outer_radius = 0.0;  // mm
    double second_moment = 0.0; // mm^4

    static SectionGeometry solid_circular(double radius) {
        return {radius, 0.25 * std::numbers::pi * std::pow(radius, 4)};
    }
};

/// Peak outer-fiber bending stress per element, sigma = |M| c / I (N/mm^2).
inline std::vector<double> bending_stress(std::span<const ElementResultants> resultants,
                                          const std::optional<SectionGeometry>& section) {
    if (!section || !(section->outer_radius > 0.0) || !(section->second_moment > 0.0))
        throw InvalidInput("insufficient section data: stress needs outer radius and second moment of area");
    std::vector<double> out;
    out.reserve(resultants.size());
    for (const ElementResultants& r : resultants)
        out.push_back(r.max_abs_moment() * section->outer_radius / section->second_moment);
    return out;
}

/// Debug dump: node,x,y,phi,Rx,Ry,M.
inline void write_debug_csv(std::ostream& os, const SolveResult& result) {
    os << "node,x_mm,y_mm,phi_rad,Rx_N,Ry_N,M_Nmm\n";
    for (std::size_t i = 0; i < result.deformed_nodes.size(); ++i) {
        const NodeState& n = result.deformed_nodes[i];
        os << i << ',' << n.x << ',' << n.y << ',' << n.phi;
        const auto it = std::find_if(result.reactions.begin(), result.reactions.end(),
                                     [&](const Reaction& r) { return r.node == i; });
        if (it != result.reactions.end()) {
            os << ',' << it->force.x << ',' << it->force.y << ',';
            if (it->moment) os << *it->moment;
        } else {
            os << ",,,";
        }
        os << '\n';
    }
}

}  // namespace icf::fem
