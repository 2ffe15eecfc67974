#pragma once

// Inverse force estimation: a cantilever model of the tracked wire with the
// observed contact deflections as prescribed displacements. Reactions at the
// contact nodes are the contact forces.
//
// Frames: the model lives in the catheter's local frame, origin at the base
// point and x along the base tangent. Outputs are rotated back to the image
// (global) frame. Units are mm and N.

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "icf/beam_fem.hpp"
#include "icf/core.hpp"
#include "icf/csv.hpp"
#include "icf/rigidity_profile.hpp"
#include "icf/segmentation.hpp"

namespace icf::est {

/// Rest curvature as a function of distance from the distal tip (1/mm,
/// positive counter-clockwise). Empty means straight.
struct IntrinsicShape {
    std::vector<double> distance_from_tip;
    std::vector<double> curvature;

    static IntrinsicShape straight() { return {}; }

    /// Constant curvature over the distal `length`, turning the tip by `angle` rad.
    static IntrinsicShape angled_tip(double length, double angle) {
        if (!(length > 0.0)) throw InvalidInput("intrinsic shape: tip length must be positive");
        const double k = angle / length;
        return {{0.0, length, length + 1e-6}, {k, k, 0.0}};
    }

    void validate() const {
        if (distance_from_tip.size() != curvature.size()) throw InvalidInput("intrinsic shape: column sizes differ");
        for (std::size_t i = 1; i < distance_from_tip.size(); ++i)
            if (!(distance_from_tip[i] > distance_from_tip[i - 1]))
                throw InvalidInput("intrinsic shape: distances must increase");
        for (double k : curvature)
            if (!std::isfinite(k)) throw InvalidInput("intrinsic shape: curvature must be finite");
    }

    double curvature_at(double d) const {
        if (distance_from_tip.empty()) return 0.0;
        if (d <= distance_from_tip.front()) return curvature.front();
        if (d >= distance_from_tip.back()) return curvature.back();
        const auto it = std::upper_bound(distance_from_tip.begin(), distance_from_tip.end(), d);
        const std::size_t i = static_cast<std::size_t>(it - distance_from_tip.begin()) - 1;
        const double u = (d - distance_from_tip[i]) / (distance_from_tip[i + 1] - distance_from_tip[i]);
        return curvature[i] + u * (curvature[i + 1] - curvature[i]);
    }
};

struct ModelOptions {
    std::size_t n_elements = 64;
    double base_trim = 0.0;             // mm from the first centerline point to the model base
    double tangent_fit_length = 60.0;   // mm cap on the base tangent fit span (stops at the first contact)
    std::optional<Vec2> base_tangent;   // known base direction (global); skips the fit
    double wire_radius = 0.4445;        // mm, 0.035 in wire; sets kGA
    std::optional<double> EA;           // N; default 1e4 max(EI) / L^2
    double kappa = fem::kDefaultShearCoefficient;
    double nu = fem::kDefaultPoisson;
};

struct ModelBC {
    std::size_t contact = 0;  // index into the shape's contacts
    std::size_t node = 0;
    double s = 0.0;           // model arc length from the base
    Vec2 deflection;          // d = P_CP - P_BC, local frame
};

struct CantileverModel {
    Vec2 base_origin;                       // global
    Vec2 base_tangent{1.0, 0.0};            // global unit vector, local x axis
    double base_s = 0.0;                    // shape arc length at the base
    double length = 0.0;                    // L_tip - base_s
    std::vector<double> node_s;             // model arc length of each node
    fem::BeamMesh mesh;                     // local frame, rest shape
    std::vector<ModelBC> bcs;
    std::vector<fem::NodeState> start;      // observed shape as a solver start, local frame
    std::vector<seg::ContactObservation> contacts;  // global, as observed
    double timestamp = 0.0;
    std::vector<std::string> warnings;

    Vec2 to_local(Vec2 p) const { return unrotate_by(p - base_origin, base_tangent); }
    Vec2 to_global(Vec2 p) const { return base_origin + rotate_by(p, base_tangent); }
    Vec2 direction_to_global(Vec2 v) const { return rotate_by(v, base_tangent); }
};

struct ForceEstimate {
    std::size_t contact = 0;
    double s = 0.0;          // shape arc length (mm)
    Vec2 position;           // global (mm)
    Vec2 force;              // exerted by the wire on the wall, global (N)
    double magnitude = 0.0;  // N
    std::optional<double> fn, ft;  // N, when the wall normal is known
    double timestamp = 0.0;
};

struct EstimateResult {
    std::vector<ForceEstimate> forces;
    std::vector<seg::CenterlinePoint> simulated;  // deformed model, global, s = shape arc length
    fem::SolveResult solve;
};

struct ShapeError {
    std::vector<double> samples;  // E_P per matched arc length (mm)
    double rmse = 0.0;
    double maxe = 0.0;
};

// --- meshing -------------------------------------------------------------------

/// Node arc lengths on [0, length] with every breakpoint on a node. Elements
/// are shared out in proportion to interval length (at least one each).
inline std::vector<double> node_grid(double length, std::span<const double> breakpoints, std::size_t n_elements) {
    if (!(length > 0.0)) throw InvalidInput("mesh: model length must be positive");
    std::vector<double> cuts{0.0};
    for (double b : breakpoints) {
        if (!(b > 0.0 && b <= length)) throw InvalidInput("mesh: breakpoint outside the model");
        cuts.push_back(b);
    }
    std::sort(cuts.begin(), cuts.end());
    if (cuts.back() < length) cuts.push_back(length);
    for (std::size_t i = 1; i < cuts.size(); ++i)
        if (!(cuts[i] > cuts[i - 1])) throw InvalidInput("mesh: two breakpoints coincide");
    const std::size_t n_int = cuts.size() - 1;
    if (n_elements < n_int) throw InvalidInput("mesh: fewer elements than intervals between contacts");

    std::vector<std::size_t> n(n_int, 1);
    std::size_t used = n_int;
    while (used < n_elements) {
        // Next element goes to the interval with the longest elements.
        std::size_t best = 0;
        double best_h = -1.0;
        for (std::size_t k = 0; k < n_int; ++k) {
            const double h = (cuts[k + 1] - cuts[k]) / static_cast<double>(n[k]);
            if (h > best_h) {
                best_h = h;
                best = k;
            }
        }
        ++n[best];
        ++used;
    }
    std::vector<double> s{0.0};
    for (std::size_t k = 0; k < n_int; ++k)
        for (std::size_t j = 1; j <= n[k]; ++j)
            s.push_back(j == n[k] ? cuts[k + 1] : cuts[k] + (cuts[k + 1] - cuts[k]) * static_cast<double>(j) / static_cast<double>(n[k]));
    return s;
}

/// Rest positions of the nodes in the local frame (base at origin, x tangent).
inline std::vector<Vec2> rest_shape(std::span<const double> s, double length, const IntrinsicShape& shape) {
    shape.validate();
    if (std::all_of(shape.curvature.begin(), shape.curvature.end(), [](double k) { return k == 0.0; })) {
        // Exactly on the x axis, so a straight observation matches it bitwise.
        std::vector<Vec2> p;
        for (double v : s) p.push_back({v, 0.0});
        return p;
    }
    std::vector<Vec2> p{{0.0, 0.0}};
    double theta = 0.0;
    constexpr int sub = 8;
    for (std::size_t i = 1; i < s.size(); ++i) {
        const double h = (s[i] - s[i - 1]) / sub;
        Vec2 q = p.back();
        for (int k = 0; k < sub; ++k) {
            const double a = s[i - 1] + h * k;
            const double kappa = shape.curvature_at(length - a - 0.5 * h);
            const double mid = theta + 0.5 * h * kappa;
            q += Vec2{std::cos(mid), std::sin(mid)} * h;
            theta += h * kappa;
        }
        p.push_back(q);
    }
    return p;
}

/// Section properties per element, EI taken at the element midpoint's distance
/// from the tip. Appends a warning when the profile is shorter than the model.
inline std::vector<fem::SectionProperties> element_sections(std::span<const double> s, double length,
                                                            const RigidityProfile& profile, const ModelOptions& opt,
                                                            std::vector<std::string>* warnings = nullptr) {
    if (!(opt.wire_radius > 0.0)) throw InvalidInput("model: wire radius must be positive");
    std::vector<double> ei;
    double max_ei = 0.0;
    for (std::size_t i = 1; i < s.size(); ++i) {
        const double from_tip = std::max(0.0, length - 0.5 * (s[i - 1] + s[i]));
        ei.push_back(profile.ei_at(from_tip));
        max_ei = std::max(max_ei, ei.back());
    }
    if (warnings && length > profile.s_max())
        warnings->push_back("rigidity profile ends at " + csv::fmt(profile.s_max(), 6) + " mm from the tip; model is " +
                            csv::fmt(length, 6) + " mm long, EI clamped beyond");
    const double EA = opt.EA ? *opt.EA : 1e4 * max_ei / (length * length);
    if (!(EA > 0.0)) throw InvalidInput("model: EA must be positive");
    std::vector<fem::SectionProperties> props;
    for (double e : ei) props.push_back(fem::SectionProperties::solid_circular(e, opt.wire_radius, EA, opt.kappa, opt.nu));
    return props;
}

namespace detail {

// Cubic least-squares fit of the centerline over the load-free span from the
// base towards the first contact; its slope at the base is the tangent.
inline Vec2 fit_tangent(const seg::TrackedShape& shape, double s0, double len) {
    len = std::min(len, shape.tip.s - s0);
    if (!(len > 0.0)) throw InvalidInput("model: no centerline beyond the base");
    const int n = std::max(21, static_cast<int>(std::ceil(4.0 * len)) + 1);
    Eigen::MatrixXd A(n, 4);
    Eigen::MatrixXd b(n, 2);
    for (int i = 0; i < n; ++i) {
        const double u = static_cast<double>(i) / (n - 1);
        const Vec2 p = shape.point_at(s0 + len * u);
        A.row(i) << 1.0, u, u * u, u * u * u;
        b.row(i) << p.x, p.y;
    }
    const Eigen::MatrixXd c = A.colPivHouseholderQr().solve(b);
    const Vec2 t{c(1, 0), c(1, 1)};
    if (!(t.norm() > 0.0)) throw InvalidInput("model: degenerate base tangent");
    return t.normalized();
}

}  // namespace detail

// --- model ---------------------------------------------------------------------

inline CantileverModel build_model(const seg::TrackedShape& shape, const RigidityProfile& profile,
                                   const IntrinsicShape& intrinsic = {}, const ModelOptions& opt = {}) {
    shape.validate();
    if (shape.contacts.empty()) throw InvalidInput("model: the shape has no contacts");
    if (!(opt.base_trim >= 0.0)) throw InvalidInput("model: base trim must be non-negative");
    if (opt.n_elements < 1) throw InvalidInput("model: need at least one element");

    CantileverModel m;
    m.timestamp = shape.timestamp;
    m.base_s = shape.centerline.front().s + opt.base_trim;
    m.length = shape.tip.s - m.base_s;
    if (!(m.length > 0.0)) throw InvalidInput("model: base trim leaves no wire");
    m.base_origin = shape.point_at(m.base_s);
    if (opt.base_tangent) {
        if (!(opt.base_tangent->norm() > 0.0)) throw InvalidInput("model: base tangent must be non-zero");
        m.base_tangent = opt.base_tangent->normalized();
    } else {
        const double span = std::min(opt.tangent_fit_length, 0.9 * (shape.contacts.front().s - m.base_s));
        m.base_tangent = detail::fit_tangent(shape, m.base_s, span);
    }

    std::vector<double> cuts;
    for (std::size_t i = 0; i < shape.contacts.size(); ++i) {
        const seg::ContactObservation& c = shape.contacts[i];
        if (c.s > shape.tip.s) throw InvalidInput("inconsistent shape: contact " + std::to_string(i) + " lies beyond the tip");
        if (c.s >= shape.tip.s)
            throw InvalidInput("inconsistent shape: contact " + std::to_string(i) + " is at the tip, no free length remains");
        if (!(c.s > m.base_s))
            throw InvalidInput("inconsistent shape: contact " + std::to_string(i) + " lies before the model base");
        cuts.push_back(c.s - m.base_s);
    }
    m.node_s = node_grid(m.length, cuts, opt.n_elements);
    const std::vector<Vec2> rest = rest_shape(m.node_s, m.length, intrinsic);
    const std::vector<fem::SectionProperties> props = element_sections(m.node_s, m.length, profile, opt, &m.warnings);
    m.mesh = fem::BeamMesh::from_rest_shape(rest, props);

    for (std::size_t i = 0; i < shape.contacts.size(); ++i) {
        const seg::ContactObservation& c = shape.contacts[i];
        const double s = c.s - m.base_s;
        const auto it = std::lower_bound(m.node_s.begin(), m.node_s.end(), s);
        const std::size_t node = static_cast<std::size_t>(it - m.node_s.begin());
        m.bcs.push_back({i, node, s, m.to_local(c.position()) - rest[node]});
    }
    m.contacts = shape.contacts;

    // Observed shape as the solver start: node positions at equal arc length,
    // rotations from the tangent change against the rest shape.
    auto tangent_angle = [](Vec2 a, Vec2 b) { return std::atan2(b.y - a.y, b.x - a.x); };
    const std::size_t nn = m.node_s.size();
    std::vector<Vec2> obs(nn);
    for (std::size_t k = 0; k < nn; ++k) obs[k] = m.to_local(shape.point_at(m.base_s + m.node_s[k]));
    for (const ModelBC& b : m.bcs) obs[b.node] = rest[b.node] + b.deflection;
    obs[0] = {0.0, 0.0};
    m.start.resize(nn);
    double prev = 0.0;
    for (std::size_t k = 0; k < nn; ++k) {
        double phi = 0.0;
        if (k > 0) {
            const std::size_t a = k - 1, b = std::min(k + 1, nn - 1);
            const double obs_ang = k + 1 < nn ? tangent_angle(obs[a], obs[b]) : tangent_angle(obs[a], obs[k]);
            const double rest_ang = k + 1 < nn ? tangent_angle(rest[a], rest[b]) : tangent_angle(rest[a], rest[k]);
            phi = prev + wrap_angle(obs_ang - rest_ang - prev);
            prev = phi;
        }
        m.start[k] = {obs[k].x, obs[k].y, phi};
    }
    return m;
}

// --- estimation ----------------------------------------------------------------

/// Normal and tangential magnitudes of `force` against a wall normal.
struct Decomposition {
    double fn = 0.0, ft = 0.0;
};

inline Decomposition decompose(Vec2 force, Vec2 wall_normal) {
    const double n = wall_normal.norm();
    if (!(n > 0.0)) throw InvalidInput("decompose: wall normal must be non-zero");
    const Vec2 u = wall_normal / n;
    const double along = dot(force, u);
    return {std::abs(along), std::abs(cross(u, force))};
}

inline EstimateResult estimate_forces(const CantileverModel& m, const fem::SolverOptions& opt = {}) {
    std::vector<fem::DirichletBC> bcs{fem::DirichletBC::clamp(0)};
    for (const ModelBC& b : m.bcs) bcs.push_back(fem::DirichletBC::translation(b.node, b.deflection));

    EstimateResult out;
    try {
        try {
            out.solve = fem::solve_quasistatic(m.mesh, bcs, opt, m.start);
        } catch (const NumericalError&) {
            // The observed start is not in equilibrium; ramp from rest instead.
            if (m.start.empty()) throw;
            out.solve = fem::solve_quasistatic(m.mesh, bcs, opt);
        }
    } catch (const NumericalError& e) {
        throw NumericalError("estimate at t=" + csv::fmt(m.timestamp, 6) + " s with " + std::to_string(m.bcs.size()) +
                                 " contacts: " + e.what(),
                             e.residual());
    }
    for (const ModelBC& b : m.bcs) {
        const auto it = std::find_if(out.solve.reactions.begin(), out.solve.reactions.end(),
                                     [&](const fem::Reaction& r) { return r.node == b.node; });
        const Vec2 reaction = it != out.solve.reactions.end() ? it->force : Vec2{};
        const seg::ContactObservation& c = m.contacts[b.contact];
        ForceEstimate f;
        f.contact = b.contact;
        f.s = c.s;
        f.position = c.position();
        f.force = m.direction_to_global(-reaction);
        f.magnitude = f.force.norm();
        if (c.wall_normal) {
            const Decomposition d = decompose(f.force, *c.wall_normal);
            f.fn = d.fn;
            f.ft = d.ft;
        }
        f.timestamp = m.timestamp;
        out.forces.push_back(f);
    }
    for (std::size_t k = 0; k < out.solve.deformed_nodes.size(); ++k) {
        const Vec2 p = m.to_global(out.solve.deformed_nodes[k].position());
        out.simulated.push_back({p.x, p.y, m.base_s + m.node_s[k]});
    }
    return out;
}

/// Pointwise distance at equal arc length, sampled at the simulated points
/// that fall inside the observed range.
inline ShapeError shape_error(const seg::TrackedShape& actual, std::span<const seg::CenterlinePoint> simulated) {
    actual.validate();
    ShapeError e;
    const double lo = actual.centerline.front().s, hi = actual.tip.s;
    double acc = 0.0;
    for (const seg::CenterlinePoint& p : simulated) {
        if (p.s < lo - 1e-9 || p.s > hi + 1e-9) continue;
        const double d = distance(actual.point_at(std::clamp(p.s, lo, hi)), p.position());
        e.samples.push_back(d);
        acc += d * d;
        e.maxe = std::max(e.maxe, d);
    }
    if (e.samples.empty()) throw InvalidInput("shape error: arc-length ranges do not overlap");
    e.rmse = std::sqrt(acc / static_cast<double>(e.samples.size()));
    return e;
}

// --- files ---------------------------------------------------------------------

inline constexpr const char* kEstimateHeader = "t_s,contact_idx,s_mm,x_mm,y_mm,Fx_N,Fy_N,Fmag_N,fn_N,ft_N";

inline void write_estimates(std::ostream& os, std::span<const ForceEstimate> forces, bool header = true) {
    if (header) os << kEstimateHeader << '\n';
    for (const ForceEstimate& f : forces) {
        os << csv::fmt(f.timestamp) << ',' << f.contact << ',' << csv::fmt(f.s) << ',' << csv::fmt(f.position.x) << ','
           << csv::fmt(f.position.y) << ',' << csv::fmt(f.force.x) << ',' << csv::fmt(f.force.y) << ','
           << csv::fmt(f.magnitude) << ',' << csv::fmt(f.fn ? *f.fn : NAN) << ',' << csv::fmt(f.ft ? *f.ft : NAN) << '\n';
    }
}

inline std::vector<ForceEstimate> read_estimates(std::istream& in) {
    auto [header, rows] = csv::read_table(in);
    const std::vector<std::string> want = csv::split(kEstimateHeader);
    if (header != want) throw ParseError(std::string("estimates: header must be ") + kEstimateHeader, 0);
    std::vector<ForceEstimate> out;
    for (const csv::Row& r : rows) {
        if (r.cells.size() != want.size()) throw ParseError("estimates: expected 10 columns", r.line);
        auto num = [&](std::size_t k) { return csv::parse_double(r.cells[k], r.line, want[k].c_str()); };
        ForceEstimate f;
        f.timestamp = num(0);
        const long idx = csv::parse_int(r.cells[1], r.line, "contact_idx");
        if (idx < 0) throw ParseError("estimates: negative contact index", r.line);
        f.contact = static_cast<std::size_t>(idx);
        f.s = num(2);
        f.position = {num(3), num(4)};
        f.force = {num(5), num(6)};
        f.magnitude = num(7);
        if (const double fn = num(8); !std::isnan(fn)) f.fn = fn;
        if (const double ft = num(9); !std::isnan(ft)) f.ft = ft;
        if (!out.empty() && f.timestamp < out.back().timestamp)
            throw ParseError("estimates: timestamps must not decrease", r.line);
        out.push_back(f);
    }
    return out;
}

}  // namespace icf::est
