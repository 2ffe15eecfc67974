#pragma once

// Synthetic phantom and scripted navigation: the verification oracle.
//
// A schematic vessel phantom (walls, posts, named ostia) holds a wire clamped
// at a base. Frames are scripted as sets of wire-post contacts: at arc length
// s the wire touches post p tangentially. Each frame is solved under
// displacement control; the reactions are the true contact forces. A
// force-controlled forward solve closes the loop.
//
// All geometry is in mm in image orientation (y down); pixels = mm / mm_per_px.

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "icf/beam_fem.hpp"
#include "icf/core.hpp"
#include "icf/csv.hpp"
#include "icf/estimator.hpp"
#include "icf/raster.hpp"
#include "icf/render.hpp"
#include "icf/rigidity_profile.hpp"
#include "icf/segmentation.hpp"

namespace icf::sim {

using json = nlohmann::json;

// --- geometry ------------------------------------------------------------------

struct Canvas {
    int width_px = 1920;
    int height_px = 1080;
    double mm_per_px = 0.25;
};

struct WallPolyline {
    std::string name;
    std::vector<Vec2> points;
};

struct Post {
    std::string name;
    Vec2 center;
    double radius = 0.0;  // mm
};

struct Ostium {
    std::string label;
    Vec2 point;
};

struct PhantomGeometry {
    std::string name;
    std::string description;
    Canvas canvas;
    Vec2 base_origin;
    Vec2 base_tangent{1.0, 0.0};
    std::vector<Vec2> centerline;
    std::vector<WallPolyline> walls;
    std::vector<Post> posts;
    std::vector<Ostium> ostia;

    const Post& post(const std::string& n) const {
        for (const Post& p : posts)
            if (p.name == n) return p;
        throw InvalidInput("geometry '" + name + "' has no post named '" + n + "'");
    }

    void validate(double wire_diameter) const;
};

namespace detail {

inline bool segments_cross(Vec2 a, Vec2 b, Vec2 c, Vec2 d) {
    const double d1 = cross(b - a, c - a), d2 = cross(b - a, d - a);
    const double d3 = cross(d - c, a - c), d4 = cross(d - c, b - c);
    return ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0));
}

inline double polyline_distance(std::span<const Vec2> poly, Vec2 p) {
    double best = std::numeric_limits<double>::infinity();
    if (poly.size() == 1) return distance(poly[0], p);
    for (std::size_t i = 0; i + 1 < poly.size(); ++i) best = std::min(best, point_segment_distance(p, poly[i], poly[i + 1]));
    return best;
}

inline Vec2 vec_from_json(const json& j, const std::string& what) {
    if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number())
        throw InvalidInput(what + ": expected [x, y]");
    return {j[0].get<double>(), j[1].get<double>()};
}

inline std::vector<Vec2> points_from_json(const json& j, const std::string& what) {
    if (!j.is_array()) throw InvalidInput(what + ": expected a list of [x, y]");
    std::vector<Vec2> out;
    for (const json& p : j) out.push_back(vec_from_json(p, what));
    return out;
}

inline json to_json(Vec2 v) { return json::array({v.x, v.y}); }

inline json to_json(std::span<const Vec2> pts) {
    json a = json::array();
    for (Vec2 p : pts) a.push_back(to_json(p));
    return a;
}

template <class T>
T get_or(const json& j, const char* key, T fallback) {
    return j.contains(key) ? j.at(key).get<T>() : fallback;
}

}  // namespace detail

inline void PhantomGeometry::validate(double wire_diameter) const {
    if (canvas.width_px <= 0 || canvas.height_px <= 0) throw InvalidInput("geometry: canvas size must be positive");
    if (!(canvas.mm_per_px > 0.0)) throw InvalidInput("geometry: mm_per_px must be positive");
    if (!(base_tangent.norm() > 0.0)) throw InvalidInput("geometry: base tangent must be non-zero");
    for (const WallPolyline& w : walls) {
        if (w.points.size() < 2) throw InvalidInput("geometry: wall '" + w.name + "' needs two points");
        for (std::size_t i = 0; i + 1 < w.points.size(); ++i)
            for (std::size_t k = i + 2; k + 1 < w.points.size(); ++k)
                if (detail::segments_cross(w.points[i], w.points[i + 1], w.points[k], w.points[k + 1]))
                    throw InvalidInput("geometry: wall '" + w.name + "' intersects itself at segments " +
                                       std::to_string(i) + " and " + std::to_string(k));
    }
    for (const Post& p : posts)
        if (!(p.radius > 0.0)) throw InvalidInput("geometry: post '" + p.name + "' needs a positive radius");
    for (std::size_t i = 0; i < centerline.size(); ++i)
        for (const WallPolyline& w : walls)
            if (!(2.0 * detail::polyline_distance(w.points, centerline[i]) > wire_diameter))
                throw InvalidInput("geometry: lumen narrower than the wire at centerline point " + std::to_string(i));
}

inline PhantomGeometry geometry_from_json(const json& j) {
    try {
        PhantomGeometry g;
        g.name = detail::get_or<std::string>(j, "name", "");
        g.description = detail::get_or<std::string>(j, "description", "");
        if (j.contains("canvas")) {
            const json& c = j.at("canvas");
            g.canvas.width_px = detail::get_or<int>(c, "width_px", g.canvas.width_px);
            g.canvas.height_px = detail::get_or<int>(c, "height_px", g.canvas.height_px);
            g.canvas.mm_per_px = detail::get_or<double>(c, "mm_per_px", g.canvas.mm_per_px);
        }
        const json& base = j.at("base");
        g.base_origin = detail::vec_from_json(base.at("origin"), "base.origin");
        g.base_tangent = detail::vec_from_json(base.at("tangent"), "base.tangent").normalized();
        if (j.contains("centerline")) g.centerline = detail::points_from_json(j.at("centerline"), "centerline");
        for (const json& w : j.value("walls", json::array()))
            g.walls.push_back({w.at("name").get<std::string>(), detail::points_from_json(w.at("points"), "wall")});
        for (const json& p : j.value("posts", json::array()))
            g.posts.push_back({p.at("name").get<std::string>(), detail::vec_from_json(p.at("center"), "post.center"),
                               p.at("radius").get<double>()});
        for (const json& o : j.value("ostia", json::array()))
            g.ostia.push_back({o.at("label").get<std::string>(), detail::vec_from_json(o.at("point"), "ostium.point")});
        return g;
    } catch (const json::exception& e) {
        throw InvalidInput(std::string("geometry: ") + e.what());
    }
}

inline json to_json(const PhantomGeometry& g) {
    json j;
    j["name"] = g.name;
    j["description"] = g.description;
    j["canvas"] = {{"width_px", g.canvas.width_px}, {"height_px", g.canvas.height_px}, {"mm_per_px", g.canvas.mm_per_px}};
    j["base"] = {{"origin", detail::to_json(g.base_origin)}, {"tangent", detail::to_json(g.base_tangent)}};
    j["centerline"] = detail::to_json(std::span<const Vec2>(g.centerline));
    j["walls"] = json::array();
    for (const WallPolyline& w : g.walls)
        j["walls"].push_back({{"name", w.name}, {"points", detail::to_json(std::span<const Vec2>(w.points))}});
    j["posts"] = json::array();
    for (const Post& p : g.posts) j["posts"].push_back({{"name", p.name}, {"center", detail::to_json(p.center)}, {"radius", p.radius}});
    j["ostia"] = json::array();
    for (const Ostium& o : g.ostia) j["ostia"].push_back({{"label", o.label}, {"point", detail::to_json(o.point)}});
    return j;
}

inline json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("cannot open '" + path + "'");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError(path + ": " + e.what(), 0);
    }
}

inline PhantomGeometry load_geometry(const std::string& path) { return geometry_from_json(read_json(path)); }

// --- wire ----------------------------------------------------------------------

/// A wire clamped at `origin` along `tangent`, global frame.
struct WireSetup {
    Vec2 origin;
    Vec2 tangent{1.0, 0.0};
    RigidityProfile profile;
    est::IntrinsicShape intrinsic;
    est::ModelOptions options;

    Vec2 to_local(Vec2 p) const { return unrotate_by(p - origin, tangent.normalized()); }
    Vec2 to_global(Vec2 p) const { return origin + rotate_by(p, tangent.normalized()); }
};

/// Contact force exerted by the wire on the wall at arc length s (global, N).
struct ContactForce {
    double s = 0.0;
    Vec2 force;
};

struct WireState {
    std::vector<double> node_s;
    fem::BeamMesh mesh;                  // local frame
    fem::SolveResult solve;
    std::vector<std::size_t> contact_nodes;

    /// Deformed centerline, global, s = material arc length.
    std::vector<seg::CenterlinePoint> shape(const WireSetup& w) const {
        std::vector<seg::CenterlinePoint> out;
        for (std::size_t k = 0; k < node_s.size(); ++k) {
            const Vec2 p = w.to_global(solve.deformed_nodes[k].position());
            out.push_back({p.x, p.y, node_s[k]});
        }
        return out;
    }
    Vec2 position(const WireSetup& w, std::size_t node) const { return w.to_global(solve.deformed_nodes[node].position()); }
    Vec2 rest_position(const WireSetup& w, std::size_t node) const { return w.to_global(mesh.rest_positions[node]); }
    /// Unit tangent at a node from its neighbours, global.
    Vec2 tangent(const WireSetup& w, std::size_t node) const {
        const std::size_t a = node > 0 ? node - 1 : node, b = std::min(node + 1, node_s.size() - 1);
        return rotate_by((solve.deformed_nodes[b].position() - solve.deformed_nodes[a].position()).normalized(),
                         w.tangent.normalized());
    }
};

namespace detail {

inline WireState make_wire_on_grid(const WireSetup& w, std::vector<double> node_s, std::span<const double> contact_s) {
    WireState st;
    st.node_s = std::move(node_s);
    const double length = st.node_s.back();
    const std::vector<Vec2> rest = est::rest_shape(st.node_s, length, w.intrinsic);
    st.mesh = fem::BeamMesh::from_rest_shape(rest, est::element_sections(st.node_s, length, w.profile, w.options));
    for (double s : contact_s)
        st.contact_nodes.push_back(static_cast<std::size_t>(std::lower_bound(st.node_s.begin(), st.node_s.end(), s) - st.node_s.begin()));
    return st;
}

inline WireState make_wire(const WireSetup& w, double length, std::span<const double> contact_s) {
    return make_wire_on_grid(w, est::node_grid(length, contact_s, w.options.n_elements), contact_s);
}

/// Elements per interval between consecutive breakpoints of a grid.
inline std::vector<std::size_t> interval_counts(std::span<const double> grid, std::span<const double> breakpoints) {
    std::vector<std::size_t> n;
    std::size_t prev = 0;
    for (double b : breakpoints) {
        const auto k = static_cast<std::size_t>(std::lower_bound(grid.begin(), grid.end(), b) - grid.begin());
        n.push_back(k - prev);
        prev = k;
    }
    n.push_back(grid.size() - 1 - prev);
    return n;
}

/// Uniform subdivision of each interval with fixed element counts, so nodes
/// move continuously with the breakpoints.
inline std::vector<double> grid_with_counts(double length, std::span<const double> breakpoints, std::span<const std::size_t> n) {
    std::vector<double> cuts{0.0};
    cuts.insert(cuts.end(), breakpoints.begin(), breakpoints.end());
    cuts.push_back(length);
    std::vector<double> s{0.0};
    for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
        if (!(cuts[k + 1] > cuts[k])) throw InvalidInput("contacts out of order along the wire");
        for (std::size_t j = 1; j <= n[k]; ++j)
            s.push_back(j == n[k] ? cuts[k + 1] : cuts[k] + (cuts[k + 1] - cuts[k]) * static_cast<double>(j) / static_cast<double>(n[k]));
    }
    return s;
}

}  // namespace detail

/// Force-controlled solve: the wall pushes on the wire with -force at each s.
inline WireState forward_simulate(const WireSetup& w, double length, std::span<const ContactForce> contacts,
                                  const fem::SolverOptions& opt = {}) {
    std::vector<double> s;
    for (const ContactForce& c : contacts) {
        if (!std::isfinite(c.force.x) || !std::isfinite(c.force.y)) throw InvalidInput("forward: force must be finite");
        s.push_back(c.s);
    }
    WireState st = detail::make_wire(w, length, s);
    std::vector<fem::NodalLoad> loads;
    for (std::size_t i = 0; i < contacts.size(); ++i)
        loads.push_back({st.contact_nodes[i], unrotate_by(-contacts[i].force, w.tangent.normalized()), 0.0});
    const std::vector<fem::DirichletBC> bcs{fem::DirichletBC::clamp(0)};
    st.solve = fem::solve_static(st.mesh, bcs, loads, opt);
    return st;
}

/// Observed shape of a solved wire with material arc lengths: what a perfect
/// tracker would report. Contacts carry the given wall normals when known.
inline seg::TrackedShape observed_shape(const WireSetup& w, const WireState& st, double timestamp = 0.0,
                                        std::span<const Vec2> wall_normals = {}) {
    seg::TrackedShape sh;
    sh.centerline = st.shape(w);
    sh.tip = sh.centerline.back();
    sh.calibration = 1.0;
    sh.timestamp = timestamp;
    for (std::size_t i = 0; i < st.contact_nodes.size(); ++i) {
        const seg::CenterlinePoint& p = sh.centerline[st.contact_nodes[i]];
        seg::ContactObservation c{p.x, p.y, p.s, std::nullopt};
        if (i < wall_normals.size()) c.wall_normal = wall_normals[i];
        sh.contacts.push_back(c);
    }
    return sh;
}

// --- scenario ------------------------------------------------------------------

struct RenderStyle {
    double wire_width_px = 0.0;     // 0: wire diameter at the canvas scale
    double wall_thickness_mm = 1.5;
    render::Levels levels;
    double noise_sigma = 0.0;
    std::uint64_t seed = 1;
};

struct ScenarioContact {
    std::string post;
    double s = 0.0;  // mm from the base
};

struct ScenarioFrame {
    double t = 0.0;       // s
    double length = 0.0;  // inserted length, base to tip (mm)
    std::vector<ScenarioContact> contacts;
};

struct Scenario {
    std::string name;
    std::string description;
    std::string geometry_path;  // relative paths resolve against the scenario file
    std::string profile_path;
    double wire_radius = 0.4445;
    std::size_t n_elements = 64;
    est::IntrinsicShape intrinsic;
    double clearance = 1.0;     // mm between the wire and any non-contact wall
    RenderStyle render;
    std::vector<ScenarioFrame> frames;

    void validate() const {
        if (frames.empty()) throw InvalidInput("scenario: no frames");
        if (!(wire_radius > 0.0)) throw InvalidInput("scenario: wire radius must be positive");
        for (std::size_t k = 0; k < frames.size(); ++k) {
            const ScenarioFrame& f = frames[k];
            const std::string where = "scenario frame " + std::to_string(k);
            if (k > 0 && !(f.t > frames[k - 1].t)) throw InvalidInput(where + ": timestamps must increase");
            if (!(f.length > 0.0)) throw InvalidInput(where + ": length must be positive");
            if (f.contacts.empty()) throw InvalidInput(where + ": needs at least one contact");
            for (std::size_t i = 0; i < f.contacts.size(); ++i) {
                if (!(f.contacts[i].s > 0.0 && f.contacts[i].s < f.length))
                    throw InvalidInput(where + ": contact " + std::to_string(i) + " lies outside the wire");
                if (i > 0 && !(f.contacts[i].s > f.contacts[i - 1].s))
                    throw InvalidInput(where + ": contacts must be ordered by arc length");
            }
        }
    }
};

inline Scenario scenario_from_json(const json& j) {
    try {
        Scenario sc;
        sc.name = detail::get_or<std::string>(j, "name", "");
        sc.description = detail::get_or<std::string>(j, "description", "");
        sc.geometry_path = detail::get_or<std::string>(j, "geometry", "");
        sc.profile_path = detail::get_or<std::string>(j, "profile", "");
        if (j.contains("wire")) {
            const json& w = j.at("wire");
            sc.wire_radius = detail::get_or<double>(w, "radius_mm", sc.wire_radius);
            sc.n_elements = detail::get_or<std::size_t>(w, "elements", sc.n_elements);
            if (w.contains("intrinsic")) {
                sc.intrinsic.distance_from_tip = w.at("intrinsic").at("distance_from_tip").get<std::vector<double>>();
                sc.intrinsic.curvature = w.at("intrinsic").at("curvature").get<std::vector<double>>();
            }
        }
        sc.clearance = detail::get_or<double>(j, "clearance_mm", sc.clearance);
        if (j.contains("render")) {
            const json& r = j.at("render");
            sc.render.wire_width_px = detail::get_or<double>(r, "wire_width_px", 0.0);
            sc.render.wall_thickness_mm = detail::get_or<double>(r, "wall_thickness_mm", sc.render.wall_thickness_mm);
            sc.render.noise_sigma = detail::get_or<double>(r, "noise_sigma", 0.0);
            sc.render.seed = detail::get_or<std::uint64_t>(r, "seed", 1);
        }
        for (const json& f : j.at("frames")) {
            ScenarioFrame fr;
            fr.t = f.at("t").get<double>();
            fr.length = f.at("length").get<double>();
            for (const json& c : f.at("contacts")) fr.contacts.push_back({c.at("post").get<std::string>(), c.at("s").get<double>()});
            sc.frames.push_back(std::move(fr));
        }
        sc.intrinsic.validate();
        sc.validate();
        return sc;
    } catch (const json::exception& e) {
        throw InvalidInput(std::string("scenario: ") + e.what());
    }
}

struct TrueContact {
    std::string post;
    double s = 0.0;
    std::size_t node = 0;
    Vec2 position;      // wire centerline at the contact, global
    Vec2 force;         // exerted by the wire on the wall, global (N)
    Vec2 wall_normal;   // unit, from the post toward the wire
    Vec2 displacement;  // deformed minus rest position, global (mm)
};

struct GroundTruthRecord {
    std::size_t frame = 0;
    double t = 0.0;
    double length = 0.0;
    std::vector<TrueContact> contacts;
    Vec2 rf;  // resultant: vector sum of the contact forces
    std::vector<seg::CenterlinePoint> shape;  // global, material arc length
    WireState state;

    double max_cf() const {
        double m = 0.0;
        for (const TrueContact& c : contacts) m = std::max(m, c.force.norm());
        return m;
    }
    seg::TrackedShape observed(const WireSetup& w) const {
        std::vector<Vec2> normals;
        for (const TrueContact& c : contacts) normals.push_back(c.wall_normal);
        return observed_shape(w, state, t, normals);
    }
};

/// Solves one frame. Each scripted contact is frictionless: the wire rests
/// tangentially on the post and the reaction is normal to it. The unknowns per
/// contact are the angle of the contact point on the post and its arc length
/// (seeded by the script); each trial drives that node onto the post surface
/// offset by the wire radius. Newton iteration with a difference Jacobian.
inline GroundTruthRecord solve_frame(const PhantomGeometry& g, const WireSetup& w, const ScenarioFrame& f,
                                     const fem::SolverOptions& opt = {}, double clearance = 1.0,
                                     const std::vector<seg::CenterlinePoint>* previous = nullptr) {
    const double r_wire = w.options.wire_radius;
    const std::size_t m = f.contacts.size();
    std::vector<double> s0;
    std::vector<const Post*> posts;
    for (const ScenarioContact& c : f.contacts) {
        s0.push_back(c.s);
        posts.push_back(&g.post(c.post));
    }
    const std::vector<std::size_t> counts =
        detail::interval_counts(est::node_grid(f.length, s0, w.options.n_elements), s0);

    // Start: the previous frame's shape at equal arc length, extended straight;
    // the rest shape otherwise.
    auto start_for = [&](const WireState& st) {
        std::vector<fem::NodeState> start;
        if (!previous || previous->size() < 2) return start;
        seg::TrackedShape prev;
        prev.centerline = *previous;
        prev.tip = previous->back();
        const double end = prev.tip.s;
        const Vec2 t_end = (previous->back().position() - (*previous)[previous->size() - 2].position()).normalized();
        auto at = [&](double q) { return q <= end ? prev.point_at(std::max(q, 0.0)) : prev.tip.position() + t_end * (q - end); };
        double phi_prev = 0.0;
        for (std::size_t k = 0; k < st.node_s.size(); ++k) {
            const double sk = st.node_s[k];
            double phi = 0.0;
            if (k > 0) {
                const double h = 0.5 * (st.node_s[k] - st.node_s[k - 1]);
                const Vec2 tg = unrotate_by((at(sk + h) - at(sk - h)).normalized(), w.tangent.normalized());
                const Vec2 tr = (st.mesh.rest_positions[k] - st.mesh.rest_positions[k - 1]).normalized();
                phi = phi_prev + wrap_angle(std::atan2(cross(tr, tg), dot(tr, tg)) - phi_prev);
                phi_prev = phi;
            }
            const Vec2 pl = w.to_local(at(sk));
            start.push_back({pl.x, pl.y, phi});
        }
        start[0] = {0.0, 0.0, 0.0};
        return start;
    };

    // x = (theta_1, s_1, ..., theta_m, s_m)
    std::vector<double> x(2 * m);
    WireState seed = detail::make_wire_on_grid(w, detail::grid_with_counts(f.length, s0, counts), s0);
    const std::vector<fem::NodeState> start = start_for(seed);
    for (std::size_t i = 0; i < m; ++i) {
        const std::size_t node = seed.contact_nodes[i];
        const Vec2 p = start.empty() ? w.to_global(seed.mesh.rest_positions[node]) : w.to_global(start[node].position());
        const Vec2 u = p - posts[i]->center;
        if (!(u.norm() > 0.0)) throw InvalidInput("wire passes through the centre of post '" + posts[i]->name + "'");
        x[2 * i] = std::atan2(u.y, u.x);
        x[2 * i + 1] = s0[i];
    }

    // Residuals: tangency (dot of wire tangent and post normal) and the
    // tangential reaction in units of kForceScale.
    constexpr double kForceScale = 0.01;
    struct Trial {
        WireState st;
        Eigen::VectorXd r;
    };
    auto evaluate = [&](const std::vector<double>& xv, const std::vector<fem::NodeState>* warm, int increments) {
        std::vector<double> s(m);
        for (std::size_t i = 0; i < m; ++i) s[i] = xv[2 * i + 1];
        if (!(s.front() > 0.0 && s.back() < f.length)) throw NumericalError("contact slid off the wire");
        Trial tr{detail::make_wire_on_grid(w, detail::grid_with_counts(f.length, s, counts), s), Eigen::VectorXd(2 * m)};
        std::vector<fem::DirichletBC> bcs{fem::DirichletBC::clamp(0)};
        for (std::size_t i = 0; i < m; ++i) {
            const Vec2 u{std::cos(xv[2 * i]), std::sin(xv[2 * i])};
            const Vec2 target = posts[i]->center + u * (posts[i]->radius + r_wire);
            const std::size_t node = tr.st.contact_nodes[i];
            bcs.push_back(fem::DirichletBC::translation(node, w.to_local(target) - tr.st.mesh.rest_positions[node]));
        }
        fem::SolverOptions o = opt;
        o.increments = increments;
        o.tol = std::min(opt.tol, 1e-7);
        tr.st.solve = fem::solve_quasistatic(tr.st.mesh, bcs, o,
                                             warm ? std::span<const fem::NodeState>(*warm) : std::span<const fem::NodeState>());
        for (std::size_t i = 0; i < m; ++i) {
            const Vec2 u{std::cos(xv[2 * i]), std::sin(xv[2 * i])};
            const std::size_t node = tr.st.contact_nodes[i];
            const auto rit = std::find_if(tr.st.solve.reactions.begin(), tr.st.solve.reactions.end(),
                                          [&](const fem::Reaction& r) { return r.node == node; });
            const Vec2 R = rotate_by(rit->force, w.tangent.normalized());
            tr.r[static_cast<Eigen::Index>(2 * i)] = dot(tr.st.tangent(w, node), u);
            tr.r[static_cast<Eigen::Index>(2 * i + 1)] = cross(u, R) / kForceScale;
        }
        return tr;
    };

    const std::vector<fem::NodeState>* warm0 = start.empty() ? nullptr : &start;
    Trial cur = evaluate(x, warm0, opt.increments);
    for (int it = 0;; ++it) {
        const double rn = cur.r.lpNorm<Eigen::Infinity>();
        if (rn < 1e-5) break;
        if (it >= 40) throw NumericalError("contact iteration did not settle (residual " + csv::fmt(rn, 3) + ")", rn);
        const std::vector<fem::NodeState> base = cur.st.solve.deformed_nodes;
        Eigen::MatrixXd J(2 * m, 2 * m);
        for (std::size_t j = 0; j < 2 * m; ++j) {
            std::vector<double> xp = x;
            const double h = j % 2 == 0 ? 1e-6 : 1e-5;
            xp[j] += h;
            J.col(static_cast<Eigen::Index>(j)) = (evaluate(xp, &base, 1).r - cur.r) / h;
        }
        Eigen::VectorXd dx = J.colPivHouseholderQr().solve(-cur.r);
        double scale = 1.0;
        for (std::size_t j = 0; j < 2 * m; ++j) {
            const double cap = j % 2 == 0 ? 0.2 : 5.0;
            scale = std::min(scale, cap / std::max(std::abs(dx[static_cast<Eigen::Index>(j)]), 1e-300));
        }
        bool moved = false;
        for (int ls = 0; ls < 8 && !moved; ++ls, scale *= 0.5) {
            std::vector<double> xn = x;
            for (std::size_t j = 0; j < 2 * m; ++j) xn[j] += scale * dx[static_cast<Eigen::Index>(j)];
            try {
                Trial next = evaluate(xn, &base, 1);
                if (next.r.lpNorm<Eigen::Infinity>() < rn) {
                    x = xn;
                    cur = std::move(next);
                    moved = true;
                }
            } catch (const NumericalError&) {
            }
        }
        if (!moved) throw NumericalError("contact iteration stalled (residual " + csv::fmt(rn, 3) + ")", rn);
    }
    WireState st = std::move(cur.st);

    // Feasibility: no penetration, no near miss that a tracker would report as
    // a contact, wire inside the canvas.
    GroundTruthRecord rec;
    rec.t = f.t;
    rec.length = f.length;
    const std::vector<seg::CenterlinePoint> shape = st.shape(w);
    std::vector<Vec2> pts;
    for (const seg::CenterlinePoint& p : shape) pts.push_back(p.position());
    const double W = g.canvas.width_px * g.canvas.mm_per_px, H = g.canvas.height_px * g.canvas.mm_per_px;
    for (Vec2 p : pts)
        if (p.x < r_wire || p.y < r_wire || p.x > W - r_wire || p.y > H - r_wire)
            throw InvalidInput("wire leaves the canvas");
    for (const Post& p : g.posts) {
        const bool contacted = std::any_of(posts.begin(), posts.end(), [&](const Post* q) { return q->name == p.name; });
        const double gap = detail::polyline_distance(pts, p.center) - p.radius - r_wire;
        if (contacted && gap < -0.05 * r_wire) throw InvalidInput("wire penetrates post '" + p.name + "'");
        if (!contacted && gap < clearance) throw InvalidInput("wire passes within the clearance of post '" + p.name + "'");
    }
    for (const WallPolyline& wl : g.walls)
        for (Vec2 p : pts)
            if (detail::polyline_distance(wl.points, p) - r_wire < clearance)
                throw InvalidInput("wire passes within the clearance of wall '" + wl.name + "'");

    for (std::size_t i = 0; i < m; ++i) {
        const std::size_t node = st.contact_nodes[i];
        const auto rit = std::find_if(st.solve.reactions.begin(), st.solve.reactions.end(),
                                      [&](const fem::Reaction& r) { return r.node == node; });
        TrueContact c;
        c.post = f.contacts[i].post;
        c.s = st.node_s[node];
        c.node = node;
        c.position = st.position(w, node);
        c.force = rotate_by(-rit->force, w.tangent.normalized());
        c.wall_normal = Vec2{std::cos(x[2 * i]), std::sin(x[2 * i])};
        c.displacement = c.position - st.rest_position(w, node);
        if (dot(c.force, c.wall_normal) > 0.0) throw InvalidInput("post '" + c.post + "' would have to pull the wire");
        rec.rf += c.force;
        rec.contacts.push_back(c);
    }
    rec.shape = shape;
    rec.state = std::move(st);
    return rec;
}

inline WireSetup wire_for(const PhantomGeometry& g, const Scenario& sc, const RigidityProfile& profile) {
    est::ModelOptions mo;
    mo.n_elements = sc.n_elements;
    mo.wire_radius = sc.wire_radius;
    return {g.base_origin, g.base_tangent.normalized(), profile, sc.intrinsic, mo};
}

/// Solves every frame in order, each warm-started from the previous one.
/// Errors name the frame.
inline std::vector<GroundTruthRecord> run_scenario(const PhantomGeometry& g, const Scenario& sc,
                                                   const RigidityProfile& profile, const fem::SolverOptions& opt = {}) {
    sc.validate();
    g.validate(2.0 * sc.wire_radius);
    const WireSetup w = wire_for(g, sc, profile);
    std::vector<GroundTruthRecord> out;
    for (std::size_t k = 0; k < sc.frames.size(); ++k) {
        try {
            GroundTruthRecord r = solve_frame(g, w, sc.frames[k], opt, sc.clearance, out.empty() ? nullptr : &out.back().shape);
            r.frame = k;
            out.push_back(std::move(r));
        } catch (const NumericalError& e) {
            throw NumericalError("frame " + std::to_string(k) + " (t=" + csv::fmt(sc.frames[k].t, 6) + " s): " + e.what(), e.residual());
        } catch (const InvalidInput& e) {
            throw InvalidInput("frame " + std::to_string(k) + " (t=" + csv::fmt(sc.frames[k].t, 6) + " s): " + e.what());
        }
    }
    return out;
}

/// Largest node distance between a frame and the force-controlled solve of
/// the same mesh under its true contact forces (mm).
inline double closure_error(const WireSetup& w, const GroundTruthRecord& r, const fem::SolverOptions& opt = {}) {
    std::vector<fem::NodalLoad> loads;
    for (const TrueContact& c : r.contacts) loads.push_back({c.node, unrotate_by(-c.force, w.tangent.normalized()), 0.0});
    fem::SolverOptions o = opt;
    o.increments = std::max(o.increments, 20);
    const std::vector<fem::DirichletBC> bcs{fem::DirichletBC::clamp(0)};
    const fem::SolveResult fwd = fem::solve_static(r.state.mesh, bcs, loads, o);
    double worst = 0.0;
    for (std::size_t k = 0; k < fwd.deformed_nodes.size(); ++k)
        worst = std::max(worst, distance(fwd.deformed_nodes[k].position(), r.state.solve.deformed_nodes[k].position()));
    return worst;
}

// --- rendering -----------------------------------------------------------------

/// Frame of the phantom; the wire is drawn when `wire` is non-empty.
inline RasterFrame render_frame(const PhantomGeometry& g, std::span<const seg::CenterlinePoint> wire, double wire_radius,
                                const RenderStyle& style, double timestamp = 0.0) {
    const double k = 1.0 / g.canvas.mm_per_px;
    render::Coverage walls(g.canvas.width_px, g.canvas.height_px), tool(g.canvas.width_px, g.canvas.height_px);
    for (const WallPolyline& wl : g.walls) {
        std::vector<Vec2> px;
        for (Vec2 p : wl.points) px.push_back(p * k);
        render::stroke(walls, px, 0.5 * style.wall_thickness_mm * k, false);
    }
    for (const Post& p : g.posts) render::disc(walls, p.center * k, p.radius * k);
    if (!wire.empty()) {
        std::vector<Vec2> px;
        for (const seg::CenterlinePoint& p : wire) {
            const Vec2 q = p.position() * k;
            if (q.x < 0.0 || q.y < 0.0 || q.x > g.canvas.width_px || q.y > g.canvas.height_px)
                throw InvalidInput("render: wire outside the canvas");
            px.push_back(q);
        }
        const double hw = style.wire_width_px > 0.0 ? 0.5 * style.wire_width_px : wire_radius * k;
        render::stroke(tool, px, hw, true);
    }
    return render::compose(walls, tool, style.levels, style.noise_sigma, style.seed, timestamp);
}

/// Wall mask from a noise-free, wire-free render of the phantom.
inline BinaryMask wall_mask(const PhantomGeometry& g, double wire_radius, RenderStyle style = {}) {
    style.noise_sigma = 0.0;
    return seg::vessel_mask(render_frame(g, {}, wire_radius, style));
}

/// Tracking parameters seeded at the phantom's base point.
inline seg::PipelineParams tracking_params(const PhantomGeometry& g, std::optional<double> mm_per_px = {}) {
    seg::PipelineParams pp;
    pp.mm_per_px = mm_per_px.value_or(g.canvas.mm_per_px);
    if (!(pp.mm_per_px > 0.0)) throw InvalidInput("calibration must be positive");
    const Vec2 b = g.base_origin / g.canvas.mm_per_px;
    pp.sweep.seed_region = {static_cast<int>(b.x) - 2, static_cast<int>(b.y) - 12, 24, 24};
    pp.sweep.forward = g.base_tangent.normalized();
    return pp;
}

// --- ground truth files --------------------------------------------------------

inline constexpr const char* kGroundTruthHeader =
    "t_s,frame,contact_idx,post,s_mm,x_mm,y_mm,CFx_N,CFy_N,CF_N,nx,ny,RFx_N,RFy_N,RF_N";

inline void write_ground_truth(std::ostream& os, std::span<const GroundTruthRecord> records) {
    os << kGroundTruthHeader << '\n';
    for (const GroundTruthRecord& r : records)
        for (std::size_t i = 0; i < r.contacts.size(); ++i) {
            const TrueContact& c = r.contacts[i];
            os << csv::fmt(r.t) << ',' << r.frame << ',' << i << ',' << c.post << ',' << csv::fmt(c.s) << ','
               << csv::fmt(c.position.x) << ',' << csv::fmt(c.position.y) << ',' << csv::fmt(c.force.x) << ','
               << csv::fmt(c.force.y) << ',' << csv::fmt(c.force.norm()) << ',' << csv::fmt(c.wall_normal.x) << ','
               << csv::fmt(c.wall_normal.y) << ',' << csv::fmt(r.rf.x) << ',' << csv::fmt(r.rf.y) << ','
               << csv::fmt(r.rf.norm()) << '\n';
        }
}

/// Loads a scenario and the files it names, resolving relative paths against
/// the scenario's directory.
struct LoadedScenario {
    Scenario scenario;
    PhantomGeometry geometry;
    RigidityProfile profile;
};

inline LoadedScenario load_scenario(const std::string& path, const std::string& geometry_override = "",
                                    const std::string& profile_override = "") {
    Scenario sc = scenario_from_json(read_json(path));
    const std::filesystem::path dir = std::filesystem::path(path).parent_path();
    auto resolve = [&](const std::string& p) {
        const std::filesystem::path q(p);
        return (q.is_absolute() ? q : dir / q).string();
    };
    const std::string gpath = !geometry_override.empty() ? geometry_override : resolve(sc.geometry_path);
    const std::string ppath = !profile_override.empty() ? profile_override : resolve(sc.profile_path);
    if (sc.geometry_path.empty() && geometry_override.empty()) throw InvalidInput("scenario names no geometry");
    if (sc.profile_path.empty() && profile_override.empty()) throw InvalidInput("scenario names no rigidity profile");
    return {std::move(sc), load_geometry(gpath), load_profile(ppath)};
}

}  // namespace icf::sim
