#pragma once

// Navigation metrics, contact force contour maps and stress plots.
//
// The per-frame scalar is the largest contact force magnitude in the frame
// (zero when the frame has no contacts). Metrics integrate it over time with
// the trapezoid rule. Contour maps carry, per wall vertex, the running maximum
// of every observation within the accumulation radius.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "icf/beam_fem.hpp"
#include "icf/core.hpp"
#include "icf/csv.hpp"
#include "icf/estimator.hpp"
#include "icf/phantom_sim.hpp"

namespace icf::report {

// --- metrics -------------------------------------------------------------------

struct FrameSample {
    double t = 0.0;       // s
    double max_cf = 0.0;  // N
    std::size_t contacts = 0;
};

/// One navigation run.
struct RunMetrics {
    std::size_t frames = 0;
    double duration = 0.0;  // s
    double peak = 0.0;      // N, max over frames
    double mean = 0.0;      // N, time average of the per-frame max
    double integral = 0.0;  // N s
    std::optional<double> shape_rmse, shape_maxe;  // mm
};

/// Averages over repeated runs.
struct NavigationMetrics {
    std::size_t repeats = 0;
    double avg_max_cf = 0.0;   // N
    double std_max_cf = 0.0;   // N, sample STD of the run peaks (0 for one run)
    double avg_mean_cf = 0.0;  // N
    double integral = 0.0;     // N s, averaged
    std::optional<double> shape_rmse, shape_maxe;  // mm
};

/// Single-consumer accumulator fed frame by frame in timestamp order.
class MetricsAccumulator {
public:
    void add_frame(double t, std::span<const est::ForceEstimate> forces) {
        double m = 0.0;
        for (const est::ForceEstimate& f : forces) {
            if (!std::isfinite(f.magnitude) || f.magnitude < 0.0)
                throw InvalidInput("metrics: contact force magnitude must be finite and non-negative");
            m = std::max(m, f.magnitude);
        }
        add_sample(t, m, forces.size());
    }

    void add_sample(double t, double max_cf, std::size_t contacts = 1) {
        if (!std::isfinite(t)) throw InvalidInput("metrics: timestamp must be finite");
        if (!samples_.empty() && !(t > samples_.back().t))
            throw InvalidInput("metrics: timestamps must increase (" + csv::fmt(samples_.back().t) + " then " + csv::fmt(t) + ")");
        if (!std::isfinite(max_cf) || max_cf < 0.0) throw InvalidInput("metrics: force must be finite and non-negative");
        if (!samples_.empty()) {
            const FrameSample& p = samples_.back();
            integral_ += 0.5 * (p.max_cf + max_cf) * (t - p.t);
        }
        samples_.push_back({t, max_cf, contacts});
    }

    const std::vector<FrameSample>& samples() const { return samples_; }

    RunMetrics finish() const {
        if (samples_.empty()) throw InvalidInput("metrics: empty force stream");
        RunMetrics r;
        r.frames = samples_.size();
        r.duration = samples_.back().t - samples_.front().t;
        for (const FrameSample& s : samples_) r.peak = std::max(r.peak, s.max_cf);
        r.integral = integral_;
        r.mean = r.duration > 0.0 ? integral_ / r.duration : samples_.front().max_cf;
        return r;
    }

private:
    std::vector<FrameSample> samples_;
    double integral_ = 0.0;
};

/// Groups a force stream by frame. Frames without estimates count as zero
/// force; an estimate whose timestamp matches no frame is an error.
inline std::vector<FrameSample> frame_samples(std::span<const est::ForceEstimate> stream, std::span<const double> timestamps) {
    MetricsAccumulator acc;
    std::vector<est::ForceEstimate> frame;
    std::size_t next = 0;
    for (double t : timestamps) {
        frame.clear();
        while (next < stream.size() && stream[next].timestamp == t) frame.push_back(stream[next++]);
        if (next < stream.size() && stream[next].timestamp < t)
            throw InvalidInput("metrics: estimate at t=" + csv::fmt(stream[next].timestamp) + " s matches no frame");
        acc.add_frame(t, frame);
    }
    if (next < stream.size())
        throw InvalidInput("metrics: estimate at t=" + csv::fmt(stream[next].timestamp) + " s matches no frame");
    return acc.samples();
}

inline RunMetrics compute_metrics(std::span<const est::ForceEstimate> stream, std::span<const double> timestamps) {
    MetricsAccumulator acc;
    for (const FrameSample& s : frame_samples(stream, timestamps)) acc.add_sample(s.t, s.max_cf, s.contacts);
    return acc.finish();
}

/// Mean of the per-frame RMSE and worst per-frame MAXE.
inline void attach_shape_errors(RunMetrics& r, std::span<const est::ShapeError> errors) {
    if (errors.empty()) return;
    double rmse = 0.0, maxe = 0.0;
    for (const est::ShapeError& e : errors) {
        rmse += e.rmse;
        maxe = std::max(maxe, e.maxe);
    }
    r.shape_rmse = rmse / static_cast<double>(errors.size());
    r.shape_maxe = maxe;
}

inline NavigationMetrics summarize(std::span<const RunMetrics> runs) {
    if (runs.empty()) throw InvalidInput("metrics: need at least one run");
    NavigationMetrics m;
    const double n = static_cast<double>(runs.size());
    m.repeats = runs.size();
    double rmse = 0.0, maxe = 0.0;
    std::size_t with_shape = 0;
    for (const RunMetrics& r : runs) {
        m.avg_max_cf += r.peak / n;
        m.avg_mean_cf += r.mean / n;
        m.integral += r.integral / n;
        if (r.shape_rmse) {
            rmse += *r.shape_rmse;
            maxe += *r.shape_maxe;
            ++with_shape;
        }
    }
    if (runs.size() > 1) {
        double ss = 0.0;
        for (const RunMetrics& r : runs) ss += (r.peak - m.avg_max_cf) * (r.peak - m.avg_max_cf);
        m.std_max_cf = std::sqrt(ss / (n - 1.0));
    }
    if (with_shape > 0) {
        m.shape_rmse = rmse / static_cast<double>(with_shape);
        m.shape_maxe = maxe / static_cast<double>(with_shape);
    }
    return m;
}

// --- contour map ---------------------------------------------------------------

struct ContourOptions {
    double radius = 1.0;   // mm
    double spacing = 0.25; // mm between resampled outline vertices; 0 keeps the geometry's vertices
    int post_segments = 96;
};

struct ContourOutline {
    std::string name;
    bool closed = false;
    std::vector<Vec2> vertices;
    std::vector<std::optional<double>> values;  // N, max CF where observed
};

struct ContourMap {
    std::vector<ContourOutline> outlines;
    double lo = 0.0, hi = 0.0;  // colour scale bounds (N)

    bool empty() const {
        for (const ContourOutline& o : outlines)
            for (const auto& v : o.values)
                if (v) return false;
        return true;
    }
};

namespace detail {

inline std::vector<Vec2> resample(std::span<const Vec2> pts, double spacing, bool closed) {
    std::vector<Vec2> out;
    if (pts.empty()) return out;
    const std::size_t n = pts.size(), segs = closed ? n : n - 1;
    for (std::size_t i = 0; i < segs; ++i) {
        const Vec2 a = pts[i], b = pts[(i + 1) % n];
        const int k = std::max(1, static_cast<int>(std::ceil(distance(a, b) / spacing)));
        for (int j = 0; j < k; ++j) out.push_back(a + (b - a) * (static_cast<double>(j) / k));
    }
    if (!closed) out.push_back(pts.back());
    return out;
}

}  // namespace detail

/// Wall polylines and post outlines with no values yet.
inline ContourMap contour_outlines(const sim::PhantomGeometry& g, const ContourOptions& opt = {}) {
    if (!(opt.radius > 0.0)) throw InvalidInput("contour: radius must be positive");
    if (opt.spacing < 0.0) throw InvalidInput("contour: spacing must be non-negative");
    ContourMap map;
    for (const sim::WallPolyline& w : g.walls) {
        ContourOutline o{w.name, false, opt.spacing > 0.0 ? detail::resample(w.points, opt.spacing, false) : w.points, {}};
        map.outlines.push_back(std::move(o));
    }
    for (const sim::Post& p : g.posts) {
        const int n = opt.spacing > 0.0
                          ? std::max(opt.post_segments, static_cast<int>(std::ceil(2.0 * std::numbers::pi * p.radius / opt.spacing)))
                          : opt.post_segments;
        ContourOutline o{p.name, true, {}, {}};
        for (int k = 0; k < n; ++k) o.vertices.push_back(p.center + rotate({p.radius, 0.0}, 2.0 * std::numbers::pi * k / n));
        map.outlines.push_back(std::move(o));
    }
    for (ContourOutline& o : map.outlines) o.values.assign(o.vertices.size(), std::nullopt);
    return map;
}

inline void accumulate(ContourMap& map, const est::ForceEstimate& f, double radius) {
    for (ContourOutline& o : map.outlines)
        for (std::size_t i = 0; i < o.vertices.size(); ++i)
            if (distance(o.vertices[i], f.position) <= radius) {
                auto& v = o.values[i];
                v = v ? std::max(*v, f.magnitude) : f.magnitude;
                map.hi = std::max(map.hi, f.magnitude);
            }
}

inline ContourMap build_contour(std::span<const est::ForceEstimate> observations, const sim::PhantomGeometry& g,
                                const ContourOptions& opt = {}) {
    ContourMap map = contour_outlines(g, opt);
    for (const est::ForceEstimate& f : observations) accumulate(map, f, opt.radius);
    return map;
}

// --- stress along the wire -----------------------------------------------------

struct StressSample {
    double s = 0.0;       // shape arc length at the element midpoint (mm)
    double moment = 0.0;  // N mm, larger end magnitude
    double stress = 0.0;  // N/mm^2
};

inline std::vector<StressSample> stress_profile(const est::CantileverModel& m, const fem::SolveResult& solve,
                                                const fem::SectionGeometry& section) {
    const std::vector<fem::ElementResultants> res = fem::recover_resultants(solve, m.mesh);
    const std::vector<double> sigma = fem::bending_stress(res, section);
    std::vector<StressSample> out;
    out.reserve(res.size());
    for (std::size_t e = 0; e < res.size(); ++e)
        out.push_back({m.base_s + 0.5 * (m.node_s[e] + m.node_s[e + 1]), res[e].max_abs_moment(), sigma[e]});
    return out;
}

// --- files ---------------------------------------------------------------------

inline constexpr const char* kFrameHeader = "t_s,contacts,max_cf_N";
inline constexpr const char* kRunHeader = "run,frames,duration_s,peak_cf_N,mean_cf_N,integral_Ns,shape_rmse_mm,shape_maxe_mm";
inline constexpr const char* kSummaryHeader = "repeats,avg_max_cf_N,std_max_cf_N,avg_mean_cf_N,integral_Ns,shape_rmse_mm,shape_maxe_mm";
inline constexpr const char* kStressHeader = "s_mm,moment_Nmm,stress_MPa";

inline std::string opt_fmt(const std::optional<double>& v) { return v ? csv::fmt(*v) : ""; }

inline void write_frames(std::ostream& os, std::span<const FrameSample> frames) {
    os << kFrameHeader << '\n';
    for (const FrameSample& f : frames) os << csv::fmt(f.t) << ',' << f.contacts << ',' << csv::fmt(f.max_cf) << '\n';
}

inline void write_runs(std::ostream& os, std::span<const RunMetrics> runs) {
    os << kRunHeader << '\n';
    for (std::size_t i = 0; i < runs.size(); ++i) {
        const RunMetrics& r = runs[i];
        os << i << ',' << r.frames << ',' << csv::fmt(r.duration) << ',' << csv::fmt(r.peak) << ',' << csv::fmt(r.mean) << ','
           << csv::fmt(r.integral) << ',' << opt_fmt(r.shape_rmse) << ',' << opt_fmt(r.shape_maxe) << '\n';
    }
}

inline void write_summary(std::ostream& os, const std::optional<NavigationMetrics>& m) {
    os << kSummaryHeader << '\n';
    if (!m) return;
    os << m->repeats << ',' << csv::fmt(m->avg_max_cf) << ',' << csv::fmt(m->std_max_cf) << ',' << csv::fmt(m->avg_mean_cf)
       << ',' << csv::fmt(m->integral) << ',' << opt_fmt(m->shape_rmse) << ',' << opt_fmt(m->shape_maxe) << '\n';
}

inline void write_stress(std::ostream& os, std::span<const StressSample> samples) {
    os << kStressHeader << '\n';
    for (const StressSample& s : samples) os << csv::fmt(s.s) << ',' << csv::fmt(s.moment) << ',' << csv::fmt(s.stress) << '\n';
}

// --- SVG -----------------------------------------------------------------------

namespace detail {

inline std::string num(double v) { return csv::fmt(v, 6); }

/// Blue-green-yellow-red ramp on [0, 1].
inline std::string colour(double u) {
    static constexpr double stops[5][3] = {{49, 54, 149}, {69, 170, 160}, {230, 220, 80}, {244, 109, 67}, {165, 0, 38}};
    u = std::clamp(std::isfinite(u) ? u : 0.0, 0.0, 1.0) * 4.0;
    const int i = std::min(3, static_cast<int>(u));
    const double f = u - i;
    char buf[8];
    std::snprintf(buf, sizeof buf, "#%02x%02x%02x", static_cast<int>(std::lround(stops[i][0] + f * (stops[i + 1][0] - stops[i][0]))),
                  static_cast<int>(std::lround(stops[i][1] + f * (stops[i + 1][1] - stops[i][1]))),
                  static_cast<int>(std::lround(stops[i][2] + f * (stops[i + 1][2] - stops[i][2]))));
    return buf;
}

inline std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '&') out += "&amp;";
        else if (c == '<') out += "&lt;";
        else if (c == '>') out += "&gt;";
        else if (c == '"') out += "&quot;";
        else out += c;
    }
    return out;
}

inline void polyline(std::ostream& os, std::span<const Vec2> pts, bool closed, const std::string& style) {
    os << (closed ? "<polygon" : "<polyline") << " points=\"";
    for (std::size_t i = 0; i < pts.size(); ++i) os << (i ? " " : "") << num(pts[i].x) << ',' << num(pts[i].y);
    os << "\" " << style << "/>\n";
}

/// Vertical colour bar at (x, y) with five labelled ticks from lo to hi.
inline void legend(std::ostream& os, double x, double y, double w, double h, double lo, double hi, const std::string& label,
                   double font) {
    os << "<defs><linearGradient id=\"ramp\" x1=\"0\" y1=\"1\" x2=\"0\" y2=\"0\">\n";
    for (int k = 0; k <= 8; ++k) os << "<stop offset=\"" << num(k / 8.0) << "\" stop-color=\"" << colour(k / 8.0) << "\"/>\n";
    os << "</linearGradient></defs>\n";
    os << "<rect x=\"" << num(x) << "\" y=\"" << num(y) << "\" width=\"" << num(w) << "\" height=\"" << num(h)
       << "\" fill=\"url(#ramp)\" stroke=\"black\" stroke-width=\"" << num(0.05 * w) << "\"/>\n";
    for (int k = 0; k <= 4; ++k) {
        const double yy = y + h * (1.0 - k / 4.0);
        os << "<text x=\"" << num(x + 1.3 * w) << "\" y=\"" << num(yy + 0.35 * font) << "\" font-size=\"" << num(font)
           << "\" font-family=\"sans-serif\">" << csv::fmt(lo + (hi - lo) * k / 4.0, 3) << "</text>\n";
    }
    os << "<text x=\"" << num(x) << "\" y=\"" << num(y - 0.8 * font) << "\" font-size=\"" << num(font)
       << "\" font-family=\"sans-serif\">" << escape(label) << "</text>\n";
}

}  // namespace detail

/// Contour map over the phantom canvas, in mm, with a numeric colour legend.
inline void write_contour_svg(std::ostream& os, const ContourMap& map, const sim::PhantomGeometry& g, const std::string& title = "") {
    const double W = g.canvas.width_px * g.canvas.mm_per_px, H = g.canvas.height_px * g.canvas.mm_per_px;
    const double font = 0.025 * H, pad = 0.12 * W;
    const double span = map.hi > map.lo ? map.hi - map.lo : 1.0;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 " << detail::num(W + pad) << ' ' << detail::num(H)
       << "\" width=\"" << detail::num(4.0 * (W + pad)) << "\" height=\"" << detail::num(4.0 * H) << "\">\n";
    os << "<rect x=\"0\" y=\"0\" width=\"" << detail::num(W) << "\" height=\"" << detail::num(H) << "\" fill=\"white\"/>\n";
    if (!title.empty())
        os << "<text x=\"" << detail::num(font) << "\" y=\"" << detail::num(1.5 * font) << "\" font-size=\"" << detail::num(font)
           << "\" font-family=\"sans-serif\">" << detail::escape(title) << "</text>\n";
    const double stroke = 0.006 * H;
    for (const ContourOutline& o : map.outlines)
        detail::polyline(os, o.vertices, o.closed,
                         "fill=\"none\" stroke=\"#b0b0b0\" stroke-width=\"" + detail::num(stroke) + "\"");
    for (const ContourOutline& o : map.outlines) {
        const std::size_t n = o.vertices.size();
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t j = i + 1 < n ? i + 1 : 0;
            if (j == 0 && !o.closed) break;
            if (!o.values[i] || !o.values[j]) continue;
            const double v = std::max(*o.values[i], *o.values[j]);
            os << "<line x1=\"" << detail::num(o.vertices[i].x) << "\" y1=\"" << detail::num(o.vertices[i].y) << "\" x2=\""
               << detail::num(o.vertices[j].x) << "\" y2=\"" << detail::num(o.vertices[j].y) << "\" stroke=\""
               << detail::colour((v - map.lo) / span) << "\" stroke-width=\"" << detail::num(3.0 * stroke)
               << "\" stroke-linecap=\"round\"/>\n";
        }
        // Isolated valued vertices get a dot so they stay visible.
        auto valued = [&](std::size_t i, int step) {
            if (!o.closed && ((step < 0 && i == 0) || (step > 0 && i + 1 == n))) return false;
            return o.values[(i + n + static_cast<std::size_t>(step + 1) - 1) % n].has_value();
        };
        for (std::size_t i = 0; i < n; ++i)
            if (o.values[i] && (n == 1 || (!valued(i, -1) && !valued(i, 1))))
                os << "<circle cx=\"" << detail::num(o.vertices[i].x) << "\" cy=\"" << detail::num(o.vertices[i].y) << "\" r=\""
                   << detail::num(1.5 * stroke) << "\" fill=\"" << detail::colour((*o.values[i] - map.lo) / span) << "\"/>\n";
    }
    detail::legend(os, W + 0.15 * pad, 0.2 * H, 0.15 * pad, 0.6 * H, map.lo, map.hi, "max CF (N)", font);
    os << "</svg>\n";
}

/// Line plot of y(x) with labelled axes; used for stress and force traces.
inline void write_line_plot_svg(std::ostream& os, std::span<const double> x, std::span<const double> y, const std::string& x_label,
                                const std::string& y_label, const std::string& title = "") {
    if (x.size() != y.size()) throw InvalidInput("plot: x and y differ in length");
    const double W = 640, H = 400, ml = 80, mr = 20, mt = 40, mb = 60;
    double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    if (!x.empty()) {
        x0 = *std::min_element(x.begin(), x.end());
        x1 = *std::max_element(x.begin(), x.end());
        y1 = std::max(0.0, *std::max_element(y.begin(), y.end()));
        y0 = std::min(0.0, *std::min_element(y.begin(), y.end()));
        if (!(x1 > x0)) x1 = x0 + 1.0;
        if (!(y1 > y0)) y1 = y0 + 1.0;
    }
    auto px = [&](double v) { return ml + (v - x0) / (x1 - x0) * (W - ml - mr); };
    auto py = [&](double v) { return H - mb - (v - y0) / (y1 - y0) * (H - mt - mb); };
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 " << W << ' ' << H << "\" width=\"" << W << "\" height=\"" << H
       << "\">\n<rect x=\"0\" y=\"0\" width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
    os << "<path d=\"M" << ml << ',' << mt << " V" << H - mb << " H" << W - mr << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (int k = 0; k <= 4; ++k) {
        const double xv = x0 + (x1 - x0) * k / 4.0, yv = y0 + (y1 - y0) * k / 4.0;
        os << "<text x=\"" << detail::num(px(xv)) << "\" y=\"" << H - mb + 18 << "\" font-size=\"12\" text-anchor=\"middle\" font-family=\"sans-serif\">"
           << csv::fmt(xv, 4) << "</text>\n";
        os << "<text x=\"" << ml - 6 << "\" y=\"" << detail::num(py(yv) + 4) << "\" font-size=\"12\" text-anchor=\"end\" font-family=\"sans-serif\">"
           << csv::fmt(yv, 4) << "</text>\n";
    }
    os << "<text x=\"" << detail::num(0.5 * (ml + W - mr)) << "\" y=\"" << H - 15
       << "\" font-size=\"14\" text-anchor=\"middle\" font-family=\"sans-serif\">" << detail::escape(x_label) << "</text>\n";
    os << "<text x=\"18\" y=\"" << detail::num(0.5 * (mt + H - mb)) << "\" font-size=\"14\" text-anchor=\"middle\" font-family=\"sans-serif\" transform=\"rotate(-90 18 "
       << detail::num(0.5 * (mt + H - mb)) << ")\">" << detail::escape(y_label) << "</text>\n";
    if (!title.empty())
        os << "<text x=\"" << detail::num(0.5 * W) << "\" y=\"24\" font-size=\"14\" text-anchor=\"middle\" font-family=\"sans-serif\">"
           << detail::escape(title) << "</text>\n";
    if (!x.empty()) {
        os << "<polyline points=\"";
        for (std::size_t i = 0; i < x.size(); ++i) os << (i ? " " : "") << detail::num(px(x[i])) << ',' << detail::num(py(y[i]));
        os << "\" fill=\"none\" stroke=\"#a50026\" stroke-width=\"1.5\"/>\n";
    }
    os << "</svg>\n";
}

inline void write_stress_svg(std::ostream& os, std::span<const StressSample> samples, const std::string& title = "") {
    std::vector<double> x, y;
    for (const StressSample& s : samples) {
        x.push_back(s.s);
        y.push_back(s.stress);
    }
    write_line_plot_svg(os, x, y, "arc length s (mm)", "bending stress (MPa)", title);
}

}  // namespace icf::report
