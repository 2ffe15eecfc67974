// icfm: intraluminal contact force monitoring from fluoroscopy-like frames.
//
//   simulate   scenario -> rendered frames + ground truth
//   segment    frames -> tracked shapes
//   estimate   shapes + rigidity profile -> contact forces
//   report     forces -> metrics, contour map, stress plot
//   roundtrip  randomized forward/inverse oracle suite
//
// Stages talk through index CSVs (frame,t_s,path) in their output directories.
// Exit codes: 0 success, 1 input error, 2 numerical failure.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

#include "icf/core.hpp"
#include "icf/csv.hpp"
#include "icf/estimator.hpp"
#include "icf/phantom_sim.hpp"
#include "icf/raster.hpp"
#include "icf/report.hpp"
#include "icf/rigidity_profile.hpp"
#include "icf/roundtrip.hpp"
#include "icf/segmentation.hpp"

namespace fs = std::filesystem;
using namespace icf;
using nlohmann::json;

namespace {

constexpr int kExitInput = 1;
constexpr int kExitNumerical = 2;
constexpr const char* kIndexHeader = "frame,t_s,path";

struct Globals {
    bool json_log = false;
};

struct SolverFlags {
    std::size_t elements = 64;
    int increments = 10;
    double tol = 1e-6;

    fem::SolverOptions solver() const {
        fem::SolverOptions o;
        o.increments = increments;
        o.tol = tol;
        return o;
    }
};

void add_solver_flags(CLI::App* app, SolverFlags& f) {
    app->add_option("--elements", f.elements, "beam elements per wire")->check(CLI::PositiveNumber);
    app->add_option("--increments", f.increments, "load increments")->check(CLI::PositiveNumber);
    app->add_option("--tol", f.tol, "force residual tolerance (N)")->check(CLI::PositiveNumber);
}

void log_frame(const Globals& g, json j) {
    if (g.json_log) std::cerr << j.dump() << '\n';
}

struct IndexEntry {
    std::size_t frame = 0;
    double t = 0.0;
    std::string path;  // resolved
};

std::vector<IndexEntry> read_index(const std::string& path) {
    std::ifstream in = csv::open_input(path);
    auto [header, rows] = csv::read_table(in);
    if (header != csv::split(kIndexHeader)) throw ParseError(path + ": header must be " + kIndexHeader, 0);
    const fs::path dir = fs::path(path).parent_path();
    std::vector<IndexEntry> out;
    for (const csv::Row& r : rows) {
        if (r.cells.size() != 3) throw ParseError(path + ": expected 3 columns", r.line);
        const long k = csv::parse_int(r.cells[0], r.line, "frame");
        if (k < 0) throw ParseError(path + ": negative frame index", r.line);
        const fs::path p(r.cells[2]);
        out.push_back({static_cast<std::size_t>(k), csv::parse_double(r.cells[1], r.line, "t_s"),
                       (p.is_absolute() ? p : dir / p).string()});
        if (out.size() > 1 && !(out.back().t > out[out.size() - 2].t))
            throw ParseError(path + ": timestamps must increase", r.line);
    }
    if (out.empty()) throw InvalidInput(path + ": no frames");
    return out;
}

void write_index(const fs::path& path, const std::vector<IndexEntry>& entries) {
    std::ofstream os = csv::open_output(path.string());
    os << kIndexHeader << '\n';
    for (const IndexEntry& e : entries) os << e.frame << ',' << csv::fmt(e.t) << ',' << e.path << '\n';
}

std::string numbered(const std::string& stem, std::size_t k, const std::string& ext) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "_%04zu", k);
    return stem + buf + ext;
}

fs::path make_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw InvalidInput("cannot create output directory '" + dir + "'");
    return fs::path(dir);
}

// --- simulate ------------------------------------------------------------------

struct SimulateArgs {
    std::string scenario, geometry, profile, out_dir;
    std::optional<std::uint64_t> seed;
    std::optional<double> noise;
    SolverFlags solver;
};

int run_simulate(const SimulateArgs& a, const Globals& g) {
    sim::LoadedScenario ls = sim::load_scenario(a.scenario, a.geometry, a.profile);
    ls.scenario.n_elements = a.solver.elements;
    if (a.seed) ls.scenario.render.seed = *a.seed;
    if (a.noise) ls.scenario.render.noise_sigma = *a.noise;
    const fs::path out = make_dir(a.out_dir);
    make_dir((out / "frames").string());

    const std::vector<sim::GroundTruthRecord> records =
        sim::run_scenario(ls.geometry, ls.scenario, ls.profile, a.solver.solver());
    std::vector<IndexEntry> index;
    for (const sim::GroundTruthRecord& r : records) {
        const RasterFrame f = sim::render_frame(ls.geometry, r.shape, ls.scenario.wire_radius, ls.scenario.render, r.t);
        const std::string rel = "frames/" + numbered("frame", r.frame, ".png");
        write_frame((out / rel).string(), f);
        index.push_back({r.frame, r.t, rel});
        log_frame(g, {{"stage", "simulate"}, {"frame", r.frame}, {"t_s", r.t}, {"contacts", r.contacts.size()},
                      {"max_cf_N", r.max_cf()}, {"rf_N", r.rf.norm()}});
    }
    write_index(out / "frames.csv", index);
    std::ofstream gt = csv::open_output((out / "ground_truth.csv").string());
    sim::write_ground_truth(gt, records);
    std::ofstream geo = csv::open_output((out / "geometry.json").string());
    geo << sim::to_json(ls.geometry).dump(2) << '\n';
    std::cout << "simulated " << records.size() << " frames of '" << ls.scenario.name << "' into " << out.string() << '\n';
    return 0;
}

// --- segment -------------------------------------------------------------------

struct SegmentArgs {
    std::string frames, geometry, walls, out_dir;
    std::optional<double> mm_per_px;
    double contact_distance_px = 0.0;
    double wire_radius = 0.4445;
};

int run_segment(const SegmentArgs& a, const Globals& g) {
    const sim::PhantomGeometry geo = sim::load_geometry(a.geometry);
    const BinaryMask walls = a.walls.empty() ? sim::wall_mask(geo, a.wire_radius) : seg::vessel_mask(read_frame(a.walls));
    seg::PipelineParams pp = sim::tracking_params(geo, a.mm_per_px);
    pp.sweep.contact_distance_px = a.contact_distance_px;

    const fs::path out = make_dir(a.out_dir);
    make_dir((out / "shapes").string());
    std::vector<IndexEntry> index;
    for (const IndexEntry& e : read_index(a.frames)) {
        RasterFrame f = read_frame(e.path);
        f.timestamp = e.t;
        seg::TrackedShape sh;
        try {
            sh = seg::track_frame(f, walls, pp);
        } catch (const InvalidInput& ex) {
            throw InvalidInput("frame " + std::to_string(e.frame) + " (t=" + csv::fmt(e.t) + " s): " + ex.what());
        }
        const std::string rel = "shapes/" + numbered("shape", e.frame, ".csv");
        std::ofstream os = csv::open_output((out / rel).string());
        seg::write_tracked_shape(os, sh);
        index.push_back({e.frame, e.t, rel});
        log_frame(g, {{"stage", "segment"}, {"frame", e.frame}, {"t_s", e.t}, {"length_mm", sh.length()},
                      {"contacts", sh.contacts.size()}});
    }
    write_index(out / "shapes.csv", index);
    std::cout << "segmented " << index.size() << " frames into " << out.string() << '\n';
    return 0;
}

// --- estimate ------------------------------------------------------------------

struct EstimateArgs {
    std::string shapes, profile, out_dir;
    double wire_radius = 0.4445;
    SolverFlags solver;
};

int run_estimate(const EstimateArgs& a, const Globals& g) {
    const RigidityProfile profile = load_profile(a.profile);
    est::ModelOptions mo;
    mo.n_elements = a.solver.elements;
    mo.wire_radius = a.wire_radius;
    const fem::SectionGeometry section = fem::SectionGeometry::solid_circular(a.wire_radius);

    const fs::path out = make_dir(a.out_dir);
    make_dir((out / "stress").string());
    std::ofstream forces = csv::open_output((out / "forces.csv").string());
    std::ofstream errors = csv::open_output((out / "shape_errors.csv").string());
    forces << est::kEstimateHeader << '\n';
    errors << "t_s,rmse_mm,maxe_mm\n";
    std::vector<IndexEntry> frames, stress;
    for (const IndexEntry& e : read_index(a.shapes)) {
        std::ifstream in = csv::open_input(e.path);
        seg::TrackedShape sh = seg::read_tracked_shape(in);
        sh.timestamp = e.t;
        if (sh.contacts.empty()) {
            frames.push_back({e.frame, e.t, ""});
            log_frame(g, {{"stage", "estimate"}, {"frame", e.frame}, {"t_s", e.t}, {"contacts", 0}, {"max_cf_N", 0.0}});
            continue;
        }
        const est::CantileverModel m = est::build_model(sh, profile, {}, mo);
        for (const std::string& w : m.warnings) std::cerr << "warning: frame " << e.frame << ": " << w << '\n';
        const est::EstimateResult r = est::estimate_forces(m, a.solver.solver());
        est::write_estimates(forces, r.forces, false);
        const est::ShapeError se = est::shape_error(sh, r.simulated);
        errors << csv::fmt(e.t) << ',' << csv::fmt(se.rmse) << ',' << csv::fmt(se.maxe) << '\n';
        const std::string rel = "stress/" + numbered("stress", e.frame, ".csv");
        std::ofstream so = csv::open_output((out / rel).string());
        report::write_stress(so, report::stress_profile(m, r.solve, section));
        frames.push_back({e.frame, e.t, ""});
        stress.push_back({e.frame, e.t, rel});
        double max_cf = 0.0;
        for (const est::ForceEstimate& f : r.forces) max_cf = std::max(max_cf, f.magnitude);
        log_frame(g, {{"stage", "estimate"}, {"frame", e.frame}, {"t_s", e.t}, {"contacts", r.forces.size()},
                      {"max_cf_N", max_cf}, {"shape_rmse_mm", se.rmse}, {"iterations", r.solve.total_iterations}});
    }
    write_index(out / "frames.csv", frames);
    write_index(out / "stress.csv", stress);
    std::cout << "estimated " << frames.size() << " frames into " << out.string() << '\n';
    return 0;
}

// --- report --------------------------------------------------------------------

struct ReportArgs {
    std::vector<std::string> runs;
    std::string geometry, out_dir;
    double contact_radius = 1.0;
};

std::vector<est::ShapeError> read_shape_errors(const fs::path& path) {
    std::vector<est::ShapeError> out;
    if (!fs::exists(path)) return out;
    std::ifstream in = csv::open_input(path.string());
    auto [header, rows] = csv::read_table(in);
    for (const csv::Row& r : rows) {
        if (r.cells.size() != 3) throw ParseError(path.string() + ": expected 3 columns", r.line);
        out.push_back({{}, csv::parse_double(r.cells[1], r.line, "rmse_mm"), csv::parse_double(r.cells[2], r.line, "maxe_mm")});
    }
    return out;
}

std::vector<report::StressSample> read_stress(const std::string& path) {
    std::ifstream in = csv::open_input(path);
    auto [header, rows] = csv::read_table(in);
    if (header != csv::split(report::kStressHeader)) throw ParseError(path + ": unexpected header", 0);
    std::vector<report::StressSample> out;
    for (const csv::Row& r : rows) {
        if (r.cells.size() != 3) throw ParseError(path + ": expected 3 columns", r.line);
        out.push_back({csv::parse_double(r.cells[0], r.line, "s_mm"), csv::parse_double(r.cells[1], r.line, "moment_Nmm"),
                       csv::parse_double(r.cells[2], r.line, "stress_MPa")});
    }
    return out;
}

int run_report(const ReportArgs& a, const Globals& g) {
    const fs::path out = make_dir(a.out_dir);
    std::vector<report::RunMetrics> metrics;
    std::vector<est::ForceEstimate> all_forces;
    for (std::size_t k = 0; k < a.runs.size(); ++k) {
        const fs::path dir(a.runs[k]);
        std::ifstream fin = csv::open_input((dir / "forces.csv").string());
        const std::vector<est::ForceEstimate> forces = est::read_estimates(fin);
        std::vector<double> t;
        for (const IndexEntry& e : read_index((dir / "frames.csv").string())) t.push_back(e.t);

        const std::vector<report::FrameSample> samples = report::frame_samples(forces, t);
        report::MetricsAccumulator acc;
        for (const report::FrameSample& s : samples) {
            acc.add_sample(s.t, s.max_cf, s.contacts);
            log_frame(g, {{"stage", "report"}, {"run", k}, {"t_s", s.t}, {"contacts", s.contacts}, {"max_cf_N", s.max_cf}});
        }
        report::RunMetrics m = acc.finish();
        report::attach_shape_errors(m, read_shape_errors(dir / "shape_errors.csv"));
        metrics.push_back(m);
        all_forces.insert(all_forces.end(), forces.begin(), forces.end());

        const std::string tag = a.runs.size() > 1 ? "_run" + std::to_string(k) : "";
        std::ofstream fo = csv::open_output((out / ("frames" + tag + ".csv")).string());
        report::write_frames(fo, samples);
        std::ofstream tr = csv::open_output((out / ("traces" + tag + ".csv")).string());
        est::write_estimates(tr, forces);
        std::vector<double> x, y;
        for (const report::FrameSample& s : samples) {
            x.push_back(s.t);
            y.push_back(s.max_cf);
        }
        std::ofstream ts = csv::open_output((out / ("max_cf" + tag + ".svg")).string());
        report::write_line_plot_svg(ts, x, y, "time (s)", "max contact force (N)", "per-frame maximum contact force");

        // Stress along the wire at the frame with the highest peak stress.
        if (fs::exists(dir / "stress.csv")) {
            std::vector<report::StressSample> best;
            double peak = -1.0;
            for (const IndexEntry& e : read_index((dir / "stress.csv").string())) {
                std::vector<report::StressSample> s = read_stress(e.path);
                for (const report::StressSample& v : s)
                    if (v.stress > peak) {
                        peak = v.stress;
                        best = s;
                    }
            }
            std::ofstream so = csv::open_output((out / ("stress" + tag + ".svg")).string());
            report::write_stress_svg(so, best, "bending stress at the frame of peak stress");
        }
    }
    std::ofstream runs = csv::open_output((out / "metrics_runs.csv").string());
    report::write_runs(runs, metrics);
    const report::NavigationMetrics summary = report::summarize(metrics);
    std::ofstream sum = csv::open_output((out / "metrics.csv").string());
    report::write_summary(sum, summary);

    if (!a.geometry.empty()) {
        const sim::PhantomGeometry geo = sim::load_geometry(a.geometry);
        report::ContourOptions co;
        co.radius = a.contact_radius;
        std::ofstream svg = csv::open_output((out / "contour.svg").string());
        report::write_contour_svg(svg, report::build_contour(all_forces, geo, co), geo, geo.name + ": maximum contact force");
    }
    std::cout << "runs " << summary.repeats << ", average max CF " << csv::fmt(summary.avg_max_cf, 4) << " N (STD "
              << csv::fmt(summary.std_max_cf, 3) << "), average mean CF " << csv::fmt(summary.avg_mean_cf, 4)
              << " N, force-time integral " << csv::fmt(summary.integral, 4) << " N s\n";
    return 0;
}

// --- roundtrip -----------------------------------------------------------------

struct RoundtripArgs {
    int cases = 200;
    std::uint64_t seed = 2024;
    double max_deflection = 0.25;
    double magnitude_tol = 0.02;
    double angle_tol_deg = 2.0;
    std::string profile, out_dir;
    SolverFlags solver;
};

int run_roundtrip(const RoundtripArgs& a, const Globals& g) {
    sim::RoundTripOptions opt;
    opt.max_deflection = a.max_deflection;
    opt.model.n_elements = a.solver.elements;
    opt.solver = a.solver.solver();
    if (!a.profile.empty()) opt.profile = load_profile(a.profile);
    std::mt19937_64 rng(a.seed);
    std::ostringstream rows;
    rows << "case,contacts,length_mm,deflection_mm,magnitude_error,angle_error_deg,pass\n";
    int failed = 0;
    double worst_mag = 0.0, worst_ang = 0.0;
    for (int k = 0; k < a.cases; ++k) {
        const sim::RoundTripCase c = sim::random_case(rng, opt);
        const sim::RoundTripResult r = sim::run_case(c, opt.solver);
        const double ang = r.angle_error * 180.0 / std::numbers::pi;
        const bool pass = r.magnitude_error <= a.magnitude_tol && ang <= a.angle_tol_deg;
        failed += pass ? 0 : 1;
        worst_mag = std::max(worst_mag, r.magnitude_error);
        worst_ang = std::max(worst_ang, ang);
        rows << k << ',' << c.forces.size() << ',' << csv::fmt(c.length) << ',' << csv::fmt(r.deflection) << ','
             << csv::fmt(r.magnitude_error) << ',' << csv::fmt(ang) << ',' << (pass ? 1 : 0) << '\n';
        log_frame(g, {{"stage", "roundtrip"}, {"case", k}, {"contacts", c.forces.size()}, {"magnitude_error", r.magnitude_error},
                      {"angle_error_deg", ang}, {"pass", pass}});
    }
    if (!a.out_dir.empty()) {
        std::ofstream os = csv::open_output((make_dir(a.out_dir) / "roundtrip.csv").string());
        os << rows.str();
    }
    std::cout << (failed ? "FAIL" : "PASS") << ": " << a.cases - failed << '/' << a.cases
              << " cases, worst magnitude error " << csv::fmt(100.0 * worst_mag, 3) << "%, worst direction error "
              << csv::fmt(worst_ang, 3) << " deg\n";
    return failed ? kExitNumerical : 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"icfm: contact force estimation for guidewire navigation"};
    app.require_subcommand(1);
    Globals g;
    app.add_flag("--json-log", g.json_log, "one JSON line per frame on stderr");

    SimulateArgs sa;
    CLI::App* sim_cmd = app.add_subcommand("simulate", "solve a scripted scenario and render its frames");
    sim_cmd->add_option("--scenario", sa.scenario, "scenario JSON")->required()->check(CLI::ExistingFile);
    sim_cmd->add_option("--geometry", sa.geometry, "override the scenario's geometry JSON")->check(CLI::ExistingFile);
    sim_cmd->add_option("--profile", sa.profile, "override the scenario's rigidity profile CSV")->check(CLI::ExistingFile);
    sim_cmd->add_option("--seed", sa.seed, "render noise seed");
    sim_cmd->add_option("--noise", sa.noise, "render noise sigma (gray levels)")->check(CLI::NonNegativeNumber);
    sim_cmd->add_option("--out-dir", sa.out_dir, "output directory")->required();
    add_solver_flags(sim_cmd, sa.solver);

    SegmentArgs ga;
    CLI::App* seg_cmd = app.add_subcommand("segment", "track the wire centerline and contacts in each frame");
    seg_cmd->add_option("--frames", ga.frames, "frame index CSV (frame,t_s,path)")->required()->check(CLI::ExistingFile);
    seg_cmd->add_option("--geometry", ga.geometry, "phantom geometry JSON (base point, walls)")->required()->check(CLI::ExistingFile);
    seg_cmd->add_option("--walls", ga.walls, "wire-free background frame for the wall mask")->check(CLI::ExistingFile);
    seg_cmd->add_option("--calibration-mm-per-px", ga.mm_per_px, "mm per pixel (default: geometry canvas)")->check(CLI::PositiveNumber);
    seg_cmd->add_option("--contact-distance-px", ga.contact_distance_px, "wall distance that counts as contact (0: automatic)")
        ->check(CLI::NonNegativeNumber);
    seg_cmd->add_option("--wire-radius", ga.wire_radius, "mm")->check(CLI::PositiveNumber);
    seg_cmd->add_option("--out-dir", ga.out_dir, "output directory")->required();

    EstimateArgs ea;
    CLI::App* est_cmd = app.add_subcommand("estimate", "estimate contact forces from tracked shapes");
    est_cmd->add_option("--shapes", ea.shapes, "shape index CSV (frame,t_s,path)")->required()->check(CLI::ExistingFile);
    est_cmd->add_option("--profile", ea.profile, "rigidity profile CSV")->required()->check(CLI::ExistingFile);
    est_cmd->add_option("--wire-radius", ea.wire_radius, "mm")->check(CLI::PositiveNumber);
    est_cmd->add_option("--out-dir", ea.out_dir, "output directory")->required();
    add_solver_flags(est_cmd, ea.solver);

    ReportArgs ra;
    CLI::App* rep_cmd = app.add_subcommand("report", "metrics, contour map and stress plot");
    rep_cmd->add_option("--run", ra.runs, "estimate output directory; repeat for repeated runs")->required()->check(CLI::ExistingDirectory);
    rep_cmd->add_option("--geometry", ra.geometry, "phantom geometry JSON for the contour map")->check(CLI::ExistingFile);
    rep_cmd->add_option("--contact-radius", ra.contact_radius, "contour accumulation radius (mm)")->check(CLI::PositiveNumber);
    rep_cmd->add_option("--out-dir", ra.out_dir, "output directory")->required();

    RoundtripArgs ta;
    CLI::App* rt_cmd = app.add_subcommand("roundtrip", "randomized forward/inverse oracle suite");
    rt_cmd->add_option("--cases", ta.cases, "number of random cases")->check(CLI::PositiveNumber);
    rt_cmd->add_option("--seed", ta.seed, "random seed");
    rt_cmd->add_option("--max-deflection", ta.max_deflection, "largest deflection as a fraction of length")
        ->check(CLI::Range(1e-4, 0.5));
    rt_cmd->add_option("--profile", ta.profile, "fixed rigidity profile (default: random synthetic)")->check(CLI::ExistingFile);
    rt_cmd->add_option("--out-dir", ta.out_dir, "write roundtrip.csv here");
    add_solver_flags(rt_cmd, ta.solver);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitInput;
    }

    try {
        if (*sim_cmd) return run_simulate(sa, g);
        if (*seg_cmd) return run_segment(ga, g);
        if (*est_cmd) return run_estimate(ea, g);
        if (*rep_cmd) return run_report(ra, g);
        if (*rt_cmd) return run_roundtrip(ta, g);
    } catch (const NumericalError& e) {
        std::cerr << "icfm: numerical failure: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const InvalidInput& e) {
        std::cerr << "icfm: " << e.what() << '\n';
        return kExitInput;
    } catch (const std::exception& e) {
        std::cerr << "icfm: " << e.what() << '\n';
        return kExitInput;
    }
    return kExitInput;
}
