#pragma once

// Lengthwise flexural rigidity EI(s) of a guidewire, keyed by distance from the
// distal tip, and its construction from three-point bending tests.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "icf/core.hpp"
#include "icf/csv.hpp"

namespace icf {

struct RigiditySample {
    double s = 0.0;                // mm from distal tip
    double EI = 0.0;               // N mm^2
    std::optional<double> sigma;   // N mm^2, standard deviation over repeats
};

/// Piecewise-linear EI(s), clamped to the end values outside the sampled range.
class RigidityProfile {
public:
    explicit RigidityProfile(std::vector<RigiditySample> samples) : samples_(std::move(samples)) {
        if (samples_.size() < 2) throw InvalidInput("rigidity profile: at least 2 samples required");
        for (std::size_t i = 0; i < samples_.size(); ++i) {
            const RigiditySample& p = samples_[i];
            const std::string tag = "rigidity profile: sample " + std::to_string(i);
            if (!std::isfinite(p.s) || p.s < 0.0) throw InvalidInput(tag + " has negative or non-finite s");
            if (!(p.EI > 0.0) || !std::isfinite(p.EI)) throw InvalidInput(tag + " has non-positive EI");
            if (p.sigma && !(*p.sigma >= 0.0)) throw InvalidInput(tag + " has negative deviation");
            if (i > 0 && !(p.s > samples_[i - 1].s)) throw InvalidInput(tag + " breaks strictly increasing s");
        }
    }

    const std::vector<RigiditySample>& samples() const { return samples_; }
    double s_min() const { return samples_.front().s; }
    double s_max() const { return samples_.back().s; }

    double ei_at(double s) const {
        if (!(s >= 0.0)) throw InvalidInput("rigidity profile: query position must be >= 0");
        if (s <= samples_.front().s) return samples_.front().EI;
        if (s >= samples_.back().s) return samples_.back().EI;
        const auto hi = std::upper_bound(samples_.begin(), samples_.end(), s,
                                         [](double v, const RigiditySample& p) { return v < p.s; });
        const auto lo = hi - 1;
        if (s == lo->s) return lo->EI;
        const double t = (s - lo->s) / (hi->s - lo->s);
        return lo->EI + t * (hi->EI - lo->EI);
    }

    /// Mean EI over [a, b] of the piecewise-linear profile (exact integral).
    double mean_ei(double a, double b) const {
        if (b < a) std::swap(a, b);
        if (b - a <= 0.0) return ei_at(a);
        std::vector<double> knots{a};
        for (const RigiditySample& p : samples_)
            if (p.s > a && p.s < b) knots.push_back(p.s);
        knots.push_back(b);
        double acc = 0.0;
        for (std::size_t i = 0; i + 1 < knots.size(); ++i)
            acc += 0.5 * (ei_at(knots[i]) + ei_at(knots[i + 1])) * (knots[i + 1] - knots[i]);
        return acc / (b - a);
    }

private:
    std::vector<RigiditySample> samples_;
};

/// One three-point bending test: central load on a simply supported span.
struct BendingTestRecord {
    double span = 0.0;                   // mm
    double load_deflection_slope = 0.0;  // N/mm
    double s_center = 0.0;               // mm from distal tip
    int repeats = 1;

    void validate() const {
        if (!(span > 0.0) || !std::isfinite(span)) throw InvalidInput("bending test: span must be positive");
        if (!(load_deflection_slope > 0.0) || !std::isfinite(load_deflection_slope))
            throw InvalidInput("bending test: load-deflection slope must be positive");
        if (!(s_center >= 0.0)) throw InvalidInput("bending test: specimen center must be >= 0");
        if (repeats < 1) throw InvalidInput("bending test: repeats must be >= 1");
    }
};

/// EI = (F / delta) span^3 / 48, attached at the specimen center.
inline RigiditySample ei_from_bending(const BendingTestRecord& r) {
    r.validate();
    return {r.s_center, r.load_deflection_slope * r.span * r.span * r.span / 48.0, std::nullopt};
}

/// Groups tests by specimen center; each group gives its mean EI and, with
/// more than one test, the sample standard deviation.
inline RigidityProfile profile_from_bending(const std::vector<BendingTestRecord>& tests) {
    std::map<double, std::vector<double>> groups;
    for (const BendingTestRecord& t : tests) groups[t.s_center].push_back(ei_from_bending(t).EI);
    std::vector<RigiditySample> out;
    for (const auto& [s, v] : groups) {
        double mean = 0.0;
        for (double e : v) mean += e;
        mean /= static_cast<double>(v.size());
        std::optional<double> sd;
        if (v.size() > 1) {
            double ss = 0.0;
            for (double e : v) ss += (e - mean) * (e - mean);
            sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
        }
        out.push_back({s, mean, sd});
    }
    return RigidityProfile(std::move(out));
}

/// Specimen centers of a sequential test plan: (end, step) segments walked
/// from `start`, e.g. {{200, 10}, {400, 20}, {500, 50}}.
inline std::vector<double> sampling_plan(double start, const std::vector<std::pair<double, double>>& segments) {
    std::vector<double> s{start};
    for (const auto& [end, step] : segments) {
        if (!(step > 0.0)) throw InvalidInput("sampling plan: step must be positive");
        const auto count = static_cast<long>(std::llround((end - s.back()) / step));
        const double from = s.back();
        for (long k = 1; k <= count; ++k) s.push_back(from + step * static_cast<double>(k));
    }
    return s;
}

/// Reads `s_mm,EI_Nmm2[,std_Nmm2]`; '#' comment lines allowed.
inline RigidityProfile load_profile(std::istream& in) {
    auto [header, rows] = csv::read_table(in);
    if (header.size() < 2 || header[0] != "s_mm" || header[1] != "EI_Nmm2" ||
        (header.size() == 3 && header[2] != "std_Nmm2") || header.size() > 3)
        throw ParseError("profile header must be s_mm,EI_Nmm2[,std_Nmm2]", 0);
    std::vector<RigiditySample> samples;
    for (const csv::Row& r : rows) {
        if (r.cells.size() != header.size())
            throw ParseError("expected " + std::to_string(header.size()) + " columns", r.line);
        RigiditySample p{csv::parse_double(r.cells[0], r.line, "s_mm"),
                         csv::parse_double(r.cells[1], r.line, "EI_Nmm2"), std::nullopt};
        if (header.size() == 3) p.sigma = csv::parse_double(r.cells[2], r.line, "std_Nmm2");
        if (!std::isfinite(p.s) || p.s < 0.0) throw ParseError("s_mm must be >= 0", r.line);
        if (!(p.EI > 0.0) || !std::isfinite(p.EI)) throw ParseError("EI_Nmm2 must be positive", r.line);
        if (!samples.empty() && !(p.s > samples.back().s))
            throw ParseError("s_mm must be strictly increasing", r.line);
        samples.push_back(p);
    }
    if (samples.size() < 2) throw ParseError("profile needs at least 2 samples", 0);
    return RigidityProfile(std::move(samples));
}

inline RigidityProfile load_profile(const std::string& path) {
    auto in = csv::open_input(path);
    try {
        return load_profile(in);
    } catch (const ParseError& e) {
        throw ParseError(path + ": " + e.what(), e.line());
    }
}

inline void write_profile(std::ostream& out, const RigidityProfile& p) {
    const bool with_sd = std::any_of(p.samples().begin(), p.samples().end(),
                                     [](const RigiditySample& q) { return q.sigma.has_value(); });
    out << (with_sd ? "s_mm,EI_Nmm2,std_Nmm2\n" : "s_mm,EI_Nmm2\n");
    for (const RigiditySample& q : p.samples()) {
        out << csv::fmt(q.s) << ',' << csv::fmt(q.EI);
        if (with_sd) out << ',' << csv::fmt(q.sigma.value_or(0.0));
        out << '\n';
    }
}

/// Smooth synthetic profile: soft tip rising to a stiff body, EI(s) =
/// tip + (body - tip) (1 - exp(-s / decay)), sampled every `step` mm.
inline RigidityProfile synthetic_profile(double tip_EI = 50.0, double body_EI = 1000.0, double decay = 40.0,
                                         double length = 500.0, double step = 5.0) {
    std::vector<RigiditySample> s;
    for (double x = 0.0; x <= length + 1e-9; x += step)
        s.push_back({x, tip_EI + (body_EI - tip_EI) * (1.0 - std::exp(-x / decay)), std::nullopt});
    return RigidityProfile(std::move(s));
}

/// Constant EI over [0, length].
inline RigidityProfile uniform_profile(double EI, double length = 1000.0) {
    return RigidityProfile({{0.0, EI, std::nullopt}, {length, EI, std::nullopt}});
}

}  // namespace icf
