#pragma once

// Field sweeps along a fixed crystal axis: transition curves per species and
// orientation class, and the fields at which curves of two species meet.

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "crosspeak/errors.hpp"
#include "crosspeak/spin_core.hpp"

namespace crosspeak {

struct SweepSpec {
    Vec3 axis = Vec3::UnitX();
    double b_min = 0.0;  // G
    double b_max = 150.0;
    double step = 0.1;

    void validate() const {
        if (!(axis.norm() > 0.0)) throw ConfigError("sweep axis must be nonzero");
        if (!(b_min >= 0.0)) throw ConfigError("sweep B_min must be >= 0");
        if (!(b_min < b_max)) throw ConfigError("sweep requires B_min < B_max");
        if (!(step > 0.0)) throw ConfigError("sweep step must be positive");
        if ((b_max - b_min) / step < 2.0) throw ConfigError("sweep must contain at least 3 samples");
    }

    [[nodiscard]] Vec3 unit_axis() const { return axis.normalized(); }

    /// b_min, b_min + step, ..., ending exactly at b_max.
    [[nodiscard]] std::vector<double> grid() const {
        validate();
        const auto n = static_cast<long>(std::floor((b_max - b_min) / step + 1e-9));
        std::vector<double> out;
        out.reserve(static_cast<std::size_t>(n) + 2);
        for (long k = 0; k <= n; ++k) out.push_back(b_min + static_cast<double>(k) * step);
        if (out.back() > b_max) out.back() = b_max;
        if (out.back() < b_max - 1e-9 * step) out.push_back(b_max);
        return out;
    }
};

/// One labeled transition sampled along a sweep. `evaluate` recomputes the frequency
/// from the exact Hamiltonian at any field inside the sweep.
struct TransitionCurve {
    std::string species;
    int orientation = 0;                    // representative class
    std::vector<int> merged_orientations;  // every class whose curve coincides with this one
    std::string from_state, to_state;
    int multiplicity = 1;
    std::vector<double> fields;       // G
    std::vector<double> frequencies;  // MHz
    TrackingDiagnostic diagnostic;
    std::function<double(double)> evaluate;

    [[nodiscard]] std::string id() const { return from_state + "->" + to_state; }
    [[nodiscard]] std::string label() const { return "c" + std::to_string(orientation) + ":" + id(); }
};

/// Curves closer than this everywhere on the grid are merged (MHz).
inline constexpr double kCoincidenceTolerance = 1e-6;

namespace detail {

inline bool coincident(const TransitionCurve& a, const TransitionCurve& b) {
    if (a.frequencies.size() != b.frequencies.size()) return false;
    for (std::size_t k = 0; k < a.frequencies.size(); ++k)
        if (std::abs(a.frequencies[k] - b.frequencies[k]) > kCoincidenceTolerance) return false;
    return true;
}

inline std::vector<TransitionCurve> merge_coincident(std::vector<TransitionCurve> curves) {
    std::vector<TransitionCurve> out;
    for (auto& c : curves) {
        auto it = std::find_if(out.begin(), out.end(), [&](const TransitionCurve& o) { return coincident(o, c); });
        if (it == out.end()) {
            out.push_back(std::move(c));
            continue;
        }
        it->multiplicity += c.multiplicity;
        it->merged_orientations.insert(it->merged_orientations.end(), c.merged_orientations.begin(),
                                       c.merged_orientations.end());
        if (c.diagnostic.min_overlap < it->diagnostic.min_overlap) it->diagnostic = c.diagnostic;
    }
    return out;
}

}  // namespace detail

/// Transition curves of `species` for every orientation in `orientations`, with curves
/// that coincide over the whole sweep merged and their multiplicity recorded.
[[nodiscard]] inline std::vector<TransitionCurve> sweep_curves(const SpinSpecies& species, const SweepSpec& spec,
                                                               const std::vector<OrientationClass>& orientations,
                                                               SelectionRule rule) {
    const std::vector<double> grid = spec.grid();
    std::vector<TransitionCurve> raw;
    for (const auto& cls : orientations) {
        auto track = std::make_shared<const LevelTrack>(species, cls, spec.unit_axis(), grid, spec.step);
        const auto& labels = track->labels();
        for (auto [i, j] : transition_pairs(species, labels, rule)) {
            TransitionCurve c;
            c.species = species.name;
            c.orientation = cls.label;
            c.merged_orientations = {cls.label};
            c.from_state = labels[i].name;
            c.to_state = labels[j].name;
            c.fields = grid;
            c.frequencies.reserve(grid.size());
            for (std::size_t k = 0; k < grid.size(); ++k)
                c.frequencies.push_back(std::abs(track->energy(k, j) - track->energy(k, i)));
            c.diagnostic = track->diagnostic();
            c.evaluate = [track, i = i, j = j](double b) {
                const LabeledEigensystem le = track->at(b);
                return std::abs(le.energies[j] - le.energies[i]);
            };
            raw.push_back(std::move(c));
        }
    }
    return detail::merge_coincident(std::move(raw));
}

[[nodiscard]] inline std::vector<TransitionCurve> sweep_curves(const SpinSpecies& species, const SweepSpec& spec,
                                                               SelectionRule rule) {
    return sweep_curves(species, spec, species.orientation_classes(), rule);
}

[[nodiscard]] inline std::vector<TransitionCurve> sweep_curves(const SpinSpecies& species, const SweepSpec& spec) {
    return sweep_curves(species, spec, default_rule(species));
}

struct CrossingEvent {
    std::string species_a, species_b;
    std::string transition_a, transition_b;
    int orientation_a = 0, orientation_b = 0;
    int multiplicity_a = 1, multiplicity_b = 1;
    double b_star = 0.0;     // G
    double f_star = 0.0;     // MHz
    double slope_gap = 0.0;  // MHz/G
};

inline constexpr double kFieldTolerance = 1e-4;      // G, bisection bracket width
inline constexpr double kFrequencyTolerance = 1e-3;  // MHz, |f_a - f_b| at a reported event
inline constexpr double kEventMergeDistance = 0.05;  // G

namespace detail {

inline void require_shared_grid(const std::vector<double>& ref, const TransitionCurve& c) {
    if (c.fields.size() != ref.size()) throw ConfigError("find_crossings: curves do not share a sweep grid");
    for (std::size_t k = 0; k < ref.size(); ++k)
        if (std::abs(c.fields[k] - ref[k]) > 1e-9) throw ConfigError("find_crossings: curves do not share a sweep grid");
    if (!c.evaluate) throw ConfigError("find_crossings: curve '" + c.label() + "' has no evaluator");
}

inline int sign(double v) { return (v > 0.0) - (v < 0.0); }

// Values this small on the grid count as exact zeros (identical curves, B = 0 degeneracy).
inline constexpr double kGridZero = 1e-12;

inline void crossings_of_pair(const TransitionCurve& a, const TransitionCurve& b, std::vector<CrossingEvent>& out) {
    const auto& grid = a.fields;
    auto gap = [&](double field) { return a.evaluate(field) - b.evaluate(field); };

    std::vector<CrossingEvent> found;
    long last = -1;
    int last_sign = 0;
    for (std::size_t k = 0; k < grid.size(); ++k) {
        const double g = a.frequencies[k] - b.frequencies[k];
        const int s = std::abs(g) <= kGridZero ? 0 : sign(g);
        if (s == 0) continue;
        if (last >= 0 && s != last_sign) {
            double lo = grid[static_cast<std::size_t>(last)], hi = grid[k];
            double mid = 0.5 * (lo + hi), fa = 0.0, fb = 0.0;
            for (int it = 0; it < 200; ++it) {
                mid = 0.5 * (lo + hi);
                fa = a.evaluate(mid);
                fb = b.evaluate(mid);
                const double gm = fa - fb;
                if (gm == 0.0 || (hi - lo <= kFieldTolerance && std::abs(gm) <= kFrequencyTolerance)) break;
                if (sign(gm) == last_sign) lo = mid;
                else hi = mid;
            }
            const double h = std::min(1e-3, 0.25 * (grid.back() - grid.front()));
            const double left = std::max(grid.front(), mid - h), right = std::min(grid.back(), mid + h);
            const double slope = (gap(right) - gap(left)) / (right - left);
            CrossingEvent ev;
            ev.species_a = a.species;
            ev.species_b = b.species;
            ev.transition_a = a.id();
            ev.transition_b = b.id();
            ev.orientation_a = a.orientation;
            ev.orientation_b = b.orientation;
            ev.multiplicity_a = a.multiplicity;
            ev.multiplicity_b = b.multiplicity;
            ev.b_star = mid;
            ev.f_star = 0.5 * (fa + fb);
            ev.slope_gap = std::abs(slope);
            if (found.empty() || ev.b_star - found.back().b_star > kEventMergeDistance) found.push_back(ev);
        }
        last = static_cast<long>(k);
        last_sign = s;
    }
    out.insert(out.end(), found.begin(), found.end());
}

}  // namespace detail

/// Every sign change of f_a - f_b on the shared grid, refined by bisection on the exact
/// Hamiltonians. Curves that coincide identically and tangential touches are not events.
[[nodiscard]] inline std::vector<CrossingEvent> find_crossings(const std::vector<TransitionCurve>& curves_a,
                                                               const std::vector<TransitionCurve>& curves_b) {
    std::vector<CrossingEvent> out;
    if (curves_a.empty() || curves_b.empty()) return out;
    const auto& grid = curves_a.front().fields;
    for (const auto& c : curves_a) detail::require_shared_grid(grid, c);
    for (const auto& c : curves_b) detail::require_shared_grid(grid, c);
    for (const auto& a : curves_a)
        for (const auto& b : curves_b) detail::crossings_of_pair(a, b, out);
    std::stable_sort(out.begin(), out.end(),
                     [](const CrossingEvent& x, const CrossingEvent& y) { return x.b_star < y.b_star; });
    return out;
}

/// Sorted event fields with events closer than `tolerance` gauss collapsed.
[[nodiscard]] inline std::vector<double> distinct_fields(const std::vector<CrossingEvent>& events,
                                                         double tolerance = kEventMergeDistance) {
    std::vector<double> b;
    for (const auto& e : events) b.push_back(e.b_star);
    std::sort(b.begin(), b.end());
    std::vector<double> out;
    for (double v : b)
        if (out.empty() || v - out.back() > tolerance) out.push_back(v);
    return out;
}

/// True if `axis` is one of the six <100> directions.
[[nodiscard]] inline bool is_cubic_axis(const Vec3& axis) {
    const Vec3 u = axis.normalized();
    return std::abs(u.cwiseAbs().maxCoeff() - 1.0) < 1e-9;
}

/// NV class whose symmetry axis is closest to `axis` (ties go to the lowest label).
[[nodiscard]] inline OrientationClass most_aligned_class(const SpinSpecies& species, const Vec3& axis) {
    const auto classes = species.orientation_classes();
    const Vec3 u = axis.normalized();
    auto best = classes.begin();
    for (auto it = classes.begin(); it != classes.end(); ++it)
        if (it->symmetry_axis.dot(u) > best->symmetry_axis.dot(u) + 1e-12) best = it;
    return *best;
}

/// Fields where a P1 transition matches the splitting between the two NV probe
/// transitions, nu_P1(B) = nu_NV(0->+1)(B) - nu_NV(0->-1)(B), for a sweep along a
/// <100> axis (all orientation classes equivalent). B = 0 is reported when the
/// sweep starts there and both sides vanish.
[[nodiscard]] inline std::vector<CrossingEvent> p1_three_body_fields(const SpinSpecies& nv, const SpinSpecies& p1,
                                                                     const SweepSpec& spec) {
    if (!is_cubic_axis(spec.axis)) throw ConfigError("three-body condition is only implemented for <100> sweeps");
    if (nv.spin != Spin::One || nv.nuclear) throw ConfigError("three-body condition needs a bare spin-1 NV species");
    const std::vector<double> grid = spec.grid();
    const OrientationClass cls = most_aligned_class(nv, spec.axis);
    auto track = std::make_shared<const LevelTrack>(nv, cls, spec.unit_axis(), grid, spec.step);

    auto index_of = [&](const std::string& name) {
        const auto& labels = track->labels();
        for (std::size_t k = 0; k < labels.size(); ++k)
            if (labels[k].name == name) return k;
        throw NumericalError("NV level '" + name + "' could not be labeled along this axis");
    };
    const std::size_t zero = index_of("ms=0"), plus = index_of("ms=+1"), minus = index_of("ms=-1");

    TransitionCurve splitting;
    splitting.species = nv.name;
    splitting.orientation = cls.label;
    splitting.merged_orientations = {cls.label};
    splitting.from_state = "(ms=0->ms=+1)-(ms=0->ms=-1)";
    splitting.fields = grid;
    for (std::size_t k = 0; k < grid.size(); ++k)
        splitting.frequencies.push_back(std::abs(track->energy(k, plus) - track->energy(k, zero)) -
                                        std::abs(track->energy(k, minus) - track->energy(k, zero)));
    splitting.diagnostic = track->diagnostic();
    splitting.evaluate = [track, zero, plus, minus](double b) {
        const LabeledEigensystem le = track->at(b);
        const auto e = [&](std::size_t i) { return le.energies[static_cast<Eigen::Index>(i)]; };
        return std::abs(e(plus) - e(zero)) - std::abs(e(minus) - e(zero));
    };
    const auto p1_curves = sweep_curves(p1, spec, SelectionRule::AllPairs);
    std::vector<TransitionCurve> rhs{splitting};
    std::vector<CrossingEvent> events = find_crossings(p1_curves, rhs);
    for (auto& e : events) e.transition_b = splitting.from_state;

    if (grid.front() == 0.0) {
        for (const auto& c : p1_curves) {
            if (std::abs(c.frequencies.front() - splitting.frequencies.front()) > kFrequencyTolerance) continue;
            CrossingEvent ev;
            ev.species_a = c.species;
            ev.species_b = nv.name;
            ev.transition_a = c.id();
            ev.transition_b = splitting.from_state;
            ev.orientation_a = c.orientation;
            ev.orientation_b = cls.label;
            ev.multiplicity_a = c.multiplicity;
            ev.b_star = 0.0;
            ev.f_star = 0.5 * (c.frequencies.front() + splitting.frequencies.front());
            ev.slope_gap = std::abs((c.frequencies[1] - splitting.frequencies[1]) -
                                    (c.frequencies[0] - splitting.frequencies[0])) /
                           (grid[1] - grid[0]);
            events.push_back(ev);
        }
        std::stable_sort(events.begin(), events.end(),
                         [](const CrossingEvent& x, const CrossingEvent& y) { return x.b_star < y.b_star; });
    }
    return events;
}

}  // namespace crosspeak
