#pragma once

// NV ensemble response versus field direction around a reference axis: goniometer
// geometry, ODMR line structure over the four classes, and a Lorentzian proxy for
// same-species cross-relaxation dips where two classes become degenerate.

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Geometry>

#include "crosspeak/errors.hpp"
#include "crosspeak/spin_core.hpp"

namespace crosspeak {

inline constexpr double kDegree = M_PI / 180.0;

struct AngleGrid {
    double phi_range = 20.0;    // deg, grid spans [-range, range]
    double theta_range = 20.0;  // deg
    int phi_steps = 101;
    int theta_steps = 101;

    void validate() const {
        if (phi_steps < 3 || theta_steps < 3) throw ConfigError("angle grid needs at least 3 steps per axis");
        if (!(phi_range > 0.0 && phi_range < 90.0) || !(theta_range > 0.0 && theta_range < 90.0))
            throw ConfigError("angle ranges must lie in (0, 90) degrees");
    }

    // Symmetric by construction: value(k) == -value(n - 1 - k) exactly.
    [[nodiscard]] static double value(double range, int steps, int k) {
        const double c = 0.5 * (steps - 1);
        return range * (k - c) / c;
    }
    [[nodiscard]] double phi(int k) const { return value(phi_range, phi_steps, k); }
    [[nodiscard]] double theta(int k) const { return value(theta_range, theta_steps, k); }
    [[nodiscard]] double phi_cell() const { return 2.0 * phi_range / (phi_steps - 1); }
    [[nodiscard]] double theta_cell() const { return 2.0 * theta_range / (theta_steps - 1); }
};

/// Transverse goniometer axes (t1, t2) for a reference direction. t1 is the part of
/// [0,1,1] perpendicular to the reference ([1,1,0] if that vanishes), t2 = ref x t1.
[[nodiscard]] inline std::pair<Vec3, Vec3> transverse_axes(const Vec3& reference) {
    const Vec3 r = reference.normalized();
    Vec3 t1 = Vec3(0, 1, 1) - r.dot(Vec3(0, 1, 1)) * r;
    if (t1.norm() < 1e-9) t1 = Vec3(1, 1, 0) - r.dot(Vec3(1, 1, 0)) * r;
    t1.normalize();
    return {t1, r.cross(t1)};
}

/// Rotate the reference by phi about t1, then by theta about t2 (degrees).
[[nodiscard]] inline MagneticField field_from_angles(const Vec3& reference, double phi_deg, double theta_deg,
                                                     double amplitude) {
    const Vec3 r = reference.normalized();
    const auto [t1, t2] = transverse_axes(r);
    const Vec3 axis = Eigen::AngleAxisd(theta_deg * kDegree, t2) * (Eigen::AngleAxisd(phi_deg * kDegree, t1) * r);
    return MagneticField::along(axis, amplitude);
}

struct OdmrLine {
    double frequency = 0.0;  // MHz
    int multiplicity = 1;
};

inline constexpr double kOdmrMergeTolerance = 0.1;  // MHz

/// (lower, upper) probe frequencies for each orientation class. The ms=0-like level
/// is the eigenvector with the largest weight on the m=0 basis state.
[[nodiscard]] inline std::vector<std::array<double, 2>> class_probe_frequencies(const MagneticField& field,
                                                                                const SpinSpecies& nv) {
    if (nv.spin != Spin::One || nv.nuclear) throw ConfigError("ODMR lines need a bare spin-1 species");
    std::vector<std::array<double, 2>> out;
    for (const auto& cls : nv.orientation_classes()) {
        const Eigensystem es = eigensystem(build_hamiltonian(nv, field, cls).entries);
        Eigen::Index zero = 0;
        es.vectors.row(1).cwiseAbs2().maxCoeff(&zero);
        std::array<double, 2> f{};
        int k = 0;
        for (Eigen::Index i = 0; i < 3; ++i)
            if (i != zero) f[static_cast<std::size_t>(k++)] = std::abs(es.values[i] - es.values[zero]);
        std::sort(f.begin(), f.end());
        out.push_back(f);
    }
    return out;
}

/// All probe lines over the classes, sorted, with lines closer than the merge
/// tolerance combined (frequency averaged, multiplicity summed).
[[nodiscard]] inline std::vector<OdmrLine> odmr_lines(const MagneticField& field, const SpinSpecies& nv,
                                                      double merge_tolerance = kOdmrMergeTolerance) {
    std::vector<double> f;
    for (const auto& p : class_probe_frequencies(field, nv)) f.insert(f.end(), p.begin(), p.end());
    std::sort(f.begin(), f.end());
    std::vector<OdmrLine> out;
    double sum = 0.0;
    for (std::size_t k = 0; k < f.size(); ++k) {
        if (!out.empty() && f[k] - f[k - 1] <= merge_tolerance) {
            ++out.back().multiplicity;
            sum += f[k];
            out.back().frequency = sum / out.back().multiplicity;
            continue;
        }
        out.push_back({f[k], 1});
        sum = f[k];
    }
    return out;
}

/// A plane through the origin where two NV classes make equal angles with the field.
struct DegeneracyPlane {
    std::string name;  // Miller indices of the normal, e.g. "011" or "0-11"
    Vec3 normal;       // unit
};

namespace detail {

inline std::string miller(const Vec3& n) {
    // scale so the smallest nonzero |component| is 1
    double m = INFINITY;
    for (int i = 0; i < 3; ++i)
        if (std::abs(n[i]) > 1e-9) m = std::min(m, std::abs(n[i]));
    std::string s;
    for (int i = 0; i < 3; ++i) s += std::to_string(static_cast<int>(std::lround(n[i] / m)));
    return s;
}

inline Vec3 canonical_sign(Vec3 n) {
    for (int i = 0; i < 3; ++i) {
        if (std::abs(n[i]) < 1e-12) continue;
        if (n[i] < 0) n = -n;
        break;
    }
    return n;
}

}  // namespace detail

/// The <100> and <110> planes that contain the reference axis; these are the loci
/// where pairs of <111> classes have equal |cos| with the field.
[[nodiscard]] inline std::vector<DegeneracyPlane> degeneracy_planes(const Vec3& reference) {
    const Vec3 r = reference.normalized();
    std::vector<Vec3> candidates;
    for (int i = 0; i < 3; ++i) candidates.push_back(Vec3::Unit(i));
    for (int i = 0; i < 3; ++i)
        for (int j = i + 1; j < 3; ++j) {
            candidates.push_back((Vec3::Unit(i) + Vec3::Unit(j)).normalized());
            candidates.push_back((Vec3::Unit(i) - Vec3::Unit(j)).normalized());
        }
    std::vector<DegeneracyPlane> out;
    for (const Vec3& c : candidates) {
        if (std::abs(c.dot(r)) > 1e-9) continue;
        const Vec3 n = detail::canonical_sign(c);
        out.push_back({detail::miller(n), n});
    }
    return out;
}

/// Points (phi, theta) in degrees on one plane locus within the grid ranges, sampled
/// along both angle directions.
[[nodiscard]] inline std::vector<std::pair<double, double>> plane_locus(const Vec3& reference,
                                                                        const DegeneracyPlane& plane,
                                                                        const AngleGrid& grid, int samples = 401) {
    grid.validate();
    auto g = [&](double phi, double theta) {
        return field_from_angles(reference, phi, theta, 1.0).axis.dot(plane.normal);
    };
    std::vector<std::pair<double, double>> pts;
    auto scan = [&](bool along_phi) {
        const double fixed_range = along_phi ? grid.theta_range : grid.phi_range;
        const double scan_range = along_phi ? grid.phi_range : grid.theta_range;
        for (int k = 0; k < samples; ++k) {
            const double fixed = AngleGrid::value(fixed_range, samples, k);
            auto at = [&](double s) { return along_phi ? g(s, fixed) : g(fixed, s); };
            double prev_s = -scan_range, prev = at(prev_s);
            for (int m = 1; m < samples; ++m) {
                const double s = AngleGrid::value(scan_range, samples, m);
                const double cur = at(s);
                if (std::abs(prev) <= 1e-12 && std::abs(cur) <= 1e-12) {
                    // locus lies along this line
                    pts.emplace_back(along_phi ? prev_s : fixed, along_phi ? fixed : prev_s);
                } else if ((prev < 0) != (cur < 0) && std::abs(cur) > 1e-12) {
                    double lo = prev_s, hi = s, glo = prev;
                    for (int it = 0; it < 100; ++it) {
                        const double mid = 0.5 * (lo + hi);
                        const double gm = at(mid);
                        if ((gm < 0) == (glo < 0)) {
                            lo = mid;
                            glo = gm;
                        } else {
                            hi = mid;
                        }
                    }
                    const double root = 0.5 * (lo + hi);
                    pts.emplace_back(along_phi ? root : fixed, along_phi ? fixed : root);
                }
                prev_s = s;
                prev = cur;
            }
            if (std::abs(prev) <= 1e-12) pts.emplace_back(along_phi ? prev_s : fixed, along_phi ? fixed : prev_s);
        }
    };
    scan(true);
    scan(false);
    std::sort(pts.begin(), pts.end());
    pts.erase(std::unique(pts.begin(), pts.end(),
                          [](const auto& a, const auto& b) {
                              return std::abs(a.first - b.first) < 1e-9 && std::abs(a.second - b.second) < 1e-9;
                          }),
              pts.end());
    return pts;
}

struct MapOptions {
    double linewidth = 6.0;  // MHz, Lorentzian FWHM
    double contrast = 0.05;  // depth of the deepest map point
};

struct DegeneracyMap {
    AngleGrid grid;
    Vec3 reference = Vec3::UnitX();
    double amplitude = 0.0;
    MapOptions options;
    Eigen::MatrixXd pl;  // rows: phi index, columns: theta index
    std::vector<std::vector<std::string>> plane_labels;  // same layout, '+'-joined names or empty
    bool degenerate = false;  // no angular contrast (e.g. zero field)

    [[nodiscard]] std::pair<int, int> argmin() const {
        Eigen::Index i = 0, j = 0;
        pl.minCoeff(&i, &j);
        return {static_cast<int>(i), static_cast<int>(j)};
    }
};

namespace detail {

inline double lorentzian(double detuning, double fwhm) {
    const double u = 2.0 * detuning / fwhm;
    return 1.0 / (1.0 + u * u);
}

}  // namespace detail

/// Sum over class pairs and branch pairs of a Lorentzian in the detuning.
[[nodiscard]] inline double degeneracy_strength(const MagneticField& field, const SpinSpecies& nv, double linewidth) {
    const auto f = class_probe_frequencies(field, nv);
    double s = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i)
        for (std::size_t j = i + 1; j < f.size(); ++j)
            for (double a : f[i])
                for (double b : f[j]) s += detail::lorentzian(a - b, linewidth);
    return s;
}

[[nodiscard]] inline DegeneracyMap simulate_map(const AngleGrid& grid, double amplitude, const SpinSpecies& nv,
                                                const Vec3& reference = Vec3::UnitX(), const MapOptions& opt = {}) {
    grid.validate();
    if (!(opt.linewidth > 0.0)) throw ConfigError("linewidth must be positive");
    if (!(opt.contrast > 0.0 && opt.contrast < 1.0)) throw ConfigError("contrast must lie in (0, 1)");
    if (!(amplitude >= 0.0)) throw ConfigError("field amplitude must be >= 0");
    DegeneracyMap map;
    map.grid = grid;
    map.reference = reference.normalized();
    map.amplitude = amplitude;
    map.options = opt;
    Eigen::MatrixXd s(grid.phi_steps, grid.theta_steps);
    for (int i = 0; i < grid.phi_steps; ++i)
        for (int j = 0; j < grid.theta_steps; ++j)
            s(i, j) = degeneracy_strength(field_from_angles(map.reference, grid.phi(i), grid.theta(j), amplitude), nv,
                                          opt.linewidth);
    const double smax = s.maxCoeff(), smin = s.minCoeff();
    map.degenerate = smax - smin <= 1e-12 * smax;
    map.pl = Eigen::MatrixXd::Ones(grid.phi_steps, grid.theta_steps) - (opt.contrast / smax) * s;

    const auto planes = degeneracy_planes(map.reference);
    const double cell = std::max(grid.phi_cell(), grid.theta_cell()) * kDegree;
    map.plane_labels.assign(static_cast<std::size_t>(grid.phi_steps),
                            std::vector<std::string>(static_cast<std::size_t>(grid.theta_steps)));
    for (int i = 0; i < grid.phi_steps; ++i)
        for (int j = 0; j < grid.theta_steps; ++j) {
            const Vec3 b = field_from_angles(map.reference, grid.phi(i), grid.theta(j), 1.0).axis;
            std::string label;
            for (const auto& p : planes)
                if (std::asin(std::min(1.0, std::abs(b.dot(p.normal)))) <= 0.5 * cell)
                    label += (label.empty() ? "" : "+") + p.name;
            map.plane_labels[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = label;
        }
    return map;
}

}  // namespace crosspeak
