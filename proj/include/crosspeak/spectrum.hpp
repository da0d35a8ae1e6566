#pragma once

// PL scan analysis: voltage-to-field calibration from microwave fiducials, quartic
// baseline removal, dip detection, Gaussian dip fits and inversion of a fitted dip
// center into the zero-field splitting of the partner defect.

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "crosspeak/crossing_engine.hpp"
#include "crosspeak/errors.hpp"
#include "crosspeak/spin_core.hpp"

namespace crosspeak {

enum class AbscissaKind { Voltage, Field };

struct SpectrumMetadata {
    std::string sweep_axis = "100";
    std::string sample_id;
    double integration_time = 0.0;  // s
};

struct Spectrum {
    std::vector<double> abscissa;  // V or G
    std::vector<double> counts;
    AbscissaKind kind = AbscissaKind::Field;
    SpectrumMetadata metadata;

    [[nodiscard]] std::size_t size() const { return abscissa.size(); }

    void validate() const {
        if (abscissa.size() != counts.size()) throw ConfigError("spectrum abscissa and counts differ in length");
        if (abscissa.size() < 16) throw ConfigError("spectrum needs at least 16 points");
        for (std::size_t k = 0; k < abscissa.size(); ++k)
            if (!std::isfinite(abscissa[k]) || !std::isfinite(counts[k]))
                throw ConfigError("spectrum contains non-finite values");
        const bool up = abscissa[1] > abscissa[0];
        for (std::size_t k = 1; k < abscissa.size(); ++k)
            if (up ? !(abscissa[k] > abscissa[k - 1]) : !(abscissa[k] < abscissa[k - 1]))
                throw ConfigError("spectrum abscissa must be strictly monotone");
    }
};

// ---------------------------------------------------------------------------
// calibration

struct Fiducial {
    double voltage = 0.0;
    double frequency = 0.0;  // MHz
};

struct CalibrationAnchor {
    double voltage = 0.0;
    double field = 0.0;  // G
    double frequency = 0.0;
    std::string branch;  // NV transition used, or "zero-field"
};

/// Piecewise-linear voltage -> field map; linear extrapolation beyond the end anchors.
class CalibrationMap {
public:
    CalibrationMap() = default;
    explicit CalibrationMap(std::vector<CalibrationAnchor> anchors) : anchors_(std::move(anchors)) {
        if (anchors_.size() < 2) throw ConfigError("calibration needs at least 2 fiducials");
        std::sort(anchors_.begin(), anchors_.end(),
                  [](const CalibrationAnchor& a, const CalibrationAnchor& b) { return a.voltage < b.voltage; });
        for (std::size_t k = 1; k < anchors_.size(); ++k)
            if (!(anchors_[k].voltage > anchors_[k - 1].voltage))
                throw ConfigError("calibration fiducials share a voltage");
        const bool up = anchors_[1].field > anchors_[0].field;
        for (std::size_t k = 1; k < anchors_.size(); ++k)
            if (up ? !(anchors_[k].field > anchors_[k - 1].field) : !(anchors_[k].field < anchors_[k - 1].field))
                throw ConfigError("calibration anchors are not monotone in voltage");
    }

    [[nodiscard]] const std::vector<CalibrationAnchor>& anchors() const { return anchors_; }

    [[nodiscard]] double to_field(double v) const {
        const std::size_t k = segment(v, [](const CalibrationAnchor& a) { return a.voltage; }, true);
        const auto& a = anchors_[k];
        const auto& b = anchors_[k + 1];
        return a.field + (b.field - a.field) * (v - a.voltage) / (b.voltage - a.voltage);
    }

    [[nodiscard]] double to_voltage(double field) const {
        const bool up = anchors_.back().field > anchors_.front().field;
        const std::size_t k = segment(field, [](const CalibrationAnchor& a) { return a.field; }, up);
        const auto& a = anchors_[k];
        const auto& b = anchors_[k + 1];
        return a.voltage + (b.voltage - a.voltage) * (field - a.field) / (b.field - a.field);
    }

    [[nodiscard]] bool extrapolates(double v) const {
        return v < anchors_.front().voltage || v > anchors_.back().voltage;
    }

    /// Ratio of the steepest to the shallowest segment slope (1 for a linear magnet).
    [[nodiscard]] double slope_spread() const {
        double lo = INFINITY, hi = 0.0;
        for (std::size_t k = 0; k + 1 < anchors_.size(); ++k) {
            const double s = std::abs((anchors_[k + 1].field - anchors_[k].field) /
                                      (anchors_[k + 1].voltage - anchors_[k].voltage));
            lo = std::min(lo, s);
            hi = std::max(hi, s);
        }
        return hi / lo;
    }

private:
    template <class Key>
    std::size_t segment(double x, Key key, bool ascending) const {
        const std::size_t n = anchors_.size();
        std::size_t k = 0;
        while (k + 2 < n && (ascending ? x > key(anchors_[k + 1]) : x < key(anchors_[k + 1]))) ++k;
        return k;
    }

    std::vector<CalibrationAnchor> anchors_;
};

inline constexpr double kCalibrationMaxField = 400.0;  // G, search range for fiducial inversion

namespace detail {

inline std::pair<std::string, std::string> split_transition(const std::string& id) {
    const auto p = id.find("->");
    if (p == std::string::npos) throw ConfigError("transition '" + id + "' is not of the form from->to");
    return {id.substr(0, p), id.substr(p + 2)};
}

inline std::size_t label_index(const std::vector<StateLabel>& labels, const std::string& name) {
    for (std::size_t k = 0; k < labels.size(); ++k)
        if (labels[k].name == name) return k;
    throw ConfigError("no state labeled '" + name + "'");
}

/// Frequency of one labeled transition along `axis` at `field`, tracked from zero field.
inline double tracked_frequency(const SpinSpecies& s, const OrientationClass& cls, const Vec3& axis, double field,
                                const std::string& transition, double max_step = 0.5) {
    const auto [from, to] = split_transition(transition);
    const std::vector<double> at{field};
    const LevelTrack track(s, cls, axis, at, max_step);
    if (!track.diagnostic().ok())
        throw NumericalError("state tracking lost adiabaticity at " + std::to_string(track.diagnostic().worst_field) +
                             " G");
    return std::abs(track.energy(0, label_index(track.labels(), to)) -
                    track.energy(0, label_index(track.labels(), from)));
}

/// First root of f(B) = target on [0, b_max] for one tracked transition.
inline double invert_branch(const SpinSpecies& nv, const OrientationClass& cls, const Vec3& axis,
                            const std::string& transition, double target, double b_max) {
    const auto [from, to] = split_transition(transition);
    SweepSpec spec;
    spec.axis = axis;
    spec.b_min = 0.0;
    spec.b_max = b_max;
    spec.step = 0.5;
    const auto grid = spec.grid();
    const LevelTrack track(nv, cls, spec.unit_axis(), grid, 0.5);
    const std::size_t i = label_index(track.labels(), from), j = label_index(track.labels(), to);
    auto freq = [&](double b) {
        const auto le = track.at(b);
        return std::abs(le.energies[static_cast<Eigen::Index>(j)] - le.energies[static_cast<Eigen::Index>(i)]);
    };
    double prev = std::abs(track.energy(0, j) - track.energy(0, i)) - target;
    for (std::size_t k = 1; k < grid.size(); ++k) {
        const double cur = std::abs(track.energy(k, j) - track.energy(k, i)) - target;
        if (prev == 0.0) return grid[k - 1];
        if ((prev < 0) != (cur < 0)) {
            double lo = grid[k - 1], hi = grid[k], glo = prev;
            for (int it = 0; it < 200 && hi - lo > 1e-10; ++it) {
                const double mid = 0.5 * (lo + hi);
                const double g = freq(mid) - target;
                if ((g < 0) == (glo < 0)) {
                    lo = mid;
                    glo = g;
                } else {
                    hi = mid;
                }
            }
            return 0.5 * (lo + hi);
        }
        prev = cur;
    }
    throw DomainError("microwave frequency " + std::to_string(target) + " MHz is not reached on " + transition +
                      " below " + std::to_string(b_max) + " G");
}

}  // namespace detail

/// Field at which an NV probe transition along `axis` equals `frequency`. The upper
/// branch is used above D, the lower below it, and exactly D maps to zero field.
[[nodiscard]] inline CalibrationAnchor invert_fiducial(const Fiducial& f, const SpinSpecies& nv, const Vec3& axis,
                                                       double b_max = kCalibrationMaxField) {
    if (nv.spin != Spin::One || nv.nuclear) throw ConfigError("calibration needs a bare spin-1 NV species");
    if (!(f.frequency > 0.0)) throw ConfigError("fiducial frequency must be positive");
    const OrientationClass cls = most_aligned_class(nv, axis);
    if (std::abs(f.frequency - nv.zfs_d) <= 1e-9 * nv.zfs_d) return {f.voltage, 0.0, f.frequency, "zero-field"};
    const std::string branch = f.frequency > nv.zfs_d ? "ms=0->ms=+1" : "ms=0->ms=-1";
    return {f.voltage, detail::invert_branch(nv, cls, axis, branch, f.frequency, b_max), f.frequency, branch};
}

[[nodiscard]] inline CalibrationMap calibrate(const Spectrum& spectrum, const std::vector<Fiducial>& fiducials,
                                              const SpinSpecies& nv, const Vec3& axis) {
    spectrum.validate();
    if (spectrum.kind != AbscissaKind::Voltage) throw ConfigError("calibration applies to voltage-abscissa scans");
    std::vector<CalibrationAnchor> anchors;
    for (const auto& f : fiducials) anchors.push_back(invert_fiducial(f, nv, axis));
    return CalibrationMap(std::move(anchors));
}

/// Voltage scan mapped onto field; returned in ascending field order.
[[nodiscard]] inline Spectrum to_field(const Spectrum& spectrum, const CalibrationMap& map) {
    spectrum.validate();
    if (spectrum.kind != AbscissaKind::Voltage) throw ConfigError("spectrum is already field-calibrated");
    Spectrum out;
    out.kind = AbscissaKind::Field;
    out.metadata = spectrum.metadata;
    for (std::size_t k = 0; k < spectrum.size(); ++k) {
        out.abscissa.push_back(map.to_field(spectrum.abscissa[k]));
        out.counts.push_back(spectrum.counts[k]);
    }
    if (out.abscissa.front() > out.abscissa.back()) {
        std::reverse(out.abscissa.begin(), out.abscissa.end());
        std::reverse(out.counts.begin(), out.counts.end());
    }
    return out;
}

// ---------------------------------------------------------------------------
// baseline

struct FieldWindow {
    double lo = 0.0, hi = 0.0;  // G
    [[nodiscard]] bool contains(double b) const { return b >= lo && b <= hi; }
};

inline constexpr int kBaselineOrder = 4;

struct BaselineFit {
    // p(B) = sum_k normalized[k] * t^k with t = (B - center) / scale
    Eigen::Matrix<double, 5, 1> normalized = Eigen::Matrix<double, 5, 1>::Zero();
    double center = 0.0, scale = 1.0;
    Eigen::Matrix<double, 5, 5> unscaled_covariance = Eigen::Matrix<double, 5, 5>::Zero();  // (X^T X)^-1
    std::vector<FieldWindow> excluded_windows;
    std::size_t points_used = 0;
    double rms = 0.0;  // residual RMS over points used

    [[nodiscard]] double operator()(double b) const {
        const double t = (b - center) / scale;
        double v = 0.0;
        for (int k = kBaselineOrder; k >= 0; --k) v = v * t + normalized[k];
        return v;
    }

    /// Coefficients c0..c4 of the same polynomial in B itself.
    [[nodiscard]] std::array<double, 5> coefficients() const {
        std::array<double, 5> c{};
        // expand sum_k a_k (B - m)^k / s^k
        for (int k = 0; k <= kBaselineOrder; ++k) {
            const double ak = normalized[k] / std::pow(scale, k);
            double binom = 1.0;
            for (int j = 0; j <= k; ++j) {
                c[static_cast<std::size_t>(j)] += ak * binom * std::pow(-center, k - j);
                binom = binom * (k - j) / (j + 1);
            }
        }
        return c;
    }

    /// OLS covariance of the normalized coefficients given a per-point noise sigma.
    [[nodiscard]] Eigen::Matrix<double, 5, 5> covariance(double noise_sigma) const {
        return noise_sigma * noise_sigma * unscaled_covariance;
    }
};

namespace detail {

inline bool excluded(double b, const std::vector<FieldWindow>& windows) {
    return std::any_of(windows.begin(), windows.end(), [&](const FieldWindow& w) { return w.contains(b); });
}

/// Least-squares polynomial of the given order in t; returns coefficients and (X^T X)^-1.
inline std::pair<Eigen::VectorXd, Eigen::MatrixXd> polyfit(const std::vector<double>& t, const std::vector<double>& y,
                                                           int order) {
    const auto n = static_cast<Eigen::Index>(t.size());
    Eigen::MatrixXd x(n, order + 1);
    Eigen::VectorXd rhs(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        double p = 1.0;
        for (int k = 0; k <= order; ++k) {
            x(i, k) = p;
            p *= t[static_cast<std::size_t>(i)];
        }
        rhs[i] = y[static_cast<std::size_t>(i)];
    }
    const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
    if (qr.rank() < order + 1) throw ConfigError("baseline fit is rank deficient");
    const Eigen::VectorXd coef = qr.solve(rhs);
    const Eigen::MatrixXd xtx = x.transpose() * x;
    return {coef, xtx.inverse()};
}

}  // namespace detail

/// Quartic OLS fit of the counts outside `windows`.
[[nodiscard]] inline BaselineFit fit_baseline(const Spectrum& s, const std::vector<FieldWindow>& windows = {}) {
    s.validate();
    if (s.kind != AbscissaKind::Field) throw ConfigError("baseline fit needs a field-calibrated spectrum");
    BaselineFit fit;
    fit.excluded_windows = windows;
    const auto [mn, mx] = std::minmax_element(s.abscissa.begin(), s.abscissa.end());
    fit.center = 0.5 * (*mn + *mx);
    fit.scale = 0.5 * (*mx - *mn);
    std::vector<double> t, y;
    for (std::size_t k = 0; k < s.size(); ++k) {
        if (detail::excluded(s.abscissa[k], windows)) continue;
        t.push_back((s.abscissa[k] - fit.center) / fit.scale);
        y.push_back(s.counts[k]);
    }
    if (t.size() < 6) throw ConfigError("baseline fit needs at least 6 points outside the excluded windows");
    const auto [coef, inv] = detail::polyfit(t, y, kBaselineOrder);
    fit.normalized = coef;
    fit.unscaled_covariance = inv;
    fit.points_used = t.size();
    double ss = 0.0;
    for (std::size_t k = 0; k < t.size(); ++k) {
        double v = 0.0;
        for (int j = kBaselineOrder; j >= 0; --j) v = v * t[k] + coef[j];
        ss += (y[k] - v) * (y[k] - v);
    }
    fit.rms = std::sqrt(ss / static_cast<double>(t.size()));
    return fit;
}

[[nodiscard]] inline Spectrum subtract(const Spectrum& s, const BaselineFit& fit) {
    Spectrum out = s;
    for (std::size_t k = 0; k < s.size(); ++k) out.counts[k] = s.counts[k] - fit(s.abscissa[k]);
    return out;
}

// ---------------------------------------------------------------------------
// dip detection

struct DetectOptions {
    double k = 5.0;              // threshold in units of the robust noise
    int smoothing = 7;           // moving-average points (odd)
    double noise_floor = 0.0;    // lower bound on the noise estimate, counts
};

struct PeakWindow {
    double lo = 0.0, hi = 0.0;  // G
    double center = 0.0;        // G, smoothed minimum
    double width = 0.0;         // G, sigma estimate
    double depth = 0.0;         // counts, positive
    bool edge_truncated = false;
};

namespace detail {

inline std::vector<double> moving_average(const std::vector<double>& y, int w) {
    const int n = static_cast<int>(y.size());
    const int h = std::max(0, w / 2);
    std::vector<double> out(y.size());
    for (int i = 0; i < n; ++i) {
        const int a = std::max(0, i - h), b = std::min(n - 1, i + h);
        double s = 0.0;
        for (int j = a; j <= b; ++j) s += y[static_cast<std::size_t>(j)];
        out[static_cast<std::size_t>(i)] = s / (b - a + 1);
    }
    return out;
}

inline double median(std::vector<double> v) {
    const std::size_t n = v.size();
    std::nth_element(v.begin(), v.begin() + static_cast<long>(n / 2), v.end());
    double m = v[n / 2];
    if (n % 2 == 0) m = 0.5 * (m + *std::max_element(v.begin(), v.begin() + static_cast<long>(n / 2)));
    return m;
}

}  // namespace detail

/// Scaled median absolute deviation (consistent with sigma for Gaussian noise).
[[nodiscard]] inline double robust_sigma(const std::vector<double>& y) {
    if (y.empty()) return 0.0;
    const double m = detail::median(y);
    std::vector<double> dev;
    dev.reserve(y.size());
    for (double v : y) dev.push_back(std::abs(v - m));
    return 1.4826 * detail::median(std::move(dev));
}

/// Dips in a baseline-subtracted spectrum that reach below -k * noise after smoothing.
[[nodiscard]] inline std::vector<PeakWindow> detect_peaks(const Spectrum& residual, const DetectOptions& opt = {}) {
    residual.validate();
    const auto& x = residual.abscissa;
    const auto ys = detail::moving_average(residual.counts, opt.smoothing);
    const double noise = std::max(robust_sigma(ys), opt.noise_floor);
    const double step = std::abs(x.back() - x.front()) / static_cast<double>(x.size() - 1);
    const double x_lo = std::min(x.front(), x.back()), x_hi = std::max(x.front(), x.back());
    const double threshold = -opt.k * noise;
    if (!(noise > 0.0)) return {};

    std::vector<PeakWindow> found;
    const std::size_t n = ys.size();
    for (std::size_t i = 0; i < n;) {
        if (!(ys[i] < threshold)) {
            ++i;
            continue;
        }
        std::size_t j = i;
        std::size_t imin = i;
        while (j < n && ys[j] < threshold) {
            if (ys[j] < ys[imin]) imin = j;
            ++j;
        }
        const double depth = -ys[imin];
        // half-depth crossings on either side
        std::size_t l = imin, r = imin;
        while (l > 0 && ys[l] < -0.5 * depth) --l;
        while (r + 1 < n && ys[r] < -0.5 * depth) ++r;
        const bool open_left = ys[l] < -0.5 * depth, open_right = ys[r] < -0.5 * depth;
        double fwhm = std::abs(x[r] - x[l]);
        if (open_left != open_right) fwhm = 2.0 * std::abs(open_left ? x[r] - x[imin] : x[imin] - x[l]);
        PeakWindow w;
        w.center = x[imin];
        w.depth = depth;
        w.width = std::max(fwhm / 2.3548, step);
        const double half = std::max(3.0 * w.width, 3.5 * step);
        w.lo = w.center - half;
        w.hi = w.center + half;
        w.edge_truncated = open_left || open_right || w.lo < x_lo || w.hi > x_hi;
        w.lo = std::max(w.lo, x_lo);
        w.hi = std::min(w.hi, x_hi);
        found.push_back(w);
        i = j;
    }
    // weaker candidates inside +-2 sigma of a stronger one are the same dip
    std::vector<std::size_t> order(found.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return found[a].depth > found[b].depth; });
    std::vector<PeakWindow> kept;
    for (std::size_t idx : order) {
        const auto& c = found[idx];
        const bool shadowed = std::any_of(kept.begin(), kept.end(), [&](const PeakWindow& k) {
            return std::abs(c.center - k.center) <= 2.0 * k.width;
        });
        if (!shadowed) kept.push_back(c);
    }
    std::sort(kept.begin(), kept.end(), [](const PeakWindow& a, const PeakWindow& b) { return a.center < b.center; });
    return kept;
}

// ---------------------------------------------------------------------------
// dip fits

enum class LineShape { Gaussian, Lorentzian };

struct PeakFit {
    double center = 0.0;  // G
    double sigma = 0.0;   // G (half width at half maximum for Lorentzian)
    double depth = 0.0;   // counts
    Eigen::Matrix3d covariance = Eigen::Matrix3d::Zero();  // (center, sigma, depth)
    double contrast = 0.0;
    LineShape shape = LineShape::Gaussian;
    FieldWindow window;
    bool converged = false;
    bool poor_fit = false;
    int iterations = 0;
    double runs_z = 0.0;
    double rms = 0.0;
    std::vector<double> cost_history;  // accepted LM costs, first entry is the start

    [[nodiscard]] double center_error() const { return std::sqrt(std::max(0.0, covariance(0, 0))); }
};

inline constexpr double kRunsTestThreshold = -3.0;

namespace detail {

inline double line_value(LineShape shape, const Eigen::Vector3d& p, double x) {
    const double u = (x - p[0]) / p[1];
    return shape == LineShape::Gaussian ? -p[2] * std::exp(-0.5 * u * u) : -p[2] / (1.0 + u * u);
}

// d/d(center, sigma, depth)
inline Eigen::RowVector3d line_gradient(LineShape shape, const Eigen::Vector3d& p, double x) {
    const double u = (x - p[0]) / p[1];
    if (shape == LineShape::Gaussian) {
        const double e = std::exp(-0.5 * u * u);
        return {-p[2] * e * u / p[1], -p[2] * e * u * u / p[1], -e};
    }
    const double d = 1.0 / (1.0 + u * u);
    return {-p[2] * d * d * 2.0 * u / p[1], -p[2] * d * d * 2.0 * u * u / p[1], -d};
}

/// Wald-Wolfowitz runs statistic of residual signs; strongly negative z means
/// structured residuals.
inline double runs_z(const std::vector<double>& r) {
    std::vector<int> s;
    for (double v : r)
        if (v != 0.0) s.push_back(v > 0 ? 1 : -1);
    const double np = static_cast<double>(std::count(s.begin(), s.end(), 1));
    const double nm = static_cast<double>(s.size()) - np;
    if (np < 1 || nm < 1) return 0.0;
    double runs = 1;
    for (std::size_t k = 1; k < s.size(); ++k)
        if (s[k] != s[k - 1]) ++runs;
    const double n = np + nm;
    const double mu = 2.0 * np * nm / n + 1.0;
    const double var = (mu - 1.0) * (mu - 2.0) / (n - 1.0);
    return var > 0 ? (runs - mu) / std::sqrt(var) : 0.0;
}

}  // namespace detail

struct FitOptions {
    LineShape shape = LineShape::Gaussian;
    int max_iterations = 200;
    double relative_tolerance = 1e-10;
};

/// Levenberg-Marquardt fit of a single dip inside `window`.
[[nodiscard]] inline PeakFit fit_gaussian(const Spectrum& residual, const FieldWindow& window,
                                          const FitOptions& opt = {}) {
    std::vector<double> x, y;
    for (std::size_t k = 0; k < residual.size(); ++k)
        if (window.contains(residual.abscissa[k])) {
            x.push_back(residual.abscissa[k]);
            y.push_back(residual.counts[k]);
        }
    if (x.size() < 7) throw ConfigError("peak window holds fewer than 7 points");
    const std::size_t n = x.size();

    // start: window minimum and second moment of the dip
    const std::size_t imin = static_cast<std::size_t>(std::min_element(y.begin(), y.end()) - y.begin());
    double wsum = 0.0, m2 = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const double w = std::max(-y[k], 0.0);
        wsum += w;
        m2 += w * (x[k] - x[imin]) * (x[k] - x[imin]);
    }
    const double step = (x.back() - x.front()) / static_cast<double>(n - 1);
    double s0 = wsum > 0 ? std::sqrt(m2 / wsum) : 0.25 * (x.back() - x.front());
    s0 = std::clamp(s0, step, 0.5 * (x.back() - x.front()));
    Eigen::Vector3d p(x[imin], s0, std::max(-y[imin], 1e-12));

    auto cost_of = [&](const Eigen::Vector3d& q) {
        double c = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            const double r = y[k] - detail::line_value(opt.shape, q, x[k]);
            c += r * r;
        }
        return 0.5 * c;
    };

    PeakFit fit;
    fit.shape = opt.shape;
    fit.window = window;
    double cost = cost_of(p);
    fit.cost_history.push_back(cost);
    double lambda = 1e-3;
    Eigen::MatrixXd jac(static_cast<Eigen::Index>(n), 3);
    Eigen::VectorXd res(static_cast<Eigen::Index>(n));
    int it = 0;
    for (; it < opt.max_iterations; ++it) {
        for (std::size_t k = 0; k < n; ++k) {
            jac.row(static_cast<Eigen::Index>(k)) = detail::line_gradient(opt.shape, p, x[k]);
            res[static_cast<Eigen::Index>(k)] = y[k] - detail::line_value(opt.shape, p, x[k]);
        }
        const Eigen::Matrix3d jtj = jac.transpose() * jac;
        const Eigen::Vector3d g = jac.transpose() * res;
        bool accepted = false;
        while (lambda < 1e16) {
            Eigen::Matrix3d a = jtj;
            a.diagonal() += lambda * jtj.diagonal().cwiseMax(1e-300);
            const Eigen::Vector3d delta = a.ldlt().solve(g);
            Eigen::Vector3d trial = p + delta;
            trial[1] = std::abs(trial[1]);
            const double c = trial.allFinite() && trial[1] > 0 ? cost_of(trial) : INFINITY;
            if (c < cost) {
                const double rel = (cost - c) / std::max(cost, 1e-300);
                p = trial;
                cost = c;
                fit.cost_history.push_back(c);
                lambda = std::max(lambda / 10.0, 1e-12);
                accepted = true;
                if (rel < opt.relative_tolerance) fit.converged = true;
                break;
            }
            lambda *= 10.0;
        }
        // no downhill step left at any damping: already at the floating-point minimum
        if (!accepted) fit.converged = true;
        if (fit.converged) break;
    }
    fit.iterations = it + 1;

    std::vector<double> r(n);
    for (std::size_t k = 0; k < n; ++k) {
        jac.row(static_cast<Eigen::Index>(k)) = detail::line_gradient(opt.shape, p, x[k]);
        r[k] = y[k] - detail::line_value(opt.shape, p, x[k]);
    }
    fit.center = p[0];
    fit.sigma = std::abs(p[1]);
    fit.depth = p[2];
    fit.rms = std::sqrt(2.0 * cost / static_cast<double>(n));
    const double s2 = 2.0 * cost / static_cast<double>(n - 3);
    const Eigen::Matrix3d jtj = jac.transpose() * jac;
    Eigen::Matrix3d cov = s2 * jtj.inverse();
    fit.covariance = 0.5 * (cov + cov.transpose());
    fit.runs_z = detail::runs_z(r);
    const bool negligible = fit.rms <= 1e-9 * std::max(std::abs(fit.depth), 1e-300);
    fit.poor_fit = !negligible && fit.runs_z < kRunsTestThreshold;
    if (!window.contains(fit.center) || !(fit.depth > 0)) fit.poor_fit = true;
    return fit;
}

// ---------------------------------------------------------------------------
// whole-scan analysis

struct Analysis {
    BaselineFit baseline;
    Spectrum residual;
    std::vector<PeakWindow> windows;
    std::vector<PeakFit> peaks;
};

/// Two-pass scheme: baseline over everything, detect dips on that residual, refit the
/// baseline without them, detect again, then fit each window. User windows, when
/// given, replace the first pass.
[[nodiscard]] inline Analysis analyze(const Spectrum& s, const std::vector<FieldWindow>& user_windows = {},
                                      const DetectOptions& detect = {}, const FitOptions& fit = {}) {
    Analysis a;
    // residual noise below rounding of the raw counts is not noise
    DetectOptions det = detect;
    double scale = 0.0;
    for (double c : s.counts) scale = std::max(scale, std::abs(c));
    det.noise_floor = std::max(det.noise_floor, 1e-9 * scale);
    std::vector<FieldWindow> excl = user_windows;
    if (excl.empty()) {
        const auto first = subtract(s, fit_baseline(s));
        for (const auto& w : detect_peaks(first, det)) excl.push_back({w.lo, w.hi});
    }
    a.baseline = fit_baseline(s, excl);
    a.residual = subtract(s, a.baseline);
    a.windows = detect_peaks(a.residual, det);
    for (const auto& w : a.windows) {
        auto pf = fit_gaussian(a.residual, {w.lo, w.hi}, fit);
        const double base = a.baseline(pf.center);
        pf.contrast = base != 0.0 ? pf.depth / base : 0.0;
        a.peaks.push_back(pf);
    }
    return a;
}

// ---------------------------------------------------------------------------
// zero-field splitting inversion

/// Which NV transition meets which partner transition at the dip.
struct AssumedCrossing {
    std::string nv_transition = "ms=0->ms=-1";
    std::string target_transition = "ms=0->ms=+1";
};

struct ZfsOptions {
    double d_min = 2000.0, d_max = 3000.0;  // MHz, search interval
    double tolerance = 1e-3;                // MHz
    double nv_d_uncertainty = 1.0;          // MHz
    int tilt_azimuths = 12;
    double track_step = 0.5;  // G
};

struct ZfsContributions {
    double angle = 0.0, calibration = 0.0, fit = 0.0, nv_reference = 0.0;  // MHz
};

struct ZfsEstimate {
    double d = 0.0;        // MHz
    double sigma_d = 0.0;  // MHz
    ZfsContributions contributions;
};

/// Partner species for inversion: spin 1, E = 0, NV gyromagnetic ratio, <111> classes.
[[nodiscard]] inline SpinSpecies zfs_target_template(const SpinSpecies& nv, double d) {
    SpinSpecies t;
    t.name = "target";
    t.spin = Spin::One;
    t.zfs_d = d;
    t.gamma_e = nv.gamma_e;
    t.orientation = OrientationKind::Trigonal111;
    return t;
}

/// D of the partner such that `crossing` happens exactly at `field` along `axis`,
/// for a given pair of orientation classes.
[[nodiscard]] inline double solve_zfs(double field, const SpinSpecies& nv, const OrientationClass& nv_class,
                                      const OrientationClass& target_class, const AssumedCrossing& crossing,
                                      const Vec3& axis, const ZfsOptions& opt = {}) {
    if (!(field >= 0.0)) throw DomainError("crossing field must be >= 0");
    const double f_nv =
        detail::tracked_frequency(nv, nv_class, axis, field, crossing.nv_transition, opt.track_step);
    auto gap = [&](double d) {
        return detail::tracked_frequency(zfs_target_template(nv, d), target_class, axis, field,
                                         crossing.target_transition, opt.track_step) -
               f_nv;
    };
    double lo = opt.d_min, hi = opt.d_max;
    double glo = gap(lo);
    const double ghi = gap(hi);
    if (glo == 0.0) return lo;
    if (ghi == 0.0) return hi;
    if ((glo < 0) == (ghi < 0))
        throw DomainError("no D in [" + std::to_string(opt.d_min) + ", " + std::to_string(opt.d_max) +
                          "] MHz puts the crossing at " + std::to_string(field) + " G");
    while (hi - lo > opt.tolerance) {
        const double mid = 0.5 * (lo + hi);
        const double g = gap(mid);
        if (g == 0.0) return mid;
        if ((g < 0) == (glo < 0)) {
            lo = mid;
            glo = g;
        } else {
            hi = mid;
        }
    }
    return 0.5 * (lo + hi);
}

namespace detail {

inline Vec3 tilted(const Vec3& axis, double angle_deg, double azimuth_rad) {
    const Vec3 u = axis.normalized();
    Vec3 p = u.unitOrthogonal();
    const Vec3 q = u.cross(p);
    const Vec3 dir = std::cos(azimuth_rad) * p + std::sin(azimuth_rad) * q;
    const double a = angle_deg * M_PI / 180.0;
    return (std::cos(a) * u + std::sin(a) * dir).normalized();
}

inline double half_difference(double plus, double minus) { return 0.5 * std::abs(plus - minus); }

// Same class with its symmetry axis flipped, if needed, to point along `axis`, so
// that "ms=+1" is the branch that rises with the field for every class.
inline OrientationClass facing(OrientationClass c, const Vec3& axis) {
    if (c.symmetry_axis.dot(axis) < 0.0) c.symmetry_axis = -c.symmetry_axis;
    return c;
}

}  // namespace detail

/// D of the partner defect from a fitted dip, with the spread from fit, calibration,
/// field angle and NV reference combined in quadrature.
[[nodiscard]] inline ZfsEstimate infer_zfs(const PeakFit& peak, double cal_uncertainty, double angle_uncertainty,
                                           const SpinSpecies& nv, const AssumedCrossing& crossing, const Vec3& axis,
                                           const ZfsOptions& opt = {}) {
    if (nv.spin != Spin::One || nv.nuclear) throw ConfigError("ZFS inversion needs a bare spin-1 NV species");
    if (!(cal_uncertainty >= 0.0) || !(angle_uncertainty >= 0.0))
        throw ConfigError("uncertainties must be non-negative");
    const Vec3 u = axis.normalized();
    const OrientationClass cls = most_aligned_class(nv, u);
    auto solve_at = [&](double b, const SpinSpecies& ref) { return solve_zfs(b, ref, cls, cls, crossing, u, opt); };

    ZfsEstimate est;
    est.d = solve_at(peak.center, nv);

    const double sc = peak.center_error();
    if (sc > 0.0)
        est.contributions.fit =
            detail::half_difference(solve_at(peak.center + sc, nv), solve_at(std::max(0.0, peak.center - sc), nv));
    if (cal_uncertainty > 0.0)
        est.contributions.calibration = detail::half_difference(
            solve_at(peak.center + cal_uncertainty, nv), solve_at(std::max(0.0, peak.center - cal_uncertainty), nv));
    if (opt.nv_d_uncertainty > 0.0) {
        SpinSpecies hi = nv, lo = nv;
        hi.zfs_d += opt.nv_d_uncertainty;
        lo.zfs_d -= opt.nv_d_uncertainty;
        est.contributions.nv_reference = detail::half_difference(solve_at(peak.center, hi), solve_at(peak.center, lo));
    }
    if (angle_uncertainty > 0.0) {
        // Worst tilt over azimuths and over the class pairs that are equivalent to the
        // nominal pair along the untilted axis.
        const auto classes = nv.orientation_classes();
        const double proj = std::abs(cls.symmetry_axis.dot(u));
        std::vector<OrientationClass> equivalent;
        for (const auto& c : classes)
            if (std::abs(std::abs(c.symmetry_axis.dot(u)) - proj) < 1e-6) equivalent.push_back(detail::facing(c, u));
        double worst = 0.0;
        for (int k = 0; k < opt.tilt_azimuths; ++k) {
            const Vec3 t = detail::tilted(u, angle_uncertainty, 2.0 * M_PI * k / opt.tilt_azimuths);
            for (const auto& ci : equivalent)
                for (const auto& cj : equivalent) {
                    try {
                        worst = std::max(worst, std::abs(solve_zfs(peak.center, nv, ci, cj, crossing, t, opt) - est.d));
                    } catch (const DomainError&) {
                    }
                }
        }
        est.contributions.angle = worst;
    }
    const auto& c = est.contributions;
    est.sigma_d = std::sqrt(c.angle * c.angle + c.calibration * c.calibration + c.fit * c.fit +
                            c.nv_reference * c.nv_reference);
    return est;
}

}  // namespace crosspeak
