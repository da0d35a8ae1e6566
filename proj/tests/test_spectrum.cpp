#include <gtest/gtest.h>

#include <random>

#include "crosspeak/catalog.hpp"
#include "crosspeak/spectrum.hpp"
#include "support/synthetic.hpp"

using namespace crosspeak;

namespace {

const SpinSpecies& nv() {
    static const SpinSpecies s = Catalog::load(CROSSPEAK_DEFAULT_CATALOG).find("NV");
    return s;
}

Spectrum field_spectrum(const std::vector<double>& x, const std::vector<double>& y) {
    Spectrum s;
    s.abscissa = x;
    s.counts = y;
    s.kind = AbscissaKind::Field;
    return s;
}

Spectrum voltage_scan(int n = 50) {
    Spectrum s;
    s.kind = AbscissaKind::Voltage;
    for (int k = 0; k < n; ++k) {
        s.abscissa.push_back(0.1 * k);
        s.counts.push_back(1000.0);
    }
    return s;
}

double poly(const std::array<double, 5>& c, double x) {
    return c[0] + x * (c[1] + x * (c[2] + x * (c[3] + x * c[4])));
}

}  // namespace

// --- Spectrum ------------------------------------------------------------------

TEST(SpectrumTest, Validation) {
    Spectrum s = voltage_scan(10);
    EXPECT_THROW(s.validate(), ConfigError);
    s = voltage_scan(20);
    s.counts.pop_back();
    EXPECT_THROW(s.validate(), ConfigError);
    s = voltage_scan(20);
    s.abscissa[5] = s.abscissa[4];
    EXPECT_THROW(s.validate(), ConfigError);
    s = voltage_scan(20);
    std::reverse(s.abscissa.begin(), s.abscissa.end());
    EXPECT_NO_THROW(s.validate());
}

// --- calibration -----------------------------------------------------------------

TEST(Calibrate, ZeroFieldFiducial) {
    const auto a = invert_fiducial({1.0, 2870.0}, nv(), Vec3::UnitX());
    EXPECT_EQ(a.field, 0.0);
    EXPECT_EQ(a.branch, "zero-field");
}

TEST(Calibrate, AxialUpperBranch) {
    const auto a = invert_fiducial({1.0, 3150.25}, nv(), Vec3(1, 1, 1));
    EXPECT_NEAR(a.field, 100.0, 1e-6);
    EXPECT_EQ(a.branch, "ms=0->ms=+1");
}

TEST(Calibrate, LowerBranchAlongHundredMatchesGridScan) {
    const auto a = invert_fiducial({1.0, 2700.0}, nv(), Vec3::UnitX());
    // dense scan of the exact spectrum: lower probe line = E1 - E0 on this axis
    double best = 0.0, prev = 2870.0 - 2700.0;
    const double h = 1e-3;
    for (int k = 1; k * h <= 200.0; ++k) {
        const auto e = eigensystem(build_hamiltonian(nv(), MagneticField::along(Vec3::UnitX(), k * h),
                                                     trigonal_classes()[0]))
                           .values;
        const double g = (e[1] - e[0]) - 2700.0;
        if ((g < 0) != (prev < 0)) {
            best = (k - 0.5) * h;
            break;
        }
        prev = g;
    }
    EXPECT_NEAR(a.field, best, h);
    EXPECT_NEAR(a.field, 137.041547297, 1e-6);  // numpy reference
    EXPECT_EQ(a.branch, "ms=0->ms=-1");
}

TEST(Calibrate, UnreachableFrequency) {
    EXPECT_THROW((void)invert_fiducial({0.0, 5000.0}, nv(), Vec3::UnitX()), DomainError);
    EXPECT_THROW((void)invert_fiducial({0.0, 1000.0}, nv(), Vec3::UnitX()), DomainError);
}

TEST(Calibrate, BuildsMonotoneMap) {
    std::vector<Fiducial> fid;
    for (int k = 0; k < 6; ++k) fid.push_back({0.5 * k, 2870.0 + 20.0 * k});
    const auto map = calibrate(voltage_scan(), fid, nv(), Vec3::UnitX());
    ASSERT_EQ(map.anchors().size(), 6u);
    for (std::size_t k = 1; k < map.anchors().size(); ++k)
        EXPECT_GT(map.anchors()[k].field, map.anchors()[k - 1].field);
    for (const auto& a : map.anchors()) {
        EXPECT_NEAR(map.to_field(a.voltage), a.field, 1e-9);
        EXPECT_NEAR(map.to_voltage(map.to_field(a.voltage)), a.voltage, 1e-9);
    }
    double prev = -INFINITY;
    for (double v = -0.5; v <= 3.0; v += 0.01) {
        const double b = map.to_field(v);
        EXPECT_GT(b, prev);
        prev = b;
        EXPECT_NEAR(map.to_voltage(b), v, 1e-9);
    }
    EXPECT_TRUE(map.extrapolates(3.0));
    EXPECT_FALSE(map.extrapolates(1.0));
}

TEST(Calibrate, RejectsNonMonotoneAnchors) {
    const std::vector<Fiducial> fid{{0.0, 2870.0}, {1.0, 2900.0}, {2.0, 2890.0}};
    EXPECT_THROW((void)calibrate(voltage_scan(), fid, nv(), Vec3::UnitX()), ConfigError);
    EXPECT_THROW((void)calibrate(voltage_scan(), {{0.0, 2870.0}}, nv(), Vec3::UnitX()), ConfigError);
    Spectrum field = voltage_scan();
    field.kind = AbscissaKind::Field;
    EXPECT_THROW((void)calibrate(field, {{0.0, 2870.0}, {1.0, 2900.0}}, nv(), Vec3::UnitX()), ConfigError);
}

TEST(Calibrate, ToFieldReordersDescendingMaps) {
    const CalibrationMap map({{0.0, 100.0, 0.0, ""}, {5.0, 0.0, 0.0, ""}});
    const Spectrum s = to_field(voltage_scan(), map);
    EXPECT_NO_THROW(s.validate());
    EXPECT_LT(s.abscissa.front(), s.abscissa.back());
    EXPECT_DOUBLE_EQ(map.slope_spread(), 1.0);
}

// --- baseline ------------------------------------------------------------------

TEST(Baseline, ExactQuarticRecovered) {
    const std::array<double, 5> c{2.0e5, -150.0, -0.8, 4.0e-3, 2.0e-5};
    std::vector<double> x, y;
    for (int k = 0; k <= 1500; ++k) {
        x.push_back(0.1 * k);
        y.push_back(poly(c, x.back()));
    }
    const auto fit = fit_baseline(field_spectrum(x, y));
    const auto got = fit.coefficients();
    for (std::size_t k = 0; k < 5; ++k) EXPECT_NEAR(got[k], c[k], 1e-9 * std::abs(c[k])) << k;
    EXPECT_LT(fit.rms, 1e-9 * c[0]);
}

TEST(Baseline, ExcludedDipDoesNotBias) {
    const std::array<double, 5> c{2.0e5, -150.0, -0.8, 4.0e-3, 2.0e-5};
    std::vector<double> x, y;
    for (int k = 0; k <= 1500; ++k) {
        const double b = 0.1 * k;
        x.push_back(b);
        y.push_back(poly(c, b) - 3000.0 * std::exp(-0.5 * std::pow((b - 56.0) / 2.0, 2)));
    }
    const auto fit = fit_baseline(field_spectrum(x, y), {{40.0, 72.0}});
    const auto got = fit.coefficients();
    for (std::size_t k = 0; k < 5; ++k) EXPECT_NEAR(got[k], c[k], 1e-6 * std::abs(c[k])) << k;
    EXPECT_EQ(fit.points_used, 1501u - 321u);
}

TEST(Baseline, CoefficientErrorsMatchCovariance) {
    std::mt19937_64 rng(99);
    std::normal_distribution<double> noise(0.0, 50.0);
    const std::array<double, 5> c{1.0e4, -20.0, 0.3, -1.0e-3, 2.0e-6};
    double chi2 = 0.0;
    const int trials = 100;
    Eigen::Matrix<double, 5, 1> truth;
    for (int t = 0; t < trials; ++t) {
        std::vector<double> x, y;
        for (int k = 0; k <= 300; ++k) {
            x.push_back(0.5 * k);
            y.push_back(poly(c, x.back()) + noise(rng));
        }
        const auto fit = fit_baseline(field_spectrum(x, y));
        if (t == 0) {
            // truth in the fit's normalized basis
            std::vector<double> yt;
            for (double b : x) yt.push_back(poly(c, b));
            truth = fit_baseline(field_spectrum(x, yt)).normalized;
        }
        const Eigen::Matrix<double, 5, 1> d = fit.normalized - truth;
        chi2 += d.dot(fit.covariance(50.0).inverse() * d) / 5.0;
    }
    chi2 /= trials;
    EXPECT_GE(chi2, 0.5);
    EXPECT_LE(chi2, 1.5);
}

TEST(Baseline, QuarticBeatsLowerOrders) {
    std::mt19937_64 rng(5);
    const Spectrum s = synthetic::scan(synthetic::ScanModel{}, &rng);
    const std::vector<FieldWindow> windows{{12, 28}, {48, 64}, {112, 132}};
    const auto fit = fit_baseline(s, windows);
    std::vector<double> t, y;
    for (std::size_t k = 0; k < s.size(); ++k) {
        if (windows[0].contains(s.abscissa[k]) || windows[1].contains(s.abscissa[k]) ||
            windows[2].contains(s.abscissa[k]))
            continue;
        t.push_back((s.abscissa[k] - fit.center) / fit.scale);
        y.push_back(s.counts[k]);
    }
    for (int order = 0; order < 4; ++order) {
        const auto [coef, inv] = detail::polyfit(t, y, order);
        double ss = 0.0;
        for (std::size_t k = 0; k < t.size(); ++k) {
            double v = 0.0;
            for (int j = order; j >= 0; --j) v = v * t[k] + coef[j];
            ss += (y[k] - v) * (y[k] - v);
        }
        EXPECT_LE(fit.rms, std::sqrt(ss / static_cast<double>(t.size())) + 1e-12) << order;
    }
}

TEST(Baseline, IdempotentOnResidual) {
    std::mt19937_64 rng(6);
    const Spectrum s = synthetic::scan(synthetic::ScanModel{}, &rng);
    const std::vector<FieldWindow> windows{{12, 28}, {48, 64}, {112, 132}};
    const auto fit = fit_baseline(s, windows);
    const auto again = fit_baseline(subtract(s, fit), windows);
    const double scale = *std::max_element(s.counts.begin(), s.counts.end());
    for (int k = 0; k < 5; ++k) EXPECT_LE(std::abs(again.normalized[k]), 1e-9 * scale);
}

TEST(Baseline, Underdetermined) {
    std::vector<double> x, y;
    for (int k = 0; k < 20; ++k) {
        x.push_back(k);
        y.push_back(1.0);
    }
    EXPECT_THROW((void)fit_baseline(field_spectrum(x, y), {{0.0, 14.5}}), ConfigError);
    EXPECT_NO_THROW((void)fit_baseline(field_spectrum(x, y), {{0.0, 13.5}}));
}

// --- detection -----------------------------------------------------------------

TEST(DetectPeaks, FlatNoiseFalsePositiveRate) {
    std::mt19937_64 rng(1234);
    std::normal_distribution<double> g(0.0, 30.0);
    int hits = 0;
    for (int t = 0; t < 1000; ++t) {
        std::vector<double> x, y;
        for (int k = 0; k <= 1500; ++k) {
            x.push_back(0.1 * k);
            y.push_back(g(rng));
        }
        hits += detect_peaks(field_spectrum(x, y)).empty() ? 0 : 1;
    }
    EXPECT_LT(hits, 10);
}

TEST(DetectPeaks, ThreeInjectedDips) {
    std::mt19937_64 rng(77);
    const synthetic::ScanModel model;
    const Spectrum s = synthetic::scan(model, &rng);
    Spectrum residual = s;
    for (std::size_t k = 0; k < s.size(); ++k) residual.counts[k] = s.counts[k] - model.envelope(s.abscissa[k]);
    const auto w = detect_peaks(residual);
    ASSERT_EQ(w.size(), 3u);
    for (std::size_t k = 0; k < 3; ++k) {
        EXPECT_LE(w[k].lo, model.dips[k].center);
        EXPECT_GE(w[k].hi, model.dips[k].center);
        EXPECT_FALSE(w[k].edge_truncated);
    }
}

TEST(DetectPeaks, EdgeDipFlagged) {
    std::vector<double> x, y;
    for (int k = 0; k <= 600; ++k) {
        const double b = 0.1 * k;
        x.push_back(b);
        y.push_back(-500.0 * std::exp(-0.5 * std::pow((b - 0.5) / 2.0, 2)) + 10.0 * std::sin(7.0 * k));
    }
    const auto w = detect_peaks(field_spectrum(x, y));
    ASSERT_EQ(w.size(), 1u);
    EXPECT_TRUE(w[0].edge_truncated);
    EXPECT_LE(w[0].lo, 0.5);
}

TEST(DetectPeaks, SilentWhenNothingThere) {
    std::vector<double> x, y;
    for (int k = 0; k < 100; ++k) {
        x.push_back(k);
        y.push_back(0.0);
    }
    EXPECT_TRUE(detect_peaks(field_spectrum(x, y)).empty());
}

// --- fitting -------------------------------------------------------------------

TEST(FitGaussian, NoiselessExact) {
    std::vector<double> x, y;
    for (int k = 0; k <= 300; ++k) {
        const double b = 40.0 + 0.1 * k;
        x.push_back(b);
        y.push_back(-100.0 * std::exp(-0.5 * std::pow((b - 56.0) / 2.0, 2)));
    }
    const auto fit = fit_gaussian(field_spectrum(x, y), {48.0, 64.0});
    EXPECT_TRUE(fit.converged);
    EXPECT_FALSE(fit.poor_fit);
    EXPECT_NEAR(fit.center, 56.0, 56.0 * 1e-6);
    EXPECT_NEAR(fit.sigma, 2.0, 2.0 * 1e-6);
    EXPECT_NEAR(fit.depth, 100.0, 100.0 * 1e-6);
    for (std::size_t k = 1; k < fit.cost_history.size(); ++k)
        EXPECT_LE(fit.cost_history[k], fit.cost_history[k - 1]);
}

TEST(FitGaussian, LorentzianShape) {
    std::vector<double> x, y;
    for (int k = 0; k <= 300; ++k) {
        const double b = 40.0 + 0.1 * k;
        x.push_back(b);
        y.push_back(-80.0 / (1.0 + std::pow((b - 55.0) / 1.5, 2)));
    }
    FitOptions opt;
    opt.shape = LineShape::Lorentzian;
    const auto fit = fit_gaussian(field_spectrum(x, y), {45.0, 65.0}, opt);
    EXPECT_NEAR(fit.center, 55.0, 1e-6);
    EXPECT_NEAR(fit.sigma, 1.5, 1e-6);
    EXPECT_NEAR(fit.depth, 80.0, 1e-5);
}

TEST(FitGaussian, PoissonCenterRecovery) {
    std::mt19937_64 rng(4242);
    const double base = 1000.0;
    int good = 0, converged = 0;
    for (int t = 0; t < 500; ++t) {
        std::vector<double> x, y;
        for (int k = 0; k <= 300; ++k) {
            const double b = 41.0 + 0.1 * k;
            const double mu = base - 100.0 * std::exp(-0.5 * std::pow((b - 56.0) / 2.0, 2));
            std::poisson_distribution<long> p(mu);
            x.push_back(b);
            y.push_back(static_cast<double>(p(rng)) - base);
        }
        const auto fit = fit_gaussian(field_spectrum(x, y), {50.0, 62.0});
        for (std::size_t k = 1; k < fit.cost_history.size(); ++k)
            ASSERT_LE(fit.cost_history[k], fit.cost_history[k - 1]);
        if (!fit.converged) continue;
        ++converged;
        good += std::abs(fit.center - 56.0) <= 2.0 / 5.0;
    }
    EXPECT_GE(converged, 475);
    EXPECT_GE(good, static_cast<int>(std::ceil(0.95 * converged)));
}

TEST(FitGaussian, OverlappingDipsFlagged) {
    std::vector<double> x, y;
    for (int k = 0; k <= 300; ++k) {
        const double b = 40.0 + 0.1 * k;
        x.push_back(b);
        y.push_back(-100.0 * std::exp(-0.5 * std::pow((b - 54.0) / 1.5, 2)) -
                    70.0 * std::exp(-0.5 * std::pow((b - 58.0) / 1.5, 2)));
    }
    const auto fit = fit_gaussian(field_spectrum(x, y), {46.0, 66.0});
    EXPECT_TRUE(fit.poor_fit);
    EXPECT_LT(fit.runs_z, kRunsTestThreshold);
}

TEST(FitGaussian, TooFewPoints) {
    std::vector<double> x, y;
    for (int k = 0; k < 20; ++k) {
        x.push_back(k);
        y.push_back(k == 10 ? -5.0 : 0.0);
    }
    EXPECT_THROW((void)fit_gaussian(field_spectrum(x, y), {8.0, 13.0}), ConfigError);
}

TEST(FitGaussian, CovarianceSymmetricPositive) {
    std::mt19937_64 rng(8);
    std::normal_distribution<double> g(0.0, 5.0);
    std::vector<double> x, y;
    for (int k = 0; k <= 200; ++k) {
        const double b = 46.0 + 0.1 * k;
        x.push_back(b);
        y.push_back(-100.0 * std::exp(-0.5 * std::pow((b - 56.0) / 2.0, 2)) + g(rng));
    }
    const auto fit = fit_gaussian(field_spectrum(x, y), {46.0, 66.0});
    EXPECT_LT((fit.covariance - fit.covariance.transpose()).norm(), 1e-15);
    const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(fit.covariance);
    EXPECT_GE(es.eigenvalues().minCoeff(), 0.0);
    EXPECT_GT(fit.sigma, 0.0);
}

TEST(Analyze, FullPipelineFindsThreeDips) {
    std::mt19937_64 rng(31);
    const synthetic::ScanModel model;
    const auto an = analyze(synthetic::scan(model, &rng));
    ASSERT_EQ(an.peaks.size(), 3u);
    for (std::size_t k = 0; k < 3; ++k) {
        EXPECT_NEAR(an.peaks[k].center, model.dips[k].center, model.dips[k].sigma / 5.0);
        EXPECT_NEAR(an.peaks[k].contrast, model.dips[k].depth / model.envelope(model.dips[k].center), 3e-3);
    }
    EXPECT_EQ(an.baseline.excluded_windows.size(), 3u);
}

TEST(Analyze, NoiselessQuarticHasNoPeaks) {
    synthetic::ScanModel model;
    model.dips.clear();
    EXPECT_TRUE(analyze(synthetic::scan(model)).peaks.empty());
}

// --- inversion ---------------------------------------------------------------------

TEST(InferZfs, RoundTripFromPredictedCrossing) {
    SpinSpecies vh = Catalog::load(CROSSPEAK_DEFAULT_CATALOG).find("VH-");
    SweepSpec spec;
    const auto ev = find_crossings(sweep_curves(nv(), spec), sweep_curves(vh, spec));
    ASSERT_EQ(ev.size(), 1u);
    PeakFit pk;
    pk.center = ev[0].b_star;
    ZfsOptions opt;
    opt.nv_d_uncertainty = 0.0;
    const auto est = infer_zfs(pk, 0.0, 0.0, nv(), {}, Vec3::UnitX(), opt);
    EXPECT_NEAR(est.d, 2694.0, 0.05);
    EXPECT_EQ(est.sigma_d, 0.0);
    EXPECT_EQ(est.contributions.fit, 0.0);
}

TEST(InferZfs, QuadratureAndMonotoneShrink) {
    PeakFit pk;
    pk.center = 54.252186454;
    pk.covariance(0, 0) = 0.25;
    const auto est = infer_zfs(pk, 1.0, 0.5, nv(), {}, Vec3::UnitX());
    const auto& c = est.contributions;
    EXPECT_NEAR(est.sigma_d * est.sigma_d,
                c.angle * c.angle + c.calibration * c.calibration + c.fit * c.fit + c.nv_reference * c.nv_reference,
                1e-9);
    EXPECT_NEAR(est.d, 2694.0, 0.01);
    EXPECT_GT(est.sigma_d, 2.5);
    EXPECT_LT(est.sigma_d, 10.0);

    PeakFit tight = pk;
    tight.covariance(0, 0) = 0.01;
    EXPECT_LT(infer_zfs(tight, 1.0, 0.5, nv(), {}, Vec3::UnitX()).sigma_d, est.sigma_d);
    EXPECT_LT(infer_zfs(pk, 0.5, 0.5, nv(), {}, Vec3::UnitX()).sigma_d, est.sigma_d);
    EXPECT_LT(infer_zfs(pk, 1.0, 0.25, nv(), {}, Vec3::UnitX()).sigma_d, est.sigma_d);
    ZfsOptions opt;
    opt.nv_d_uncertainty = 0.5;
    EXPECT_LT(infer_zfs(pk, 1.0, 0.5, nv(), {}, Vec3::UnitX(), opt).sigma_d, est.sigma_d);
}

TEST(InferZfs, OutOfRange) {
    PeakFit pk;
    pk.center = 1000.0;
    EXPECT_THROW((void)infer_zfs(pk, 0.0, 0.0, nv(), {}, Vec3::UnitX()), DomainError);
    pk.center = -1.0;
    EXPECT_THROW((void)infer_zfs(pk, 0.0, 0.0, nv(), {}, Vec3::UnitX()), DomainError);
}
