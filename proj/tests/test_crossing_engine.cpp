#include <gtest/gtest.h>

#include <set>

#include "crosspeak/catalog.hpp"
#include "crosspeak/crossing_engine.hpp"

using namespace crosspeak;

namespace {

const Catalog& catalog() {
    static const Catalog c = Catalog::load(CROSSPEAK_DEFAULT_CATALOG);
    return c;
}

SweepSpec sweep(const Vec3& axis, double lo, double hi, double step = 0.1) {
    SweepSpec s;
    s.axis = axis;
    s.b_min = lo;
    s.b_max = hi;
    s.step = step;
    return s;
}

std::vector<CrossingEvent> crossings(const std::string& a, const std::string& b, const SweepSpec& spec) {
    return find_crossings(sweep_curves(catalog().find(a), spec), sweep_curves(catalog().find(b), spec));
}

// Transition frequency recomputed from a fresh track for one event side.
double fresh_frequency(const SpinSpecies& s, int orientation, const std::string& transition, const Vec3& axis,
                       double field) {
    OrientationClass cls = s.orientation_classes().front();
    for (const auto& c : s.orientation_classes())
        if (c.label == orientation) cls = c;
    const auto ts = transitions(s, MagneticField::along(axis, field), cls, default_rule(s), 0.05);
    for (const auto& t : ts.transitions)
        if (t.id() == transition) return t.frequency;
    ADD_FAILURE() << "no transition " << transition;
    return NAN;
}

}  // namespace

TEST(SweepSpecTest, GridEndsExactly) {
    const auto g = sweep(Vec3::UnitX(), 0.0, 1.0, 0.3).grid();
    ASSERT_EQ(g.size(), 5u);
    EXPECT_DOUBLE_EQ(g.back(), 1.0);
    EXPECT_EQ(sweep(Vec3::UnitX(), 0.0, 150.0).grid().size(), 1501u);
}

TEST(SweepSpecTest, Validation) {
    EXPECT_THROW(sweep(Vec3::UnitX(), 10.0, 5.0).validate(), ConfigError);
    EXPECT_THROW(sweep(Vec3::UnitX(), 0.0, 1.0, 0.0).validate(), ConfigError);
    EXPECT_THROW(sweep(Vec3::UnitX(), 0.0, 1.0, 0.6).validate(), ConfigError);
    EXPECT_THROW(sweep(Vec3::Zero(), 0.0, 1.0).validate(), ConfigError);
}

TEST(SweepCurves, NvClassesMergeAlongHundred) {
    const auto curves = sweep_curves(catalog().find("NV"), sweep(Vec3::UnitX(), 0.0, 150.0));
    ASSERT_EQ(curves.size(), 2u);
    for (const auto& c : curves) {
        EXPECT_EQ(c.multiplicity, 4);
        EXPECT_EQ(c.merged_orientations.size(), 4u);
        EXPECT_TRUE(c.diagnostic.ok());
    }
}

TEST(SweepCurves, NvClassesSplitAlongOneOneOne) {
    const auto curves = sweep_curves(catalog().find("NV"), sweep(Vec3(1, 1, 1), 0.0, 150.0));
    ASSERT_EQ(curves.size(), 4u);
    int total = 0;
    for (const auto& c : curves) total += c.multiplicity;
    EXPECT_EQ(total, 8);
}

TEST(SweepCurves, SamplesStrictlyIncreasing) {
    for (const auto& c : sweep_curves(catalog().find("NV13C"), sweep(Vec3::UnitX(), 0.0, 40.0))) {
        for (std::size_t k = 1; k < c.fields.size(); ++k) EXPECT_GT(c.fields[k], c.fields[k - 1]);
        EXPECT_TRUE(c.diagnostic.ok());
    }
}

TEST(SweepCurves, UpperNvBranchMonotoneAlongHundred) {
    const auto curves = sweep_curves(catalog().find("NV"), sweep(Vec3::UnitX(), 0.0, 100.0));
    const auto up = std::find_if(curves.begin(), curves.end(), [](const auto& c) { return c.to_state == "ms=+1"; });
    const auto dn = std::find_if(curves.begin(), curves.end(), [](const auto& c) { return c.to_state == "ms=-1"; });
    ASSERT_NE(up, curves.end());
    ASSERT_NE(dn, curves.end());
    for (std::size_t k = 1; k < up->frequencies.size(); ++k) EXPECT_GT(up->frequencies[k], up->frequencies[k - 1]);
    for (std::size_t k = 1; k < dn->frequencies.size(); ++k) EXPECT_LT(dn->frequencies[k], dn->frequencies[k - 1]);
}

TEST(FindCrossings, NvWithVacancyHydrogen) {
    const auto ev = crossings("NV", "VH-", sweep(Vec3::UnitX(), 0.0, 150.0));
    ASSERT_EQ(ev.size(), 1u);
    // independent numpy/brentq value for the same Hamiltonians
    EXPECT_NEAR(ev[0].b_star, 54.252186454, 2e-4);
    EXPECT_EQ(ev[0].transition_a, "ms=0->ms=-1");
    EXPECT_EQ(ev[0].transition_b, "ms=0->ms=+1");
    EXPECT_EQ(ev[0].multiplicity_a, 4);
    EXPECT_GT(ev[0].slope_gap, 1.0);
}

TEST(FindCrossings, NvWithWar1) {
    const auto ev = crossings("NV", "WAR1", sweep(Vec3::UnitX(), 0.0, 150.0));
    ASSERT_EQ(ev.size(), 1u);
    EXPECT_NEAR(ev[0].b_star, 121.936306899, 2e-4);
}

TEST(FindCrossings, SameSpeciesIsEmpty) {
    EXPECT_TRUE(crossings("NV", "NV", sweep(Vec3::UnitX(), 0.0, 150.0)).empty());
}

TEST(FindCrossings, RefinementAgreesWithFreshEvaluation) {
    for (const auto& [axis, b] : std::vector<std::pair<Vec3, std::string>>{
             {Vec3::UnitX(), "VH-"}, {Vec3::UnitX(), "NV13C"}, {Vec3(1, 1, 1), "WAR1"}}) {
        const auto spec = sweep(axis, 0.0, 150.0);
        const auto ev = crossings("NV", b, spec);
        ASSERT_FALSE(ev.empty()) << b;
        for (const auto& e : ev) {
            const double fa = fresh_frequency(catalog().find("NV"), e.orientation_a, e.transition_a,
                                              spec.unit_axis(), e.b_star);
            const double fb =
                fresh_frequency(catalog().find(b), e.orientation_b, e.transition_b, spec.unit_axis(), e.b_star);
            EXPECT_LE(std::abs(fa - fb), kFrequencyTolerance) << b << " at " << e.b_star;
            EXPECT_NEAR(e.f_star, 0.5 * (fa + fb), kFrequencyTolerance);
        }
    }
}

TEST(FindCrossings, SwapSymmetric) {
    const auto spec = sweep(Vec3(1, 1, 1), 0.0, 200.0);
    for (const std::string b : {"VH-", "WAR1"}) {
        const auto ab = crossings("NV", b, spec);
        const auto ba = crossings(b, "NV", spec);
        ASSERT_EQ(ab.size(), ba.size());
        for (std::size_t k = 0; k < ab.size(); ++k) EXPECT_EQ(ab[k].b_star, ba[k].b_star);
    }
}

TEST(FindCrossings, GridHalvingStable) {
    for (const std::string b : {"VH-", "WAR1", "NV13C"}) {
        const auto coarse = crossings("NV", b, sweep(Vec3(1, 1, 1), 0.0, 200.0, 0.1));
        const auto fine = crossings("NV", b, sweep(Vec3(1, 1, 1), 0.0, 200.0, 0.05));
        auto unmatched = [](const std::vector<CrossingEvent>& x, const std::vector<CrossingEvent>& y) {
            std::vector<CrossingEvent> out;
            for (const auto& e : x) {
                const bool hit = std::any_of(y.begin(), y.end(), [&](const CrossingEvent& f) {
                    return f.transition_a == e.transition_a && f.transition_b == e.transition_b &&
                           f.orientation_a == e.orientation_a && f.orientation_b == e.orientation_b &&
                           std::abs(f.b_star - e.b_star) <= 1e-3;
                });
                if (!hit) out.push_back(e);
            }
            return out;
        };
        for (const auto& e : unmatched(coarse, fine)) EXPECT_LT(e.slope_gap, 0.05) << b << " " << e.b_star;
        for (const auto& e : unmatched(fine, coarse)) EXPECT_LT(e.slope_gap, 0.05) << b << " " << e.b_star;
    }
}

TEST(FindCrossings, Nv13cComplexNearTwentyGauss) {
    const auto ev = crossings("NV", "NV13C", sweep(Vec3::UnitX(), 0.0, 150.0));
    ASSERT_EQ(ev.size(), 4u);
    // numpy reference: 16.9, 18.1, 21.1, 22.7 G
    const double ref[4] = {16.9, 18.1, 21.1, 22.7};
    for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(ev[k].b_star, ref[k], 0.1);
}

TEST(FindCrossings, RejectsDifferentGrids) {
    const auto a = sweep_curves(catalog().find("NV"), sweep(Vec3::UnitX(), 0.0, 150.0));
    const auto b = sweep_curves(catalog().find("VH-"), sweep(Vec3::UnitX(), 0.0, 150.0, 0.2));
    EXPECT_THROW((void)find_crossings(a, b), ConfigError);
}

TEST(FindCrossings, OneOneOneHasMoreEvents) {
    for (const std::string b : {"VH-", "WAR1"}) {
        const auto n100 = crossings("NV", b, sweep(Vec3::UnitX(), 0.0, 200.0)).size();
        const auto n111 = crossings("NV", b, sweep(Vec3(1, 1, 1), 0.0, 200.0)).size();
        EXPECT_EQ(n100, 1u) << b;
        EXPECT_GE(n111, 4 * n100) << b;
    }
}

TEST(Helpers, CubicAxisAndAlignment) {
    EXPECT_TRUE(is_cubic_axis(Vec3(0, -2, 0)));
    EXPECT_FALSE(is_cubic_axis(Vec3(1, 1, 0)));
    EXPECT_EQ(most_aligned_class(catalog().find("NV"), Vec3(-1, 1, -1)).label, 3);
    std::vector<CrossingEvent> ev(3);
    ev[0].b_star = 1.0;
    ev[1].b_star = 1.01;
    ev[2].b_star = 2.0;
    EXPECT_EQ(distinct_fields(ev).size(), 2u);
}

// --- three-body --------------------------------------------------------------

TEST(ThreeBody, LiteratureConstantsReproduceNumpyRoots) {
    const auto ev =
        p1_three_body_fields(catalog().find("NV"), catalog().find("P1"), sweep(Vec3::UnitX(), 0.0, 300.0));
    const auto fields = distinct_fields(ev);
    const double ref[] = {0.0,     3.8435,  5.9026,   6.5069,   17.7214,  28.9903, 35.9255,
                          49.4995, 81.4973, 83.2746, 137.8993, 154.2388, 246.7208};
    ASSERT_EQ(fields.size(), std::size(ref));
    for (std::size_t k = 0; k < fields.size(); ++k) EXPECT_NEAR(fields[k], ref[k], 2e-3);
    int zero_roots = 0;
    for (const auto& e : ev) zero_roots += e.b_star == 0.0;
    EXPECT_EQ(zero_roots, 3);
}

TEST(ThreeBody, EventsSatisfyCondition) {
    const auto& nv = catalog().find("NV");
    const auto ev = p1_three_body_fields(nv, catalog().find("P1"), sweep(Vec3::UnitX(), 0.0, 300.0));
    for (const auto& e : ev) {
        if (e.b_star == 0.0) continue;
        const double up = fresh_frequency(nv, 1, "ms=0->ms=+1", Vec3::UnitX(), e.b_star);
        const double dn = fresh_frequency(nv, 1, "ms=0->ms=-1", Vec3::UnitX(), e.b_star);
        const auto ts = transitions(catalog().find("P1"), MagneticField::along(Vec3::UnitX(), e.b_star),
                                    trigonal_classes()[0], SelectionRule::AllPairs, 0.05);
        double best = INFINITY;
        for (const auto& t : ts.transitions) best = std::min(best, std::abs(t.frequency - (up - dn)));
        EXPECT_LE(best, kFrequencyTolerance) << e.b_star;
    }
}

namespace {

// Brute force: sign changes of sorted-level differences minus the NV splitting on a
// fine grid. Sorted levels are continuous, so every root of a tracked transition shows
// up as a root of some sorted pair.
std::vector<double> grid_scan_three_body(const SpinSpecies& nv, const SpinSpecies& p1, double b_max, double h) {
    std::vector<double> scan{0.0};
    std::vector<double> prev;
    for (int k = 1; k * h <= b_max + 1e-9; ++k) {
        const double b = k * h;
        const auto field = MagneticField::along(Vec3::UnitX(), b);
        const auto en = eigensystem(build_hamiltonian(nv, field, trigonal_classes()[0])).values;
        const auto ep = eigensystem(build_hamiltonian(p1, field, trigonal_classes()[0])).values;
        const double delta = en[2] - en[1];
        std::vector<double> g;
        for (int i = 0; i < 6; ++i)
            for (int j = i + 1; j < 6; ++j) g.push_back(ep[j] - ep[i] - delta);
        if (!prev.empty())
            for (std::size_t m = 0; m < g.size(); ++m)
                if ((g[m] < 0) != (prev[m] < 0)) scan.push_back(b - 0.5 * h);
        prev = g;
    }
    std::sort(scan.begin(), scan.end());
    scan.erase(std::unique(scan.begin(), scan.end(), [](double a, double b) { return std::abs(a - b) < 0.05; }),
               scan.end());
    return scan;
}

}  // namespace

TEST(ThreeBody, FreeElectronMatchesGridScan) {
    SpinSpecies p1 = catalog().find("P1");
    p1.nuclear->hyperfine.setZero();
    p1.nuclear->quadrupole = 0.0;
    const SpinSpecies& nv = catalog().find("NV");
    const auto solver = distinct_fields(p1_three_body_fields(nv, p1, sweep(Vec3::UnitX(), 0.0, 300.0)));
    const auto scan = grid_scan_three_body(nv, p1, 300.0, 0.01);
    // the electron Zeeman line never reaches the NV splitting, so only B = 0 survives
    ASSERT_EQ(solver.size(), 1u);
    ASSERT_EQ(scan.size(), 1u);
    EXPECT_EQ(solver[0], 0.0);
}

TEST(ThreeBody, IsotropicHyperfineMatchesGridScan) {
    SpinSpecies p1 = catalog().find("P1");
    p1.nuclear->hyperfine = 90.0 * Mat3::Identity();
    p1.nuclear->quadrupole = 0.0;
    const SpinSpecies& nv = catalog().find("NV");
    const auto solver = distinct_fields(p1_three_body_fields(nv, p1, sweep(Vec3::UnitX(), 0.0, 300.0)));
    const auto scan = grid_scan_three_body(nv, p1, 300.0, 0.01);
    ASSERT_GT(scan.size(), 3u);
    ASSERT_EQ(solver.size(), scan.size());
    for (std::size_t k = 0; k < scan.size(); ++k) EXPECT_NEAR(solver[k], scan[k], 0.01);
}

TEST(ThreeBody, RequiresCubicAxis) {
    EXPECT_THROW((void)p1_three_body_fields(catalog().find("NV"), catalog().find("P1"),
                                            sweep(Vec3(1, 1, 1), 0.0, 300.0)),
                 ConfigError);
    EXPECT_THROW((void)p1_three_body_fields(catalog().find("NV13C"), catalog().find("P1"),
                                            sweep(Vec3::UnitX(), 0.0, 300.0)),
                 ConfigError);
}
