// crosspeak: command-line front end for transition curves, resonance search, scan
// fitting, ZFS inversion and angular maps.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "crosspeak/angular_map.hpp"
#include "crosspeak/catalog.hpp"
#include "crosspeak/crossing_engine.hpp"
#include "crosspeak/errors.hpp"
#include "crosspeak/io.hpp"
#include "crosspeak/spectrum.hpp"
#include "crosspeak/spin_core.hpp"

#ifndef CROSSPEAK_DEFAULT_CATALOG
#define CROSSPEAK_DEFAULT_CATALOG "data/catalog.json"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace crosspeak;

namespace {

struct Globals {
    std::string catalog;
    std::string out_dir = ".";
    std::string formats = "csv,json";
    int verbosity = 0;

    [[nodiscard]] bool csv() const { return formats.find("csv") != std::string::npos; }
    [[nodiscard]] bool json_out() const { return formats.find("json") != std::string::npos; }
    [[nodiscard]] fs::path path(const std::string& name) const { return fs::path(out_dir) / name; }
};

void note(const Globals& g, const std::string& msg) {
    if (g.verbosity > 0) std::cerr << msg << '\n';
}

Catalog load_catalog(const Globals& g) {
    std::string path = g.catalog;
    if (path.empty()) {
        const char* env = std::getenv("CROSSPEAK_CATALOG");
        path = env && *env ? env : CROSSPEAK_DEFAULT_CATALOG;
    }
    return Catalog::load(path);
}

double rounded(double v, int decimals) { return std::stod(io::fixed(v, decimals)); }

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    for (const auto& part : io::split(s))
        if (!part.empty()) out.push_back(part);
    return out;
}

// "100", "1-11", "01-1" or "x,y,z"
Vec3 parse_axis(const std::string& text) {
    Vec3 v;
    if (text.find(',') != std::string::npos) {
        const auto parts = io::split(text);
        if (parts.size() != 3) throw ConfigError("axis '" + text + "' needs three components");
        for (int i = 0; i < 3; ++i) {
            char* end = nullptr;
            v[i] = std::strtod(parts[static_cast<std::size_t>(i)].c_str(), &end);
            if (end == parts[static_cast<std::size_t>(i)].c_str() || *end)
                throw ConfigError("axis '" + text + "' is not numeric");
        }
    } else {
        int i = 0;
        for (std::size_t k = 0; k < text.size(); ++k) {
            int sign = 1;
            if (text[k] == '-') {
                sign = -1;
                ++k;
            }
            if (k >= text.size() || !std::isdigit(static_cast<unsigned char>(text[k])) || i >= 3)
                throw ConfigError("axis '" + text + "' is not a Miller index like 100 or 1-11");
            v[i++] = sign * (text[k] - '0');
        }
        if (i != 3) throw ConfigError("axis '" + text + "' is not a Miller index like 100 or 1-11");
    }
    if (!(v.norm() > 0.0)) throw ConfigError("axis must be nonzero");
    return v.normalized();
}

std::pair<double, double> parse_range(const std::string& text) {
    const auto p = text.find(':');
    if (p == std::string::npos) throw ConfigError("range '" + text + "' must look like min:max");
    try {
        std::size_t n1 = 0, n2 = 0;
        const std::string a = text.substr(0, p), b = text.substr(p + 1);
        const double lo = std::stod(a, &n1), hi = std::stod(b, &n2);
        if (n1 != a.size() || n2 != b.size()) throw std::invalid_argument("trailing");
        return {lo, hi};
    } catch (const std::logic_error&) {
        throw ConfigError("range '" + text + "' must look like min:max");
    }
}

SweepSpec make_sweep(const std::string& axis, const std::string& range, double step) {
    SweepSpec s;
    s.axis = parse_axis(axis);
    std::tie(s.b_min, s.b_max) = parse_range(range);
    s.step = step;
    s.validate();
    return s;
}

json event_json(const CrossingEvent& e) {
    return {{"species_a", e.species_a},
            {"transition_a", e.transition_a},
            {"orientation_a", e.orientation_a},
            {"multiplicity_a", e.multiplicity_a},
            {"species_b", e.species_b},
            {"transition_b", e.transition_b},
            {"orientation_b", e.orientation_b},
            {"multiplicity_b", e.multiplicity_b},
            {"B_star_G", rounded(e.b_star, 6)},
            {"f_star_MHz", rounded(e.f_star, 4)},
            {"slope_gap", rounded(e.slope_gap, 4)}};
}

std::string events_csv(const std::vector<CrossingEvent>& events) {
    std::string out = "species_a,transition_a,species_b,transition_b,B_star_G,f_star_MHz,slope_gap\n";
    for (const auto& e : events)
        out += e.species_a + "," + e.transition_a + "," + e.species_b + "," + e.transition_b + "," +
               io::gauss(e.b_star) + "," + io::mhz(e.f_star) + "," + io::mhz(e.slope_gap) + "\n";
    return out;
}

void require_tracking(const std::vector<TransitionCurve>& curves) {
    for (const auto& c : curves)
        if (!c.diagnostic.ok())
            throw NumericalError("state tracking for " + c.species + " " + c.label() + " dropped to overlap " +
                                 io::fixed(c.diagnostic.min_overlap, 3) + " at " + io::gauss(c.diagnostic.worst_field) +
                                 " G");
}

// ---------------------------------------------------------------------------

struct PredictArgs {
    std::string species = "NV";
    std::string axis = "100";
    std::string range = "0:150";
    double step = 0.1;
};

int cmd_predict(const Globals& g, const PredictArgs& a) {
    const Catalog catalog = load_catalog(g);
    const SweepSpec spec = make_sweep(a.axis, a.range, a.step);
    io::OutputSet out;
    json summary = json::array();
    for (const auto& name : split_list(a.species)) {
        const SpinSpecies& s = catalog.find(name);
        const auto curves = sweep_curves(s, spec);
        require_tracking(curves);
        std::string csv = "B_G,f_MHz,label\n";
        json jc = json::array();
        for (const auto& c : curves) {
            for (std::size_t k = 0; k < c.fields.size(); ++k)
                csv += io::gauss(c.fields[k]) + "," + io::mhz(c.frequencies[k]) + "," + c.label() + "\n";
            jc.push_back({{"label", c.label()},
                          {"from_state", c.from_state},
                          {"to_state", c.to_state},
                          {"orientations", c.merged_orientations},
                          {"multiplicity", c.multiplicity}});
        }
        if (g.csv()) out.add(g.path("curves_" + name + ".csv"), csv);
        summary.push_back({{"species", name}, {"curves", jc}});
        std::printf("%s: %zu curves\n", name.c_str(), curves.size());
    }
    if (g.json_out()) {
        json j = {{"axis", a.axis}, {"range", a.range}, {"step_G", a.step}, {"species", summary}};
        out.add(g.path("curves.json"), j.dump(2) + "\n");
    }
    out.commit();
    return 0;
}

struct CrossingsArgs {
    std::string a, b;
    std::string axis = "100";
    std::string range;
    double step = 0.1;
    bool three_body = false;
    std::string nv = "NV", p1 = "P1";
};

int cmd_crossings(const Globals& g, const CrossingsArgs& a) {
    const Catalog catalog = load_catalog(g);
    const std::string range = a.range.empty() ? (a.three_body ? "0:300" : "0:150") : a.range;
    const SweepSpec spec = make_sweep(a.axis, range, a.step);
    std::vector<CrossingEvent> events;
    if (a.three_body) {
        events = p1_three_body_fields(catalog.find(a.nv), catalog.find(a.p1), spec);
    } else {
        if (a.a.empty() || a.b.empty()) throw ConfigError("crossings needs --a and --b, or --p1-three-body");
        const auto ca = sweep_curves(catalog.find(a.a), spec);
        const auto cb = sweep_curves(catalog.find(a.b), spec);
        require_tracking(ca);
        require_tracking(cb);
        events = find_crossings(ca, cb);
    }
    io::OutputSet out;
    if (g.csv()) out.add(g.path("crossings.csv"), events_csv(events));
    if (g.json_out()) {
        json je = json::array();
        for (const auto& e : events) je.push_back(event_json(e));
        json j = {{"axis", a.axis}, {"range", range}, {"step_G", a.step}, {"events", je}};
        out.add(g.path("crossings.json"), j.dump(2) + "\n");
    }
    out.commit();
    std::printf("%zu events at %zu distinct fields\n", events.size(), distinct_fields(events).size());
    for (const auto& e : events)
        std::printf("  B* = %s G  f* = %s MHz  %s %s x %s %s\n", io::gauss(e.b_star).c_str(), io::mhz(e.f_star).c_str(),
                    e.species_a.c_str(), e.transition_a.c_str(), e.species_b.c_str(), e.transition_b.c_str());
    return 0;
}

// ---------------------------------------------------------------------------

struct InvertSettings {
    std::string nv = "NV";
    std::string axis = "100";
    double cal_unc = 1.0;
    double angle_unc = 0.5;
    double nv_d_unc = 1.0;
    std::string nv_transition = "ms=0->ms=-1";
    std::string target_transition = "ms=0->ms=+1";
};

json zfs_json(const ZfsEstimate& z) {
    return {{"D_MHz", rounded(z.d, 4)},
            {"sigma_D_MHz", rounded(z.sigma_d, 4)},
            {"contributions_MHz",
             {{"angle", rounded(z.contributions.angle, 4)},
              {"calibration", rounded(z.contributions.calibration, 4)},
              {"fit", rounded(z.contributions.fit, 4)},
              {"nv_reference", rounded(z.contributions.nv_reference, 4)}}}};
}

ZfsEstimate invert_one(const Catalog& catalog, const InvertSettings& s, double center, double center_sigma) {
    PeakFit pk;
    pk.center = center;
    pk.covariance(0, 0) = center_sigma * center_sigma;
    ZfsOptions opt;
    opt.nv_d_uncertainty = s.nv_d_unc;
    return infer_zfs(pk, s.cal_unc, s.angle_unc, catalog.find(s.nv), {s.nv_transition, s.target_transition},
                     parse_axis(s.axis), opt);
}

struct FitArgs {
    std::string scan;
    std::string fiducials;
    std::string kind;
    std::vector<std::string> windows;
    std::string shape = "gaussian";
    double k = 5.0;
    bool invert = false;
    InvertSettings inv;
};

Spectrum read_scan(const FitArgs& a) {
    const io::CsvTable t = io::read_csv(a.scan);
    Spectrum s;
    s.abscissa = t.numeric("abscissa");
    s.counts = t.numeric("counts");
    std::string kind = a.kind;
    const fs::path sidecar = fs::path(a.scan).replace_extension(".json");
    if (fs::exists(sidecar)) {
        std::ifstream in(sidecar);
        json meta;
        try {
            meta = json::parse(in);
        } catch (const json::exception& e) {
            throw ConfigError("sidecar '" + sidecar.string() + "': " + e.what());
        }
        if (kind.empty() && meta.contains("abscissa_kind")) kind = meta["abscissa_kind"].get<std::string>();
        if (meta.contains("sweep_axis")) s.metadata.sweep_axis = meta["sweep_axis"].get<std::string>();
        if (meta.contains("sample_id")) s.metadata.sample_id = meta["sample_id"].get<std::string>();
        if (meta.contains("integration_time_s")) s.metadata.integration_time = meta["integration_time_s"].get<double>();
    }
    if (kind.empty()) kind = a.fiducials.empty() ? "field" : "voltage";
    if (kind == "voltage") s.kind = AbscissaKind::Voltage;
    else if (kind == "field") s.kind = AbscissaKind::Field;
    else throw ConfigError("abscissa kind must be 'voltage' or 'field'");
    s.validate();
    return s;
}

int cmd_fit(const Globals& g, const FitArgs& a) {
    const Catalog catalog = load_catalog(g);
    Spectrum s = read_scan(a);
    json report;
    json cal = nullptr;
    if (s.kind == AbscissaKind::Voltage) {
        if (a.fiducials.empty()) throw ConfigError("voltage scans need --fiducials");
        const io::CsvTable ft = io::read_csv(a.fiducials);
        const auto v = ft.numeric("voltage");
        const auto f = ft.numeric("frequency_MHz");
        std::vector<Fiducial> fid;
        for (std::size_t k = 0; k < v.size(); ++k) fid.push_back({v[k], f[k]});
        const Vec3 axis = parse_axis(s.metadata.sweep_axis.empty() ? a.inv.axis : s.metadata.sweep_axis);
        const CalibrationMap map = calibrate(s, fid, catalog.find(a.inv.nv), axis);
        std::size_t extrapolated = 0;
        for (double x : s.abscissa) extrapolated += map.extrapolates(x) ? 1 : 0;
        json anchors = json::array();
        for (const auto& an : map.anchors())
            anchors.push_back({{"voltage", an.voltage},
                               {"field_G", rounded(an.field, 6)},
                               {"frequency_MHz", rounded(an.frequency, 4)},
                               {"branch", an.branch}});
        cal = {{"anchors", anchors},
               {"slope_spread", rounded(map.slope_spread(), 6)},
               {"extrapolated_points", extrapolated}};
        s = to_field(s, map);
    } else if (!a.fiducials.empty()) {
        throw ConfigError("--fiducials given for a field-calibrated scan");
    }

    std::vector<FieldWindow> windows;
    for (const auto& w : a.windows) {
        const auto [lo, hi] = parse_range(w);
        if (!(lo < hi)) throw ConfigError("window '" + w + "' is empty");
        windows.push_back({lo, hi});
    }
    DetectOptions det;
    det.k = a.k;
    FitOptions fo;
    if (a.shape == "lorentzian") fo.shape = LineShape::Lorentzian;
    else if (a.shape != "gaussian") throw ConfigError("shape must be gaussian or lorentzian");

    const Analysis an = analyze(s, windows, det, fo);

    json excl = json::array();
    for (const auto& w : an.baseline.excluded_windows) excl.push_back({rounded(w.lo, 6), rounded(w.hi, 6)});
    json coef = json::array();
    for (double c : an.baseline.coefficients()) coef.push_back(c);
    report["calibration"] = cal;
    report["baseline"] = {{"coefficients", coef},
                          {"excluded_windows_G", excl},
                          {"points_used", an.baseline.points_used},
                          {"rms", rounded(an.baseline.rms, 6)}};
    json peaks = json::array();
    json zfs = json::array();
    std::string csv = "center_G,center_err_G,sigma_G,depth,contrast,converged,poor_fit,edge_truncated\n";
    for (std::size_t k = 0; k < an.peaks.size(); ++k) {
        const auto& p = an.peaks[k];
        const bool edge = an.windows[k].edge_truncated;
        peaks.push_back({{"center_G", rounded(p.center, 6)},
                         {"center_err_G", rounded(p.center_error(), 6)},
                         {"sigma_G", rounded(p.sigma, 6)},
                         {"depth", rounded(p.depth, 6)},
                         {"contrast", rounded(p.contrast, 8)},
                         {"window_G", {rounded(p.window.lo, 6), rounded(p.window.hi, 6)}},
                         {"converged", p.converged},
                         {"poor_fit", p.poor_fit},
                         {"edge_truncated", edge},
                         {"runs_z", rounded(p.runs_z, 4)},
                         {"iterations", p.iterations}});
        csv += io::gauss(p.center) + "," + io::gauss(p.center_error()) + "," + io::gauss(p.sigma) + "," +
               io::fixed(p.depth, 6) + "," + io::fixed(p.contrast, 8) + "," + (p.converged ? "1" : "0") + "," +
               (p.poor_fit ? "1" : "0") + "," + (edge ? "1" : "0") + "\n";
        if (a.invert) {
            try {
                json z = zfs_json(invert_one(catalog, a.inv, p.center, p.center_error()));
                z["center_G"] = rounded(p.center, 6);
                zfs.push_back(z);
            } catch (const DomainError& e) {
                zfs.push_back({{"center_G", rounded(p.center, 6)}, {"error", e.what()}});
            }
        }
    }
    report["peaks"] = peaks;
    report["zfs"] = zfs;

    io::OutputSet out;
    if (g.json_out()) out.add(g.path("report.json"), report.dump(2) + "\n");
    if (g.csv()) out.add(g.path("peaks.csv"), csv);
    out.commit();
    std::printf("%zu peaks\n", an.peaks.size());
    for (const auto& p : an.peaks)
        std::printf("  center %s G  sigma %s G  depth %s%s\n", io::gauss(p.center).c_str(), io::gauss(p.sigma).c_str(),
                    io::fixed(p.depth, 3).c_str(), p.poor_fit ? "  (poor fit)" : "");
    return 0;
}

struct InvertArgs {
    std::vector<double> centers;
    double center_sigma = 0.0;
    std::string report;
    InvertSettings inv;
};

int cmd_invert(const Globals& g, const InvertArgs& a) {
    const Catalog catalog = load_catalog(g);
    std::vector<std::pair<double, double>> inputs;
    for (double c : a.centers) inputs.emplace_back(c, a.center_sigma);
    if (!a.report.empty()) {
        std::ifstream in(a.report);
        if (!in) throw ConfigError("cannot open report '" + a.report + "'");
        json r;
        try {
            r = json::parse(in);
            for (const auto& p : r.at("peaks"))
                inputs.emplace_back(p.at("center_G").get<double>(), p.value("center_err_G", 0.0));
        } catch (const json::exception& e) {
            throw ConfigError("report '" + a.report + "': " + e.what());
        }
    }
    if (inputs.empty()) throw ConfigError("invert needs --center or --report");
    json results = json::array();
    std::string csv = "center_G,D_MHz,sigma_D_MHz,angle_MHz,calibration_MHz,fit_MHz,nv_reference_MHz\n";
    for (const auto& [c, sc] : inputs) {
        const ZfsEstimate z = invert_one(catalog, a.inv, c, sc);
        json j = zfs_json(z);
        j["center_G"] = rounded(c, 6);
        results.push_back(j);
        csv += io::gauss(c) + "," + io::mhz(z.d) + "," + io::mhz(z.sigma_d) + "," + io::mhz(z.contributions.angle) +
               "," + io::mhz(z.contributions.calibration) + "," + io::mhz(z.contributions.fit) + "," +
               io::mhz(z.contributions.nv_reference) + "\n";
        std::printf("center %s G -> D = %s +- %s MHz\n", io::gauss(c).c_str(), io::mhz(z.d).c_str(),
                    io::mhz(z.sigma_d).c_str());
    }
    io::OutputSet out;
    if (g.json_out()) {
        json j = {{"axis", a.inv.axis},
                  {"nv", a.inv.nv},
                  {"crossing", {a.inv.nv_transition, a.inv.target_transition}},
                  {"calibration_uncertainty_G", a.inv.cal_unc},
                  {"angle_uncertainty_deg", a.inv.angle_unc},
                  {"nv_d_uncertainty_MHz", a.inv.nv_d_unc},
                  {"combination", "quadrature"},
                  {"zfs", results}};
        out.add(g.path("zfs.json"), j.dump(2) + "\n");
    }
    if (g.csv()) out.add(g.path("zfs.csv"), csv);
    out.commit();
    return 0;
}

// ---------------------------------------------------------------------------

struct MapArgs {
    double amplitude = 115.0;
    double range = 20.0;
    int steps = 101;
    double linewidth = 6.0;
    double contrast = 0.05;
    std::string reference = "100";
    std::string nv = "NV";
};

int cmd_map(const Globals& g, const MapArgs& a) {
    const Catalog catalog = load_catalog(g);
    AngleGrid grid;
    grid.phi_range = grid.theta_range = a.range;
    grid.phi_steps = grid.theta_steps = a.steps;
    MapOptions opt;
    opt.linewidth = a.linewidth;
    opt.contrast = a.contrast;
    const Vec3 ref = parse_axis(a.reference);
    const DegeneracyMap map = simulate_map(grid, a.amplitude, catalog.find(a.nv), ref, opt);

    std::string csv = "phi_deg,theta_deg,pl_proxy\n";
    for (int i = 0; i < grid.phi_steps; ++i)
        for (int j = 0; j < grid.theta_steps; ++j)
            csv += io::fixed(grid.phi(i), 6) + "," + io::fixed(grid.theta(j), 6) + "," + io::fixed(map.pl(i, j), 8) +
                   "\n";
    std::string loci = "plane,phi_deg,theta_deg\n";
    json planes = json::array();
    for (const auto& p : degeneracy_planes(ref)) {
        planes.push_back({{"name", p.name}, {"normal", {p.normal.x(), p.normal.y(), p.normal.z()}}});
        for (const auto& [ph, th] : plane_locus(ref, p, grid))
            loci += p.name + "," + io::fixed(ph, 6) + "," + io::fixed(th, 6) + "\n";
    }
    const auto [ii, jj] = map.argmin();
    const auto [t1, t2] = transverse_axes(ref);
    json meta = {{"amplitude_G", a.amplitude},
                 {"reference_axis", a.reference},
                 {"phi_range_deg", a.range},
                 {"theta_range_deg", a.range},
                 {"steps", a.steps},
                 {"linewidth_MHz", a.linewidth},
                 {"contrast", a.contrast},
                 {"convention",
                  "axis = R(theta about t2) R(phi about t1) reference; t1 = unit part of [0,1,1] "
                  "perpendicular to the reference, t2 = reference x t1"},
                 {"t1", {rounded(t1.x(), 12), rounded(t1.y(), 12), rounded(t1.z(), 12)}},
                 {"t2", {rounded(t2.x(), 12), rounded(t2.y(), 12), rounded(t2.z(), 12)}},
                 {"pl_min", rounded(map.pl.minCoeff(), 8)},
                 {"pl_min_at_deg", {rounded(grid.phi(ii), 6), rounded(grid.theta(jj), 6)}},
                 {"degenerate", map.degenerate},
                 {"planes", planes}};
    io::OutputSet out;
    if (g.csv()) {
        out.add(g.path("map.csv"), csv);
        out.add(g.path("loci.csv"), loci);
    }
    if (g.json_out()) out.add(g.path("map.json"), meta.dump(2) + "\n");
    out.commit();
    std::printf("map %dx%d, minimum %s at (%s, %s) deg%s\n", grid.phi_steps, grid.theta_steps,
                io::fixed(map.pl.minCoeff(), 6).c_str(), io::fixed(grid.phi(ii), 3).c_str(),
                io::fixed(grid.theta(jj), 3).c_str(), map.degenerate ? " (no angular contrast)" : "");
    return 0;
}

void add_invert_settings(CLI::App* cmd, InvertSettings& s) {
    cmd->add_option("--nv", s.nv, "NV species name");
    cmd->add_option("--axis", s.axis, "sweep axis");
    cmd->add_option("--cal-unc", s.cal_unc, "field calibration uncertainty, G");
    cmd->add_option("--angle-unc", s.angle_unc, "field angle uncertainty, deg");
    cmd->add_option("--nv-d-unc", s.nv_d_unc, "NV zero-field splitting uncertainty, MHz");
    cmd->add_option("--nv-transition", s.nv_transition, "NV transition at the dip");
    cmd->add_option("--target-transition", s.target_transition, "partner transition at the dip");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"crosspeak: cross-relaxation resonance prediction and PL scan analysis"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--catalog", g.catalog, "species catalog JSON (default: $CROSSPEAK_CATALOG, then built-in)");
    app.add_option("-o,--out-dir", g.out_dir, "output directory");
    app.add_option("--formats", g.formats, "output formats: csv, json or csv,json");
    app.add_flag("-v,--verbose", g.verbosity, "more diagnostics on stderr");

    PredictArgs pa;
    auto* predict = app.add_subcommand("predict", "transition curves along a sweep axis");
    predict->add_option("--species", pa.species, "comma-separated species names");
    predict->add_option("--axis", pa.axis, "sweep axis, e.g. 100, 111 or x,y,z");
    predict->add_option("--range", pa.range, "field range min:max, G");
    predict->add_option("--step", pa.step, "field step, G");

    CrossingsArgs ca;
    auto* crossings = app.add_subcommand("crossings", "resonance fields between two species");
    crossings->add_option("--a", ca.a, "first species");
    crossings->add_option("--b", ca.b, "second species");
    crossings->add_option("--axis", ca.axis, "sweep axis");
    crossings->add_option("--range", ca.range, "field range min:max, G");
    crossings->add_option("--step", ca.step, "field step, G");
    crossings->add_flag("--p1-three-body", ca.three_body, "NV-NV-P1 three-body matching fields");
    crossings->add_option("--nv", ca.nv, "NV species for --p1-three-body");
    crossings->add_option("--p1", ca.p1, "P1 species for --p1-three-body");

    FitArgs fa;
    auto* fit = app.add_subcommand("fit", "calibrate, remove baseline and fit dips in a PL scan");
    fit->add_option("scan", fa.scan, "scan CSV with columns abscissa,counts")->required();
    fit->add_option("--fiducials", fa.fiducials, "fiducial CSV with columns voltage,frequency_MHz");
    fit->add_option("--kind", fa.kind, "abscissa kind: voltage or field");
    fit->add_option("--window", fa.windows, "excluded baseline window lo:hi, G (repeatable)");
    fit->add_option("--shape", fa.shape, "dip model: gaussian or lorentzian");
    fit->add_option("--k", fa.k, "detection threshold in robust noise units");
    fit->add_flag("--invert", fa.invert, "also invert each dip into a zero-field splitting");
    add_invert_settings(fit, fa.inv);

    InvertArgs ia;
    auto* invert = app.add_subcommand("invert", "zero-field splitting from a dip center");
    invert->add_option("--center", ia.centers, "dip center, G (repeatable)");
    invert->add_option("--center-sigma", ia.center_sigma, "fit uncertainty of the center, G");
    invert->add_option("--report", ia.report, "fit report JSON; every peak is inverted");
    add_invert_settings(invert, ia.inv);

    MapArgs ma;
    auto* map = app.add_subcommand("map", "angular map of same-species degeneracies");
    map->add_option("--amplitude", ma.amplitude, "field amplitude, G");
    map->add_option("--range", ma.range, "half range of both angles, deg");
    map->add_option("--steps", ma.steps, "grid points per angle");
    map->add_option("--linewidth", ma.linewidth, "Lorentzian FWHM, MHz");
    map->add_option("--contrast", ma.contrast, "depth of the deepest point");
    map->add_option("--reference", ma.reference, "reference axis");
    map->add_option("--nv", ma.nv, "NV species name");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*predict) return cmd_predict(g, pa);
        if (*crossings) return cmd_crossings(g, ca);
        if (*fit) return cmd_fit(g, fa);
        if (*invert) return cmd_invert(g, ia);
        if (*map) return cmd_map(g, ma);
    } catch (const Error& e) {
        std::fprintf(stderr, "crosspeak: %s\n", e.what());
        return e.exit_code();
    } catch (const std::exception& e) {
        std::fprintf(stderr, "crosspeak: internal error: %s\n", e.what());
        return 1;
    }
    note(g, "nothing to do");
    return 2;
}
