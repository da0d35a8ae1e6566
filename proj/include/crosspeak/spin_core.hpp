#pragma once

// Spin Hamiltonians of point defects in diamond: NV-like spin-1 centres,
// spin-1/2 centres with a hyperfine-coupled nucleus, and their labeled
// transition frequencies.
//
// Units throughout: energies and frequencies in MHz, fields in gauss.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "crosspeak/errors.hpp"

namespace crosspeak {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;
using Complex = std::complex<double>;

inline constexpr double kGammaElectron = 2.8025;  // MHz/G
inline constexpr double kGamma13C = 1.07e-3;      // MHz/G (10.7 MHz/T)
inline constexpr double kDefaultNvZfs = 2870.0;   // MHz

/// Minimum eigenvector overlap accepted between consecutive tracking points.
inline constexpr double kTrackingThreshold = 0.5;

/// Field used to lift zero-field degeneracies before labels are assigned.
inline constexpr double kAnchorField = 1e-3;  // G

// ---------------------------------------------------------------------------
// Spin values and operators
// ---------------------------------------------------------------------------

/// Spin quantum number, stored as 2S.
enum class Spin { Half = 1, One = 2 };

[[nodiscard]] inline int multiplicity(Spin s) { return static_cast<int>(s) + 1; }
[[nodiscard]] inline double spin_value(Spin s) { return 0.5 * static_cast<int>(s); }

[[nodiscard]] inline Spin spin_from_value(double s) {
    if (std::abs(s - 0.5) < 1e-12) return Spin::Half;
    if (std::abs(s - 1.0) < 1e-12) return Spin::One;
    throw ConfigError("unsupported spin value " + std::to_string(s) + " (only 1/2 and 1)");
}

struct SpinOperators {
    CMatrix x, y, z;
};

/// Angular momentum matrices in the |S, m> basis ordered m = S, S-1, ..., -S.
[[nodiscard]] inline SpinOperators spin_operators(Spin spin) {
    const double s = spin_value(spin);
    const int n = multiplicity(spin);
    CMatrix raise = CMatrix::Zero(n, n);
    CMatrix z = CMatrix::Zero(n, n);
    for (int i = 0; i < n; ++i) {
        const double m = s - i;
        z(i, i) = m;
        if (i > 0) raise(i - 1, i) = std::sqrt(s * (s + 1) - m * (m + 1));
    }
    const CMatrix lower = raise.adjoint();
    SpinOperators ops;
    ops.x = 0.5 * (raise + lower);
    ops.y = Complex(0, -0.5) * (raise - lower);
    ops.z = z;
    return ops;
}

// ---------------------------------------------------------------------------
// Geometry
// ---------------------------------------------------------------------------

struct MagneticField {
    double amplitude = 0.0;  // G
    Vec3 axis = Vec3::UnitZ();

    /// Field of `amplitude` gauss along `direction` (normalized here).
    [[nodiscard]] static MagneticField along(const Vec3& direction, double amplitude) {
        const double norm = direction.norm();
        if (!(norm > 0.0) || !std::isfinite(norm)) throw ConfigError("field direction must be a nonzero finite vector");
        if (!(amplitude >= 0.0) || !std::isfinite(amplitude)) throw ConfigError("field amplitude must be finite and >= 0");
        return MagneticField{amplitude, direction / norm};
    }

    [[nodiscard]] Vec3 vector() const { return amplitude * axis; }
};

/// Orientation of a defect's symmetry frame in the cubic crystal frame.
/// `symmetry_axis` is the local z axis, `transverse_x` the local x axis.
struct OrientationClass {
    int label = 0;
    Vec3 symmetry_axis = Vec3::UnitZ();
    Vec3 transverse_x = Vec3::UnitX();

    /// Rotation taking crystal-frame vectors to the defect frame (rows are the local axes).
    [[nodiscard]] Mat3 frame() const {
        Mat3 r;
        r.row(0) = transverse_x.transpose();
        r.row(1) = symmetry_axis.cross(transverse_x).transpose();
        r.row(2) = symmetry_axis.transpose();
        return r;
    }

    void validate() const {
        if (std::abs(symmetry_axis.norm() - 1.0) > 1e-12 || std::abs(transverse_x.norm() - 1.0) > 1e-12 ||
            std::abs(symmetry_axis.dot(transverse_x)) > 1e-12)
            throw ConfigError("orientation class axes must be orthonormal");
    }
};

/// The four <111> orientations of a trigonal defect. Class 1 is [111] with local x along
/// [11-2] (inside a {110} mirror plane); classes 2-4 are its images under the C2 rotations
/// about [100], [010] and [001].
[[nodiscard]] inline std::vector<OrientationClass> trigonal_classes() {
    const Vec3 axis = Vec3(1, 1, 1).normalized();
    const Vec3 x = Vec3(1, 1, -2).normalized();
    const std::array<Vec3, 4> c2 = {Vec3(1, 1, 1), Vec3(1, -1, -1), Vec3(-1, 1, -1), Vec3(-1, -1, 1)};
    std::vector<OrientationClass> out;
    for (int k = 0; k < 4; ++k) {
        const Mat3 r = c2[k].asDiagonal();
        out.push_back(OrientationClass{k + 1, r * axis, r * x});
    }
    return out;
}

[[nodiscard]] inline OrientationClass lab_frame() { return OrientationClass{0, Vec3::UnitZ(), Vec3::UnitX()}; }

// ---------------------------------------------------------------------------
// Species
// ---------------------------------------------------------------------------

struct NuclearSpin {
    Spin spin = Spin::Half;
    double gamma_n = 0.0;          // MHz/G
    Mat3 hyperfine = Mat3::Zero();  // MHz, defect frame
    double quadrupole = 0.0;       // MHz, spin-1 nuclei only
};

enum class OrientationKind { Trigonal111, Lab };

struct SpinSpecies {
    std::string name;
    Spin spin = Spin::One;
    double zfs_d = 0.0;  // MHz
    double zfs_e = 0.0;  // MHz
    double gamma_e = kGammaElectron;
    OrientationKind orientation = OrientationKind::Trigonal111;
    std::optional<NuclearSpin> nuclear;

    [[nodiscard]] int dimension() const {
        return multiplicity(spin) * (nuclear ? multiplicity(nuclear->spin) : 1);
    }

    [[nodiscard]] std::vector<OrientationClass> orientation_classes() const {
        if (orientation == OrientationKind::Lab) return {lab_frame()};
        return trigonal_classes();
    }

    void validate() const {
        if (name.empty()) throw ConfigError("species name must not be empty");
        for (double v : {zfs_d, zfs_e, gamma_e})
            if (!std::isfinite(v)) throw ConfigError("species '" + name + "': non-finite parameter");
        if (nuclear) {
            if (!nuclear->hyperfine.allFinite() || !std::isfinite(nuclear->gamma_n) || !std::isfinite(nuclear->quadrupole))
                throw ConfigError("species '" + name + "': non-finite nuclear parameter");
            if (nuclear->spin == Spin::Half && nuclear->quadrupole != 0.0)
                throw ConfigError("species '" + name + "': quadrupole term requires a spin-1 nucleus");
        }
    }
};

// ---------------------------------------------------------------------------
// Hamiltonian
// ---------------------------------------------------------------------------

struct HamiltonianMatrix {
    CMatrix entries;
    [[nodiscard]] int dim() const { return static_cast<int>(entries.rows()); }
};

namespace detail {

inline CMatrix kron(const CMatrix& a, const CMatrix& b) {
    CMatrix out(a.rows() * b.rows(), a.cols() * b.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cols(); ++j)
            out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    return out;
}

}  // namespace detail

/// Field-independent part and Zeeman operators of one species in one orientation,
/// so that H(B) = static + sum_k B'_k zeeman_k with B' the field in the defect frame.
class HamiltonianModel {
public:
    HamiltonianModel(const SpinSpecies& species, const OrientationClass& orientation)
        : frame_(orientation.frame()) {
        species.validate();
        orientation.validate();
        const SpinOperators s = spin_operators(species.spin);
        const int ne = multiplicity(species.spin);
        const int nn = species.nuclear ? multiplicity(species.nuclear->spin) : 1;
        const CMatrix id_e = CMatrix::Identity(ne, ne);
        const CMatrix id_n = CMatrix::Identity(nn, nn);

        const std::array<CMatrix, 3> se = {detail::kron(s.x, id_n), detail::kron(s.y, id_n), detail::kron(s.z, id_n)};
        static_ = species.zfs_d * se[2] * se[2] + species.zfs_e * (se[0] * se[0] - se[1] * se[1]);
        for (int k = 0; k < 3; ++k) zeeman_[k] = species.gamma_e * se[k];

        if (species.nuclear) {
            const NuclearSpin& nuc = *species.nuclear;
            const SpinOperators i = spin_operators(nuc.spin);
            const std::array<CMatrix, 3> in = {detail::kron(id_e, i.x), detail::kron(id_e, i.y), detail::kron(id_e, i.z)};
            for (int a = 0; a < 3; ++a)
                for (int b = 0; b < 3; ++b)
                    if (nuc.hyperfine(a, b) != 0.0) static_ += nuc.hyperfine(a, b) * se[a] * in[b];
            if (nuc.quadrupole != 0.0) {
                const double ii = spin_value(nuc.spin) * (spin_value(nuc.spin) + 1.0);
                static_ += nuc.quadrupole * (in[2] * in[2] - (ii / 3.0) * CMatrix::Identity(ne * nn, ne * nn));
            }
            for (int k = 0; k < 3; ++k) zeeman_[k] += nuc.gamma_n * in[k];
        }
        sz_ = se[2];
        sz2_ = se[2] * se[2];
    }

    [[nodiscard]] int dim() const { return static_cast<int>(static_.rows()); }

    /// H for a crystal-frame field vector in gauss.
    [[nodiscard]] CMatrix at(const Vec3& lab_field) const {
        const Vec3 b = frame_ * lab_field;
        CMatrix h = static_;
        for (int k = 0; k < 3; ++k)
            if (b[k] != 0.0) h += b[k] * zeeman_[k];
        return h;
    }

    [[nodiscard]] HamiltonianMatrix at(const MagneticField& field) const { return {at(field.vector())}; }

    /// Electron S_z and S_z^2 in the defect frame, embedded in the full space.
    [[nodiscard]] const CMatrix& electron_sz() const { return sz_; }
    [[nodiscard]] const CMatrix& electron_sz2() const { return sz2_; }

private:
    Mat3 frame_;
    CMatrix static_;
    std::array<CMatrix, 3> zeeman_;
    CMatrix sz_, sz2_;
};

/// H = D Sz^2 + E (Sx^2 - Sy^2) + gamma_e B.S [+ gamma_n B.I + S.A.I + P (Iz^2 - I(I+1)/3)],
/// with B expressed in the frame of `orientation`.
[[nodiscard]] inline HamiltonianMatrix build_hamiltonian(const SpinSpecies& species, const MagneticField& field,
                                                         const OrientationClass& orientation) {
    return HamiltonianModel(species, orientation).at(field);
}

// ---------------------------------------------------------------------------
// Eigensystem
// ---------------------------------------------------------------------------

struct Eigensystem {
    Eigen::VectorXd values;  // ascending
    CMatrix vectors;         // columns, orthonormal
};

inline constexpr double kHermitianTolerance = 1e-9;  // MHz, entrywise

[[nodiscard]] inline Eigensystem eigensystem(const CMatrix& h) {
    if (h.rows() != h.cols() || h.rows() == 0) throw ConfigError("eigensystem: matrix must be square and non-empty");
    if (!h.allFinite()) throw ConfigError("eigensystem: non-finite matrix entry");
    if ((h - h.adjoint()).cwiseAbs().maxCoeff() > kHermitianTolerance)
        throw ConfigError("eigensystem: matrix is not Hermitian");
    Eigen::SelfAdjointEigenSolver<CMatrix> solver(h);
    if (solver.info() != Eigen::Success) throw NumericalError("eigensystem: solver failed to converge");
    return {solver.eigenvalues(), solver.eigenvectors()};
}

[[nodiscard]] inline Eigensystem eigensystem(const HamiltonianMatrix& h) { return eigensystem(h.entries); }

// ---------------------------------------------------------------------------
// Adiabatic level tracking
// ---------------------------------------------------------------------------

/// Label of an eigenstate, anchored at (near-)zero field. `manifold` is the
/// electron |m_s| class for spin-1 species (0 or 1) and 0 for spin-1/2.
struct StateLabel {
    std::string name;
    int manifold = 0;
};

struct TrackingDiagnostic {
    double min_overlap = 1.0;
    double worst_field = 0.0;  // G, where min_overlap occurred
    [[nodiscard]] bool ok() const { return min_overlap >= kTrackingThreshold; }
};

/// Energies and eigenvectors in label order.
struct LabeledEigensystem {
    Eigen::VectorXd energies;
    CMatrix vectors;
};

namespace detail {

/// Greedy maximum-overlap assignment of new eigenvectors onto previous labeled ones.
/// Returns, for every label, the column of `next` it continues into; ties go to the
/// lower eigenvalue. `min_overlap` receives the smallest accepted overlap.
inline std::vector<int> match_states(const CMatrix& previous, const CMatrix& next, double& min_overlap) {
    const int n = static_cast<int>(previous.cols());
    const Eigen::MatrixXd overlap = (previous.adjoint() * next).cwiseAbs2();
    std::vector<int> order(static_cast<std::size_t>(n * n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return overlap(a / n, a % n) > overlap(b / n, b % n);
    });
    std::vector<int> assign(n, -1);
    std::vector<bool> taken(n, false);
    min_overlap = 1.0;
    int done = 0;
    for (int idx : order) {
        const int label = idx / n, col = idx % n;
        if (assign[label] >= 0 || taken[col]) continue;
        assign[label] = col;
        taken[col] = true;
        min_overlap = std::min(min_overlap, overlap(label, col));
        if (++done == n) break;
    }
    return assign;
}

inline LabeledEigensystem reorder(const Eigensystem& es, const std::vector<int>& assign) {
    LabeledEigensystem out{Eigen::VectorXd(es.values.size()), CMatrix(es.vectors.rows(), es.vectors.cols())};
    for (std::size_t l = 0; l < assign.size(); ++l) {
        out.energies[static_cast<Eigen::Index>(l)] = es.values[assign[l]];
        out.vectors.col(static_cast<Eigen::Index>(l)) = es.vectors.col(assign[l]);
    }
    return out;
}

inline std::vector<StateLabel> anchor_labels(const SpinSpecies& species, const HamiltonianModel& model,
                                             const CMatrix& vectors) {
    const int n = static_cast<int>(vectors.cols());
    std::vector<StateLabel> labels(n);
    for (int k = 0; k < n; ++k) {
        const CVector v = vectors.col(k);
        const double sz = v.dot(model.electron_sz() * v).real();
        const double sz2 = v.dot(model.electron_sz2() * v).real();
        if (species.spin == Spin::One) {
            if (sz2 < 0.5) labels[k] = {"ms=0", 0};
            else if (sz > 0.5) labels[k] = {"ms=+1", 1};
            else if (sz < -0.5) labels[k] = {"ms=-1", 1};
            else labels[k] = {"ms=+-1", 1};
        } else {
            labels[k] = {sz >= 0.0 ? "ms=+1/2" : "ms=-1/2", 0};
        }
    }
    if (species.nuclear) {
        std::vector<StateLabel> base = labels;
        for (int k = 0; k < n; ++k) {
            int index = 0;
            for (int j = 0; j < k; ++j)
                if (base[j].name == base[k].name) ++index;
            labels[k].name = base[k].name + "#" + std::to_string(index);
        }
    }
    return labels;
}

}  // namespace detail

/// Levels of one species/orientation followed adiabatically along a ray of field
/// directions `axis`, sampled at the requested amplitudes. Labels are assigned at
/// kAnchorField (degeneracies lifted by the field direction itself) in ascending
/// energy order and carried forward by maximum eigenvector overlap.
class LevelTrack {
public:
    LevelTrack(const SpinSpecies& species, const OrientationClass& orientation, const Vec3& axis,
               std::span<const double> fields, double max_step)
        : species_name_(species.name),
          orientation_label_(orientation.label),
          model_(species, orientation),
          axis_(MagneticField::along(axis, 0.0).axis) {
        if (!(max_step > 0.0)) throw ConfigError("tracking step must be positive");
        for (std::size_t i = 0; i < fields.size(); ++i) {
            if (!(fields[i] >= 0.0)) throw ConfigError("tracking fields must be >= 0");
            if (i > 0 && !(fields[i] > fields[i - 1])) throw ConfigError("tracking fields must be strictly increasing");
        }
        const Eigensystem anchor = eigensystem(model_.at(kAnchorField * axis_));
        labels_ = detail::anchor_labels(species, model_, anchor.vectors);

        LabeledEigensystem current{anchor.values, anchor.vectors};
        double position = kAnchorField;
        for (double target : fields) {
            if (target <= kAnchorField) {
                // Sorted energies map onto labels in anchor order; vectors stay at the anchor.
                const Eigensystem es = eigensystem(model_.at(target * axis_));
                fields_.push_back(target);
                energies_.push_back(es.values);
                vectors_.push_back(anchor.vectors);
                continue;
            }
            const int substeps = std::max(1, static_cast<int>(std::ceil((target - position) / max_step - 1e-9)));
            const double start = position;
            for (int s = 1; s <= substeps; ++s) {
                const double b = (s == substeps) ? target : start + (target - start) * s / substeps;
                current = advance(current.vectors, b);
            }
            position = target;
            fields_.push_back(target);
            energies_.push_back(current.energies);
            vectors_.push_back(current.vectors);
        }
    }

    [[nodiscard]] const std::string& species() const { return species_name_; }
    [[nodiscard]] int orientation() const { return orientation_label_; }
    [[nodiscard]] const Vec3& axis() const { return axis_; }
    [[nodiscard]] const std::vector<StateLabel>& labels() const { return labels_; }
    [[nodiscard]] const std::vector<double>& fields() const { return fields_; }
    [[nodiscard]] const TrackingDiagnostic& diagnostic() const { return diagnostic_; }
    [[nodiscard]] std::size_t size() const { return fields_.size(); }
    [[nodiscard]] double energy(std::size_t sample, std::size_t label) const {
        return energies_[sample][static_cast<Eigen::Index>(label)];
    }
    [[nodiscard]] const CMatrix& vectors(std::size_t sample) const { return vectors_[sample]; }
    [[nodiscard]] const HamiltonianModel& model() const { return model_; }

    /// Fresh diagonalization at `field` (gauss along the track axis), labeled by overlap
    /// with the nearest stored sample at or below it. Does not touch the diagnostic.
    [[nodiscard]] LabeledEigensystem at(double field) const {
        if (fields_.empty()) throw ConfigError("empty level track");
        auto it = std::upper_bound(fields_.begin(), fields_.end(), field);
        const std::size_t i = it == fields_.begin() ? 0 : static_cast<std::size_t>(it - fields_.begin()) - 1;
        const Eigensystem es = eigensystem(model_.at(field * axis_));
        if (field <= kAnchorField) return {es.values, vectors_[i]};
        double overlap = 1.0;
        return detail::reorder(es, detail::match_states(vectors_[i], es.vectors, overlap));
    }

private:
    LabeledEigensystem advance(const CMatrix& previous, double b) {
        const Eigensystem es = eigensystem(model_.at(b * axis_));
        double overlap = 1.0;
        const auto assign = detail::match_states(previous, es.vectors, overlap);
        if (overlap < diagnostic_.min_overlap) diagnostic_ = {overlap, b};
        return detail::reorder(es, assign);
    }

    std::string species_name_;
    int orientation_label_ = 0;
    HamiltonianModel model_;
    Vec3 axis_;
    std::vector<StateLabel> labels_;
    std::vector<double> fields_;
    std::vector<Eigen::VectorXd> energies_;
    std::vector<CMatrix> vectors_;
    TrackingDiagnostic diagnostic_;
};

// ---------------------------------------------------------------------------
// Transitions
// ---------------------------------------------------------------------------

enum class SelectionRule {
    NvProbe,       // ms=0 manifold -> ms=+-1 manifold of a spin-1 centre
    AllPairs,      // every pair of eigenstates
    ComplexSplit,  // as NvProbe, for a spin-1 centre with a coupled nucleus
};

/// NvProbe for bare spin-1, ComplexSplit for spin-1 with a nucleus, AllPairs otherwise.
[[nodiscard]] inline SelectionRule default_rule(const SpinSpecies& species) {
    if (species.spin == Spin::One) return species.nuclear ? SelectionRule::ComplexSplit : SelectionRule::NvProbe;
    return SelectionRule::AllPairs;
}

/// (from, to) label indices selected by `rule`, from-state first.
[[nodiscard]] inline std::vector<std::pair<int, int>> transition_pairs(const SpinSpecies& species,
                                                                       const std::vector<StateLabel>& labels,
                                                                       SelectionRule rule) {
    const int n = static_cast<int>(labels.size());
    std::vector<std::pair<int, int>> out;
    switch (rule) {
        case SelectionRule::AllPairs:
            for (int i = 0; i < n; ++i)
                for (int j = i + 1; j < n; ++j) out.emplace_back(i, j);
            return out;
        case SelectionRule::ComplexSplit:
            if (!species.nuclear)
                throw ConfigError("COMPLEX_SPLIT requires a coupled nucleus (species '" + species.name + "')");
            [[fallthrough]];
        case SelectionRule::NvProbe:
            if (species.spin != Spin::One)
                throw ConfigError("NV_PROBE/COMPLEX_SPLIT require an electron spin 1 (species '" + species.name + "')");
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j)
                    if (labels[i].manifold == 0 && labels[j].manifold == 1) out.emplace_back(i, j);
            return out;
    }
    return out;
}

struct LabeledTransition {
    std::string species;
    int orientation = 0;
    std::string from_state, to_state;
    double frequency = 0.0;               // MHz, >= 0
    double spin_projection_change = 0.0;  // <Sz>_to - <Sz>_from, defect frame

    [[nodiscard]] std::string id() const { return from_state + "->" + to_state; }
};

struct TransitionSet {
    std::vector<LabeledTransition> transitions;
    TrackingDiagnostic diagnostic;
};

/// Labeled transitions at `field`, with labels carried adiabatically from zero field
/// along the field direction in steps of at most `max_step` gauss.
[[nodiscard]] inline TransitionSet transitions(const SpinSpecies& species, const MagneticField& field,
                                               const OrientationClass& orientation, SelectionRule rule,
                                               double max_step = 0.25) {
    const std::array<double, 1> at = {field.amplitude};
    const LevelTrack track(species, orientation, field.axis, at, max_step);
    const auto& labels = track.labels();
    const CMatrix& vecs = track.vectors(0);
    std::vector<double> sz(labels.size());
    for (std::size_t k = 0; k < labels.size(); ++k) {
        const CVector v = vecs.col(static_cast<Eigen::Index>(k));
        sz[k] = v.dot(track.model().electron_sz() * v).real();
    }
    TransitionSet out;
    out.diagnostic = track.diagnostic();
    for (auto [i, j] : transition_pairs(species, labels, rule)) {
        out.transitions.push_back(LabeledTransition{species.name, orientation.label, labels[i].name, labels[j].name,
                                                    std::abs(track.energy(0, j) - track.energy(0, i)),
                                                    sz[j] - sz[i]});
    }
    return out;
}

}  // namespace crosspeak
