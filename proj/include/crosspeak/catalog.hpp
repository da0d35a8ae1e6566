#pragma once

// Species catalog: JSON list of spin species.
//
//   {"species": [
//     {"name": "NV", "S": 1, "D_MHz": 2870, "E_MHz": 0, "gamma_e_MHz_per_G": 2.8025,
//      "orientation": "111",
//      "nuclear": {"I": 0.5, "gamma_n_MHz_per_G": 1.07e-3, "A_MHz": [9 numbers, row-major],
//                  "quadrupole_P_MHz": 0}}
//   ]}
//
// A bare top-level array is accepted too. Unknown keys (e.g. "provenance") are ignored.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "crosspeak/errors.hpp"
#include "crosspeak/spin_core.hpp"

namespace crosspeak {

namespace detail {

inline double require_number(const nlohmann::json& j, const char* key, const std::string& where) {
    if (!j.contains(key)) throw ConfigError(where + ": missing key '" + key + "'");
    if (!j.at(key).is_number()) throw ConfigError(where + ": key '" + key + "' must be a number");
    return j.at(key).get<double>();
}

inline double optional_number(const nlohmann::json& j, const char* key, double fallback, const std::string& where) {
    if (!j.contains(key)) return fallback;
    return require_number(j, key, where);
}

inline Mat3 parse_tensor(const nlohmann::json& j, const std::string& where) {
    std::vector<double> flat;
    if (!j.is_array()) throw ConfigError(where + ": A_MHz must be an array");
    if (j.size() == 3 && j[0].is_array()) {
        for (const auto& row : j) {
            if (!row.is_array() || row.size() != 3) throw ConfigError(where + ": A_MHz rows must have 3 entries");
            for (const auto& v : row) {
                if (!v.is_number()) throw ConfigError(where + ": A_MHz entries must be numbers");
                flat.push_back(v.get<double>());
            }
        }
    } else {
        for (const auto& v : j) {
            if (!v.is_number()) throw ConfigError(where + ": A_MHz entries must be numbers");
            flat.push_back(v.get<double>());
        }
    }
    if (flat.size() != 9) throw ConfigError(where + ": A_MHz must hold 9 entries (3x3 row-major)");
    Mat3 a;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) a(r, c) = flat[static_cast<std::size_t>(3 * r + c)];
    return a;
}

}  // namespace detail

[[nodiscard]] inline SpinSpecies species_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("catalog entry must be an object");
    if (!j.contains("name") || !j.at("name").is_string()) throw ConfigError("catalog entry: missing string 'name'");
    SpinSpecies s;
    s.name = j.at("name").get<std::string>();
    const std::string where = "species '" + s.name + "'";
    s.spin = spin_from_value(detail::require_number(j, "S", where));
    s.zfs_d = detail::require_number(j, "D_MHz", where);
    s.zfs_e = detail::optional_number(j, "E_MHz", 0.0, where);
    s.gamma_e = detail::optional_number(j, "gamma_e_MHz_per_G", kGammaElectron, where);
    const std::string orientation = j.value("orientation", std::string("111"));
    if (orientation == "111") s.orientation = OrientationKind::Trigonal111;
    else if (orientation == "lab") s.orientation = OrientationKind::Lab;
    else throw ConfigError(where + ": orientation must be \"111\" or \"lab\"");
    if (j.contains("nuclear") && !j.at("nuclear").is_null()) {
        const auto& n = j.at("nuclear");
        if (!n.is_object()) throw ConfigError(where + ": 'nuclear' must be an object");
        NuclearSpin nuc;
        nuc.spin = spin_from_value(detail::require_number(n, "I", where));
        nuc.gamma_n = detail::require_number(n, "gamma_n_MHz_per_G", where);
        if (!n.contains("A_MHz")) throw ConfigError(where + ": missing key 'A_MHz'");
        nuc.hyperfine = detail::parse_tensor(n.at("A_MHz"), where);
        nuc.quadrupole = detail::optional_number(n, "quadrupole_P_MHz", 0.0, where);
        s.nuclear = nuc;
    }
    s.validate();
    return s;
}

[[nodiscard]] inline nlohmann::json species_to_json(const SpinSpecies& s) {
    nlohmann::json j{{"name", s.name},
                     {"S", spin_value(s.spin)},
                     {"D_MHz", s.zfs_d},
                     {"E_MHz", s.zfs_e},
                     {"gamma_e_MHz_per_G", s.gamma_e},
                     {"orientation", s.orientation == OrientationKind::Lab ? "lab" : "111"}};
    if (s.nuclear) {
        std::vector<double> a;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) a.push_back(s.nuclear->hyperfine(r, c));
        j["nuclear"] = {{"I", spin_value(s.nuclear->spin)},
                        {"gamma_n_MHz_per_G", s.nuclear->gamma_n},
                        {"A_MHz", a},
                        {"quadrupole_P_MHz", s.nuclear->quadrupole}};
    }
    return j;
}

class Catalog {
public:
    Catalog() = default;
    explicit Catalog(std::vector<SpinSpecies> species) : species_(std::move(species)) {
        for (std::size_t i = 0; i < species_.size(); ++i)
            for (std::size_t k = 0; k < i; ++k)
                if (species_[i].name == species_[k].name)
                    throw ConfigError("catalog: duplicate species '" + species_[i].name + "'");
    }

    [[nodiscard]] static Catalog from_json(const nlohmann::json& j) {
        const nlohmann::json* list = &j;
        if (j.is_object()) {
            if (!j.contains("species")) throw ConfigError("catalog: missing 'species' array");
            list = &j.at("species");
        }
        if (!list->is_array()) throw ConfigError("catalog: 'species' must be an array");
        std::vector<SpinSpecies> out;
        for (const auto& entry : *list) out.push_back(species_from_json(entry));
        return Catalog(std::move(out));
    }

    [[nodiscard]] static Catalog parse(const std::string& text) {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(text);
        } catch (const nlohmann::json::parse_error& e) {
            throw ConfigError(std::string("catalog: invalid JSON: ") + e.what());
        }
        return from_json(j);
    }

    [[nodiscard]] static Catalog load(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("catalog: cannot open " + path.string());
        std::stringstream buf;
        buf << in.rdbuf();
        return parse(buf.str());
    }

    [[nodiscard]] const std::vector<SpinSpecies>& species() const { return species_; }

    [[nodiscard]] const SpinSpecies& find(const std::string& name) const {
        for (const auto& s : species_)
            if (s.name == name) return s;
        throw ConfigError("catalog: unknown species '" + name + "'");
    }

    [[nodiscard]] nlohmann::json to_json() const {
        nlohmann::json list = nlohmann::json::array();
        for (const auto& s : species_) list.push_back(species_to_json(s));
        return {{"species", list}};
    }

private:
    std::vector<SpinSpecies> species_;
};

}  // namespace crosspeak
