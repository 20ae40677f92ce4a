#pragma once

#include "mlr/errors.hpp"
#include "mlr/model.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace mlr {

namespace detail {

using Json = nlohmann::json;

inline const Json& require(const Json& obj, const char* key, const std::string& where) {
    if (!obj.is_object() || !obj.contains(key)) throw ParseError(where + ": missing key \"" + key + "\"");
    return obj.at(key);
}

inline double to_number(const Json& v, const std::string& where) {
    if (!v.is_number()) throw ParseError(where + ": expected a number");
    return v.get<double>();
}

inline std::int64_t to_integer(const Json& v, const std::string& where) {
    if (!v.is_number_integer()) throw ParseError(where + ": expected an integer");
    return v.get<std::int64_t>();
}

inline Eigen::Vector3d to_point(const Json& v, int dim, const std::string& where) {
    if (!v.is_array() || static_cast<int>(v.size()) != dim)
        throw ParseError(where + ": expected an array of " + std::to_string(dim) + " numbers");
    Eigen::Vector3d p = Eigen::Vector3d::Zero();
    for (int a = 0; a < dim; ++a) p[a] = to_number(v[static_cast<std::size_t>(a)], where);
    return p;
}

inline Json from_point(const Eigen::Vector3d& p, int dim) {
    Json arr = Json::array();
    for (int a = 0; a < dim; ++a) arr.push_back(p[a]);
    return arr;
}

inline std::vector<Node> parse_nodes(const Json& arr, int dim, const std::string& where) {
    if (!arr.is_array()) throw ParseError(where + ": expected an array");
    std::vector<Node> nodes;
    nodes.reserve(arr.size());
    for (const auto& n : arr) {
        nodes.push_back(Node{to_integer(require(n, "id", where), where + ".id"), to_point(require(n, "x", where), dim, where + ".x")});
    }
    return nodes;
}

inline MaterialModel parse_material(const Json& j) {
    MaterialModel mat;
    mat.young_modulus = to_number(require(j, "E", "material"), "material.E");
    mat.poisson_ratio = to_number(require(j, "nu", "material"), "material.nu");
    const Json& mode = require(j, "mode", "material");
    if (mode == "plane_stress") mat.mode = MaterialMode::kPlaneStress;
    else if (mode == "solid_3d") mat.mode = MaterialMode::kSolid3d;
    else throw ParseError("material.mode must be \"plane_stress\" or \"solid_3d\"");
    return mat;
}

inline Json dump_material(const MaterialModel& mat) {
    return Json{{"E", mat.young_modulus},
                {"nu", mat.poisson_ratio},
                {"mode", mat.mode == MaterialMode::kPlaneStress ? "plane_stress" : "solid_3d"}};
}

inline BoundaryConditions parse_bc(const Json& j, int dim) {
    BoundaryConditions bc;
    if (!j.is_object()) throw ParseError("bc: expected an object");
    if (j.contains("fixed")) {
        for (const auto& f : j.at("fixed")) {
            if (!f.is_array() || f.size() != 2) throw ParseError("bc.fixed entries must be [id, axis]");
            bc.fixed.push_back({to_integer(f[0], "bc.fixed"), static_cast<int>(to_integer(f[1], "bc.fixed"))});
        }
    }
    if (j.contains("point_loads")) {
        for (const auto& p : j.at("point_loads")) {
            if (!p.is_array() || p.size() != 3) throw ParseError("bc.point_loads entries must be [id, axis, value]");
            bc.point_loads.push_back({to_integer(p[0], "bc.point_loads"), static_cast<int>(to_integer(p[1], "bc.point_loads")),
                                      to_number(p[2], "bc.point_loads")});
        }
    }
    if (j.contains("tractions")) {
        for (const auto& t : j.at("tractions")) {
            bc.tractions.push_back({to_point(require(t, "from", "bc.tractions"), dim, "bc.tractions.from"),
                                    to_point(require(t, "to", "bc.tractions"), dim, "bc.tractions.to"),
                                    to_point(require(t, "q", "bc.tractions"), dim, "bc.tractions.q")});
        }
    }
    return bc;
}

inline Json dump_bc(const BoundaryConditions& bc, int dim) {
    Json fixed = Json::array(), loads = Json::array(), tractions = Json::array();
    for (const auto& f : bc.fixed) fixed.push_back(Json::array({f.node, f.axis}));
    for (const auto& p : bc.point_loads) loads.push_back(Json::array({p.node, p.axis, p.value}));
    for (const auto& t : bc.tractions)
        tractions.push_back(Json{{"from", from_point(t.from, dim)}, {"to", from_point(t.to, dim)}, {"q", from_point(t.q, dim)}});
    return Json{{"fixed", fixed}, {"point_loads", loads}, {"tractions", tractions}};
}

inline Json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return Json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace detail

/// Builds and validates a model from its JSON document.
inline Model model_from_json(const nlohmann::json& j) {
    using detail::require;
    try {
        const auto dim_raw = detail::to_integer(require(j, "dim", "model"), "dim");
        if (dim_raw != 2 && dim_raw != 3) throw ValidationError("dim must be 2 or 3");
        const int dim = static_cast<int>(dim_raw);

        Model m;
        m.cloud = NodeCloud(dim, detail::parse_nodes(require(j, "nodes", "model"), dim, "nodes"));

        const auto& g = require(j, "grid", "model");
        m.grid.dim = dim;
        m.grid.origin = detail::to_point(require(g, "origin", "grid"), dim, "grid.origin");
        m.grid.cell_size = Eigen::Vector3d::Ones();
        m.grid.cell_size.head(dim) = detail::to_point(require(g, "cell_size", "grid"), dim, "grid.cell_size").head(dim);
        const auto& counts = require(g, "counts", "grid");
        if (!counts.is_array() || static_cast<int>(counts.size()) != dim) throw ParseError("grid.counts: expected " + std::to_string(dim) + " integers");
        m.grid.counts = {1, 1, 1};
        for (int a = 0; a < dim; ++a) m.grid.counts[a] = static_cast<int>(detail::to_integer(counts[static_cast<std::size_t>(a)], "grid.counts"));

        m.material = detail::parse_material(require(j, "material", "model"));
        m.bc = j.contains("bc") ? detail::parse_bc(j.at("bc"), dim) : BoundaryConditions{};

        if (j.contains("params")) {
            const auto& p = j.at("params");
            if (p.contains("alpha")) m.params.alpha = detail::to_number(p.at("alpha"), "params.alpha");
            if (p.contains("theta")) m.params.theta = detail::to_number(p.at("theta"), "params.theta");
            if (p.contains("coverage")) m.params.coverage = detail::to_number(p.at("coverage"), "params.coverage");
        }
        if (j.contains("units")) {
            for (const auto& [key, value] : j.at("units").items()) {
                if (!value.is_string()) throw ParseError("units." + key + " must be a string");
                m.units[key] = value.get<std::string>();
            }
        }
        m.validate();
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("model: ") + e.what());
    }
}

inline nlohmann::json model_to_json(const Model& m) {
    const int dim = m.cloud.dim();
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& n : m.cloud.nodes()) nodes.push_back({{"id", n.id}, {"x", detail::from_point(n.x, dim)}});
    nlohmann::json counts = nlohmann::json::array();
    for (int a = 0; a < dim; ++a) counts.push_back(m.grid.counts[a]);
    nlohmann::json j{{"dim", dim},
                     {"nodes", nodes},
                     {"grid", {{"origin", detail::from_point(m.grid.origin, dim)},
                               {"cell_size", detail::from_point(m.grid.cell_size, dim)},
                               {"counts", counts}}},
                     {"material", detail::dump_material(m.material)},
                     {"bc", detail::dump_bc(m.bc, dim)},
                     {"params", {{"alpha", m.params.alpha}, {"theta", m.params.theta}, {"coverage", m.params.coverage}}}};
    if (!m.units.empty()) j["units"] = m.units;
    return j;
}

/// Parses a modification document against the dimension of its base model.
inline Modification modification_from_json(const nlohmann::json& j, int dim) {
    try {
        if (!j.is_object()) throw ParseError("modification: expected an object");
        Modification mod;
        if (j.contains("add")) mod.added = detail::parse_nodes(j.at("add"), dim, "add");
        if (j.contains("remove")) {
            const auto& r = j.at("remove");
            if (!r.is_array()) throw ParseError("remove: expected an array of ids");
            for (const auto& id : r) mod.removed.push_back(detail::to_integer(id, "remove"));
        }
        if (j.contains("material") && !j.at("material").is_null()) mod.material = detail::parse_material(j.at("material"));
        if (j.contains("bc") && !j.at("bc").is_null()) mod.bc = detail::parse_bc(j.at("bc"), dim);
        return mod;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("modification: ") + e.what());
    }
}

inline nlohmann::json modification_to_json(const Modification& mod, int dim) {
    nlohmann::json add = nlohmann::json::array();
    for (const auto& n : mod.added) add.push_back({{"id", n.id}, {"x", detail::from_point(n.x, dim)}});
    nlohmann::json j{{"add", add}, {"remove", mod.removed}};
    if (mod.material) j["material"] = detail::dump_material(*mod.material);
    if (mod.bc) j["bc"] = detail::dump_bc(*mod.bc, dim);
    return j;
}

inline Model load_model(const std::filesystem::path& path) {
    try {
        return model_from_json(detail::read_json_file(path));
    } catch (const ValidationError& e) {
        if (dynamic_cast<const ParseError*>(&e)) throw ParseError(path.string() + ": " + e.what());
        throw ValidationError(path.string() + ": " + e.what());
    }
}

inline void save_model(const Model& m, const std::filesystem::path& path) {
    detail::write_text_file(path, model_to_json(m).dump(1) + "\n");
}

inline Modification load_modification(const std::filesystem::path& path, int dim) {
    return modification_from_json(detail::read_json_file(path), dim);
}

inline void save_modification(const Modification& mod, int dim, const std::filesystem::path& path) {
    detail::write_text_file(path, modification_to_json(mod, dim).dump(1) + "\n");
}

}  // namespace mlr
