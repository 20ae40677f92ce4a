#pragma once

// Command implementations behind the mlr_cli front end: solve, reanalyze,
// sweep, bench and gen-demos. Argument parsing lives in tools/mlr_cli.cpp.

#include "mlr/demos.hpp"
#include "mlr/model_io.hpp"
#include "mlr/reanalysis.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <new>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace mlr::cli {

namespace fs = std::filesystem;
using Json = nlohmann::json;

/// CSV schema versions, written as the first line of every CSV file.
inline constexpr int kCsvVersion = 1;

/// Summary of one command, printed as JSON on stdout.
struct RunReport {
    std::string command;
    std::string method;  ///< full | ca | ifu (empty for bench and gen-demos)
    std::optional<ErrorMetrics> errors;
    double update_seconds = 0.0;  ///< stiffness assembly or update
    double solve_seconds = 0.0;
    int basis = 0;
    std::size_t n_d = 0;
    double residual = std::numeric_limits<double>::quiet_NaN();
    std::string update_path;  ///< local | global, for reanalysis
    std::vector<std::string> notes;
    Json probes = Json::object();
    Json references = Json::object();  ///< closed-form values stored with the model
    std::vector<std::string> outputs;
};

inline Json finite_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

inline Json to_json(const RunReport& r) {
    Json j{{"command", r.command}};
    if (!r.method.empty()) j["method"] = r.method;
    if (r.errors) j["errors"] = {{"E_u", finite_or_null(r.errors->e_u)}, {"E_eps", finite_or_null(r.errors->e_strain)},
                                 {"E_sigma", finite_or_null(r.errors->e_stress)}};
    j["timings"] = {{"update_seconds", r.update_seconds}, {"solve_seconds", r.solve_seconds}};
    if (r.basis > 0) j["basis"] = r.basis;
    if (r.method == "ifu") j["n_d"] = r.n_d;
    if (!std::isnan(r.residual)) j["residual"] = r.residual;
    if (!r.update_path.empty()) j["update_path"] = r.update_path;
    if (!r.probes.empty()) j["probes"] = r.probes;
    if (!r.references.empty()) j["references"] = r.references;
    if (!r.notes.empty()) j["notes"] = r.notes;
    j["outputs"] = r.outputs;
    return j;
}

// ---------------------------------------------------------------------------
// CSV output

inline std::string csv_header(const std::string& schema, const std::vector<std::string>& columns) {
    std::ostringstream out;
    out << "# mlr " << schema << " v" << kCsvVersion << "\n";
    for (std::size_t i = 0; i < columns.size(); ++i) out << (i ? "," : "") << columns[i];
    out << "\n";
    return out.str();
}

inline std::string fmt(double v) {
    if (!std::isfinite(v)) return std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
    std::ostringstream out;
    out.precision(17);
    out << v;
    return out.str();
}

inline std::vector<std::string> strain_columns(int dim, const std::string& prefix, bool engineering_shear) {
    const std::string shear = engineering_shear ? "gamma" : prefix;
    if (dim == 2) return {prefix + "_xx", prefix + "_yy", shear + "_xy"};
    return {prefix + "_xx", prefix + "_yy", prefix + "_zz", shear + "_yz", shear + "_zx", shear + "_xy"};
}

inline void write_displacements(const fs::path& path, const FieldSolution& f) {
    std::string text = csv_header("displacements", {"node_id", "axis", "value"});
    for (std::size_t i = 0; i < f.node_ids.size(); ++i)
        for (int a = 0; a < f.dim; ++a)
            text += std::to_string(f.node_ids[i]) + "," + std::to_string(a) + "," +
                    fmt(f.U[static_cast<Eigen::Index>(i) * f.dim + a]) + "\n";
    detail::write_text_file(path, text);
}

inline void write_fields(const fs::path& path, const FieldSolution& f) {
    std::vector<std::string> cols{"node_id"};
    for (auto& c : strain_columns(f.dim, "eps", true)) cols.push_back(c);
    for (auto& c : strain_columns(f.dim, "sigma", false)) cols.push_back(c);
    cols.push_back("vm_strain");
    cols.push_back("vm_stress");
    std::string text = csv_header("fields", cols);
    for (Eigen::Index i = 0; i < f.strain.rows(); ++i) {
        text += std::to_string(f.node_ids[static_cast<std::size_t>(i)]);
        for (Eigen::Index c = 0; c < f.strain.cols(); ++c) text += "," + fmt(f.strain(i, c));
        for (Eigen::Index c = 0; c < f.stress.cols(); ++c) text += "," + fmt(f.stress(i, c));
        text += "," + fmt(f.vm_strain[i]) + "," + fmt(f.vm_stress[i]) + "\n";
    }
    detail::write_text_file(path, text);
}

inline void ensure_directory(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory " + dir.string());
}

/// Writes displacements.csv and fields.csv into `dir`.
inline void write_solution(const fs::path& dir, const FieldSolution& f, RunReport& report) {
    ensure_directory(dir);
    write_displacements(dir / "displacements.csv", f);
    write_fields(dir / "fields.csv", f);
    report.outputs.push_back((dir / "displacements.csv").string());
    report.outputs.push_back((dir / "fields.csv").string());
}

// ---------------------------------------------------------------------------
// Model documents

/// Optional top-level entry of a model document, e.g. "probes"
/// ({"name": {"node": id, "axis": a}}) or "references" ({"name": value}).
inline Json read_extra(const fs::path& model_path, const char* key) {
    const Json doc = detail::read_json_file(model_path);
    return doc.contains(key) ? doc.at(key) : Json::object();
}

inline Json evaluate_probes(const Json& probes, const FieldSolution& f) {
    Json out = Json::object();
    for (const auto& [name, probe] : probes.items()) {
        if (!probe.is_object() || !probe.contains("node") || !probe.contains("axis")) throw ParseError("probe " + name + " needs node and axis");
        const NodeId id = probe.at("node").get<NodeId>();
        const int axis = probe.at("axis").get<int>();
        auto it = std::find(f.node_ids.begin(), f.node_ids.end(), id);
        if (it == f.node_ids.end() || axis < 0 || axis >= f.dim) throw ValidationError("probe " + name + " refers to a missing DOF");
        out[name] = f.U[static_cast<Eigen::Index>(it - f.node_ids.begin()) * f.dim + axis];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Commands

inline RunReport cmd_solve(const fs::path& model_path, const fs::path& out_dir) {
    const Model m = load_model(model_path);
    RunReport r;
    r.command = "solve";
    r.method = "full";
    StiffnessSystem sys;
    Eigen::VectorXd U;
    r.update_seconds = timed([&] { sys = apply_bcs(assemble_system(m), m.bc); });
    r.solve_seconds = timed([&] { U = factorize(sys).solve(sys.F); });
    r.residual = relative_residual(sys.K, U, sys.F);
    const FieldSolution f = recover_fields(U, sys.dofs, m.cloud, m.material, m.params);
    r.probes = evaluate_probes(read_extra(model_path, "probes"), f);
    r.references = read_extra(model_path, "references");
    write_solution(out_dir, f, r);
    return r;
}

struct ReanalyzeOptions {
    Method method = Method::kIfu;
    int basis = 10;
    UpdateStrategy update = UpdateStrategy::kLocal;
    bool reference = true;  ///< also solve the modified model from scratch and report errors
};

/// Fields of the modified configuration from a union-space solution.
inline FieldSolution modified_fields(const ReanalysisProblem& p, const Eigen::VectorXd& U, const NodalShapes& shapes) {
    return recover_fields(U, p.mm.dofs, shapes, p.mm.model.material);
}

inline std::string describe_update(const ReanalysisProblem& p, RunReport& r) {
    if (!p.update.delta.diagnostic.empty()) r.notes.push_back(p.update.delta.diagnostic);
    return p.update.delta.local ? "local" : "global";
}

inline RunReport cmd_reanalyze(const fs::path& model_path, const fs::path& mod_path, const ReanalyzeOptions& opt,
                               const fs::path& out_dir) {
    const Model m = load_model(model_path);
    const Modification mod = load_modification(mod_path, m.cloud.dim());
    if (opt.method == Method::kFull) throw ValidationError("reanalyze expects --method ca or ifu");
    RunReport r;
    r.command = "reanalyze";
    r.method = to_string(opt.method);
    const Baseline base = solve_baseline(m);
    const ReanalysisProblem p = prepare_reanalysis(base, mod, opt.update);
    r.update_seconds = p.update_seconds;
    r.update_path = describe_update(p, r);
    const MethodRun run = opt.method == Method::kCa ? run_ca(p, opt.basis) : run_ifu(p);
    r.solve_seconds = run.seconds;
    r.basis = run.basis;
    r.n_d = run.n_d;
    r.residual = run.residual;
    if (!run.diagnostic.empty()) r.notes.push_back(run.diagnostic);
    const NodalShapes shapes = nodal_shapes(p.mm.model.cloud, p.mm.model.params);
    const FieldSolution f = modified_fields(p, run.U, shapes);
    if (opt.reference) r.errors = error_metrics(f, modified_fields(p, run_full(p).U, shapes));
    write_solution(out_dir, f, r);
    return r;
}

/// Parses "A..B" (or a single "A") into an inclusive range.
inline std::pair<int, int> parse_range(const std::string& text) {
    const auto dots = text.find("..");
    try {
        std::size_t used = 0;
        if (dots == std::string::npos) {
            const int a = std::stoi(text, &used);
            if (used != text.size()) throw std::invalid_argument(text);
            return {a, a};
        }
        const std::string lo = text.substr(0, dots), hi = text.substr(dots + 2);
        const int a = std::stoi(lo, &used);
        if (used != lo.size()) throw std::invalid_argument(text);
        const int b = std::stoi(hi, &used);
        if (used != hi.size()) throw std::invalid_argument(text);
        return {a, b};
    } catch (const std::logic_error&) {
        throw ValidationError("basis range must look like A..B, got \"" + text + "\"");
    }
}

struct SweepRow {
    int s = 0;
    ErrorMetrics errors;
};

inline std::vector<SweepRow> sweep(const ReanalysisProblem& p, int first, int last) {
    if (first < 1 || last < first) throw ValidationError("basis range must satisfy 1 <= A <= B");
    const NodalShapes shapes = nodal_shapes(p.mm.model.cloud, p.mm.model.params);
    const FieldSolution ref = modified_fields(p, run_full(p).U, shapes);
    std::vector<SweepRow> rows;
    for (int s = first; s <= last; ++s) rows.push_back({s, error_metrics(modified_fields(p, run_ca(p, s).U, shapes), ref)});
    return rows;
}

inline RunReport cmd_sweep(const fs::path& model_path, const fs::path& mod_path, const std::string& range,
                           const fs::path& out_csv) {
    const auto [a, b] = parse_range(range);
    const Model m = load_model(model_path);
    const Modification mod = load_modification(mod_path, m.cloud.dim());
    RunReport r;
    r.command = "sweep";
    r.method = "ca";
    const Baseline base = solve_baseline(m);
    const ReanalysisProblem p = prepare_reanalysis(base, mod, UpdateStrategy::kLocal);
    r.update_seconds = p.update_seconds;
    r.update_path = describe_update(p, r);
    std::vector<SweepRow> rows;
    r.solve_seconds = timed([&] { rows = sweep(p, a, b); });
    std::string text = csv_header("sweep", {"s", "E_u", "E_eps", "E_sigma"});
    for (const auto& row : rows)
        text += std::to_string(row.s) + "," + fmt(row.errors.e_u) + "," + fmt(row.errors.e_strain) + "," + fmt(row.errors.e_stress) + "\n";
    if (out_csv.has_parent_path()) ensure_directory(out_csv.parent_path());
    detail::write_text_file(out_csv, text);
    r.basis = b;
    r.errors = rows.back().errors;
    r.outputs.push_back(out_csv.string());
    return r;
}

// ---------------------------------------------------------------------------
// Timing benchmark

/// Median timings of one family point. Update times cover the stiffness
/// update only; solve times cover the solution route given the initial
/// factor (CA, IFU) or a fresh factorization of the modified matrix (full).
struct BenchTimings {
    Eigen::Index dofs = 0;  ///< free and constrained DOFs of the initial model
    std::size_t changed_nodes = 0;
    double t_full = 0.0;
    double t_ca = 0.0;
    double t_ifu = 0.0;
    double t_local_update = 0.0;
    double t_global_update = 0.0;
    double e_u_ca = 0.0;
    double e_u_ifu = 0.0;
    std::size_t n_d = 0;
};

/// Displacement error in percent over the DOFs of nodes present in the
/// modified model. Removed DOFs are decoupled and carry no information.
inline double modified_error_percent(const ReanalysisProblem& p, const Eigen::VectorXd& U, const Eigen::VectorXd& ref) {
    std::vector<Eigen::Index> keep;
    const DofMap& dofs = p.mm.dofs;
    for (std::size_t q = 0; q < dofs.node_count(); ++q)
        if (dofs.node_in_modified(q))
            for (int a = 0; a < dofs.dim(); ++a) keep.push_back(static_cast<Eigen::Index>(q) * dofs.dim() + a);
    return relative_error_percent(U(keep), ref(keep));
}

inline double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// One warm-up round followed by `repeats` timed rounds.
inline BenchTimings time_point(const demos::Demo& d, int basis, int repeats) {
    if (!d.modification) throw ValidationError("bench point " + d.name + " has no modification");
    if (repeats < 1) throw ValidationError("repeats must be positive");
    const Baseline base = solve_baseline(d.model);
    BenchTimings t;
    t.dofs = base.sys.dofs.size();
    t.changed_nodes = d.modification->added.size() + d.modification->removed.size();
    std::vector<double> full, ca, ifu, local, global;
    for (int round = 0; round <= repeats; ++round) {
        const ReanalysisProblem p = prepare_reanalysis(base, *d.modification, UpdateStrategy::kLocal);
        const ReanalysisProblem g = prepare_reanalysis(base, *d.modification, UpdateStrategy::kGlobal);
        const MethodRun rf = run_full(p), rc = run_ca(p, basis), ri = run_ifu(p);
        if (round == 0) continue;
        local.push_back(p.update_seconds);
        global.push_back(g.update_seconds);
        full.push_back(rf.seconds);
        ca.push_back(rc.seconds);
        ifu.push_back(ri.seconds);
        t.e_u_ca = modified_error_percent(p, rc.U, rf.U);
        t.e_u_ifu = modified_error_percent(p, ri.U, rf.U);
        t.n_d = ri.n_d;
    }
    t.t_full = median(full);
    t.t_ca = median(ca);
    t.t_ifu = median(ifu);
    t.t_local_update = median(local);
    t.t_global_update = median(global);
    return t;
}

inline demos::BenchFamily family_from_json(const Json& j) {
    try {
        demos::BenchFamily fam;
        fam.name = j.value("name", std::string("family"));
        const std::string generator = j.value("generator", std::string("plate"));
        if (generator != "plate") throw ValidationError("unknown bench generator \"" + generator + "\"");
        const std::string change = detail::require(j, "change", "family").get<std::string>();
        if (change == "small") fam.change = demos::FamilyChange::kSmall;
        else if (change == "large") fam.change = demos::FamilyChange::kLarge;
        else throw ValidationError("family.change must be \"small\" or \"large\"");
        fam.fraction = detail::to_number(detail::require(j, "fraction", "family"), "family.fraction");
        if (!(fam.fraction > 0.0 && fam.fraction < 0.9)) throw ValidationError("family.fraction must lie in (0, 0.9)");
        fam.basis = static_cast<int>(j.value("basis", 10));
        fam.repeats = static_cast<int>(j.value("repeats", 3));
        fam.sizes.clear();
        for (const auto& s : detail::require(j, "sizes", "family")) {
            if (!s.is_array() || s.size() != 2) throw ParseError("family.sizes entries must be [nx, ny]");
            const std::array<int, 2> n{s[0].get<int>(), s[1].get<int>()};
            if (n[0] < 4 || n[1] < 4) throw ValidationError("family sizes need at least 4 nodes per axis");
            fam.sizes.push_back(n);
        }
        if (fam.sizes.empty()) throw ValidationError("family.sizes is empty");
        return fam;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("family: ") + e.what());
    }
}

inline Json family_to_json(const demos::BenchFamily& fam) {
    Json sizes = Json::array();
    for (const auto& s : fam.sizes) sizes.push_back({s[0], s[1]});
    return {{"name", fam.name},
            {"generator", "plate"},
            {"change", fam.change == demos::FamilyChange::kSmall ? "small" : "large"},
            {"fraction", fam.fraction},
            {"sizes", sizes},
            {"basis", fam.basis},
            {"repeats", fam.repeats}};
}

/// Long-format rows (dofs, method, phase, seconds, E_u) for one point.
inline std::string bench_rows(const BenchTimings& t) {
    const std::string d = std::to_string(t.dofs);
    auto row = [&](const char* method, const char* phase, double s, const std::string& e) {
        return d + "," + method + "," + phase + "," + fmt(s) + "," + e + "\n";
    };
    std::string out;
    out += row("full", "update", t.t_global_update, "");
    out += row("full", "solve", t.t_full, "0");
    out += row("full", "total", t.t_global_update + t.t_full, "0");
    out += row("ca", "update", t.t_local_update, "");
    out += row("ca", "solve", t.t_ca, fmt(t.e_u_ca));
    out += row("ca", "total", t.t_local_update + t.t_ca, fmt(t.e_u_ca));
    out += row("ifu", "update", t.t_local_update, "");
    out += row("ifu", "solve", t.t_ifu, fmt(t.e_u_ifu));
    out += row("ifu", "total", t.t_local_update + t.t_ifu, fmt(t.e_u_ifu));
    return out;
}

inline RunReport cmd_bench(const fs::path& family_path, const fs::path& out_csv) {
    const demos::BenchFamily fam = family_from_json(detail::read_json_file(family_path));
    RunReport r;
    r.command = "bench";
    std::string text = csv_header("bench", {"dofs", "method", "phase", "seconds", "E_u"});
    for (const auto& size : fam.sizes) {
        const demos::Demo d = demos::bench_point(fam, size);
        try {
            const BenchTimings t = time_point(d, fam.basis, fam.repeats);
            text += bench_rows(t);
            r.solve_seconds += t.t_full + t.t_ca + t.t_ifu;
        } catch (const std::bad_alloc&) {
            const std::string dofs = std::to_string(2 * d.model.cloud.size());
            text += dofs + ",error,out_of_memory,nan,\n";
            r.notes.push_back(d.name + ": out of memory");
        }
    }
    if (out_csv.has_parent_path()) ensure_directory(out_csv.parent_path());
    detail::write_text_file(out_csv, text);
    r.outputs.push_back(out_csv.string());
    return r;
}

// ---------------------------------------------------------------------------
// Bundled inputs

/// Adds displacement probes and closed-form reference values to a demo document.
inline void annotate_demo(const demos::Demo& d, Json& j) {
    if (d.name != "cantilever") return;
    const demos::BeamData beam;
    j["probes"] = {{"tip_deflection", {{"node", demos::cantilever_tip(d.model, beam)}, {"axis", 1}}}};
    j["references"] = {{"tip_deflection", -beam.tip_deflection()}};
}

/// Writes <name>.json (and <name>_mod.json when the demo has a modification)
/// for every demo, plus bench_small.json and bench_large.json.
inline RunReport cmd_gen_demos(const fs::path& dir) {
    ensure_directory(dir);
    RunReport r;
    r.command = "gen-demos";
    for (const demos::Demo& d : demos::all()) {
        Json j = model_to_json(d.model);
        annotate_demo(d, j);
        const fs::path model_path = dir / (d.name + ".json");
        detail::write_text_file(model_path, j.dump(1) + "\n");
        r.outputs.push_back(model_path.string());
        if (d.modification) {
            const fs::path mod_path = dir / (d.name + "_mod.json");
            save_modification(*d.modification, d.model.cloud.dim(), mod_path);
            r.outputs.push_back(mod_path.string());
        }
    }
    for (const auto& fam : {demos::small_family(), demos::large_family()}) {
        const fs::path path = dir / ("bench_" + fam.name + ".json");
        detail::write_text_file(path, family_to_json(fam).dump(1) + "\n");
        r.outputs.push_back(path.string());
    }
    return r;
}

/// Process exit code for an exception escaping a command.
inline int exit_code(const std::exception& e) {
    if (dynamic_cast<const IoError*>(&e)) return 4;
    if (dynamic_cast<const ValidationError*>(&e)) return 2;
    return 3;
}

}  // namespace mlr::cli
