#include "mlr/cli.hpp"
#include "mlr/demos.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

using namespace mlr;
namespace fs = std::filesystem;

namespace {

struct CliRun {
    int code = -1;
    nlohmann::json report;
    std::string err;
};

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("mlr_cli_test_" + std::to_string(::getpid())) / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

CliRun run_cli(const std::string& args) {
    const fs::path dir = scratch("io");
    const std::string cmd = std::string(MLR_CLI_PATH) + " " + args + " > " + (dir / "out").string() + " 2> " + (dir / "err").string();
    const int status = std::system(cmd.c_str());
    CliRun r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.err = slurp(dir / "err");
    const std::string out = slurp(dir / "out");
    if (r.code == 0 && !out.empty()) r.report = nlohmann::json::parse(out);
    return r;
}

std::string demo(const std::string& file) { return (fs::path(MLR_DEMO_DIR) / file).string(); }

/// Data rows of a CSV written by the CLI: the version line and column header are checked and skipped.
std::vector<std::vector<std::string>> csv_rows(const fs::path& p, const std::string& schema, const std::string& header) {
    std::ifstream in(p);
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "# mlr " + schema + " v1");
    std::getline(in, line);
    EXPECT_EQ(line, header);
    std::vector<std::vector<std::string>> rows;
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (!line.empty() && line.back() == ',') cells.emplace_back();
        rows.push_back(cells);
    }
    return rows;
}

std::map<std::pair<long, int>, double> displacements(const fs::path& p) {
    std::map<std::pair<long, int>, double> out;
    for (const auto& r : csv_rows(p, "displacements", "node_id,axis,value")) out[{std::stol(r[0]), std::stoi(r[1])}] = std::stod(r[2]);
    return out;
}

}  // namespace

TEST(Cli, BundledDemosMatchGenerators) {
    const fs::path dir = scratch("gen");
    const CliRun r = run_cli("gen-demos " + dir.string());
    ASSERT_EQ(r.code, 0) << r.err;
    for (const auto& d : demos::all()) {
        const auto fresh = nlohmann::json::parse(slurp(dir / (d.name + ".json")));
        const auto bundled = nlohmann::json::parse(slurp(demo(d.name + ".json")));
        EXPECT_EQ(fresh, bundled) << d.name << ": regenerate demos/ with mlr_cli gen-demos";
        if (d.modification) {
            EXPECT_EQ(slurp(dir / (d.name + "_mod.json")), slurp(demo(d.name + "_mod.json"))) << d.name;
        }
    }
    EXPECT_EQ(slurp(dir / "bench_small.json"), slurp(demo("bench_small.json")));
    EXPECT_EQ(slurp(dir / "bench_large.json"), slurp(demo("bench_large.json")));
}

TEST(Cli, SolveUnitPatchWritesEveryDof) {
    const fs::path out = scratch("patch");
    const CliRun r = run_cli("solve " + demo("unit_patch.json") + " -o " + out.string());
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(displacements(out / "displacements.csv").size(), 2u * 9u);
    const auto fields = csv_rows(out / "fields.csv", "fields",
                                 "node_id,eps_xx,eps_yy,gamma_xy,sigma_xx,sigma_yy,sigma_xy,vm_strain,vm_stress");
    ASSERT_EQ(fields.size(), 9u);
    for (const auto& row : fields) EXPECT_NEAR(std::stod(row[4]), demos::kPatchStress, 1e-6);
    EXPECT_LE(r.report.at("residual").get<double>(), 1e-10);
    EXPECT_EQ(r.report.at("method"), "full");
}

TEST(Cli, SolveCantileverReportsTipDeflection) {
    const CliRun r = run_cli("solve " + demo("cantilever.json") + " -o " + scratch("beam").string());
    ASSERT_EQ(r.code, 0) << r.err;
    const double tip = r.report.at("probes").at("tip_deflection");
    const double ref = r.report.at("references").at("tip_deflection");
    EXPECT_NEAR(ref, -demos::BeamData{}.tip_deflection(), 1e-15);
    EXPECT_LE(std::abs(tip - ref), 0.02 * std::abs(ref));
}

TEST(Cli, EmptyModificationReproducesBaseline) {
    const fs::path base = scratch("base"), dir = scratch("empty");
    ASSERT_EQ(run_cli("solve " + demo("bracket.json") + " -o " + base.string()).code, 0);
    std::ofstream(dir / "none.json") << "{}\n";
    const auto ref = displacements(base / "displacements.csv");
    double scale = 0.0;
    for (const auto& [k, v] : ref) scale = std::max(scale, std::abs(v));
    for (const std::string method : {"ca", "ifu"}) {
        const fs::path out = dir / method;
        const CliRun r = run_cli("reanalyze " + demo("bracket.json") + " " + (dir / "none.json").string() + " --method " + method + " -o " + out.string());
        ASSERT_EQ(r.code, 0) << r.err;
        const auto got = displacements(out / "displacements.csv");
        ASSERT_EQ(got.size(), ref.size());
        for (const auto& [k, v] : ref) EXPECT_NEAR(got.at(k), v, 1e-10 * scale) << method;
    }
}

TEST(Cli, ReanalyzePlateIfuIsExact) {
    const fs::path out = scratch("ifu");
    const CliRun r = run_cli("reanalyze " + demo("plate.json") + " " + demo("plate_mod.json") + " --method ifu -o " + out.string());
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_LE(r.report.at("errors").at("E_u").get<double>(), 1e-9);
    EXPECT_EQ(r.report.at("update_path"), "local");
    EXPECT_GT(r.report.at("n_d").get<int>(), 0);
    // removed nodes are not written
    const Model m = load_model(demo("plate.json"));
    const Modification mod = load_modification(demo("plate_mod.json"), 2);
    EXPECT_EQ(displacements(out / "displacements.csv").size(), 2 * (m.cloud.size() - mod.removed.size()));
}

TEST(Cli, ReanalyzePlateCaGlobalUpdate) {
    const CliRun r = run_cli("reanalyze " + demo("plate.json") + " " + demo("plate_mod.json") +
                      " --method ca --basis 10 --update global -o " + scratch("ca").string());
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_LT(r.report.at("errors").at("E_u").get<double>(), 1.0);
    EXPECT_EQ(r.report.at("update_path"), "global");
    EXPECT_EQ(r.report.at("basis"), 10);
}

TEST(Cli, SweepRows) {
    const fs::path dir = scratch("sweep");
    CliRun r = run_cli("sweep " + demo("plate.json") + " " + demo("plate_mod.json") + " --basis-range 1..1 -o " + (dir / "one.csv").string());
    ASSERT_EQ(r.code, 0) << r.err;
    const auto one = csv_rows(dir / "one.csv", "sweep", "s,E_u,E_eps,E_sigma");
    ASSERT_EQ(one.size(), 1u);
    EXPECT_EQ(one[0][0], "1");

    r = run_cli("sweep " + demo("plate.json") + " " + demo("plate_mod.json") + " --basis-range 1..15 -o " + (dir / "range.csv").string());
    ASSERT_EQ(r.code, 0) << r.err;
    const auto rows = csv_rows(dir / "range.csv", "sweep", "s,E_u,E_eps,E_sigma");
    ASSERT_EQ(rows.size(), 15u);
    EXPECT_LE(std::stod(rows[14][1]), std::stod(rows[2][1]));

    std::ofstream(dir / "none.json") << "{\"add\": [], \"remove\": []}\n";
    r = run_cli("sweep " + demo("cantilever.json") + " " + (dir / "none.json").string() + " --basis-range 1..4 -o " + (dir / "zero.csv").string());
    ASSERT_EQ(r.code, 0) << r.err;
    for (const auto& row : csv_rows(dir / "zero.csv", "sweep", "s,E_u,E_eps,E_sigma"))
        for (int c = 1; c <= 3; ++c) EXPECT_LE(std::stod(row[c]), 1e-8) << "s=" << row[0];
}

TEST(Cli, BenchSmallestPoint) {
    const fs::path dir = scratch("bench");
    std::ofstream(dir / "family.json") << R"({"name": "tiny", "change": "small", "fraction": 0.015, "sizes": [[16, 8]], "repeats": 1})";
    const CliRun r = run_cli("bench " + (dir / "family.json").string() + " -o " + (dir / "bench.csv").string());
    ASSERT_EQ(r.code, 0) << r.err;
    const auto rows = csv_rows(dir / "bench.csv", "bench", "dofs,method,phase,seconds,E_u");
    ASSERT_EQ(rows.size(), 9u);
    for (const auto& row : rows) {
        EXPECT_EQ(row[0], "256");
        EXPECT_GT(std::stod(row[3]), 0.0) << row[1] << " " << row[2];
        if (row[1] != "full" && row[2] == "solve") {
            EXPECT_LT(std::stod(row[4]), row[1] == "ifu" ? 1e-7 : 1.0) << row[1];
        }
    }
}

TEST(Cli, ExitCodes) {
    const fs::path dir = scratch("codes");
    EXPECT_EQ(run_cli("solve " + (dir / "missing.json").string() + " -o " + dir.string()).code, 4);
    std::ofstream(dir / "broken.json") << "{\"dim\": 2, \"nodes\": [";
    EXPECT_EQ(run_cli("solve " + (dir / "broken.json").string() + " -o " + dir.string()).code, 2);
    EXPECT_EQ(run_cli("reanalyze " + demo("plate.json") + " " + demo("plate_mod.json") + " --method nope -o " + dir.string()).code, 2);
    EXPECT_EQ(run_cli("sweep " + demo("plate.json") + " " + demo("plate_mod.json") + " --basis-range 5..2 -o " + (dir / "s.csv").string()).code, 2);
    EXPECT_EQ(run_cli("frobnicate").code, 2);

    // a clamp-free model has rigid-body modes: numerical failure
    auto doc = nlohmann::json::parse(slurp(demo("cantilever.json")));
    doc["bc"]["fixed"] = nlohmann::json::array();
    std::ofstream(dir / "free.json") << doc.dump();
    const CliRun r = run_cli("solve " + (dir / "free.json").string() + " -o " + dir.string());
    EXPECT_EQ(r.code, 3);
    EXPECT_NE(r.err.find("error"), std::string::npos);

    // output path blocked by a regular file
    std::ofstream(dir / "blocker") << "x";
    EXPECT_EQ(run_cli("solve " + demo("unit_patch.json") + " -o " + (dir / "blocker" / "sub").string()).code, 4);
}

TEST(CliUnits, ParseRange) {
    EXPECT_EQ(cli::parse_range("1..15"), std::make_pair(1, 15));
    EXPECT_EQ(cli::parse_range("4"), std::make_pair(4, 4));
    EXPECT_THROW(cli::parse_range("1-3"), ValidationError);
    EXPECT_THROW(cli::parse_range("a..3"), ValidationError);
    EXPECT_THROW(cli::parse_range("1..3x"), ValidationError);
}

TEST(CliUnits, MedianAndFamilyRoundTrip) {
    EXPECT_EQ(cli::median({3.0, 1.0, 2.0}), 2.0);
    EXPECT_EQ(cli::median({4.0, 1.0, 2.0, 3.0}), 2.5);
    const demos::BenchFamily fam = demos::large_family();
    const demos::BenchFamily back = cli::family_from_json(cli::family_to_json(fam));
    EXPECT_EQ(back.sizes, fam.sizes);
    EXPECT_EQ(back.fraction, fam.fraction);
    EXPECT_EQ(back.change, fam.change);
    EXPECT_THROW(cli::family_from_json({{"change", "huge"}, {"fraction", 0.1}, {"sizes", {{8, 8}}}}), ValidationError);
    EXPECT_THROW(cli::family_from_json({{"change", "small"}, {"fraction", 0.1}, {"sizes", nlohmann::json::array()}}), ValidationError);
}
