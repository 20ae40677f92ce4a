// mlr_cli: meshless analysis and reanalysis from the command line.
//
//   mlr_cli solve <model> -o <dir>
//   mlr_cli reanalyze <model> <mod> --method ca|ifu [--basis N] [--update local|global] -o <dir>
//   mlr_cli sweep <model> <mod> --basis-range A..B -o <csv>
//   mlr_cli bench <family.json> -o <csv>
//   mlr_cli gen-demos <dir>
//
// Exit codes: 0 ok, 2 validation, 3 numerical, 4 I/O.

#include "mlr/cli.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <map>

int main(int argc, char** argv) {
    using namespace mlr;
    CLI::App app{"Meshless moving-Kriging analysis with CA and IFU reanalysis"};
    app.require_subcommand(1);

    std::string model, mod, out, range, family;
    cli::ReanalyzeOptions ro;

    auto* solve = app.add_subcommand("solve", "Full analysis of a model");
    solve->add_option("model", model, "Model JSON")->required();
    solve->add_option("-o,--out", out, "Output directory")->required();

    auto* re = app.add_subcommand("reanalyze", "Reanalysis of a modified design");
    re->add_option("model", model, "Initial model JSON")->required();
    re->add_option("modification", mod, "Modification JSON")->required();
    const std::map<std::string, Method> methods{{"ca", Method::kCa}, {"ifu", Method::kIfu}};
    const std::map<std::string, UpdateStrategy> updates{{"local", UpdateStrategy::kLocal}, {"global", UpdateStrategy::kGlobal}};
    re->add_option("--method", ro.method, "ca or ifu")->required()->transform(CLI::CheckedTransformer(methods));
    re->add_option("--basis", ro.basis, "CA basis vectors")->check(CLI::PositiveNumber);
    re->add_option("--update", ro.update, "Stiffness update: local or global")->transform(CLI::CheckedTransformer(updates));
    bool no_reference = false;
    re->add_flag("--no-reference", no_reference, "Skip the from-scratch reference solve");
    re->add_option("-o,--out", out, "Output directory")->required();

    auto* sw = app.add_subcommand("sweep", "CA errors over a range of basis sizes");
    sw->add_option("model", model, "Initial model JSON")->required();
    sw->add_option("modification", mod, "Modification JSON")->required();
    sw->add_option("--basis-range", range, "Inclusive range A..B")->required();
    sw->add_option("-o,--out", out, "Output CSV")->required();

    auto* bench = app.add_subcommand("bench", "Timing comparison over a model family");
    bench->add_option("family", family, "Family JSON")->required();
    bench->add_option("-o,--out", out, "Output CSV")->required();

    auto* gen = app.add_subcommand("gen-demos", "Write the bundled demo models");
    gen->add_option("dir", out, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        cli::RunReport report;
        if (*solve) report = cli::cmd_solve(model, out);
        else if (*re) {
            ro.reference = !no_reference;
            report = cli::cmd_reanalyze(model, mod, ro, out);
        } else if (*sw) report = cli::cmd_sweep(model, mod, range, out);
        else if (*bench) report = cli::cmd_bench(family, out);
        else report = cli::cmd_gen_demos(out);
        std::cout << cli::to_json(report).dump(2) << "\n";
        return 0;
    } catch (const std::exception& e) {
        const int code = cli::exit_code(e);
        std::cerr << nlohmann::json{{"error", e.what()}, {"exit_code", code}}.dump() << "\n";
        return code;
    }
}
