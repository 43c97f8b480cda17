// cars: context-aware factorization experiments from a JSON config.
//
//   cars evaluate --config run.json [--output-dir out] [--threads 4]
//
// Exit status: 0 success, 1 runtime failure, 2 usage or config error.

#include <CLI11.hpp>

#include <cars/experiment.hpp>

#include <iostream>

namespace {

struct Overrides {
    std::string config_path;
    std::string output_dir;
    std::optional<unsigned> threads;
    std::vector<std::uint64_t> seeds;
    std::string model;
    std::string structure;
    std::string reg_mode;
    std::string solver;
    std::optional<std::size_t> k;
    std::optional<double> alpha;
    std::optional<double> lambda;
    std::optional<double> nu;
    std::optional<std::size_t> iterations;
    std::optional<std::size_t> cg_steps;
    std::optional<bool> retarget;
    std::string base_model;
    std::string reference_report;
};

void add_common(CLI::App* cmd, Overrides& o) {
    cmd->add_option("-c,--config", o.config_path, "JSON run configuration")->required()->check(CLI::ExistingFile);
    cmd->add_option("-o,--output-dir", o.output_dir, "Output directory (default: $CARS_OUTPUT_DIR or cars_out)");
    cmd->add_option("-j,--threads", o.threads, "Worker threads (0 = all hardware threads)");
    cmd->add_option("--seeds", o.seeds, "Repetition seeds");
    cmd->add_option("--model", o.model, "CP, PITF, TTF, WMF or ITEMKNN");
    cmd->add_option("--structure", o.structure, "STACKED_3D or MULTI_D");
    cmd->add_option("--reg-mode", o.reg_mode, "ZERO or ONE");
    cmd->add_option("--solver", o.solver, "EXACT or CG (TTF only)");
    cmd->add_option("--k", o.k, "Latent dimension");
    cmd->add_option("--alpha", o.alpha, "Confidence scale");
    cmd->add_option("--lambda", o.lambda, "Regularization");
    cmd->add_option("--nu", o.nu, "Frequency exponent");
    cmd->add_option("--iterations", o.iterations, "ALS sweeps");
    cmd->add_option("--cg-steps", o.cg_steps, "CG steps per TTF context update");
    cmd->add_option("--retarget", o.retarget, "Allow already consumed items in rankings");
}

/// Flags take precedence over the config document.
void apply_overrides(const Overrides& o, nlohmann::json& doc) {
    if (!o.output_dir.empty()) doc["output_dir"] = o.output_dir;
    if (o.threads) doc["threads"] = *o.threads;
    if (!o.seeds.empty()) doc["seeds"] = o.seeds;
    if (o.retarget) doc["retarget"] = *o.retarget;
    auto set = [&](const char* section, const char* key, const auto& value) { doc[section][key] = value; };
    if (!o.model.empty()) set("model", "kind", o.model);
    if (!o.structure.empty()) set("model", "structure", o.structure);
    if (!o.reg_mode.empty()) set("model", "reg_mode", o.reg_mode);
    if (!o.solver.empty()) set("model", "solver", o.solver);
    if (o.k) set("hyperparams", "k", *o.k);
    if (o.alpha) set("hyperparams", "alpha", *o.alpha);
    if (o.lambda) set("hyperparams", "lambda", *o.lambda);
    if (o.nu) set("hyperparams", "nu", *o.nu);
    if (o.iterations) set("hyperparams", "iterations", *o.iterations);
    if (o.cg_steps) set("hyperparams", "cg_steps", *o.cg_steps);
    if (!o.base_model.empty()) set("posthoc", "base_model", o.base_model);
    if (!o.reference_report.empty()) set("posthoc", "reference_report", o.reference_report);
}

int report_command(const std::string& path, const std::string& reference_path) {
    auto load = [](const std::string& p) {
        std::ifstream in(p);
        if (!in) throw cars::ConfigError("cannot open '" + p + "'");
        try {
            return cars::report_from_json(nlohmann::json::parse(in));
        } catch (const nlohmann::json::exception& e) {
            throw cars::ConfigError("'" + p + "': " + e.what());
        }
    };
    const auto report = load(path);
    if (reference_path.empty())
        cars::write_tsv(std::cout, report);
    else
        cars::write_tsv_with_reference(std::cout, report, load(reference_path));
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Context-aware tensor factorization recommenders"};
    app.require_subcommand(1);
    Overrides o;

    auto* preprocess = app.add_subcommand("preprocess", "Write the canonical interaction file and schema sidecar");
    auto* train = app.add_subcommand("train", "Train one model on all interactions");
    auto* evaluate = app.add_subcommand("evaluate", "Grid search (if configured), cross-validate, report");
    auto* grid = app.add_subcommand("grid", "Grid search on a single leave-one-out split");
    auto* posthoc = app.add_subcommand("posthoc", "Learn context factors on a frozen WMF model");
    for (auto* cmd : {preprocess, train, evaluate, grid, posthoc}) add_common(cmd, o);
    posthoc->add_option("--base-model", o.base_model, "Serialized WMF model");
    posthoc->add_option("--reference-report", o.reference_report, "report.json of the fully trained model");

    std::string report_path, report_reference;
    auto* report = app.add_subcommand("report", "Print a report.json as TSV");
    report->add_option("report", report_path, "report.json")->required();
    report->add_option("--reference", report_reference, "Reference report.json for the percentage column");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (report->parsed()) return report_command(report_path, report_reference);

        nlohmann::json doc = cars::read_json_file(o.config_path);
        apply_overrides(o, doc);
        const cars::RunConfig config = cars::parse_run_config(doc);
        CLI::App* cmd = app.get_subcommands().front();
        cars::RunContext ctx(cmd->get_name(), doc, config, std::cerr);
        if (cmd == preprocess) cars::run_preprocess(ctx);
        if (cmd == train) cars::run_train(ctx);
        if (cmd == evaluate) cars::run_experiment(ctx);
        if (cmd == grid) cars::run_grid(ctx);
        if (cmd == posthoc) cars::run_posthoc(ctx);
        ctx.write_manifest();
        std::cerr << "[done] outputs in " << config.output_dir << '\n';
        return 0;
    } catch (const cars::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
