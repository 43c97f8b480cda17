#pragma once

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "datasets.hpp"
#include "error.hpp"
#include "eval.hpp"
#include "parallel.hpp"
#include "recommender.hpp"
#include "report.hpp"
#include "serialize.hpp"
#include "synth.hpp"

namespace cars {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr const char* kOutputDirEnv = "CARS_OUTPUT_DIR";
inline constexpr const char* kDefaultOutputDir = "cars_out";

struct SyntheticSource {
    std::size_t users = 2000;
    std::size_t items = 100;
    std::vector<ContextFeature> features{{"a", 4, false, {}}, {"b", 3, false, {}}};
    Signal signal = Signal::CONTEXT_OFFSET;
    std::uint64_t seed = 7;
};

struct CanonicalSource {
    std::string csv;
    std::string schema;
};

struct PosthocConfig {
    std::string base_model;
    std::optional<std::string> reference_report;
};

/// Everything one CLI invocation needs. Exactly one data source is set.
struct RunConfig {
    std::optional<DatasetSpec> dataset;
    std::optional<CanonicalSource> canonical;
    std::optional<SyntheticSource> synthetic;
    ModelSpec model;
    std::optional<Grid> grid;
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    std::uint64_t grid_seed = 99;
    std::vector<std::size_t> cutoffs = kDefaultCutoffs;
    bool retarget = false;
    std::string output_dir;
    /// 0 means all hardware threads.
    unsigned threads = 0;
    std::optional<PosthocConfig> posthoc;
};

namespace detail {

using nlohmann::json;

inline void check_keys(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
    if (!obj.is_object()) throw ConfigError(where + ": expected an object");
    for (const auto& [key, _] : obj.items()) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || key == a;
        if (!ok) throw ConfigError((where.empty() ? "" : where + ".") + key + ": unknown field");
    }
}

template <typename T>
void read_field(const json& obj, const char* key, const std::string& where, T& out) {
    if (!obj.contains(key)) return;
    const std::string field = (where.empty() ? "" : where + ".") + key;
    try {
        out = obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(field + ": wrong type");
    }
}

template <typename T>
void read_field(const json& obj, const char* key, const std::string& where, std::optional<T>& out) {
    if (!obj.contains(key) || obj.at(key).is_null()) return;
    T v{};
    read_field(obj, key, where, v);
    out = std::move(v);
}

/// Runs parse(value) and prefixes any ConfigError with the field name.
template <typename Parse>
auto read_enum(const json& obj, const char* key, const std::string& where, Parse&& parse)
    -> std::optional<decltype(parse(std::string{}))> {
    std::optional<std::string> s;
    read_field(obj, key, where, s);
    if (!s) return std::nullopt;
    try {
        return parse(*s);
    } catch (const ConfigError& e) {
        throw ConfigError(where + "." + key + ": " + e.what());
    }
}

inline DatasetSpec parse_dataset(const json& j) {
    check_keys(j, "dataset",
               {"path", "delimiter", "user_column", "item_column", "rating_column", "date_column", "amplitude_column",
                "context_columns", "date_contexts", "rating_threshold", "min_user_items", "min_item_interactions",
                "missing_markers"});
    DatasetSpec s;
    read_field(j, "path", "dataset", s.path);
    if (s.path.empty()) throw ConfigError("dataset.path: required");
    std::string delim(1, s.delimiter);
    read_field(j, "delimiter", "dataset", delim);
    if (delim == "\\t") delim = "\t";
    if (delim.size() != 1) throw ConfigError("dataset.delimiter: must be a single character");
    s.delimiter = delim[0];
    read_field(j, "user_column", "dataset", s.user_column);
    read_field(j, "item_column", "dataset", s.item_column);
    read_field(j, "rating_column", "dataset", s.rating_column);
    read_field(j, "date_column", "dataset", s.date_column);
    read_field(j, "amplitude_column", "dataset", s.amplitude_column);
    read_field(j, "context_columns", "dataset", s.context_columns);
    read_field(j, "date_contexts", "dataset", s.date_contexts);
    read_field(j, "rating_threshold", "dataset", s.rating_threshold);
    read_field(j, "min_user_items", "dataset", s.min_user_items);
    read_field(j, "min_item_interactions", "dataset", s.min_item_interactions);
    read_field(j, "missing_markers", "dataset", s.missing_markers);
    if (s.date_contexts && !s.date_column) throw ConfigError("dataset.date_contexts: needs dataset.date_column");
    if (s.rating_threshold && !s.rating_column) throw ConfigError("dataset.rating_threshold: needs dataset.rating_column");
    return s;
}

inline SyntheticSource parse_synthetic(const json& j) {
    check_keys(j, "synthetic", {"users", "items", "features", "signal", "seed"});
    SyntheticSource s;
    read_field(j, "users", "synthetic", s.users);
    read_field(j, "items", "synthetic", s.items);
    read_field(j, "seed", "synthetic", s.seed);
    if (auto sig = read_enum(j, "signal", "synthetic", [](const std::string& v) { return parse_signal(v); }))
        s.signal = *sig;
    if (j.contains("features")) {
        s.features.clear();
        if (!j.at("features").is_array()) throw ConfigError("synthetic.features: expected an array");
        for (const auto& f : j.at("features")) {
            check_keys(f, "synthetic.features[]", {"name", "cardinality"});
            ContextFeature feat;
            read_field(f, "name", "synthetic.features[]", feat.name);
            read_field(f, "cardinality", "synthetic.features[]", feat.cardinality);
            s.features.push_back(std::move(feat));
        }
    }
    if (s.users == 0 || s.items == 0) throw ConfigError("synthetic: users and items must be positive");
    return s;
}

inline Grid parse_grid(const json& j) {
    check_keys(j, "grid", {"k", "alpha", "lambda", "nu", "cg_steps", "neighbors", "objective", "objective_k"});
    Grid g;
    read_field(j, "k", "grid", g.k);
    read_field(j, "alpha", "grid", g.alpha);
    read_field(j, "lambda", "grid", g.lambda);
    read_field(j, "nu", "grid", g.nu);
    read_field(j, "cg_steps", "grid", g.cg_steps);
    read_field(j, "neighbors", "grid", g.neighbors);
    read_field(j, "objective_k", "grid", g.objective_k);
    if (auto m = read_enum(j, "objective", "grid", [](const std::string& v) { return parse_metric(v); }))
        g.objective = *m;
    return g;
}

inline void parse_model(const json& j, ModelSpec& spec, bool& solver_given) {
    check_keys(j, "model", {"kind", "structure", "reg_mode", "solver", "neighbors"});
    if (auto a = read_enum(j, "kind", "model", [](const std::string& v) { return parse_algorithm(v); }))
        spec.algorithm = *a;
    if (auto s = read_enum(j, "structure", "model", [](const std::string& v) { return parse_structure(v); }))
        spec.hp.structure = *s;
    if (auto r = read_enum(j, "reg_mode", "model", [](const std::string& v) { return parse_reg_mode(v); }))
        spec.hp.reg_mode = *r;
    if (auto s = read_enum(j, "solver", "model", [](const std::string& v) { return parse_solver(v); })) {
        spec.hp.solver = *s;
        solver_given = true;
    }
    read_field(j, "neighbors", "model", spec.neighbors);
}

inline void parse_hyperparams(const json& j, Hyperparams& hp) {
    check_keys(j, "hyperparams", {"k", "alpha", "lambda", "nu", "iterations", "cg_steps"});
    read_field(j, "k", "hyperparams", hp.k);
    read_field(j, "alpha", "hyperparams", hp.alpha);
    read_field(j, "lambda", "hyperparams", hp.lambda);
    read_field(j, "nu", "hyperparams", hp.nu);
    read_field(j, "iterations", "hyperparams", hp.iterations);
    read_field(j, "cg_steps", "hyperparams", hp.cg_steps);
    try {
        hp.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(std::string("hyperparams: ") + e.what());
    }
}

} // namespace detail

/// Builds a RunConfig from its JSON document. Every violation is reported as
/// a ConfigError naming the offending field.
inline RunConfig parse_run_config(const nlohmann::json& j) {
    using namespace detail;
    check_keys(j, "config",
               {"dataset", "canonical", "synthetic", "model", "hyperparams", "grid", "seeds", "grid_seed", "cutoffs",
                "retarget", "output_dir", "threads", "posthoc"});
    RunConfig c;
    if (j.contains("dataset")) c.dataset = parse_dataset(j.at("dataset"));
    if (j.contains("canonical")) {
        check_keys(j.at("canonical"), "canonical", {"csv", "schema"});
        CanonicalSource src;
        read_field(j.at("canonical"), "csv", "canonical", src.csv);
        read_field(j.at("canonical"), "schema", "canonical", src.schema);
        if (src.csv.empty() || src.schema.empty()) throw ConfigError("canonical: csv and schema are required");
        c.canonical = src;
    }
    if (j.contains("synthetic")) c.synthetic = parse_synthetic(j.at("synthetic"));
    const int sources = c.dataset.has_value() + c.canonical.has_value() + c.synthetic.has_value();
    if (sources != 1) throw ConfigError("dataset: exactly one of dataset, canonical, synthetic is required");

    bool solver_given = false;
    if (j.contains("model")) parse_model(j.at("model"), c.model, solver_given);
    if (j.contains("hyperparams")) parse_hyperparams(j.at("hyperparams"), c.model.hp);
    if (j.contains("grid")) c.grid = parse_grid(j.at("grid"));

    read_field(j, "seeds", "", c.seeds);
    if (c.seeds.empty()) throw ConfigError("seeds: at least one seed is required");
    read_field(j, "grid_seed", "", c.grid_seed);
    read_field(j, "cutoffs", "", c.cutoffs);
    if (c.cutoffs.empty()) throw ConfigError("cutoffs: at least one cutoff is required");
    for (auto k : c.cutoffs)
        if (k == 0) throw ConfigError("cutoffs: cutoffs must be positive");
    read_field(j, "retarget", "", c.retarget);
    read_field(j, "output_dir", "", c.output_dir);
    read_field(j, "threads", "", c.threads);
    if (j.contains("posthoc")) {
        check_keys(j.at("posthoc"), "posthoc", {"base_model", "reference_report"});
        PosthocConfig p;
        read_field(j.at("posthoc"), "base_model", "posthoc", p.base_model);
        read_field(j.at("posthoc"), "reference_report", "posthoc", p.reference_report);
        c.posthoc = p;
    }

    const auto kind = c.model.algorithm;
    if (kind == Algorithm::PITF && c.model.hp.structure != Structure::STACKED_3D)
        throw ConfigError("model.structure: PITF supports only STACKED_3D");
    if (kind == Algorithm::TTF && c.model.hp.structure != Structure::STACKED_3D)
        throw ConfigError("model.structure: TTF supports only STACKED_3D");
    if (solver_given && kind != Algorithm::TTF) throw ConfigError("model.solver: only meaningful for TTF");
    if (c.grid && !c.grid->cg_steps.empty() && kind != Algorithm::TTF)
        throw ConfigError("grid.cg_steps: only meaningful for TTF");
    if (c.grid && !c.grid->neighbors.empty() && kind != Algorithm::ITEMKNN)
        throw ConfigError("grid.neighbors: only meaningful for ITEMKNN");
    if (c.output_dir.empty()) {
        const char* env = std::getenv(kOutputDirEnv);
        c.output_dir = env && *env ? env : kDefaultOutputDir;
    }
    return c;
}

inline nlohmann::json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open '" + path + "'");
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config: invalid JSON in '" + path + "': " + e.what());
    }
}

inline unsigned resolved_threads(const RunConfig& c) { return c.threads == 0 ? default_thread_count() : c.threads; }

inline InteractionTensor load_data(const RunConfig& c) {
    if (c.dataset) return preprocess(*c.dataset);
    if (c.canonical) {
        std::ifstream csv(c.canonical->csv), side(c.canonical->schema);
        if (!csv) throw ParseError("cannot open '" + c.canonical->csv + "'", 0);
        if (!side) throw ParseError("cannot open '" + c.canonical->schema + "'", 0);
        return read_canonical(csv, side);
    }
    const auto& s = *c.synthetic;
    return synth_fixture(s.users, s.items, ContextSchema(s.features), s.signal, s.seed);
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char ch : bytes) {
        h ^= ch;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    std::ostringstream s;
    s << std::hex << std::setw(16) << std::setfill('0') << v;
    return s.str();
}

inline nlohmann::json spec_to_json(const ModelSpec& s) {
    return {{"kind", std::string(to_string(s.algorithm))},
            {"structure", std::string(to_string(s.hp.structure))},
            {"reg_mode", std::string(to_string(s.hp.reg_mode))},
            {"solver", std::string(to_string(s.hp.solver))},
            {"k", s.hp.k},
            {"alpha", s.hp.alpha},
            {"lambda", s.hp.lambda},
            {"nu", s.hp.nu},
            {"iterations", s.hp.iterations},
            {"cg_steps", s.hp.cg_steps},
            {"neighbors", s.neighbors}};
}

/// Output directory handling plus the manifest written next to every run.
class RunContext {
public:
    RunContext(std::string command, const nlohmann::json& config_doc, RunConfig config, std::ostream& log)
        : command_(std::move(command)), config_doc_(config_doc), config_(std::move(config)), log_(log),
          start_(std::chrono::steady_clock::now()) {
        std::filesystem::create_directories(config_.output_dir);
    }

    const RunConfig& config() const noexcept { return config_; }
    std::ostream& log() const noexcept { return log_; }
    std::filesystem::path path(const std::string& name) const { return std::filesystem::path(config_.output_dir) / name; }

    std::ofstream open(const std::string& name) {
        std::ofstream out(path(name), std::ios::binary);
        if (!out) throw std::runtime_error("cannot write '" + path(name).string() + "'");
        outputs_.push_back(name);
        return out;
    }

    void write_manifest() {
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        nlohmann::json m{{"command", command_},
                         {"config_hash", "fnv1a64:" + hex64(fnv1a(config_doc_.dump()))},
                         {"config", config_doc_},
                         {"versions",
                          {{"cars", kVersion},
                           {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
                                         "." + std::to_string(EIGEN_MINOR_VERSION)},
                           {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                                 std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                                 std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
                           {"compiler", __VERSION__}}},
                         {"threads", resolved_threads(config_)},
                         {"wall_time_seconds", secs},
                         {"outputs", outputs_}};
        std::ofstream out(path("manifest.json"));
        out << m.dump(2) << '\n';
    }

private:
    std::string command_;
    nlohmann::json config_doc_;
    RunConfig config_;
    std::ostream& log_;
    std::chrono::steady_clock::time_point start_;
    std::vector<std::string> outputs_;
};

inline void log_data(std::ostream& log, const InteractionTensor& t) {
    log << "[data] " << t.users() << " users, " << t.items() << " items, " << t.size() << " interactions, "
        << t.schema().size() << " context features\n";
}

inline void write_report_files(RunContext& ctx, const EvalReport& report, const nlohmann::json& extra) {
    {
        auto out = ctx.open("report.tsv");
        write_tsv(out, report);
    }
    auto j = to_json(report);
    for (const auto& [key, value] : extra.items()) j[key] = value;
    auto out = ctx.open("report.json");
    out << j.dump(2) << '\n';
}

inline void save_model_file(RunContext& ctx, const Recommender& model) {
    auto out = ctx.open("model.txt");
    save_model(out, model);
}

/// Preprocesses the configured source into the canonical interaction file.
inline void run_preprocess(RunContext& ctx) {
    const auto t = load_data(ctx.config());
    log_data(ctx.log(), t);
    auto csv = ctx.open("interactions.csv");
    auto side = ctx.open("schema.json");
    write_canonical(t, csv, side);
}

/// Trains one model on all interactions with the configured hyperparameters.
inline void run_train(RunContext& ctx) {
    const auto& c = ctx.config();
    const auto t = load_data(c);
    log_data(ctx.log(), t);
    ModelSpec spec = c.model;
    spec.hp.seed = c.seeds.front();
    TrainOptions opts;
    opts.threads = resolved_threads(c);
    opts.observer = [&](const SweepEvent& e) {
        if (e.block.kind == Block::Kind::USERS)
            ctx.log() << "[train] sweep " << (e.sweep + 1) << "/" << spec.hp.iterations << '\n';
    };
    save_model_file(ctx, train(t, spec, opts));
}

inline GridResult run_grid_search(const RunConfig& c, const InteractionTensor& t, std::ostream& log) {
    EvalOptions opts;
    opts.cutoffs = c.cutoffs;
    opts.retarget = c.retarget;
    opts.threads = resolved_threads(c);
    opts.log = &log;
    return grid_search(t, *c.grid, c.model, c.grid_seed, opts);
}

inline void write_leaderboard(RunContext& ctx, const GridResult& r, const Grid& grid) {
    auto out = ctx.open("leaderboard.tsv");
    out << "rank\tindex\tk\talpha\tlambda\tnu\tcg_steps\tneighbors\t" << to_string(grid.objective) << "@"
        << grid.objective_k << '\n';
    for (std::size_t j = 0; j < r.leaderboard.size(); ++j) {
        const auto& p = r.leaderboard[j];
        out << (j + 1) << '\t' << p.index << '\t' << p.spec.hp.k << '\t' << p.spec.hp.alpha << '\t'
            << p.spec.hp.lambda << '\t' << p.spec.hp.nu << '\t' << p.spec.hp.cg_steps << '\t' << p.spec.neighbors
            << '\t' << detail::fixed6(p.objective) << '\n';
    }
    auto best = ctx.open("best.json");
    best << spec_to_json(r.best).dump(2) << '\n';
}

/// Grid search only: leaderboard and best configuration.
inline void run_grid(RunContext& ctx) {
    const auto& c = ctx.config();
    if (!c.grid) throw ConfigError("grid: required by the grid command");
    const auto t = load_data(c);
    log_data(ctx.log(), t);
    write_leaderboard(ctx, run_grid_search(c, t, ctx.log()), *c.grid);
}

/// Full protocol: optional grid search, cross-validation over the seeds,
/// report, and a final model trained on all interactions.
inline void run_experiment(RunContext& ctx) {
    const auto& c = ctx.config();
    const auto t = load_data(c);
    log_data(ctx.log(), t);
    ModelSpec spec = c.model;
    if (c.grid) {
        const auto r = run_grid_search(c, t, ctx.log());
        write_leaderboard(ctx, r, *c.grid);
        spec = r.best;
    }
    EvalOptions opts;
    opts.cutoffs = c.cutoffs;
    opts.retarget = c.retarget;
    opts.threads = resolved_threads(c);
    opts.log = &ctx.log();
    const auto report = cross_validate(t, spec, c.seeds, opts);
    write_report_files(ctx, report, {{"model", spec_to_json(spec)}, {"seeds", c.seeds}});

    spec.hp.seed = c.seeds.front();
    TrainOptions topts;
    topts.threads = opts.threads;
    save_model_file(ctx, train(t, spec, topts));
}

inline FactorModel load_base_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("posthoc.base_model: cannot open '" + path + "'");
    FactorModel m;
    try {
        m = load_model(in);
    } catch (const ParseError& e) {
        throw ConfigError(std::string("posthoc.base_model: ") + e.what());
    }
    if (m.kind != ModelKind::WMF) throw ConfigError("posthoc.base_model: expected a WMF model");
    return m;
}

/// Post-hoc context learning on a context-free WMF model. The output model
/// reuses the base P and Q bit for bit. The report cross-validates the same
/// procedure, each repetition refitting WMF on its training split with the
/// base model's hyperparameters, so held-out interactions never reach P, Q.
inline void run_posthoc(RunContext& ctx) {
    const auto& c = ctx.config();
    if (!c.posthoc) throw ConfigError("posthoc: section required by the posthoc command");
    if (c.model.algorithm == Algorithm::WMF || c.model.algorithm == Algorithm::ITEMKNN)
        throw ConfigError("model.kind: post-hoc fit needs CP, PITF or TTF");
    const FactorModel base = load_base_model(c.posthoc->base_model);
    if (base.k() != c.model.hp.k)
        throw ConfigError("hyperparams.k: base model has k=" + std::to_string(base.k()) + " but config requests k=" +
                          std::to_string(c.model.hp.k));
    std::optional<EvalReport> reference;
    if (c.posthoc->reference_report) {
        std::ifstream in(*c.posthoc->reference_report);
        if (!in) throw ConfigError("posthoc.reference_report: cannot open '" + *c.posthoc->reference_report + "'");
        try {
            reference = report_from_json(nlohmann::json::parse(in));
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("posthoc.reference_report: ") + e.what());
        }
    }

    const auto t = load_data(c);
    log_data(ctx.log(), t);
    if (static_cast<std::size_t>(base.users.rows()) != t.users() ||
        static_cast<std::size_t>(base.items.rows()) != t.items())
        throw ConfigError("posthoc.base_model: shape " + std::to_string(base.users.rows()) + "x" +
                          std::to_string(base.items.rows()) + " does not match the data (" +
                          std::to_string(t.users()) + "x" + std::to_string(t.items()) + ")");

    const ModelKind kind = factor_kind(c.model.algorithm);
    const unsigned threads = resolved_threads(c);
    std::vector<EvalReport> reports(c.seeds.size());
    const bool outer = threads > 1 && c.seeds.size() > 1;
    parallel_for(c.seeds.size(), outer ? threads : 1, [&](std::size_t r) {
        const SplitPair split = loo_split(t, c.seeds[r]);
        Hyperparams base_hp = base.hp;
        base_hp.seed = c.seeds[r];
        TrainOptions topts;
        topts.threads = outer ? 1 : threads;
        const FactorModel fold_base = wmf_train(split.train, base_hp, topts);
        const FactorModel m = posthoc_context_fit(fold_base, split.train, c.model.hp, kind, topts);
        reports[r] = evaluate(m, split, c.cutoffs, c.retarget, topts.threads);
    });
    for (std::size_t r = 0; r < reports.size(); ++r)
        ctx.log() << "[posthoc] repetition " << (r + 1) << "/" << c.seeds.size() << " seed " << c.seeds[r] << '\n';
    const EvalReport report = aggregate(reports);

    {
        auto out = ctx.open("report.tsv");
        if (reference)
            write_tsv_with_reference(out, report, *reference);
        else
            write_tsv(out, report);
    }
    auto j = to_json(report);
    j["model"] = spec_to_json(c.model);
    j["seeds"] = c.seeds;
    if (reference) {
        nlohmann::json pct = nlohmann::json::array();
        for (const auto& row : report.rows)
            for (const auto& ref : reference->rows)
                if (ref.metric == row.metric && ref.k == row.k && ref.mean != 0.0)
                    pct.push_back({{"metric", std::string(to_string(row.metric))},
                                   {"k", row.k},
                                   {"percent_of_reference", 100.0 * row.mean / ref.mean}});
        j["percent_of_reference"] = pct;
    }
    {
        auto out = ctx.open("report.json");
        out << j.dump(2) << '\n';
    }
    TrainOptions topts;
    topts.threads = threads;
    save_model_file(ctx, posthoc_context_fit(base, t, c.model.hp, kind, topts));
}

} // namespace cars
