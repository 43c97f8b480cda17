#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "metrics.hpp"
#include "parallel.hpp"
#include "recommender.hpp"
#include "tensor.hpp"

namespace cars {

inline const std::vector<std::size_t> kDefaultCutoffs{5, 20};

struct MetricRow {
    Metric metric = Metric::MRR;
    std::size_t k = 0;
    double mean = 0.0;
    /// Sample standard deviation over repetitions (0 for a single one).
    double std = 0.0;
    std::vector<double> values;
};

/// Mean and spread of every (metric, cutoff) pair over repetitions. Rows are
/// ordered MRR@k for each cutoff, then HR@k.
struct EvalReport {
    std::size_t repetitions = 0;
    std::vector<MetricRow> rows;

    const MetricRow& at(Metric m, std::size_t k) const {
        for (const auto& r : rows)
            if (r.metric == m && r.k == k) return r;
        throw std::out_of_range("EvalReport: no row for " + std::string(to_string(m)) + "@" + std::to_string(k));
    }
};

inline void summarize(MetricRow& row) {
    const auto n = static_cast<double>(row.values.size());
    row.mean = row.values.empty() ? 0.0 : std::accumulate(row.values.begin(), row.values.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : row.values) ss += (v - row.mean) * (v - row.mean);
    row.std = row.values.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
}

/// Concatenates per-repetition values of reports with identical row layout.
inline EvalReport aggregate(const std::vector<EvalReport>& reports) {
    EvalReport out;
    if (reports.empty()) return out;
    out.rows = reports.front().rows;
    for (auto& r : out.rows) r.values.clear();
    for (const auto& rep : reports) {
        out.repetitions += rep.repetitions;
        if (rep.rows.size() != out.rows.size()) throw std::invalid_argument("aggregate: mismatched report layout");
        for (std::size_t j = 0; j < rep.rows.size(); ++j)
            out.rows[j].values.insert(out.rows[j].values.end(), rep.rows[j].values.begin(), rep.rows[j].values.end());
    }
    for (auto& r : out.rows) summarize(r);
    return out;
}

/// Ranks of each test case's held-out item. Training items of the user are
/// excluded unless `retarget` is set.
template <typename ScoreFn>
std::vector<std::size_t> test_ranks(ScoreFn&& score, const SplitPair& split, bool retarget, unsigned threads = 1) {
    std::vector<std::size_t> ranks(split.test.size(), 0);
    parallel_for(split.test.size(), threads, [&](std::size_t j) {
        const auto& tc = split.test[j];
        std::vector<std::uint32_t> exclude;
        if (!retarget)
            for (const auto& e : split.train.user_entries(tc.user)) exclude.push_back(e.item);
        const Vector scores = score(tc.user, std::span<const std::int32_t>(tc.ctx), std::span<const std::uint32_t>(exclude));
        for (Eigen::Index i = 0; i < scores.size(); ++i)
            if (!std::isfinite(scores[i]) && scores[i] != -std::numeric_limits<double>::infinity())
                throw NumericalError("evaluate: non-finite score");
        ranks[j] = rank_of(scores, tc.item);
    });
    return ranks;
}

inline EvalReport report_from_ranks(const std::vector<std::size_t>& ranks, std::span<const std::size_t> cutoffs) {
    EvalReport report;
    report.repetitions = 1;
    for (auto metric : {Metric::MRR, Metric::HR}) {
        for (auto k : cutoffs) {
            MetricRow row{metric, k, 0.0, 0.0, {}};
            double sum = 0.0;
            for (auto r : ranks) sum += metric_from_rank(metric, r, k);
            row.values.push_back(ranks.empty() ? 0.0 : sum / static_cast<double>(ranks.size()));
            summarize(row);
            report.rows.push_back(std::move(row));
        }
    }
    return report;
}

/// Single-repetition evaluation of any scorer callable as
/// score(user, ctx, exclude) -> Vector.
template <typename ScoreFn>
EvalReport evaluate_scorer(ScoreFn&& score, const SplitPair& split, std::span<const std::size_t> cutoffs,
                           bool retarget, unsigned threads = 1) {
    return report_from_ranks(test_ranks(score, split, retarget, threads), cutoffs);
}

inline EvalReport evaluate(const Recommender& model, const SplitPair& split,
                           std::span<const std::size_t> cutoffs = kDefaultCutoffs, bool retarget = false,
                           unsigned threads = 1) {
    return evaluate_scorer(
        [&](std::size_t u, std::span<const std::int32_t> ctx, std::span<const std::uint32_t> ex) {
            return score_items(model, u, ctx, ex);
        },
        split, cutoffs, retarget, threads);
}

inline EvalReport evaluate(const FactorModel& model, const SplitPair& split,
                           std::span<const std::size_t> cutoffs = kDefaultCutoffs, bool retarget = false,
                           unsigned threads = 1) {
    return evaluate_scorer(
        [&](std::size_t u, std::span<const std::int32_t> ctx, std::span<const std::uint32_t> ex) {
            return score_items(model, u, ctx, ex);
        },
        split, cutoffs, retarget, threads);
}

struct EvalOptions {
    std::vector<std::size_t> cutoffs = kDefaultCutoffs;
    bool retarget = false;
    unsigned threads = 1;
    std::ostream* log = nullptr;
};

/// One repetition per seed: leave-one-out split with that seed, train
/// (initialization also seeded by it), evaluate.
inline EvalReport cross_validate(const InteractionTensor& t, const ModelSpec& spec,
                                 std::span<const std::uint64_t> seeds, const EvalOptions& options = {}) {
    if (seeds.empty()) throw ConfigError("cross_validate: no seeds");
    std::vector<EvalReport> reports(seeds.size());
    // Repetitions run concurrently; each training is then single-threaded.
    const bool outer = options.threads > 1 && seeds.size() > 1;
    parallel_for(seeds.size(), outer ? options.threads : 1, [&](std::size_t r) {
        const SplitPair split = loo_split(t, seeds[r]);
        ModelSpec s = spec;
        s.hp.seed = seeds[r];
        TrainOptions train_opts;
        train_opts.threads = outer ? 1 : options.threads;
        const Recommender model = train(split.train, s, train_opts);
        reports[r] = evaluate(model, split, options.cutoffs, options.retarget, train_opts.threads);
    });
    if (options.log)
        for (std::size_t r = 0; r < reports.size(); ++r)
            *options.log << "[cv] repetition " << (r + 1) << "/" << seeds.size() << " seed " << seeds[r] << " MRR@"
                         << options.cutoffs.front() << " " << reports[r].rows.front().mean << '\n';
    return aggregate(reports);
}

/// Candidate values per hyperparameter. An empty list keeps the base value.
struct Grid {
    std::vector<std::size_t> k;
    std::vector<double> alpha;
    std::vector<double> lambda;
    std::vector<double> nu;
    std::vector<std::size_t> cg_steps;
    std::vector<std::size_t> neighbors;
    Metric objective = Metric::MRR;
    std::size_t objective_k = 5;

    /// Number of configurations (product of the non-empty list sizes).
    std::size_t size() const {
        auto n = [](const auto& v) { return std::max<std::size_t>(1, v.size()); };
        return n(k) * n(alpha) * n(lambda) * n(nu) * n(cg_steps) * n(neighbors);
    }

    /// Configurations in enumeration order (k outermost, neighbors innermost).
    std::vector<ModelSpec> expand(const ModelSpec& base) const {
        auto pick = [](const auto& v, std::size_t idx, auto fallback) { return v.empty() ? fallback : v[idx]; };
        auto n = [](const auto& v) { return std::max<std::size_t>(1, v.size()); };
        std::vector<ModelSpec> out;
        out.reserve(size());
        for (std::size_t a = 0; a < n(k); ++a)
            for (std::size_t b = 0; b < n(alpha); ++b)
                for (std::size_t c = 0; c < n(lambda); ++c)
                    for (std::size_t d = 0; d < n(nu); ++d)
                        for (std::size_t e = 0; e < n(cg_steps); ++e)
                            for (std::size_t f = 0; f < n(neighbors); ++f) {
                                ModelSpec s = base;
                                s.hp.k = pick(k, a, base.hp.k);
                                s.hp.alpha = pick(alpha, b, base.hp.alpha);
                                s.hp.lambda = pick(lambda, c, base.hp.lambda);
                                s.hp.nu = pick(nu, d, base.hp.nu);
                                s.hp.cg_steps = pick(cg_steps, e, base.hp.cg_steps);
                                s.neighbors = pick(neighbors, f, base.neighbors);
                                out.push_back(s);
                            }
        return out;
    }
};

struct GridPoint {
    std::size_t index = 0; // position in enumeration order
    ModelSpec spec;
    EvalReport report;
    double objective = 0.0;
};

struct GridResult {
    ModelSpec best;
    /// Sorted by decreasing objective; ties keep enumeration order.
    std::vector<GridPoint> leaderboard;
};

/// Exhaustive sweep evaluated on a single leave-one-out split; fit(split,
/// spec) produces the model scored for each configuration.
template <typename Fit>
GridResult grid_search_with(const InteractionTensor& t, const Grid& grid, const ModelSpec& base, std::uint64_t seed,
                            const EvalOptions& options, Fit&& fit) {
    auto cutoffs = options.cutoffs;
    if (std::find(cutoffs.begin(), cutoffs.end(), grid.objective_k) == cutoffs.end())
        cutoffs.push_back(grid.objective_k);
    const auto specs = grid.expand(base);
    const SplitPair split = loo_split(t, seed);

    std::vector<GridPoint> points(specs.size());
    parallel_for(specs.size(), options.threads, [&](std::size_t j) {
        ModelSpec s = specs[j];
        s.hp.seed = seed;
        const Recommender model = fit(split, s);
        points[j] = {j, s, evaluate(model, split, cutoffs, options.retarget), 0.0};
        points[j].objective = points[j].report.at(grid.objective, grid.objective_k).mean;
    });
    if (options.log)
        for (const auto& p : points)
            *options.log << "[grid] " << (p.index + 1) << "/" << points.size() << " k=" << p.spec.hp.k
                         << " alpha=" << p.spec.hp.alpha << " lambda=" << p.spec.hp.lambda << " nu=" << p.spec.hp.nu
                         << " -> " << to_string(grid.objective) << "@" << grid.objective_k << " " << p.objective
                         << '\n';
    std::stable_sort(points.begin(), points.end(),
                     [](const GridPoint& a, const GridPoint& b) { return a.objective > b.objective; });
    GridResult result;
    result.best = points.front().spec;
    result.best.hp.seed = base.hp.seed;
    result.leaderboard = std::move(points);
    return result;
}

inline GridResult grid_search(const InteractionTensor& t, const Grid& grid, const ModelSpec& base, std::uint64_t seed,
                              const EvalOptions& options = {}) {
    return grid_search_with(t, grid, base, seed, options,
                            [](const SplitPair& split, const ModelSpec& s) { return train(split.train, s); });
}

/// Tunes the post-hoc context fit: one context-free base (trained with
/// base_spec on the grid split) is shared by every configuration of spec.
inline GridResult posthoc_grid_search(const InteractionTensor& t, const Grid& grid, const ModelSpec& base_spec,
                                      const ModelSpec& spec, std::uint64_t seed, const EvalOptions& options = {}) {
    if (spec.algorithm == Algorithm::WMF || spec.algorithm == Algorithm::ITEMKNN)
        throw ConfigError("post-hoc fit needs a context-aware algorithm");
    if (!grid.k.empty()) throw ConfigError("post-hoc grid cannot vary k (fixed by the base model)");
    const SplitPair split = loo_split(t, seed);
    Hyperparams base_hp = base_spec.hp;
    base_hp.seed = seed;
    const FactorModel base = wmf_train(split.train, base_hp);
    return grid_search_with(t, grid, spec, seed, options, [&](const SplitPair& sp, const ModelSpec& s) {
        return Recommender(posthoc_context_fit(base, sp.train, s.hp, factor_kind(s.algorithm)));
    });
}

} // namespace cars
