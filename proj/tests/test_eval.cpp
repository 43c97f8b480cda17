#include <gtest/gtest.h>

#include <cars/eval.hpp>
#include <cars/report.hpp>

#include <map>
#include <set>
#include <sstream>

#include "oracle.hpp"

using namespace cars;
using cars::testing::random_tensor;

namespace {

std::vector<std::uint32_t> ranked_list(std::initializer_list<std::uint32_t> items) { return items; }

Vector constant_scores(std::size_t n, std::span<const std::uint32_t> exclude) {
    Vector s = Vector::Zero(static_cast<Eigen::Index>(n));
    for (auto i : exclude) s[i] = -std::numeric_limits<double>::infinity();
    return s;
}

ModelSpec wmf_spec(std::size_t k = 2) {
    ModelSpec s;
    s.algorithm = Algorithm::WMF;
    s.hp.k = k;
    s.hp.iterations = 3;
    return s;
}

} // namespace

TEST(Metrics, HitRateAndReciprocalRankExamples) {
    const auto ranked = ranked_list({7, 3, 9, 1, 4, 8});
    EXPECT_EQ(hr_at_k(ranked, 7, 5), 1.0);
    EXPECT_EQ(mrr_at_k(ranked, 7, 5), 1.0);
    EXPECT_EQ(hr_at_k(ranked, 8, 5), 0.0);  // rank 6
    EXPECT_EQ(mrr_at_k(ranked, 8, 5), 0.0);
    EXPECT_EQ(hr_at_k(ranked, 4, 5), 1.0);  // rank 5
    EXPECT_DOUBLE_EQ(mrr_at_k(ranked, 4, 5), 0.2);
    EXPECT_DOUBLE_EQ(mrr_at_k(ranked, 1, 5), 0.25);
    EXPECT_EQ(hr_at_k(ranked, 42, 5), 0.0);
}

TEST(Metrics, RankBeyondCutoffScoresZero) {
    EXPECT_EQ(metric_from_rank(Metric::HR, 21, 20), 0.0);
    EXPECT_EQ(metric_from_rank(Metric::MRR, 21, 20), 0.0);
    EXPECT_EQ(metric_from_rank(Metric::HR, 20, 20), 1.0);
    EXPECT_EQ(metric_from_rank(Metric::MRR, 0, 20), 0.0);
}

TEST(Metrics, RankOfBreaksTiesByIndex) {
    Vector s(5);
    s << 0.5, 0.9, 0.5, -std::numeric_limits<double>::infinity(), 0.5;
    EXPECT_EQ(rank_of(s, 1), 1u);
    EXPECT_EQ(rank_of(s, 0), 2u);
    EXPECT_EQ(rank_of(s, 2), 3u);
    EXPECT_EQ(rank_of(s, 4), 4u);
    EXPECT_EQ(rank_of(s, 3), 0u);
}

TEST(Evaluate, PerfectScorerHitsEverything) {
    const auto t = random_tensor(30, 40, ContextSchema{}, 0.2, 3);
    const auto split = loo_split(t, 1);
    std::map<std::uint32_t, std::uint32_t> target;
    for (const auto& tc : split.test) target[tc.user] = tc.item;
    const auto r = evaluate_scorer(
        [&](std::size_t u, std::span<const std::int32_t>, std::span<const std::uint32_t> ex) {
            Vector s = constant_scores(t.items(), ex);
            s[target.at(static_cast<std::uint32_t>(u))] = 1.0;
            return s;
        },
        split, kDefaultCutoffs, false);
    EXPECT_EQ(r.at(Metric::HR, 5).mean, 1.0);
    EXPECT_EQ(r.at(Metric::MRR, 5).mean, 1.0);
}

TEST(Evaluate, ConstantScorerMatchesEnumeratedHitRate) {
    const std::size_t n = 100;
    const auto t = random_tensor(60, n, ContextSchema{}, 0.05, 8);
    const auto split = loo_split(t, 2);
    const auto r = evaluate_scorer(
        [&](std::size_t, std::span<const std::int32_t>, std::span<const std::uint32_t> ex) {
            return constant_scores(n, ex);
        },
        split, kDefaultCutoffs, false);

    // Under ascending-index tie-breaking the target's rank is one plus the
    // number of non-excluded items with a smaller index.
    double hits = 0, rr = 0;
    for (const auto& tc : split.test) {
        std::set<std::uint32_t> seen;
        for (const auto& e : split.train.user_entries(tc.user)) seen.insert(e.item);
        std::size_t rank = 1;
        for (std::uint32_t j = 0; j < tc.item; ++j) rank += !seen.contains(j);
        hits += rank <= 20;
        rr += rank <= 5 ? 1.0 / rank : 0.0;
    }
    const double cases = static_cast<double>(split.test.size());
    EXPECT_DOUBLE_EQ(r.at(Metric::HR, 20).mean, hits / cases);
    EXPECT_DOUBLE_EQ(r.at(Metric::MRR, 5).mean, rr / cases);
    EXPECT_NEAR(r.at(Metric::HR, 20).mean, 20.0 / n, 0.15);
}

TEST(Evaluate, RetargetKeepsTrainingItemsRankable) {
    const auto t = random_tensor(20, 30, ContextSchema{}, 0.3, 1);
    const auto split = loo_split(t, 4);
    std::vector<std::size_t> seen_sizes;
    evaluate_scorer(
        [&](std::size_t, std::span<const std::int32_t>, std::span<const std::uint32_t> ex) {
            seen_sizes.push_back(ex.size());
            return constant_scores(t.items(), ex);
        },
        split, kDefaultCutoffs, true);
    for (auto s : seen_sizes) EXPECT_EQ(s, 0u);
}

TEST(Evaluate, NonFiniteScoreIsNumericalError) {
    const auto t = random_tensor(10, 10, ContextSchema{}, 0.4, 1);
    const auto split = loo_split(t, 4);
    auto nan_scorer = [&](std::size_t, std::span<const std::int32_t>, std::span<const std::uint32_t>) {
        Vector s = Vector::Zero(10);
        s[3] = std::numeric_limits<double>::quiet_NaN();
        return s;
    };
    EXPECT_THROW(evaluate_scorer(nan_scorer, split, kDefaultCutoffs, false), NumericalError);
}

TEST(Evaluate, MetricOrderingProperties) {
    const auto t = random_tensor(40, 25, ContextSchema{}, 0.25, 5);
    const std::vector<std::uint64_t> seeds{1, 2, 3};
    const auto r = cross_validate(t, wmf_spec(), seeds);
    EXPECT_LE(r.at(Metric::MRR, 5).mean, r.at(Metric::MRR, 20).mean);
    EXPECT_LE(r.at(Metric::HR, 5).mean, r.at(Metric::HR, 20).mean);
    for (auto k : kDefaultCutoffs) EXPECT_LE(r.at(Metric::MRR, k).mean, r.at(Metric::HR, k).mean);
    for (const auto& row : r.rows) {
        ASSERT_EQ(row.values.size(), 3u);
        EXPECT_GE(row.mean, *std::min_element(row.values.begin(), row.values.end()) - 1e-15);
        EXPECT_LE(row.mean, *std::max_element(row.values.begin(), row.values.end()) + 1e-15);
        EXPECT_GE(row.mean, 0.0);
        EXPECT_LE(row.mean, 1.0);
    }
}

TEST(CrossValidate, IdenticalSeedsGiveZeroSpread) {
    const auto t = random_tensor(30, 20, ContextSchema{}, 0.3, 2);
    const std::vector<std::uint64_t> seeds{7, 7, 7};
    const auto r = cross_validate(t, wmf_spec(), seeds);
    EXPECT_EQ(r.repetitions, 3u);
    for (const auto& row : r.rows) EXPECT_EQ(row.std, 0.0);
}

TEST(CrossValidate, DeterministicAndThreadIndependent) {
    const ContextSchema s({{"c", 3, false, {}}});
    const auto t = random_tensor(30, 20, s, 0.2, 2);
    ModelSpec spec = wmf_spec();
    spec.algorithm = Algorithm::CP;
    const std::vector<std::uint64_t> seeds{1, 2};
    EvalOptions threaded;
    threaded.threads = 4;
    const auto a = cross_validate(t, spec, seeds);
    const auto b = cross_validate(t, spec, seeds, threaded);
    ASSERT_EQ(a.rows.size(), b.rows.size());
    for (std::size_t j = 0; j < a.rows.size(); ++j) EXPECT_EQ(a.rows[j].values, b.rows[j].values);
}

TEST(CrossValidate, NoSeedsIsConfigError) {
    const auto t = random_tensor(5, 5, ContextSchema{}, 0.5, 2);
    EXPECT_THROW(cross_validate(t, wmf_spec(), {}), ConfigError);
}

TEST(Aggregate, MeanAndSampleStd) {
    EvalReport a, b;
    a.repetitions = b.repetitions = 1;
    a.rows = {{Metric::MRR, 5, 0.2, 0.0, {0.2}}};
    b.rows = {{Metric::MRR, 5, 0.4, 0.0, {0.4}}};
    const auto r = aggregate({a, b});
    EXPECT_EQ(r.repetitions, 2u);
    EXPECT_NEAR(r.rows[0].mean, 0.3, 1e-15);
    EXPECT_NEAR(r.rows[0].std, 0.1414213562373095, 1e-12);
}

TEST(Report, ShapeAndRoundTrip) {
    const auto rep = report_from_ranks({1, 3, 0, 7, 25}, kDefaultCutoffs);
    ASSERT_EQ(rep.rows.size(), 4u);
    EXPECT_EQ(rep.rows[0].metric, Metric::MRR);
    EXPECT_EQ(rep.rows[3].metric, Metric::HR);
    EXPECT_DOUBLE_EQ(rep.at(Metric::HR, 5).mean, 2.0 / 5);
    EXPECT_DOUBLE_EQ(rep.at(Metric::HR, 20).mean, 3.0 / 5);
    EXPECT_DOUBLE_EQ(rep.at(Metric::MRR, 5).mean, (1.0 + 1.0 / 3) / 5);

    std::ostringstream tsv;
    write_tsv(tsv, rep);
    std::size_t lines = 0;
    for (char c : tsv.str()) lines += c == '\n';
    EXPECT_EQ(lines, 1u + 8u);
    EXPECT_EQ(tsv.str().substr(0, tsv.str().find('\n')), "metric\tk\tstat\tvalue");

    const auto back = report_from_json(to_json(rep));
    ASSERT_EQ(back.rows.size(), rep.rows.size());
    for (std::size_t j = 0; j < rep.rows.size(); ++j) {
        EXPECT_EQ(back.rows[j].metric, rep.rows[j].metric);
        EXPECT_EQ(back.rows[j].k, rep.rows[j].k);
        EXPECT_EQ(back.rows[j].mean, rep.rows[j].mean);
    }
}

TEST(GridSearch, SinglePointReturnsIt) {
    const auto t = random_tensor(30, 20, ContextSchema{}, 0.3, 2);
    Grid g;
    g.lambda = {0.7};
    const auto r = grid_search(t, g, wmf_spec(), 11);
    ASSERT_EQ(r.leaderboard.size(), 1u);
    EXPECT_EQ(r.best.hp.lambda, 0.7);
}

TEST(GridSearch, LeaderboardCoversGridSorted) {
    const auto t = random_tensor(30, 20, ContextSchema{}, 0.3, 2);
    Grid g;
    g.k = {1, 2};
    g.alpha = {1, 10};
    g.lambda = {0.1, 1, 10};
    EXPECT_EQ(g.size(), 12u);
    const auto r = grid_search(t, g, wmf_spec(), 11);
    ASSERT_EQ(r.leaderboard.size(), 12u);
    std::set<std::size_t> idx;
    for (std::size_t j = 0; j < r.leaderboard.size(); ++j) {
        idx.insert(r.leaderboard[j].index);
        if (j == 0) continue;
        EXPECT_GE(r.leaderboard[j - 1].objective, r.leaderboard[j].objective);
        if (r.leaderboard[j - 1].objective == r.leaderboard[j].objective) {
            EXPECT_LT(r.leaderboard[j - 1].index, r.leaderboard[j].index);
        }
    }
    EXPECT_EQ(idx.size(), 12u);
    EXPECT_EQ(r.best.hp.k, r.leaderboard.front().spec.hp.k);
}

TEST(GridSearch, DominantPointWins) {
    // ItemKNN with no neighbors scores everything 0; any neighbors do better
    // on a tensor with strong item co-occurrence.
    std::vector<TensorEntry> entries;
    for (std::uint32_t u = 0; u < 40; ++u)
        for (std::uint32_t i = 0; i < 4; ++i) entries.push_back({u, (u % 5) * 4 + i, {}, 1.0});
    const InteractionTensor t(40, 20, ContextSchema{}, std::move(entries));
    ModelSpec base;
    base.algorithm = Algorithm::ITEMKNN;
    Grid g;
    g.neighbors = {0, 50};
    g.objective = Metric::HR;
    const auto r = grid_search(t, g, base, 3);
    EXPECT_EQ(r.best.neighbors, 50u);
    EXPECT_EQ(r.leaderboard.front().objective, 1.0);
}

TEST(GridSearch, Deterministic) {
    const auto t = random_tensor(30, 20, ContextSchema{}, 0.3, 2);
    Grid g;
    g.alpha = {1, 10};
    g.lambda = {0.1, 10};
    EvalOptions threaded;
    threaded.threads = 3;
    const auto a = grid_search(t, g, wmf_spec(), 5);
    const auto b = grid_search(t, g, wmf_spec(), 5, threaded);
    for (std::size_t j = 0; j < a.leaderboard.size(); ++j) {
        EXPECT_EQ(a.leaderboard[j].index, b.leaderboard[j].index);
        EXPECT_EQ(a.leaderboard[j].objective, b.leaderboard[j].objective);
    }
}

TEST(PosthocGridSearch, RejectsContextFreeAndRankGrid) {
    const auto t = random_tensor(10, 10, ContextSchema({{"c", 2, false, {}}}), 0.4, 2);
    Grid g;
    EXPECT_THROW(posthoc_grid_search(t, g, wmf_spec(), wmf_spec(), 1), ConfigError);
    ModelSpec cp = wmf_spec();
    cp.algorithm = Algorithm::CP;
    g.k = {2};
    EXPECT_THROW(posthoc_grid_search(t, g, wmf_spec(), cp, 1), ConfigError);
}
