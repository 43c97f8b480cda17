#include <gtest/gtest.h>

#include <cars/baselines.hpp>
#include <cars/recommender.hpp>

#include <cmath>
#include <set>

#include "oracle.hpp"

using namespace cars;
using cars::testing::random_tensor;

namespace {

InteractionTensor binary(std::size_t m, std::size_t n, const std::vector<std::pair<std::uint32_t, std::uint32_t>>& ui) {
    std::vector<TensorEntry> entries;
    for (auto [u, i] : ui) entries.push_back({u, i, {}, 1.0});
    return InteractionTensor(m, n, ContextSchema{}, std::move(entries));
}

double cosine_oracle(const InteractionTensor& t, std::size_t i, std::size_t j) {
    std::set<std::uint32_t> ui, uj;
    for (const auto& e : t.entries()) {
        if (e.item == i) ui.insert(e.user);
        if (e.item == j) uj.insert(e.user);
    }
    std::size_t common = 0;
    for (auto u : ui) common += uj.count(u);
    if (ui.empty() || uj.empty()) return 0.0;
    return common / std::sqrt(static_cast<double>(ui.size() * uj.size()));
}

} // namespace

TEST(ItemKnn, IdenticalUserSetsHaveSimilarityOne) {
    const auto t = binary(3, 3, {{0, 0}, {0, 1}, {1, 0}, {1, 1}, {2, 2}});
    const auto m = itemknn(t);
    EXPECT_DOUBLE_EQ(m.similarity(0, 1), 1.0);
    EXPECT_DOUBLE_EQ(m.similarity(1, 0), 1.0);
}

TEST(ItemKnn, DisjointUserSetsHaveSimilarityZero) {
    const auto t = binary(3, 3, {{0, 0}, {1, 1}, {2, 2}});
    const auto m = itemknn(t);
    EXPECT_EQ(m.similarity(0, 1), 0.0);
    EXPECT_EQ(m.similarity(1, 2), 0.0);
}

TEST(ItemKnn, ThreeUserToyTable) {
    // u0: {0, 1}, u1: {0, 1, 2}, u2: {1, 2}
    const auto t = binary(3, 3, {{0, 0}, {0, 1}, {1, 0}, {1, 1}, {1, 2}, {2, 1}, {2, 2}});
    const auto m = itemknn(t);
    EXPECT_NEAR(m.similarity(0, 1), 2 / std::sqrt(6.0), 1e-15);
    EXPECT_NEAR(m.similarity(0, 2), 0.5, 1e-15);
    EXPECT_NEAR(m.similarity(1, 2), 2 / std::sqrt(6.0), 1e-15);
    // score(u2, 0) = sim(0, 1) + sim(0, 2)
    const Vector s = m.score_items(2);
    EXPECT_NEAR(s[0], 2 / std::sqrt(6.0) + 0.5, 1e-15);
}

TEST(ItemKnn, MatchesSetOracleSymmetricWithoutDiagonal) {
    const auto t = random_tensor(15, 12, ContextSchema{}, 0.3, 6);
    const auto m = itemknn(t, 1000);
    for (std::size_t i = 0; i < t.items(); ++i) {
        EXPECT_EQ(m.similarity(i, i), 0.0);
        for (const auto& nb : m.neighborhood(i)) EXPECT_NE(nb.item, i);
        for (std::size_t j = 0; j < t.items(); ++j) {
            if (i == j) continue;
            EXPECT_NEAR(m.similarity(i, j), cosine_oracle(t, i, j), 1e-14);
            EXPECT_EQ(m.similarity(i, j), m.similarity(j, i));
        }
    }
}

TEST(ItemKnn, PruningKeepsTopNeighbors) {
    const auto t = random_tensor(30, 20, ContextSchema{}, 0.4, 2);
    const auto full = itemknn(t, 1000);
    const auto pruned = itemknn(t, 3);
    for (std::size_t i = 0; i < t.items(); ++i) {
        const auto& hood = pruned.neighborhood(i);
        ASSERT_LE(hood.size(), 3u);
        for (std::size_t r = 0; r < hood.size(); ++r) EXPECT_EQ(hood[r].item, full.neighborhood(i)[r].item);
    }
}

TEST(ItemKnn, ContextsIgnoredAndExclusionsRespected) {
    const ContextSchema s({{"c", 3, false, {}}});
    const auto t = random_tensor(10, 8, s, 0.3, 4);
    const auto with = itemknn(t);
    const auto without = itemknn(collapse_contexts(t));
    const std::vector<std::uint32_t> ex{1, 5};
    for (std::size_t u = 0; u < t.users(); ++u) {
        const Vector a = with.score_items(u, ex);
        EXPECT_EQ(a, without.score_items(u, ex));
        EXPECT_EQ(a[1], -std::numeric_limits<double>::infinity());
        EXPECT_EQ(a[5], -std::numeric_limits<double>::infinity());
    }
}

TEST(Wmf, IgnoresContexts) {
    const ContextSchema s({{"c", 3, false, {}}});
    const auto t = random_tensor(10, 8, s, 0.3, 4);
    Hyperparams hp;
    hp.k = 3;
    hp.iterations = 4;
    const auto a = wmf_train(t, hp);
    const auto b = wmf_train(collapse_contexts(t), hp);
    EXPECT_LT((a.users - b.users).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((a.items - b.items).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Wmf, SameAsCpWithoutContexts) {
    const auto t = random_tensor(10, 8, ContextSchema{}, 0.3, 9);
    Hyperparams hp;
    hp.k = 3;
    hp.iterations = 4;
    const auto w = wmf_train(t, hp);
    const auto c = als_train(t, hp, ModelKind::CP);
    EXPECT_LT((w.users - c.users).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LT((w.items - c.items).cwiseAbs().maxCoeff(), 1e-10);
}
