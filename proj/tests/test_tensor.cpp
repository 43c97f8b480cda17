#include <gtest/gtest.h>

#include <cars/tensor.hpp>

#include <set>

#include "oracle.hpp"

using namespace cars;
using cars::testing::random_tensor;

namespace {

ContextSchema two_features(bool missing = false) {
    return ContextSchema({{"c1", 3, missing, {}}, {"c2", 7, missing, {}}});
}

std::vector<std::vector<std::int32_t>> coords(const InteractionTensor& t) {
    std::vector<std::vector<std::int32_t>> out;
    for (const auto& e : t.entries()) {
        std::vector<std::int32_t> c{static_cast<std::int32_t>(e.user), static_cast<std::int32_t>(e.item)};
        c.insert(c.end(), e.ctx.begin(), e.ctx.end());
        out.push_back(std::move(c));
    }
    return out;
}

} // namespace

TEST(ContextSchema, OffsetsArePrefixSums) {
    const ContextSchema s({{"a", 4, false, {}}, {"b", 2, false, {}}, {"c", 5, false, {}}});
    EXPECT_EQ(s.offset(0), 0u);
    EXPECT_EQ(s.offset(1), 4u);
    EXPECT_EQ(s.offset(2), 6u);
    EXPECT_EQ(s.stacked_size(), 11u);
    EXPECT_DOUBLE_EQ(s.cell_count(), 40.0);
}

TEST(ContextSchema, RejectsZeroCardinalityAndDuplicateNames) {
    EXPECT_THROW(ContextSchema({{"a", 0, false, {}}}), SchemaError);
    EXPECT_THROW(ContextSchema({{"a", 2, false, {}}, {"a", 3, false, {}}}), SchemaError);
    EXPECT_THROW(ContextSchema({{"a", 2, false, {"x"}}}), SchemaError);
}

TEST(ContextSchema, ValidatesCoordinates) {
    const auto s = two_features();
    std::vector<std::int32_t> ok{2, 6}, high{3, 0}, missing{kMissing, 0}, arity{1};
    EXPECT_NO_THROW(s.validate(ok));
    EXPECT_THROW(s.validate(high), SchemaError);
    EXPECT_THROW(s.validate(missing), SchemaError);
    EXPECT_THROW(s.validate(arity), SchemaError);
    EXPECT_NO_THROW(two_features(true).validate(missing));
}

TEST(BuildTensor, DuplicatesAggregateAmplitude) {
    const std::vector<RawRecord> recs{{"u", "i", {1, 2}, 1.0}, {"u", "i", {1, 2}, 1.0}};
    const auto t = build_tensor(recs, two_features());
    ASSERT_EQ(t.size(), 1u);
    EXPECT_DOUBLE_EQ(t[0].amplitude, 2.0);
}

TEST(BuildTensor, EmptyRecords) {
    const auto t = build_tensor({}, two_features());
    EXPECT_EQ(t.size(), 0u);
    EXPECT_EQ(t.users(), 0u);
    EXPECT_EQ(t.items(), 0u);
}

TEST(BuildTensor, OutOfRangeContextIsSchemaError) {
    EXPECT_THROW(build_tensor({{"u", "i", {3, 0}, 1.0}}, two_features()), SchemaError);
    EXPECT_THROW(build_tensor({{"u", "i", {0, kMissing}, 1.0}}, two_features()), SchemaError);
}

TEST(BuildTensor, DenseReindexingKeepsIdMaps) {
    const std::vector<RawRecord> recs{{"bob", "x", {0, 0}, 1.0}, {"alice", "y", {1, 1}, 1.0}, {"bob", "y", {2, 3}, 1.0}};
    const auto t = build_tensor(recs, two_features());
    EXPECT_EQ(t.users(), 2u);
    EXPECT_EQ(t.items(), 2u);
    EXPECT_EQ(t.size(), 3u);
    EXPECT_EQ(t.user_ids(), (std::vector<std::string>{"alice", "bob"}));
    EXPECT_EQ(t.item_ids(), (std::vector<std::string>{"x", "y"}));
    EXPECT_EQ(t.user_entries(1).size(), 2u);
}

TEST(BuildTensor, IdempotentOnOwnRecords) {
    const auto t = build_tensor({{"b", "q", {0, 1}, 2.0}, {"a", "p", {2, kMissing}, 1.0}, {"b", "p", {1, 6}, 1.5}},
                                two_features(true));
    const auto again = build_tensor(to_records(t), t.schema());
    EXPECT_EQ(coords(again), coords(t));
    EXPECT_EQ(again.user_ids(), t.user_ids());
    EXPECT_EQ(again.item_ids(), t.item_ids());
    for (std::size_t e = 0; e < t.size(); ++e) EXPECT_EQ(again[e].amplitude, t[e].amplitude);
}

TEST(InteractionTensor, EntryOutsideGridThrows) {
    EXPECT_THROW(InteractionTensor(2, 2, ContextSchema{}, {{2, 0, {}, 1.0}}), SchemaError);
    EXPECT_THROW(InteractionTensor(2, 2, ContextSchema{}, {{0, 0, {}, -1.0}}), SchemaError);
}

TEST(Stack, OffsetArithmetic) {
    const InteractionTensor t(1, 1, two_features(), {{0, 0, {2, 0}, 1.0}});
    const auto s = stack(t);
    ASSERT_EQ(s.schema().size(), 1u);
    EXPECT_EQ(s.schema()[0].cardinality, 10u);
    ASSERT_EQ(s.size(), 2u);
    EXPECT_EQ(s[0].ctx, std::vector<std::int32_t>{2});
    EXPECT_EQ(s[1].ctx, std::vector<std::int32_t>{3});
}

TEST(Stack, MissingSliceSkipped) {
    const InteractionTensor t(1, 1, two_features(true), {{0, 0, {kMissing, 4}, 1.0}});
    const auto s = stack(t);
    ASSERT_EQ(s.size(), 1u);
    EXPECT_EQ(s[0].ctx, std::vector<std::int32_t>{7});
}

TEST(Stack, SingleFeatureIsIdentity) {
    const ContextSchema one({{"c", 4, false, {}}});
    const auto t = random_tensor(5, 6, one, 0.5, 1);
    const auto s = stack(t);
    EXPECT_EQ(coords(s), coords(t));
    EXPECT_EQ(s.schema()[0].cardinality, 4u);
}

TEST(Stack, NoFeaturesIsSchemaError) {
    EXPECT_THROW(stack(InteractionTensor(1, 1, ContextSchema{}, {{0, 0, {}, 1.0}})), SchemaError);
}

TEST(Stack, EntryCountEqualsRecordedFeatures) {
    const ContextSchema s({{"a", 3, true, {}}, {"b", 2, true, {}}, {"c", 4, false, {}}});
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto t = random_tensor(6, 7, s, 0.6, seed, 0.3);
        std::size_t expected = 0;
        for (const auto& e : t.entries())
            for (auto v : e.ctx) expected += v != kMissing;
        const auto st = stack(t);
        // Distinct features never collide after offsetting, so no aggregation.
        EXPECT_EQ(st.size(), expected);
    }
}

TEST(WeightOf, Cases) {
    static_assert(weight_of(0, 40) == 1.0);
    EXPECT_DOUBLE_EQ(weight_of(1, 40, 1), 41.0);
    EXPECT_DOUBLE_EQ(weight_of(1, 10, 2), 21.0);
}

TEST(LooSplit, OnePerEligibleUser) {
    const InteractionTensor t(3, 4, ContextSchema{},
                              {{0, 0, {}, 1}, {0, 1, {}, 1}, {0, 2, {}, 1}, {1, 3, {}, 1}, {2, 0, {}, 1}, {2, 1, {}, 1}});
    const auto split = loo_split(t, 5);
    ASSERT_EQ(split.test.size(), 2u);
    EXPECT_EQ(split.train.user_entries(0).size(), 2u);
    EXPECT_EQ(split.train.user_entries(1).size(), 1u);
    for (const auto& tc : split.test) EXPECT_NE(tc.user, 1u);
}

TEST(LooSplit, DeterministicAndDisjoint) {
    const ContextSchema s({{"a", 3, false, {}}});
    const auto t = random_tensor(20, 15, s, 0.3, 4);
    const auto a = loo_split(t, 9);
    const auto b = loo_split(t, 9);
    EXPECT_EQ(coords(a.train), coords(b.train));
    ASSERT_EQ(a.test.size(), b.test.size());
    std::set<std::vector<std::int32_t>> train_set;
    for (const auto& c : coords(a.train)) train_set.insert(c);
    for (std::size_t j = 0; j < a.test.size(); ++j) {
        EXPECT_EQ(a.test[j].item, b.test[j].item);
        std::vector<std::int32_t> c{static_cast<std::int32_t>(a.test[j].user), static_cast<std::int32_t>(a.test[j].item)};
        c.insert(c.end(), a.test[j].ctx.begin(), a.test[j].ctx.end());
        EXPECT_FALSE(train_set.contains(c));
    }
    EXPECT_EQ(a.train.size() + a.test.size(), t.size());
    EXPECT_EQ(a.train.users(), t.users());
    EXPECT_EQ(a.train.items(), t.items());
}

TEST(LooSplit, SeedsDiffer) {
    const auto t = random_tensor(40, 30, ContextSchema{}, 0.3, 2);
    const auto a = loo_split(t, 1);
    const auto b = loo_split(t, 2);
    std::size_t same = 0;
    for (std::size_t j = 0; j < a.test.size(); ++j) same += a.test[j].item == b.test[j].item;
    EXPECT_LT(same, a.test.size());
}

TEST(CollapseContexts, AggregatesAcrossContexts) {
    const InteractionTensor t(1, 2, two_features(), {{0, 0, {0, 0}, 1.0}, {0, 0, {1, 2}, 2.0}, {0, 1, {0, 0}, 1.0}});
    const auto c = collapse_contexts(t);
    ASSERT_EQ(c.size(), 2u);
    EXPECT_DOUBLE_EQ(c[0].amplitude, 3.0);
    EXPECT_TRUE(c.schema().empty());
}
