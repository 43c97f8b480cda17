#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "error.hpp"

namespace cars {

/// Context value marker for "not recorded".
inline constexpr std::int32_t kMissing = -1;

struct ContextFeature {
    std::string name;
    std::size_t cardinality = 0;
    bool allows_missing = false;
    /// Optional human-readable value names, index-aligned with values.
    std::vector<std::string> labels;
};

/// Ordered list of context features. Stacked offsets are prefix sums of the
/// cardinalities.
class ContextSchema {
public:
    ContextSchema() = default;

    explicit ContextSchema(std::vector<ContextFeature> features) : features_(std::move(features)) {
        std::set<std::string> names;
        offsets_.reserve(features_.size());
        std::size_t offset = 0;
        for (const auto& f : features_) {
            if (f.cardinality == 0)
                throw SchemaError("context feature '" + f.name + "' has zero cardinality");
            if (!names.insert(f.name).second)
                throw SchemaError("duplicate context feature name '" + f.name + "'");
            if (!f.labels.empty() && f.labels.size() != f.cardinality)
                throw SchemaError("context feature '" + f.name + "' has mismatched label count");
            offsets_.push_back(offset);
            offset += f.cardinality;
        }
        stacked_size_ = offset;
    }

    std::size_t size() const noexcept { return features_.size(); }
    bool empty() const noexcept { return features_.empty(); }
    const ContextFeature& operator[](std::size_t f) const { return features_.at(f); }
    const std::vector<ContextFeature>& features() const noexcept { return features_; }

    std::size_t offset(std::size_t f) const { return offsets_.at(f); }
    /// l = Σ l_c
    std::size_t stacked_size() const noexcept { return stacked_size_; }
    /// Π l_c (1 for an empty schema).
    double cell_count() const noexcept {
        double n = 1.0;
        for (const auto& f : features_) n *= static_cast<double>(f.cardinality);
        return n;
    }

    /// Throws SchemaError unless ctx is a valid coordinate under this schema.
    void validate(std::span<const std::int32_t> ctx) const {
        if (ctx.size() != features_.size())
            throw SchemaError("context arity " + std::to_string(ctx.size()) + " does not match schema arity " +
                              std::to_string(features_.size()));
        for (std::size_t f = 0; f < ctx.size(); ++f) {
            const auto v = ctx[f];
            if (v == kMissing) {
                if (!features_[f].allows_missing)
                    throw SchemaError("context feature '" + features_[f].name + "' does not allow missing values");
                continue;
            }
            if (v < 0 || static_cast<std::size_t>(v) >= features_[f].cardinality)
                throw SchemaError("context value " + std::to_string(v) + " out of range for feature '" +
                                  features_[f].name + "' (cardinality " +
                                  std::to_string(features_[f].cardinality) + ")");
        }
    }

    friend bool operator==(const ContextSchema& a, const ContextSchema& b) {
        if (a.size() != b.size()) return false;
        for (std::size_t f = 0; f < a.size(); ++f) {
            const auto& x = a.features_[f];
            const auto& y = b.features_[f];
            if (x.name != y.name || x.cardinality != y.cardinality || x.allows_missing != y.allows_missing)
                return false;
        }
        return true;
    }

private:
    std::vector<ContextFeature> features_;
    std::vector<std::size_t> offsets_;
    std::size_t stacked_size_ = 0;
};

struct TensorEntry {
    std::uint32_t user = 0;
    std::uint32_t item = 0;
    std::vector<std::int32_t> ctx;
    double amplitude = 1.0;
};

/// Positive-only sparse tensor. Entries are sorted by (user, item, ctx) and
/// unique per coordinate; every absent coordinate is an implicit zero.
class InteractionTensor {
public:
    InteractionTensor() = default;

    /// Validates and aggregates entries. Duplicate coordinates sum their
    /// amplitudes.
    InteractionTensor(std::size_t users, std::size_t items, ContextSchema schema,
                      std::vector<TensorEntry> entries, std::vector<std::string> user_ids = {},
                      std::vector<std::string> item_ids = {})
        : users_(users), items_(items), schema_(std::move(schema)), user_ids_(std::move(user_ids)),
          item_ids_(std::move(item_ids)) {
        if (!user_ids_.empty() && user_ids_.size() != users_)
            throw SchemaError("user id map size does not match user count");
        if (!item_ids_.empty() && item_ids_.size() != items_)
            throw SchemaError("item id map size does not match item count");
        for (const auto& e : entries) {
            if (e.user >= users_ || e.item >= items_)
                throw SchemaError("entry (" + std::to_string(e.user) + ", " + std::to_string(e.item) +
                                  ") outside " + std::to_string(users_) + "x" + std::to_string(items_));
            schema_.validate(e.ctx);
            if (!(e.amplitude >= 0.0) || !std::isfinite(e.amplitude))
                throw SchemaError("entry amplitude must be finite and nonnegative");
        }
        auto key = [](const TensorEntry& e) { return std::tie(e.user, e.item, e.ctx); };
        std::stable_sort(entries.begin(), entries.end(),
                         [&](const TensorEntry& a, const TensorEntry& b) { return key(a) < key(b); });
        entries_.reserve(entries.size());
        for (auto& e : entries) {
            if (!entries_.empty() && key(entries_.back()) == key(e))
                entries_.back().amplitude += e.amplitude;
            else
                entries_.push_back(std::move(e));
        }
        user_offsets_.assign(users_ + 1, 0);
        for (const auto& e : entries_) ++user_offsets_[e.user + 1];
        std::partial_sum(user_offsets_.begin(), user_offsets_.end(), user_offsets_.begin());
    }

    std::size_t users() const noexcept { return users_; }
    std::size_t items() const noexcept { return items_; }
    /// p, the number of stored positive coordinates.
    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }
    const ContextSchema& schema() const noexcept { return schema_; }
    const std::vector<TensorEntry>& entries() const noexcept { return entries_; }
    const TensorEntry& operator[](std::size_t e) const { return entries_[e]; }

    /// Entries of user u, contiguous because of the sort order.
    std::span<const TensorEntry> user_entries(std::size_t u) const {
        return {entries_.data() + user_offsets_[u], user_offsets_[u + 1] - user_offsets_[u]};
    }

    const std::vector<std::string>& user_ids() const noexcept { return user_ids_; }
    const std::vector<std::string>& item_ids() const noexcept { return item_ids_; }

private:
    std::size_t users_ = 0;
    std::size_t items_ = 0;
    ContextSchema schema_;
    std::vector<TensorEntry> entries_;
    std::vector<std::size_t> user_offsets_{0};
    std::vector<std::string> user_ids_;
    std::vector<std::string> item_ids_;
};

/// One interaction with original identifiers and schema-indexed context values.
struct RawRecord {
    std::string user;
    std::string item;
    std::vector<std::int32_t> ctx;
    double amplitude = 1.0;
};

/// Reindexes users and items to dense indices (sorted order of their ids)
/// and aggregates duplicates.
inline InteractionTensor build_tensor(const std::vector<RawRecord>& records, ContextSchema schema) {
    std::vector<std::string> users;
    std::vector<std::string> items;
    users.reserve(records.size());
    items.reserve(records.size());
    for (const auto& r : records) {
        users.push_back(r.user);
        items.push_back(r.item);
    }
    auto uniq = [](std::vector<std::string>& v) {
        std::sort(v.begin(), v.end());
        v.erase(std::unique(v.begin(), v.end()), v.end());
    };
    uniq(users);
    uniq(items);
    auto index_of = [](const std::vector<std::string>& v, const std::string& id) {
        return static_cast<std::uint32_t>(std::lower_bound(v.begin(), v.end(), id) - v.begin());
    };

    std::vector<TensorEntry> entries;
    entries.reserve(records.size());
    for (const auto& r : records)
        entries.push_back({index_of(users, r.user), index_of(items, r.item), r.ctx, r.amplitude});
    const auto m = users.size();
    const auto n = items.size();
    return InteractionTensor(m, n, std::move(schema), std::move(entries), std::move(users), std::move(items));
}

/// Inverse of build_tensor: emits records carrying the original ids (or the
/// dense index when no id map is present).
inline std::vector<RawRecord> to_records(const InteractionTensor& t) {
    std::vector<RawRecord> out;
    out.reserve(t.size());
    for (const auto& e : t.entries()) {
        out.push_back({t.user_ids().empty() ? std::to_string(e.user) : t.user_ids()[e.user],
                       t.item_ids().empty() ? std::to_string(e.item) : t.item_ids()[e.item], e.ctx,
                       e.amplitude});
    }
    return out;
}

/// Folds all context features into a single feature of size Σ l_c. An entry
/// with v recorded features becomes v entries; missing features are dropped.
inline InteractionTensor stack(const InteractionTensor& t) {
    const auto& schema = t.schema();
    if (schema.empty()) throw SchemaError("stack: tensor has no context features");

    ContextFeature stacked{"stacked", schema.stacked_size(), false, {}};
    for (std::size_t f = 0; f < schema.size(); ++f) {
        for (std::size_t v = 0; v < schema[f].cardinality; ++v) {
            std::string label = schema[f].labels.empty() ? std::to_string(v) : schema[f].labels[v];
            stacked.labels.push_back(schema[f].name + "=" + label);
        }
    }

    std::vector<TensorEntry> entries;
    entries.reserve(t.size() * schema.size());
    for (const auto& e : t.entries()) {
        for (std::size_t f = 0; f < schema.size(); ++f) {
            if (e.ctx[f] == kMissing) continue;
            entries.push_back({e.user, e.item,
                               {static_cast<std::int32_t>(schema.offset(f) + static_cast<std::size_t>(e.ctx[f]))},
                               e.amplitude});
        }
    }
    return InteractionTensor(t.users(), t.items(), ContextSchema({std::move(stacked)}), std::move(entries),
                             t.user_ids(), t.item_ids());
}

/// Drops the context dimensions, aggregating (user, item) duplicates.
inline InteractionTensor collapse_contexts(const InteractionTensor& t) {
    std::vector<TensorEntry> entries;
    entries.reserve(t.size());
    for (const auto& e : t.entries()) entries.push_back({e.user, e.item, {}, e.amplitude});
    return InteractionTensor(t.users(), t.items(), ContextSchema{}, std::move(entries), t.user_ids(),
                             t.item_ids());
}

/// Confidence weight 1 + α·x·amplitude.
constexpr double weight_of(double x, double alpha, double amplitude = 1.0) noexcept {
    return 1.0 + alpha * x * amplitude;
}

struct TestCase {
    std::uint32_t user = 0;
    std::uint32_t item = 0;
    std::vector<std::int32_t> ctx;
};

struct SplitPair {
    InteractionTensor train;
    std::vector<TestCase> test;
};

/// Leave-one-out: every user with at least two entries gives one uniformly
/// chosen entry to the test set.
inline SplitPair loo_split(const InteractionTensor& t, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<TensorEntry> train;
    train.reserve(t.size());
    std::vector<TestCase> test;
    for (std::size_t u = 0; u < t.users(); ++u) {
        auto rows = t.user_entries(u);
        std::size_t held = rows.size();
        if (rows.size() >= 2) held = std::uniform_int_distribution<std::size_t>(0, rows.size() - 1)(rng);
        for (std::size_t j = 0; j < rows.size(); ++j) {
            if (j == held)
                test.push_back({rows[j].user, rows[j].item, rows[j].ctx});
            else
                train.push_back(rows[j]);
        }
    }
    return {InteractionTensor(t.users(), t.items(), t.schema(), std::move(train), t.user_ids(), t.item_ids()),
            std::move(test)};
}

} // namespace cars
