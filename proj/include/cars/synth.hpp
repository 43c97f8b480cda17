#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "error.hpp"
#include "tensor.hpp"

namespace cars {

enum class Signal { NONE, CONTEXT_OFFSET };

inline std::string to_string(Signal s) { return s == Signal::NONE ? "NONE" : "CONTEXT_OFFSET"; }

inline Signal parse_signal(const std::string& s) {
    if (s == "NONE") return Signal::NONE;
    if (s == "CONTEXT_OFFSET") return Signal::CONTEXT_OFFSET;
    throw ConfigError("unknown signal '" + s + "'");
}

/// Knobs of the planted model behind synth_fixture.
struct SynthOptions {
    std::size_t groups = 8;
    std::size_t favorites = 2;
    double off_favorite = 0.02;
    /// Additive preference boost per context feature pointing at a group.
    double context_offset = 1.0;
    double popularity_exponent = 0.3;
    std::size_t min_per_user = 8;
    std::size_t max_per_user = 12;
};

/// Items fall into latent groups (item i in group i mod G); each user likes a
/// few groups. Every interaction draws its context uniformly, then a group
/// with probability ∝ preference (+ offset for each context value mapped to
/// that group under CONTEXT_OFFSET; stacked value s maps to group s mod G),
/// then an unseen item of the group by popularity. NONE leaves the context independent of the interaction.
inline InteractionTensor synth_fixture(std::size_t m, std::size_t n, const ContextSchema& schema, Signal signal,
                                       std::uint64_t seed, const SynthOptions& opt = {}) {
    const std::size_t groups = std::min(opt.groups, n);
    if (m == 0 || groups == 0) throw std::invalid_argument("synth_fixture: empty fixture");
    std::mt19937_64 rng(seed);

    std::vector<std::vector<std::size_t>> members(groups);
    for (std::size_t i = 0; i < n; ++i) members[i % groups].push_back(i);
    std::vector<std::vector<double>> popularity(groups);
    for (std::size_t g = 0; g < groups; ++g)
        for (std::size_t r = 0; r < members[g].size(); ++r)
            popularity[g].push_back(1.0 / std::pow(static_cast<double>(r + 1), opt.popularity_exponent));

    std::vector<TensorEntry> entries;
    std::vector<std::size_t> order(groups);
    for (std::size_t u = 0; u < m; ++u) {
        std::vector<double> pref(groups, opt.off_favorite);
        for (std::size_t g = 0; g < groups; ++g) order[g] = g;
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t f = 0; f < std::min(opt.favorites, groups); ++f) pref[order[f]] = 1.0;

        std::uniform_int_distribution<std::size_t> count_dist(opt.min_per_user, opt.max_per_user);
        const std::size_t count = std::min(count_dist(rng), n);
        std::set<std::size_t> seen;
        for (std::size_t e = 0; e < count; ++e) {
            std::vector<std::int32_t> ctx(schema.size());
            std::vector<double> w = pref;
            for (std::size_t f = 0; f < schema.size(); ++f) {
                std::uniform_int_distribution<std::int32_t> cd(0, static_cast<std::int32_t>(schema[f].cardinality) - 1);
                ctx[f] = cd(rng);
                if (signal == Signal::CONTEXT_OFFSET) w[(schema.offset(f) + static_cast<std::size_t>(ctx[f])) % groups] += opt.context_offset;
            }
            // Redraw until an unseen item comes up; fall back to any unseen item.
            std::size_t item = n;
            for (int attempt = 0; attempt < 64 && item == n; ++attempt) {
                const std::size_t g = std::discrete_distribution<std::size_t>(w.begin(), w.end())(rng);
                const std::size_t r = std::discrete_distribution<std::size_t>(popularity[g].begin(),
                                                                              popularity[g].end())(rng);
                if (!seen.contains(members[g][r])) item = members[g][r];
            }
            if (item == n) {
                for (std::size_t i = 0; i < n && item == n; ++i)
                    if (!seen.contains(i)) item = i;
            }
            seen.insert(item);
            entries.push_back({static_cast<std::uint32_t>(u), static_cast<std::uint32_t>(item), std::move(ctx), 1.0});
        }
    }
    std::vector<std::string> user_ids(m), item_ids(n);
    for (std::size_t u = 0; u < m; ++u) user_ids[u] = "u" + std::to_string(u);
    for (std::size_t i = 0; i < n; ++i) item_ids[i] = "i" + std::to_string(i);
    return InteractionTensor(m, n, schema, std::move(entries), std::move(user_ids), std::move(item_ids));
}

} // namespace cars
