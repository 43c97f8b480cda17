#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <string_view>

#include "error.hpp"
#include "linalg.hpp"

namespace cars {

enum class Metric { MRR, HR };

inline std::string_view to_string(Metric m) { return m == Metric::HR ? "HR" : "MRR"; }
inline Metric parse_metric(std::string_view s) {
    if (s == "HR") return Metric::HR;
    if (s == "MRR") return Metric::MRR;
    throw ConfigError("unknown metric '" + std::string(s) + "'");
}

/// 1-based position of target in `ranked`, 0 when absent.
inline std::size_t position_of(std::span<const std::uint32_t> ranked, std::uint32_t target) {
    for (std::size_t r = 0; r < ranked.size(); ++r)
        if (ranked[r] == target) return r + 1;
    return 0;
}

/// 1 if target is among the first k items, else 0.
inline double hr_at_k(std::span<const std::uint32_t> ranked, std::uint32_t target, std::size_t k) {
    const auto r = position_of(ranked, target);
    return r != 0 && r <= k ? 1.0 : 0.0;
}

/// 1/rank if target is among the first k items, else 0.
inline double mrr_at_k(std::span<const std::uint32_t> ranked, std::uint32_t target, std::size_t k) {
    const auto r = position_of(ranked, target);
    return r != 0 && r <= k ? 1.0 / static_cast<double>(r) : 0.0;
}

/// Rank the target would get when items are sorted by decreasing score with
/// ties broken by ascending item index. Returns 0 (never ranked) for an
/// excluded target scoring −∞.
inline std::size_t rank_of(const Vector& scores, std::uint32_t target) {
    const double s = scores[target];
    if (s == -std::numeric_limits<double>::infinity()) return 0;
    std::size_t rank = 1;
    for (Eigen::Index j = 0; j < scores.size(); ++j) {
        const double o = scores[j];
        if (o > s || (o == s && j < static_cast<Eigen::Index>(target))) ++rank;
    }
    return rank;
}

inline double metric_from_rank(Metric m, std::size_t rank, std::size_t k) {
    if (rank == 0 || rank > k) return 0.0;
    return m == Metric::HR ? 1.0 : 1.0 / static_cast<double>(rank);
}

} // namespace cars
