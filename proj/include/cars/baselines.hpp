#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "als.hpp"
#include "linalg.hpp"
#include "parallel.hpp"
#include "tensor.hpp"

namespace cars {

/// Context-free weighted matrix factorization (iALS): ALS on the tensor
/// collapsed over its contexts.
inline FactorModel wmf_train(const InteractionTensor& t, const Hyperparams& hp, const TrainOptions& options = {}) {
    return als_train(t, hp, ModelKind::WMF, options);
}

inline constexpr std::size_t kDefaultNeighbors = 200;

/// Item-based cosine neighborhood model on the binary user-item matrix.
class SimilarityModel {
public:
    struct Neighbor {
        std::uint32_t item;
        double similarity;
    };

    SimilarityModel() = default;

    SimilarityModel(std::size_t neighbors, std::vector<std::vector<Neighbor>> neighborhoods,
                    std::vector<std::vector<std::uint32_t>> history)
        : neighbors_(neighbors), neighborhoods_(std::move(neighborhoods)), history_(std::move(history)) {
        reverse_.resize(neighborhoods_.size());
        for (std::uint32_t i = 0; i < neighborhoods_.size(); ++i)
            for (const auto& nb : neighborhoods_[i]) reverse_[nb.item].push_back({i, nb.similarity});
    }

    std::size_t neighbors() const noexcept { return neighbors_; }
    std::size_t items() const noexcept { return neighborhoods_.size(); }
    std::size_t users() const noexcept { return history_.size(); }
    /// Top-N neighbors of item i, by decreasing similarity then item index.
    const std::vector<Neighbor>& neighborhood(std::size_t i) const { return neighborhoods_.at(i); }
    const std::vector<std::uint32_t>& history(std::size_t u) const { return history_.at(u); }

    /// Pruned similarity: sim(i, j) if j is among i's top-N neighbors, else 0.
    double similarity(std::size_t i, std::size_t j) const {
        for (const auto& nb : neighborhoods_.at(i))
            if (nb.item == j) return nb.similarity;
        return 0.0;
    }

    /// score(u, i) = Σ_{j ∈ history(u)} sim_N(i, j). Context is ignored.
    Vector score_items(std::size_t u, std::span<const std::uint32_t> exclude = {}) const {
        Vector scores = Vector::Zero(static_cast<Eigen::Index>(items()));
        for (auto j : history_.at(u))
            for (const auto& nb : reverse_[j]) scores[nb.item] += nb.similarity;
        for (auto i : exclude) scores[i] = -std::numeric_limits<double>::infinity();
        return scores;
    }

private:
    std::size_t neighbors_ = kDefaultNeighbors;
    std::vector<std::vector<Neighbor>> neighborhoods_;
    /// reverse_[j] lists (i, sim) for every i that keeps j as a neighbor.
    std::vector<std::vector<Neighbor>> reverse_;
    std::vector<std::vector<std::uint32_t>> history_;
};

/// sim(i, j) = |U_i ∩ U_j| / √(|U_i|·|U_j|), keeping the top `neighbors`
/// per item. The diagonal is never a neighbor.
inline SimilarityModel itemknn(const InteractionTensor& t, std::size_t neighbors = kDefaultNeighbors,
                               unsigned threads = 1) {
    const std::size_t n = t.items();
    std::vector<std::vector<std::uint32_t>> history(t.users());
    std::vector<std::vector<std::uint32_t>> item_users(n);
    for (std::size_t u = 0; u < t.users(); ++u) {
        auto& h = history[u];
        for (const auto& e : t.user_entries(u))
            if (h.empty() || h.back() != e.item) h.push_back(e.item); // entries are sorted by item
        for (auto i : h) item_users[i].push_back(static_cast<std::uint32_t>(u));
    }

    std::vector<std::vector<SimilarityModel::Neighbor>> hoods(n);
    parallel_for(n, threads, [&](std::size_t i) {
        if (item_users[i].empty()) return;
        std::vector<std::uint32_t> overlap(n, 0);
        std::vector<std::uint32_t> touched;
        for (auto u : item_users[i])
            for (auto j : history[u]) {
                if (j == i) continue;
                if (overlap[j]++ == 0) touched.push_back(j);
            }
        auto& out = hoods[i];
        out.reserve(touched.size());
        const double ni = static_cast<double>(item_users[i].size());
        for (auto j : touched)
            out.push_back({j, overlap[j] / std::sqrt(ni * static_cast<double>(item_users[j].size()))});
        std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
            return a.similarity != b.similarity ? a.similarity > b.similarity : a.item < b.item;
        });
        if (out.size() > neighbors) out.resize(neighbors);
    });
    return SimilarityModel(neighbors, std::move(hoods), std::move(history));
}

} // namespace cars
