#pragma once

#include <cstdint>
#include <unordered_map>
#include <vector>

#include "error.hpp"
#include "fit_index.hpp"
#include "model.hpp"

namespace cars {

/// Largest fitted tensor (m·n·Π l_c cells) the exact loss will enumerate.
inline constexpr double kMaxLossCells = 1e7;

/// Full weighted loss of `model` on `t` (original coordinates), enumerating
/// every cell of the fitted tensor:
///   Σ_cells w·(x − x̂)² + Σ_rows λ_r·‖row − target‖²
/// with frequency-scaled λ_r. Entries with a missing context (multidimensional
/// CP only) lie outside the grid and contribute (1 + w')(1 − x̂)² − x̂² at the
/// default factor, the same term the ALS updates minimize. Intended as a
/// test and diagnostics oracle; refuses large tensors.
inline double loss(const FactorModel& model, const InteractionTensor& t, const Hyperparams& hp) {
    const FitIndex index(fitting_tensor(t, model.kind, model.hp.structure));
    const auto& fit = index.tensor();
    const auto& schema = fit.schema();
    const double m = static_cast<double>(fit.users());
    const double n = static_cast<double>(fit.items());
    if (m * n * schema.cell_count() > kMaxLossCells)
        throw ConfigError("loss: tensor has more than 1e7 cells; exact loss is a desk-scale oracle only");

    const std::size_t d = schema.size();
    const auto cells_per_pair = static_cast<std::uint64_t>(schema.cell_count());
    auto linear = [&](std::uint32_t u, std::uint32_t i, std::span<const std::int32_t> ctx) {
        std::uint64_t idx = static_cast<std::uint64_t>(u) * fit.items() + i;
        for (std::size_t c = 0; c < d; ++c) idx = idx * schema[c].cardinality + static_cast<std::uint64_t>(ctx[c]);
        return idx;
    };

    double total = 0.0;
    std::unordered_map<std::uint64_t, double> observed;
    for (const auto& e : fit.entries()) {
        bool missing = false;
        for (auto v : e.ctx) missing = missing || v == kMissing;
        if (missing) {
            const double wp = hp.alpha * e.amplitude;
            const double xh = predict_entry(model, e.user, e.item, e.ctx);
            total += (1.0 + wp) * (1.0 - xh) * (1.0 - xh) - xh * xh;
        } else {
            observed.emplace(linear(e.user, e.item, e.ctx), e.amplitude);
        }
    }

    std::vector<std::int32_t> ctx(d, 0);
    for (std::uint32_t u = 0; u < fit.users(); ++u) {
        for (std::uint32_t i = 0; i < fit.items(); ++i) {
            std::fill(ctx.begin(), ctx.end(), 0);
            for (std::uint64_t cell = 0; cell < cells_per_pair; ++cell) {
                const double xh = predict_entry(model, u, i, ctx);
                const auto it = observed.find(linear(u, i, ctx));
                const double x = it == observed.end() ? 0.0 : 1.0;
                const double w = it == observed.end() ? 1.0 : weight_of(1.0, hp.alpha, it->second);
                total += w * (x - xh) * (x - xh);
                for (std::size_t c = d; c-- > 0;) {
                    if (static_cast<std::size_t>(++ctx[c]) < schema[c].cardinality) break;
                    ctx[c] = 0;
                }
            }
        }
    }

    auto penalty = [&](const DenseMatrix& factors, Block block, const Vector& target) {
        double sum = 0.0;
        for (Eigen::Index r = 0; r < factors.rows(); ++r) {
            const double lam =
                reg_strength(hp.lambda, hp.nu, index.weight_sum(block, static_cast<std::size_t>(r), hp.alpha));
            sum += lam * (factors.row(r).transpose() - target).squaredNorm();
        }
        return sum;
    };
    const Vector zero = Vector::Zero(static_cast<Eigen::Index>(model.k()));
    total += penalty(model.users, Block::users(), zero);
    total += penalty(model.items, Block::items(), zero);
    const Vector target = model.default_factor();
    for (std::size_t c = 0; c < model.contexts.size(); ++c) total += penalty(model.contexts[c], Block::context(c), target);
    return total;
}

} // namespace cars
