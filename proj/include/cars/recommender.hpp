#pragma once

#include <span>
#include <string>
#include <string_view>
#include <variant>

#include "als.hpp"
#include "baselines.hpp"
#include "error.hpp"
#include "model.hpp"

namespace cars {

/// Everything cross-validation and grid search can train.
enum class Algorithm { CP, PITF, TTF, WMF, ITEMKNN };

inline std::string_view to_string(Algorithm a) {
    switch (a) {
    case Algorithm::CP: return "CP";
    case Algorithm::PITF: return "PITF";
    case Algorithm::TTF: return "TTF";
    case Algorithm::WMF: return "WMF";
    case Algorithm::ITEMKNN: return "ITEMKNN";
    }
    return "?";
}

inline Algorithm parse_algorithm(std::string_view s) {
    if (s == "ITEMKNN") return Algorithm::ITEMKNN;
    switch (parse_model_kind(s)) {
    case ModelKind::CP: return Algorithm::CP;
    case ModelKind::PITF: return Algorithm::PITF;
    case ModelKind::TTF: return Algorithm::TTF;
    case ModelKind::WMF: return Algorithm::WMF;
    }
    throw ConfigError("unknown model kind '" + std::string(s) + "'");
}

inline ModelKind factor_kind(Algorithm a) {
    switch (a) {
    case Algorithm::CP: return ModelKind::CP;
    case Algorithm::PITF: return ModelKind::PITF;
    case Algorithm::TTF: return ModelKind::TTF;
    case Algorithm::WMF: return ModelKind::WMF;
    default: throw ConfigError("ITEMKNN is not a factor model");
    }
}

struct ModelSpec {
    Algorithm algorithm = Algorithm::WMF;
    Hyperparams hp;
    std::size_t neighbors = kDefaultNeighbors;
};

using Recommender = std::variant<FactorModel, SimilarityModel>;

inline Recommender train(const InteractionTensor& t, const ModelSpec& spec, const TrainOptions& options = {}) {
    if (spec.algorithm == Algorithm::ITEMKNN) return itemknn(t, spec.neighbors, options.threads);
    return als_train(t, spec.hp, factor_kind(spec.algorithm), options);
}

inline Vector score_items(const Recommender& model, std::size_t u, std::span<const std::int32_t> ctx,
                          std::span<const std::uint32_t> exclude = {}) {
    if (const auto* fm = std::get_if<FactorModel>(&model)) return score_items(*fm, u, ctx, exclude);
    return std::get<SimilarityModel>(model).score_items(u, exclude);
}

} // namespace cars
