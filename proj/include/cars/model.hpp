#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "error.hpp"
#include "linalg.hpp"
#include "tensor.hpp"

namespace cars {

/// CP covers iTALS (multidimensional) and iTALSs (stacked); PITF is iTALSx;
/// TTF is WTF. WMF is the context-free matrix factorization.
enum class ModelKind { CP, PITF, TTF, WMF };
enum class RegMode { ZERO, ONE };
enum class Structure { STACKED_3D, MULTI_D };
enum class Solver { EXACT, CG };

inline std::string_view to_string(ModelKind k) {
    switch (k) {
    case ModelKind::CP: return "CP";
    case ModelKind::PITF: return "PITF";
    case ModelKind::TTF: return "TTF";
    case ModelKind::WMF: return "WMF";
    }
    return "?";
}
inline std::string_view to_string(RegMode r) { return r == RegMode::ZERO ? "ZERO" : "ONE"; }
inline std::string_view to_string(Structure s) { return s == Structure::STACKED_3D ? "STACKED_3D" : "MULTI_D"; }
inline std::string_view to_string(Solver s) { return s == Solver::EXACT ? "EXACT" : "CG"; }

inline ModelKind parse_model_kind(std::string_view s) {
    if (s == "CP") return ModelKind::CP;
    if (s == "PITF") return ModelKind::PITF;
    if (s == "TTF") return ModelKind::TTF;
    if (s == "WMF") return ModelKind::WMF;
    throw ConfigError("unknown model kind '" + std::string(s) + "'");
}
inline RegMode parse_reg_mode(std::string_view s) {
    if (s == "ZERO") return RegMode::ZERO;
    if (s == "ONE") return RegMode::ONE;
    throw ConfigError("unknown reg_mode '" + std::string(s) + "'");
}
inline Structure parse_structure(std::string_view s) {
    if (s == "STACKED_3D") return Structure::STACKED_3D;
    if (s == "MULTI_D") return Structure::MULTI_D;
    throw ConfigError("unknown structure '" + std::string(s) + "'");
}
inline Solver parse_solver(std::string_view s) {
    if (s == "EXACT") return Solver::EXACT;
    if (s == "CG") return Solver::CG;
    throw ConfigError("unknown solver '" + std::string(s) + "'");
}

struct Hyperparams {
    std::size_t k = 80;
    double alpha = 10.0;
    double lambda = 0.01;
    /// Frequency exponent; 0 disables frequency scaling.
    double nu = 0.0;
    std::size_t iterations = 10;
    /// CG steps per context-matrix update (TTF only).
    std::size_t cg_steps = 3;
    RegMode reg_mode = RegMode::ONE;
    Structure structure = Structure::STACKED_3D;
    Solver solver = Solver::CG;
    /// Seeds the user/item initialization.
    std::uint64_t seed = 0;

    void validate() const {
        if (k < 1) throw ConfigError("k must be at least 1");
        if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ConfigError("alpha must be nonnegative");
        if (!(lambda > 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be positive");
        if (!(nu >= 0.0 && nu <= 1.0)) throw ConfigError("nu must lie in [0, 1]");
        if (iterations < 1) throw ConfigError("iterations must be at least 1");
    }
};

/// λ·(weight_sum)^ν
inline double reg_strength(double lambda, double nu, double weight_sum) {
    return nu == 0.0 ? lambda : lambda * std::pow(weight_sum, nu);
}

/// Σ_f p[f]·Π_c b_c[f]·q[f]
inline double predict_cp(std::span<const double> p, std::span<const std::span<const double>> contexts,
                         std::span<const double> q) {
    double sum = 0.0;
    for (std::size_t f = 0; f < p.size(); ++f) {
        double term = p[f] * q[f];
        for (const auto& b : contexts) term *= b[f];
        sum += term;
    }
    return sum;
}

inline double predict_cp(std::span<const double> p, std::span<const double> b, std::span<const double> q) {
    const std::span<const double> one[] = {b};
    return predict_cp(p, one, q);
}

/// p·q + p·b + q·b
inline double predict_pitf(std::span<const double> p, std::span<const double> q, std::span<const double> b) {
    double pq = 0.0, pb = 0.0, qb = 0.0;
    for (std::size_t f = 0; f < p.size(); ++f) {
        pq += p[f] * q[f];
        pb += p[f] * b[f];
        qb += q[f] * b[f];
    }
    return pq + pb + qb;
}

/// p·B·qᵀ with B stored row-major as k·k values.
inline double predict_ttf(std::span<const double> p, std::span<const double> b, std::span<const double> q) {
    const std::size_t k = p.size();
    double sum = 0.0;
    for (std::size_t a = 0; a < k; ++a) {
        if (p[a] == 0.0) continue;
        double row = 0.0;
        for (std::size_t c = 0; c < k; ++c) row += b[a * k + c] * q[c];
        sum += p[a] * row;
    }
    return sum;
}

/// Width of one context factor row: k for vector factors, k² for TTF matrices.
inline std::size_t context_width(ModelKind kind, std::size_t k) { return kind == ModelKind::TTF ? k * k : k; }

/// The multiplicative identity of the decomposition: 1⃗ (CP), 0⃗ (PITF), I (TTF).
inline Vector identity_factor(ModelKind kind, std::size_t k) {
    switch (kind) {
    case ModelKind::CP: return Vector::Ones(static_cast<Eigen::Index>(k));
    case ModelKind::TTF: {
        Vector v = Vector::Zero(static_cast<Eigen::Index>(k * k));
        for (std::size_t a = 0; a < k; ++a) v[static_cast<Eigen::Index>(a * k + a)] = 1.0;
        return v;
    }
    default: return Vector::Zero(static_cast<Eigen::Index>(k));
    }
}

/// Target of context regularization, also used as the static factor for
/// missing context values.
inline Vector context_target(ModelKind kind, RegMode mode, std::size_t k) {
    if (mode == RegMode::ZERO || kind == ModelKind::PITF)
        return Vector::Zero(static_cast<Eigen::Index>(context_width(kind, k)));
    return identity_factor(kind, k);
}

inline std::span<const double> row_span(const DenseMatrix& m, Eigen::Index r) {
    return {m.data() + r * m.cols(), static_cast<std::size_t>(m.cols())};
}
inline std::span<const double> vec_span(const Vector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

/// Trained factors. `schema` is the schema of the data the model was fit on,
/// before any stacking; stacked models keep a single context mode indexed by
/// stacked offset.
struct FactorModel {
    ModelKind kind = ModelKind::WMF;
    Hyperparams hp;
    ContextSchema schema;
    DenseMatrix users;
    DenseMatrix items;
    /// One matrix per fitted context mode, one row per context value
    /// (length k, or k² row-major for TTF).
    std::vector<DenseMatrix> contexts;

    std::size_t k() const noexcept { return static_cast<std::size_t>(users.cols()); }
    bool is_stacked() const noexcept { return hp.structure == Structure::STACKED_3D; }
    Vector default_factor() const { return context_target(kind, hp.reg_mode, k()); }
};

/// Prediction at a coordinate of the fitted tensor: `ctx` holds the stacked
/// index for stacked models or one value per feature (kMissing allowed)
/// for multidimensional ones.
inline double predict_entry(const FactorModel& model, std::size_t u, std::size_t i,
                            std::span<const std::int32_t> ctx) {
    const auto p = row_span(model.users, static_cast<Eigen::Index>(u));
    const auto q = row_span(model.items, static_cast<Eigen::Index>(i));
    if (model.kind == ModelKind::WMF || model.contexts.empty()) {
        double s = 0.0;
        for (std::size_t f = 0; f < p.size(); ++f) s += p[f] * q[f];
        return s;
    }
    const Vector fallback = model.default_factor();
    std::vector<std::span<const double>> factors;
    factors.reserve(ctx.size());
    for (std::size_t c = 0; c < ctx.size(); ++c) {
        if (ctx[c] == kMissing)
            factors.push_back(vec_span(fallback));
        else
            factors.push_back(row_span(model.contexts[c], ctx[c]));
    }
    switch (model.kind) {
    case ModelKind::CP: return predict_cp(p, factors, q);
    case ModelKind::PITF: return predict_pitf(p, q, factors.at(0));
    case ModelKind::TTF: return predict_ttf(p, factors.at(0), q);
    default: break;
    }
    throw ConfigError("predict_entry: unsupported model kind");
}

namespace detail {

// Scores of all items for user factor p under one context factor b.
inline Vector slice_scores(const FactorModel& model, const Eigen::VectorXd& p, std::span<const double> b) {
    const std::size_t k = model.k();
    const auto ki = static_cast<Eigen::Index>(k);
    Eigen::Map<const Vector> bv(b.data(), static_cast<Eigen::Index>(b.size()));
    switch (model.kind) {
    case ModelKind::CP: return model.items * p.cwiseProduct(bv);
    case ModelKind::PITF: {
        Vector s = model.items * (p + bv);
        s.array() += p.dot(bv);
        return s;
    }
    case ModelKind::TTF: {
        Eigen::Map<const DenseMatrix> mat(b.data(), ki, ki);
        return model.items * (mat.transpose() * p);
    }
    default: return model.items * p;
    }
}

} // namespace detail

/// Scores every item for user u in context `ctx` (original feature
/// coordinates, kMissing allowed). Stacked models average the per-feature
/// slice predictions over recorded features; with no recorded feature the
/// default factor is used. Items in `exclude` score −∞.
inline Vector score_items(const FactorModel& model, std::size_t u, std::span<const std::int32_t> ctx,
                          std::span<const std::uint32_t> exclude = {}) {
    if (u >= static_cast<std::size_t>(model.users.rows())) throw std::out_of_range("score_items: user index");
    const Vector p = model.users.row(static_cast<Eigen::Index>(u)).transpose();
    Vector scores;

    if (model.kind == ModelKind::WMF || model.contexts.empty()) {
        scores = model.items * p;
    } else {
        model.schema.validate(ctx);
        const Vector fallback = model.default_factor();
        if (model.is_stacked()) {
            std::size_t used = 0;
            scores = Vector::Zero(model.items.rows());
            for (std::size_t f = 0; f < ctx.size(); ++f) {
                if (ctx[f] == kMissing) continue;
                const auto row = static_cast<Eigen::Index>(model.schema.offset(f) + static_cast<std::size_t>(ctx[f]));
                scores += detail::slice_scores(model, p, row_span(model.contexts[0], row));
                ++used;
            }
            if (used == 0)
                scores = detail::slice_scores(model, p, vec_span(fallback));
            else
                scores /= static_cast<double>(used);
        } else {
            if (model.kind != ModelKind::CP) throw ConfigError("multidimensional scoring is CP-only");
            Vector z = p;
            for (std::size_t f = 0; f < ctx.size(); ++f) {
                if (ctx[f] == kMissing)
                    z = z.cwiseProduct(fallback);
                else
                    z = z.cwiseProduct(model.contexts[f].row(ctx[f]).transpose());
            }
            scores = model.items * z;
        }
    }
    for (auto i : exclude) scores[static_cast<Eigen::Index>(i)] = -std::numeric_limits<double>::infinity();
    return scores;
}

} // namespace cars
