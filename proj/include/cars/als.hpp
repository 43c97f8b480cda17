#pragma once

#include <cmath>
#include <functional>
#include <ostream>
#include <random>
#include <sstream>
#include <vector>

#include "error.hpp"
#include "fit_index.hpp"
#include "linalg.hpp"
#include "model.hpp"
#include "parallel.hpp"
#include "tensor.hpp"

namespace cars {

/// Largest latent dimension for which the vectorized (k²×k²) context solve
/// is attempted.
inline constexpr std::size_t kMaxExactTtfRank = 32;

namespace detail {

// Factor row of context mode c for value v, or the static default factor.
inline std::span<const double> context_row(const FactorModel& model, std::size_t mode, std::int32_t v,
                                           const Vector& fallback) {
    return v == kMissing ? vec_span(fallback) : row_span(model.contexts[mode], v);
}

// Solves every row of `block` independently:
//   (G + Σ w'·a·aᵀ + λ_r·I) θ = g + Σ (w − w'·b)·a + λ_r·target
// where design(entry, a) fills the design vector of the entry and returns
// the part b of its prediction that does not depend on θ.
template <typename Design>
DenseMatrix solve_block_rows(const FitIndex& index, const Hyperparams& hp, Block block,
                             const DenseMatrix& background, const Vector& background_rhs, const Vector& target,
                             Design&& design, unsigned threads) {
    const auto rows = index.rows(block);
    const auto width = background.rows();
    DenseMatrix out(static_cast<Eigen::Index>(rows), width);
    parallel_for(rows, threads, [&](std::size_t r) {
        DenseMatrix a = background;
        Vector rhs = background_rhs;
        Vector d(width);
        for (auto e : index.entries(block, r)) {
            const auto& entry = index.tensor()[e];
            const double wp = hp.alpha * entry.amplitude;
            const double offset = design(entry, d);
            if (wp != 0.0) a.noalias() += wp * d * d.transpose();
            rhs.noalias() += (1.0 + wp - wp * offset) * d;
        }
        const double lam = reg_strength(hp.lambda, hp.nu, index.weight_sum(block, r, hp.alpha));
        a.diagonal().array() += lam;
        rhs.noalias() += lam * target;
        out.row(static_cast<Eigen::Index>(r)) = solve_spd(a, rhs).transpose();
    });
    return out;
}

inline Vector column_sums(const DenseMatrix& m) { return m.colwise().sum().transpose(); }

} // namespace detail

/// CP (and WMF when there are no context modes): exact per-row minimizer
/// for the given block with all other blocks fixed.
inline DenseMatrix update_block_cp(const FitIndex& index, const FactorModel& model, const Hyperparams& hp,
                                   Block block, unsigned threads = 1) {
    const auto k = static_cast<Eigen::Index>(model.k());
    const std::size_t modes = model.contexts.size();
    const Vector fallback = model.default_factor();
    const Vector zero = Vector::Zero(k);

    // Background Gram: Hadamard product of the Grams of every other mode.
    DenseMatrix background = DenseMatrix::Ones(k, k);
    if (block.kind != Block::Kind::USERS) background = hadamard(background, gram(model.users));
    if (block.kind != Block::Kind::ITEMS) background = hadamard(background, gram(model.items));
    for (std::size_t c = 0; c < modes; ++c)
        if (!(block.kind == Block::Kind::CONTEXT && block.mode == c))
            background = hadamard(background, gram(model.contexts[c]));

    auto design = [&](const TensorEntry& e, Vector& a) {
        a.setOnes();
        if (block.kind != Block::Kind::USERS) a.array() *= model.users.row(e.user).transpose().array();
        if (block.kind != Block::Kind::ITEMS) a.array() *= model.items.row(e.item).transpose().array();
        for (std::size_t c = 0; c < modes; ++c) {
            if (block.kind == Block::Kind::CONTEXT && block.mode == c) continue;
            const auto b = detail::context_row(model, c, e.ctx[c], fallback);
            for (Eigen::Index f = 0; f < k; ++f) a[f] *= b[static_cast<std::size_t>(f)];
        }
        return 0.0;
    };
    const Vector& target = block.kind == Block::Kind::CONTEXT ? fallback : zero;
    return detail::solve_block_rows(index, hp, block, background, zero, target, design, threads);
}

/// PITF on the 3D (stacked) tensor. The pairwise term not involving the
/// updated block moves to the target side.
inline DenseMatrix update_block_pitf(const FitIndex& index, const FactorModel& model, const Hyperparams& hp,
                                     Block block, unsigned threads = 1) {
    if (model.contexts.size() != 1) throw ConfigError("PITF requires exactly one (stacked) context mode");
    const auto k = static_cast<Eigen::Index>(model.k());
    const Vector zero = Vector::Zero(k);

    // The other two modes X (size nx) and Y (size ny) of the updated block.
    const DenseMatrix* x = nullptr;
    const DenseMatrix* y = nullptr;
    switch (block.kind) {
    case Block::Kind::USERS: x = &model.items; y = &model.contexts[0]; break;
    case Block::Kind::ITEMS: x = &model.users; y = &model.contexts[0]; break;
    case Block::Kind::CONTEXT: x = &model.users; y = &model.items; break;
    }
    const DenseMatrix gx = gram(*x);
    const DenseMatrix gy = gram(*y);
    const Vector sx = detail::column_sums(*x);
    const Vector sy = detail::column_sums(*y);
    const double nx = static_cast<double>(x->rows());
    const double ny = static_cast<double>(y->rows());
    // Σ_x Σ_y (x + y)(x + y)ᵀ and −Σ_x Σ_y (x·y)(x + y)
    const DenseMatrix background = ny * gx + nx * gy + sx * sy.transpose() + sy * sx.transpose();
    const Vector background_rhs = -(gx * sy + gy * sx);

    auto design = [&](const TensorEntry& e, Vector& a) {
        Eigen::Index xr = 0, yr = 0;
        switch (block.kind) {
        case Block::Kind::USERS: xr = e.item; yr = e.ctx[0]; break;
        case Block::Kind::ITEMS: xr = e.user; yr = e.ctx[0]; break;
        case Block::Kind::CONTEXT: xr = e.user; yr = e.item; break;
        }
        a = x->row(xr).transpose() + y->row(yr).transpose();
        return x->row(xr).dot(y->row(yr));
    };
    return detail::solve_block_rows(index, hp, block, background, background_rhs, zero, design, threads);
}

/// TTF user or item block. Items see every context matrix transposed.
inline DenseMatrix update_users_items_ttf(const FitIndex& index, const FactorModel& model, const Hyperparams& hp,
                                          Block block, unsigned threads = 1) {
    if (block.kind == Block::Kind::CONTEXT) throw std::invalid_argument("update_users_items_ttf: context block");
    if (model.contexts.size() != 1) throw ConfigError("TTF requires exactly one (stacked) context mode");
    const auto k = static_cast<Eigen::Index>(model.k());
    const bool users = block.kind == Block::Kind::USERS;
    const DenseMatrix& other = users ? model.items : model.users;
    const DenseMatrix& contexts = model.contexts[0];
    const DenseMatrix g = gram(other);

    auto matrix = [&](Eigen::Index c) { return Eigen::Map<const DenseMatrix>(contexts.row(c).data(), k, k); };
    DenseMatrix background = DenseMatrix::Zero(k, k);
    for (Eigen::Index c = 0; c < contexts.rows(); ++c) {
        if (users)
            background.noalias() += matrix(c) * g * matrix(c).transpose();
        else
            background.noalias() += matrix(c).transpose() * g * matrix(c);
    }
    // Exact symmetry for the Cholesky factorization.
    background = 0.5 * (background + background.transpose()).eval();

    auto design = [&](const TensorEntry& e, Vector& a) {
        if (users)
            a.noalias() = matrix(e.ctx[0]) * model.items.row(e.item).transpose();
        else
            a.noalias() = matrix(e.ctx[0]).transpose() * model.users.row(e.user).transpose();
        return 0.0;
    };
    const Vector zero = Vector::Zero(k);
    return detail::solve_block_rows(index, hp, block, background, zero, zero, design, threads);
}

/// Kronecker product of two square matrices (row-major vectorization:
/// vec(B)[a·k + b] = B(a, b), so vec(A·B·C) = (A ⊗ Cᵀ)·vec(B)).
inline DenseMatrix kronecker(const DenseMatrix& a, const DenseMatrix& b) {
    DenseMatrix out(a.rows() * b.rows(), a.cols() * b.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cols(); ++j)
            out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    return out;
}

/// Context matrix B_c of a TTF model solving
///   PᵀP·B·QᵀQ + Σ w'·P_uᵀ(P_u·B·Q_iᵀ)Q_i + λ_c·B = Σ w·P_uᵀQ_i + λ_c·target
/// either by vectorization (EXACT) or by warm-started CG. Returned as a
/// k×k matrix.
inline DenseMatrix update_context_ttf(const FitIndex& index, const FactorModel& model, const Hyperparams& hp,
                                      std::size_t value, Solver solver) {
    if (model.contexts.size() != 1) throw ConfigError("TTF requires exactly one (stacked) context mode");
    const std::size_t k = model.k();
    const auto ki = static_cast<Eigen::Index>(k);
    const auto kk = static_cast<Eigen::Index>(k * k);
    if (solver == Solver::EXACT && k > kMaxExactTtfRank) {
        std::ostringstream msg;
        msg << "exact TTF context solve refused for k=" << k << " (k^6 cost, limit " << kMaxExactTtfRank
            << "); use the CG solver";
        throw ConfigError(msg.str());
    }
    const Block block = Block::context(0);
    const auto entries = index.entries(block, value);
    const DenseMatrix ptp = gram(model.users);
    const DenseMatrix qtq = gram(model.items);
    const double lam = reg_strength(hp.lambda, hp.nu, index.weight_sum(block, value, hp.alpha));
    const Vector target = model.default_factor();

    // Σ w·P_uᵀQ_i as a vectorized k×k matrix.
    Vector rhs = lam * target;
    {
        Eigen::Map<DenseMatrix> r(rhs.data(), ki, ki);
        for (auto e : entries) {
            const auto& t = index.tensor()[e];
            r.noalias() += (1.0 + hp.alpha * t.amplitude) * model.users.row(t.user).transpose() *
                           model.items.row(t.item);
        }
    }

    if (solver == Solver::EXACT) {
        DenseMatrix a = kronecker(ptp, qtq);
        Vector d(kk);
        for (auto e : entries) {
            const auto& t = index.tensor()[e];
            const double wp = hp.alpha * t.amplitude;
            if (wp == 0.0) continue;
            Eigen::Map<DenseMatrix>(d.data(), ki, ki).noalias() =
                model.users.row(t.user).transpose() * model.items.row(t.item);
            a.noalias() += wp * d * d.transpose();
        }
        a.diagonal().array() += lam;
        Vector x = solve_spd(a, rhs);
        return Eigen::Map<const DenseMatrix>(x.data(), ki, ki);
    }

    LinearOperator op;
    op.dim = kk;
    op.apply = [&](const Vector& xv, Vector& yv) {
        Eigen::Map<const DenseMatrix> b(xv.data(), ki, ki);
        Eigen::Map<DenseMatrix> y(yv.data(), ki, ki);
        y.noalias() = ptp * b * qtq;
        y += lam * b;
        // Entries are grouped by user, so P_u·B is formed once per user.
        std::size_t j = 0;
        Eigen::RowVectorXd pb(ki);
        Eigen::RowVectorXd acc(ki);
        while (j < entries.size()) {
            const auto u = index.tensor()[entries[j]].user;
            pb.noalias() = model.users.row(u) * b;
            acc.setZero();
            for (; j < entries.size() && index.tensor()[entries[j]].user == u; ++j) {
                const auto& t = index.tensor()[entries[j]];
                const double wp = hp.alpha * t.amplitude;
                if (wp == 0.0) continue;
                const auto q = model.items.row(t.item);
                acc.noalias() += (wp * pb.dot(q)) * q;
            }
            y.noalias() += model.users.row(u).transpose() * acc;
        }
    };
    const Vector x0 = model.contexts[0].row(static_cast<Eigen::Index>(value)).transpose();
    Vector x = cg_solve(op, rhs, hp.cg_steps, x0);
    if (!x.allFinite()) throw NumericalError("TTF context CG produced non-finite values");
    return Eigen::Map<const DenseMatrix>(x.data(), ki, ki);
}

/// All context matrices of a TTF model, one vectorized matrix per row.
inline DenseMatrix update_contexts_ttf(const FitIndex& index, const FactorModel& model, const Hyperparams& hp,
                                       Solver solver, unsigned threads = 1) {
    const auto rows = index.rows(Block::context(0));
    const auto kk = static_cast<Eigen::Index>(model.k() * model.k());
    DenseMatrix out(static_cast<Eigen::Index>(rows), kk);
    parallel_for(rows, threads, [&](std::size_t v) {
        const DenseMatrix b = update_context_ttf(index, model, hp, v, solver);
        out.row(static_cast<Eigen::Index>(v)) = Eigen::Map<const Eigen::RowVectorXd>(b.data(), kk);
    });
    return out;
}

/// Dispatches one block update for the model's kind.
inline DenseMatrix update_block(const FitIndex& index, const FactorModel& model, const Hyperparams& hp, Block block,
                                unsigned threads = 1) {
    switch (model.kind) {
    case ModelKind::CP:
    case ModelKind::WMF: return update_block_cp(index, model, hp, block, threads);
    case ModelKind::PITF: return update_block_pitf(index, model, hp, block, threads);
    case ModelKind::TTF:
        if (block.kind == Block::Kind::CONTEXT) return update_contexts_ttf(index, model, hp, hp.solver, threads);
        return update_users_items_ttf(index, model, hp, block, threads);
    }
    throw ConfigError("update_block: unknown model kind");
}

struct SweepEvent {
    std::size_t sweep = 0;
    Block block;
    const FactorModel& model;
};

struct TrainOptions {
    unsigned threads = 1;
    bool update_users = true;
    bool update_items = true;
    bool update_contexts = true;
    /// Called after every block update.
    std::function<void(const SweepEvent&)> observer;
    /// Per-sweep diagnostics (observed-entry loss) are written here if set.
    std::ostream* log = nullptr;
};

/// Σ over observed entries of w·(1 − x̂)². Cheap progress indicator.
inline double observed_loss(const FitIndex& index, const FactorModel& model, double alpha) {
    double sum = 0.0;
    for (const auto& e : index.tensor().entries()) {
        const double r = 1.0 - predict_entry(model, e.user, e.item, e.ctx);
        sum += weight_of(1.0, alpha, e.amplitude) * r * r;
    }
    return sum;
}

/// Fresh model for the fitting tensor `fit`: user and item entries uniform
/// in ±0.1/√k, context factors at the decomposition's identity element.
inline FactorModel init_model(const InteractionTensor& fit, const ContextSchema& original_schema,
                              const Hyperparams& hp, ModelKind kind) {
    FactorModel model;
    model.kind = kind;
    model.hp = hp;
    model.schema = original_schema;
    const auto k = static_cast<Eigen::Index>(hp.k);
    const double scale = 0.1 / std::sqrt(static_cast<double>(hp.k));
    std::mt19937_64 rng(hp.seed);
    std::uniform_real_distribution<double> uniform(-scale, scale);
    model.users.resize(static_cast<Eigen::Index>(fit.users()), k);
    model.items.resize(static_cast<Eigen::Index>(fit.items()), k);
    for (Eigen::Index i = 0; i < model.users.size(); ++i) model.users.data()[i] = uniform(rng);
    for (Eigen::Index i = 0; i < model.items.size(); ++i) model.items.data()[i] = uniform(rng);

    if (kind != ModelKind::WMF) {
        const Vector identity = identity_factor(kind, hp.k);
        for (const auto& f : fit.schema().features()) {
            DenseMatrix c(static_cast<Eigen::Index>(f.cardinality), identity.size());
            c.rowwise() = identity.transpose();
            model.contexts.push_back(std::move(c));
        }
    }
    return model;
}

/// Runs `sweeps` ALS sweeps in place, updating blocks in the order users,
/// items, contexts 1..d.
inline void run_sweeps(const FitIndex& index, FactorModel& model, const Hyperparams& hp, std::size_t sweeps,
                       const TrainOptions& options = {}) {
    std::vector<Block> order;
    if (options.update_users) order.push_back(Block::users());
    if (options.update_items) order.push_back(Block::items());
    if (options.update_contexts)
        for (std::size_t c = 0; c < model.contexts.size(); ++c) order.push_back(Block::context(c));

    for (std::size_t s = 0; s < sweeps; ++s) {
        for (const auto& block : order) {
            DenseMatrix updated = update_block(index, model, hp, block, options.threads);
            switch (block.kind) {
            case Block::Kind::USERS: model.users = std::move(updated); break;
            case Block::Kind::ITEMS: model.items = std::move(updated); break;
            case Block::Kind::CONTEXT: model.contexts[block.mode] = std::move(updated); break;
            }
            if (options.observer) options.observer(SweepEvent{s, block, model});
        }
        if (options.log)
            *options.log << "[" << to_string(model.kind) << "] sweep " << (s + 1) << "/" << sweeps
                         << " observed loss " << observed_loss(index, model, hp.alpha) << '\n';
    }
}

/// Alternating least squares on `t` (original coordinates; stacking or
/// collapsing happens here according to kind and hp.structure).
inline FactorModel als_train(const InteractionTensor& t, const Hyperparams& hp, ModelKind kind,
                             const TrainOptions& options = {}) {
    if (hp.iterations > 0) hp.validate();
    const FitIndex index(fitting_tensor(t, kind, hp.structure));
    FactorModel model = init_model(index.tensor(), t.schema(), hp, kind);
    run_sweeps(index, model, hp, hp.iterations, options);
    return model;
}

/// Learns only the context factors on top of frozen user/item factors from
/// a context-free base model. One sweep, three for multidimensional CP.
inline FactorModel posthoc_context_fit(const FactorModel& base, const InteractionTensor& t, const Hyperparams& hp,
                                       ModelKind kind, const TrainOptions& options = {}) {
    if (base.k() != hp.k)
        throw ConfigError("post-hoc fit: base model has k=" + std::to_string(base.k()) +
                          " but hyperparameters request k=" + std::to_string(hp.k));
    if (static_cast<std::size_t>(base.users.rows()) != t.users() ||
        static_cast<std::size_t>(base.items.rows()) != t.items())
        throw ConfigError("post-hoc fit: base model shape does not match the interaction data");
    if (kind == ModelKind::WMF) throw ConfigError("post-hoc fit needs a context-aware model kind");
    hp.validate();

    const FitIndex index(fitting_tensor(t, kind, hp.structure));
    FactorModel model = init_model(index.tensor(), t.schema(), hp, kind);
    model.users = base.users;
    model.items = base.items;

    TrainOptions opts = options;
    opts.update_users = false;
    opts.update_items = false;
    opts.update_contexts = true;
    const std::size_t sweeps = (kind == ModelKind::CP && hp.structure == Structure::MULTI_D) ? 3 : 1;
    run_sweeps(index, model, hp, sweeps, opts);
    return model;
}

} // namespace cars
