#pragma once

#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "error.hpp"
#include "model.hpp"
#include "tensor.hpp"

namespace cars {

/// A parameter block of the ALS sweep.
struct Block {
    enum class Kind { USERS, ITEMS, CONTEXT };
    Kind kind = Kind::USERS;
    /// Context mode index for Kind::CONTEXT.
    std::size_t mode = 0;

    static Block users() { return {Kind::USERS, 0}; }
    static Block items() { return {Kind::ITEMS, 0}; }
    static Block context(std::size_t mode) { return {Kind::CONTEXT, mode}; }
    friend bool operator==(const Block&, const Block&) = default;
};

/// The tensor a model of the given kind is actually fit on: contexts are
/// dropped for WMF, folded into one dimension for stacked structures.
inline InteractionTensor fitting_tensor(const InteractionTensor& t, ModelKind kind, Structure structure) {
    if (kind == ModelKind::WMF) return collapse_contexts(t);
    if (structure == Structure::MULTI_D) {
        if (kind != ModelKind::CP)
            throw ConfigError(std::string(to_string(kind)) +
                              " supports only the stacked 3D structure (multidimensional variant unsupported)");
        return t;
    }
    if (t.schema().empty()) {
        if (kind != ModelKind::CP)
            throw ConfigError(std::string(to_string(kind)) + " requires at least one context feature");
        return t;
    }
    return stack(t);
}

/// Row → entry lookup for every block of a fitting tensor, plus the
/// per-row quantities needed for frequency-scaled regularization.
class FitIndex {
public:
    explicit FitIndex(InteractionTensor fitting) : tensor_(std::move(fitting)) {
        const auto& schema = tensor_.schema();
        const auto p = tensor_.size();
        const double cells = schema.cell_count();

        user_offsets_.assign(tensor_.users() + 1, 0);
        for (std::size_t u = 0; u < tensor_.users(); ++u)
            user_offsets_[u + 1] = user_offsets_[u] + tensor_.user_entries(u).size();
        user_ids_.resize(p);
        std::iota(user_ids_.begin(), user_ids_.end(), 0u);

        build_csr(tensor_.items(), [&](const TensorEntry& e) -> std::int64_t { return e.item; }, item_offsets_,
                  item_ids_);

        modes_.resize(schema.size());
        for (std::size_t c = 0; c < schema.size(); ++c) {
            build_csr(schema[c].cardinality, [c](const TensorEntry& e) -> std::int64_t { return e.ctx[c]; },
                      modes_[c].offsets, modes_[c].ids);
            modes_[c].cells = static_cast<double>(tensor_.users()) * static_cast<double>(tensor_.items()) *
                              cells / static_cast<double>(schema[c].cardinality);
        }
        user_cells_ = static_cast<double>(tensor_.items()) * cells;
        item_cells_ = static_cast<double>(tensor_.users()) * cells;

        user_amp_ = row_amplitudes(user_offsets_, user_ids_);
        item_amp_ = row_amplitudes(item_offsets_, item_ids_);
        for (auto& m : modes_) m.amp = row_amplitudes(m.offsets, m.ids);
    }

    const InteractionTensor& tensor() const noexcept { return tensor_; }
    std::size_t context_modes() const noexcept { return modes_.size(); }

    std::size_t rows(Block b) const {
        switch (b.kind) {
        case Block::Kind::USERS: return tensor_.users();
        case Block::Kind::ITEMS: return tensor_.items();
        case Block::Kind::CONTEXT: return tensor_.schema()[b.mode].cardinality;
        }
        return 0;
    }

    /// Indices of the entries touching row r of block b.
    std::span<const std::uint32_t> entries(Block b, std::size_t r) const {
        const auto& [offsets, ids] = csr(b);
        return {ids.data() + offsets[r], offsets[r + 1] - offsets[r]};
    }

    /// Number of grid cells involving one row of block b.
    double cells_per_row(Block b) const {
        switch (b.kind) {
        case Block::Kind::USERS: return user_cells_;
        case Block::Kind::ITEMS: return item_cells_;
        case Block::Kind::CONTEXT: return modes_.at(b.mode).cells;
        }
        return 0.0;
    }

    /// Σ W over the cells involving row r: one per grid cell plus α·amplitude
    /// per observed entry.
    double weight_sum(Block b, std::size_t r, double alpha) const {
        const std::vector<double>* amp = nullptr;
        switch (b.kind) {
        case Block::Kind::USERS: amp = &user_amp_; break;
        case Block::Kind::ITEMS: amp = &item_amp_; break;
        case Block::Kind::CONTEXT: amp = &modes_.at(b.mode).amp; break;
        }
        return cells_per_row(b) + alpha * (*amp)[r];
    }

private:
    struct Mode {
        std::vector<std::size_t> offsets;
        std::vector<std::uint32_t> ids;
        std::vector<double> amp;
        double cells = 0.0;
    };

    std::pair<const std::vector<std::size_t>&, const std::vector<std::uint32_t>&> csr(Block b) const {
        switch (b.kind) {
        case Block::Kind::USERS: return {user_offsets_, user_ids_};
        case Block::Kind::ITEMS: return {item_offsets_, item_ids_};
        default: return {modes_.at(b.mode).offsets, modes_.at(b.mode).ids};
        }
    }

    // Entries with a negative key (missing context) are left out.
    template <typename KeyFn>
    void build_csr(std::size_t rows, KeyFn key, std::vector<std::size_t>& offsets,
                   std::vector<std::uint32_t>& ids) const {
        offsets.assign(rows + 1, 0);
        for (const auto& e : tensor_.entries()) {
            const auto k = key(e);
            if (k >= 0) ++offsets[static_cast<std::size_t>(k) + 1];
        }
        std::partial_sum(offsets.begin(), offsets.end(), offsets.begin());
        ids.resize(offsets[rows]);
        std::vector<std::size_t> cursor(offsets.begin(), offsets.end() - 1);
        for (std::size_t e = 0; e < tensor_.size(); ++e) {
            const auto k = key(tensor_[e]);
            if (k >= 0) ids[cursor[static_cast<std::size_t>(k)]++] = static_cast<std::uint32_t>(e);
        }
    }

    std::vector<double> row_amplitudes(const std::vector<std::size_t>& offsets,
                                       const std::vector<std::uint32_t>& ids) const {
        std::vector<double> out(offsets.size() - 1, 0.0);
        for (std::size_t r = 0; r + 1 < offsets.size(); ++r)
            for (std::size_t j = offsets[r]; j < offsets[r + 1]; ++j) out[r] += tensor_[ids[j]].amplitude;
        return out;
    }

    InteractionTensor tensor_;
    std::vector<std::size_t> user_offsets_;
    std::vector<std::uint32_t> user_ids_;
    std::vector<std::size_t> item_offsets_;
    std::vector<std::uint32_t> item_ids_;
    std::vector<Mode> modes_;
    std::vector<double> user_amp_;
    std::vector<double> item_amp_;
    double user_cells_ = 0.0;
    double item_cells_ = 0.0;
};

} // namespace cars
