#pragma once

// Text container for trained models:
//
//   cars-model 1
//   kind <CP|PITF|TTF|WMF>
//   k <int>  alpha <real> ... one "key value" pair per line
//   features <d>
//   feature "<name>" <cardinality> <allows_missing 0|1> <label count> "<label>"...
//   matrix <name> <rows> <cols>
//   <rows lines of cols values, 17 significant digits>
//   end
//
// ItemKNN models use kind ITEMKNN with per-user histories and per-item
// neighbor lists instead of matrices. Strings are written with std::quoted.

#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <variant>

#include "baselines.hpp"
#include "error.hpp"
#include "model.hpp"
#include "recommender.hpp"

namespace cars {

inline constexpr const char* kModelMagic = "cars-model";
inline constexpr int kModelFormatVersion = 1;

namespace detail {

inline void write_matrix(std::ostream& out, const std::string& name, const DenseMatrix& m) {
    out << "matrix " << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) out << (c ? " " : "") << m(r, c);
        out << '\n';
    }
}

inline void expect_token(std::istream& in, const std::string& expected) {
    std::string tok;
    if (!(in >> tok) || tok != expected)
        throw ParseError("model file: expected '" + expected + "', found '" + tok + "'", 0);
}

template <typename T>
T read_value(std::istream& in, const std::string& key) {
    expect_token(in, key);
    T value{};
    if (!(in >> value)) throw ParseError("model file: bad value for '" + key + "'", 0);
    return value;
}

inline DenseMatrix read_matrix(std::istream& in, const std::string& name) {
    expect_token(in, "matrix");
    expect_token(in, name);
    Eigen::Index rows = 0, cols = 0;
    if (!(in >> rows >> cols) || rows < 0 || cols < 0) throw ParseError("model file: bad shape for " + name, 0);
    DenseMatrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i)
        if (!(in >> m.data()[i])) throw ParseError("model file: truncated matrix " + name, 0);
    return m;
}

inline void write_header(std::ostream& out, std::string_view kind) {
    out << kModelMagic << ' ' << kModelFormatVersion << '\n' << "kind " << kind << '\n';
}

} // namespace detail

inline void save_model(std::ostream& out, const FactorModel& model) {
    const auto old_precision = out.precision(17);
    detail::write_header(out, to_string(model.kind));
    const auto& hp = model.hp;
    out << "k " << hp.k << '\n'
        << "alpha " << hp.alpha << '\n'
        << "lambda " << hp.lambda << '\n'
        << "nu " << hp.nu << '\n'
        << "iterations " << hp.iterations << '\n'
        << "cg_steps " << hp.cg_steps << '\n'
        << "reg_mode " << to_string(hp.reg_mode) << '\n'
        << "structure " << to_string(hp.structure) << '\n'
        << "solver " << to_string(hp.solver) << '\n'
        << "seed " << hp.seed << '\n';
    out << "features " << model.schema.size() << '\n';
    for (const auto& f : model.schema.features()) {
        out << "feature " << std::quoted(f.name) << ' ' << f.cardinality << ' ' << (f.allows_missing ? 1 : 0) << ' '
            << f.labels.size();
        for (const auto& l : f.labels) out << ' ' << std::quoted(l);
        out << '\n';
    }
    detail::write_matrix(out, "users", model.users);
    detail::write_matrix(out, "items", model.items);
    out << "contexts " << model.contexts.size() << '\n';
    for (std::size_t c = 0; c < model.contexts.size(); ++c)
        detail::write_matrix(out, "context" + std::to_string(c), model.contexts[c]);
    out << "end\n";
    out.precision(old_precision);
}

inline void save_model(std::ostream& out, const SimilarityModel& model) {
    const auto old_precision = out.precision(17);
    detail::write_header(out, "ITEMKNN");
    out << "neighbors " << model.neighbors() << '\n'
        << "users " << model.users() << '\n'
        << "items " << model.items() << '\n';
    for (std::size_t u = 0; u < model.users(); ++u) {
        out << "history " << model.history(u).size();
        for (auto i : model.history(u)) out << ' ' << i;
        out << '\n';
    }
    for (std::size_t i = 0; i < model.items(); ++i) {
        out << "neighborhood " << model.neighborhood(i).size();
        for (const auto& nb : model.neighborhood(i)) out << ' ' << nb.item << ' ' << nb.similarity;
        out << '\n';
    }
    out << "end\n";
    out.precision(old_precision);
}

inline void save_model(std::ostream& out, const Recommender& model) {
    std::visit([&](const auto& m) { save_model(out, m); }, model);
}

namespace detail {

inline FactorModel read_factor_model(std::istream& in, ModelKind kind) {
    FactorModel model;
    model.kind = kind;
    auto& hp = model.hp;
    hp.k = read_value<std::size_t>(in, "k");
    hp.alpha = read_value<double>(in, "alpha");
    hp.lambda = read_value<double>(in, "lambda");
    hp.nu = read_value<double>(in, "nu");
    hp.iterations = read_value<std::size_t>(in, "iterations");
    hp.cg_steps = read_value<std::size_t>(in, "cg_steps");
    hp.reg_mode = parse_reg_mode(read_value<std::string>(in, "reg_mode"));
    hp.structure = parse_structure(read_value<std::string>(in, "structure"));
    hp.solver = parse_solver(read_value<std::string>(in, "solver"));
    hp.seed = read_value<std::uint64_t>(in, "seed");

    const auto d = read_value<std::size_t>(in, "features");
    std::vector<ContextFeature> features(d);
    for (auto& f : features) {
        expect_token(in, "feature");
        int missing = 0;
        std::size_t labels = 0;
        if (!(in >> std::quoted(f.name) >> f.cardinality >> missing >> labels))
            throw ParseError("model file: bad feature line", 0);
        f.allows_missing = missing != 0;
        f.labels.resize(labels);
        for (auto& l : f.labels)
            if (!(in >> std::quoted(l))) throw ParseError("model file: bad feature label", 0);
    }
    model.schema = ContextSchema(std::move(features));
    model.users = read_matrix(in, "users");
    model.items = read_matrix(in, "items");
    const auto modes = read_value<std::size_t>(in, "contexts");
    for (std::size_t c = 0; c < modes; ++c) model.contexts.push_back(read_matrix(in, "context" + std::to_string(c)));
    expect_token(in, "end");

    if (model.users.cols() != static_cast<Eigen::Index>(hp.k) || model.items.cols() != model.users.cols())
        throw ParseError("model file: factor widths disagree with k", 0);
    for (const auto& c : model.contexts)
        if (c.cols() != static_cast<Eigen::Index>(context_width(kind, hp.k)))
            throw ParseError("model file: context factor width disagrees with k", 0);
    return model;
}

inline SimilarityModel read_similarity_model(std::istream& in) {
    const auto neighbors = read_value<std::size_t>(in, "neighbors");
    const auto users = read_value<std::size_t>(in, "users");
    const auto items = read_value<std::size_t>(in, "items");
    std::vector<std::vector<std::uint32_t>> history(users);
    for (auto& h : history) {
        h.resize(read_value<std::size_t>(in, "history"));
        for (auto& i : h)
            if (!(in >> i) || i >= items) throw ParseError("model file: bad history entry", 0);
    }
    std::vector<std::vector<SimilarityModel::Neighbor>> hoods(items);
    for (auto& hood : hoods) {
        hood.resize(read_value<std::size_t>(in, "neighborhood"));
        for (auto& nb : hood)
            if (!(in >> nb.item >> nb.similarity) || nb.item >= items)
                throw ParseError("model file: bad neighborhood entry", 0);
    }
    expect_token(in, "end");
    return SimilarityModel(neighbors, std::move(hoods), std::move(history));
}

} // namespace detail

inline Recommender load_recommender(std::istream& in) {
    detail::expect_token(in, kModelMagic);
    int version = 0;
    if (!(in >> version) || version != kModelFormatVersion)
        throw ParseError("model file: unsupported format version", 0);
    const auto kind = detail::read_value<std::string>(in, "kind");
    if (kind == "ITEMKNN") return detail::read_similarity_model(in);
    return detail::read_factor_model(in, parse_model_kind(kind));
}

inline FactorModel load_model(std::istream& in) {
    auto r = load_recommender(in);
    if (auto* fm = std::get_if<FactorModel>(&r)) return std::move(*fm);
    throw ParseError("model file: expected a factor model, found ITEMKNN", 0);
}

} // namespace cars
