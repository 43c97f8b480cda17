#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "error.hpp"

namespace cars {

/// Row-major dense storage for factor matrices and small systems.
using DenseMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Returns MᵀM. Only the upper triangle is accumulated; the lower one is a
/// mirror, so the result is bitwise symmetric.
inline DenseMatrix gram(const DenseMatrix& m) {
    const Eigen::Index k = m.cols();
    DenseMatrix g = DenseMatrix::Zero(k, k);
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        const double* row = m.row(r).data();
        for (Eigen::Index a = 0; a < k; ++a) {
            const double ra = row[a];
            if (ra == 0.0) continue;
            double* out = g.row(a).data();
            for (Eigen::Index b = a; b < k; ++b) out[b] += ra * row[b];
        }
    }
    for (Eigen::Index a = 0; a < k; ++a)
        for (Eigen::Index b = 0; b < a; ++b) g(a, b) = g(b, a);
    return g;
}

inline DenseMatrix hadamard(const DenseMatrix& a, const DenseMatrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        std::ostringstream msg;
        msg << "hadamard: shape mismatch " << a.rows() << "x" << a.cols() << " vs " << b.rows()
            << "x" << b.cols();
        throw std::invalid_argument(msg.str());
    }
    return a.cwiseProduct(b);
}

/// Cholesky solve of a symmetric positive definite system.
inline Vector solve_spd(const DenseMatrix& a, const Vector& b) {
    if (a.rows() != a.cols() || a.rows() != b.size())
        throw std::invalid_argument("solve_spd: dimension mismatch");
    Eigen::LLT<DenseMatrix> llt(a);
    if (llt.info() != Eigen::Success) {
        std::ostringstream msg;
        msg << "solve_spd: matrix of order " << a.rows()
            << " is not positive definite (min diagonal " << a.diagonal().minCoeff()
            << "); is the regularization strength positive?";
        throw NumericalError(msg.str());
    }
    Vector x = llt.solve(b);
    if (!x.allFinite()) throw NumericalError("solve_spd: non-finite solution");
    return x;
}

/// Matrix-free symmetric operator: apply(x, y) writes A·x into y.
struct LinearOperator {
    Eigen::Index dim = 0;
    std::function<void(const Vector&, Vector&)> apply;

    Vector operator()(const Vector& x) const {
        Vector y(dim);
        apply(x, y);
        return y;
    }
};

/// Residual norms ‖b − A·x_j‖ for j = 0..iterations, filled when requested.
struct CgTrace {
    std::vector<double> residual_norms;
    std::size_t iterations = 0;
};

inline constexpr double kCgResidualCutoff = 1e-12;

/// Plain conjugate gradient from x0 for at most `steps` iterations (and never
/// more than dim). Stops early once ‖r‖ ≤ 1e-12·max(1, ‖b‖).
inline Vector cg_solve(const LinearOperator& op, const Vector& rhs, std::size_t steps,
                       const Vector& x0, CgTrace* trace = nullptr) {
    if (rhs.size() != op.dim || x0.size() != op.dim)
        throw std::invalid_argument("cg_solve: dimension mismatch");
    Vector x = x0;
    if (steps == 0) {
        if (trace) trace->residual_norms.push_back((rhs - op(x)).norm());
        return x;
    }
    const double cutoff = kCgResidualCutoff * std::max(1.0, rhs.norm());
    const std::size_t max_steps = std::min<std::size_t>(steps, static_cast<std::size_t>(op.dim));

    Vector ap(op.dim);
    op.apply(x, ap);
    Vector r = rhs - ap;
    Vector p = r;
    double rr = r.squaredNorm();
    if (trace) trace->residual_norms.push_back(std::sqrt(rr));

    for (std::size_t it = 0; it < max_steps; ++it) {
        if (std::sqrt(rr) <= cutoff) break;
        op.apply(p, ap);
        const double pap = p.dot(ap);
        if (!(pap > 0.0)) break; // direction of zero curvature
        const double step = rr / pap;
        x.noalias() += step * p;
        r.noalias() -= step * ap;
        const double rr_next = r.squaredNorm();
        p = r + (rr_next / rr) * p;
        rr = rr_next;
        if (trace) {
            trace->residual_norms.push_back(std::sqrt(rr));
            trace->iterations = it + 1;
        }
    }
    return x;
}

} // namespace cars
