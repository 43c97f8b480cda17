#include <gtest/gtest.h>

#include <cars/linalg.hpp>

#include <random>

#include "oracle.hpp"

using namespace cars;

namespace {

DenseMatrix mat(std::initializer_list<std::initializer_list<double>> rows) {
    DenseMatrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
    Eigen::Index r = 0;
    for (const auto& row : rows) {
        Eigen::Index c = 0;
        for (double v : row) m(r, c++) = v;
        ++r;
    }
    return m;
}

DenseMatrix random_spd(Eigen::Index n, std::uint64_t seed, double shift = 0.5) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g;
    DenseMatrix a = DenseMatrix::NullaryExpr(n, n, [&] { return g(rng); });
    DenseMatrix s = a.transpose() * a;
    s.diagonal().array() += shift;
    return s;
}

LinearOperator dense_operator(const DenseMatrix& a) {
    return {a.rows(), [a](const Vector& x, Vector& y) { y.noalias() = a * x; }};
}

} // namespace

TEST(Gram, HandComputed) {
    EXPECT_EQ(gram(mat({{1, 2}, {3, 4}})), mat({{10, 14}, {14, 20}}));
}

TEST(Gram, ZeroAndIdentity) {
    EXPECT_EQ(gram(DenseMatrix::Zero(3, 2)), DenseMatrix::Zero(2, 2));
    EXPECT_EQ(gram(DenseMatrix::Identity(4, 4)), DenseMatrix::Identity(4, 4));
}

TEST(Gram, BitwiseSymmetric) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-1, 1);
    for (int trial = 0; trial < 10; ++trial) {
        const DenseMatrix m = DenseMatrix::NullaryExpr(37, 7, [&] { return u(rng); });
        const DenseMatrix g = gram(m);
        for (Eigen::Index i = 0; i < g.rows(); ++i)
            for (Eigen::Index j = 0; j < g.cols(); ++j) EXPECT_EQ(g(i, j), g(j, i));
        EXPECT_TRUE(g.isApprox(m.transpose() * m, 1e-12));
    }
}

TEST(Hadamard, Cases) {
    const DenseMatrix a = mat({{1, 2}, {3, 4}});
    EXPECT_EQ(hadamard(a, DenseMatrix::Ones(2, 2)), a);
    EXPECT_EQ(hadamard(a, DenseMatrix::Zero(2, 2)), DenseMatrix::Zero(2, 2));
    EXPECT_EQ(hadamard(a, mat({{2, 0}, {1, 3}})), mat({{2, 0}, {3, 12}}));
}

TEST(Hadamard, ShapeMismatchThrows) {
    EXPECT_THROW(hadamard(DenseMatrix::Zero(2, 2), DenseMatrix::Zero(2, 3)), std::invalid_argument);
}

TEST(SolveSpd, Diagonal) {
    Vector b(2);
    b << 2, 8;
    const Vector x = solve_spd(mat({{2, 0}, {0, 4}}), b);
    EXPECT_DOUBLE_EQ(x[0], 1.0);
    EXPECT_DOUBLE_EQ(x[1], 2.0);
}

TEST(SolveSpd, IdentityReturnsRhs) {
    Vector b(3);
    b << -1.5, 2.25, 7;
    EXPECT_EQ(solve_spd(DenseMatrix::Identity(3, 3), b), b);
}

TEST(SolveSpd, MatchesExplicitInverse) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const DenseMatrix a = random_spd(8, seed);
        const Vector b = Vector::LinSpaced(8, -1, 2);
        const Vector x = solve_spd(a, b);
        const Vector oracle = cars::testing::gauss_jordan_inverse(a) * b;
        EXPECT_LT((x - oracle).cwiseAbs().maxCoeff(), 1e-8);
        EXPECT_LE((a * x - b).norm(), 1e-10 * b.norm());
    }
}

TEST(SolveSpd, NonSpdThrowsNumericalError) {
    EXPECT_THROW(solve_spd(mat({{1, 2}, {2, 1}}), Vector::Ones(2)), NumericalError);
    EXPECT_THROW(solve_spd(mat({{-1, 0}, {0, 1}}), Vector::Ones(2)), NumericalError);
}

TEST(CgSolve, IdentityOneStep) {
    const Vector rhs = Vector::LinSpaced(5, 1, 5);
    const Vector x = cg_solve(dense_operator(DenseMatrix::Identity(5, 5)), rhs, 1, Vector::Zero(5));
    EXPECT_LT((x - rhs).norm(), 1e-14);
}

TEST(CgSolve, ZeroStepsReturnsStart) {
    const Vector x0 = Vector::LinSpaced(4, 3, -3);
    EXPECT_EQ(cg_solve(dense_operator(random_spd(4, 1)), Vector::Ones(4), 0, x0), x0);
}

TEST(CgSolve, FullStepsMatchDirectSolve) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const DenseMatrix a = random_spd(16, 10 + seed, 2.0);
        const Vector b = Vector::LinSpaced(16, -2, 3);
        const Vector x = cg_solve(dense_operator(a), b, 16, Vector::Zero(16));
        EXPECT_LT((x - solve_spd(a, b)).cwiseAbs().maxCoeff(), 1e-6);
    }
}

TEST(CgSolve, StepCountCappedAtDimension) {
    const DenseMatrix a = random_spd(6, 2, 1.0);
    CgTrace trace;
    cg_solve(dense_operator(a), Vector::Ones(6), 100, Vector::Zero(6), &trace);
    EXPECT_LE(trace.iterations, 6u);
}

// CG minimizes ½xᵀAx − bᵀx over growing Krylov spaces, so the objective
// (equivalently the A-norm of the error) can only go down from step to step.
TEST(CgSolve, ObjectiveNonIncreasing) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const DenseMatrix a = random_spd(12, 30 + seed, 0.1);
        const Vector b = Vector::LinSpaced(12, 1, -1);
        const Vector x0 = Vector::Constant(12, 0.3);
        const auto op = dense_operator(a);
        double prev = std::numeric_limits<double>::infinity();
        for (std::size_t steps = 0; steps <= 12; ++steps) {
            const Vector x = cg_solve(op, b, steps, x0);
            const double f = 0.5 * x.dot(a * x) - b.dot(x);
            EXPECT_LE(f, prev + 1e-12 * std::abs(prev)) << "step " << steps;
            prev = f;
        }
    }
}

TEST(CgSolve, TraceRecordsResiduals) {
    const DenseMatrix a = random_spd(5, 4);
    const Vector b = Vector::Ones(5);
    CgTrace trace;
    const Vector x = cg_solve(dense_operator(a), b, 3, Vector::Zero(5), &trace);
    ASSERT_EQ(trace.residual_norms.size(), trace.iterations + 1);
    EXPECT_DOUBLE_EQ(trace.residual_norms.front(), b.norm());
    EXPECT_NEAR(trace.residual_norms.back(), (b - a * x).norm(), 1e-10);
}

TEST(LinearOperator, LinearUnderRandomProbes) {
    const DenseMatrix a = random_spd(7, 8);
    const auto op = dense_operator(a);
    std::mt19937_64 rng(1);
    std::normal_distribution<double> g;
    for (int t = 0; t < 5; ++t) {
        const Vector x = Vector::NullaryExpr(7, [&] { return g(rng); });
        const Vector y = Vector::NullaryExpr(7, [&] { return g(rng); });
        const double s = g(rng);
        EXPECT_LT((op(x + y) - op(x) - op(y)).norm(), 1e-12);
        EXPECT_LT((op(s * x) - s * op(x)).norm(), 1e-12);
    }
}
