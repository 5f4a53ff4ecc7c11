#include <cstring>
#include <functional>
#include <optional>
#include <random>

#include <gtest/gtest.h>

#include "hybridfe/linalg.hpp"

using namespace hybridfe;

namespace
{

sparse_system
random_spd(Eigen::Index n, unsigned seed)
{
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    Eigen::MatrixXd B(n, n);
    for (Eigen::Index i = 0; i < n; i++)
        for (Eigen::Index j = 0; j < n; j++)
            B(i, j) = U(rng);
    Eigen::MatrixXd A = B * B.transpose() + static_cast<double>(n) * Eigen::MatrixXd::Identity(n, n);
    sparse_system s(n);
    for (Eigen::Index i = 0; i < n; i++)
        for (Eigen::Index j = 0; j < n; j++)
            s.add(i, j, A(i, j));
    for (Eigen::Index i = 0; i < n; i++)
        s.rhs[i] = U(rng);
    return s;
}

/// 1D Laplacian with a random right-hand side; large enough for the sparse path.
sparse_system
laplacian(Eigen::Index n, unsigned seed)
{
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    sparse_system s(n);
    for (Eigen::Index i = 0; i < n; i++)
    {
        s.add(i, i, 2.0);
        if (i > 0)
            s.add(i, i - 1, -1.0);
        if (i + 1 < n)
            s.add(i, i + 1, -1.0);
        s.rhs[i] = U(rng);
    }
    return s;
}

std::optional<error_kind>
kind_of(const std::function<void()>& fn)
{
    try
    {
        fn();
    }
    catch (const error& e)
    {
        return e.kind();
    }
    return std::nullopt;
}

} // namespace

TEST(SolveDirect, Identity)
{
    sparse_system s(4);
    for (int i = 0; i < 4; i++)
        s.add(i, i, 1.0);
    s.rhs[0] = 1.0;
    auto r = solve_direct(s);
    EXPECT_EQ(r.solution, Eigen::VectorXd::Unit(4, 0));
    EXPECT_EQ(r.relative_residual, 0.0);
    EXPECT_TRUE(r.pivots_healthy);
}

TEST(SolveDirect, TwoByTwo)
{
    sparse_system s(2);
    s.add(0, 0, 2.0);
    s.add(0, 1, 1.0);
    s.add(1, 0, 1.0);
    s.add(1, 1, 2.0);
    s.rhs << 3.0, 3.0;
    auto r = solve_direct(s);
    EXPECT_NEAR(r.solution[0], 1.0, 1e-15);
    EXPECT_NEAR(r.solution[1], 1.0, 1e-15);
}

TEST(SolveDirect, DuplicateTripletsAreSummed)
{
    sparse_system s(2);
    s.add(0, 0, 1.0);
    s.add(0, 0, 1.0);
    s.add(1, 1, 4.0);
    s.add(0, 1, 0.0); // dropped
    s.rhs << 2.0, 4.0;
    EXPECT_EQ(s.matrix().nonZeros(), 2);
    auto r = solve_direct(s);
    EXPECT_NEAR(r.solution[0], 1.0, 1e-15);
    EXPECT_NEAR(r.solution[1], 1.0, 1e-15);
}

TEST(SolveDirect, AddBlockSkipsConstrainedIndices)
{
    sparse_system s(2);
    Eigen::Matrix3d b;
    b << 1, 2, 3, 4, 5, 6, 7, 8, 9;
    s.add_block({0, -1, 1}, {-1, 0, 1}, b);
    Eigen::MatrixXd A(s.matrix());
    Eigen::Matrix2d expected;
    expected << 2, 3, 8, 9;
    EXPECT_EQ(A, Eigen::MatrixXd(expected));
}

TEST(SolveDirect, RandomSpdMatchesDenseOracle)
{
    auto s = random_spd(50, 1234);
    auto r = solve_direct(s);
    EXPECT_LE(r.relative_residual, 1e-12);
    Eigen::MatrixXd A(s.matrix());
    Eigen::VectorXd oracle = A.llt().solve(s.rhs);
    EXPECT_LT((r.solution - oracle).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(SolveDirect, SparsePathMatchesDenseOracle)
{
    const Eigen::Index n = 2 * dense_solver_limit;
    auto s = laplacian(n, 99);
    auto r = solve_direct(s);
    EXPECT_LE(r.relative_residual, 1e-11);
    EXPECT_TRUE(r.pivots_healthy);
    Eigen::MatrixXd A(s.matrix());
    Eigen::VectorXd oracle = A.llt().solve(s.rhs);
    EXPECT_LT((r.solution - oracle).cwiseAbs().maxCoeff(), 1e-10 * oracle.cwiseAbs().maxCoeff());
}

TEST(SolveDirect, SingularMatrixRaises)
{
    sparse_system s(3);
    s.add(0, 0, 1.0);
    s.add(0, 1, 1.0);
    s.add(1, 0, 1.0);
    s.add(1, 1, 1.0);
    s.add(2, 2, 1.0);
    s.rhs << 1.0, 1.0, 1.0;
    EXPECT_EQ(kind_of([&] { solve_direct(s); }), error_kind::singular_system);

    auto big = laplacian(2 * dense_solver_limit, 5);
    big.add(0, 0, -1.0); // pure Neumann: constant null vector
    big.add(big.n - 1, big.n - 1, -1.0);
    EXPECT_EQ(kind_of([&] { solve_direct(big); }), error_kind::singular_system);
}

TEST(SolveDirect, RejectsBadInput)
{
    EXPECT_EQ(kind_of([] { solve_direct(sparse_system(0)); }), error_kind::invalid_argument);

    sparse_system s(2);
    s.add(0, 0, 1.0);
    s.add(1, 1, 1.0);
    s.rhs[1] = std::numeric_limits<double>::quiet_NaN();
    EXPECT_EQ(kind_of([&] { solve_direct(s); }), error_kind::invalid_argument);

    sparse_system t(2);
    t.add(0, 0, std::numeric_limits<double>::infinity());
    t.add(1, 1, 1.0);
    EXPECT_EQ(kind_of([&] { solve_direct(t); }), error_kind::invalid_argument);
}

TEST(SolveDirect, ResidualAboveToleranceRaisesAccuracy)
{
    auto s = random_spd(30, 7);
    EXPECT_EQ(kind_of([&] { solve_direct(s, 1e-300); }), error_kind::accuracy);
}

TEST(SolveDirect, Deterministic)
{
    for (Eigen::Index n : {Eigen::Index(40), 3 * dense_solver_limit})
    {
        auto s = n < dense_solver_limit ? random_spd(n, 3) : laplacian(n, 3);
        auto a = solve_direct(s).solution;
        auto b = solve_direct(s).solution;
        ASSERT_EQ(a.size(), b.size());
        EXPECT_EQ(std::memcmp(a.data(), b.data(), sizeof(double) * a.size()), 0);
    }
}

TEST(Asymmetry, MeasuresRelativeSkew)
{
    sparse_system s(2);
    s.add(0, 0, 4.0);
    s.add(0, 1, 1.0);
    s.add(1, 0, 1.0);
    s.add(1, 1, 4.0);
    EXPECT_EQ(relative_asymmetry(s.matrix()), 0.0);
    s.add(0, 1, 0.4);
    EXPECT_NEAR(relative_asymmetry(s.matrix()), 0.1, 1e-15);
}
