#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include "hybridfe/error.hpp"

namespace hybridfe
{

using sparse_matrix = Eigen::SparseMatrix<double>;

/// n x n system accumulated from triplets; duplicates are summed in insertion order.
struct sparse_system
{
    Eigen::Index n = 0;
    std::vector<Eigen::Triplet<double>> triplets;
    Eigen::VectorXd rhs;

    explicit sparse_system(Eigen::Index size = 0) : n(size), rhs(Eigen::VectorXd::Zero(size)) {}

    void add(Eigen::Index i, Eigen::Index j, double v)
    {
        if (v != 0.0)
            triplets.emplace_back(i, j, v);
    }

    template <typename Derived>
    void add_block(const std::vector<Eigen::Index>& rows, const std::vector<Eigen::Index>& cols,
                   const Eigen::MatrixBase<Derived>& block)
    {
        for (std::size_t i = 0; i < rows.size(); i++)
        {
            if (rows[i] < 0)
                continue;
            for (std::size_t j = 0; j < cols.size(); j++)
                if (cols[j] >= 0)
                    add(rows[i], cols[j], block(i, j));
        }
    }

    sparse_matrix matrix() const
    {
        sparse_matrix A(n, n);
        A.setFromTriplets(triplets.begin(), triplets.end());
        A.makeCompressed();
        return A;
    }
};

/// max |A - A^T| relative to max |A|.
inline double
relative_asymmetry(const sparse_matrix& A)
{
    sparse_matrix At = A.transpose();
    sparse_matrix D = A - At;
    double amax = 0.0, dmax = 0.0;
    for (int k = 0; k < A.outerSize(); ++k)
        for (sparse_matrix::InnerIterator it(A, k); it; ++it)
            amax = std::max(amax, std::abs(it.value()));
    for (int k = 0; k < D.outerSize(); ++k)
        for (sparse_matrix::InnerIterator it(D, k); it; ++it)
            dmax = std::max(dmax, std::abs(it.value()));
    return amax > 0.0 ? dmax / amax : 0.0;
}

struct solve_report
{
    Eigen::VectorXd solution;
    double relative_residual = 0.0;
    double pivot_ratio = 1.0;   // min |pivot| / max |pivot|
    bool pivots_healthy = true;
};

inline constexpr Eigen::Index dense_solver_limit = 500;
inline constexpr double singular_pivot_ratio = 1e-13;

namespace detail
{

/// SparseLU exposing the diagonal of U (stored with the supernodes of L).
class pivot_lu : public Eigen::SparseLU<sparse_matrix, Eigen::COLAMDOrdering<int>>
{
public:
    double pivot_ratio() const
    {
        double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
        for (Eigen::Index j = 0; j < this->cols(); ++j)
        {
            double d = 0.0;
            for (SCMatrix::InnerIterator it(m_Lstore, j); it; ++it)
                if (it.row() == j)
                {
                    d = std::abs(it.value());
                    break;
                }
            lo = std::min(lo, d);
            hi = std::max(hi, d);
        }
        return hi > 0.0 ? lo / hi : 0.0;
    }
};

} // namespace detail

/// Direct solve: dense full-pivoting LU below `dense_solver_limit`, sparse
/// LU with COLAMD ordering above, each followed by one refinement step.
/// Both orderings are deterministic.
inline solve_report
solve_direct(const sparse_system& sys, double tol = 1e-11)
{
    if (sys.n < 1)
        raise(error_kind::invalid_argument, "system dimension must be >= 1");
    if (sys.rhs.size() != sys.n || !sys.rhs.allFinite())
        raise(error_kind::invalid_argument, "right-hand side must be finite and sized n");
    for (const auto& t : sys.triplets)
        if (!std::isfinite(t.value()))
            raise(error_kind::invalid_argument, "matrix has non-finite entries");

    const sparse_matrix A = sys.matrix();
    solve_report rep;

    if (sys.n < dense_solver_limit)
    {
        Eigen::MatrixXd dense(A);
        Eigen::FullPivLU<Eigen::MatrixXd> lu(dense);
        const auto& LU = lu.matrixLU();
        double hi = 0.0, lo = std::numeric_limits<double>::infinity();
        for (Eigen::Index i = 0; i < sys.n; i++)
        {
            hi = std::max(hi, std::abs(LU(i, i)));
            lo = std::min(lo, std::abs(LU(i, i)));
        }
        rep.pivot_ratio = hi > 0.0 ? lo / hi : 0.0;
        rep.pivots_healthy = rep.pivot_ratio > singular_pivot_ratio;
        if (!rep.pivots_healthy)
            raise(error_kind::singular_system,
                  "matrix is singular to working precision (pivot ratio " +
                      std::to_string(rep.pivot_ratio) + ")");
        rep.solution = lu.solve(sys.rhs);
        rep.solution += lu.solve(Eigen::VectorXd(sys.rhs - A * rep.solution));
    }
    else
    {
        detail::pivot_lu lu;
        lu.analyzePattern(A);
        lu.factorize(A);
        if (lu.info() != Eigen::Success)
            raise(error_kind::singular_system, "sparse LU failed: " + lu.lastErrorMessage());
        rep.pivot_ratio = lu.pivot_ratio();
        rep.pivots_healthy = rep.pivot_ratio > singular_pivot_ratio;
        if (!rep.pivots_healthy)
            raise(error_kind::singular_system,
                  "matrix is singular to working precision (pivot ratio " +
                      std::to_string(rep.pivot_ratio) + ")");
        rep.solution = lu.solve(sys.rhs);
        rep.solution += lu.solve(Eigen::VectorXd(sys.rhs - A * rep.solution));
    }

    double bnorm = std::max(sys.rhs.norm(), std::numeric_limits<double>::epsilon());
    rep.relative_residual = (A * rep.solution - sys.rhs).norm() / bnorm;
    if (!(rep.relative_residual <= tol))
        raise(error_kind::accuracy, "relative residual " + std::to_string(rep.relative_residual) +
                                        " above tolerance");
    return rep;
}

} // namespace hybridfe
