#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <mutex>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hybridfe/error.hpp"
#include "hybridfe/mesh.hpp"
#include "hybridfe/quadrature.hpp"

namespace hybridfe
{

inline constexpr int max_space_degree = 4;

enum class space_kind
{
    scalar_triangle,   // P_k(K)
    scalar_edge,       // P_k(F)
    vector_pk,         // [P_k(K)]^2
    raviart_thomas     // [P_k(K)]^2 + x P_k(K)
};

struct local_space
{
    space_kind kind = space_kind::scalar_triangle;
    int degree = 0;

    static local_space scalar(int k) { return {space_kind::scalar_triangle, k}; }
    static local_space edge(int k) { return {space_kind::scalar_edge, k}; }
    static local_space vector(int k) { return {space_kind::vector_pk, k}; }
    static local_space rt(int k) { return {space_kind::raviart_thomas, k}; }

    bool is_vector() const
    {
        return kind == space_kind::vector_pk || kind == space_kind::raviart_thomas;
    }

    int dimension() const
    {
        const int k = degree;
        switch (kind)
        {
            case space_kind::scalar_triangle: return (k + 1) * (k + 2) / 2;
            case space_kind::scalar_edge: return k + 1;
            case space_kind::vector_pk: return (k + 1) * (k + 2);
            case space_kind::raviart_thomas: return (k + 1) * (k + 2) + (k + 1);
        }
        return 0;
    }

    /// Highest polynomial degree of any basis function.
    int max_degree() const { return kind == space_kind::raviart_thomas ? degree + 1 : degree; }

    std::string name() const
    {
        switch (kind)
        {
            case space_kind::scalar_triangle: return "P" + std::to_string(degree);
            case space_kind::scalar_edge: return "P" + std::to_string(degree) + "(F)";
            case space_kind::vector_pk: return "[P" + std::to_string(degree) + "]^2";
            case space_kind::raviart_thomas: return "RT" + std::to_string(degree);
        }
        return "?";
    }

    friend bool operator==(const local_space&, const local_space&) = default;
};

inline void
check_degree(const local_space& s)
{
    if (s.degree < 0 || s.degree > max_space_degree)
        raise(error_kind::unsupported_degree,
              "polynomial degree " + std::to_string(s.degree) + " outside [0, " +
                  std::to_string(max_space_degree) + "]");
}

/// Quadrature order used when none is requested: 2k+3, clipped to the table.
inline int
default_quadrature_order(int k)
{
    return std::min(2 * k + 3, max_quadrature_order);
}

/// Geometry needed to evaluate local bases on a physical triangle.
struct element_geometry
{
    affine_map map;
    point centroid;
    double h = 1.0;

    double measure() const { return 0.5 * std::abs(map.determinant); }

    static element_geometry of(const mesh& m, int k)
    {
        return {m.map(k), m.centroid(k), m.diameter(k)};
    }

    static element_geometry reference()
    {
        element_geometry g;
        g.map.element = -1;
        g.map.jacobian.setIdentity();
        g.map.translation.setZero();
        g.map.determinant = 1.0;
        g.map.inverse_transpose.setIdentity();
        g.centroid = point(1.0 / 3.0, 1.0 / 3.0);
        g.h = std::sqrt(2.0);
        return g;
    }
};

namespace detail
{

/// Centred monomials (xh-1/3)^i (yh-1/3)^j ordered by total degree; the
/// coefficient matrix maps them to an L2(reference)-orthonormal basis, so
/// P_j is spanned by the leading dim(P_j) functions of P_k.
struct scalar_table
{
    int degree;
    std::vector<std::array<int, 2>> exponents;
    Eigen::MatrixXd coeffs;
};

inline std::vector<std::array<int, 2>>
monomial_exponents(int k)
{
    std::vector<std::array<int, 2>> e;
    for (int d = 0; d <= k; d++)
        for (int j = 0; j <= d; j++)
            e.push_back({d - j, j});
    return e;
}

inline void
eval_monomials(const std::vector<std::array<int, 2>>& exps, const point& xh, Eigen::VectorXd& m,
               Eigen::VectorXd* dx = nullptr, Eigen::VectorXd* dy = nullptr)
{
    const double X = xh.x() - 1.0 / 3.0, Y = xh.y() - 1.0 / 3.0;
    const int n = static_cast<int>(exps.size());
    m.resize(n);
    if (dx)
        dx->resize(n);
    if (dy)
        dy->resize(n);
    for (int i = 0; i < n; i++)
    {
        int a = exps[i][0], b = exps[i][1];
        double pa = std::pow(X, a), pb = std::pow(Y, b);
        m[i] = pa * pb;
        if (dx)
            (*dx)[i] = a > 0 ? a * std::pow(X, a - 1) * pb : 0.0;
        if (dy)
            (*dy)[i] = b > 0 ? b * pa * std::pow(Y, b - 1) : 0.0;
    }
}

inline const scalar_table&
scalar_basis_table(int k)
{
    static std::array<scalar_table, max_space_degree + 1> tables;
    static std::once_flag once;
    std::call_once(once, [] {
        for (int deg = 0; deg <= max_space_degree; deg++)
        {
            auto& t = tables[deg];
            t.degree = deg;
            t.exponents = monomial_exponents(deg);
            const int n = static_cast<int>(t.exponents.size());
            auto qr = quadrature(ref_shape::triangle, 2 * deg);
            Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(n, n);
            Eigen::VectorXd m;
            for (std::size_t q = 0; q < qr.size(); q++)
            {
                eval_monomials(t.exponents, qr.points[q], m);
                gram += qr.weights[q] * m * m.transpose();
            }
            Eigen::LLT<Eigen::MatrixXd> llt(gram);
            Eigen::MatrixXd L = llt.matrixL();
            t.coeffs = L.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(n, n));
        }
    });
    return tables[k];
}

} // namespace detail

/// Values and physical gradients of the orthonormal P_k basis at a reference point.
struct scalar_values
{
    Eigen::VectorXd values;
    Eigen::MatrixX2d grads;
};

inline scalar_values
eval_scalar(int k, const element_geometry& g, const point& xhat)
{
    const auto& t = detail::scalar_basis_table(k);
    Eigen::VectorXd m, dx, dy;
    detail::eval_monomials(t.exponents, xhat, m, &dx, &dy);
    scalar_values out;
    out.values = t.coeffs * m;
    Eigen::MatrixX2d gref(m.size(), 2);
    gref.col(0) = t.coeffs * dx;
    gref.col(1) = t.coeffs * dy;
    // grad_x = B^{-T} grad_xhat, applied row-wise
    out.grads = gref * g.map.inverse_transpose.transpose();
    return out;
}

inline Eigen::VectorXd
eval_scalar_values(int k, const point& xhat)
{
    const auto& t = detail::scalar_basis_table(k);
    Eigen::VectorXd m;
    detail::eval_monomials(t.exponents, xhat, m);
    return t.coeffs * m;
}

/// Orthonormal Legendre basis on the unit interval.
inline Eigen::VectorXd
eval_edge(int k, double t)
{
    Eigen::VectorXd out(k + 1);
    const double s = 2.0 * t - 1.0;
    double p0 = 1.0, p1 = s;
    for (int n = 0; n <= k; n++)
    {
        double pn;
        if (n == 0)
            pn = 1.0;
        else if (n == 1)
            pn = s;
        else
        {
            pn = ((2.0 * n - 1.0) * s * p1 - (n - 1.0) * p0) / n;
            p0 = p1;
            p1 = pn;
        }
        out[n] = std::sqrt(2.0 * n + 1.0) * pn;
    }
    return out;
}

/// Values (rows = basis functions) and divergences of a vector space.
struct vector_values
{
    Eigen::MatrixX2d values;
    Eigen::VectorXd divs;
};

inline vector_values
eval_vector(const local_space& s, const element_geometry& g, const point& xhat)
{
    const int k = s.degree;
    auto sc = eval_scalar(k, g, xhat);
    const int ns = static_cast<int>(sc.values.size());
    const int dim = s.dimension();
    vector_values out;
    out.values = Eigen::MatrixX2d::Zero(dim, 2);
    out.divs.resize(dim);
    for (int i = 0; i < ns; i++)
    {
        out.values(i, 0) = sc.values[i];
        out.divs[i] = sc.grads(i, 0);
        out.values(ns + i, 1) = sc.values[i];
        out.divs[ns + i] = sc.grads(i, 1);
    }
    if (s.kind == space_kind::raviart_thomas)
    {
        // xi * xi1^(k-j) xi2^j with xi = (x - x_c)/h; div = (k+2)/h * xi1^(k-j) xi2^j
        point xi = (g.map.to_physical(xhat) - g.centroid) / g.h;
        for (int j = 0; j <= k; j++)
        {
            double r = std::pow(xi.x(), k - j) * std::pow(xi.y(), j);
            int row = 2 * ns + j;
            out.values(row, 0) = xi.x() * r;
            out.values(row, 1) = xi.y() * r;
            out.divs[row] = (k + 2.0) / g.h * r;
        }
    }
    return out;
}

/// Table of basis values at reference points: scalar spaces fill `x` only,
/// vector spaces store the two components in `x` and `y` (basis x point).
struct basis_table
{
    Eigen::MatrixXd x;
    Eigen::MatrixXd y;
};

inline basis_table
eval_basis(const local_space& s, const std::vector<point>& points)
{
    check_degree(s);
    const int dim = s.dimension();
    const int np = static_cast<int>(points.size());
    basis_table t;
    t.x = Eigen::MatrixXd::Zero(dim, np);
    if (s.is_vector())
        t.y = Eigen::MatrixXd::Zero(dim, np);
    auto g = element_geometry::reference();
    for (int p = 0; p < np; p++)
    {
        switch (s.kind)
        {
            case space_kind::scalar_edge: t.x.col(p) = eval_edge(s.degree, points[p].x()); break;
            case space_kind::scalar_triangle:
                t.x.col(p) = eval_scalar_values(s.degree, points[p]);
                break;
            default:
            {
                auto v = eval_vector(s, g, points[p]);
                t.x.col(p) = v.values.col(0);
                t.y.col(p) = v.values.col(1);
            }
        }
    }
    return t;
}

/// A quadrature point on local face i of an element, parametrised in the
/// face's canonical orientation so both neighbours see identical points.
struct face_point
{
    double t;
    point x;
    point xhat;
    double weight;   // includes the face length
};

struct face_rule
{
    int face = -1;
    int sign = 0;
    double length = 0.0;
    point normal;    // outward for the element
    std::vector<face_point> points;
};

inline face_rule
element_face_rule(const mesh& m, int k, int local, int order, const affine_map& map)
{
    face_rule fr;
    fr.face = m.element_faces(k)[local];
    fr.sign = m.element_signs(k)[local];
    fr.length = m.face_length(fr.face);
    fr.normal = fr.sign * m.face_normal(fr.face);
    auto qr = quadrature(ref_shape::edge, order);
    for (std::size_t q = 0; q < qr.size(); q++)
    {
        double t = qr.points[q].x();
        point x = m.face_point(fr.face, t);
        fr.points.push_back({t, x, map.to_reference(x), qr.weights[q] * fr.length});
    }
    return fr;
}

inline std::array<face_rule, 3>
element_face_rules(const mesh& m, int k, int order)
{
    auto map = m.map(k);
    return {element_face_rule(m, k, 0, order, map), element_face_rule(m, k, 1, order, map),
            element_face_rule(m, k, 2, order, map)};
}

/// Physical quadrature points of element k.
struct cell_point
{
    point x;
    point xhat;
    double weight;
};

inline std::vector<cell_point>
element_rule(const element_geometry& g, int order)
{
    auto qr = quadrature(ref_shape::triangle, order);
    std::vector<cell_point> out;
    out.reserve(qr.size());
    const double J = std::abs(g.map.determinant);
    for (std::size_t q = 0; q < qr.size(); q++)
        out.push_back({g.map.to_physical(qr.points[q]), qr.points[q], qr.weights[q] * J});
    return out;
}

using scalar_function = std::function<double(const point&)>;
using vector_function = std::function<Eigen::Vector2d(const point&)>;

namespace detail
{

inline Eigen::VectorXd
solve_gram(const Eigen::MatrixXd& gram, const Eigen::VectorXd& rhs)
{
    Eigen::LLT<Eigen::MatrixXd> llt(gram);
    if (llt.info() != Eigen::Success)
        raise(error_kind::singular_gram, "local Gram matrix is not positive definite");
    return llt.solve(rhs);
}

} // namespace detail

/// L2 projection of a scalar field onto P_k(K).
inline Eigen::VectorXd
l2_project(const local_space& s, const element_geometry& g, const scalar_function& f,
           int order = -1)
{
    check_degree(s);
    if (s.kind != space_kind::scalar_triangle)
        raise(error_kind::invalid_argument, "scalar projection needs a triangle P_k space");
    if (order < 0)
        order = default_quadrature_order(s.degree);
    order = std::max(order, 2 * s.degree + 2);
    const int n = s.dimension();
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(n, n);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
    for (const auto& qp : element_rule(g, std::min(order, max_quadrature_order)))
    {
        Eigen::VectorXd phi = eval_scalar_values(s.degree, qp.xhat);
        gram += qp.weight * phi * phi.transpose();
        rhs += qp.weight * f(qp.x) * phi;
    }
    return detail::solve_gram(gram, rhs);
}

/// L2 projection of a vector field onto [P_k]^2 or RT_k on K.
inline Eigen::VectorXd
l2_project(const local_space& s, const element_geometry& g, const vector_function& f,
           int order = -1)
{
    check_degree(s);
    if (!s.is_vector())
        raise(error_kind::invalid_argument, "vector projection needs a vector space");
    if (order < 0)
        order = default_quadrature_order(s.max_degree());
    order = std::max(order, 2 * s.max_degree() + 2);
    const int n = s.dimension();
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(n, n);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
    for (const auto& qp : element_rule(g, std::min(order, max_quadrature_order)))
    {
        auto v = eval_vector(s, g, qp.xhat);
        gram += qp.weight * v.values * v.values.transpose();
        rhs += qp.weight * v.values * f(qp.x);
    }
    return detail::solve_gram(gram, rhs);
}

/// L2 projection onto P_k of the segment a->b (parameter t in [0,1] from a).
inline Eigen::VectorXd
l2_project_edge(int k, const point& a, const point& b, const scalar_function& f, int order = -1)
{
    check_degree(local_space::edge(k));
    if (order < 0)
        order = default_quadrature_order(k);
    order = std::min(std::max(order, 2 * k + 2), max_quadrature_order);
    const double len = (b - a).norm();
    if (!(len > 0.0))
        raise(error_kind::singular_gram, "degenerate edge");
    auto qr = quadrature(ref_shape::edge, order);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(k + 1);
    for (std::size_t q = 0; q < qr.size(); q++)
    {
        double t = qr.points[q].x();
        rhs += qr.weights[q] * f(a + t * (b - a)) * eval_edge(k, t);
    }
    // basis is orthonormal in t, so the Gram matrix is the identity
    return rhs;
}

/// Projection onto M(F) of a mesh face, in canonical orientation.
inline Eigen::VectorXd
l2_project_face(int k, const mesh& m, int f, const scalar_function& fn, int order = -1)
{
    return l2_project_edge(k, m.vertex(m.face(f).vertices[0]), m.vertex(m.face(f).vertices[1]), fn,
                           order);
}

} // namespace hybridfe
