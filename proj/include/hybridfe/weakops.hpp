#pragma once

#include <algorithm>

#include <Eigen/Dense>

#include "hybridfe/fespace.hpp"
#include "hybridfe/fields.hpp"
#include "hybridfe/mesh.hpp"

// Element-local weak differential operators. All of them are defined by
// duality against a local test space and solved with the local Gram matrix:
//
//   weak gradient    (G, v)_K   = -(w, div v)_K + <what, v.n>_dK      v in V(K)
//   weak flux (F_a)  (Q, v)_K   = -(a G, v)_K
//   weak flux (F_c)  (c Q, v)_K = -(G, v)_K
//   weak divergence  (D, s)_K   = -(E, grad s)_K + <Ehat.n, s>_dK     s in Z(K)
//   lifting          (Phi, v)_K = <mu, v.n>_dK
//
// The diffusion chapter writes the gradient as -(G,v) = (w, div v) - <what, v.n>;
// that is the same map.

namespace hybridfe::weakops
{

namespace detail
{

inline int
pick_order(int order, int degree)
{
    return order >= 0 ? std::min(order, max_quadrature_order) : default_quadrature_order(degree);
}

inline Eigen::MatrixXd
vector_gram(const local_space& V, const element_geometry& g, int order)
{
    const int n = V.dimension();
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(n, n);
    for (const auto& qp : element_rule(g, order))
    {
        auto v = eval_vector(V, g, qp.xhat);
        gram += qp.weight * v.values * v.values.transpose();
    }
    return gram;
}

inline Eigen::VectorXd
gram_solve(const Eigen::MatrixXd& gram, const Eigen::VectorXd& rhs)
{
    Eigen::LLT<Eigen::MatrixXd> llt(gram);
    if (llt.info() != Eigen::Success)
        raise(error_kind::singular_gram, "local Gram matrix is not positive definite");
    return llt.solve(rhs);
}

/// <mu, v.n>_dK for every basis function v of V.
inline Eigen::VectorXd
boundary_moment(const mesh& m, int k, const local_space& V, const element_geometry& g,
                const boundary_data& mu, int order)
{
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(V.dimension());
    auto rules = element_face_rules(m, k, order);
    for (int i = 0; i < 3; i++)
        for (const auto& fp : rules[i].points)
        {
            double muv = mu.value(i, fp.t);
            auto v = eval_vector(V, g, fp.xhat);
            rhs += fp.weight * muv * (v.values * rules[i].normal);
        }
    return rhs;
}

} // namespace detail

/// Discrete weak gradient of (w, what) on element k, coefficients in V(K).
/// `w` holds P_{w_degree}(K) coefficients; `what` carries the trace on the
/// three local faces.
inline Eigen::VectorXd
weak_gradient(const mesh& m, int k, const local_space& V, int w_degree, const Eigen::VectorXd& w,
              const boundary_data& what, int order = -1)
{
    check_degree(V);
    const auto g = element_geometry::of(m, k);
    order = detail::pick_order(order, std::max({V.max_degree(), w_degree, what.degree}));
    Eigen::VectorXd rhs = detail::boundary_moment(m, k, V, g, what, order);
    for (const auto& qp : element_rule(g, order))
    {
        double wv = eval_scalar_values(w_degree, qp.xhat).dot(w);
        auto v = eval_vector(V, g, qp.xhat);
        rhs -= qp.weight * wv * v.divs;
    }
    return detail::gram_solve(detail::vector_gram(V, g, order), rhs);
}

inline Eigen::VectorXd
weak_gradient(const weak_pair& pair, const local_space& V, const mesh& m, int k, int order = -1)
{
    return weak_gradient(m, k, V, pair.interior.space.degree, pair.interior.blocks[k],
                         gather(pair.trace, m, k), order);
}

enum class flux_mode
{
    fc,
    fa
};

/// Weak flux Q from a weak gradient G (both in V(K)).
inline Eigen::VectorXd
weak_flux(const mesh& m, int k, const local_space& V, const Eigen::VectorXd& G,
          const coefficient& coef, flux_mode mode, int order = -1)
{
    const auto g = element_geometry::of(m, k);
    if (coef.elementwise_constant)
    {
        // alpha*I commutes with the projection: both modes give -alpha G exactly
        const point xc = m.centroid(k);
        Eigen::Matrix2d a = coef.a_at(xc);
        check_positive(a, xc);
        if (a(0, 1) == 0.0 && a(1, 0) == 0.0 && a(0, 0) == a(1, 1))
            return -a(0, 0) * G;
    }
    order = detail::pick_order(order, V.max_degree());
    const int n = V.dimension();
    Eigen::MatrixXd mass = Eigen::MatrixXd::Zero(n, n);
    Eigen::MatrixXd weighted = Eigen::MatrixXd::Zero(n, n);
    for (const auto& qp : element_rule(g, order))
    {
        Eigen::Matrix2d a = coef.a_at(qp.x);
        check_positive(a, qp.x);
        auto v = eval_vector(V, g, qp.xhat);
        mass += qp.weight * v.values * v.values.transpose();
        Eigen::Matrix2d w = mode == flux_mode::fa ? a : Eigen::Matrix2d(a.inverse());
        weighted += qp.weight * v.values * w * v.values.transpose();
    }
    if (mode == flux_mode::fa)
        return -detail::gram_solve(mass, weighted * G);
    return -detail::gram_solve(weighted, mass * G);
}

/// Weak divergence of (E, Ehat.n) into P_{z_degree}(K). `E` is in V(K);
/// `flux` holds the normal trace with the element's outward sign applied.
inline Eigen::VectorXd
weak_divergence(const mesh& m, int k, const local_space& V, const Eigen::VectorXd& E,
                const boundary_data& flux, int z_degree, int order = -1)
{
    check_degree(local_space::scalar(z_degree));
    const auto g = element_geometry::of(m, k);
    order = detail::pick_order(order, std::max({V.max_degree(), z_degree, flux.degree}));
    const int nz = local_space::scalar(z_degree).dimension();
    Eigen::MatrixXd mass = Eigen::MatrixXd::Zero(nz, nz);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(nz);
    for (const auto& qp : element_rule(g, order))
    {
        auto s = eval_scalar(z_degree, g, qp.xhat);
        Eigen::Vector2d e = eval_vector(V, g, qp.xhat).values.transpose() * E;
        mass += qp.weight * s.values * s.values.transpose();
        rhs -= qp.weight * (s.grads * e);
    }
    auto rules = element_face_rules(m, k, order);
    for (int i = 0; i < 3; i++)
        for (const auto& fp : rules[i].points)
            rhs += fp.weight * flux.value(i, fp.t) * eval_scalar_values(z_degree, fp.xhat);
    return detail::gram_solve(mass, rhs);
}

/// Lifting of boundary data into V(K): (Phi(mu), v)_K = <mu, v.n>_dK.
inline Eigen::VectorXd
lifting_phi(const mesh& m, int k, const local_space& V, const boundary_data& mu, int order = -1)
{
    check_degree(V);
    const auto g = element_geometry::of(m, k);
    order = detail::pick_order(order, std::max(V.max_degree(), mu.degree));
    Eigen::VectorXd rhs = detail::boundary_moment(m, k, V, g, mu, order);
    return detail::gram_solve(detail::vector_gram(V, g, order), rhs);
}

} // namespace hybridfe::weakops
