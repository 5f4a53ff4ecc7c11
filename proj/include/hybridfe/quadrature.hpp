#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hybridfe/error.hpp"

namespace hybridfe
{

enum class ref_shape
{
    triangle,
    edge
};

/// Reference-element quadrature. Triangle rules live on {(0,0),(1,0),(0,1)}
/// (weights sum to 1/2); edge rules live on [0,1] with the coordinate stored
/// in points[i].x() (weights sum to 1).
struct quad_rule
{
    ref_shape shape;
    int order;
    std::vector<Eigen::Vector2d> points;
    std::vector<double> weights;

    std::size_t size() const { return weights.size(); }
};

inline constexpr int max_quadrature_order = 10;

namespace detail
{

/// Gauss-Legendre nodes and weights on [0,1].
inline void
gauss_legendre_unit(int n, std::vector<double>& x, std::vector<double>& w)
{
    x.assign(n, 0.0);
    w.assign(n, 0.0);
    for (int i = 0; i < n; i++)
    {
        // Chebyshev initial guess on [-1,1], Newton on P_n
        double t = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
        double dp = 0.0;
        for (int it = 0; it < 100; it++)
        {
            double p0 = 1.0, p1 = t;
            for (int k = 2; k <= n; k++)
            {
                double pk = ((2.0 * k - 1.0) * t * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = pk;
            }
            if (n == 1)
            {
                p1 = t;
                p0 = 1.0;
            }
            dp = n * (t * p1 - p0) / (t * t - 1.0);
            double dt = p1 / dp;
            t -= dt;
            if (std::abs(dt) < 1e-16)
                break;
        }
        // recompute derivative at the converged node
        double p0 = 1.0, p1 = t;
        for (int k = 2; k <= n; k++)
        {
            double pk = ((2.0 * k - 1.0) * t * p1 - (k - 1.0) * p0) / k;
            p0 = p1;
            p1 = pk;
        }
        if (n == 1)
        {
            p1 = t;
            p0 = 1.0;
        }
        dp = n * (t * p1 - p0) / (t * t - 1.0);
        x[n - 1 - i] = 0.5 * (t + 1.0);
        w[n - 1 - i] = 1.0 / ((1.0 - t * t) * dp * dp);
    }
}

} // namespace detail

/// Quadrature exact for polynomials of total degree <= order.
inline quad_rule
quadrature(ref_shape shape, int order)
{
    if (order < 0)
        raise(error_kind::invalid_argument, "quadrature order must be non-negative");
    if (order > max_quadrature_order)
        raise(error_kind::unsupported_order,
              "quadrature order " + std::to_string(order) + " exceeds " +
                  std::to_string(max_quadrature_order));

    quad_rule qr{shape, order, {}, {}};

    if (shape == ref_shape::edge)
    {
        int n = order / 2 + 1;
        std::vector<double> x, w;
        detail::gauss_legendre_unit(n, x, w);
        for (int i = 0; i < n; i++)
        {
            qr.points.emplace_back(x[i], 0.0);
            qr.weights.push_back(w[i]);
        }
        return qr;
    }

    if (order <= 1)
    {
        qr.points.emplace_back(1.0 / 3.0, 1.0 / 3.0);
        qr.weights.push_back(0.5);
        return qr;
    }

    // Collapsed tensor rule: (x,y) = (u, (1-u) v), Jacobian (1-u).
    int nu = (order + 2) / 2 + 1;
    int nv = (order + 1) / 2 + 1;
    std::vector<double> xu, wu, xv, wv;
    detail::gauss_legendre_unit(nu, xu, wu);
    detail::gauss_legendre_unit(nv, xv, wv);
    for (int i = 0; i < nu; i++)
        for (int j = 0; j < nv; j++)
        {
            double u = xu[i], v = xv[j];
            qr.points.emplace_back(u, (1.0 - u) * v);
            qr.weights.push_back(wu[i] * wv[j] * (1.0 - u));
        }
    return qr;
}

} // namespace hybridfe
