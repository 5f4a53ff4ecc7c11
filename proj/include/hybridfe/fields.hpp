#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hybridfe/fespace.hpp"
#include "hybridfe/mesh.hpp"

namespace hybridfe
{

/// Diffusion tensor a(x) (symmetric positive definite); c(x) = a(x)^{-1}.
struct coefficient
{
    std::function<Eigen::Matrix2d(const point&)> a;
    bool elementwise_constant = false;

    Eigen::Matrix2d a_at(const point& x) const { return a(x); }
    Eigen::Matrix2d c_at(const point& x) const { return a(x).inverse(); }

    static coefficient constant(double value)
    {
        return {[value](const point&) -> Eigen::Matrix2d {
                    return value * Eigen::Matrix2d::Identity();
                },
                true};
    }

    static coefficient scalar(std::function<double(const point&)> fn, bool piecewise = false)
    {
        return {[fn = std::move(fn)](const point& x) -> Eigen::Matrix2d {
                    return fn(x) * Eigen::Matrix2d::Identity();
                },
                piecewise};
    }
};

inline void
check_positive(const Eigen::Matrix2d& a, const point& x)
{
    double sym = std::abs(a(0, 1) - a(1, 0));
    double tr = a.trace(), det = a.determinant();
    if (!(sym <= 1e-12 * std::max(1.0, std::abs(tr))) || !(tr > 0.0) || !(det > 0.0))
        raise(error_kind::coefficient, "coefficient not symmetric positive definite at (" +
                                           std::to_string(x.x()) + ", " + std::to_string(x.y()) +
                                           ")");
}

/// Element-wise coefficient blocks in a local space; no inter-element continuity.
struct broken_field
{
    local_space space;
    std::vector<Eigen::VectorXd> blocks;

    static broken_field zeros(const local_space& s, std::size_t n_elements)
    {
        return {s, std::vector<Eigen::VectorXd>(n_elements, Eigen::VectorXd::Zero(s.dimension()))};
    }

    std::size_t size() const { return blocks.size(); }

    double value(const mesh&, int k, const point& xhat) const
    {
        return eval_scalar_values(space.degree, xhat).dot(blocks[k]);
    }

    Eigen::Vector2d vector_value(const mesh& m, int k, const point& xhat) const
    {
        auto g = element_geometry::of(m, k);
        return eval_vector(space, g, xhat).values.transpose() * blocks[k];
    }

    Eigen::VectorXd flatten() const
    {
        Eigen::Index n = 0;
        for (const auto& b : blocks)
            n += b.size();
        Eigen::VectorXd out(n);
        Eigen::Index o = 0;
        for (const auto& b : blocks)
        {
            out.segment(o, b.size()) = b;
            o += b.size();
        }
        return out;
    }
};

enum class trace_kind
{
    scalar,        // single-valued face scalar (uhat, zhat)
    normal_flux    // q.n in the face's canonical orientation; flips with the element sign
};

enum class boundary_tag
{
    free,
    zero_on_boundary,
    projected_dirichlet
};

/// Face-wise coefficient blocks in P_k(F), canonical orientation.
struct skeleton_function
{
    int degree = 0;
    trace_kind kind = trace_kind::scalar;
    boundary_tag tag = boundary_tag::free;
    std::vector<Eigen::VectorXd> blocks;

    static skeleton_function zeros(int degree, std::size_t n_faces,
                                   trace_kind kind = trace_kind::scalar,
                                   boundary_tag tag = boundary_tag::free)
    {
        return {degree, kind, tag,
                std::vector<Eigen::VectorXd>(n_faces, Eigen::VectorXd::Zero(degree + 1))};
    }

    double value(int f, double t) const { return eval_edge(degree, t).dot(blocks[f]); }

    Eigen::VectorXd flatten() const
    {
        Eigen::VectorXd out(blocks.size() * (degree + 1));
        for (std::size_t f = 0; f < blocks.size(); f++)
            out.segment(f * (degree + 1), degree + 1) = blocks[f];
        return out;
    }
};

/// Face data seen from one element: P_k(F) coefficients per local face in
/// canonical parametrisation, with normal-flux signs already applied.
struct boundary_data
{
    int degree = 0;
    std::array<Eigen::VectorXd, 3> faces;

    static boundary_data zeros(int degree)
    {
        boundary_data b;
        b.degree = degree;
        for (auto& f : b.faces)
            f = Eigen::VectorXd::Zero(degree + 1);
        return b;
    }

    double value(int local, double t) const { return eval_edge(degree, t).dot(faces[local]); }
};

inline boundary_data
gather(const skeleton_function& s, const mesh& m, int k)
{
    boundary_data b;
    b.degree = s.degree;
    for (int i = 0; i < 3; i++)
    {
        int f = m.element_faces(k)[i];
        b.faces[i] = s.blocks[f];
        if (s.kind == trace_kind::normal_flux)
            b.faces[i] *= m.element_signs(k)[i];
    }
    return b;
}

/// (interior value, trace) pair of the weak formulations.
struct weak_pair
{
    broken_field interior;
    skeleton_function trace;
};

} // namespace hybridfe
