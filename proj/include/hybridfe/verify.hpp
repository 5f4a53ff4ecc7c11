#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hybridfe/biharmonic.hpp"
#include "hybridfe/diffusion.hpp"
#include "hybridfe/error.hpp"
#include "hybridfe/fespace.hpp"
#include "hybridfe/fields.hpp"
#include "hybridfe/mesh.hpp"

namespace hybridfe
{

enum class problem_kind
{
    diffusion,
    biharmonic
};

/// A problem with known data. For diffusion q = -a grad u; for the plate
/// q = grad u and z = lap u. Without an exact solution only the data is usable.
struct manufactured_case
{
    std::string name;
    problem_kind problem = problem_kind::diffusion;
    std::string description;
    coefficient coef = coefficient::constant(1.0);
    scalar_function f;
    std::optional<scalar_function> u;
    std::optional<vector_function> grad_u;
    std::optional<scalar_function> lap_u;
    /// Structured meshes must use n divisible by this (coefficient jumps on grid lines).
    int n_multiple = 1;

    bool has_exact() const { return u.has_value(); }

    diffusion_problem diffusion() const
    {
        if (problem != problem_kind::diffusion)
            raise(error_kind::configuration, "case " + name + " is a biharmonic case");
        diffusion_problem p;
        p.coef = coef;
        p.f = f;
        if (u)
            p.u_D = *u;
        return p;
    }

    biharmonic_problem biharmonic() const
    {
        if (problem != problem_kind::biharmonic)
            raise(error_kind::configuration, "case " + name + " is a diffusion case");
        return {f};
    }

    /// Exact q in the convention of the problem.
    std::optional<vector_function> exact_q() const
    {
        if (!grad_u)
            return std::nullopt;
        if (problem == problem_kind::biharmonic)
            return grad_u;
        auto g = *grad_u;
        auto c = coef;
        return vector_function([g, c](const point& x) -> Eigen::Vector2d { return -(c.a_at(x) * g(x)); });
    }
};

namespace cases
{

inline constexpr double pi = 3.14159265358979323846;

/// D1: u = x, a = 1, f = 0.
inline manufactured_case
d1()
{
    manufactured_case c;
    c.name = "D1";
    c.description = "u = x, a = 1";
    c.f = [](const point&) { return 0.0; };
    c.u = [](const point& x) { return x.x(); };
    c.grad_u = [](const point&) -> Eigen::Vector2d { return {1.0, 0.0}; };
    return c;
}

/// D2: u = sin(pi x) sin(pi y), a = 1.
inline manufactured_case
d2()
{
    manufactured_case c;
    c.name = "D2";
    c.description = "u = sin(pi x) sin(pi y), a = 1";
    c.f = [](const point& x) { return 2 * pi * pi * std::sin(pi * x.x()) * std::sin(pi * x.y()); };
    c.u = [](const point& x) { return std::sin(pi * x.x()) * std::sin(pi * x.y()); };
    c.grad_u = [](const point& x) -> Eigen::Vector2d {
        return {pi * std::cos(pi * x.x()) * std::sin(pi * x.y()),
                pi * std::sin(pi * x.x()) * std::cos(pi * x.y())};
    };
    return c;
}

/// D3: same u, a = 1 + x^2/2, f = -div(a grad u).
inline manufactured_case
d3()
{
    manufactured_case c = d2();
    c.name = "D3";
    c.description = "u = sin(pi x) sin(pi y), a = 1 + x^2/2";
    c.coef = coefficient::scalar([](const point& x) { return 1.0 + 0.5 * x.x() * x.x(); });
    c.f = [](const point& x) {
        double a = 1.0 + 0.5 * x.x() * x.x();
        return a * 2 * pi * pi * std::sin(pi * x.x()) * std::sin(pi * x.y()) -
               x.x() * pi * std::cos(pi * x.x()) * std::sin(pi * x.y());
    };
    return c;
}

/// D4: a = a1 on x < 1/2, a2 on x > 1/2, f = 1, u = u(x) vanishing at x = 0, 1.
inline manufactured_case
d4(double a1 = 1.0, double a2 = 4.0)
{
    manufactured_case c;
    c.name = "D4";
    c.description = "two strips, a1 = " + std::to_string(a1) + ", a2 = " + std::to_string(a2) + ", f = 1";
    c.n_multiple = 2;
    c.coef = coefficient::scalar([a1, a2](const point& x) { return x.x() < 0.5 ? a1 : a2; }, true);
    c.f = [](const point&) { return 1.0; };
    const double A = (a2 + 3 * a1) / (4 * a1 * (a1 + a2));
    const double B = a1 * A / a2;
    const double C = 1 / (2 * a2) - B;
    c.u = [=](const point& x) {
        double t = x.x();
        return t < 0.5 ? -t * t / (2 * a1) + A * t : -t * t / (2 * a2) + B * t + C;
    };
    c.grad_u = [=](const point& x) -> Eigen::Vector2d {
        double t = x.x();
        return {t < 0.5 ? -t / a1 + A : -t / a2 + B, 0.0};
    };
    return c;
}

/// B1: clamped plate under f = 1, no closed form.
inline manufactured_case
b1()
{
    manufactured_case c;
    c.name = "B1";
    c.problem = problem_kind::biharmonic;
    c.description = "clamped plate, f = 1";
    c.f = [](const point&) { return 1.0; };
    return c;
}

/// B2: u = p(x) p(y), p(t) = t^2 (1-t)^2.
inline manufactured_case
b2()
{
    auto p = [](double t) { return t * t * (1 - t) * (1 - t); };
    auto p1 = [](double t) { return 2 * t * (1 - t) * (1 - 2 * t); };
    auto p2 = [](double t) { return 2 - 12 * t + 12 * t * t; };
    manufactured_case c;
    c.name = "B2";
    c.problem = problem_kind::biharmonic;
    c.description = "u = x^2 y^2 (1-x)^2 (1-y)^2";
    c.f = [=](const point& x) {
        return 24 * p(x.y()) + 2 * p2(x.x()) * p2(x.y()) + 24 * p(x.x());
    };
    c.u = [=](const point& x) { return p(x.x()) * p(x.y()); };
    c.grad_u = [=](const point& x) -> Eigen::Vector2d {
        return {p1(x.x()) * p(x.y()), p(x.x()) * p1(x.y())};
    };
    c.lap_u = [=](const point& x) { return p2(x.x()) * p(x.y()) + p(x.x()) * p2(x.y()); };
    return c;
}

inline std::vector<std::string>
names()
{
    return {"D1", "D2", "D3", "D4", "B1", "B2"};
}

inline manufactured_case
by_name(const std::string& name)
{
    if (name == "D1") return d1();
    if (name == "D2") return d2();
    if (name == "D3") return d3();
    if (name == "D4") return d4();
    if (name == "B1") return b1();
    if (name == "B2") return b2();
    raise(error_kind::configuration, "unknown case '" + name + "'");
}

} // namespace cases

// ---------------------------------------------------------------------------
// Error norms

namespace detail
{

inline int
error_order(int degree, int order)
{
    int need = std::min(2 * degree + 3, max_quadrature_order);
    return std::min(std::max(order, need), max_quadrature_order);
}

} // namespace detail

/// ||field - exact||_{L2(Omega)} for a scalar broken field.
inline double
l2_error(const mesh& m, const broken_field& field, const scalar_function& exact, int order = -1)
{
    if (field.space.kind != space_kind::scalar_triangle)
        raise(error_kind::invalid_argument, "scalar l2_error needs a P_k field");
    if (field.size() != m.num_elements())
        raise(error_kind::invalid_argument, "field and mesh disagree on the element count");
    order = detail::error_order(field.space.degree, order);
    double sum = 0.0;
    for (int k = 0; k < static_cast<int>(m.num_elements()); k++)
    {
        auto g = element_geometry::of(m, k);
        for (const auto& qp : element_rule(g, order))
        {
            double d = eval_scalar_values(field.space.degree, qp.xhat).dot(field.blocks[k]) - exact(qp.x);
            sum += qp.weight * d * d;
        }
    }
    return std::sqrt(sum);
}

inline double
l2_error(const mesh& m, const broken_field& field, const vector_function& exact, int order = -1)
{
    if (!field.space.is_vector())
        raise(error_kind::invalid_argument, "vector l2_error needs a vector field");
    if (field.size() != m.num_elements())
        raise(error_kind::invalid_argument, "field and mesh disagree on the element count");
    order = detail::error_order(field.space.max_degree(), order);
    double sum = 0.0;
    for (int k = 0; k < static_cast<int>(m.num_elements()); k++)
    {
        auto g = element_geometry::of(m, k);
        for (const auto& qp : element_rule(g, order))
        {
            Eigen::Vector2d v = eval_vector(field.space, g, qp.xhat).values.transpose() * field.blocks[k];
            sum += qp.weight * (v - exact(qp.x)).squaredNorm();
        }
    }
    return std::sqrt(sum);
}

// ---------------------------------------------------------------------------
// Equivalence of two solutions, field by field on a shared layout.

struct dof_field
{
    std::string name;
    std::string layout;   // space and block count; must match exactly to compare
    Eigen::VectorXd values;
};

struct dof_map
{
    std::vector<dof_field> fields;

    const dof_field* find(const std::string& name) const
    {
        for (const auto& f : fields)
            if (f.name == name)
                return &f;
        return nullptr;
    }
};

namespace detail
{

inline dof_field
field_of(const std::string& name, const broken_field& f)
{
    return {name, f.space.name() + " x " + std::to_string(f.size()), f.flatten()};
}

inline dof_field
field_of(const std::string& name, const skeleton_function& f)
{
    return {name, "P" + std::to_string(f.degree) + "(F) x " + std::to_string(f.blocks.size()),
            f.flatten()};
}

} // namespace detail

inline dof_map
to_dof_map(const diffusion_solution& s)
{
    return {{detail::field_of("u", s.u), detail::field_of("q", s.q), detail::field_of("uhat", s.uhat)}};
}

inline dof_map
to_dof_map(const biharmonic_solution& s)
{
    return {{detail::field_of("u", s.u), detail::field_of("z", s.z), detail::field_of("q", s.q),
             detail::field_of("sigma", s.sigma), detail::field_of("uhat", s.uhat),
             detail::field_of("zhat", s.zhat)}};
}

struct field_discrepancy
{
    std::string name;
    double max_abs = 0.0;
    double relative = 0.0;   // max_abs / report scale
    Eigen::Index worst_dof = -1;
};

struct equivalence_report
{
    std::vector<field_discrepancy> fields;
    double scale = 1.0;
    double tol = 0.0;

    bool pass() const
    {
        return std::all_of(fields.begin(), fields.end(),
                           [this](const auto& f) { return f.relative <= tol; });
    }

    double max_relative() const
    {
        double out = 0.0;
        for (const auto& f : fields)
            out = std::max(out, f.relative);
        return out;
    }
};

/// Compares every field present in both maps. The scale is the largest
/// coefficient of any compared field in either map.
inline equivalence_report
equivalence_check(const dof_map& a, const dof_map& b, double tol)
{
    equivalence_report rep;
    rep.tol = tol;
    std::vector<std::pair<const dof_field*, const dof_field*>> shared;
    for (const auto& fa : a.fields)
        if (const auto* fb = b.find(fa.name))
        {
            if (fa.layout != fb->layout || fa.values.size() != fb->values.size())
                raise(error_kind::incomparable, "field " + fa.name + ": " + fa.layout + " vs " +
                                                    fb->layout);
            shared.emplace_back(&fa, fb);
        }
    if (shared.empty())
        raise(error_kind::incomparable, "no field in common");

    double scale = 0.0;
    for (const auto& [fa, fb] : shared)
        if (fa->values.size() > 0)
            scale = std::max({scale, fa->values.cwiseAbs().maxCoeff(), fb->values.cwiseAbs().maxCoeff()});
    rep.scale = scale > 0.0 ? scale : 1.0;

    for (const auto& [fa, fb] : shared)
    {
        field_discrepancy d;
        d.name = fa->name;
        if (fa->values.size() > 0)
        {
            Eigen::VectorXd diff = (fa->values - fb->values).cwiseAbs();
            d.max_abs = diff.maxCoeff(&d.worst_dof);
        }
        d.relative = d.max_abs / rep.scale;
        rep.fields.push_back(d);
    }
    return rep;
}

inline std::string
format_report(const equivalence_report& rep)
{
    std::ostringstream os;
    char buf[160];
    std::snprintf(buf, sizeof buf, "scale %.12g tol %.12g\n", rep.scale, rep.tol);
    os << buf;
    for (const auto& f : rep.fields)
    {
        std::snprintf(buf, sizeof buf, "%s max_abs %.12g relative %.12g dof %ld %s\n", f.name.c_str(),
                      f.max_abs, f.relative, static_cast<long>(f.worst_dof),
                      f.relative <= rep.tol ? "pass" : "FAIL");
        os << buf;
    }
    os << (rep.pass() ? "PASS" : "FAIL") << "\n";
    return os.str();
}

// ---------------------------------------------------------------------------
// Convergence tables

/// Errors at or below this are reported as saturated instead of given a rate.
inline constexpr double saturation_level = 1e-10;

struct convergence_row
{
    int level = 0;
    double h = 0.0;
    double err_u = 0.0;
    double err_q = 0.0;
    std::optional<double> err_z;
};

struct convergence_table
{
    bool biharmonic = false;
    std::vector<convergence_row> rows;

    /// log2(e_prev / e_cur); nullopt on the first row or when saturated.
    static std::optional<double> rate(double prev, double cur)
    {
        if (prev <= saturation_level || cur <= saturation_level)
            return std::nullopt;
        return std::log2(prev / cur);
    }

    std::optional<double> rate_u(std::size_t i) const
    {
        return i == 0 ? std::nullopt : rate(rows[i - 1].err_u, rows[i].err_u);
    }
    std::optional<double> rate_q(std::size_t i) const
    {
        return i == 0 ? std::nullopt : rate(rows[i - 1].err_q, rows[i].err_q);
    }

    std::string csv() const
    {
        std::ostringstream os;
        os << "level,h,err_u,err_q,rate_u,rate_q" << (biharmonic ? ",err_z" : "") << "\n";
        char buf[64];
        auto num = [&](double v) {
            std::snprintf(buf, sizeof buf, "%.12g", v);
            return std::string(buf);
        };
        auto rate_cell = [&](std::size_t i, double prev, double cur) -> std::string {
            if (i == 0)
                return "";
            auto r = rate(prev, cur);
            return r ? num(*r) : "sat";
        };
        for (std::size_t i = 0; i < rows.size(); i++)
        {
            const auto& r = rows[i];
            os << r.level << "," << num(r.h) << "," << num(r.err_u) << "," << num(r.err_q) << ","
               << rate_cell(i, i ? rows[i - 1].err_u : 0.0, r.err_u) << ","
               << rate_cell(i, i ? rows[i - 1].err_q : 0.0, r.err_q);
            if (biharmonic)
                os << "," << (r.err_z ? num(*r.err_z) : "");
            os << "\n";
        }
        return os.str();
    }
};

/// Thrown when a level fails; carries the rows finished before it.
class convergence_error : public error
{
public:
    convergence_table partial;

    convergence_error(error_kind k, const std::string& what, convergence_table t)
        : error(k, what), partial(std::move(t))
    {}
};

inline convergence_row
measure(const mesh& m, const manufactured_case& c, const diffusion_solution& s, int level)
{
    if (!c.has_exact())
        raise(error_kind::configuration, "case " + c.name + " has no exact solution");
    convergence_row r;
    r.level = level;
    r.h = m.max_diameter();
    r.err_u = l2_error(m, s.u, *c.u);
    r.err_q = l2_error(m, s.q, *c.exact_q());
    return r;
}

inline convergence_row
measure(const mesh& m, const manufactured_case& c, const biharmonic_solution& s, int level)
{
    if (!c.has_exact())
        raise(error_kind::configuration, "case " + c.name + " has no exact solution");
    convergence_row r;
    r.level = level;
    r.h = m.max_diameter();
    r.err_u = l2_error(m, s.u, *c.u);
    r.err_q = l2_error(m, s.q, *c.exact_q());
    if (c.lap_u)
        r.err_z = l2_error(m, s.z, *c.lap_u);
    return r;
}

namespace detail
{

template <typename Solve>
convergence_table
run_levels(const mesh& base, const manufactured_case& c, int levels, bool biharmonic, Solve&& solve)
{
    if (levels < 2)
        raise(error_kind::configuration, "need ≥ 2 levels");
    if (!c.has_exact())
        raise(error_kind::configuration, "case " + c.name + " has no exact solution");
    convergence_table t;
    t.biharmonic = biharmonic;
    mesh m = base;
    for (int l = 0; l < levels; l++)
    {
        if (l > 0)
            m = refine_uniform(m);
        try
        {
            t.rows.push_back(solve(m, l));
        }
        catch (const error& e)
        {
            throw convergence_error(e.kind(), "level " + std::to_string(l) + ": " + e.what(), t);
        }
    }
    return t;
}

} // namespace detail

/// Errors on `base` and its uniform refinements (h halves per level).
inline convergence_table
convergence_study(const manufactured_case& c, const diffusion_method& method, const mesh& base,
                  int levels)
{
    auto prob = c.diffusion();
    return detail::run_levels(base, c, levels, false, [&](const mesh& m, int l) {
        auto res = solve_diffusion(m, method, prob);
        return measure(m, c, res.solution, l);
    });
}

inline convergence_table
convergence_study(const manufactured_case& c, const biharmonic_method& method, const mesh& base,
                  int levels)
{
    auto prob = c.biharmonic();
    return detail::run_levels(base, c, levels, true, [&](const mesh& m, int l) {
        auto res = solve_biharmonic(m, method, prob);
        return measure(m, c, res.solution, l);
    });
}

} // namespace hybridfe
