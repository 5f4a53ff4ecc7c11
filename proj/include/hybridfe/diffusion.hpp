#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hybridfe/element.hpp"
#include "hybridfe/error.hpp"
#include "hybridfe/fespace.hpp"
#include "hybridfe/fields.hpp"
#include "hybridfe/linalg.hpp"
#include "hybridfe/mesh.hpp"

// Steady diffusion  c q = -grad u,  div q = f,  u = u_D on the boundary,
// with numerical flux  qhat.n = q.n + tau (P u - uhat).
//
// Three pipelines share the element operators of element.hpp:
//   assemble_hdg           local (q, g, u) eliminated, unknowns uhat on free faces
//   assemble_wg_condensed  unknowns (u, uhat):  (a G_w, G_u) + s(u, w) = (f, w)
//   assemble_wg_flux_form  unknowns (q, u, qhat.n) with uhat recovered afterwards

namespace hybridfe
{

enum class diffusion_variant
{
    hdg_fc,
    hdg_fa,
    mixed_bdm,
    mixed_rt,
    wg2014_flux,
    wg2015_polytopal,
    wg2015_ls
};

inline const char*
to_string(diffusion_variant v)
{
    switch (v)
    {
        case diffusion_variant::hdg_fc: return "HDG_Fc";
        case diffusion_variant::hdg_fa: return "HDG_Fa";
        case diffusion_variant::mixed_bdm: return "Mixed_BDM_Ex51";
        case diffusion_variant::mixed_rt: return "Mixed_RT_Ex52";
        case diffusion_variant::wg2014_flux: return "WG2014_FluxForm";
        case diffusion_variant::wg2015_polytopal: return "WG2015_Polytopal";
        case diffusion_variant::wg2015_ls: return "WG2015_LS";
    }
    return "?";
}

inline std::optional<diffusion_variant>
parse_diffusion_variant(const std::string& s)
{
    for (auto v : {diffusion_variant::hdg_fc, diffusion_variant::hdg_fa,
                   diffusion_variant::mixed_bdm, diffusion_variant::mixed_rt,
                   diffusion_variant::wg2014_flux, diffusion_variant::wg2015_polytopal,
                   diffusion_variant::wg2015_ls})
        if (s == to_string(v))
            return v;
    return std::nullopt;
}

inline bool
is_mixed(diffusion_variant v)
{
    return v == diffusion_variant::mixed_bdm || v == diffusion_variant::mixed_rt;
}

inline bool
is_hdg(diffusion_variant v)
{
    return v == diffusion_variant::hdg_fc || v == diffusion_variant::hdg_fa;
}

enum class formulation
{
    fc,
    fa
};

inline formulation
formulation_of(diffusion_variant v)
{
    return v == diffusion_variant::hdg_fc || v == diffusion_variant::wg2014_flux ? formulation::fc
                                                                                 : formulation::fa;
}

struct diffusion_spaces
{
    local_space V;
    int w_degree = 0;
    int m_degree = 0;

    bool operator==(const diffusion_spaces&) const = default;

    std::string describe() const
    {
        return "V=" + V.name() + " W=P" + std::to_string(w_degree) + " M=P" +
               std::to_string(m_degree);
    }
};

/// Spaces fixed by each named variant; HDG_* default to [P_k]^2, P_k, P_k.
inline diffusion_spaces
table_spaces(diffusion_variant v, int k)
{
    switch (v)
    {
        case diffusion_variant::mixed_bdm: return {local_space::vector(k), k - 1, k};
        case diffusion_variant::mixed_rt: return {local_space::rt(k), k, k};
        case diffusion_variant::wg2014_flux:
        case diffusion_variant::wg2015_ls: return {local_space::vector(k), k + 1, k};
        case diffusion_variant::wg2015_polytopal: return {local_space::vector(k), k + 1, k + 1};
        case diffusion_variant::hdg_fc:
        case diffusion_variant::hdg_fa: break;
    }
    return {local_space::vector(k), k, k};
}

struct diffusion_config
{
    diffusion_variant variant = diffusion_variant::hdg_fa;
    int k = 1;
    std::optional<stabilization> stab;       // unset: variant default
    std::optional<diffusion_spaces> spaces;  // explicit override (HDG_* only)
    int quad_order = -1;
};

/// A validated configuration with every default filled in.
struct diffusion_method
{
    diffusion_variant variant = diffusion_variant::hdg_fa;
    int k = 1;
    diffusion_spaces spaces;
    stabilization stab;
    int quad_order = -1;

    formulation form() const { return formulation_of(variant); }
};

inline diffusion_method
resolve(const diffusion_config& cfg)
{
    const std::string name = to_string(cfg.variant);
    if (cfg.k < 0)
        raise(error_kind::unsupported_degree, "degree k must be >= 0");
    if (cfg.variant == diffusion_variant::mixed_bdm && cfg.k < 1)
        raise(error_kind::unsupported_degree, name + " needs k >= 1 (W = P_{k-1})");

    diffusion_method m;
    m.variant = cfg.variant;
    m.k = cfg.k;
    m.quad_order = cfg.quad_order;
    m.spaces = table_spaces(cfg.variant, cfg.k);
    if (cfg.spaces)
    {
        if (!is_hdg(cfg.variant) && !(*cfg.spaces == m.spaces))
            raise(error_kind::configuration, "space table violation: " + name + " at k=" +
                                                 std::to_string(cfg.k) + " uses " +
                                                 m.spaces.describe() + ", got " +
                                                 cfg.spaces->describe());
        m.spaces = *cfg.spaces;
    }
    check_degree(m.spaces.V);
    check_degree(local_space::scalar(m.spaces.w_degree));
    check_degree(local_space::edge(m.spaces.m_degree));

    stabilization def;
    switch (cfg.variant)
    {
        case diffusion_variant::mixed_bdm:
        case diffusion_variant::mixed_rt: def.kind = stab_kind::zero; break;
        case diffusion_variant::wg2014_flux:
        case diffusion_variant::wg2015_ls: def.kind = stab_kind::ls_projection; break;
        default: def.kind = stab_kind::scalar_over_h; break;
    }
    m.stab = cfg.stab.value_or(def);
    if (is_mixed(cfg.variant) && m.stab.kind != stab_kind::zero)
        raise(error_kind::configuration, "mixed variants require zero stabilization");
    if (!is_hdg(cfg.variant) && m.stab.kind != def.kind)
        raise(error_kind::configuration, name + " fixes its stabilization");
    if (m.stab.kind != stab_kind::zero && !(m.stab.rho > 0.0 && std::isfinite(m.stab.rho)))
        raise(error_kind::configuration, "rho must be a positive finite number");
    if (m.stab.single_face)
        raise(error_kind::configuration, "single-face stabilization is biharmonic only");
    return m;
}

struct diffusion_problem
{
    coefficient coef = coefficient::constant(1.0);
    scalar_function f = [](const point&) { return 0.0; };
    scalar_function u_D = [](const point&) { return 0.0; };
};

/// Skeleton numbering: one block of M(F) coefficients per free face.
struct skeleton_layout
{
    int degree = 0;
    std::vector<Eigen::Index> offset;   // -1 for constrained faces
    Eigen::Index size = 0;

    int block() const { return degree + 1; }

    static skeleton_layout build(const mesh& m, int degree, bool constrain_boundary)
    {
        skeleton_layout s;
        s.degree = degree;
        s.offset.assign(m.num_faces(), -1);
        for (std::size_t f = 0; f < m.num_faces(); f++)
            if (!(constrain_boundary && m.is_boundary_face(static_cast<int>(f))))
            {
                s.offset[f] = s.size;
                s.size += s.block();
            }
        return s;
    }

    /// Global indices of the three face blocks of element k (-1 where constrained).
    std::vector<Eigen::Index> element_dofs(const mesh& m, int k, Eigen::Index shift = 0) const
    {
        std::vector<Eigen::Index> out;
        for (int f : m.element_faces(k))
            for (int l = 0; l < block(); l++)
                out.push_back(offset[f] < 0 ? -1 : shift + offset[f] + l);
        return out;
    }
};

/// x = x0 + X [uh_F0; uh_F1; uh_F2] recovers the eliminated element unknowns.
struct element_recovery
{
    Eigen::VectorXd x0;
    Eigen::MatrixXd X;
    Eigen::MatrixXd P;                  // outward flux moments: <qhat.n, mu_l> = P x - mm uh
    std::array<Eigen::MatrixXd, 3> mm;  // tau <mu, mu> blocks
};

struct condensed_system
{
    sparse_system system;
    skeleton_layout layout;
    std::vector<Eigen::VectorXd> dirichlet;   // P_M u_D on boundary faces, empty elsewhere
    std::vector<element_recovery> recovery;
    diffusion_method method;
};

struct diffusion_solution
{
    broken_field u;
    broken_field q;
    broken_field g;
    skeleton_function uhat;
    skeleton_function qhat_n;
    /// Outward qhat.n per element face, M(F) coefficients.
    std::vector<std::array<Eigen::VectorXd, 3>> flux_out;
    double solver_residual = 0.0;
    /// WG2014 only: largest disagreement between the two one-sided recoveries of uhat.
    double recovery_mismatch = 0.0;
};

namespace detail
{

inline Eigen::MatrixXd
coefficient_mass(const local_operators& op, const coefficient& coef, bool inverse)
{
    return weighted_vector_mass(op, [&](const point& x) -> Eigen::Matrix2d {
        Eigen::Matrix2d a = coef.a_at(x);
        check_positive(a, x);
        return inverse ? Eigen::Matrix2d(a.inverse()) : a;
    });
}

inline std::vector<Eigen::VectorXd>
project_dirichlet(const mesh& m, int degree, const scalar_function& u_D)
{
    std::vector<Eigen::VectorXd> out(m.num_faces());
    for (int f : m.boundary_faces())
        out[f] = l2_project_face(degree, m, f, u_D);
    return out;
}

inline Eigen::VectorXd
face_values(const mesh& m, int k, const skeleton_layout& layout,
            const std::vector<Eigen::VectorXd>& dirichlet, const Eigen::VectorXd& sol,
            Eigen::Index shift = 0)
{
    const int nM = layout.block();
    Eigen::VectorXd out(3 * nM);
    for (int i = 0; i < 3; i++)
    {
        int f = m.element_faces(k)[i];
        if (layout.offset[f] >= 0)
            out.segment(i * nM, nM) = sol.segment(shift + layout.offset[f], nM);
        else
            out.segment(i * nM, nM) = dirichlet[f];
    }
    return out;
}

/// Moves the columns of constrained faces to the right-hand side and adds the block.
inline void
scatter_with_constraints(sparse_system& sys, const std::vector<Eigen::Index>& dofs,
                         const Eigen::MatrixXd& K, Eigen::VectorXd rhs,
                         const Eigen::VectorXd& constrained_values)
{
    for (std::size_t j = 0; j < dofs.size(); j++)
        if (dofs[j] < 0 && constrained_values[j] != 0.0)
            rhs -= K.col(j) * constrained_values[j];
    sys.add_block(dofs, dofs, K);
    for (std::size_t i = 0; i < dofs.size(); i++)
        if (dofs[i] >= 0)
            sys.rhs[dofs[i]] += rhs[i];
}

inline Eigen::VectorXd
solve_or_empty(const sparse_system& sys, double* residual = nullptr)
{
    if (sys.n == 0)
    {
        if (residual)
            *residual = 0.0;
        return Eigen::VectorXd();
    }
    auto rep = solve_direct(sys);
    if (residual)
        *residual = rep.relative_residual;
    return rep.solution;
}

} // namespace detail

/// Static condensation of the HDG method onto uhat on interior faces; boundary
/// faces carry uhat = P_M u_D.
inline condensed_system
assemble_hdg(const mesh& m, const diffusion_method& method, const diffusion_problem& prob)
{
    const auto& sp = method.spaces;
    condensed_system cs;
    cs.method = method;
    cs.layout = skeleton_layout::build(m, sp.m_degree, true);
    cs.dirichlet = detail::project_dirichlet(m, sp.m_degree, prob.u_D);
    cs.system = sparse_system(cs.layout.size);
    cs.recovery.resize(m.num_elements());

    for (int e = 0; e < static_cast<int>(m.num_elements()); e++)
    {
        auto op = build_local_operators(m, e, sp.V, sp.w_degree, sp.m_degree, method.quad_order);
        const int nV = op.nv(), nW = op.nw(), nM = op.nm();
        const int nx = 2 * nV + nW;
        auto S = build_stabilization(op, method.stab);
        Eigen::MatrixXd W = detail::coefficient_mass(op, prob.coef, method.form() == formulation::fc);

        Eigen::MatrixXd L = Eigen::MatrixXd::Zero(nx, nx);
        L.block(0, nV, nV, nV) = -op.mass_v;
        L.block(0, 2 * nV, nV, nW) = -op.div_vw;
        if (method.form() == formulation::fa)
        {
            L.block(nV, 0, nV, nV) = op.mass_v;
            L.block(nV, nV, nV, nV) = W;
        }
        else
        {
            L.block(nV, 0, nV, nV) = W;
            L.block(nV, nV, nV, nV) = op.mass_v;
        }
        L.block(2 * nV, 0, nW, nV) = op.div_vw.transpose();
        L.block(2 * nV, 2 * nV, nW, nW) = S.ww;

        Eigen::MatrixXd R = Eigen::MatrixXd::Zero(nx, 3 * nM);
        Eigen::MatrixXd P = Eigen::MatrixXd::Zero(3 * nM, nx);
        Eigen::MatrixXd Smm = Eigen::MatrixXd::Zero(3 * nM, 3 * nM);
        for (int i = 0; i < 3; i++)
        {
            R.block(0, i * nM, nV, nM) = -op.trace_vm[i];
            R.block(2 * nV, i * nM, nW, nM) = S.wm[i];
            P.block(i * nM, 0, nM, nV) = op.trace_vm[i].transpose();
            P.block(i * nM, 2 * nV, nM, nW) = S.wm[i].transpose();
            Smm.block(i * nM, i * nM, nM, nM) = S.mm[i];
        }
        Eigen::VectorXd F = Eigen::VectorXd::Zero(nx);
        F.segment(2 * nV, nW) = load_vector(op, prob.f);

        Eigen::FullPivLU<Eigen::MatrixXd> lu(L);
        if (lu.rank() < nx)
            raise(error_kind::ill_posed, std::string("local solver matrix singular for ") +
                                             to_string(method.variant) + " with " +
                                             sp.describe() + " at k=" +
                                             std::to_string(method.k));
        auto& rec = cs.recovery[e];
        rec.X = lu.solve(R);
        rec.x0 = lu.solve(F);
        rec.P = P;
        rec.mm = S.mm;

        Eigen::MatrixXd K = -P * rec.X + Smm;
        Eigen::VectorXd r = P * rec.x0;
        auto dofs = cs.layout.element_dofs(m, e);
        Eigen::VectorXd fixed =
            detail::face_values(m, e, cs.layout, cs.dirichlet, Eigen::VectorXd::Zero(cs.layout.size));
        detail::scatter_with_constraints(cs.system, dofs, K, r, fixed);
    }
    return cs;
}

/// Element-by-element back substitution.
inline diffusion_solution
recover_local(const mesh& m, const condensed_system& cs, const Eigen::VectorXd& skeleton)
{
    const auto& sp = cs.method.spaces;
    const std::size_t ne = m.num_elements();
    const int nV = sp.V.dimension();
    const int nW = local_space::scalar(sp.w_degree).dimension();
    const int nM = sp.m_degree + 1;
    if (skeleton.size() != cs.layout.size)
        raise(error_kind::invalid_argument, "skeleton vector has the wrong length");

    diffusion_solution s;
    s.u = broken_field::zeros(local_space::scalar(sp.w_degree), ne);
    s.q = broken_field::zeros(sp.V, ne);
    s.g = broken_field::zeros(sp.V, ne);
    s.uhat = skeleton_function::zeros(sp.m_degree, m.num_faces(), trace_kind::scalar,
                                      boundary_tag::projected_dirichlet);
    s.qhat_n = skeleton_function::zeros(sp.m_degree, m.num_faces(), trace_kind::normal_flux);
    s.flux_out.resize(ne);

    for (std::size_t f = 0; f < m.num_faces(); f++)
        s.uhat.blocks[f] = cs.layout.offset[f] >= 0
                               ? Eigen::VectorXd(skeleton.segment(cs.layout.offset[f], nM))
                               : cs.dirichlet[f];

    for (int e = 0; e < static_cast<int>(ne); e++)
    {
        const auto& rec = cs.recovery[e];
        Eigen::VectorXd uh = detail::face_values(m, e, cs.layout, cs.dirichlet, skeleton);
        Eigen::VectorXd x = rec.x0 + rec.X * uh;
        s.q.blocks[e] = x.segment(0, nV);
        s.g.blocks[e] = x.segment(nV, nV);
        s.u.blocks[e] = x.segment(2 * nV, nW);
        Eigen::VectorXd moments = rec.P * x;
        for (int i = 0; i < 3; i++)
        {
            int f = m.element_faces(e)[i];
            Eigen::VectorXd mom = moments.segment(i * nM, nM) - rec.mm[i] * uh.segment(i * nM, nM);
            s.flux_out[e][i] = mom / m.face_length(f);
            if (m.face(f).elements[0] == e)
                s.qhat_n.blocks[f] = m.element_signs(e)[i] * s.flux_out[e][i];
        }
    }
    return s;
}

/// Condensed (u, uhat) form. Unknowns: u on every element (block e * dim W),
/// then uhat on interior faces.
struct wg_condensed_system
{
    sparse_system system;
    skeleton_layout layout;    // offsets relative to `skeleton_shift`
    Eigen::Index skeleton_shift = 0;
    int w_block = 0;
    std::vector<Eigen::VectorXd> dirichlet;
    diffusion_method method;
};

/// Local matrix of the weak gradient: M G = [-Div | T_0 | T_1 | T_2] [w; wh].
inline Eigen::MatrixXd
weak_gradient_matrix(const local_operators& op)
{
    const int nW = op.nw(), nM = op.nm();
    Eigen::MatrixXd B(op.nv(), nW + 3 * nM);
    B.leftCols(nW) = -op.div_vw;
    for (int i = 0; i < 3; i++)
        B.block(0, nW + i * nM, op.nv(), nM) = op.trace_vm[i];
    return op.mass_v.llt().solve(B);
}

/// Matrix of s((u,uh),(w,wh)) in the ordering [w; wh_0; wh_1; wh_2].
inline Eigen::MatrixXd
stabilization_matrix(const local_operators& op, const stab_blocks& S)
{
    const int nW = op.nw(), nM = op.nm();
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(nW + 3 * nM, nW + 3 * nM);
    out.topLeftCorner(nW, nW) = S.ww;
    for (int i = 0; i < 3; i++)
    {
        out.block(0, nW + i * nM, nW, nM) = -S.wm[i];
        out.block(nW + i * nM, 0, nM, nW) = -S.wm[i].transpose();
        out.block(nW + i * nM, nW + i * nM, nM, nM) = S.mm[i];
    }
    return out;
}

inline wg_condensed_system
assemble_wg_condensed(const mesh& m, const diffusion_method& method, const diffusion_problem& prob)
{
    if (method.form() != formulation::fa || is_hdg(method.variant))
        raise(error_kind::configuration,
              std::string("condensed WG form is defined for Mixed_* and WG2015_* variants, not ") +
                  to_string(method.variant));
    const auto& sp = method.spaces;
    wg_condensed_system ws;
    ws.method = method;
    ws.w_block = local_space::scalar(sp.w_degree).dimension();
    ws.layout = skeleton_layout::build(m, sp.m_degree, true);
    ws.skeleton_shift = static_cast<Eigen::Index>(m.num_elements()) * ws.w_block;
    ws.dirichlet = detail::project_dirichlet(m, sp.m_degree, prob.u_D);
    ws.system = sparse_system(ws.skeleton_shift + ws.layout.size);

    for (int e = 0; e < static_cast<int>(m.num_elements()); e++)
    {
        auto op = build_local_operators(m, e, sp.V, sp.w_degree, sp.m_degree, method.quad_order);
        const int nW = op.nw();
        Eigen::MatrixXd A = detail::coefficient_mass(op, prob.coef, false);
        Eigen::MatrixXd G = weak_gradient_matrix(op);
        Eigen::MatrixXd K = G.transpose() * A * G +
                            stabilization_matrix(op, build_stabilization(op, method.stab));
        Eigen::VectorXd r = Eigen::VectorXd::Zero(K.rows());
        r.head(nW) = load_vector(op, prob.f);

        std::vector<Eigen::Index> dofs;
        for (int j = 0; j < nW; j++)
            dofs.push_back(static_cast<Eigen::Index>(e) * nW + j);
        auto sk = ws.layout.element_dofs(m, e, ws.skeleton_shift);
        dofs.insert(dofs.end(), sk.begin(), sk.end());
        Eigen::VectorXd fixed = Eigen::VectorXd::Zero(K.rows());
        fixed.tail(3 * op.nm()) = detail::face_values(m, e, ws.layout, ws.dirichlet,
                                                      Eigen::VectorXd::Zero(ws.layout.size));
        detail::scatter_with_constraints(ws.system, dofs, K, r, fixed);
    }
    return ws;
}

namespace detail
{

/// Fills q, g and the side fluxes from (u, uhat) through the weak gradient.
inline void
complete_from_primal(const mesh& m, const diffusion_method& method, const diffusion_problem& prob,
                     diffusion_solution& s)
{
    const auto& sp = method.spaces;
    const int nM = sp.m_degree + 1;
    for (int e = 0; e < static_cast<int>(m.num_elements()); e++)
    {
        auto op = build_local_operators(m, e, sp.V, sp.w_degree, sp.m_degree, method.quad_order);
        auto S = build_stabilization(op, method.stab);
        Eigen::VectorXd y(op.nw() + 3 * nM);
        y.head(op.nw()) = s.u.blocks[e];
        for (int i = 0; i < 3; i++)
            y.segment(op.nw() + i * nM, nM) = s.uhat.blocks[m.element_faces(e)[i]];
        Eigen::VectorXd G = weak_gradient_matrix(op) * y;
        s.g.blocks[e] = G;
        if (method.form() == formulation::fa)
            s.q.blocks[e] = -op.mass_v.llt().solve(coefficient_mass(op, prob.coef, false) * G);
        else
            s.q.blocks[e] = -coefficient_mass(op, prob.coef, true).llt().solve(op.mass_v * G);
        for (int i = 0; i < 3; i++)
        {
            int f = m.element_faces(e)[i];
            Eigen::VectorXd uh = s.uhat.blocks[f];
            Eigen::VectorXd mom = op.trace_vm[i].transpose() * s.q.blocks[e] +
                                  S.wm[i].transpose() * s.u.blocks[e] - S.mm[i] * uh;
            s.flux_out[e][i] = mom / op.faces[i].length;
            if (m.face(f).elements[0] == e)
                s.qhat_n.blocks[f] = m.element_signs(e)[i] * s.flux_out[e][i];
        }
    }
}

inline diffusion_solution
empty_solution(const mesh& m, const diffusion_method& method)
{
    const auto& sp = method.spaces;
    const std::size_t ne = m.num_elements();
    diffusion_solution s;
    s.u = broken_field::zeros(local_space::scalar(sp.w_degree), ne);
    s.q = broken_field::zeros(sp.V, ne);
    s.g = broken_field::zeros(sp.V, ne);
    s.uhat = skeleton_function::zeros(sp.m_degree, m.num_faces(), trace_kind::scalar,
                                      boundary_tag::projected_dirichlet);
    s.qhat_n = skeleton_function::zeros(sp.m_degree, m.num_faces(), trace_kind::normal_flux);
    s.flux_out.resize(ne);
    return s;
}

} // namespace detail

/// (u, uhat) from a solution vector of the condensed WG system; q = -P_V(a G).
inline diffusion_solution
recover_wg(const mesh& m, const wg_condensed_system& ws, const diffusion_problem& prob,
           const Eigen::VectorXd& sol)
{
    if (sol.size() != ws.system.n)
        raise(error_kind::invalid_argument, "solution vector has the wrong length");
    auto s = detail::empty_solution(m, ws.method);
    for (std::size_t e = 0; e < m.num_elements(); e++)
        s.u.blocks[e] = sol.segment(static_cast<Eigen::Index>(e) * ws.w_block, ws.w_block);
    const int nM = ws.layout.block();
    for (std::size_t f = 0; f < m.num_faces(); f++)
        s.uhat.blocks[f] = ws.layout.offset[f] >= 0
                               ? Eigen::VectorXd(sol.segment(ws.skeleton_shift + ws.layout.offset[f], nM))
                               : ws.dirichlet[f];
    detail::complete_from_primal(m, ws.method, prob, s);
    return s;
}

/// Flux form. Unknowns per element [q; u], then qhat (canonical normal
/// component in M(F)) on every face.
struct flux_form_system
{
    sparse_system system;
    int element_block = 0;
    int nv = 0;
    int nw = 0;
    int nm = 0;
    Eigen::Index face_shift = 0;
    diffusion_method method;
};

/// Flux-form assembly for explicit spaces. The rewriting needs v.n|_F in M(F).
inline flux_form_system
assemble_wg_flux_form(const mesh& m, const diffusion_method& method, const diffusion_problem& prob)
{
    const auto& sp = method.spaces;
    if (sp.m_degree < sp.V.max_degree())
        raise(error_kind::configuration, "flux form needs V.n in M(F): " + sp.describe());
    if (method.stab.kind != stab_kind::ls_projection)
        raise(error_kind::configuration, "flux form needs LS stabilization");

    flux_form_system fs;
    fs.method = method;
    fs.nv = sp.V.dimension();
    fs.nw = local_space::scalar(sp.w_degree).dimension();
    fs.nm = sp.m_degree + 1;
    fs.element_block = fs.nv + fs.nw;
    fs.face_shift = static_cast<Eigen::Index>(m.num_elements()) * fs.element_block;
    fs.system = sparse_system(fs.face_shift + static_cast<Eigen::Index>(m.num_faces()) * fs.nm);
    const int nV = fs.nv, nW = fs.nw, nM = fs.nm;

    for (int e = 0; e < static_cast<int>(m.num_elements()); e++)
    {
        auto op = build_local_operators(m, e, sp.V, sp.w_degree, sp.m_degree, method.quad_order);
        const double inv_tau = op.geom.h / method.stab.rho;
        const int n = nV + nW + 3 * nM;
        Eigen::MatrixXd K = Eigen::MatrixXd::Zero(n, n);
        Eigen::VectorXd r = Eigen::VectorXd::Zero(n);

        K.topLeftCorner(nV, nV) = detail::coefficient_mass(op, prob.coef, true);
        K.block(0, nV, nV, nW) = op.grad_vw;
        K.block(nV, 0, nW, nV) = op.grad_vw.transpose();
        r.segment(nV, nW) = -load_vector(op, prob.f);
        for (int i = 0; i < 3; i++)
        {
            const auto& fr = op.faces[i];
            const double s = fr.sign;
            const int c = nV + nW + i * nM;
            K.topLeftCorner(nV, nV) += inv_tau * op.trace_vv[i];
            K.block(0, c, nV, nM) = -inv_tau * s * op.trace_vm[i];
            K.block(c, 0, nM, nV) = -inv_tau * s * op.trace_vm[i].transpose();
            K.block(c, c, nM, nM) = inv_tau * fr.length * Eigen::MatrixXd::Identity(nM, nM);
            K.block(c, nV, nM, nW) = -s * op.trace_wm[i].transpose();
            K.block(nV, c, nW, nM) = -s * op.trace_wm[i];
            if (m.is_boundary_face(fr.face))
                r.segment(c, nM) = -s * l2_project_face(sp.m_degree, m, fr.face, prob.u_D) *
                                   fr.length;
        }

        std::vector<Eigen::Index> dofs;
        for (int j = 0; j < nV + nW; j++)
            dofs.push_back(static_cast<Eigen::Index>(e) * fs.element_block + j);
        for (int i = 0; i < 3; i++)
            for (int l = 0; l < nM; l++)
                dofs.push_back(fs.face_shift +
                               static_cast<Eigen::Index>(m.element_faces(e)[i]) * nM + l);
        fs.system.add_block(dofs, dofs, K);
        for (int i = 0; i < n; i++)
            fs.system.rhs[dofs[i]] += r[i];
    }
    return fs;
}

/// Reads (q, u, qhat) and recovers uhat = P_M u + (h/rho)(q - qhat).n from
/// each side; interior faces take the mean of the two one-sided values.
inline diffusion_solution
recover_flux_form(const mesh& m, const flux_form_system& fs, const diffusion_problem& prob,
                  const Eigen::VectorXd& sol)
{
    if (sol.size() != fs.system.n)
        raise(error_kind::invalid_argument, "solution vector has the wrong length");
    const auto& sp = fs.method.spaces;
    auto s = detail::empty_solution(m, fs.method);
    const int nM = fs.nm;
    std::vector<Eigen::VectorXd> sum(m.num_faces(), Eigen::VectorXd::Zero(nM));
    std::vector<std::vector<Eigen::VectorXd>> sides(m.num_faces());

    for (int e = 0; e < static_cast<int>(m.num_elements()); e++)
    {
        auto op = build_local_operators(m, e, sp.V, sp.w_degree, sp.m_degree, fs.method.quad_order);
        const Eigen::Index o = static_cast<Eigen::Index>(e) * fs.element_block;
        s.q.blocks[e] = sol.segment(o, fs.nv);
        s.u.blocks[e] = sol.segment(o + fs.nv, fs.nw);
        s.g.blocks[e] =
            -op.mass_v.llt().solve(detail::coefficient_mass(op, prob.coef, true) * s.q.blocks[e]);
        const double inv_tau = op.geom.h / fs.method.stab.rho;
        for (int i = 0; i < 3; i++)
        {
            const auto& fr = op.faces[i];
            Eigen::VectorXd qh = sol.segment(fs.face_shift + static_cast<Eigen::Index>(fr.face) * nM, nM);
            Eigen::VectorXd uh =
                (op.trace_wm[i].transpose() * s.u.blocks[e] +
                 inv_tau * op.trace_vm[i].transpose() * s.q.blocks[e]) /
                    fr.length -
                inv_tau * fr.sign * qh;
            sides[fr.face].push_back(uh);
            s.flux_out[e][i] = fr.sign * qh;
            s.qhat_n.blocks[fr.face] = qh;
        }
    }
    for (std::size_t f = 0; f < m.num_faces(); f++)
    {
        Eigen::VectorXd mean = Eigen::VectorXd::Zero(nM);
        for (const auto& v : sides[f])
            mean += v;
        mean /= static_cast<double>(sides[f].size());
        s.uhat.blocks[f] = mean;
        if (sides[f].size() == 2)
            s.recovery_mismatch =
                std::max(s.recovery_mismatch, (sides[f][0] - sides[f][1]).cwiseAbs().maxCoeff());
    }
    return s;
}

struct diffusion_result
{
    diffusion_method method;
    diffusion_solution solution;
    double matrix_asymmetry = 0.0;
    Eigen::Index unknowns = 0;
};

/// Runs the pipeline a variant is defined by: HDG_* through condensation,
/// Mixed_* and WG2015_* through the condensed (u, uhat) form, WG2014 through
/// the flux form.
inline diffusion_result
solve_diffusion(const mesh& m, const diffusion_method& method, const diffusion_problem& prob)
{
    diffusion_result res;
    res.method = method;
    double residual = 0.0;
    if (is_hdg(method.variant))
    {
        auto cs = assemble_hdg(m, method, prob);
        res.unknowns = cs.system.n;
        res.matrix_asymmetry = cs.system.n ? relative_asymmetry(cs.system.matrix()) : 0.0;
        auto x = detail::solve_or_empty(cs.system, &residual);
        res.solution = recover_local(m, cs, x);
    }
    else if (method.variant == diffusion_variant::wg2014_flux)
    {
        auto fs = assemble_wg_flux_form(m, method, prob);
        res.unknowns = fs.system.n;
        res.matrix_asymmetry = relative_asymmetry(fs.system.matrix());
        auto x = detail::solve_or_empty(fs.system, &residual);
        res.solution = recover_flux_form(m, fs, prob, x);
    }
    else
    {
        auto ws = assemble_wg_condensed(m, method, prob);
        res.unknowns = ws.system.n;
        res.matrix_asymmetry = relative_asymmetry(ws.system.matrix());
        auto x = detail::solve_or_empty(ws.system, &residual);
        res.solution = recover_wg(m, ws, prob, x);
    }
    res.solution.solver_residual = residual;
    return res;
}

inline diffusion_result
solve_diffusion(const mesh& m, const diffusion_config& cfg, const diffusion_problem& prob)
{
    return solve_diffusion(m, resolve(cfg), prob);
}

// ---------------------------------------------------------------------------
// Residual audits. Everything below re-evaluates the defining equations by
// quadrature from the stored fields, independently of the assembled matrices.

struct audit_entry
{
    std::string name;
    double value = 0.0;       // max |residual| over all test functions
    double threshold = 0.0;
    bool pass() const { return value <= threshold; }
};

struct audit_report
{
    std::vector<audit_entry> entries;
    double scale = 1.0;

    bool pass() const
    {
        return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.pass(); });
    }

    const audit_entry* find(const std::string& name) const
    {
        for (const auto& e : entries)
            if (e.name == name)
                return &e;
        return nullptr;
    }
};

namespace detail
{

inline double
max_abs(const std::vector<Eigen::VectorXd>& blocks)
{
    double out = 0.0;
    for (const auto& b : blocks)
        if (b.size())
            out = std::max(out, b.cwiseAbs().maxCoeff());
    return out;
}

} // namespace detail

/// Numerical flux qhat.n = q.n + tau (P u - uhat) on local face i, evaluated
/// at each face quadrature point.
inline std::vector<double>
diffusion_trace_flux(const local_operators& op, const diffusion_method& method, int i,
                     const Eigen::VectorXd& q, const Eigen::VectorXd& u, const Eigen::VectorXd& uh)
{
    const auto& fr = op.faces[i];
    const double tau = method.stab.tau(op.geom.h);
    Eigen::VectorXd pu;
    if (method.stab.kind == stab_kind::ls_projection)
        pu = op.trace_wm[i].transpose() * u / fr.length;
    std::vector<double> out;
    for (const auto& fp : fr.points)
    {
        double qn = (eval_vector(op.V, op.geom, fp.xhat).values.transpose() * q).dot(fr.normal);
        double uv = method.stab.kind == stab_kind::ls_projection
                        ? eval_edge(op.m_degree, fp.t).dot(pu)
                        : eval_scalar_values(op.w_degree, fp.xhat).dot(u);
        double uhv = eval_edge(op.m_degree, fp.t).dot(uh);
        out.push_back(qn + tau * (uv - uhv));
    }
    return out;
}

/// Re-tests every equation of the HDG method (the F_c or F_a form named by the
/// method) against every basis function, plus transmission and the boundary
/// condition. Residual thresholds are tol * scale with
/// scale = max(|load|_inf, |solution|_inf, 1).
inline audit_report
audit_diffusion(const mesh& m, const diffusion_method& method, const diffusion_problem& prob,
                const diffusion_solution& s, double tol = 1e-9)
{
    const auto& sp = method.spaces;
    const int nM = sp.m_degree + 1;
    double r_flux = 0.0, r_aux = 0.0, r_balance = 0.0, r_trans = 0.0, r_bc = 0.0;
    double load = 0.0;
    std::vector<Eigen::VectorXd> face_sum(m.num_faces(), Eigen::VectorXd::Zero(nM));

    for (int e = 0; e < static_cast<int>(m.num_elements()); e++)
    {
        auto op = build_local_operators(m, e, sp.V, sp.w_degree, sp.m_degree, method.quad_order);
        const auto& q = s.q.blocks[e];
        const auto& g = s.g.blocks[e];
        const auto& u = s.u.blocks[e];
        Eigen::VectorXd eq1 = Eigen::VectorXd::Zero(op.nv());
        Eigen::VectorXd eq2 = Eigen::VectorXd::Zero(op.nv());
        Eigen::VectorXd eq3 = Eigen::VectorXd::Zero(op.nw());
        Eigen::VectorXd fw = Eigen::VectorXd::Zero(op.nw());
        for (const auto& qp : op.cell)
        {
            auto v = eval_vector(op.V, op.geom, qp.xhat);
            auto w = eval_scalar(op.w_degree, op.geom, qp.xhat);
            Eigen::Vector2d qv = v.values.transpose() * q;
            Eigen::Vector2d gv = v.values.transpose() * g;
            double uv = w.values.dot(u);
            Eigen::Matrix2d a = prob.coef.a_at(qp.x);
            Eigen::Matrix2d c = a.inverse();
            if (method.form() == formulation::fa)
            {
                eq1 += qp.weight * (-(v.values * gv) - uv * v.divs);
                eq2 += qp.weight * (v.values * (qv + a * gv));
            }
            else
            {
                eq1 += qp.weight * (v.values * (c * qv) - uv * v.divs);
                eq2 += qp.weight * (v.values * (c * qv + gv));
            }
            eq3 += qp.weight * (-(w.grads * qv));
            fw += qp.weight * prob.f(qp.x) * w.values;
        }
        for (int i = 0; i < 3; i++)
        {
            const auto& fr = op.faces[i];
            const auto& uh = s.uhat.blocks[fr.face];
            auto flux = diffusion_trace_flux(op, method, i, q, u, uh);
            for (std::size_t p = 0; p < fr.points.size(); p++)
            {
                const auto& fp = fr.points[p];
                double uhv = eval_edge(sp.m_degree, fp.t).dot(uh);
                Eigen::VectorXd vn = eval_vector(op.V, op.geom, fp.xhat).values * fr.normal;
                eq1 += fp.weight * uhv * vn;
                eq3 += fp.weight * flux[p] * eval_scalar_values(op.w_degree, fp.xhat);
                face_sum[fr.face] += fp.weight * flux[p] * eval_edge(sp.m_degree, fp.t);
            }
        }
        eq3 -= fw;
        load = std::max(load, fw.cwiseAbs().maxCoeff());
        r_flux = std::max(r_flux, eq1.cwiseAbs().maxCoeff());
        r_aux = std::max(r_aux, eq2.cwiseAbs().maxCoeff());
        r_balance = std::max(r_balance, eq3.cwiseAbs().maxCoeff());
    }
    for (std::size_t f = 0; f < m.num_faces(); f++)
    {
        if (m.is_boundary_face(static_cast<int>(f)))
        {
            Eigen::VectorXd d = Eigen::VectorXd::Zero(nM);
            auto qr = quadrature(ref_shape::edge, operator_order(sp.V, sp.w_degree, sp.m_degree,
                                                                 method.quad_order));
            double len = m.face_length(static_cast<int>(f));
            for (std::size_t p = 0; p < qr.size(); p++)
            {
                double t = qr.points[p].x();
                double diff = s.uhat.value(static_cast<int>(f), t) -
                              prob.u_D(m.face_point(static_cast<int>(f), t));
                d += qr.weights[p] * len * diff * eval_edge(sp.m_degree, t);
            }
            r_bc = std::max(r_bc, d.cwiseAbs().maxCoeff());
        }
        else
            r_trans = std::max(r_trans, face_sum[f].cwiseAbs().maxCoeff());
    }

    audit_report rep;
    rep.scale = std::max({load, detail::max_abs(s.u.blocks), detail::max_abs(s.q.blocks),
                          detail::max_abs(s.uhat.blocks), 1.0});
    const double thr = tol * rep.scale;
    const bool fa = method.form() == formulation::fa;
    rep.entries.push_back({fa ? "gradient_equation" : "flux_equation", r_flux, thr});
    rep.entries.push_back({fa ? "flux_definition" : "auxiliary_gradient", r_aux, thr});
    rep.entries.push_back({"balance_equation", r_balance, thr});
    rep.entries.push_back({"transmission", r_trans, thr});
    rep.entries.push_back({"dirichlet_condition", r_bc, thr});
    return rep;
}

} // namespace hybridfe
