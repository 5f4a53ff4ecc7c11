#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hybridfe/diffusion.hpp"
#include "hybridfe/element.hpp"
#include "hybridfe/error.hpp"
#include "hybridfe/fespace.hpp"
#include "hybridfe/fields.hpp"
#include "hybridfe/linalg.hpp"
#include "hybridfe/mesh.hpp"
#include "hybridfe/weakops.hpp"

// Clamped plate  Laplace^2 u = f,  u = du/dn = 0 on the boundary, written as
//
//   q = grad u,  z = div q,  sigma = grad z,  div sigma = f.
//
// Local equations for (sigma, z, q, u), test functions (m, omega, v, s):
//   E1  (sigma, m) + (z, div m) - <zhat, m.n>      = 0
//   E2  -(sigma, grad omega) + <sigmahat.n, omega> = (f, omega)
//   E3  (q, v) + (u, div v) - <uhat, v.n>          = 0
//   E4  -(q, grad s) + <qhat.n, s>                 = (z, s)
//
// Traces:
//   HDG_Full  qhat.n = q.n - tau (u - uhat),  sigmahat.n = sigma.n - tau (z - zhat)
//   WG2013    qhat.n = q.n - tau (z - zhat),  sigmahat.n = sigma.n
//   WG2014    zhat = z - tau1 (grad u - qhat).n,
//             sigmahat.n = sigma.n - Phi(zhat - z).n + tau2 (u - uhat)

namespace hybridfe
{

enum class biharmonic_variant
{
    hdg_full,
    wg2013,
    wg2014
};

inline const char*
to_string(biharmonic_variant v)
{
    switch (v)
    {
        case biharmonic_variant::hdg_full: return "HDG_Full";
        case biharmonic_variant::wg2013: return "WG2013";
        case biharmonic_variant::wg2014: return "WG2014";
    }
    return "?";
}

inline std::optional<biharmonic_variant>
parse_biharmonic_variant(const std::string& s)
{
    for (auto v : {biharmonic_variant::hdg_full, biharmonic_variant::wg2013,
                   biharmonic_variant::wg2014})
        if (s == to_string(v))
            return v;
    return std::nullopt;
}

struct biharmonic_config
{
    biharmonic_variant variant = biharmonic_variant::hdg_full;
    int k = 1;
    std::optional<stabilization> stab;   // HDG_Full / WG2013 only
    int quad_order = -1;
};

struct biharmonic_method
{
    biharmonic_variant variant = biharmonic_variant::hdg_full;
    int k = 1;
    local_space V;          // Sigma = Q = V
    int w_degree = 0;       // W (and Z for the four-field methods)
    int m_degree = 0;       // M(F)
    int z_degree = -1;      // Z for WG2014
    int n_degree = -1;      // N(F) for WG2014
    stabilization stab;
    int quad_order = -1;
};

inline biharmonic_method
resolve(const biharmonic_config& cfg)
{
    const std::string name = to_string(cfg.variant);
    biharmonic_method m;
    m.variant = cfg.variant;
    m.k = cfg.k;
    m.quad_order = cfg.quad_order;
    switch (cfg.variant)
    {
        case biharmonic_variant::hdg_full:
            if (cfg.k < 1)
                raise(error_kind::unsupported_degree, name + " needs k >= 1");
            m.V = local_space::vector(cfg.k);
            m.w_degree = m.m_degree = cfg.k;
            m.stab = cfg.stab.value_or(stabilization{stab_kind::constant, 1.0});
            break;
        case biharmonic_variant::wg2013:
            if (cfg.k < 0)
                raise(error_kind::unsupported_degree, name + " needs k >= 0");
            m.V = local_space::rt(cfg.k);
            m.w_degree = m.m_degree = cfg.k;
            m.stab = cfg.stab.value_or(stabilization{stab_kind::scalar_h, 1.0});
            break;
        case biharmonic_variant::wg2014:
            if (cfg.k < 2)
                raise(error_kind::unsupported_degree, name + " needs k >= 2 (Z = P_{k-2})");
            if (cfg.stab)
                raise(error_kind::configuration,
                      name + " fixes its stabilization (tau1 = 1/h, tau2 = 1/h^3)");
            m.V = local_space::vector(cfg.k - 1);
            m.w_degree = m.m_degree = cfg.k;
            m.z_degree = cfg.k - 2;
            m.n_degree = cfg.k - 1;
            break;
    }
    check_degree(m.V);
    check_degree(local_space::scalar(m.w_degree));
    if (cfg.variant != biharmonic_variant::wg2014)
    {
        if (m.stab.kind == stab_kind::ls_projection)
            raise(error_kind::configuration, name + " takes a face-wise scalar tau");
        if (m.stab.kind != stab_kind::zero && !(m.stab.rho > 0.0 && std::isfinite(m.stab.rho)))
            raise(error_kind::configuration, "rho must be a positive finite number");
    }
    return m;
}

struct biharmonic_problem
{
    scalar_function f = [](const point&) { return 0.0; };
};

struct biharmonic_solution
{
    broken_field u, z, q, sigma;
    skeleton_function uhat, zhat, qhat_n, sigmahat_n;
    /// Outward traces per element face (M(F) coefficients; zhat in N(F) for WG2014).
    std::vector<std::array<Eigen::VectorXd, 3>> zhat_side, qhat_side, sigmahat_side;
    double solver_residual = 0.0;
};

namespace detail
{

/// The four per-face tau values entering the two numerical fluxes.
struct biharmonic_taus
{
    stabilization sigma_z, sigma_u, q_z, q_u;
};

inline biharmonic_taus
trace_taus(const biharmonic_method& m)
{
    biharmonic_taus t;
    if (m.variant == biharmonic_variant::hdg_full)
    {
        t.sigma_z = m.stab;
        t.q_u = m.stab;
    }
    else
        t.q_z = m.stab;
    return t;
}

inline biharmonic_solution
empty_biharmonic(const mesh& m, const biharmonic_method& method, int zhat_degree)
{
    const std::size_t ne = m.num_elements(), nf = m.num_faces();
    biharmonic_solution s;
    int zdeg = method.variant == biharmonic_variant::wg2014 ? method.z_degree : method.w_degree;
    s.u = broken_field::zeros(local_space::scalar(method.w_degree), ne);
    s.z = broken_field::zeros(local_space::scalar(zdeg), ne);
    s.q = broken_field::zeros(method.V, ne);
    s.sigma = broken_field::zeros(method.V, ne);
    s.uhat = skeleton_function::zeros(method.m_degree, nf, trace_kind::scalar,
                                      boundary_tag::zero_on_boundary);
    s.zhat = skeleton_function::zeros(zhat_degree, nf);
    int qdeg = method.variant == biharmonic_variant::wg2014 ? method.n_degree : method.m_degree;
    s.qhat_n = skeleton_function::zeros(qdeg, nf, trace_kind::normal_flux,
                                        boundary_tag::zero_on_boundary);
    s.sigmahat_n = skeleton_function::zeros(method.m_degree, nf, trace_kind::normal_flux);
    s.zhat_side.resize(ne);
    s.qhat_side.resize(ne);
    s.sigmahat_side.resize(ne);
    return s;
}

inline void
store_side(skeleton_function& target, const mesh& m, int e, int i, const Eigen::VectorXd& outward)
{
    int f = m.element_faces(e)[i];
    if (m.face(f).elements[0] != e)
        return;
    target.blocks[f] = target.kind == trace_kind::normal_flux
                           ? Eigen::VectorXd(m.element_signs(e)[i] * outward)
                           : outward;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Four-field HDG, condensed onto (zhat on all faces, uhat on interior faces).

struct biharmonic_layout
{
    int block = 0;
    std::vector<Eigen::Index> zhat;   // every face
    std::vector<Eigen::Index> uhat;   // interior faces, -1 on the boundary
    Eigen::Index size = 0;

    static biharmonic_layout build(const mesh& m, int degree)
    {
        biharmonic_layout l;
        l.block = degree + 1;
        l.zhat.assign(m.num_faces(), -1);
        l.uhat.assign(m.num_faces(), -1);
        for (std::size_t f = 0; f < m.num_faces(); f++)
        {
            l.zhat[f] = l.size;
            l.size += l.block;
        }
        for (std::size_t f = 0; f < m.num_faces(); f++)
            if (!m.is_boundary_face(static_cast<int>(f)))
            {
                l.uhat[f] = l.size;
                l.size += l.block;
            }
        return l;
    }

    /// [zhat_0, zhat_1, zhat_2, uhat_0, uhat_1, uhat_2]
    std::vector<Eigen::Index> element_dofs(const mesh& m, int e) const
    {
        std::vector<Eigen::Index> out;
        for (const auto* table : {&zhat, &uhat})
            for (int f : m.element_faces(e))
                for (int l = 0; l < block; l++)
                    out.push_back((*table)[f] < 0 ? -1 : (*table)[f] + l);
        return out;
    }
};

struct biharmonic_recovery
{
    Eigen::VectorXd x0;   // [sigma; z; q; u]
    Eigen::MatrixXd X;
    Eigen::MatrixXd B;    // negated flux moments: rows [zhat faces; uhat faces]
    Eigen::MatrixXd C;
};

struct biharmonic_hdg_system
{
    sparse_system system;
    biharmonic_layout layout;
    std::vector<biharmonic_recovery> recovery;
    biharmonic_method method;
    /// Unit null vectors of the skeleton matrix, each supported on the
    /// boundary zhat DOFs of one element (global indices, coefficients).
    std::vector<std::vector<std::pair<Eigen::Index, double>>> gauge;
};

/// Four-field HDG with the trace choice of `method.variant` (HDG_Full or
/// WG2013). Skeleton rows are -sum <qhat.n, mu> on every face and
/// -sum <sigmahat.n, mu> on interior faces; on the boundary the first one
/// imposes qhat.n = 0 weakly.
///
/// On an element with two or more boundary faces the boundary zhat moments
/// can lie in the kernel of the condensed matrix (z, u, q and uhat vanish,
/// only sigma responds). Those modes never reach the right-hand side, so the
/// system stays consistent; they are fixed by adding s N N^T, which forces
/// N^T y = 0 and leaves A y = b untouched.
namespace detail
{

inline void
add_boundary_gauge(const mesh& m, int e, const Eigen::MatrixXd& K,
                   const std::vector<Eigen::Index>& dofs, int nM, biharmonic_hdg_system& hs)
{
    std::vector<int> cols;
    for (int i = 0; i < 3; i++)
        if (m.is_boundary_face(m.element_faces(e)[i]))
            for (int l = 0; l < nM; l++)
                cols.push_back(i * nM + l);
    if (cols.size() < 2 * static_cast<std::size_t>(nM))
        return;
    std::vector<int> rows;
    for (int i = 0; i < static_cast<int>(dofs.size()); i++)
        if (dofs[i] >= 0)
            rows.push_back(i);
    Eigen::MatrixXd Kc(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t r = 0; r < rows.size(); r++)
        for (std::size_t c = 0; c < cols.size(); c++)
            Kc(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = K(rows[r], cols[c]);
    const double scale = K.cwiseAbs().maxCoeff();
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(Kc, Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    for (Eigen::Index j = 0; j < Kc.cols(); j++)
    {
        const double sj = j < sv.size() ? sv[j] : 0.0;
        if (sj > 1e-10 * scale)
            continue;
        Eigen::VectorXd v = svd.matrixV().col(j);
        std::vector<std::pair<Eigen::Index, double>> mode;
        for (std::size_t c = 0; c < cols.size(); c++)
            mode.emplace_back(dofs[cols[c]], v[static_cast<Eigen::Index>(c)]);
        for (const auto& [i, vi] : mode)
            for (const auto& [k, vk] : mode)
                hs.system.add(i, k, scale * vi * vk);
        hs.gauge.push_back(std::move(mode));
    }
}

} // namespace detail

inline biharmonic_hdg_system
assemble_biharmonic_hdg(const mesh& m, const biharmonic_method& method,
                        const biharmonic_problem& prob)
{
    if (method.variant == biharmonic_variant::wg2014)
        raise(error_kind::configuration, "four-field assembly takes HDG_Full or WG2013 traces");
    biharmonic_hdg_system hs;
    hs.method = method;
    hs.layout = biharmonic_layout::build(m, method.m_degree);
    hs.system = sparse_system(hs.layout.size);
    hs.recovery.resize(m.num_elements());
    const auto taus = detail::trace_taus(method);

    for (int e = 0; e < static_cast<int>(m.num_elements()); e++)
    {
        auto op = build_local_operators(m, e, method.V, method.w_degree, method.m_degree,
                                        method.quad_order);
        const int nV = op.nv(), nW = op.nw(), nM = op.nm();
        const int os = 0, oz = nV, oq = nV + nW, ou = 2 * nV + nW, nx = 2 * nV + 2 * nW;
        const int ny = 6 * nM;
        auto Ssz = build_stabilization(op, taus.sigma_z);
        auto Ssu = build_stabilization(op, taus.sigma_u);
        auto Sqz = build_stabilization(op, taus.q_z);
        auto Squ = build_stabilization(op, taus.q_u);

        Eigen::MatrixXd L = Eigen::MatrixXd::Zero(nx, nx);
        Eigen::MatrixXd R = Eigen::MatrixXd::Zero(nx, ny);
        Eigen::VectorXd F = Eigen::VectorXd::Zero(nx);
        // E1 rows
        L.block(os, os, nV, nV) = op.mass_v;
        L.block(os, oz, nV, nW) = op.div_vw;
        // E2 rows
        L.block(oz, os, nW, nV) = op.div_vw.transpose();
        L.block(oz, oz, nW, nW) = -Ssz.ww;
        L.block(oz, ou, nW, nW) = -Ssu.ww;
        F.segment(oz, nW) = load_vector(op, prob.f);
        // E3 rows
        L.block(oq, oq, nV, nV) = op.mass_v;
        L.block(oq, ou, nV, nW) = op.div_vw;
        // E4 rows
        L.block(ou, oq, nW, nV) = op.div_vw.transpose();
        L.block(ou, oz, nW, nW) = -Sqz.ww - op.mass_w;
        L.block(ou, ou, nW, nW) = -Squ.ww;

        Eigen::MatrixXd B = Eigen::MatrixXd::Zero(ny, nx);
        Eigen::MatrixXd C = Eigen::MatrixXd::Zero(ny, ny);
        for (int i = 0; i < 3; i++)
        {
            const int cz = i * nM, cu = 3 * nM + i * nM;
            R.block(os, cz, nV, nM) = op.trace_vm[i];
            R.block(oz, cz, nW, nM) = -Ssz.wm[i];
            R.block(oz, cu, nW, nM) = -Ssu.wm[i];
            R.block(oq, cu, nV, nM) = op.trace_vm[i];
            R.block(ou, cz, nW, nM) = -Sqz.wm[i];
            R.block(ou, cu, nW, nM) = -Squ.wm[i];

            B.block(cz, oq, nM, nV) = -op.trace_vm[i].transpose();
            B.block(cz, oz, nM, nW) = Sqz.wm[i].transpose();
            B.block(cz, ou, nM, nW) = Squ.wm[i].transpose();
            C.block(cz, cz, nM, nM) = -Sqz.mm[i];
            C.block(cz, cu, nM, nM) = -Squ.mm[i];

            B.block(cu, os, nM, nV) = -op.trace_vm[i].transpose();
            B.block(cu, oz, nM, nW) = Ssz.wm[i].transpose();
            B.block(cu, ou, nM, nW) = Ssu.wm[i].transpose();
            C.block(cu, cz, nM, nM) = -Ssz.mm[i];
            C.block(cu, cu, nM, nM) = -Ssu.mm[i];
        }

        Eigen::FullPivLU<Eigen::MatrixXd> lu(L);
        if (lu.rank() < nx)
            raise(error_kind::ill_posed, std::string("local solver matrix singular for ") +
                                             to_string(method.variant) + " at k=" +
                                             std::to_string(method.k));
        auto& rec = hs.recovery[e];
        rec.X = lu.solve(R);
        rec.x0 = lu.solve(F);
        rec.B = B;
        rec.C = C;

        Eigen::MatrixXd K = B * rec.X + C;
        Eigen::VectorXd r = -B * rec.x0;
        auto dofs = hs.layout.element_dofs(m, e);
        hs.system.add_block(dofs, dofs, K);
        for (int i = 0; i < ny; i++)
            if (dofs[i] >= 0)
                hs.system.rhs[dofs[i]] += r[i];
        detail::add_boundary_gauge(m, e, K, dofs, nM, hs);
    }
    return hs;
}

inline biharmonic_solution
recover_biharmonic(const mesh& m, const biharmonic_hdg_system& hs, const Eigen::VectorXd& y)
{
    if (y.size() != hs.layout.size)
        raise(error_kind::invalid_argument, "skeleton vector has the wrong length");
    const auto& method = hs.method;
    auto s = detail::empty_biharmonic(m, method, method.m_degree);
    const int nM = hs.layout.block;
    const int nV = method.V.dimension();
    const int nW = local_space::scalar(method.w_degree).dimension();

    for (std::size_t f = 0; f < m.num_faces(); f++)
    {
        s.zhat.blocks[f] = y.segment(hs.layout.zhat[f], nM);
        if (hs.layout.uhat[f] >= 0)
            s.uhat.blocks[f] = y.segment(hs.layout.uhat[f], nM);
    }
    for (int e = 0; e < static_cast<int>(m.num_elements()); e++)
    {
        const auto& rec = hs.recovery[e];
        auto dofs = hs.layout.element_dofs(m, e);
        Eigen::VectorXd ye = Eigen::VectorXd::Zero(6 * nM);
        for (int i = 0; i < 6 * nM; i++)
            if (dofs[i] >= 0)
                ye[i] = y[dofs[i]];
        Eigen::VectorXd x = rec.x0 + rec.X * ye;
        s.sigma.blocks[e] = x.segment(0, nV);
        s.z.blocks[e] = x.segment(nV, nW);
        s.q.blocks[e] = x.segment(nV + nW, nV);
        s.u.blocks[e] = x.segment(2 * nV + nW, nW);
        // the skeleton rows hold minus the outward flux moments
        Eigen::VectorXd mom = -(rec.B * x + rec.C * ye);
        for (int i = 0; i < 3; i++)
        {
            const double len = m.face_length(m.element_faces(e)[i]);
            s.zhat_side[e][i] = ye.segment(i * nM, nM);
            s.qhat_side[e][i] = mom.segment(i * nM, nM) / len;
            s.sigmahat_side[e][i] = mom.segment(3 * nM + i * nM, nM) / len;
            detail::store_side(s.qhat_n, m, e, i, s.qhat_side[e][i]);
            detail::store_side(s.sigmahat_n, m, e, i, s.sigmahat_side[e][i]);
        }
    }
    return s;
}

// ---------------------------------------------------------------------------
// Condensed 2013 WG form in the pairs u = (u, uhat), z = (z, zhat):
//   -(G_w, G_z)                               = (f, omega)   w in W_h x M_h^0
//   -(G_s, G_u) - <tau (z - zhat), s - shat>  = (z, s)       s in W_h x M_h

struct wg2013_system
{
    sparse_system system;
    int w_block = 0;
    int m_block = 0;
    std::vector<Eigen::Index> uhat;   // interior faces
    Eigen::Index z_shift = 0;
    Eigen::Index zhat_shift = 0;
    biharmonic_method method;

    Eigen::Index u_dof(int e, int j) const { return static_cast<Eigen::Index>(e) * w_block + j; }
    Eigen::Index z_dof(int e, int j) const { return z_shift + static_cast<Eigen::Index>(e) * w_block + j; }
    Eigen::Index zhat_dof(int f, int l) const { return zhat_shift + static_cast<Eigen::Index>(f) * m_block + l; }
};

inline wg2013_system
assemble_wg2013(const mesh& m, const biharmonic_method& method, const biharmonic_problem& prob)
{
    if (method.variant != biharmonic_variant::wg2013)
        raise(error_kind::configuration, "assemble_wg2013 needs the WG2013 method");
    wg2013_system ws;
    ws.method = method;
    ws.w_block = local_space::scalar(method.w_degree).dimension();
    ws.m_block = method.m_degree + 1;
    const Eigen::Index ne = static_cast<Eigen::Index>(m.num_elements());
    Eigen::Index n = ne * ws.w_block;
    ws.uhat.assign(m.num_faces(), -1);
    for (std::size_t f = 0; f < m.num_faces(); f++)
        if (!m.is_boundary_face(static_cast<int>(f)))
        {
            ws.uhat[f] = n;
            n += ws.m_block;
        }
    ws.z_shift = n;
    n += ne * ws.w_block;
    ws.zhat_shift = n;
    n += static_cast<Eigen::Index>(m.num_faces()) * ws.m_block;
    ws.system = sparse_system(n);

    for (int e = 0; e < static_cast<int>(m.num_elements()); e++)
    {
        auto op = build_local_operators(m, e, method.V, method.w_degree, method.m_degree,
                                        method.quad_order);
        const int nW = op.nw(), nM = op.nm(), np = nW + 3 * nM;
        Eigen::MatrixXd G = weak_gradient_matrix(op);
        Eigen::MatrixXd GMG = G.transpose() * op.mass_v * G;
        Eigen::MatrixXd Szz = stabilization_matrix(op, build_stabilization(op, method.stab));
        Szz.topLeftCorner(nW, nW) += op.mass_w;

        Eigen::MatrixXd K = Eigen::MatrixXd::Zero(2 * np, 2 * np);
        K.block(0, np, np, np) = -GMG;
        K.block(np, 0, np, np) = -GMG;
        K.block(np, np, np, np) = -Szz;
        Eigen::VectorXd r = Eigen::VectorXd::Zero(2 * np);
        r.head(nW) = load_vector(op, prob.f);

        std::vector<Eigen::Index> dofs;
        for (int j = 0; j < nW; j++)
            dofs.push_back(ws.u_dof(e, j));
        for (int f : m.element_faces(e))
            for (int l = 0; l < nM; l++)
                dofs.push_back(ws.uhat[f] < 0 ? -1 : ws.uhat[f] + l);
        for (int j = 0; j < nW; j++)
            dofs.push_back(ws.z_dof(e, j));
        for (int f : m.element_faces(e))
            for (int l = 0; l < nM; l++)
                dofs.push_back(ws.zhat_dof(f, l));
        ws.system.add_block(dofs, dofs, K);
        for (int i = 0; i < 2 * np; i++)
            if (dofs[i] >= 0)
                ws.system.rhs[dofs[i]] += r[i];
    }
    return ws;
}

/// sigma = G_z, q = G_u, traces from their defining formulas.
inline biharmonic_solution
recover_wg2013(const mesh& m, const wg2013_system& ws, const Eigen::VectorXd& y)
{
    if (y.size() != ws.system.n)
        raise(error_kind::invalid_argument, "solution vector has the wrong length");
    const auto& method = ws.method;
    auto s = detail::empty_biharmonic(m, method, method.m_degree);
    const int nW = ws.w_block, nM = ws.m_block;
    for (std::size_t f = 0; f < m.num_faces(); f++)
    {
        s.zhat.blocks[f] = y.segment(ws.zhat_dof(static_cast<int>(f), 0), nM);
        if (ws.uhat[f] >= 0)
            s.uhat.blocks[f] = y.segment(ws.uhat[f], nM);
    }
    for (int e = 0; e < static_cast<int>(m.num_elements()); e++)
    {
        auto op = build_local_operators(m, e, method.V, method.w_degree, method.m_degree,
                                        method.quad_order);
        auto S = build_stabilization(op, method.stab);
        s.u.blocks[e] = y.segment(ws.u_dof(e, 0), nW);
        s.z.blocks[e] = y.segment(ws.z_dof(e, 0), nW);
        Eigen::VectorXd yu(nW + 3 * nM), yz(nW + 3 * nM);
        yu.head(nW) = s.u.blocks[e];
        yz.head(nW) = s.z.blocks[e];
        for (int i = 0; i < 3; i++)
        {
            int f = m.element_faces(e)[i];
            yu.segment(nW + i * nM, nM) = s.uhat.blocks[f];
            yz.segment(nW + i * nM, nM) = s.zhat.blocks[f];
        }
        Eigen::MatrixXd G = weak_gradient_matrix(op);
        s.q.blocks[e] = G * yu;
        s.sigma.blocks[e] = G * yz;
        for (int i = 0; i < 3; i++)
        {
            int f = m.element_faces(e)[i];
            const double len = op.faces[i].length;
            s.zhat_side[e][i] = s.zhat.blocks[f];
            s.qhat_side[e][i] = (op.trace_vm[i].transpose() * s.q.blocks[e] -
                                 S.wm[i].transpose() * s.z.blocks[e] + S.mm[i] * s.zhat.blocks[f]) /
                                len;
            s.sigmahat_side[e][i] = op.trace_vm[i].transpose() * s.sigma.blocks[e] / len;
            detail::store_side(s.qhat_n, m, e, i, s.qhat_side[e][i]);
            detail::store_side(s.sigmahat_n, m, e, i, s.sigmahat_side[e][i]);
        }
    }
    return s;
}

// ---------------------------------------------------------------------------
// 2014 WG form in (u, uhat, qhat):
//   (D_W, D_Q) + <tau1 (grad u - qhat).n, (grad w - What).n>
//              + <tau2 (u - uhat), w - what> = (f, w)
// with G_w = grad w + Phi(what - w) and D the weak divergence into Z.

/// Element matrices of the 2014 WG form. Local tuple ordering:
/// [w (dim W); what_0..2 (dim M each); What_0..2 (dim N each, canonical normal component)].
struct wg2014_element
{
    Eigen::MatrixXd G;      // weak gradient, V coefficients
    Eigen::MatrixXd D;      // D_(G_w, What), Z coefficients
    Eigen::MatrixXd mass_z;
    Eigen::MatrixXd tau1;   // <tau1 (grad u - qhat).n, (grad w - What).n>
    Eigen::MatrixXd tau2;   // <tau2 (u - uhat), w - what>
    Eigen::VectorXd load;
    int nw = 0, nm = 0, nn = 0;

    int size() const { return nw + 3 * nm + 3 * nn; }
    Eigen::MatrixXd matrix() const { return D.transpose() * mass_z * D + tau1 + tau2; }
};

inline wg2014_element
wg2014_element_matrices(const mesh& m, int e, const biharmonic_method& method,
                        const scalar_function& f)
{
    auto op = build_local_operators(m, e, method.V, method.w_degree, method.m_degree,
                                    method.quad_order);
    wg2014_element el;
    el.nw = op.nw();
    el.nm = op.nm();
    el.nn = method.n_degree + 1;
    const int nV = op.nv(), nW = el.nw, nM = el.nm, nN = el.nn, nT = el.size();
    const int zdeg = method.z_degree;
    const int nZ = local_space::scalar(zdeg).dimension();
    const double h = op.geom.h;
    const double tau1 = 1.0 / h, tau2 = 1.0 / (h * h * h);

    // G = M^{-1} [ (grad w, v) + sum_F <what - w, v.n> ]
    Eigen::MatrixXd B = Eigen::MatrixXd::Zero(nV, nT);
    B.leftCols(nW) = op.grad_vw;
    for (int i = 0; i < 3; i++)
    {
        B.leftCols(nW) -= op.trace_vw[i];
        B.block(0, nW + i * nM, nV, nM) = op.trace_vm[i];
    }
    Eigen::LLT<Eigen::MatrixXd> mv(op.mass_v);
    el.G = mv.solve(B);

    // D: (D, s) = -(G, grad s) + sum_F <What.n, s>
    el.mass_z = Eigen::MatrixXd::Zero(nZ, nZ);
    Eigen::MatrixXd grad_vz = Eigen::MatrixXd::Zero(nV, nZ);
    for (const auto& qp : op.cell)
    {
        auto v = eval_vector(op.V, op.geom, qp.xhat);
        auto s = eval_scalar(zdeg, op.geom, qp.xhat);
        el.mass_z += qp.weight * s.values * s.values.transpose();
        grad_vz += qp.weight * v.values * s.grads.transpose();
    }
    Eigen::MatrixXd Dr = -grad_vz.transpose() * el.G;

    el.tau1 = Eigen::MatrixXd::Zero(nT, nT);
    el.tau2 = Eigen::MatrixXd::Zero(nT, nT);
    for (int i = 0; i < 3; i++)
    {
        const auto& fr = op.faces[i];
        const int cm = nW + i * nM, cn = nW + 3 * nM + i * nN;
        for (const auto& fp : fr.points)
        {
            auto w = eval_scalar(op.w_degree, op.geom, fp.xhat);
            Eigen::VectorXd nu = eval_edge(method.n_degree, fp.t);
            Eigen::VectorXd mu = eval_edge(method.m_degree, fp.t);
            Eigen::VectorXd s = eval_scalar_values(zdeg, fp.xhat);
            Eigen::VectorXd a = Eigen::VectorXd::Zero(nT);
            a.head(nW) = w.grads * fr.normal;
            a.segment(cn, nN) = -fr.sign * nu;
            Eigen::VectorXd b = Eigen::VectorXd::Zero(nT);
            b.head(nW) = w.values;
            b.segment(cm, nM) = -mu;
            el.tau1 += fp.weight * tau1 * a * a.transpose();
            el.tau2 += fp.weight * tau2 * b * b.transpose();
            Dr.block(0, cn, nZ, nN) += fp.weight * fr.sign * s * nu.transpose();
        }
    }
    el.D = el.mass_z.llt().solve(Dr);
    el.load = Eigen::VectorXd::Zero(nT);
    el.load.head(nW) = load_vector(op, f);
    return el;
}

struct wg2014_system
{
    sparse_system system;
    int w_block = 0, m_block = 0, n_block = 0;
    std::vector<Eigen::Index> uhat;   // interior faces
    std::vector<Eigen::Index> qhat;   // interior faces
    biharmonic_method method;

    std::vector<Eigen::Index> element_dofs(const mesh& m, int e) const
    {
        std::vector<Eigen::Index> out;
        for (int j = 0; j < w_block; j++)
            out.push_back(static_cast<Eigen::Index>(e) * w_block + j);
        for (int f : m.element_faces(e))
            for (int l = 0; l < m_block; l++)
                out.push_back(uhat[f] < 0 ? -1 : uhat[f] + l);
        for (int f : m.element_faces(e))
            for (int l = 0; l < n_block; l++)
                out.push_back(qhat[f] < 0 ? -1 : qhat[f] + l);
        return out;
    }
};

inline wg2014_system
assemble_wg2014(const mesh& m, const biharmonic_method& method, const biharmonic_problem& prob)
{
    if (method.variant != biharmonic_variant::wg2014)
        raise(error_kind::configuration, "assemble_wg2014 needs the WG2014 method");
    if (method.k < 2)
        raise(error_kind::unsupported_degree, "WG2014 needs k >= 2");
    wg2014_system ws;
    ws.method = method;
    ws.w_block = local_space::scalar(method.w_degree).dimension();
    ws.m_block = method.m_degree + 1;
    ws.n_block = method.n_degree + 1;
    Eigen::Index n = static_cast<Eigen::Index>(m.num_elements()) * ws.w_block;
    ws.uhat.assign(m.num_faces(), -1);
    ws.qhat.assign(m.num_faces(), -1);
    for (std::size_t f = 0; f < m.num_faces(); f++)
        if (!m.is_boundary_face(static_cast<int>(f)))
        {
            ws.uhat[f] = n;
            n += ws.m_block;
        }
    for (std::size_t f = 0; f < m.num_faces(); f++)
        if (!m.is_boundary_face(static_cast<int>(f)))
        {
            ws.qhat[f] = n;
            n += ws.n_block;
        }
    ws.system = sparse_system(n);
    for (int e = 0; e < static_cast<int>(m.num_elements()); e++)
    {
        auto el = wg2014_element_matrices(m, e, method, prob.f);
        auto dofs = ws.element_dofs(m, e);
        ws.system.add_block(dofs, dofs, el.matrix());
        for (int i = 0; i < el.size(); i++)
            if (dofs[i] >= 0)
                ws.system.rhs[dofs[i]] += el.load[i];
    }
    return ws;
}

/// q = G_u, z = D_Q, zhat = z - tau1 (grad u - qhat).n per side (in N(F)),
/// sigma = G_(z, zhat), sigmahat.n = sigma.n - Phi(zhat - z).n + tau2 (u - uhat).
inline biharmonic_solution
recover_wg2014(const mesh& m, const wg2014_system& ws, const biharmonic_problem& prob,
               const Eigen::VectorXd& y)
{
    if (y.size() != ws.system.n)
        raise(error_kind::invalid_argument, "solution vector has the wrong length");
    const auto& method = ws.method;
    auto s = detail::empty_biharmonic(m, method, method.n_degree);
    const int nW = ws.w_block, nM = ws.m_block, nN = ws.n_block;
    const int order = operator_order(method.V, method.w_degree, method.m_degree, method.quad_order);
    for (std::size_t f = 0; f < m.num_faces(); f++)
    {
        if (ws.uhat[f] >= 0)
            s.uhat.blocks[f] = y.segment(ws.uhat[f], nM);
        if (ws.qhat[f] >= 0)
            s.qhat_n.blocks[f] = y.segment(ws.qhat[f], nN);
    }
    std::vector<std::vector<Eigen::VectorXd>> zsides(m.num_faces());
    for (int e = 0; e < static_cast<int>(m.num_elements()); e++)
    {
        auto el = wg2014_element_matrices(m, e, method, prob.f);
        auto dofs = ws.element_dofs(m, e);
        Eigen::VectorXd ye = Eigen::VectorXd::Zero(el.size());
        for (int i = 0; i < el.size(); i++)
            if (dofs[i] >= 0)
                ye[i] = y[dofs[i]];
        s.u.blocks[e] = ye.head(nW);
        s.q.blocks[e] = el.G * ye;
        s.z.blocks[e] = el.D * ye;

        const auto g = element_geometry::of(m, e);
        const auto rules = element_face_rules(m, e, order);
        const double tau1 = 1.0 / g.h, tau2 = 1.0 / (g.h * g.h * g.h);
        boundary_data jump = boundary_data::zeros(method.n_degree);   // zhat - z per face
        for (int i = 0; i < 3; i++)
        {
            const auto& fr = rules[i];
            Eigen::VectorXd qh = ye.segment(nW + 3 * nM + i * nN, nN);
            Eigen::VectorXd zh = Eigen::VectorXd::Zero(nN), d = Eigen::VectorXd::Zero(nN);
            for (const auto& fp : fr.points)
            {
                Eigen::VectorXd nu = eval_edge(method.n_degree, fp.t);
                auto w = eval_scalar(method.w_degree, g, fp.xhat);
                double dun = (w.grads.transpose() * s.u.blocks[e]).dot(fr.normal);
                double qn = fr.sign * nu.dot(qh);
                double zv = eval_scalar_values(method.z_degree, fp.xhat).dot(s.z.blocks[e]);
                double jv = -tau1 * (dun - qn);
                zh += fp.weight / fr.length * (zv + jv) * nu;
                d += fp.weight / fr.length * jv * nu;
            }
            s.zhat_side[e][i] = zh;
            jump.faces[i] = d;
            zsides[fr.face].push_back(zh);
        }
        // sigma = G_(z, zhat): weak gradient of the pair into V
        boundary_data zb;
        zb.degree = method.n_degree;
        for (int i = 0; i < 3; i++)
            zb.faces[i] = s.zhat_side[e][i];
        s.sigma.blocks[e] =
            weakops::weak_gradient(m, e, method.V, method.z_degree, s.z.blocks[e], zb, order);
        Eigen::VectorXd phi = weakops::lifting_phi(m, e, method.V, jump, order);
        for (int i = 0; i < 3; i++)
        {
            const auto& fr = rules[i];
            Eigen::VectorXd uh = s.uhat.blocks[fr.face];
            Eigen::VectorXd sh = Eigen::VectorXd::Zero(nM);
            for (const auto& fp : fr.points)
            {
                auto v = eval_vector(method.V, g, fp.xhat);
                double sn = (v.values.transpose() * s.sigma.blocks[e]).dot(fr.normal);
                double pn = (v.values.transpose() * phi).dot(fr.normal);
                double uv = eval_scalar_values(method.w_degree, fp.xhat).dot(s.u.blocks[e]);
                double uhv = eval_edge(method.m_degree, fp.t).dot(uh);
                sh += fp.weight / fr.length * (sn - pn + tau2 * (uv - uhv)) *
                      eval_edge(method.m_degree, fp.t);
            }
            s.sigmahat_side[e][i] = sh;
            s.qhat_side[e][i] = fr.sign * ye.segment(nW + 3 * nM + i * nN, nN);
            detail::store_side(s.sigmahat_n, m, e, i, sh);
        }
    }
    for (std::size_t f = 0; f < m.num_faces(); f++)
    {
        Eigen::VectorXd mean = Eigen::VectorXd::Zero(nN);
        for (const auto& v : zsides[f])
            mean += v;
        s.zhat.blocks[f] = mean / static_cast<double>(zsides[f].size());
    }
    return s;
}

struct biharmonic_result
{
    biharmonic_method method;
    biharmonic_solution solution;
    double matrix_asymmetry = 0.0;
    Eigen::Index unknowns = 0;
};

inline biharmonic_result
solve_biharmonic(const mesh& m, const biharmonic_method& method, const biharmonic_problem& prob)
{
    biharmonic_result res;
    res.method = method;
    double residual = 0.0;
    switch (method.variant)
    {
        case biharmonic_variant::hdg_full:
        {
            auto hs = assemble_biharmonic_hdg(m, method, prob);
            res.unknowns = hs.system.n;
            res.matrix_asymmetry = relative_asymmetry(hs.system.matrix());
            auto y = detail::solve_or_empty(hs.system, &residual);
            res.solution = recover_biharmonic(m, hs, y);
            break;
        }
        case biharmonic_variant::wg2013:
        {
            auto ws = assemble_wg2013(m, method, prob);
            res.unknowns = ws.system.n;
            res.matrix_asymmetry = relative_asymmetry(ws.system.matrix());
            auto y = detail::solve_or_empty(ws.system, &residual);
            res.solution = recover_wg2013(m, ws, y);
            break;
        }
        case biharmonic_variant::wg2014:
        {
            auto ws = assemble_wg2014(m, method, prob);
            res.unknowns = ws.system.n;
            res.matrix_asymmetry = ws.system.n ? relative_asymmetry(ws.system.matrix()) : 0.0;
            auto y = detail::solve_or_empty(ws.system, &residual);
            res.solution = recover_wg2014(m, ws, prob, y);
            break;
        }
    }
    res.solution.solver_residual = residual;
    return res;
}

inline biharmonic_result
solve_biharmonic(const mesh& m, const biharmonic_config& cfg, const biharmonic_problem& prob)
{
    return solve_biharmonic(m, resolve(cfg), prob);
}

// ---------------------------------------------------------------------------
// Residual audit: E1-E4 against every basis function, with each variant's
// numerical traces re-evaluated pointwise from the recovered fields, plus the
// transmission and boundary conditions.

inline audit_report
audit_biharmonic(const mesh& m, const biharmonic_method& method, const biharmonic_problem& prob,
                 const biharmonic_solution& s, double tol = 1e-9)
{
    const bool wg14 = method.variant == biharmonic_variant::wg2014;
    const int zdeg = wg14 ? method.z_degree : method.w_degree;
    const int zhdeg = wg14 ? method.n_degree : method.m_degree;
    const int order = operator_order(method.V, method.w_degree, method.m_degree, method.quad_order);
    const auto taus = detail::trace_taus(method);
    const int nM = method.m_degree + 1;
    const int nZh = zhdeg + 1;

    double r1 = 0, r2 = 0, r3 = 0, r4 = 0, load = 0;
    std::vector<Eigen::VectorXd> qsum(m.num_faces(), Eigen::VectorXd::Zero(nM));
    std::vector<Eigen::VectorXd> ssum(m.num_faces(), Eigen::VectorXd::Zero(nM));
    std::vector<Eigen::VectorXd> zsum(m.num_faces(), Eigen::VectorXd::Zero(nZh));
    double r_bc_u = 0.0, r_bc_q = 0.0;

    for (int e = 0; e < static_cast<int>(m.num_elements()); e++)
    {
        const auto g = element_geometry::of(m, e);
        const auto rules = element_face_rules(m, e, order);
        const auto& sig = s.sigma.blocks[e];
        const auto& z = s.z.blocks[e];
        const auto& q = s.q.blocks[e];
        const auto& u = s.u.blocks[e];
        const int nV = method.V.dimension();
        const int nW = local_space::scalar(method.w_degree).dimension();
        const int nZ = local_space::scalar(zdeg).dimension();
        Eigen::VectorXd e1 = Eigen::VectorXd::Zero(nV), e3 = Eigen::VectorXd::Zero(nV);
        Eigen::VectorXd e2 = Eigen::VectorXd::Zero(nW), e4 = Eigen::VectorXd::Zero(nZ);
        Eigen::VectorXd fw = Eigen::VectorXd::Zero(nW);
        for (const auto& qp : element_rule(g, order))
        {
            auto v = eval_vector(method.V, g, qp.xhat);
            auto w = eval_scalar(method.w_degree, g, qp.xhat);
            auto sz = eval_scalar(zdeg, g, qp.xhat);
            Eigen::Vector2d sv = v.values.transpose() * sig;
            Eigen::Vector2d qv = v.values.transpose() * q;
            double zv = sz.values.dot(z);
            double uv = w.values.dot(u);
            e1 += qp.weight * (v.values * sv + zv * v.divs);
            e3 += qp.weight * (v.values * qv + uv * v.divs);
            e2 -= qp.weight * (w.grads * sv);
            fw += qp.weight * prob.f(qp.x) * w.values;
            e4 -= qp.weight * (sz.grads * qv + zv * sz.values);
        }
        const double h = g.h;
        // traces on each side, pointwise
        boundary_data jump = boundary_data::zeros(zhdeg);
        std::array<std::vector<double>, 3> zh_pts, qh_pts, uh_pts;
        for (int i = 0; i < 3; i++)
        {
            const auto& fr = rules[i];
            for (const auto& fp : fr.points)
            {
                double uhv = s.uhat.value(fr.face, fp.t);
                double zhv;
                double qhn;
                if (wg14)
                {
                    auto w = eval_scalar(method.w_degree, g, fp.xhat);
                    double dun = (w.grads.transpose() * u).dot(fr.normal);
                    qhn = fr.sign * s.qhat_n.value(fr.face, fp.t);
                    double zv = eval_scalar_values(zdeg, fp.xhat).dot(z);
                    zhv = zv - (1.0 / h) * (dun - qhn);
                    jump.faces[i] += fp.weight / fr.length * (zhv - zv) *
                                     eval_edge(zhdeg, fp.t);
                }
                else
                {
                    zhv = s.zhat.value(fr.face, fp.t);
                    double qn = (eval_vector(method.V, g, fp.xhat).values.transpose() * q)
                                    .dot(fr.normal);
                    double zv = eval_scalar_values(zdeg, fp.xhat).dot(z);
                    double uv = eval_scalar_values(method.w_degree, fp.xhat).dot(u);
                    qhn = qn - taus.q_z.tau_on(i, h) * (zv - zhv) -
                          taus.q_u.tau_on(i, h) * (uv - uhv);
                }
                zh_pts[i].push_back(zhv);
                qh_pts[i].push_back(qhn);
                uh_pts[i].push_back(uhv);
            }
        }
        Eigen::VectorXd phi;
        if (wg14)
            phi = weakops::lifting_phi(m, e, method.V, jump, order);
        for (int i = 0; i < 3; i++)
        {
            const auto& fr = rules[i];
            for (std::size_t p = 0; p < fr.points.size(); p++)
            {
                const auto& fp = fr.points[p];
                auto v = eval_vector(method.V, g, fp.xhat);
                Eigen::VectorXd vn = v.values * fr.normal;
                Eigen::VectorXd wv = eval_scalar_values(method.w_degree, fp.xhat);
                Eigen::VectorXd zb = eval_scalar_values(zdeg, fp.xhat);
                double uv = wv.dot(u), zv = zb.dot(z);
                double sn = (v.values.transpose() * sig).dot(fr.normal);
                double shn;
                if (wg14)
                    shn = sn - (v.values.transpose() * phi).dot(fr.normal) +
                          (1.0 / (h * h * h)) * (uv - uh_pts[i][p]);
                else
                    shn = sn - taus.sigma_z.tau_on(i, h) * (zv - zh_pts[i][p]) -
                          taus.sigma_u.tau_on(i, h) * (uv - uh_pts[i][p]);
                e1 -= fp.weight * zh_pts[i][p] * vn;
                e3 -= fp.weight * uh_pts[i][p] * vn;
                e2 += fp.weight * shn * wv;
                e4 += fp.weight * qh_pts[i][p] * zb;
                Eigen::VectorXd mu = eval_edge(method.m_degree, fp.t);
                ssum[fr.face] += fp.weight * shn * mu;
                qsum[fr.face] += fp.weight * qh_pts[i][p] * mu;
                zsum[fr.face] += fp.weight * fr.sign * zh_pts[i][p] * eval_edge(zhdeg, fp.t);
                if (m.is_boundary_face(fr.face))
                    r_bc_u = std::max(r_bc_u, std::abs(uh_pts[i][p]));
            }
        }
        e2 -= fw;
        load = std::max(load, fw.cwiseAbs().maxCoeff());
        r1 = std::max(r1, e1.cwiseAbs().maxCoeff());
        r2 = std::max(r2, e2.cwiseAbs().maxCoeff());
        r3 = std::max(r3, e3.cwiseAbs().maxCoeff());
        r4 = std::max(r4, e4.cwiseAbs().maxCoeff());
    }
    double r_sigma = 0.0, r_q = 0.0, r_z = 0.0;
    for (std::size_t f = 0; f < m.num_faces(); f++)
    {
        if (m.is_boundary_face(static_cast<int>(f)))
            r_bc_q = std::max(r_bc_q, qsum[f].cwiseAbs().maxCoeff());
        else
        {
            r_sigma = std::max(r_sigma, ssum[f].cwiseAbs().maxCoeff());
            if (wg14)
                r_z = std::max(r_z, zsum[f].cwiseAbs().maxCoeff());
            else
                r_q = std::max(r_q, qsum[f].cwiseAbs().maxCoeff());
        }
    }

    audit_report rep;
    rep.scale = std::max({load, detail::max_abs(s.u.blocks), detail::max_abs(s.z.blocks),
                          detail::max_abs(s.q.blocks), detail::max_abs(s.sigma.blocks), 1.0});
    const double thr = tol * rep.scale;
    rep.entries.push_back({"sigma_equation", r1, thr});
    rep.entries.push_back({"plate_equation", r2, thr});
    rep.entries.push_back({"gradient_equation", r3, thr});
    rep.entries.push_back({"laplacian_equation", r4, thr});
    rep.entries.push_back({"sigma_transmission", r_sigma, thr});
    if (wg14)
        rep.entries.push_back({"zhat_transmission", r_z, thr});
    else
        rep.entries.push_back({"q_transmission", r_q, thr});
    rep.entries.push_back({"clamped_value", r_bc_u, thr});
    rep.entries.push_back({"clamped_slope", r_bc_q, thr});
    return rep;
}

} // namespace hybridfe
