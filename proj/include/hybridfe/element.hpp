#pragma once

#include <array>
#include <functional>

#include <Eigen/Dense>

#include "hybridfe/fespace.hpp"
#include "hybridfe/fields.hpp"
#include "hybridfe/mesh.hpp"

namespace hybridfe
{

/// Element matrices shared by the HDG and WG assemblers.
///
/// Index conventions: i runs over the vector test space V(K), j over the
/// scalar space W(K), l over M(F) on each local face.
struct local_operators
{
    local_space V;
    int w_degree = 0;
    int m_degree = 0;
    element_geometry geom;
    std::array<face_rule, 3> faces;
    std::vector<cell_point> cell;

    Eigen::MatrixXd mass_v;    // (v_j, v_i)
    Eigen::MatrixXd mass_w;    // (w_j, w_i)
    Eigen::MatrixXd div_vw;    // (w_j, div v_i)       nV x nW
    Eigen::MatrixXd grad_vw;   // (grad w_j, v_i)      nV x nW
    std::array<Eigen::MatrixXd, 3> trace_vm;   // <mu_l, v_i.n>_F      nV x nM
    std::array<Eigen::MatrixXd, 3> trace_vw;   // <w_j, v_i.n>_F       nV x nW
    std::array<Eigen::MatrixXd, 3> trace_wm;   // <w_i, mu_l>_F        nW x nM
    std::array<Eigen::MatrixXd, 3> trace_ww;   // <w_j, w_i>_F         nW x nW
    std::array<Eigen::MatrixXd, 3> trace_vv;   // <v_j.n, v_i.n>_F     nV x nV

    int nv() const { return V.dimension(); }
    int nw() const { return (w_degree + 1) * (w_degree + 2) / 2; }
    int nm() const { return m_degree + 1; }
};

inline int
operator_order(const local_space& V, int w_degree, int m_degree, int requested)
{
    if (requested >= 0)
        return std::min(requested, max_quadrature_order);
    return default_quadrature_order(std::max({V.max_degree(), w_degree, m_degree}));
}

inline local_operators
build_local_operators(const mesh& m, int k, const local_space& V, int w_degree, int m_degree,
                      int order = -1)
{
    check_degree(V);
    check_degree(local_space::scalar(w_degree));
    check_degree(local_space::edge(m_degree));
    order = operator_order(V, w_degree, m_degree, order);

    local_operators op;
    op.V = V;
    op.w_degree = w_degree;
    op.m_degree = m_degree;
    op.geom = element_geometry::of(m, k);
    op.faces = element_face_rules(m, k, order);
    op.cell = element_rule(op.geom, order);

    const int nV = op.nv(), nW = op.nw(), nM = op.nm();
    op.mass_v = Eigen::MatrixXd::Zero(nV, nV);
    op.mass_w = Eigen::MatrixXd::Zero(nW, nW);
    op.div_vw = Eigen::MatrixXd::Zero(nV, nW);
    op.grad_vw = Eigen::MatrixXd::Zero(nV, nW);
    for (const auto& qp : op.cell)
    {
        auto v = eval_vector(V, op.geom, qp.xhat);
        auto w = eval_scalar(w_degree, op.geom, qp.xhat);
        op.mass_v += qp.weight * v.values * v.values.transpose();
        op.mass_w += qp.weight * w.values * w.values.transpose();
        op.div_vw += qp.weight * v.divs * w.values.transpose();
        op.grad_vw += qp.weight * v.values * w.grads.transpose();
    }
    for (int f = 0; f < 3; f++)
    {
        op.trace_vm[f] = Eigen::MatrixXd::Zero(nV, nM);
        op.trace_vw[f] = Eigen::MatrixXd::Zero(nV, nW);
        op.trace_wm[f] = Eigen::MatrixXd::Zero(nW, nM);
        op.trace_ww[f] = Eigen::MatrixXd::Zero(nW, nW);
        op.trace_vv[f] = Eigen::MatrixXd::Zero(nV, nV);
        const auto& fr = op.faces[f];
        for (const auto& fp : fr.points)
        {
            Eigen::VectorXd vn = eval_vector(V, op.geom, fp.xhat).values * fr.normal;
            Eigen::VectorXd w = eval_scalar_values(w_degree, fp.xhat);
            Eigen::VectorXd mu = eval_edge(m_degree, fp.t);
            op.trace_vm[f] += fp.weight * vn * mu.transpose();
            op.trace_vw[f] += fp.weight * vn * w.transpose();
            op.trace_wm[f] += fp.weight * w * mu.transpose();
            op.trace_ww[f] += fp.weight * w * w.transpose();
            op.trace_vv[f] += fp.weight * vn * vn.transpose();
        }
    }
    return op;
}

/// (K(x) v_j, v_i) for a matrix-valued weight K.
inline Eigen::MatrixXd
weighted_vector_mass(const local_operators& op,
                     const std::function<Eigen::Matrix2d(const point&)>& weight)
{
    const int nV = op.nv();
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(nV, nV);
    for (const auto& qp : op.cell)
    {
        auto v = eval_vector(op.V, op.geom, qp.xhat);
        out += qp.weight * v.values * weight(qp.x) * v.values.transpose();
    }
    return out;
}

/// (f, w_i) for the scalar space W.
inline Eigen::VectorXd
load_vector(const local_operators& op, const scalar_function& f)
{
    Eigen::VectorXd out = Eigen::VectorXd::Zero(op.nw());
    for (const auto& qp : op.cell)
        out += qp.weight * f(qp.x) * eval_scalar_values(op.w_degree, qp.xhat);
    return out;
}

enum class stab_kind
{
    zero,
    scalar_over_h,   // tau = rho / h_K
    ls_projection,   // tau = (rho / h_K) P_M(F)
    constant,        // tau = rho
    scalar_h         // tau = rho * h_K
};

struct stabilization
{
    stab_kind kind = stab_kind::zero;
    double rho = 1.0;
    /// Restrict tau to local face 0 (single-face hybridizable layout).
    bool single_face = false;

    double tau(double h) const
    {
        switch (kind)
        {
            case stab_kind::zero: return 0.0;
            case stab_kind::scalar_over_h:
            case stab_kind::ls_projection: return rho / h;
            case stab_kind::constant: return rho;
            case stab_kind::scalar_h: return rho * h;
        }
        return 0.0;
    }

    double tau_on(int local_face, double h) const
    {
        if (single_face && local_face != 0)
            return 0.0;
        return tau(h);
    }
};

/// Matrices of s((u,uh),(w,wh)) = sum_F <tau (Pu - uh), (Pw - wh)>_F, with P
/// the identity or the L2 projection onto M(F):
///   s = u'ww w - u'wm[F] wh_F - uh_F' wm[F]' w + uh_F' mm[F] wh_F.
struct stab_blocks
{
    Eigen::MatrixXd ww;
    std::array<Eigen::MatrixXd, 3> wm;
    std::array<Eigen::MatrixXd, 3> mm;
};

inline stab_blocks
build_stabilization(const local_operators& op, const stabilization& st)
{
    stab_blocks s;
    const int nW = op.nw(), nM = op.nm();
    s.ww = Eigen::MatrixXd::Zero(nW, nW);
    for (int f = 0; f < 3; f++)
    {
        double tau = st.tau_on(f, op.geom.h);
        double len = op.faces[f].length;
        s.wm[f] = tau * op.trace_wm[f];
        s.mm[f] = tau * len * Eigen::MatrixXd::Identity(nM, nM);
        if (st.kind == stab_kind::ls_projection)
            s.ww += tau * op.trace_wm[f] * op.trace_wm[f].transpose() / len;
        else
            s.ww += tau * op.trace_ww[f];
    }
    return s;
}

} // namespace hybridfe
