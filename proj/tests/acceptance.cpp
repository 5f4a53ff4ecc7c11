// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "hybridfe/hybridfe.hpp"

#include "oracles.hpp"

using namespace hybridfe;

namespace
{

// Tolerances, pinned.
constexpr double tol_skeleton_matrix = 1e-11;
constexpr double tol_equivalence = 1e-10;
constexpr double tol_exact = 1e-11;
constexpr double tol_conservation = 1e-10;
constexpr double tol_biharmonic_equivalence = 1e-9;
constexpr double tol_quadratic_form = 1e-11;
constexpr double tol_tau2_scaling = 1e-12;
constexpr double tol_residual = 1e-9;
constexpr double min_final_rate = 1.8;

struct outcome
{
    bool pass = true;
    std::string detail;
};

std::string
fmt(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

diffusion_method
diffusion_of(diffusion_variant v, int k, std::optional<stabilization> st = std::nullopt,
             std::optional<diffusion_spaces> spaces = std::nullopt)
{
    diffusion_config c;
    c.variant = v;
    c.k = k;
    c.stab = st;
    c.spaces = spaces;
    return resolve(c);
}

biharmonic_method
biharmonic_of(biharmonic_variant v, int k)
{
    biharmonic_config c;
    c.variant = v;
    c.k = k;
    return resolve(c);
}

const std::vector<diffusion_variant> diffusion_variants = {
    diffusion_variant::hdg_fc,      diffusion_variant::hdg_fa,           diffusion_variant::mixed_bdm,
    diffusion_variant::mixed_rt,    diffusion_variant::wg2014_flux,      diffusion_variant::wg2015_polytopal,
    diffusion_variant::wg2015_ls};

dof_map
skeleton_only(const diffusion_solution& s)
{
    auto all = to_dof_map(s);
    return {{*all.find("uhat")}};
}

/// Condensed WG (u, uhat) systems of the mixed variants against the
/// unstabilized HDG condensation: Schur complement onto uhat, entrywise.
outcome
criterion_1()
{
    outcome o;
    double worst_matrix = 0.0, worst_rhs = 0.0, worst_solution = 0.0;
    for (auto v : {diffusion_variant::mixed_bdm, diffusion_variant::mixed_rt})
        for (int k : {1, 2})
            for (int n : {1, 2, 4})
                for (const auto& name : {"D2", "D3"})
                {
                    auto m = generate_structured(n);
                    auto method = diffusion_of(v, k);
                    auto prob = cases::by_name(name).diffusion();

                    auto ws = assemble_wg_condensed(m, method, prob);
                    Eigen::MatrixXd A(ws.system.matrix());
                    const Eigen::Index nu = ws.skeleton_shift, ns = A.rows() - nu;
                    Eigen::PartialPivLU<Eigen::MatrixXd> Auu(A.topLeftCorner(nu, nu));
                    Eigen::MatrixXd S = A.bottomRightCorner(ns, ns) -
                                        A.bottomLeftCorner(ns, nu) * Auu.solve(A.topRightCorner(nu, ns));
                    Eigen::VectorXd g = ws.system.rhs.tail(ns) -
                                        A.bottomLeftCorner(ns, nu) * Auu.solve(ws.system.rhs.head(nu));

                    auto cs = assemble_hdg(m, method, prob);
                    Eigen::MatrixXd K(cs.system.matrix());
                    if (K.rows() != ns)
                    {
                        o.pass = false;
                        o.detail = "skeleton sizes differ";
                        return o;
                    }
                    // align face blocks of the two numberings
                    std::vector<Eigen::Index> perm(ns);
                    const int b = cs.layout.block();
                    for (std::size_t f = 0; f < m.num_faces(); f++)
                        if (cs.layout.offset[f] >= 0)
                            for (int l = 0; l < b; l++)
                                perm[cs.layout.offset[f] + l] = ws.layout.offset[f] + l;
                    const double scale = std::max(K.cwiseAbs().maxCoeff(), 1e-300);
                    for (Eigen::Index i = 0; i < ns; i++)
                    {
                        for (Eigen::Index j = 0; j < ns; j++)
                            worst_matrix = std::max(worst_matrix, std::abs(K(i, j) - S(perm[i], perm[j])) / scale);
                        worst_rhs = std::max(worst_rhs, std::abs(cs.system.rhs[i] - g[perm[i]]) /
                                                            std::max(cs.system.rhs.cwiseAbs().maxCoeff(), 1e-300));
                    }

                    auto wg = solve_diffusion(m, method, prob).solution;
                    auto hdg = recover_local(m, cs, solve_direct(cs.system).solution);
                    auto rep = equivalence_check(to_dof_map(wg), to_dof_map(hdg), tol_equivalence);
                    worst_solution = std::max(worst_solution, rep.max_relative());
                }
    o.pass = worst_matrix <= tol_skeleton_matrix && worst_rhs <= tol_skeleton_matrix &&
             worst_solution <= tol_equivalence;
    o.detail = "skeleton matrix rel " + fmt(worst_matrix) + ", rhs rel " + fmt(worst_rhs) + " (tol " +
               fmt(tol_skeleton_matrix) + "); solution rel " + fmt(worst_solution) + " (tol " +
               fmt(tol_equivalence) + ")";
    return o;
}

/// Matched pairs solved through their own pipelines.
outcome
pairwise(diffusion_variant wg, const std::function<diffusion_method(const diffusion_method&)>& partner)
{
    double worst = 0.0;
    for (int k : {1, 2})
        for (int n : {2, 4})
            for (const auto& name : {"D2", "D3"})
            {
                auto m = generate_structured(n);
                auto prob = cases::by_name(name).diffusion();
                auto a = diffusion_of(wg, k);
                auto b = partner(a);
                auto ra = solve_diffusion(m, a, prob).solution;
                auto rb = solve_diffusion(m, b, prob).solution;
                worst = std::max(worst, equivalence_check(to_dof_map(ra), to_dof_map(rb), tol_equivalence).max_relative());
            }
    return {worst <= tol_equivalence, "max rel discrepancy in q, u, uhat " + fmt(worst) + " (tol " +
                                          fmt(tol_equivalence) + ")"};
}

outcome
criterion_2()
{
    return pairwise(diffusion_variant::wg2014_flux, [](const diffusion_method& a) {
        return diffusion_of(diffusion_variant::hdg_fc, a.k, stabilization{stab_kind::ls_projection, 1.0, false},
                            a.spaces);
    });
}

outcome
criterion_3()
{
    return pairwise(diffusion_variant::wg2015_polytopal, [](const diffusion_method& a) {
        return diffusion_of(diffusion_variant::hdg_fa, a.k, stabilization{stab_kind::scalar_over_h, 1.0, false},
                            a.spaces);
    });
}

outcome
criterion_4()
{
    double worst = 0.0, gap = 0.0;
    for (int k : {1, 2})
        for (int n : {2, 4})
        {
            auto m = generate_structured(n);
            auto flux = diffusion_of(diffusion_variant::wg2014_flux, k);
            auto ls = diffusion_of(diffusion_variant::wg2015_ls, k);
            auto d4 = cases::d4().diffusion();
            auto a = solve_diffusion(m, flux, d4).solution;
            auto b = solve_diffusion(m, ls, d4).solution;
            worst = std::max(worst, equivalence_check(skeleton_only(a), skeleton_only(b), tol_equivalence).max_relative());
            auto d3 = cases::d3().diffusion();
            auto c = solve_diffusion(m, flux, d3).solution;
            auto d = solve_diffusion(m, ls, d3).solution;
            gap = std::max(gap, equivalence_check(skeleton_only(c), skeleton_only(d), tol_equivalence).max_relative());
        }
    return {worst <= tol_equivalence, "piecewise-constant uhat rel " + fmt(worst) + " (tol " + fmt(tol_equivalence) +
                                          "); smooth coefficient gap " + fmt(gap) + " (reported)"};
}

outcome
criterion_5()
{
    auto m = generate_structured(2);
    auto d1 = cases::d1();
    auto prob = d1.diffusion();
    double worst = 0.0;
    std::string bdm_note;
    for (auto v : diffusion_variants)
    {
        // BDM's W = P_{k-1} holds u = x only from k = 2
        std::vector<int> degrees = v == diffusion_variant::mixed_bdm ? std::vector<int>{2, 3} : std::vector<int>{1, 2};
        for (int k : degrees)
        {
            auto s = solve_diffusion(m, diffusion_of(v, k), prob).solution;
            for (int e = 0; e < static_cast<int>(m.num_elements()); e++)
            {
                auto g = element_geometry::of(m, e);
                for (point xh : {point(0.0, 0.0), point(0.2, 0.3), point(0.6, 0.1), point(0.0, 1.0)})
                {
                    point x = g.map.to_physical(xh);
                    worst = std::max(worst, std::abs(s.u.value(m, e, xh) - x.x()));
                    worst = std::max(worst, (s.q.vector_value(m, e, xh) - Eigen::Vector2d(-1.0, 0.0)).norm());
                }
            }
            for (int f = 0; f < static_cast<int>(m.num_faces()); f++)
                for (double t : {0.0, 0.4, 1.0})
                    worst = std::max(worst, std::abs(s.uhat.value(f, t) - m.face_point(f, t).x()));
        }
    }
    auto bdm1 = solve_diffusion(m, diffusion_of(diffusion_variant::mixed_bdm, 1), prob).solution;
    double q_bdm1 = l2_error(m, bdm1.q, *d1.exact_q(), 10);
    return {worst <= tol_exact, "max pointwise error in u, q, uhat " + fmt(worst) + " (tol " + fmt(tol_exact) +
                                    "); Mixed_BDM_Ex51 k=1 q error " + fmt(q_bdm1) + " (u not in P0)"};
}

outcome
criterion_6()
{
    auto m = generate_structured(4);
    auto prob = cases::d2().diffusion();
    double worst = 0.0;
    for (auto v : diffusion_variants)
        for (int k : {1, 2})
        {
            auto s = solve_diffusion(m, diffusion_of(v, k), prob).solution;
            double scale = 1.0;
            for (const auto& b : s.q.blocks)
                scale = std::max(scale, b.cwiseAbs().maxCoeff());
            for (int f = 0; f < static_cast<int>(m.num_faces()); f++)
            {
                const auto& face = m.face(f);
                if (face.is_boundary())
                    continue;
                Eigen::VectorXd sum = s.flux_out[face.elements[0]][face.local_index[0]] +
                                      s.flux_out[face.elements[1]][face.local_index[1]];
                worst = std::max(worst, sum.cwiseAbs().maxCoeff() / scale);
            }
        }
    return {worst <= tol_conservation, "max interior flux moment " + fmt(worst) + " (tol " + fmt(tol_conservation) + ")"};
}

outcome
criterion_7()
{
    biharmonic_problem p{[](const point& x) { return 1.0 + x.x() * x.y(); }};
    double worst = 0.0;
    for (int k : {1, 2})
        for (int n : {1, 2})
        {
            auto m = generate_structured(n);
            auto method = biharmonic_of(biharmonic_variant::wg2013, k);
            auto condensed = solve_biharmonic(m, method, p).solution;
            auto hs = assemble_biharmonic_hdg(m, method, p);
            auto four = recover_biharmonic(m, hs, solve_direct(hs.system).solution);
            worst = std::max(worst, equivalence_check(to_dof_map(condensed), to_dof_map(four),
                                                      tol_biharmonic_equivalence)
                                        .max_relative());
        }
    return {worst <= tol_biharmonic_equivalence,
            "max rel discrepancy " + fmt(worst) + " (tol " + fmt(tol_biharmonic_equivalence) + ")"};
}

outcome
criterion_8()
{
    mesh m({{0.3, 0.1}, {1.4, 0.4}, {0.6, 1.2}}, {{0, 1, 2}});
    auto method = biharmonic_of(biharmonic_variant::wg2014, 2);
    method.quad_order = 10;
    auto el = wg2014_element_matrices(m, 0, method, [](const point&) { return 0.0; });
    std::mt19937 rng(2024);
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    double worst_form = 0.0;
    for (int trial = 0; trial < 20; trial++)
    {
        Eigen::VectorXd y(el.size());
        for (int i = 0; i < y.size(); i++)
            y[i] = U(rng);
        oracle::wg2014_tuple t{y.head(el.nw), boundary_data::zeros(method.m_degree),
                               boundary_data::zeros(method.n_degree)};
        for (int i = 0; i < 3; i++)
        {
            t.what.faces[i] = y.segment(el.nw + i * el.nm, el.nm);
            t.What.faces[i] = y.segment(el.nw + 3 * el.nm + i * el.nn, el.nn);
        }
        const double ref = oracle::wg2014_form(m, 0, method, t, t);
        worst_form = std::max(worst_form, std::abs(y.dot(el.matrix() * y) - ref) / std::max(1.0, std::abs(ref)));
    }
    double worst_ratio = 0.0, worst_shape = 0.0;
    for (const auto& s : oracle::wg2014_tau2_scaling(method, generate_structured(1), 3))
    {
        worst_ratio = std::max(worst_ratio, std::abs(s.ratio - 8.0) / 8.0);
        worst_shape = std::max(worst_shape, s.residual);
    }
    return {worst_form <= tol_quadratic_form && worst_ratio <= tol_tau2_scaling && worst_shape <= tol_tau2_scaling,
            "form rel " + fmt(worst_form) + " over 20 tuples (tol " + fmt(tol_quadratic_form) +
                "); tau2 ratio rel dev from 8 " + fmt(worst_ratio) + ", block shape " + fmt(worst_shape) +
                " (tol " + fmt(tol_tau2_scaling) + ")"};
}

outcome
criterion_9()
{
    auto m = generate_structured(4);
    int solved = 0;
    double worst = 0.0;
    std::string failed;
    auto note = [&](const audit_report& rep, const std::string& label) {
        solved++;
        for (const auto& e : rep.entries)
        {
            worst = std::max(worst, e.value / e.threshold);
            if (!e.pass() && failed.empty())
                failed = label + " " + e.name;
        }
    };
    for (const auto& name : {"D1", "D2", "D3", "D4"})
        for (auto v : diffusion_variants)
            for (int k : {1, 2})
            {
                auto method = diffusion_of(v, k);
                auto prob = cases::by_name(name).diffusion();
                auto s = solve_diffusion(m, method, prob).solution;
                note(audit_diffusion(m, method, prob, s, tol_residual),
                     std::string(name) + " " + to_string(v) + " k=" + std::to_string(k));
            }
    for (const auto& name : {"B1", "B2"})
        for (auto [v, k] : {std::pair{biharmonic_variant::hdg_full, 1}, std::pair{biharmonic_variant::hdg_full, 2},
                            std::pair{biharmonic_variant::wg2013, 1}, std::pair{biharmonic_variant::wg2013, 2},
                            std::pair{biharmonic_variant::wg2014, 2}, std::pair{biharmonic_variant::wg2014, 3}})
        {
            auto method = biharmonic_of(v, k);
            auto prob = cases::by_name(name).biharmonic();
            auto s = solve_biharmonic(m, method, prob).solution;
            note(audit_biharmonic(m, method, prob, s, tol_residual),
                 std::string(name) + " " + to_string(v) + " k=" + std::to_string(k));
        }
    return {failed.empty(), std::to_string(solved) + " solves, worst residual/threshold " + fmt(worst) +
                                (failed.empty() ? "" : ", first failure " + failed)};
}

outcome
criterion_10()
{
    auto d = convergence_study(cases::d2(), diffusion_of(diffusion_variant::wg2015_polytopal, 1),
                               generate_structured(2), 4);
    auto rate = d.rate_u(d.rows.size() - 1);
    bool ok = rate && *rate >= min_final_rate;
    auto b = convergence_study(cases::b2(), biharmonic_of(biharmonic_variant::wg2014, 2), generate_structured(2), 3);
    bool decreasing = true;
    for (std::size_t i = 1; i < b.rows.size(); i++)
        decreasing = decreasing && b.rows[i].err_u < b.rows[i - 1].err_u;
    std::string errs;
    for (const auto& r : b.rows)
        errs += (errs.empty() ? "" : " > ") + fmt(r.err_u);
    return {ok && decreasing, "D2 final rate_u " + (rate ? fmt(*rate) : std::string("none")) + " (min " +
                                  fmt(min_final_rate) + "); B2 err_u " + errs};
}

outcome
criterion_11()
{
    auto run = [] {
        std::string out;
        out += convergence_study(cases::d3(), diffusion_of(diffusion_variant::wg2015_ls, 2), generate_structured(2), 3)
                   .csv();
        out += convergence_study(cases::b2(), biharmonic_of(biharmonic_variant::hdg_full, 2), generate_structured(2), 2)
                   .csv();
        return out;
    };
    auto a = run(), b = run();
    return {a == b && !a.empty(), std::to_string(a.size()) + " CSV bytes, " + (a == b ? "identical" : "different")};
}

} // namespace

int
main()
{
    struct criterion
    {
        int id;
        const char* name;
        outcome (*check)();
    };
    const criterion all[] = {
        {1, "mixed variants: condensed WG equals unstabilized HDG condensation", criterion_1},
        {2, "WG2014_FluxForm equals HDG_Fc + LS projection", criterion_2},
        {3, "WG2015_Polytopal equals HDG_Fa + rho/h", criterion_3},
        {4, "WG2014_FluxForm equals WG2015_LS for piecewise-constant a", criterion_4},
        {5, "linear solution reproduced by every diffusion variant", criterion_5},
        {6, "numerical flux conservative on interior faces", criterion_6},
        {7, "WG2013 plate: condensed equals four-field path", criterion_7},
        {8, "WG2014 plate: stabilization identity and tau2 scaling", criterion_8},
        {9, "residual audits of every solved variant", criterion_9},
        {10, "convergence", criterion_10},
        {11, "determinism of CSV output", criterion_11},
    };
    int failures = 0;
    for (const auto& c : all)
    {
        auto t0 = std::chrono::steady_clock::now();
        outcome o;
        try
        {
            o = c.check();
        }
        catch (const std::exception& e)
        {
            o = {false, std::string("exception: ") + e.what()};
        }
        double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("criterion %2d %s  %s: %s [%.1fs]\n", c.id, o.pass ? "PASS" : "FAIL", c.name, o.detail.c_str(),
                    secs);
        std::fflush(stdout);
        failures += o.pass ? 0 : 1;
    }
    std::printf("%d of %zu criteria passed\n", static_cast<int>(std::size(all)) - failures, std::size(all));
    return failures == 0 ? 0 : 1;
}
