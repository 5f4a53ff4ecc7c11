#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "hybridfe/hybridfe.hpp"

using namespace hybridfe;

namespace
{

enum exit_code
{
    exit_ok = 0,
    exit_audit = 1,
    exit_config = 2,
    exit_solver = 3
};

int
code_of(error_kind k)
{
    switch (k)
    {
        case error_kind::singular_gram:
        case error_kind::singular_system:
        case error_kind::accuracy:
        case error_kind::ill_posed: return exit_solver;
        default: return exit_config;
    }
}

std::string
num(double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

/// One solved configuration, reduced to what the commands report.
struct solved
{
    run_config config;
    mesh m;
    dof_map dofs;
    audit_report audit;
    double asymmetry = 0.0;
    double solver_residual = 0.0;
    Eigen::Index unknowns = 0;
    std::optional<convergence_row> errors;
    bool biharmonic = false;
    std::string label;
};

inline constexpr double symmetry_tol = 1e-12;

solved
solve_config(const run_config& c)
{
    solved s{c, config_mesh(c), {}, {}, 0.0, 0.0, 0, std::nullopt, false, ""};
    auto mc = config_case(c);
    s.label = c.variant + " k=" + std::to_string(c.k) + " case=" + c.case_name;
    if (c.problem == problem_kind::diffusion)
    {
        auto method = diffusion_method_of(c);
        auto prob = mc.diffusion();
        auto res = solve_diffusion(s.m, method, prob);
        s.dofs = to_dof_map(res.solution);
        s.audit = audit_diffusion(s.m, method, prob, res.solution, c.tol_residual);
        s.asymmetry = res.matrix_asymmetry;
        s.solver_residual = res.solution.solver_residual;
        s.unknowns = res.unknowns;
        if (mc.has_exact())
            s.errors = measure(s.m, mc, res.solution, 0);
    }
    else
    {
        auto method = biharmonic_method_of(c);
        auto prob = mc.biharmonic();
        auto res = solve_biharmonic(s.m, method, prob);
        s.biharmonic = true;
        s.dofs = to_dof_map(res.solution);
        s.audit = audit_biharmonic(s.m, method, prob, res.solution, c.tol_residual);
        s.asymmetry = res.matrix_asymmetry;
        s.solver_residual = res.solution.solver_residual;
        s.unknowns = res.unknowns;
        if (mc.has_exact())
            s.errors = measure(s.m, mc, res.solution, 0);
    }
    s.audit.entries.push_back({"matrix_symmetry", s.asymmetry, symmetry_tol});
    return s;
}

std::filesystem::path
output_dir(const run_config& c)
{
    std::filesystem::path dir(c.out);
    std::filesystem::create_directories(dir);
    return dir;
}

void
write_file(const std::filesystem::path& p, const std::string& text)
{
    std::ofstream out(p, std::ios::binary);
    if (!out)
        raise(error_kind::configuration, "cannot write '" + p.string() + "'");
    out << text;
}

std::string
residual_text(const solved& s)
{
    std::ostringstream os;
    os << s.label << "\n";
    os << "unknowns " << s.unknowns << "\n";
    os << "solver_residual " << num(s.solver_residual) << "\n";
    os << "audit_scale " << num(s.audit.scale) << "\n";
    for (const auto& e : s.audit.entries)
        os << e.name << " " << num(e.value) << " " << num(e.threshold) << " "
           << (e.pass() ? "pass" : "FAIL") << "\n";
    os << (s.audit.pass() ? "PASS" : "FAIL") << "\n";
    return os.str();
}

int
cmd_run(const std::string& path)
{
    auto c = load_config(path);
    auto s = solve_config(c);
    auto dir = output_dir(c);
    convergence_table t;
    t.biharmonic = s.biharmonic;
    if (s.errors)
        t.rows.push_back(*s.errors);
    write_file(dir / "errors.csv", t.csv());
    write_file(dir / "residuals.txt", residual_text(s));
    if (!s.audit.pass())
    {
        for (const auto& e : s.audit.entries)
            if (!e.pass())
            {
                std::cerr << "hybridfe: audit failure: " << e.name << " = " << num(e.value)
                          << " > " << num(e.threshold) << "\n";
                break;
            }
        return exit_audit;
    }
    return exit_ok;
}

bool
same_mesh(const mesh& a, const mesh& b)
{
    return a.vertices() == b.vertices() && a.triangles() == b.triangles();
}

int
cmd_equiv(const std::string& path_a, const std::string& path_b, std::optional<double> tol)
{
    auto ca = load_config(path_a);
    auto cb = load_config(path_b);
    if (ca.problem != cb.problem)
        raise(error_kind::incomparable, "the two configs solve different problems");
    auto a = solve_config(ca);
    auto b = solve_config(cb);
    if (!same_mesh(a.m, b.m))
        raise(error_kind::incomparable, "the two configs use different meshes");
    auto rep = equivalence_check(a.dofs, b.dofs, tol.value_or(ca.tol_equiv));
    std::ostringstream os;
    os << "A " << a.label << "\nB " << b.label << "\n" << format_report(rep);
    write_file(output_dir(ca) / "equiv.txt", os.str());
    if (!rep.pass())
    {
        std::cerr << "hybridfe: equivalence failure: max relative discrepancy "
                  << num(rep.max_relative()) << " > " << num(rep.tol) << "\n";
        return exit_audit;
    }
    return exit_ok;
}

int
cmd_converge(const std::string& path)
{
    auto c = load_config(path);
    auto mc = config_case(c);
    auto base = config_mesh(c);
    auto dir = output_dir(c);
    convergence_table t;
    try
    {
        if (c.problem == problem_kind::diffusion)
            t = convergence_study(mc, diffusion_method_of(c), base, c.levels);
        else
            t = convergence_study(mc, biharmonic_method_of(c), base, c.levels);
    }
    catch (const convergence_error& e)
    {
        write_file(dir / "errors.csv", e.partial.csv());
        throw;
    }
    write_file(dir / "errors.csv", t.csv());

    for (std::size_t i = 1; i < t.rows.size(); i++)
    {
        const double prev = t.rows[i - 1].err_u, cur = t.rows[i].err_u;
        if (prev > saturation_level && !(cur < prev))
        {
            std::cerr << "hybridfe: audit failure: err_u not decreasing at level " << i << "\n";
            return exit_audit;
        }
    }
    if (c.rate_min)
    {
        auto r = t.rate_u(t.rows.size() - 1);
        if (r && *r < *c.rate_min)
        {
            std::cerr << "hybridfe: audit failure: final rate_u " << num(*r) << " < " << num(*c.rate_min)
                      << "\n";
            return exit_audit;
        }
    }
    return exit_ok;
}

int
cmd_mesh_gen(int n, const std::string& out)
{
    if (n < 1)
        raise(error_kind::configuration, "--n must be >= 1");
    write_file(out, write_mesh(generate_structured(n)));
    return exit_ok;
}

} // namespace

int
main(int argc, char** argv)
{
    CLI::App app{"Hybridized and weak Galerkin solvers for diffusion and clamped plates"};
    app.require_subcommand(1);

    std::string run_cfg;
    auto* run = app.add_subcommand("run", "solve one configuration, write errors.csv and residuals.txt");
    run->add_option("config", run_cfg)->required();

    std::string cfg_a, cfg_b;
    std::optional<double> tol;
    auto* equiv = app.add_subcommand("equiv", "compare two configurations DOF by DOF, write equiv.txt");
    equiv->add_option("configA", cfg_a)->required();
    equiv->add_option("configB", cfg_b)->required();
    equiv->add_option("--tol", tol, "relative tolerance (default tol.equiv of configA)");

    std::string conv_cfg;
    auto* converge = app.add_subcommand("converge", "convergence table over uniform refinements");
    converge->add_option("config", conv_cfg)->required();

    int n = 0;
    std::string mesh_out;
    auto* mesh_gen = app.add_subcommand("mesh-gen", "write a structured unit-square mesh");
    mesh_gen->add_option("--n", n)->required();
    mesh_gen->add_option("--out", mesh_out)->required();

    try
    {
        app.parse(argc, argv);
    }
    catch (const CLI::ParseError& e)
    {
        int rc = app.exit(e);
        return rc == 0 ? exit_ok : exit_config;
    }

    try
    {
        if (*run)
            return cmd_run(run_cfg);
        if (*equiv)
            return cmd_equiv(cfg_a, cfg_b, tol);
        if (*converge)
            return cmd_converge(conv_cfg);
        if (*mesh_gen)
            return cmd_mesh_gen(n, mesh_out);
    }
    catch (const error& e)
    {
        std::cerr << "hybridfe: " << to_string(e.kind()) << ": " << e.what() << "\n";
        return code_of(e.kind());
    }
    catch (const std::filesystem::filesystem_error& e)
    {
        std::cerr << "hybridfe: " << e.what() << "\n";
        return exit_config;
    }
    return exit_config;
}
