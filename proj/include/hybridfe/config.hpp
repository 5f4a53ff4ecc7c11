#pragma once

#include <cctype>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include "hybridfe/biharmonic.hpp"
#include "hybridfe/diffusion.hpp"
#include "hybridfe/error.hpp"
#include "hybridfe/mesh.hpp"
#include "hybridfe/verify.hpp"

// Run configuration: flat "key = value" lines, '#' starts a comment.
//
//   problem        diffusion | biharmonic            (default diffusion)
//   variant        variant name, e.g. WG2015_Polytopal
//   k              polynomial degree
//   rho            stabilization scale (variant's default kind)
//   stab           zero | scalar_over_h | ls_projection | constant | scalar_h
//   stab.single_face  true | false                   (biharmonic HDG_Full only)
//   space.V space.W space.M   space override, e.g. [P2]^2, RT1, P2   (HDG_* only)
//   quad.order     quadrature order (default min(2p+3, 10))
//   mesh.n | mesh.file
//   case           D1 D2 D3 D4 B1 B2
//   levels         refinement levels for converge    (default 3)
//   rate.min       converge fails if the final rate_u is below this
//   tol.equiv      default 1e-10
//   tol.residual   default 1e-9
//   out            output directory                  (default .)

namespace hybridfe
{

struct run_config
{
    problem_kind problem = problem_kind::diffusion;
    std::string variant;
    int k = 1;
    std::optional<double> rho;
    std::optional<stab_kind> stab;
    bool single_face = false;
    std::optional<std::string> space_V, space_W, space_M;
    int quad_order = -1;
    std::optional<int> mesh_n;
    std::optional<std::string> mesh_file;
    std::string case_name;
    int levels = 3;
    std::optional<double> rate_min;
    double tol_equiv = 1e-10;
    double tol_residual = 1e-9;
    std::string out = ".";
};

namespace detail
{

inline std::string
trim(const std::string& s)
{
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a])))
        a++;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1])))
        b--;
    return s.substr(a, b - a);
}

inline int
parse_int(const std::string& key, const std::string& v, int line)
{
    std::size_t used = 0;
    int out = 0;
    try
    {
        out = std::stoi(v, &used);
    }
    catch (const std::exception&)
    {
        used = 0;
    }
    if (used == 0 || used != v.size())
        raise(error_kind::parse, "line " + std::to_string(line) + ": " + key + " needs an integer, got '" + v + "'");
    return out;
}

inline double
parse_real(const std::string& key, const std::string& v, int line)
{
    std::size_t used = 0;
    double out = 0;
    try
    {
        out = std::stod(v, &used);
    }
    catch (const std::exception&)
    {
        used = 0;
    }
    if (used == 0 || used != v.size())
        raise(error_kind::parse, "line " + std::to_string(line) + ": " + key + " needs a number, got '" + v + "'");
    return out;
}

inline std::optional<stab_kind>
parse_stab_kind(const std::string& s)
{
    static const std::map<std::string, stab_kind> names = {
        {"zero", stab_kind::zero},
        {"scalar_over_h", stab_kind::scalar_over_h},
        {"ls_projection", stab_kind::ls_projection},
        {"constant", stab_kind::constant},
        {"scalar_h", stab_kind::scalar_h}};
    auto it = names.find(s);
    if (it == names.end())
        return std::nullopt;
    return it->second;
}

/// "[Pk]^2" or "RTk" for V.
inline local_space
parse_vector_space(const std::string& s)
{
    auto degree = [&](const std::string& digits) {
        if (digits.empty() || digits.find_first_not_of("0123456789") != std::string::npos)
            raise(error_kind::configuration, "cannot read vector space '" + s + "'");
        return std::stoi(digits);
    };
    if (s.rfind("RT", 0) == 0)
        return local_space::rt(degree(s.substr(2)));
    if (s.rfind("[P", 0) == 0 && s.size() > 5 && s.substr(s.size() - 3) == "]^2")
        return local_space::vector(degree(s.substr(2, s.size() - 5)));
    raise(error_kind::configuration, "cannot read vector space '" + s + "' (use [Pk]^2 or RTk)");
}

/// "Pk" or "k".
inline int
parse_scalar_degree(const std::string& s)
{
    std::string d = s.rfind("P", 0) == 0 ? s.substr(1) : s;
    if (d.empty() || d.find_first_not_of("0123456789") != std::string::npos)
        raise(error_kind::configuration, "cannot read scalar space '" + s + "' (use Pk)");
    return std::stoi(d);
}

} // namespace detail

inline run_config
parse_config(std::istream& is)
{
    run_config c;
    std::string raw;
    int line = 0;
    std::map<std::string, int> seen;
    while (std::getline(is, raw))
    {
        line++;
        if (auto hash = raw.find('#'); hash != std::string::npos)
            raw.erase(hash);
        std::string text = detail::trim(raw);
        if (text.empty())
            continue;
        auto eq = text.find('=');
        if (eq == std::string::npos)
            raise(error_kind::parse, "line " + std::to_string(line) + ": expected 'key = value'");
        std::string key = detail::trim(text.substr(0, eq));
        std::string val = detail::trim(text.substr(eq + 1));
        if (key.empty() || val.empty())
            raise(error_kind::parse, "line " + std::to_string(line) + ": empty key or value");
        if (seen.count(key))
            raise(error_kind::parse, "line " + std::to_string(line) + ": duplicate key '" + key +
                                         "' (first on line " + std::to_string(seen[key]) + ")");
        seen[key] = line;

        if (key == "problem")
        {
            if (val == "diffusion")
                c.problem = problem_kind::diffusion;
            else if (val == "biharmonic")
                c.problem = problem_kind::biharmonic;
            else
                raise(error_kind::parse, "line " + std::to_string(line) + ": unknown problem '" + val + "'");
        }
        else if (key == "variant")
            c.variant = val;
        else if (key == "k")
            c.k = detail::parse_int(key, val, line);
        else if (key == "rho")
            c.rho = detail::parse_real(key, val, line);
        else if (key == "stab")
        {
            c.stab = detail::parse_stab_kind(val);
            if (!c.stab)
                raise(error_kind::parse, "line " + std::to_string(line) + ": unknown stabilization '" + val + "'");
        }
        else if (key == "stab.single_face")
        {
            if (val != "true" && val != "false")
                raise(error_kind::parse, "line " + std::to_string(line) + ": stab.single_face is true or false");
            c.single_face = val == "true";
        }
        else if (key == "space.V")
            c.space_V = val;
        else if (key == "space.W")
            c.space_W = val;
        else if (key == "space.M")
            c.space_M = val;
        else if (key == "quad.order")
            c.quad_order = detail::parse_int(key, val, line);
        else if (key == "mesh.n")
            c.mesh_n = detail::parse_int(key, val, line);
        else if (key == "mesh.file")
            c.mesh_file = val;
        else if (key == "case")
            c.case_name = val;
        else if (key == "levels")
            c.levels = detail::parse_int(key, val, line);
        else if (key == "rate.min")
            c.rate_min = detail::parse_real(key, val, line);
        else if (key == "tol.equiv")
            c.tol_equiv = detail::parse_real(key, val, line);
        else if (key == "tol.residual")
            c.tol_residual = detail::parse_real(key, val, line);
        else if (key == "out")
            c.out = val;
        else
            raise(error_kind::parse, "line " + std::to_string(line) + ": unknown key '" + key + "'");
    }
    if (c.mesh_n && c.mesh_file)
        raise(error_kind::configuration, "give mesh.n or mesh.file, not both");
    if (!c.mesh_n && !c.mesh_file)
        raise(error_kind::configuration, "missing mesh.n or mesh.file");
    if (c.variant.empty())
        raise(error_kind::configuration, "missing variant");
    if (c.case_name.empty())
        raise(error_kind::configuration, "missing case");
    if (!(c.tol_equiv > 0.0) || !(c.tol_residual > 0.0))
        raise(error_kind::configuration, "tolerances must be positive");
    return c;
}

inline run_config
parse_config(const std::string& text)
{
    std::istringstream is(text);
    return parse_config(is);
}

inline run_config
load_config(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        raise(error_kind::configuration, "cannot open config '" + path + "'");
    return parse_config(in);
}

inline manufactured_case
config_case(const run_config& c)
{
    auto mc = cases::by_name(c.case_name);
    if (mc.problem != c.problem)
        raise(error_kind::configuration, "case " + c.case_name + " does not belong to problem " +
                                             (c.problem == problem_kind::diffusion ? "diffusion" : "biharmonic"));
    if (c.mesh_n && *c.mesh_n % mc.n_multiple != 0)
        raise(error_kind::configuration, "case " + c.case_name + " needs mesh.n divisible by " +
                                             std::to_string(mc.n_multiple));
    return mc;
}

inline mesh
config_mesh(const run_config& c)
{
    if (c.mesh_n)
    {
        if (*c.mesh_n < 1)
            raise(error_kind::configuration, "mesh.n must be >= 1");
        return generate_structured(*c.mesh_n);
    }
    std::ifstream in(*c.mesh_file);
    if (!in)
        raise(error_kind::configuration, "cannot open mesh file '" + *c.mesh_file + "'");
    return read_mesh(in);
}

inline diffusion_method
diffusion_method_of(const run_config& c)
{
    if (c.problem != problem_kind::diffusion)
        raise(error_kind::configuration, "not a diffusion config");
    auto v = parse_diffusion_variant(c.variant);
    if (!v)
        raise(error_kind::configuration, "unknown diffusion variant '" + c.variant + "'");
    diffusion_config d;
    d.variant = *v;
    d.k = c.k;
    d.quad_order = c.quad_order;
    if (c.space_V || c.space_W || c.space_M)
    {
        if (c.k < 0)
            raise(error_kind::unsupported_degree, "degree k must be >= 0");
        auto s = table_spaces(*v, c.k);
        if (c.space_V)
            s.V = detail::parse_vector_space(*c.space_V);
        if (c.space_W)
            s.w_degree = detail::parse_scalar_degree(*c.space_W);
        if (c.space_M)
            s.m_degree = detail::parse_scalar_degree(*c.space_M);
        d.spaces = s;
    }
    if (c.stab || c.rho || c.single_face)
    {
        stabilization st;
        if (c.stab)
            st.kind = *c.stab;
        else if (is_mixed(*v))
            // a positive rho asks for a stabilization the mixed variants do not have
            st.kind = c.rho && *c.rho != 0.0 ? stab_kind::scalar_over_h : stab_kind::zero;
        else if (c.rho && *c.rho == 0.0)
            st.kind = stab_kind::zero;
        else
            st.kind = resolve(diffusion_config{*v, c.k, std::nullopt, d.spaces, c.quad_order}).stab.kind;
        st.rho = c.rho.value_or(1.0);
        st.single_face = c.single_face;
        d.stab = st;
    }
    return resolve(d);
}

inline biharmonic_method
biharmonic_method_of(const run_config& c)
{
    if (c.problem != problem_kind::biharmonic)
        raise(error_kind::configuration, "not a biharmonic config");
    auto v = parse_biharmonic_variant(c.variant);
    if (!v)
        raise(error_kind::configuration, "unknown biharmonic variant '" + c.variant + "'");
    if (c.space_V || c.space_W || c.space_M)
        raise(error_kind::configuration, "space table violation: " + c.variant +
                                             " spaces are fixed by the variant");
    biharmonic_config b;
    b.variant = *v;
    b.k = c.k;
    b.quad_order = c.quad_order;
    if (c.stab || c.rho || c.single_face)
    {
        stabilization st;
        if (c.stab)
            st.kind = *c.stab;
        else if (*v == biharmonic_variant::wg2013)
            st.kind = stab_kind::scalar_h;
        else
            st.kind = stab_kind::constant;
        if (c.rho && *c.rho == 0.0 && !c.stab)
            st.kind = stab_kind::zero;
        st.rho = c.rho.value_or(1.0);
        st.single_face = c.single_face;
        b.stab = st;
    }
    return resolve(b);
}

} // namespace hybridfe
