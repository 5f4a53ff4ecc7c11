#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "hybridfe/error.hpp"

namespace hybridfe
{

using point = Eigen::Vector2d;

/// Reference-to-physical map x = jacobian * xhat + translation of one triangle.
struct affine_map
{
    int element = -1;
    Eigen::Matrix2d jacobian;
    point translation;
    double determinant = 0.0;
    Eigen::Matrix2d inverse_transpose;

    point to_physical(const point& xhat) const { return jacobian * xhat + translation; }
    point to_reference(const point& x) const
    {
        return inverse_transpose.transpose() * (x - translation);
    }
};

struct mesh_face
{
    std::array<int, 2> vertices;   // canonical orientation: vertices[0] < vertices[1]
    std::array<int, 2> elements{-1, -1};
    std::array<int, 2> local_index{-1, -1};

    bool is_boundary() const { return elements[1] < 0; }
};

/// Conforming triangulation of a planar domain with a global edge skeleton.
///
/// Local face i of a triangle joins its vertices i and (i+1)%3. A face's
/// canonical normal is the clockwise rotation of (v1 - v0); the per-element
/// sign is +1 when that normal points out of the element.
class mesh
{
    std::vector<point> vertices_;
    std::vector<std::array<int, 3>> triangles_;
    std::vector<mesh_face> faces_;
    std::vector<std::array<int, 3>> element_faces_;
    std::vector<std::array<int, 3>> element_signs_;
    std::vector<int> boundary_faces_;
    std::vector<double> diameters_;
    std::vector<double> areas_;

    struct defect
    {
        int triangle;
        std::string message;
    };

    std::optional<defect> build();

public:
    mesh() = default;

    /// Validates and derives the skeleton; throws error_kind::validation.
    mesh(std::vector<point> vertices, std::vector<std::array<int, 3>> triangles)
        : vertices_(std::move(vertices)), triangles_(std::move(triangles))
    {
        if (auto d = build())
            raise(error_kind::validation,
                  "triangle " + std::to_string(d->triangle) + ": " + d->message);
    }

    static std::optional<std::pair<mesh, defect>>
    try_build(std::vector<point> vertices, std::vector<std::array<int, 3>> triangles,
              mesh& out)
    {
        mesh m;
        m.vertices_ = std::move(vertices);
        m.triangles_ = std::move(triangles);
        if (auto d = m.build())
            return std::make_pair(mesh{}, *d);
        out = std::move(m);
        return std::nullopt;
    }

    std::size_t num_vertices() const { return vertices_.size(); }
    std::size_t num_elements() const { return triangles_.size(); }
    std::size_t num_faces() const { return faces_.size(); }

    const std::vector<point>& vertices() const { return vertices_; }
    const std::vector<std::array<int, 3>>& triangles() const { return triangles_; }
    const std::vector<mesh_face>& faces() const { return faces_; }
    const std::vector<int>& boundary_faces() const { return boundary_faces_; }

    const point& vertex(int i) const { return vertices_[i]; }
    const std::array<int, 3>& triangle(int k) const { return triangles_[k]; }
    const mesh_face& face(int f) const { return faces_[f]; }
    const std::array<int, 3>& element_faces(int k) const { return element_faces_[k]; }
    const std::array<int, 3>& element_signs(int k) const { return element_signs_[k]; }
    bool is_boundary_face(int f) const { return faces_[f].is_boundary(); }

    /// Longest edge of element k.
    double diameter(int k) const { return diameters_[k]; }
    double area(int k) const { return areas_[k]; }
    double max_diameter() const
    {
        return diameters_.empty() ? 0.0 : *std::max_element(diameters_.begin(), diameters_.end());
    }

    double face_length(int f) const
    {
        return (vertices_[faces_[f].vertices[1]] - vertices_[faces_[f].vertices[0]]).norm();
    }

    /// Unit normal for the canonical orientation of face f.
    point face_normal(int f) const
    {
        point d = vertices_[faces_[f].vertices[1]] - vertices_[faces_[f].vertices[0]];
        return point(d.y(), -d.x()) / d.norm();
    }

    /// Point on face f at canonical parameter t in [0,1].
    point face_point(int f, double t) const
    {
        const auto& a = vertices_[faces_[f].vertices[0]];
        const auto& b = vertices_[faces_[f].vertices[1]];
        return a + t * (b - a);
    }

    affine_map map(int k) const
    {
        const auto& t = triangles_[k];
        affine_map m;
        m.element = k;
        m.jacobian.col(0) = vertices_[t[1]] - vertices_[t[0]];
        m.jacobian.col(1) = vertices_[t[2]] - vertices_[t[0]];
        m.translation = vertices_[t[0]];
        m.determinant = m.jacobian.determinant();
        m.inverse_transpose = m.jacobian.inverse().transpose();
        return m;
    }

    point centroid(int k) const
    {
        const auto& t = triangles_[k];
        return (vertices_[t[0]] + vertices_[t[1]] + vertices_[t[2]]) / 3.0;
    }

    friend bool operator==(const mesh& a, const mesh& b)
    {
        return a.vertices_ == b.vertices_ && a.triangles_ == b.triangles_;
    }
};

inline std::optional<mesh::defect>
mesh::build()
{
    const int nv = static_cast<int>(vertices_.size());
    const int nt = static_cast<int>(triangles_.size());
    if (nv < 3)
        return defect{-1, "mesh needs at least 3 vertices"};
    if (nt < 1)
        return defect{-1, "mesh needs at least one triangle"};

    for (int k = 0; k < nt; k++)
    {
        for (int v : triangles_[k])
            if (v < 0 || v >= nv)
                return defect{k, "vertex index " + std::to_string(v) + " out of range"};
        const auto& t = triangles_[k];
        if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2])
            return defect{k, "repeated vertex"};
        point e1 = vertices_[t[1]] - vertices_[t[0]];
        point e2 = vertices_[t[2]] - vertices_[t[0]];
        double twice_area = e1.x() * e2.y() - e1.y() * e2.x();
        double scale = std::max({e1.squaredNorm(), e2.squaredNorm(), 1e-300});
        if (std::abs(twice_area) <= 1e-14 * scale)
            return defect{k, "zero area"};
        if (twice_area < 0.0)
            return defect{k, "negative area"};
    }

    faces_.clear();
    element_faces_.assign(nt, {-1, -1, -1});
    element_signs_.assign(nt, {0, 0, 0});
    diameters_.assign(nt, 0.0);
    areas_.assign(nt, 0.0);

    std::map<std::pair<int, int>, int> lookup;
    for (int k = 0; k < nt; k++)
    {
        const auto& t = triangles_[k];
        for (int i = 0; i < 3; i++)
        {
            int a = t[i], b = t[(i + 1) % 3];
            auto key = std::minmax(a, b);
            auto it = lookup.find({key.first, key.second});
            int sign = (a < b) ? 1 : -1;
            if (it == lookup.end())
            {
                int f = static_cast<int>(faces_.size());
                lookup.emplace(std::make_pair(key.first, key.second), f);
                mesh_face face;
                face.vertices = {key.first, key.second};
                face.elements[0] = k;
                face.local_index[0] = i;
                faces_.push_back(face);
                element_faces_[k][i] = f;
            }
            else
            {
                auto& face = faces_[it->second];
                if (face.elements[1] >= 0)
                    return defect{k, "edge shared by more than two triangles"};
                int other = face.elements[0];
                int other_sign = element_signs_[other][face.local_index[0]];
                if (other_sign == sign)
                    return defect{k, "inconsistent orientation across shared edge"};
                face.elements[1] = k;
                face.local_index[1] = i;
                element_faces_[k][i] = it->second;
            }
            element_signs_[k][i] = sign;
        }
        double h = 0.0;
        for (int i = 0; i < 3; i++)
            h = std::max(h, (vertices_[t[(i + 1) % 3]] - vertices_[t[i]]).norm());
        diameters_[k] = h;
        point e1 = vertices_[t[1]] - vertices_[t[0]];
        point e2 = vertices_[t[2]] - vertices_[t[0]];
        areas_[k] = 0.5 * (e1.x() * e2.y() - e1.y() * e2.x());
    }

    boundary_faces_.clear();
    for (int f = 0; f < static_cast<int>(faces_.size()); f++)
        if (faces_[f].is_boundary())
            boundary_faces_.push_back(f);

    // hanging nodes: a vertex strictly inside a boundary edge
    std::vector<char> used(nv, 0);
    for (const auto& t : triangles_)
        for (int v : t)
            used[v] = 1;
    for (int f : boundary_faces_)
    {
        const point& a = vertices_[faces_[f].vertices[0]];
        const point& b = vertices_[faces_[f].vertices[1]];
        point d = b - a;
        double len2 = d.squaredNorm();
        for (int v = 0; v < nv; v++)
        {
            if (!used[v] || v == faces_[f].vertices[0] || v == faces_[f].vertices[1])
                continue;
            point r = vertices_[v] - a;
            double cross = d.x() * r.y() - d.y() * r.x();
            double s = d.dot(r) / len2;
            if (std::abs(cross) <= 1e-12 * len2 && s > 1e-12 && s < 1.0 - 1e-12)
                return defect{faces_[f].elements[0], "hanging node on edge (nonconforming)"};
        }
    }
    return std::nullopt;
}

/// n x n cells over [x0,x1] x [y0,y1], each cell split along its (i,j)-(i+1,j+1) diagonal.
inline mesh
generate_structured(int n, double x0 = 0.0, double x1 = 1.0, double y0 = 0.0, double y1 = 1.0)
{
    if (n < 1)
        raise(error_kind::invalid_argument, "structured mesh needs n >= 1");
    if (!(x1 > x0) || !(y1 > y0))
        raise(error_kind::invalid_argument, "degenerate rectangle");

    std::vector<point> verts;
    verts.reserve((n + 1) * (n + 1));
    for (int j = 0; j <= n; j++)
        for (int i = 0; i <= n; i++)
            verts.emplace_back(x0 + (x1 - x0) * i / n, y0 + (y1 - y0) * j / n);

    std::vector<std::array<int, 3>> tris;
    tris.reserve(2 * n * n);
    auto id = [n](int i, int j) { return j * (n + 1) + i; };
    for (int j = 0; j < n; j++)
        for (int i = 0; i < n; i++)
        {
            tris.push_back({id(i, j), id(i + 1, j), id(i + 1, j + 1)});
            tris.push_back({id(i, j), id(i + 1, j + 1), id(i, j + 1)});
        }
    return mesh(std::move(verts), std::move(tris));
}

/// Red refinement: every triangle split into four through its edge midpoints.
inline mesh
refine_uniform(const mesh& m)
{
    std::vector<point> verts = m.vertices();
    const int nv = static_cast<int>(verts.size());
    for (std::size_t f = 0; f < m.num_faces(); f++)
        verts.push_back(0.5 * (m.vertex(m.face(f).vertices[0]) + m.vertex(m.face(f).vertices[1])));

    std::vector<std::array<int, 3>> tris;
    tris.reserve(4 * m.num_elements());
    for (std::size_t k = 0; k < m.num_elements(); k++)
    {
        const auto& t = m.triangle(k);
        const auto& fs = m.element_faces(k);
        int m01 = nv + fs[0], m12 = nv + fs[1], m20 = nv + fs[2];
        tris.push_back({t[0], m01, m20});
        tris.push_back({m01, t[1], m12});
        tris.push_back({m20, m12, t[2]});
        tris.push_back({m01, m12, m20});
    }
    return mesh(std::move(verts), std::move(tris));
}

/// ASCII format: "nv nt", nv lines "x y", nt lines "i j k" (0-based, CCW).
inline void
write_mesh(std::ostream& os, const mesh& m)
{
    os << m.num_vertices() << ' ' << m.num_elements() << '\n';
    char buf[64];
    for (const auto& v : m.vertices())
    {
        std::snprintf(buf, sizeof buf, "%.17g %.17g\n", v.x(), v.y());
        os << buf;
    }
    for (const auto& t : m.triangles())
        os << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
}

inline std::string
write_mesh(const mesh& m)
{
    std::ostringstream os;
    write_mesh(os, m);
    return os.str();
}

namespace detail
{

inline std::vector<std::string>
split_tokens(const std::string& line)
{
    std::vector<std::string> out;
    std::istringstream is(line);
    std::string tok;
    while (is >> tok)
        out.push_back(tok);
    return out;
}

inline bool
parse_long(const std::string& s, long& v)
{
    auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    return r.ec == std::errc() && r.ptr == s.data() + s.size();
}

inline bool
parse_double(const std::string& s, double& v)
{
    try
    {
        std::size_t pos = 0;
        v = std::stod(s, &pos);
        return pos == s.size() && std::isfinite(v);
    }
    catch (...)
    {
        return false;
    }
}

} // namespace detail

inline mesh
read_mesh(std::istream& is)
{
    std::string line;
    int lineno = 0;
    auto fail = [&](int ln, const std::string& msg) -> void {
        raise(error_kind::parse, "line " + std::to_string(ln) + ": " + msg);
    };
    auto next = [&](std::vector<std::string>& toks) {
        if (!std::getline(is, line))
            fail(lineno + 1, "unexpected end of file");
        ++lineno;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        toks = detail::split_tokens(line);
    };

    std::vector<std::string> toks;
    next(toks);
    long nv = 0, nt = 0;
    if (toks.size() != 2 || !detail::parse_long(toks[0], nv) || !detail::parse_long(toks[1], nt))
        fail(lineno, "expected 'nv nt'");
    if (nv < 3 || nt < 1)
        fail(lineno, "malformed counts");

    std::vector<point> verts;
    verts.reserve(nv);
    for (long i = 0; i < nv; i++)
    {
        next(toks);
        double x, y;
        if (toks.size() != 2 || !detail::parse_double(toks[0], x) ||
            !detail::parse_double(toks[1], y))
            fail(lineno, "expected 'x y'");
        verts.emplace_back(x, y);
    }
    std::vector<std::array<int, 3>> tris;
    tris.reserve(nt);
    int first_tri_line = lineno + 1;
    for (long k = 0; k < nt; k++)
    {
        next(toks);
        std::array<int, 3> t{};
        if (toks.size() != 3)
            fail(lineno, "expected 'i j k'");
        for (int i = 0; i < 3; i++)
        {
            long v;
            if (!detail::parse_long(toks[i], v))
                fail(lineno, "expected integer vertex index");
            if (v < 0 || v >= nv)
                fail(lineno, "vertex index " + toks[i] + " out of range");
            t[i] = static_cast<int>(v);
        }
        tris.push_back(t);
    }
    while (std::getline(is, line))
    {
        ++lineno;
        if (!detail::split_tokens(line).empty())
            fail(lineno, "trailing content");
    }

    mesh out;
    if (auto bad = mesh::try_build(std::move(verts), std::move(tris), out))
    {
        int ln = bad->second.triangle >= 0 ? first_tri_line + bad->second.triangle : 1;
        raise(error_kind::validation,
              "line " + std::to_string(ln) + ": " + bad->second.message);
    }
    return out;
}

inline mesh
read_mesh(const std::string& text)
{
    std::istringstream is(text);
    return read_mesh(is);
}

} // namespace hybridfe
