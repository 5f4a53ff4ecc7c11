#include <algorithm>
#include <cmath>

#include <gtest/gtest.h>

#include "hybridfe/mesh.hpp"

using namespace hybridfe;

namespace
{

double
total_area(const mesh& m)
{
    double a = 0.0;
    for (std::size_t k = 0; k < m.num_elements(); k++)
        a += m.area(static_cast<int>(k));
    return a;
}

double
signed_area(const mesh& m, int k)
{
    const auto& t = m.triangle(k);
    point a = m.vertex(t[0]), b = m.vertex(t[1]), c = m.vertex(t[2]);
    return 0.5 * ((b - a).x() * (c - a).y() - (b - a).y() * (c - a).x());
}

double
longest_edge(const mesh& m, int k)
{
    const auto& t = m.triangle(k);
    double h = 0.0;
    for (int i = 0; i < 3; i++)
        h = std::max(h, (m.vertex(t[(i + 1) % 3]) - m.vertex(t[i])).norm());
    return h;
}

/// Invariants every mesh must satisfy, checked from raw vertex data.
void
expect_valid(const mesh& m)
{
    std::vector<int> owners(m.num_faces(), 0);
    for (int k = 0; k < static_cast<int>(m.num_elements()); k++)
    {
        EXPECT_GT(signed_area(m, k), 0.0);
        EXPECT_NEAR(m.diameter(k), longest_edge(m, k), 1e-15);
        for (int i = 0; i < 3; i++)
        {
            int f = m.element_faces(k)[i];
            owners[f]++;
            // the outward normal points away from the opposite vertex
            point n = m.element_signs(k)[i] * m.face_normal(f);
            point opp = m.vertex(m.triangle(k)[(i + 2) % 3]);
            EXPECT_LT(n.dot(opp - m.face_point(f, 0.5)), 0.0);
        }
    }
    for (std::size_t f = 0; f < m.num_faces(); f++)
    {
        const auto& face = m.face(static_cast<int>(f));
        EXPECT_LT(face.vertices[0], face.vertices[1]);
        EXPECT_EQ(owners[f], face.is_boundary() ? 1 : 2);
        if (!face.is_boundary())
        {
            int s0 = m.element_signs(face.elements[0])[face.local_index[0]];
            int s1 = m.element_signs(face.elements[1])[face.local_index[1]];
            EXPECT_EQ(s0, -s1);
            point n0 = s0 * m.face_normal(static_cast<int>(f));
            point n1 = s1 * m.face_normal(static_cast<int>(f));
            EXPECT_LT((n0 + n1).norm(), 1e-14);
        }
    }
    std::size_t nb = std::count_if(m.faces().begin(), m.faces().end(),
                                   [](const auto& f) { return f.is_boundary(); });
    EXPECT_EQ(nb, m.boundary_faces().size());
}

} // namespace

TEST(Mesh, StructuredOneCellCounts)
{
    auto m = generate_structured(1);
    EXPECT_EQ(m.num_elements(), 2u);
    EXPECT_EQ(m.num_faces(), 5u);
    EXPECT_EQ(m.boundary_faces().size(), 4u);
    expect_valid(m);
}

TEST(Mesh, StructuredTwoCellCounts)
{
    auto m = generate_structured(2);
    EXPECT_EQ(m.num_elements(), 8u);
    EXPECT_EQ(m.num_faces(), 16u);
    EXPECT_EQ(m.boundary_faces().size(), 8u);
    expect_valid(m);
}

TEST(Mesh, StructuredRectangleDiameter)
{
    auto m = generate_structured(1, 0.0, 2.0, 0.0, 1.0);
    ASSERT_EQ(m.num_elements(), 2u);
    for (int k = 0; k < 2; k++)
        EXPECT_NEAR(m.diameter(k), std::sqrt(5.0), 1e-15);
}

TEST(Mesh, StructuredRejectsBadInput)
{
    EXPECT_THROW(generate_structured(0), error);
    EXPECT_THROW(generate_structured(2, 1.0, 1.0, 0.0, 1.0), error);
}

TEST(Mesh, AreaSumsToDomain)
{
    for (int n : {1, 3, 5, 8})
    {
        auto m = generate_structured(n, -1.0, 2.0, 0.5, 1.5);
        EXPECT_NEAR(total_area(m), 3.0, 3.0 * 1e-13);
        expect_valid(m);
    }
}

TEST(Mesh, RefineQuadruples)
{
    auto m = generate_structured(1);
    auto r = refine_uniform(m);
    EXPECT_EQ(r.num_elements(), 8u);
    expect_valid(r);
    EXPECT_NEAR(total_area(r), total_area(m), 1e-14);
    for (int k = 0; k < static_cast<int>(r.num_elements()); k++)
    {
        // every child is similar to its parent at half the size
        EXPECT_NEAR(r.diameter(k), 0.5 * m.max_diameter(), 1e-15);
    }
}

TEST(Mesh, RefineTwice)
{
    auto m = generate_structured(1);
    auto r = refine_uniform(refine_uniform(m));
    EXPECT_EQ(r.num_elements(), 32u);
    EXPECT_NEAR(r.max_diameter(), m.max_diameter() / 4.0, 1e-14);
    expect_valid(r);
}

TEST(Mesh, RefinePreservesAreaOnDistortedMesh)
{
    auto m = read_mesh("5 4\n0 0\n1 0\n1.3 1.1\n-0.2 0.9\n0.45 0.5\n0 1 4\n1 2 4\n2 3 4\n3 0 4\n");
    double a0 = total_area(m);
    auto r = refine_uniform(m);
    EXPECT_NEAR(total_area(r), a0, 1e-14 * a0);
    EXPECT_EQ(r.num_elements(), 4 * m.num_elements());
    expect_valid(r);
}

TEST(Mesh, WriteReadRoundTrip)
{
    auto m = generate_structured(1);
    auto back = read_mesh(write_mesh(m));
    EXPECT_EQ(back.vertices(), m.vertices());
    EXPECT_EQ(back.triangles(), m.triangles());
    ASSERT_EQ(back.num_faces(), m.num_faces());
    for (std::size_t f = 0; f < m.num_faces(); f++)
        EXPECT_EQ(back.face(static_cast<int>(f)).vertices, m.face(static_cast<int>(f)).vertices);
}

TEST(Mesh, ReadRejectsClockwiseTriangle)
{
    try
    {
        read_mesh("3 1\n0 0\n1 0\n0 1\n0 2 1\n");
        FAIL() << "clockwise triangle accepted";
    }
    catch (const error& e)
    {
        EXPECT_EQ(e.kind(), error_kind::validation);
        EXPECT_NE(std::string(e.what()).find("negative area"), std::string::npos) << e.what();
        EXPECT_NE(std::string(e.what()).find("line 5"), std::string::npos) << e.what();
    }
}

TEST(Mesh, ReadRejectsOutOfRangeIndex)
{
    try
    {
        read_mesh("3 1\n0 0\n1 0\n0 1\n0 1 3\n");
        FAIL() << "index 3 accepted";
    }
    catch (const error& e)
    {
        EXPECT_EQ(e.kind(), error_kind::parse);
        EXPECT_NE(std::string(e.what()).find("line 5"), std::string::npos) << e.what();
    }
}

TEST(Mesh, ReadRejectsMalformedInput)
{
    EXPECT_THROW(read_mesh("3\n"), error);
    EXPECT_THROW(read_mesh("3 1\n0 0\n1 0\n"), error);
    EXPECT_THROW(read_mesh("3 1\n0 0\n1 x\n0 1\n0 1 2\n"), error);
    // zero area
    EXPECT_THROW(read_mesh("3 1\n0 0\n1 0\n2 0\n0 1 2\n"), error);
    // edge 0-1 used by three triangles
    EXPECT_THROW(read_mesh("5 3\n0 0\n1 0\n0 1\n0.5 -1\n0.5 1\n0 1 2\n1 0 3\n0 1 4\n"), error);
    // hanging node: vertex 4 sits on edge 1-2 of the first triangle
    EXPECT_THROW(read_mesh("5 3\n0 0\n1 0\n0 1\n1 1\n0.5 0.5\n0 1 2\n1 3 4\n4 3 2\n"), error);
}

TEST(Mesh, AffineMapHitsVertices)
{
    auto m = generate_structured(3, 0.0, 2.0, -1.0, 1.0);
    for (int k = 0; k < static_cast<int>(m.num_elements()); k++)
    {
        auto map = m.map(k);
        EXPECT_GT(map.determinant, 0.0);
        const auto& t = m.triangle(k);
        EXPECT_LT((map.to_physical({0, 0}) - m.vertex(t[0])).norm(), 1e-15);
        EXPECT_LT((map.to_physical({1, 0}) - m.vertex(t[1])).norm(), 1e-15);
        EXPECT_LT((map.to_physical({0, 1}) - m.vertex(t[2])).norm(), 1e-15);
        point x = m.centroid(k);
        EXPECT_LT((map.to_physical(map.to_reference(x)) - x).norm(), 1e-14);
    }
}
