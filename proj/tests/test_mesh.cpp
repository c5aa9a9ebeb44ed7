#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <sstream>

#include "statfem/mesh.hpp"

using namespace statfem;

namespace {

int find_node(const Mesh& m, const Point& p) {
  for (int i = 0; i < m.num_nodes(); ++i)
    if ((m.node(i) - p).norm() < 1e-14) return i;
  return -1;
}

Mesh unit_square_two_triangles(std::vector<bool> dirichlet) {
  return Mesh(2, {Point(0, 0), Point(1, 0), Point(1, 1), Point(0, 1)}, {Element{0, 1, 2}, Element{0, 2, 3}},
              std::move(dirichlet));
}

}  // namespace

TEST(IntervalMesh, TwoElements) {
  const Mesh m = build_interval_mesh(2);
  ASSERT_EQ(m.num_nodes(), 3);
  EXPECT_DOUBLE_EQ(m.node(0).x(), 0.0);
  EXPECT_DOUBLE_EQ(m.node(1).x(), 0.5);
  EXPECT_DOUBLE_EQ(m.node(2).x(), 1.0);
  EXPECT_EQ(m.num_dofs(), 1);
  EXPECT_DOUBLE_EQ(m.h(), 0.5);
  EXPECT_TRUE(m.is_dirichlet(0));
  EXPECT_TRUE(m.is_dirichlet(2));
  EXPECT_FALSE(m.is_dirichlet(1));
}

TEST(IntervalMesh, SizesUsedInTheExperiments) {
  EXPECT_EQ(build_interval_mesh(32).num_dofs(), 31);
  EXPECT_DOUBLE_EQ(build_interval_mesh(32).h(), 1.0 / 32);
  EXPECT_EQ(build_interval_mesh(128).num_dofs(), 127);
  EXPECT_DOUBLE_EQ(build_interval_mesh(128).h(), 1.0 / 128);
}

TEST(IntervalMesh, HTimesElementCountIsOne) {
  for (int n : {1, 3, 4, 7, 8, 16, 33, 64, 128, 512}) EXPECT_NEAR(build_interval_mesh(n).h() * n, 1.0, 1e-14) << n;
}

TEST(IntervalMesh, RejectsZeroElements) { EXPECT_THROW(build_interval_mesh(0), InvalidArgument); }

TEST(MeshInvariants, RejectsBadInput) {
  EXPECT_THROW(Mesh(2, {Point(0, 0), Point(1, 0), Point(0, 1)}, {Element{0, 1, 5}}, {false, false, false}), InvalidArgument);
  EXPECT_THROW(Mesh(2, {Point(0, 0), Point(1, 0), Point(2, 0)}, {Element{0, 1, 2}}, {false, false, false}), InvalidArgument);
  EXPECT_THROW(Mesh(1, {point1d(0), point1d(1)}, {Element{0, 1, -1}}, {false}), InvalidArgument);
}

TEST(MeshInvariants, DirichletMustBeOnBoundary) {
  // centre node of a 4-triangle fan is interior
  std::vector<Point> nodes{Point(0, 0), Point(1, 0), Point(1, 1), Point(0, 1), Point(0.5, 0.5)};
  std::vector<Element> els{{0, 1, 4}, {1, 2, 4}, {2, 3, 4}, {3, 0, 4}};
  EXPECT_NO_THROW(Mesh(2, nodes, els, {true, true, true, true, false}));
  EXPECT_THROW(Mesh(2, nodes, els, {false, false, false, false, true}), InvalidArgument);
}

TEST(MeshInvariants, HIsMaxDiameter) {
  const Mesh m = unit_square_two_triangles({true, true, true, true});
  EXPECT_DOUBLE_EQ(m.h(), std::sqrt(2.0));
}

TEST(Quadrisect, SingleTriangle) {
  const Mesh m(2, {Point(0, 0), Point(1, 0), Point(0, 1)}, {Element{0, 1, 2}}, {true, true, true});
  const Mesh q = quadrisect(m);
  EXPECT_EQ(q.num_elements(), 4);
  EXPECT_EQ(q.num_nodes(), 6);
  for (const Point& mid : {Point(0.5, 0), Point(0.5, 0.5), Point(0, 0.5)}) EXPECT_GE(find_node(q, mid), 0);
  for (int e = 0; e < 4; ++e) EXPECT_NEAR(q.measure(e), 0.125, 1e-15);
}

TEST(Quadrisect, DirichletTagsOnTwoTriangleSquare) {
  // bottom and right edges essential: nodes 0, 1, 2
  const Mesh q = quadrisect(unit_square_two_triangles({true, true, true, false}));
  EXPECT_TRUE(q.is_dirichlet(find_node(q, Point(0.5, 0.0))));   // bottom edge
  EXPECT_TRUE(q.is_dirichlet(find_node(q, Point(1.0, 0.5))));   // right edge
  EXPECT_FALSE(q.is_dirichlet(find_node(q, Point(0.5, 0.5))));  // diagonal, interior
  EXPECT_FALSE(q.is_dirichlet(find_node(q, Point(0.5, 1.0))));  // top, one endpoint free
  EXPECT_FALSE(q.is_dirichlet(find_node(q, Point(0.0, 0.5))));  // left, one endpoint free
  EXPECT_EQ(q.num_dofs(), 4);
}

TEST(Quadrisect, RejectsIntervals) { EXPECT_THROW(quadrisect(build_interval_mesh(4)), InvalidArgument); }

TEST(PlateWithHole, BaseMeshCounts) {
  const Mesh m = build_plate_with_hole(0);
  EXPECT_EQ(m.num_elements(), 208);
  EXPECT_EQ(m.num_nodes(), 125);
  EXPECT_EQ(m.dim(), 2);
}

TEST(PlateWithHole, RefinementCounts) {
  EXPECT_EQ(build_plate_with_hole(1).num_elements(), 832);
  EXPECT_EQ(build_plate_with_hole(2).num_elements(), 3328);
  EXPECT_EQ(build_plate_with_hole(4).num_elements(), 53248);
}

TEST(PlateWithHole, QuadrisectPreservesArea) {
  Mesh m = build_plate_with_hole(0);
  const double a0 = m.total_measure();
  for (int level = 0; level < 3; ++level) {
    m = quadrisect(m);
    EXPECT_NEAR(m.total_measure(), a0, 1e-12 * a0);
  }
}

TEST(PlateWithHole, MissingBaseFile) {
  EXPECT_THROW(build_plate_with_hole(0, "/nonexistent/plate.mesh"), IoError);
}

TEST(Barycentres, Examples) {
  const Mesh two = build_interval_mesh(2);
  EXPECT_DOUBLE_EQ(barycentres(two).coords(0, 0), 0.25);
  const Mesh tri(2, {Point(0, 0), Point(1, 0), Point(0, 1)}, {Element{0, 1, 2}}, {true, true, true});
  EXPECT_NEAR(barycentres(tri).coords(0, 0), 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(barycentres(tri).coords(0, 1), 1.0 / 3.0, 1e-15);
  const auto c32 = barycentres(build_interval_mesh(32)).points();
  ASSERT_EQ(c32.size(), 32U);
  for (int k = 0; k < 32; ++k) EXPECT_NEAR(c32[k].x(), (2.0 * k + 1) / 64.0, 1e-15);
}

TEST(Barycentres, RefinedCentresStayInOriginalDomain) {
  const Mesh base = build_plate_with_hole(0);
  const Mesh fine = quadrisect(base);
  for (const Point& c : barycentres(fine).points()) EXPECT_TRUE(locate(base, c, 1e-12).has_value());
}

TEST(Locate, ShapeValuesFormPartitionOfUnity) {
  const Mesh m = build_plate_with_hole(0);
  for (const Point& p : {Point(0.1, 0.1), Point(0.9, 0.35), Point(0.05, 0.95)}) {
    const auto loc = locate(m, p);
    ASSERT_TRUE(loc.has_value());
    EXPECT_NEAR(loc->shape[0] + loc->shape[1] + loc->shape[2], 1.0, 1e-12);
    Point r = Point::Zero();
    for (int a = 0; a < 3; ++a) r += loc->shape[a] * m.node(m.element(loc->element)[a]);
    EXPECT_NEAR((r - p).norm(), 0.0, 1e-12);
  }
  EXPECT_FALSE(locate(m, Point(0.5, 0.5)).has_value());  // hole centre
  EXPECT_FALSE(locate(m, Point(1.5, 0.5)).has_value());
}

TEST(MeshFile, RoundTrip) {
  const Mesh m = build_plate_with_hole(1);
  std::stringstream ss;
  write_mesh(m, ss);
  const Mesh r = read_mesh(ss);
  ASSERT_EQ(r.num_nodes(), m.num_nodes());
  ASSERT_EQ(r.num_elements(), m.num_elements());
  for (int i = 0; i < m.num_nodes(); ++i) {
    EXPECT_EQ(r.node(i), m.node(i));
    EXPECT_EQ(r.is_dirichlet(i), m.is_dirichlet(i));
  }
  for (int e = 0; e < m.num_elements(); ++e) EXPECT_EQ(r.element(e), m.element(e));
}

TEST(MeshFile, IntervalRoundTrip) {
  std::stringstream ss;
  write_mesh(build_interval_mesh(5), ss);
  const Mesh r = read_mesh(ss);
  EXPECT_EQ(r.dim(), 1);
  EXPECT_EQ(r.num_dofs(), 4);
}

TEST(MeshFile, MalformedInputReportsLine) {
  std::stringstream bad("statfem-mesh v1 dim=1\nnodes 2\n0 0 1\n1 oops 1\nelements 1\n0 0 1\n");
  try {
    read_mesh(bad, "bad.mesh");
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("bad.mesh:4"), std::string::npos) << e.what();
  }
  std::stringstream header("mesh v2\n");
  EXPECT_THROW(read_mesh(header), IoError);
  std::stringstream truncated("statfem-mesh v1 dim=1\nnodes 2\n0 0 1\n");
  EXPECT_THROW(read_mesh(truncated), IoError);
}

TEST(MeshFile, PlateBoundaryConditions) {
  // outer square edges essential, hole boundary free
  const Mesh m = build_plate_with_hole(0);
  const auto boundary = m.boundary_nodes();
  for (int i = 0; i < m.num_nodes(); ++i) {
    const Point& p = m.node(i);
    const bool outer = p.x() < 1e-12 || p.y() < 1e-12 || p.x() > 1 - 1e-12 || p.y() > 1 - 1e-12;
    EXPECT_EQ(m.is_dirichlet(i), outer) << i;
    if (!outer && boundary[i]) EXPECT_NEAR((p - Point(0.5, 0.5)).norm(), 0.2, 1e-9) << i;
  }
}
