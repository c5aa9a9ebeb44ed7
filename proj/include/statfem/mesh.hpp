#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "statfem/errors.hpp"

namespace statfem {

/// Coordinates are always stored in 2D; 1D meshes keep y = 0.
using Point = Eigen::Vector2d;

inline Point point1d(double x) { return {x, 0.0}; }

/// Vertex indices of one element; segments use the first two slots and
/// leave the third at -1.
using Element = std::array<int, 3>;

/// Conforming simplicial mesh (segments in 1D, triangles in 2D) with
/// per-node Dirichlet tags. Immutable after construction.
///
/// Invariants checked on construction: element indices refer to existing
/// nodes, elements have positive measure, Dirichlet nodes lie on the
/// boundary. Degrees of freedom are the non-Dirichlet nodes, numbered in
/// increasing node order.
class Mesh {
 public:
  Mesh(int dim, std::vector<Point> nodes, std::vector<Element> elements, std::vector<bool> dirichlet)
      : dim_(dim), nodes_(std::move(nodes)), elements_(std::move(elements)), dirichlet_(std::move(dirichlet)) {
    validate();
  }

  [[nodiscard]] int dim() const { return dim_; }
  [[nodiscard]] int verts_per_element() const { return dim_ + 1; }
  [[nodiscard]] int num_nodes() const { return static_cast<int>(nodes_.size()); }
  [[nodiscard]] int num_elements() const { return static_cast<int>(elements_.size()); }
  [[nodiscard]] const Point& node(int i) const { return nodes_[i]; }
  [[nodiscard]] const std::vector<Point>& nodes() const { return nodes_; }
  [[nodiscard]] const Element& element(int e) const { return elements_[e]; }
  [[nodiscard]] const std::vector<Element>& elements() const { return elements_; }
  [[nodiscard]] bool is_dirichlet(int i) const { return dirichlet_[i]; }
  [[nodiscard]] const std::vector<bool>& dirichlet() const { return dirichlet_; }

  /// Maximum element diameter.
  [[nodiscard]] double h() const { return h_; }

  /// Number of non-Dirichlet nodes (the unknowns).
  [[nodiscard]] int num_dofs() const { return static_cast<int>(free_nodes_.size()); }
  /// Unknown index of node i, or -1 for Dirichlet nodes.
  [[nodiscard]] int dof(int i) const { return dof_[i]; }
  [[nodiscard]] const std::vector<int>& free_nodes() const { return free_nodes_; }
  [[nodiscard]] std::vector<Point> free_node_points() const {
    std::vector<Point> pts;
    pts.reserve(free_nodes_.size());
    for (int i : free_nodes_) pts.push_back(nodes_[i]);
    return pts;
  }

  /// Length (1D) or area (2D) of element e.
  [[nodiscard]] double measure(int e) const {
    const Element& el = elements_[e];
    if (dim_ == 1) return std::abs(nodes_[el[1]].x() - nodes_[el[0]].x());
    return std::abs(signed_area(nodes_[el[0]], nodes_[el[1]], nodes_[el[2]]));
  }

  [[nodiscard]] double diameter(int e) const {
    const Element& el = elements_[e];
    if (dim_ == 1) return measure(e);
    double d = 0.0;
    for (int a = 0; a < 3; ++a) d = std::max(d, (nodes_[el[a]] - nodes_[el[(a + 1) % 3]]).norm());
    return d;
  }

  [[nodiscard]] double total_measure() const {
    double s = 0.0;
    for (int e = 0; e < num_elements(); ++e) s += measure(e);
    return s;
  }

  /// Nodes on the boundary: segment endpoints of degree one in 1D, endpoints
  /// of edges owned by a single triangle in 2D.
  [[nodiscard]] std::vector<bool> boundary_nodes() const {
    std::vector<bool> on(nodes_.size(), false);
    if (dim_ == 1) {
      std::vector<int> degree(nodes_.size(), 0);
      for (const Element& el : elements_) ++degree[el[0]], ++degree[el[1]];
      for (std::size_t i = 0; i < degree.size(); ++i) on[i] = degree[i] == 1;
      return on;
    }
    for (const auto& [edge, count] : edge_counts())
      if (count == 1) on[edge.first] = on[edge.second] = true;
    return on;
  }

  /// Undirected edge -> number of adjacent triangles (2D only).
  [[nodiscard]] std::map<std::pair<int, int>, int> edge_counts() const {
    std::map<std::pair<int, int>, int> counts;
    for (const Element& el : elements_)
      for (int a = 0; a < 3; ++a) ++counts[ordered(el[a], el[(a + 1) % 3])];
    return counts;
  }

  static std::pair<int, int> ordered(int a, int b) { return a < b ? std::pair{a, b} : std::pair{b, a}; }

  static double signed_area(const Point& a, const Point& b, const Point& c) {
    return 0.5 * ((b.x() - a.x()) * (c.y() - a.y()) - (c.x() - a.x()) * (b.y() - a.y()));
  }

 private:
  void validate() {
    if (dim_ != 1 && dim_ != 2) throw InvalidArgument("Mesh: dimension must be 1 or 2");
    if (elements_.empty()) throw InvalidArgument("Mesh: no elements");
    if (dirichlet_.size() != nodes_.size()) throw InvalidArgument("Mesh: one Dirichlet tag per node required");
    const int n = num_nodes();
    h_ = 0.0;
    for (int e = 0; e < num_elements(); ++e) {
      const Element& el = elements_[e];
      for (int a = 0; a < verts_per_element(); ++a)
        if (el[a] < 0 || el[a] >= n)
          throw InvalidArgument("Mesh: element " + std::to_string(e) + " refers to a missing node");
      const double m = measure(e);
      if (!(m > 0.0)) throw InvalidArgument("Mesh: element " + std::to_string(e) + " is degenerate");
      h_ = std::max(h_, diameter(e));
    }
    const std::vector<bool> boundary = boundary_nodes();
    dof_.assign(nodes_.size(), -1);
    free_nodes_.clear();
    for (int i = 0; i < n; ++i) {
      if (dirichlet_[i]) {
        if (!boundary[i]) throw InvalidArgument("Mesh: Dirichlet node " + std::to_string(i) + " is not on the boundary");
        continue;
      }
      dof_[i] = static_cast<int>(free_nodes_.size());
      free_nodes_.push_back(i);
    }
  }

  int dim_;
  std::vector<Point> nodes_;
  std::vector<Element> elements_;
  std::vector<bool> dirichlet_;
  double h_ = 0.0;
  std::vector<int> dof_;
  std::vector<int> free_nodes_;
};

/// Uniform mesh of n_e segments on (a, b), both end nodes Dirichlet.
inline Mesh build_interval_mesh(int n_e, double a = 0.0, double b = 1.0) {
  if (n_e < 1) throw InvalidArgument("build_interval_mesh: need at least one element");
  std::vector<Point> nodes(n_e + 1);
  for (int i = 0; i <= n_e; ++i) nodes[i] = point1d(a + (b - a) * static_cast<double>(i) / n_e);
  nodes[n_e] = point1d(b);
  std::vector<Element> elements(n_e);
  for (int e = 0; e < n_e; ++e) elements[e] = {e, e + 1, -1};
  std::vector<bool> dirichlet(n_e + 1, false);
  dirichlet.front() = dirichlet.back() = true;
  return Mesh(1, std::move(nodes), std::move(elements), std::move(dirichlet));
}

/// Splits every triangle into four through its edge midpoints. A midpoint is
/// Dirichlet iff its edge is a boundary edge with both endpoints Dirichlet.
inline Mesh quadrisect(const Mesh& mesh) {
  if (mesh.dim() != 2) throw InvalidArgument("quadrisect: 2D meshes only; refine intervals with build_interval_mesh");
  std::vector<Point> nodes = mesh.nodes();
  std::vector<bool> dirichlet = mesh.dirichlet();
  const auto counts = mesh.edge_counts();
  std::map<std::pair<int, int>, int> midpoint;
  for (const auto& [edge, count] : counts) {
    const int id = static_cast<int>(nodes.size());
    nodes.push_back(0.5 * (mesh.node(edge.first) + mesh.node(edge.second)));
    dirichlet.push_back(count == 1 && mesh.is_dirichlet(edge.first) && mesh.is_dirichlet(edge.second));
    midpoint[edge] = id;
  }
  std::vector<Element> elements;
  elements.reserve(4 * mesh.elements().size());
  for (const Element& el : mesh.elements()) {
    const int a = el[0], b = el[1], c = el[2];
    const int ab = midpoint.at(Mesh::ordered(a, b));
    const int bc = midpoint.at(Mesh::ordered(b, c));
    const int ca = midpoint.at(Mesh::ordered(c, a));
    elements.push_back({a, ab, ca});
    elements.push_back({ab, b, bc});
    elements.push_back({ca, bc, c});
    elements.push_back({ab, bc, ca});
  }
  return Mesh(2, std::move(nodes), std::move(elements), std::move(dirichlet));
}

/// Element barycentre coordinates, one row per element.
struct BarycentreSet {
  Eigen::MatrixXd coords;

  [[nodiscard]] std::vector<Point> points() const {
    std::vector<Point> pts(coords.rows());
    for (Eigen::Index e = 0; e < coords.rows(); ++e)
      pts[e] = coords.cols() == 1 ? point1d(coords(e, 0)) : Point(coords(e, 0), coords(e, 1));
    return pts;
  }
};

inline BarycentreSet barycentres(const Mesh& mesh) {
  BarycentreSet set{Eigen::MatrixXd(mesh.num_elements(), mesh.dim())};
  const int nv = mesh.verts_per_element();
  for (int e = 0; e < mesh.num_elements(); ++e) {
    Point c = Point::Zero();
    for (int a = 0; a < nv; ++a) c += mesh.node(mesh.element(e)[a]);
    c /= nv;
    for (int d = 0; d < mesh.dim(); ++d) set.coords(e, d) = c[d];
  }
  return set;
}

/// Containing element of a point and the values of the element's vertex
/// basis functions there.
struct Location {
  int element = -1;
  std::array<double, 3> shape{0.0, 0.0, 0.0};
};

/// Linear basis values of element e at p (barycentric coordinates).
inline std::array<double, 3> shape_values(const Mesh& mesh, int e, const Point& p) {
  const Element& el = mesh.element(e);
  if (mesh.dim() == 1) {
    const double x0 = mesh.node(el[0]).x();
    const double x1 = mesh.node(el[1]).x();
    const double t = (p.x() - x0) / (x1 - x0);
    return {1.0 - t, t, 0.0};
  }
  const Point& a = mesh.node(el[0]);
  const Point& b = mesh.node(el[1]);
  const Point& c = mesh.node(el[2]);
  const double area = Mesh::signed_area(a, b, c);
  return {Mesh::signed_area(p, b, c) / area, Mesh::signed_area(a, p, c) / area, Mesh::signed_area(a, b, p) / area};
}

/// First element containing p (closed elements, small tolerance), if any.
inline std::optional<Location> locate(const Mesh& mesh, const Point& p, double tol = 1e-12) {
  const int nv = mesh.verts_per_element();
  for (int e = 0; e < mesh.num_elements(); ++e) {
    const auto s = shape_values(mesh, e, p);
    bool inside = true;
    for (int a = 0; a < nv; ++a) inside = inside && s[a] >= -tol;
    if (!inside) continue;
    Location loc{e, s};
    for (int a = 0; a < nv; ++a) loc.shape[a] = std::clamp(loc.shape[a], 0.0, 1.0);
    return loc;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Text format
//
//   statfem-mesh v1 dim=<d>
//   nodes <n>
//   <idx> <x> [<y>] <dirichlet:0|1>
//   elements <m>
//   <idx> <n0> <n1> [<n2>]

inline void write_mesh(const Mesh& mesh, std::ostream& out) {
  out << "statfem-mesh v1 dim=" << mesh.dim() << "\n";
  out << "nodes " << mesh.num_nodes() << "\n";
  out << std::setprecision(17);
  for (int i = 0; i < mesh.num_nodes(); ++i) {
    out << i << " " << mesh.node(i).x();
    if (mesh.dim() == 2) out << " " << mesh.node(i).y();
    out << " " << (mesh.is_dirichlet(i) ? 1 : 0) << "\n";
  }
  out << "elements " << mesh.num_elements() << "\n";
  for (int e = 0; e < mesh.num_elements(); ++e) {
    out << e;
    for (int a = 0; a < mesh.verts_per_element(); ++a) out << " " << mesh.element(e)[a];
    out << "\n";
  }
}

inline void write_mesh(const Mesh& mesh, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("write_mesh: cannot open " + path.string());
  write_mesh(mesh, out);
}

inline Mesh read_mesh(std::istream& in, const std::string& source = "<stream>") {
  int line_no = 0;
  std::string line;
  auto next_line = [&]() -> std::istringstream {
    while (std::getline(in, line)) {
      ++line_no;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      return std::istringstream(line);
    }
    throw IoError(source + ": unexpected end of file after line " + std::to_string(line_no));
  };
  auto fail = [&](const std::string& msg) { return IoError(source + ":" + std::to_string(line_no) + ": " + msg); };

  std::istringstream header = next_line();
  std::string magic, version, dimtok;
  header >> magic >> version >> dimtok;
  if (magic != "statfem-mesh" || version != "v1" || dimtok.rfind("dim=", 0) != 0) throw fail("bad header");
  const int dim = std::atoi(dimtok.c_str() + 4);
  if (dim != 1 && dim != 2) throw fail("unsupported dimension");

  std::string keyword;
  int count = 0;
  std::istringstream nodes_hdr = next_line();
  if (!(nodes_hdr >> keyword >> count) || keyword != "nodes" || count < 1) throw fail("expected 'nodes <n>'");
  std::vector<Point> nodes(count);
  std::vector<bool> dirichlet(count);
  for (int i = 0; i < count; ++i) {
    std::istringstream row = next_line();
    int idx = -1, tag = -1;
    double x = 0.0, y = 0.0;
    row >> idx >> x;
    if (dim == 2) row >> y;
    row >> tag;
    if (!row || idx != i || (tag != 0 && tag != 1)) throw fail("malformed node record");
    nodes[i] = Point(x, y);
    dirichlet[i] = tag == 1;
  }
  std::istringstream elems_hdr = next_line();
  if (!(elems_hdr >> keyword >> count) || keyword != "elements" || count < 1)
    throw fail("expected 'elements <m>'");
  std::vector<Element> elements(count);
  for (int e = 0; e < count; ++e) {
    std::istringstream row = next_line();
    int idx = -1;
    Element el{-1, -1, -1};
    row >> idx;
    for (int a = 0; a <= dim; ++a) row >> el[a];
    if (!row || idx != e) throw fail("malformed element record");
    elements[e] = el;
  }
  try {
    return Mesh(dim, std::move(nodes), std::move(elements), std::move(dirichlet));
  } catch (const InvalidArgument& err) {
    throw IoError(source + ": " + err.what());
  }
}

inline Mesh read_mesh(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("read_mesh: cannot open " + path.string());
  return read_mesh(in, path.string());
}

/// Directory of bundled data files: $STATFEM_DATA_DIR, else the build-time
/// location.
inline std::filesystem::path data_dir() {
  if (const char* env = std::getenv("STATFEM_DATA_DIR"); env != nullptr && *env != '\0') return env;
#ifdef STATFEM_DATA_DIR
  return STATFEM_DATA_DIR;
#else
  return "data";
#endif
}

inline std::filesystem::path default_plate_mesh_path() { return data_dir() / "plate_with_hole.mesh"; }

/// Unit square with a circular hole: the bundled 208-element base mesh
/// refined by `refinement_level` quadrisections.
inline Mesh build_plate_with_hole(int refinement_level, const std::filesystem::path& base = default_plate_mesh_path()) {
  if (refinement_level < 0) throw InvalidArgument("build_plate_with_hole: negative refinement level");
  if (!std::filesystem::exists(base)) throw IoError("build_plate_with_hole: missing base mesh " + base.string());
  Mesh mesh = read_mesh(base);
  for (int level = 0; level < refinement_level; ++level) mesh = quadrisect(mesh);
  return mesh;
}

}  // namespace statfem
