#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <vector>

#include "statfem/errors.hpp"
#include "statfem/mesh.hpp"

namespace statfem {

/// First n points of the 2D Sobol sequence in Gray-code order, starting at (0, 0).
/// Dimension 1 is the van der Corput sequence, dimension 2 uses the
/// direction numbers m_k = 2 m_{k-1} xor m_{k-1}, m_1 = 1.
inline std::vector<Point> sobol_2d(std::size_t n) {
  constexpr int kBits = 32;
  std::array<std::uint32_t, kBits + 1> v1{};
  std::array<std::uint32_t, kBits + 1> v2{};
  std::uint32_t m = 1;
  for (int k = 1; k <= kBits; ++k) {
    v1[k] = std::uint32_t{1} << (kBits - k);
    if (k > 1) m = (m << 1) ^ m;
    v2[k] = m << (kBits - k);
  }
  std::vector<Point> pts;
  pts.reserve(n);
  std::uint32_t x = 0;
  std::uint32_t y = 0;
  const double scale = 1.0 / 4294967296.0;
  for (std::size_t i = 0; i < n; ++i) {
    pts.emplace_back(x * scale, y * scale);
    // Position of the lowest zero bit of i, 1-based.
    int c = 1;
    for (std::size_t j = i; j & 1U; j >>= 1) ++c;
    if (c > kBits) throw InvalidArgument("sobol_2d: too many points");
    x ^= v1[c];
    y ^= v2[c];
  }
  return pts;
}

/// Nested interior sensor sets on (0, 1). The 33-point set is k/34,
/// k = 1..33; the 11-point set keeps k = 2, 5, ..., 32 and the 4-point set
/// k = 8, 14, 20, 26.
inline std::vector<Point> observation_layout_1d(int n_y) {
  std::vector<int> ks;
  switch (n_y) {
    case 33:
      for (int k = 1; k <= 33; ++k) ks.push_back(k);
      break;
    case 11:
      for (int k = 2; k <= 32; k += 3) ks.push_back(k);
      break;
    case 4:
      ks = {8, 14, 20, 26};
      break;
    default:
      throw InvalidArgument("observation_layout_1d: n_y must be 4, 11 or 33");
  }
  std::vector<Point> pts;
  for (int k : ks) pts.push_back(point1d(k / 34.0));
  return pts;
}

/// Sensor nodes matched greedily to the 2D Sobol sequence: each sequence
/// point inside the domain takes the nearest mesh node not yet taken.
/// Prefixes of the result are the smaller sets.
inline std::vector<Point> observation_layout_2d(const Mesh& mesh, int n_y) {
  if (mesh.dim() != 2) throw InvalidArgument("observation_layout_2d: 2D mesh required");
  if (n_y < 1 || n_y > mesh.num_nodes()) throw InvalidArgument("observation_layout_2d: n_y exceeds the node count");
  std::vector<bool> taken(mesh.num_nodes(), false);
  std::vector<Point> out;
  const std::size_t budget = 64 * static_cast<std::size_t>(mesh.num_nodes()) + 1024;
  const std::vector<Point> seq = sobol_2d(budget);
  for (const Point& p : seq) {
    if (static_cast<int>(out.size()) == n_y) break;
    if (!locate(mesh, p, 1e-12)) continue;
    int best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (int i = 0; i < mesh.num_nodes(); ++i) {
      if (taken[i]) continue;
      const double d = (mesh.node(i) - p).squaredNorm();
      if (d < best_d) best_d = d, best = i;
    }
    taken[best] = true;
    out.push_back(mesh.node(best));
  }
  if (static_cast<int>(out.size()) != n_y) throw NumericalError("observation_layout_2d: sequence exhausted");
  return out;
}

}  // namespace statfem
