#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include "statfem/errors.hpp"
#include "statfem/forward.hpp"
#include "statfem/gp_kernels.hpp"
#include "statfem/inference.hpp"
#include "statfem/mesh.hpp"
#include "statfem/rng.hpp"

namespace statfem {

/// Density of a Gaussian FE solution observed at points:
/// N(R fbar, R C_f R^T) with R = P A^-1. The source covariance is the
/// lumped form (int phi_i) k(x_i, x_j) (int phi_j), never formed densely;
/// its kernel rows are generated in blocks.
inline GaussianDensity projected_solution_density(const Mesh& mesh, const SourceField& f, const Eigen::VectorXd& kappa,
                                                  std::span<const Point> points, int block_rows = 512) {
  const SparseMatrix A = assemble_system(mesh, kappa);
  SparseSolver solver;
  detail::factor_system(solver, A);
  const ProjectionMatrix P = projection_matrix(mesh, points);
  // R^T = A^-1 P^T (A symmetric).
  const Eigen::MatrixXd Rt = solver.solve(Eigen::MatrixXd(P.P.transpose()));
  const Eigen::VectorXd w = basis_integrals(mesh);
  const std::vector<Point> nodes = mesh.free_node_points();
  const Eigen::MatrixXd Q = w.asDiagonal() * Rt;  // W R^T
  const auto n = static_cast<Eigen::Index>(nodes.size());
  const auto n_y = static_cast<Eigen::Index>(points.size());
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(n_y, n_y);
  Eigen::MatrixXd K;
  for (Eigen::Index start = 0; start < n; start += block_rows) {
    const Eigen::Index rows = std::min<Eigen::Index>(block_rows, n - start);
    K.resize(rows, n);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < n; ++j) K(i, j) = f.spec.kernel(nodes[start + i], nodes[j]);
    cov.noalias() += Q.middleRows(start, rows).transpose() * (K * Q);
  }
  symmetrize(cov);
  GaussianDensity out;
  out.mean = Rt.transpose() * assemble_source_mean(mesh, f);
  out.cov = std::move(cov);
  return out;
}

/// Synthetic truth behind the observations.
struct TrueProcess {
  enum class Kind { GreensGp1d, FineMeshFem, AnchorDirac };
  Kind kind = Kind::GreensGp1d;
  double noise_sigma = 0.005;

  // GreensGp1d and FineMeshFem: source of the reference solution.
  RandomFieldSpec source;
  int fine_elements_1d = 512;
  int fine_refinement = 4;

  // AnchorDirac: kappa interpolated from anchor values, deterministic source.
  std::vector<Point> anchors;
  Eigen::VectorXd anchor_values;
  SqExpKernel anchor_kernel{1.0, 0.32};
  int anchor_mesh_elements = 32;
  double anchor_source = 1.0;

  /// z ~ GP(zbar, g * c_z * g): -zbar'' = (pi^2/5) sin(pi x) + (49 pi^2/50) sin(7 pi x),
  /// c_z with sigma 0.15, ell 0.5; sigma_e^2 = 2.5e-5.
  static TrueProcess greens_gp_1d() {
    TrueProcess t;
    t.kind = Kind::GreensGp1d;
    t.noise_sigma = 0.005;
    const double pi = std::numbers::pi;
    t.source = RandomFieldSpec{[pi](const Point& x) {
                                 return pi * pi / 5.0 * std::sin(pi * x.x()) + 49.0 * pi * pi / 50.0 * std::sin(7.0 * pi * x.x());
                               },
                               SqExpKernel(0.15, 0.5)};
    return t;
  }

  /// Fine FE model on the quadrisected plate with source
  /// g ~ GP(1/2 + 1/2 sin(pi |x|) + 3 sin(7 pi |x|), k(0.1, 0.2)).
  static TrueProcess plate_fine_mesh(int refinement) {
    TrueProcess t;
    t.kind = Kind::FineMeshFem;
    t.noise_sigma = 0.005;
    t.fine_refinement = refinement;
    const double pi = std::numbers::pi;
    t.source = RandomFieldSpec{[pi](const Point& x) {
                                 const double r = x.norm();
                                 return 0.5 + 0.5 * std::sin(pi * r) + 3.0 * std::sin(7.0 * pi * r);
                               },
                               SqExpKernel(0.1, 0.2)};
    return t;
  }

  /// y = P A(kappa_z)^-1 f + e with anchors (0, .25, .5, .75, 1) and
  /// kappa_z = ln(0.7, 1, 0.7, 0.4, 0.7), sigma_e = 0.01.
  static TrueProcess anchor_dirac() {
    TrueProcess t;
    t.kind = Kind::AnchorDirac;
    t.noise_sigma = 0.01;
    for (double a : {0.0, 0.25, 0.5, 0.75, 1.0}) t.anchors.push_back(point1d(a));
    t.anchor_values.resize(5);
    t.anchor_values << std::log(0.7), std::log(1.0), std::log(0.7), std::log(0.4), std::log(0.7);
    return t;
  }
};

/// Element log-diffusivity of the anchor parameterisation: psi(X_c) kappa_a.
inline Eigen::VectorXd anchor_kappa(const Mesh& mesh, std::span<const Point> anchors, const SqExpKernel& k,
                                    const Eigen::VectorXd& anchor_values) {
  const std::vector<Point> centres = barycentres(mesh).points();
  return anchor_basis(anchors, k, centres) * anchor_values;
}

/// Noise-free density of the truth at the points (before adding sigma_e^2 I).
inline GaussianDensity true_response_density(const TrueProcess& t, std::span<const Point> points) {
  switch (t.kind) {
    case TrueProcess::Kind::GreensGp1d: {
      const Mesh fine = build_interval_mesh(t.fine_elements_1d);
      return projected_solution_density(fine, SourceField{t.source}, Eigen::VectorXd::Zero(fine.num_elements()), points);
    }
    case TrueProcess::Kind::FineMeshFem: {
      const Mesh fine = build_plate_with_hole(t.fine_refinement);
      return projected_solution_density(fine, SourceField{t.source}, Eigen::VectorXd::Zero(fine.num_elements()), points);
    }
    case TrueProcess::Kind::AnchorDirac: {
      const Mesh mesh = build_interval_mesh(t.anchor_mesh_elements);
      const Eigen::VectorXd kappa = anchor_kappa(mesh, t.anchors, t.anchor_kernel, t.anchor_values);
      const SparseMatrix A = assemble_system(mesh, kappa);
      SparseSolver solver;
      detail::factor_system(solver, A);
      const Eigen::VectorXd u = solver.solve(t.anchor_source * basis_integrals(mesh));
      const ProjectionMatrix P = projection_matrix(mesh, points);
      return GaussianDensity::deterministic(P.P * u);
    }
  }
  throw InvalidArgument("true_response_density: unknown process");
}

/// n_o readings y = z + e at the points.
inline ObservationSet sample_observations(const TrueProcess& t, std::span<const Point> points, int n_o,
                                          std::uint64_t rng_seed) {
  if (n_o < 1) throw InvalidArgument("sample_observations: n_o must be >= 1");
  if (!(t.noise_sigma >= 0.0)) throw InvalidArgument("sample_observations: noise sigma must be >= 0");
  GaussianDensity y = true_response_density(t, points);
  y.cov.diagonal().array() += t.noise_sigma * t.noise_sigma;
  Rng rng(rng_seed);
  return {std::vector<Point>(points.begin(), points.end()), GaussianSampler(y).draw(rng, n_o)};
}

}  // namespace statfem
