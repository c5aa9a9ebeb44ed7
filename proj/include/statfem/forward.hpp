#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "statfem/errors.hpp"
#include "statfem/gp_kernels.hpp"
#include "statfem/linalg.hpp"
#include "statfem/mesh.hpp"
#include "statfem/quadrature.hpp"
#include "statfem/rng.hpp"

namespace statfem {

using SparseMatrix = Eigen::SparseMatrix<double>;
using SparseSolver = Eigen::SimplicialLLT<SparseMatrix>;

/// Log-diffusivity field kappa (mu = exp(kappa)), constant per element and
/// evaluated at element barycentres. `values`, when present, replaces the
/// mean function as the element-wise mean vector.
struct DiffusionField {
  RandomFieldSpec spec;
  std::optional<Eigen::VectorXd> values;

  /// Deterministic mu = 1 everywhere (kappa = 0, zero variance).
  static DiffusionField unit() { return {RandomFieldSpec{constant_mean(0.0), SqExpKernel(0.0, 1.0)}, std::nullopt}; }
};

struct SourceField {
  RandomFieldSpec spec;
};

enum class SourceCovariance { Lumped, Exact };

struct ForwardOptions {
  SourceCovariance source_cov = SourceCovariance::Lumped;
  int exact_quad_points = 10;
  /// Adds scale * (sigma_f^2 + sigma_kappa^2) I to the solution covariance.
  bool stabilise = true;
  double stabilisation_scale = 1e-3;
};

/// Prior density of the nodal unknowns, plus the quantities it was built from.
struct ForwardSolution {
  GaussianDensity density;
  SparseMatrix system_matrix_at_mean;
  GaussianDensity source;
};

/// Element matrix of int grad(phi_i) . grad(phi_j) (unit coefficient).
/// 1D elements fill the leading 2x2 block.
inline Eigen::Matrix3d element_stiffness(const Mesh& mesh, int e) {
  Eigen::Matrix3d k = Eigen::Matrix3d::Zero();
  const Element& el = mesh.element(e);
  if (mesh.dim() == 1) {
    const double len = mesh.measure(e);
    k.topLeftCorner<2, 2>() << 1.0, -1.0, -1.0, 1.0;
    k /= len;
    return k;
  }
  const Point& a = mesh.node(el[0]);
  const Point& b = mesh.node(el[1]);
  const Point& c = mesh.node(el[2]);
  const double area = Mesh::signed_area(a, b, c);
  if (std::abs(area) <= 0.0) throw NumericalError("element_stiffness: degenerate element " + std::to_string(e));
  Eigen::Matrix<double, 2, 3> grad;
  grad << b.y() - c.y(), c.y() - a.y(), a.y() - b.y(),  //
      c.x() - b.x(), a.x() - c.x(), b.x() - a.x();
  grad /= 2.0 * area;
  k = std::abs(area) * grad.transpose() * grad;
  return k;
}

namespace detail {

inline void check_kappa(const Mesh& mesh, const Eigen::VectorXd& kappa, const char* what) {
  if (kappa.size() != mesh.num_elements())
    throw InvalidArgument(std::string(what) + ": kappa must have one entry per element");
  if (!kappa.allFinite()) throw InvalidArgument(std::string(what) + ": non-finite kappa");
}

}  // namespace detail

/// A(kappa) over the non-Dirichlet nodes, element contributions exp(kappa_e) K_e.
inline SparseMatrix assemble_system(const Mesh& mesh, const Eigen::VectorXd& kappa) {
  detail::check_kappa(mesh, kappa, "assemble_system");
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(static_cast<std::size_t>(mesh.num_elements()) * 9);
  const int nv = mesh.verts_per_element();
  for (int e = 0; e < mesh.num_elements(); ++e) {
    const Eigen::Matrix3d ke = std::exp(kappa[e]) * element_stiffness(mesh, e);
    const Element& el = mesh.element(e);
    for (int a = 0; a < nv; ++a) {
      const int ra = mesh.dof(el[a]);
      if (ra < 0) continue;
      for (int b = 0; b < nv; ++b) {
        const int cb = mesh.dof(el[b]);
        if (cb >= 0) triplets.emplace_back(ra, cb, ke(a, b));
      }
    }
  }
  SparseMatrix A(mesh.num_dofs(), mesh.num_dofs());
  A.setFromTriplets(triplets.begin(), triplets.end());
  return A;
}

/// dA/dkappa_e. Because A_e = exp(kappa_e) K_e, the derivative is the
/// scattered element matrix itself.
inline SparseMatrix system_matrix_derivative(const Mesh& mesh, const Eigen::VectorXd& kappa_bar, int e) {
  detail::check_kappa(mesh, kappa_bar, "system_matrix_derivative");
  if (e < 0 || e >= mesh.num_elements()) throw InvalidArgument("system_matrix_derivative: element index out of range");
  const Eigen::Matrix3d ke = std::exp(kappa_bar[e]) * element_stiffness(mesh, e);
  std::vector<Eigen::Triplet<double>> triplets;
  const Element& el = mesh.element(e);
  for (int a = 0; a < mesh.verts_per_element(); ++a)
    for (int b = 0; b < mesh.verts_per_element(); ++b)
      if (mesh.dof(el[a]) >= 0 && mesh.dof(el[b]) >= 0) triplets.emplace_back(mesh.dof(el[a]), mesh.dof(el[b]), ke(a, b));
  SparseMatrix d(mesh.num_dofs(), mesh.num_dofs());
  d.setFromTriplets(triplets.begin(), triplets.end());
  return d;
}

/// int phi_i over every node (Dirichlet nodes included).
inline Eigen::VectorXd basis_integrals_all_nodes(const Mesh& mesh) {
  Eigen::VectorXd w = Eigen::VectorXd::Zero(mesh.num_nodes());
  const int nv = mesh.verts_per_element();
  for (int e = 0; e < mesh.num_elements(); ++e) {
    const double share = mesh.measure(e) / nv;
    for (int a = 0; a < nv; ++a) w[mesh.element(e)[a]] += share;
  }
  return w;
}

/// int phi_i over the non-Dirichlet nodes: the load vector of a unit source.
inline Eigen::VectorXd basis_integrals(const Mesh& mesh) {
  const Eigen::VectorXd all = basis_integrals_all_nodes(mesh);
  Eigen::VectorXd w(mesh.num_dofs());
  for (int i = 0; i < mesh.num_dofs(); ++i) w[i] = all[mesh.free_nodes()[i]];
  return w;
}

/// f_i = int fbar phi_i, 2-point Gauss per segment, degree-2 rule per triangle.
inline Eigen::VectorXd assemble_source_mean(const Mesh& mesh, const SourceField& f) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(mesh.num_dofs());
  const int nv = mesh.verts_per_element();
  if (mesh.dim() == 1) {
    const GaussRule rule = gauss_legendre(2);
    for (int e = 0; e < mesh.num_elements(); ++e) {
      const Element& el = mesh.element(e);
      const double x0 = mesh.node(el[0]).x();
      const double x1 = mesh.node(el[1]).x();
      const double half = 0.5 * (x1 - x0);
      for (std::size_t q = 0; q < rule.nodes.size(); ++q) {
        const double t = 0.5 * (rule.nodes[q] + 1.0);
        const double fx = f.spec.mean_fn(point1d(x0 + t * (x1 - x0))) * rule.weights[q] * std::abs(half);
        const double phi[2] = {1.0 - t, t};
        for (int a = 0; a < 2; ++a)
          if (const int d = mesh.dof(el[a]); d >= 0) out[d] += fx * phi[a];
      }
    }
    return out;
  }
  const TriangleRule rule = triangle_rule_degree2();
  for (int e = 0; e < mesh.num_elements(); ++e) {
    const Element& el = mesh.element(e);
    const double jac = 2.0 * mesh.measure(e);
    for (std::size_t q = 0; q < rule.bary.size(); ++q) {
      Point x = Point::Zero();
      for (int a = 0; a < nv; ++a) x += rule.bary[q][a] * mesh.node(el[a]);
      const double fx = f.spec.mean_fn(x) * rule.weights[q] * jac;
      for (int a = 0; a < nv; ++a)
        if (const int d = mesh.dof(el[a]); d >= 0) out[d] += fx * rule.bary[q][a];
    }
  }
  return out;
}

/// Consistent mass matrix over all nodes of a 1D mesh, integrated with
/// `quad_points` Gauss points per element.
inline Eigen::MatrixXd consistent_mass_1d(const Mesh& mesh, int quad_points) {
  if (mesh.dim() != 1) throw Unsupported("consistent_mass_1d: 1D meshes only");
  const GaussRule rule = gauss_legendre(quad_points);
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(mesh.num_nodes(), mesh.num_nodes());
  for (int e = 0; e < mesh.num_elements(); ++e) {
    const Element& el = mesh.element(e);
    const double len = mesh.measure(e);
    for (std::size_t q = 0; q < rule.nodes.size(); ++q) {
      const double t = 0.5 * (rule.nodes[q] + 1.0);
      const double w = 0.5 * rule.weights[q] * len;
      const double phi[2] = {1.0 - t, t};
      for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b) m(el[a], el[b]) += w * phi[a] * phi[b];
    }
  }
  return m;
}

/// Source covariance with the kernel interpolated by the nodal basis:
/// C_f = M K M restricted to the unknowns, M the consistent mass matrix over
/// all nodes and K the kernel Gram matrix of all nodes. 1D only.
inline Eigen::MatrixXd assemble_source_cov_exact(const Mesh& mesh, const SourceField& f, int quad_points_per_element = 10) {
  if (mesh.dim() != 1) throw Unsupported("assemble_source_cov_exact: 1D meshes only; use the lumped covariance");
  if (quad_points_per_element < 2) throw InvalidArgument("assemble_source_cov_exact: need >= 2 quadrature points");
  const Eigen::MatrixXd M = consistent_mass_1d(mesh, quad_points_per_element);
  const Eigen::MatrixXd K = cov_matrix(mesh.nodes(), f.spec.kernel);
  const Eigen::MatrixXd full = M * K * M;
  const auto& free = mesh.free_nodes();
  Eigen::MatrixXd c(free.size(), free.size());
  for (std::size_t i = 0; i < free.size(); ++i)
    for (std::size_t j = 0; j <= i; ++j) c(i, j) = c(j, i) = full(free[i], free[j]);
  return c;
}

/// Lumped-mass source covariance (int phi_i) k(x_i, x_j) (int phi_j).
inline Eigen::MatrixXd assemble_source_cov_lumped(const Mesh& mesh, const SourceField& f) {
  const Eigen::VectorXd w = basis_integrals(mesh);
  const Eigen::MatrixXd K = cov_matrix(mesh.free_node_points(), f.spec.kernel);
  return w.asDiagonal() * K * w.asDiagonal();
}

inline GaussianDensity source_density(const Mesh& mesh, const SourceField& f, const ForwardOptions& opts = {}) {
  if (mesh.num_dofs() == 0) throw InvalidArgument("source_density: mesh has no unknowns");
  GaussianDensity d;
  d.mean = assemble_source_mean(mesh, f);
  d.cov = opts.source_cov == SourceCovariance::Exact ? assemble_source_cov_exact(mesh, f, opts.exact_quad_points)
                                                     : assemble_source_cov_lumped(mesh, f);
  return d;
}

namespace detail {

inline void factor_system(SparseSolver& solver, const SparseMatrix& A) {
  solver.compute(A);
  if (solver.info() != Eigen::Success) throw NumericalError("system matrix is not symmetric positive definite");
}

/// A^-1 S A^-T for symmetric S, reusing one factorisation.
inline Eigen::MatrixXd sandwich(const SparseSolver& solver, const Eigen::MatrixXd& S) {
  const Eigen::MatrixXd left = solver.solve(S);
  Eigen::MatrixXd out = solver.solve(Eigen::MatrixXd(left.transpose()));
  symmetrize(out);
  return out;
}

}  // namespace detail

/// u | kappa ~ N(A^-1 fbar, A^-1 C_f A^-T).
inline GaussianDensity forward_fixed_kappa(const SparseMatrix& A, const GaussianDensity& f_density) {
  if (A.rows() != A.cols() || A.rows() != f_density.mean.size() || f_density.cov.rows() != A.rows())
    throw InvalidArgument("forward_fixed_kappa: dimension mismatch");
  SparseSolver solver;
  detail::factor_system(solver, A);
  GaussianDensity u;
  u.mean = solver.solve(f_density.mean);
  u.cov = f_density.cov.isZero(0.0) ? Eigen::MatrixXd::Zero(A.rows(), A.rows()) : detail::sandwich(solver, f_density.cov);
  return u;
}

/// Element log-diffusivity density N(kappa_bar(X_c), C_kappa(X_c, X_c)).
inline GaussianDensity kappa_density(const Mesh& mesh, const DiffusionField& kappa) {
  const std::vector<Point> centres = barycentres(mesh).points();
  GaussianDensity d;
  if (kappa.values) {
    detail::check_kappa(mesh, *kappa.values, "kappa_density");
    d.mean = *kappa.values;
  } else {
    d.mean = kappa.spec.mean_at(centres);
  }
  d.cov = cov_matrix(centres, kappa.spec.kernel);
  return d;
}

/// First-order perturbation prior of the nodal solution for random kappa
/// (given as an element density) and random source.
///
///   ubar = A(kbar)^-1 fbar
///   C_u  = A^-1 C_f A^-T
///        + sum_e sum_d (C_k)_ed A^-1 dA_e A^-1 (C_f + fbar fbar^T) A^-T dA_d^T A^-T
///
/// `stabilisation_variance` is the sigma_f^2 + sigma_kappa^2 the stabilising
/// diagonal shift is scaled by.
inline ForwardSolution perturbation_forward(const Mesh& mesh, const GaussianDensity& kappa, const GaussianDensity& source,
                                            double stabilisation_variance, const ForwardOptions& opts = {}) {
  detail::check_kappa(mesh, kappa.mean, "perturbation_forward");
  if (kappa.cov.rows() != mesh.num_elements() || kappa.cov.cols() != mesh.num_elements())
    throw InvalidArgument("perturbation_forward: kappa covariance must be n_e x n_e");
  const int n = mesh.num_dofs();
  if (source.mean.size() != n || source.cov.rows() != n) throw InvalidArgument("perturbation_forward: source size mismatch");

  ForwardSolution out;
  out.source = source;
  out.system_matrix_at_mean = assemble_system(mesh, kappa.mean);
  SparseSolver solver;
  detail::factor_system(solver, out.system_matrix_at_mean);

  out.density.mean = solver.solve(source.mean);
  const bool random_source = !source.cov.isZero(0.0);
  Eigen::MatrixXd cov = random_source ? detail::sandwich(solver, source.cov) : Eigen::MatrixXd::Zero(n, n);

  if (!kappa.cov.isZero(0.0)) {
    // M = A^-1 (C_f + fbar fbar^T) A^-T = first term + ubar ubar^T.
    const Eigen::MatrixXd M = cov + out.density.mean * out.density.mean.transpose();
    struct Block {
      int size = 0;
      std::array<int, 3> dofs{};
      Eigen::Matrix3d K = Eigen::Matrix3d::Zero();
    };
    std::vector<Block> blocks(mesh.num_elements());
    for (int e = 0; e < mesh.num_elements(); ++e) {
      const Eigen::Matrix3d ke = std::exp(kappa.mean[e]) * element_stiffness(mesh, e);
      const Element& el = mesh.element(e);
      Block& b = blocks[e];
      std::array<int, 3> local{};
      for (int a = 0; a < mesh.verts_per_element(); ++a)
        if (const int d = mesh.dof(el[a]); d >= 0) {
          local[b.size] = a;
          b.dofs[b.size++] = d;
        }
      for (int i = 0; i < b.size; ++i)
        for (int j = 0; j < b.size; ++j) b.K(i, j) = ke(local[i], local[j]);
    }
    // S = sum_ed C_ed dA_e M dA_d, accumulated block by block.
    Eigen::MatrixXd S = Eigen::MatrixXd::Zero(n, n);
    Eigen::Matrix3d mblock;
    for (int e = 0; e < mesh.num_elements(); ++e) {
      const Block& be = blocks[e];
      if (be.size == 0) continue;
      for (int d = 0; d < mesh.num_elements(); ++d) {
        const Block& bd = blocks[d];
        const double c = kappa.cov(e, d);
        if (bd.size == 0 || c == 0.0) continue;
        mblock.setZero();
        for (int i = 0; i < be.size; ++i)
          for (int j = 0; j < bd.size; ++j) mblock(i, j) = M(be.dofs[i], bd.dofs[j]);
        const Eigen::Matrix3d local = c * be.K * mblock * bd.K;
        for (int i = 0; i < be.size; ++i)
          for (int j = 0; j < bd.size; ++j) S(be.dofs[i], bd.dofs[j]) += local(i, j);
      }
    }
    symmetrize(S);
    cov += detail::sandwich(solver, S);
  }
  symmetrize(cov);
  if (opts.stabilise) cov.diagonal().array() += opts.stabilisation_scale * stabilisation_variance;
  out.density.cov = std::move(cov);
  return out;
}

inline ForwardSolution perturbation_forward(const Mesh& mesh, const DiffusionField& kappa, const SourceField& f,
                                            const ForwardOptions& opts = {}) {
  const double stab = f.spec.kernel.variance() + kappa.spec.kernel.variance();
  return perturbation_forward(mesh, kappa_density(mesh, kappa), source_density(mesh, f, opts), stab, opts);
}

/// Empirical mean and covariance of solutions A(kappa) u = f with kappa and
/// f drawn from their densities. Sample covariance uses the n - 1 divisor.
inline GaussianDensity mc_forward_oracle(const Mesh& mesh, const GaussianDensity& kappa, const GaussianDensity& source,
                                         int n_samples, std::uint64_t rng_seed) {
  if (n_samples < 2) throw InvalidArgument("mc_forward_oracle: need at least two samples");
  Rng rng(rng_seed);
  const GaussianSampler kappa_sampler(kappa);
  const GaussianSampler source_sampler(source);
  const int n = mesh.num_dofs();
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(n);
  Eigen::MatrixXd m2 = Eigen::MatrixXd::Zero(n, n);
  SparseSolver solver;
  bool analysed = false;
  for (int s = 0; s < n_samples; ++s) {
    const Eigen::VectorXd k = kappa_sampler.draw(rng);
    const Eigen::VectorXd f = source_sampler.draw(rng);
    const SparseMatrix A = assemble_system(mesh, k);
    if (!analysed) {
      solver.analyzePattern(A);
      analysed = true;
    }
    solver.factorize(A);
    if (solver.info() != Eigen::Success) throw NumericalError("mc_forward_oracle: solve failed for sample " + std::to_string(s));
    const Eigen::VectorXd u = solver.solve(f);
    const Eigen::VectorXd delta = u - mean;
    mean += delta / static_cast<double>(s + 1);
    m2.noalias() += delta * (u - mean).transpose();
  }
  GaussianDensity out;
  out.mean = mean;
  out.cov = m2 / static_cast<double>(n_samples - 1);
  symmetrize(out.cov);
  return out;
}

inline GaussianDensity mc_forward_oracle(const Mesh& mesh, const DiffusionField& kappa, const SourceField& f,
                                         int n_samples, std::uint64_t rng_seed) {
  return mc_forward_oracle(mesh, kappa_density(mesh, kappa), source_density(mesh, f), n_samples, rng_seed);
}

/// Green's function of -u'' = f on (0, 1) with homogeneous Dirichlet ends.
inline double greens_1d(double x, double s) { return std::min(x, s) * (1.0 - std::max(x, s)); }

/// Exact solution variance c_u(x, x) = int int g(x,s) c_f(s,t) g(x,t) ds dt.
/// Each integral is split at the kink s = x and integrated with quad_n
/// Gauss points per piece, i.e. (2 quad_n)^2 kernel evaluations.
inline double greens_variance_1d(double x, const SourceField& f, int quad_n = 24) {
  if (!(x > 0.0 && x < 1.0)) throw InvalidArgument("greens_variance_1d: x must lie in (0, 1)");
  const GaussRule left = gauss_legendre(quad_n, 0.0, x);
  const GaussRule right = gauss_legendre(quad_n, x, 1.0);
  std::vector<double> s;
  std::vector<double> w;
  for (const GaussRule* r : {&left, &right})
    for (std::size_t q = 0; q < r->nodes.size(); ++q) {
      s.push_back(r->nodes[q]);
      w.push_back(r->weights[q] * greens_1d(x, r->nodes[q]));
    }
  double total = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < s.size(); ++j) row += f.spec.kernel(point1d(s[i]), point1d(s[j])) * w[j];
    total += w[i] * row;
  }
  return total;
}

}  // namespace statfem
