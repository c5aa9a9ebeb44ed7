// Prior and posterior displacement on the plate with a hole, 64 sensors.
#include <iostream>

#include "statfem/statfem.hpp"

using namespace statfem;

int main(int argc, char** argv) {
  const int n_o = argc > 1 ? std::atoi(argv[1]) : 10;
  const Mesh mesh = build_plate_with_hole(0);
  const SourceField f{RandomFieldSpec{constant_mean(1.0), SqExpKernel(0.3, 0.15)}};
  const ForwardSolution prior = perturbation_forward(mesh, DiffusionField::unit(), f);

  const std::vector<Point> sensors = observation_layout_2d(mesh, 64);
  const TrueProcess truth = TrueProcess::plate_fine_mesh(1);
  const ObservationSet obs = sample_observations(truth, sensors, n_o, 7);
  const ProjectionMatrix P = projection_matrix(mesh, sensors);

  const LearnResult r = learn_generating_model(prior.density, P, obs, truth.noise_sigma, 3000, 0.3, 11);
  const GaussianDensity post = posterior_u(prior.density, model_from_estimate(r.summary.mean, truth.noise_sigma, sensors), P, obs);

  std::cout << "nodes " << mesh.num_nodes() << "  dofs " << mesh.num_dofs() << "  n_o " << n_o << '\n';
  std::cout << "acceptance " << r.chain.acceptance_ratio << '\n';
  for (std::size_t i = 0; i < r.chain.names.size(); ++i)
    std::cout << r.chain.names[i] << "  " << r.summary.mean[i] << " +- " << r.summary.stddev[i] << '\n';
  std::cout << "mean prior sd     " << prior.density.stddev().mean() << '\n';
  std::cout << "mean posterior sd " << post.stddev().mean() << '\n';
}
