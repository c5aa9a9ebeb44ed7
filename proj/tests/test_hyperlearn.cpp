#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "statfem/hyperlearn.hpp"

using namespace statfem;

namespace {

// log-normal density with log-mean m and log-sd s, in w
LogTarget lognormal(double m, double s) {
  return [=](const Eigen::VectorXd& w) {
    const double z = (std::log(w[0]) - m) / s;
    return -0.5 * z * z - std::log(w[0]);
  };
}

LogTarget iid_lognormal(int d) {
  return [=](const Eigen::VectorXd& w) {
    double s = 0.0;
    for (int i = 0; i < d; ++i) s += -0.5 * std::log(w[i]) * std::log(w[i]) - std::log(w[i]);
    return s;
  };
}

}  // namespace

TEST(HyperParams, Validation) {
  EXPECT_NO_THROW(HyperParamVector({"rho", "sigma_d"}, Eigen::Vector2d(1.0, 0.1)));
  EXPECT_THROW(HyperParamVector({"rho"}, Eigen::Vector2d(1.0, 0.1)), InvalidArgument);
  EXPECT_THROW(HyperParamVector({"rho", "rho"}, Eigen::Vector2d(1.0, 0.1)), InvalidArgument);
  EXPECT_THROW(HyperParamVector({"rho", "sigma_d"}, Eigen::Vector2d(1.0, -0.1)), InvalidArgument);
  const HyperParamVector w({"rho", "ell_d"}, Eigen::Vector2d(0.8, 0.3));
  EXPECT_EQ(w.index("ell_d"), 1);
  EXPECT_EQ(w.index("sigma_e"), -1);
  EXPECT_DOUBLE_EQ(w.get("sigma_e", 0.01), 0.01);
}

TEST(Priors, Densities) {
  EXPECT_EQ(Prior::flat().log_density(1e300), 0.0);
  EXPECT_EQ(Prior::flat(10.0).log_density(9.9), 0.0);
  EXPECT_EQ(Prior::flat(10.0).log_density(10.1), kNegInf);
  EXPECT_NEAR(Prior::gaussian(1.0, 4.0).log_density(3.0), -0.5 * std::log(8.0 * std::numbers::pi) - 0.5, 1e-14);
  // log-normal at its median exp(m)
  EXPECT_NEAR(Prior::log_gaussian(0.5, 1.0).log_density(std::exp(0.5)), -0.5 * std::log(2.0 * std::numbers::pi) - 0.5, 1e-14);
  EXPECT_EQ(Prior::log_gaussian(0.0, 1.0).log_density(-1.0), kNegInf);
  EXPECT_THROW(Prior::gaussian(0.0, 0.0), InvalidArgument);
  EXPECT_THROW(Prior::flat(0.0), InvalidArgument);
}

TEST(Priors, SpecSums) {
  const PriorSpec spec{{Prior::gaussian(0, 1), Prior::gaussian(0, 1)}};
  EXPECT_NEAR(spec.log_density(Eigen::Vector2d(0, 0)), -std::log(2.0 * std::numbers::pi), 1e-14);
  EXPECT_THROW((void)spec.log_density(Eigen::Vector3d(0, 0, 0)), InvalidArgument);
  EXPECT_EQ(PriorSpec{}.log_density(Eigen::Vector3d(1, 2, 3)), 0.0);
}

TEST(Metropolis, LognormalLogMean) {
  const Chain c = metropolis_sample(lognormal(0.7, 0.5), Eigen::VectorXd::Constant(1, 1.0), 20000, 0.8, 5);
  const ChainSummary s = chain_summary(c);
  const Eigen::VectorXd logs = c.samples.col(0).bottomRows(s.kept).array().log().matrix();
  EXPECT_NEAR(logs.mean(), 0.7, 0.05);
  EXPECT_NEAR(std::sqrt((logs.array() - logs.mean()).square().sum() / (logs.size() - 1)), 0.5, 0.05);
  EXPECT_GT(c.acceptance_ratio, 0.2);
  EXPECT_LT(c.acceptance_ratio, 0.9);
}

TEST(Metropolis, SamplesStayPositive) {
  const Chain c = metropolis_sample(lognormal(-3.0, 2.0), Eigen::VectorXd::Constant(1, 0.05), 3000, 2.0, 6);
  EXPECT_GT(c.samples.minCoeff(), 0.0);
  EXPECT_TRUE(c.samples.allFinite());
}

TEST(Metropolis, Deterministic) {
  const Chain a = metropolis_sample(lognormal(0, 1), Eigen::VectorXd::Constant(1, 1.0), 500, 0.5, 42);
  const Chain b = metropolis_sample(lognormal(0, 1), Eigen::VectorXd::Constant(1, 1.0), 500, 0.5, 42);
  EXPECT_EQ(a.samples, b.samples);
}

TEST(Metropolis, RejectsBadInput) {
  const LogTarget lt = lognormal(0, 1);
  EXPECT_THROW(metropolis_sample(lt, Eigen::VectorXd::Constant(1, 1.0), 0, 0.5, 1), InvalidArgument);
  EXPECT_THROW(metropolis_sample(lt, Eigen::VectorXd::Constant(1, 1.0), 10, 0.0, 1), InvalidArgument);
  EXPECT_THROW(metropolis_sample(lt, Eigen::VectorXd::Constant(1, -1.0), 10, 0.5, 1), InvalidArgument);
  const LogTarget dead = [](const Eigen::VectorXd&) { return kNegInf; };
  EXPECT_THROW(metropolis_sample(dead, Eigen::VectorXd::Constant(1, 1.0), 10, 0.5, 1), InvalidArgument);
}

TEST(Metropolis, OutOfSupportProposalsRejected) {
  const LogTarget bounded = [](const Eigen::VectorXd& w) { return w[0] <= 2.0 ? 0.0 : kNegInf; };
  const Chain c = metropolis_sample(bounded, Eigen::VectorXd::Constant(1, 1.0), 5000, 1.0, 3);
  EXPECT_LE(c.samples.maxCoeff(), 2.0);
}

TEST(Tuning, ReachesTargetBand) {
  for (int d : {1, 5}) {
    const TuneResult t = tune_proposal(iid_lognormal(d), Eigen::VectorXd::Ones(d), 0.25, 17);
    EXPECT_TRUE(t.converged) << d;
    EXPECT_GE(t.acceptance, 0.15) << d;
    EXPECT_LE(t.acceptance, 0.35) << d;
  }
}

TEST(Tuning, StepShrinksWithDimension) {
  const TuneResult one = tune_proposal(iid_lognormal(1), Eigen::VectorXd::Ones(1), 0.25, 18);
  const TuneResult five = tune_proposal(iid_lognormal(5), Eigen::VectorXd::Ones(5), 0.25, 18);
  EXPECT_GT(one.sigma, five.sigma);
}

TEST(Tuning, RejectsBadTarget) {
  EXPECT_THROW(tune_proposal(iid_lognormal(1), Eigen::VectorXd::Ones(1), 1.0, 1), InvalidArgument);
}

TEST(Summary, ConstantChain) {
  Chain c;
  c.names = {"a"};
  c.samples = Eigen::MatrixXd::Constant(100, 1, 0.3);
  const ChainSummary s = chain_summary(c, 0.3);
  EXPECT_EQ(s.mean[0], 0.3);
  EXPECT_EQ(s.stddev[0], 0.0);
  EXPECT_EQ(s.kept, 70);
  EXPECT_THROW(chain_summary(c, 1.0), InvalidArgument);
}

TEST(Summary, BurnInDropsLeadingSamples) {
  Chain c;
  c.names = {"a"};
  c.samples.resize(10, 1);
  for (int i = 0; i < 10; ++i) c.samples(i, 0) = i;
  const ChainSummary s = chain_summary(c, 0.5);
  EXPECT_EQ(s.kept, 5);
  EXPECT_DOUBLE_EQ(s.mean[0], 7.0);
  EXPECT_NEAR(s.stddev[0], std::sqrt(2.5), 1e-14);
}

TEST(Summary, HistogramIntegratesToOne) {
  Eigen::VectorXd x(1000);
  for (int i = 0; i < 1000; ++i) x[i] = std::sin(0.37 * i);
  const Histogram h = make_histogram(x, 20);
  const auto d = h.density();
  double total = 0.0;
  long count = 0;
  for (int i = 0; i < 20; ++i) {
    total += d[i] * (h.edges[i + 1] - h.edges[i]);
    count += h.counts[i];
  }
  EXPECT_NEAR(total, 1.0, 1e-12);
  EXPECT_EQ(count, 1000);
  EXPECT_THROW(make_histogram(x, 0), InvalidArgument);
}
