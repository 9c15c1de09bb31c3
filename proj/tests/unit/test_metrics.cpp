#include <doctest.h>

#include <cmath>

#include "ldreg/error.hpp"
#include "ldreg/metrics.hpp"
#include "ldreg/rng.hpp"
#include "ldreg/targets.hpp"
#include "support.hpp"

using namespace ldreg;

namespace {

constexpr double kNormalBoxMass = 0.4660649426743922;  // (Phi(1) - Phi(-1))^2
constexpr double kNormalEntropy = 2.8378770664093453;  // log(2 pi) + 1

Points normal_points(std::size_t n, std::uint64_t seed) {
  Points x(2, static_cast<Eigen::Index>(n));
  Rng(seed, 0).fill_normal(x);
  return x;
}

}  // namespace

TEST_CASE("nll of the identity flow on standard normal data") {
  const FlowModel id = FlowModel::identity(testing::small_shape());
  const MeanWithError r = nll(normal_points(1000000, 1), id);
  CHECK(std::abs(r.mean - kNormalEntropy) < 0.003);
  CHECK(r.std_error > 0.0);
  CHECK(r.std_error < 0.003);
}

TEST_CASE("histogram KL") {
  const GmmTarget gmm(2);
  const Points a = gmm.sample(50000, 1);
  CHECK(hist_kl_2d(a, a) <= 1e-6);

  const Eigen::VectorXd uniform = Eigen::VectorXd::Constant(a.cols(), 3.0);
  const Points b = gmm.sample(40000, 2);
  const Eigen::VectorXd w = uniform.head(b.cols());
  CHECK(hist_kl_2d(a, b, &w) == hist_kl_2d(a, b));

  Points far = b;
  far.array() += 100.0;
  const double disjoint = hist_kl_2d(a, far);
  CHECK(std::isfinite(disjoint));
  CHECK(disjoint > 10.0);

  CHECK_THROWS_AS(hist_kl_2d(a, Points(2, 0)), ConfigError);
}

TEST_CASE("histogram KL noise floor between exact samplers") {
  const GmmTarget gmm(2);
  const double floor = hist_kl_2d(gmm.sample(1000000, 11), gmm.sample(1000000, 12));
  MESSAGE("two-sample histogram KL floor at 1e6: " << floor);
  CHECK(floor > 0.0);
  CHECK(floor < 0.05);
}

TEST_CASE("energy W2 examples and metric properties") {
  CHECK(energy_w2({1.0, 5.0, 2.0}, {5.0, 2.0, 1.0}) == 0.0);
  CHECK(energy_w2({0.0}, {1.0}) == 1.0);
  CHECK(energy_w2({0.0, 2.0}, {3.0, 1.0}) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK_THROWS_AS(energy_w2({}, {1.0}), ConfigError);

  const std::vector<double> x{0.1, 2.0, -1.0, 4.0, 3.3};
  const std::vector<double> y{1.0, 1.5, 0.0, 2.0, -3.0, 7.0, 0.2};
  const std::vector<double> z{5.0, 6.0, -2.0};
  CHECK(energy_w2(x, y) == doctest::Approx(energy_w2(y, x)).epsilon(1e-15));
  CHECK(energy_w2(x, z) <= energy_w2(x, y) + energy_w2(y, z) + 1e-12);
  CHECK(energy_w2(y, z) <= energy_w2(y, x) + energy_w2(x, z) + 1e-12);
  CHECK(energy_w2(x, y) <= energy_w2(x, z) + energy_w2(z, y) + 1e-12);
}

TEST_CASE("normalization quadrature") {
  const FlowModel id = FlowModel::identity(testing::small_shape());
  CHECK(normalization_check(id, {-6, -6}, {6, 6}, 400) == doctest::Approx(1.0).epsilon(1e-3));
  CHECK(normalization_check(id, {-1, -1}, {1, 1}, 400) == doctest::Approx(kNormalBoxMass).epsilon(1e-4));
  for (std::uint64_t seed : {3u, 4u}) {
    const FlowModel m = testing::rough_flow(4, 10, seed, 0.2);
    CHECK(normalization_check(m, {-4, -4}, {4, 4}, 300) <= 1.0 + 1e-2);
  }
}

TEST_CASE("evaluation is deterministic and scale invariant in the target") {
  const FlowModel m = testing::rough_flow(3, 8, 2, 0.1);
  const GmmTarget gmm(2);
  EvalConfig cfg;
  cfg.n_eval = 20000;
  cfg.n_test = 20000;
  cfg.seed = 5;
  const MetricsReport a = evaluate(m, gmm, cfg);
  const MetricsReport b = evaluate(m, gmm, cfg);
  CHECK(a.nll == b.nll);
  CHECK(a.ess == b.ess);
  CHECK(a.hist_kl == b.hist_kl);
  CHECK(a.energy_w2 == b.energy_w2);
  CHECK(a.ess > 0.0);
  CHECK(a.ess <= 1.0);
  CHECK(a.hist_kl >= 0.0);
  CHECK(a.n_eval == 20000);

  const Points test = gmm.sample(20000, 5 ^ 0x7e57);
  const FlowTarget scaled_model_target(m, 3.0);
  const MetricsReport self = evaluate(m, scaled_model_target, test, cfg);
  CHECK(self.ess == doctest::Approx(1.0).epsilon(1e-12));
}
