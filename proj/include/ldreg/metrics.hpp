#pragma once

#include <array>
#include <cstdint>
#include <functional>

#include "ldreg/flow.hpp"
#include "ldreg/impsampling.hpp"
#include "ldreg/targets.hpp"

namespace ldreg {

struct MetricsReport {
  double nll = 0.0;
  double nll_stderr = 0.0;
  double ess = 0.0;
  double hist_kl = 0.0;
  double hist_kl_rw = 0.0;
  double energy_w2 = 0.0;
  std::size_t n_eval = 0;
  std::uint64_t seed = 0;
};

struct MeanWithError {
  double mean = 0.0;
  double std_error = 0.0;
};

/// Mean of -log q over the test points with its standard error.
MeanWithError nll(const Points& test_points, const FlowModel& model);

/// KL(reference || model) between 2-D histograms over the first two
/// coordinates. The bin range is the reference min/max per axis; model points
/// outside it are dropped. 1e-10 is added to each bin before normalizing.
/// With weights, model counts are weighted by N * w (w normalized).
double hist_kl_2d(const Points& ref_points, const Points& model_points, const Eigen::VectorXd* model_weights = nullptr,
                  int bins = 100);

/// 1-D 2-Wasserstein distance by quantile coupling. Unequal sizes are matched
/// at M = max(n, m) midpoint levels with linear interpolation.
double energy_w2(std::vector<double> a, std::vector<double> b);

/// Trapezoid quadrature of exp(log_density) over an axis-aligned 2-D box.
double trapezoid_mass(const std::function<Eigen::VectorXd(const Points&)>& log_density, std::array<double, 2> lo,
                      std::array<double, 2> hi, int grid_n);
double normalization_check(const FlowModel& model, std::array<double, 2> lo, std::array<double, 2> hi,
                           int grid_n = 400);

struct EvalConfig {
  std::size_t n_eval = 1000000;  ///< model samples for ESS and histograms
  std::size_t n_test = 1000000;  ///< exact target samples for NLL
  double clip_fraction = 1e-4;
  std::uint64_t seed = 0;
};

/// NLL on a fresh exact-sampler test set, reverse ESS with clipped weights,
/// plain and reweighted histogram KL against the test set, and energy W2
/// after categorical resampling of the model samples.
MetricsReport evaluate(const FlowModel& model, const TargetDensity& target, const EvalConfig& cfg);

/// Same with a supplied test set (used when the target cannot be sampled).
MetricsReport evaluate(const FlowModel& model, const TargetDensity& target, const Points& test_points,
                       const EvalConfig& cfg);

}  // namespace ldreg
