#pragma once

#include <cstdint>
#include <functional>

#include "ldreg/flow.hpp"
#include "ldreg/targets.hpp"

namespace ldreg {

/// Points with log importance weights log p~ - log q. Normalized weights are
/// computed by max-subtraction in log space.
struct WeightedSamples {
  Points points;
  Eigen::VectorXd log_weights;
  Eigen::VectorXd normalized;  // sums to 1

  Eigen::Index size() const { return log_weights.size(); }
};

/// Build normalized weights from log weights. Throws DegenerateError when no
/// weight is finite.
Eigen::VectorXd normalize_log_weights(const Eigen::VectorXd& log_weights);

WeightedSamples make_weighted(Points points, Eigen::VectorXd log_weights);

/// log_weights = target log-density - log_q. A non-finite log_q throws
/// ContractError naming the index.
WeightedSamples importance_weights(const Points& points, const Eigen::VectorXd& log_q, const TargetDensity& target);

/// The k = ceil(fraction * N) largest weights are set to the smallest of them,
/// then renormalized. k = 1 leaves the weights unchanged.
WeightedSamples clip_top_weights(const WeightedSamples& ws, double fraction = 1e-4);

/// Reverse effective sample size 1 / (N * sum w^2), in (0, 1].
double ess(const WeightedSamples& ws);
double ess(const Eigen::VectorXd& normalized_weights);

double snis_estimate(const std::function<double(const Eigen::VectorXd&)>& h, const WeightedSamples& ws);
double snis_estimate(const Eigen::VectorXd& values, const WeightedSamples& ws);

/// m i.i.d. indices drawn with probabilities w.
std::vector<Eigen::Index> categorical_indices(const Eigen::VectorXd& weights, std::size_t m, std::uint64_t seed);
Points categorical_resample(const WeightedSamples& ws, std::size_t m, std::uint64_t seed);

}  // namespace ldreg
