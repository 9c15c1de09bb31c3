#include "ldreg/impsampling.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "ldreg/error.hpp"
#include "ldreg/rng.hpp"

namespace ldreg {

using Eigen::Index;
using Eigen::VectorXd;

VectorXd normalize_log_weights(const VectorXd& log_weights) {
  if (log_weights.size() == 0) throw DegenerateError("no importance weights");
  double mx = -std::numeric_limits<double>::infinity();
  for (Index i = 0; i < log_weights.size(); ++i)
    if (!std::isnan(log_weights(i))) mx = std::max(mx, log_weights(i));
  if (!std::isfinite(mx)) throw DegenerateError("all importance weights are zero or non-finite");
  VectorXd w(log_weights.size());
  for (Index i = 0; i < w.size(); ++i) w(i) = std::isnan(log_weights(i)) ? 0.0 : std::exp(log_weights(i) - mx);
  return w / w.sum();
}

WeightedSamples make_weighted(Points points, VectorXd log_weights) {
  WeightedSamples ws;
  ws.normalized = normalize_log_weights(log_weights);
  ws.points = std::move(points);
  ws.log_weights = std::move(log_weights);
  return ws;
}

WeightedSamples importance_weights(const Points& points, const VectorXd& log_q, const TargetDensity& target) {
  if (points.cols() != log_q.size()) throw ConfigError("points and log_q differ in length");
  for (Index i = 0; i < log_q.size(); ++i)
    if (!std::isfinite(log_q(i))) throw ContractError("non-finite proposal log-density at index " + std::to_string(i));
  return make_weighted(points, target.log_density(points) - log_q);
}

WeightedSamples clip_top_weights(const WeightedSamples& ws, double fraction) {
  const Index n = ws.size();
  if (n < 1) throw DegenerateError("no importance weights");
  const auto k = static_cast<Index>(std::ceil(fraction * static_cast<double>(n)));
  WeightedSamples out = ws;
  if (k <= 1) return out;
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::nth_element(order.begin(), order.begin() + (k - 1), order.end(),
                   [&](Index a, Index b) { return ws.log_weights(a) > ws.log_weights(b); });
  const double floor_lw = ws.log_weights(order[static_cast<std::size_t>(k - 1)]);
  for (Index j = 0; j < k; ++j) out.log_weights(order[static_cast<std::size_t>(j)]) = floor_lw;
  out.normalized = normalize_log_weights(out.log_weights);
  return out;
}

double ess(const VectorXd& w) {
  const double total = w.sum();
  if (!(total > 0.0)) throw DegenerateError("all importance weights are zero");
  return total * total / (static_cast<double>(w.size()) * w.squaredNorm());
}

double ess(const WeightedSamples& ws) { return ess(ws.normalized); }

double snis_estimate(const VectorXd& values, const WeightedSamples& ws) {
  if (values.size() != ws.size()) throw ConfigError("values and weights differ in length");
  return ws.normalized.dot(values) / ws.normalized.sum();
}

double snis_estimate(const std::function<double(const VectorXd&)>& h, const WeightedSamples& ws) {
  VectorXd v(ws.size());
  for (Index i = 0; i < v.size(); ++i) v(i) = h(ws.points.col(i));
  return snis_estimate(v, ws);
}

std::vector<Index> categorical_indices(const VectorXd& weights, std::size_t m, std::uint64_t seed) {
  if (m < 1) throw ConfigError("resample size must be at least 1");
  if (!(weights.sum() > 0.0)) throw DegenerateError("cannot resample: all weights are zero");
  Rng rng(seed, 0xca7e);
  std::discrete_distribution<Index> pick(weights.data(), weights.data() + weights.size());
  std::vector<Index> idx(m);
  for (auto& i : idx) i = pick(rng.engine());
  return idx;
}

Points categorical_resample(const WeightedSamples& ws, std::size_t m, std::uint64_t seed) {
  const auto idx = categorical_indices(ws.normalized, m, seed);
  Points out(ws.points.rows(), static_cast<Index>(m));
  for (std::size_t j = 0; j < m; ++j) out.col(static_cast<Index>(j)) = ws.points.col(idx[j]);
  return out;
}

}  // namespace ldreg
