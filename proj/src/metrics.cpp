#include "ldreg/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "ldreg/error.hpp"

namespace ldreg {

using Eigen::Index;
using Eigen::VectorXd;

MeanWithError nll(const Points& test_points, const FlowModel& model) {
  if (test_points.cols() == 0) throw ConfigError("empty test set");
  const VectorXd lq = model.log_density(test_points);
  const double n = static_cast<double>(lq.size());
  const double mean = -lq.mean();
  const double var = n > 1 ? (lq.array() + mean).square().sum() / (n - 1.0) : 0.0;
  return {mean, std::sqrt(var / n)};
}

namespace {

struct Grid {
  double lo[2];
  double width[2];
  int bins;

  // Returns -1 for points outside the range.
  Index bin(double x, double y) const {
    const double c[2] = {x, y};
    Index idx[2];
    for (int a = 0; a < 2; ++a) {
      if (!(width[a] > 0.0)) {
        idx[a] = 0;
        continue;
      }
      const double u = (c[a] - lo[a]) / width[a];
      if (!(u >= 0.0) || u > static_cast<double>(bins)) return -1;
      idx[a] = std::min<Index>(static_cast<Index>(u), bins - 1);
    }
    return idx[0] * bins + idx[1];
  }
};

// Bin probabilities relative to all points, so mass outside the grid is lost
// rather than redistributed.
VectorXd histogram(const Grid& g, const Points& pts, const VectorXd* counts) {
  VectorXd h = VectorXd::Zero(static_cast<Index>(g.bins) * g.bins);
  double total = 0.0;
  for (Index i = 0; i < pts.cols(); ++i) {
    const double c = counts ? (*counts)(i) : 1.0;
    total += c;
    const Index b = g.bin(pts(0, i), pts(1, i));
    if (b >= 0) h(b) += c;
  }
  return (h.array() / total + 1e-10).matrix();
}

}  // namespace

double hist_kl_2d(const Points& ref_points, const Points& model_points, const VectorXd* model_weights, int bins) {
  if (ref_points.cols() == 0 || model_points.cols() == 0) throw ConfigError("histogram KL needs non-empty sets");
  if (ref_points.rows() < 2 || model_points.rows() != ref_points.rows())
    throw ConfigError("histogram KL needs matching point sets with at least two coordinates");
  if (bins < 1) throw ConfigError("bins must be positive");
  Grid g{};
  g.bins = bins;
  for (int a = 0; a < 2; ++a) {
    const double lo = ref_points.row(a).minCoeff();
    const double hi = ref_points.row(a).maxCoeff();
    g.lo[a] = lo;
    g.width[a] = (hi - lo) / bins;
  }
  VectorXd counts;
  if (model_weights) {
    if (model_weights->size() != model_points.cols()) throw ConfigError("one weight per model point required");
    counts = *model_weights * (static_cast<double>(model_points.cols()) / model_weights->sum());
  }
  const VectorXd p = histogram(g, ref_points, nullptr);
  const VectorXd q = histogram(g, model_points, model_weights ? &counts : nullptr);
  return (p.array() * (p.array() / q.array()).log()).sum();
}

double energy_w2(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw ConfigError("energy W2 needs non-empty inputs");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const std::size_t m = std::max(a.size(), b.size());
  auto quantile = [](const std::vector<double>& s, double u) {
    const double pos = std::clamp(u * static_cast<double>(s.size()) - 0.5, 0.0, static_cast<double>(s.size() - 1));
    const auto lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, s.size() - 1);
    const double t = pos - static_cast<double>(lo);
    return s[lo] + t * (s[hi] - s[lo]);
  };
  double acc = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double u = (static_cast<double>(i) + 0.5) / static_cast<double>(m);
    const double d = quantile(a, u) - quantile(b, u);
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(m));
}

double trapezoid_mass(const std::function<VectorXd(const Points&)>& log_density, std::array<double, 2> lo,
                      std::array<double, 2> hi, int grid_n) {
  if (grid_n < 2) throw ConfigError("quadrature grid needs at least 2 points per axis");
  const double hx = (hi[0] - lo[0]) / (grid_n - 1);
  const double hy = (hi[1] - lo[1]) / (grid_n - 1);
  double total = 0.0;
  Points row(2, grid_n);
  for (int i = 0; i < grid_n; ++i) {
    const double x = lo[0] + i * hx;
    const double wx = (i == 0 || i == grid_n - 1) ? 0.5 : 1.0;
    for (int j = 0; j < grid_n; ++j) {
      row(0, j) = x;
      row(1, j) = lo[1] + j * hy;
    }
    const VectorXd ld = log_density(row);
    for (int j = 0; j < grid_n; ++j) {
      const double wy = (j == 0 || j == grid_n - 1) ? 0.5 : 1.0;
      total += wx * wy * std::exp(ld(j));
    }
  }
  return total * hx * hy;
}

double normalization_check(const FlowModel& model, std::array<double, 2> lo, std::array<double, 2> hi, int grid_n) {
  if (model.dim() != 2) throw ConfigError("normalization check is defined for 2-D models");
  return trapezoid_mass([&](const Points& p) { return model.log_density(p); }, lo, hi, grid_n);
}

MetricsReport evaluate(const FlowModel& model, const TargetDensity& target, const EvalConfig& cfg) {
  if (!target.can_sample()) throw ConfigError("evaluation needs a test set for target '" + target.name() + "'");
  const Points test = target.sample(cfg.n_test, cfg.seed ^ 0x7e57);
  return evaluate(model, target, test, cfg);
}

MetricsReport evaluate(const FlowModel& model, const TargetDensity& target, const Points& test_points,
                       const EvalConfig& cfg) {
  if (cfg.n_eval < 2) throw ConfigError("n_eval must be at least 2");
  MetricsReport r;
  r.n_eval = cfg.n_eval;
  r.seed = cfg.seed;
  const MeanWithError l = nll(test_points, model);
  r.nll = l.mean;
  r.nll_stderr = l.std_error;

  const FlowSample s = model.sample(cfg.n_eval, cfg.seed ^ 0x5a4d);
  const WeightedSamples ws = importance_weights(s.points, s.log_density, target);
  const WeightedSamples clipped = clip_top_weights(ws, cfg.clip_fraction);
  r.ess = ess(clipped);

  if (model.dim() >= 2) {
    r.hist_kl = hist_kl_2d(test_points, s.points);
    r.hist_kl_rw = hist_kl_2d(test_points, s.points, &clipped.normalized);
  }

  const Points resampled = categorical_resample(clipped, cfg.n_eval, cfg.seed ^ 0x3e5a);
  const VectorXd e_model = target.energy(resampled);
  const VectorXd e_ref = target.energy(test_points);
  r.energy_w2 = energy_w2(std::vector<double>(e_ref.data(), e_ref.data() + e_ref.size()),
                          std::vector<double>(e_model.data(), e_model.data() + e_model.size()));
  return r;
}

}  // namespace ldreg
