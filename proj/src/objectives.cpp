#include "ldreg/objectives.hpp"

#include <cmath>
#include <sstream>

#include "ldreg/error.hpp"
#include "ldreg/rng.hpp"

namespace ldreg {

using Eigen::Index;
using Eigen::VectorXd;

namespace {

VectorXd normalized_weights(std::span<const double> weights, Index n) {
  if (weights.empty()) return VectorXd::Constant(n, 1.0 / static_cast<double>(n));
  if (static_cast<Index>(weights.size()) != n) throw ConfigError("weight count does not match batch size");
  VectorXd w = Eigen::Map<const VectorXd>(weights.data(), n);
  if ((w.array() < 0.0).any() || !w.allFinite()) throw ConfigError("weights must be finite and non-negative");
  const double total = w.sum();
  if (!(total > 0.0)) throw DegenerateError("all weights are zero");
  return w / total;
}

std::span<const double> as_span(const VectorXd& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

void check_finite(double value, std::int64_t batch_index) {
  if (std::isfinite(value)) return;
  std::ostringstream os;
  os << "non-finite loss " << value;
  if (batch_index >= 0) os << " at batch " << batch_index;
  throw TrainingError(os.str());
}

}  // namespace

void LossConfig::validate() const {
  if (!(lambda_data >= 0.0) || !(lambda_ld >= 0.0)) throw ConfigError("loss weights must be non-negative");
  if (!(lambda_data > 0.0 || lambda_ld > 0.0)) throw ConfigError("at least one loss weight must be positive");
  if (p != 1 && p != 2) throw ConfigError("dispersion order p must be 1 or 2");
}

void ReferenceBatch::validate(bool need_energies) const {
  if (points.cols() == 0) throw ConfigError("empty batch");
  if (need_energies) {
    if (energies.size() != points.cols()) throw ConfigError("batch needs one energy label per point");
    if (!energies.allFinite()) throw ConfigError("energy labels must be finite");
  }
  if (weights.size() != 0) {
    if (weights.size() != points.cols()) throw ConfigError("batch needs one weight per point");
    if ((weights.array() < 0.0).any()) throw ConfigError("weights must be non-negative");
  }
}

double f_theta(const VectorXd& x, const FlowModel& model, const TargetDensity& target) {
  return -model.log_density(x) + target.log_density(Eigen::Ref<const VectorXd>(x));
}

VectorXd f_theta(const Points& x, const FlowModel& model, const TargetDensity& target) {
  return target.log_density(x) - model.log_density(x);
}

VectorXd f_theta(const VectorXd& log_q, const VectorXd& energies) { return -log_q - energies; }

LossValue ld_objective(std::span<const double> values, std::span<const double> weights, int p) {
  const auto n = static_cast<Index>(values.size());
  if (n < 2) throw DegenerateError("dispersion is undefined for fewer than two values");
  if (p != 1 && p != 2) throw ConfigError("dispersion order p must be 1 or 2");
  const VectorXd w = normalized_weights(weights, n);
  const Eigen::Map<const VectorXd> f(values.data(), n);
  const double mean = w.dot(f);
  const VectorXd dev = f.array() - mean;

  LossValue out;
  if (p == 2) {
    out.value = w.dot(dev.cwiseAbs2());
    // The mean term vanishes: sum_j w_j dev_j = 0.
    out.cotangent = 2.0 * w.cwiseProduct(dev);
  } else {
    const VectorXd sgn = dev.unaryExpr([](double d) { return d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0); });
    out.value = w.dot(dev.cwiseAbs());
    out.cotangent = w.cwiseProduct(sgn) - w * w.dot(sgn);
  }
  return out;
}

LossValue forward_kl_from_log_q(const VectorXd& log_q, std::span<const double> weights) {
  const VectorXd w = normalized_weights(weights, log_q.size());
  return {-w.dot(log_q), -w};
}

double forward_kl_loss(const Points& batch, const FlowModel& model, std::span<const double> weights) {
  if (batch.cols() == 0) throw ConfigError("empty batch");
  return forward_kl_from_log_q(model.log_density(batch), weights).value;
}

LossGradient forward_kl_gradient(const Points& batch, const FlowModel& model, std::span<const double> weights) {
  if (batch.cols() == 0) throw ConfigError("empty batch");
  return loss_gradient([&](const VectorXd& lq) { return forward_kl_from_log_q(lq, weights); }, model, batch);
}

double ld_loss(const ReferenceBatch& batch, const FlowModel& model, int p) {
  batch.validate(true);
  const VectorXd f = f_theta(model.log_density(batch.points), batch.energies);
  return ld_objective(as_span(f), as_span(batch.weights), p).value;
}

LossGradient ld_gradient(const ReferenceBatch& batch, const FlowModel& model, int p) {
  batch.validate(true);
  return loss_gradient(
      [&](const VectorXd& lq) {
        const VectorXd f = f_theta(lq, batch.energies);
        LossValue v = ld_objective(as_span(f), as_span(batch.weights), p);
        v.cotangent = -v.cotangent;  // df/dlog q = -1
        return v;
      },
      model, batch.points);
}

LossGradient loss_gradient(const DensityLoss& loss, const FlowModel& model, const Points& batch,
                           std::int64_t batch_index) {
  FlowTape tape;
  const VectorXd lq = model.log_density_taped(batch, tape);
  LossValue v = loss(lq);
  check_finite(v.value, batch_index);
  LossGradient out;
  out.value = v.value;
  out.gradient = model.log_density_backward(tape, v.cotangent);
  return out;
}

double combined_loss(const ReferenceBatch& data, const ReferenceBatch& reference, const FlowModel& model,
                     const LossConfig& cfg) {
  cfg.validate();
  double total = 0.0;
  if (cfg.lambda_data > 0.0) total += cfg.lambda_data * forward_kl_loss(data.points, model, as_span(data.weights));
  if (cfg.lambda_ld > 0.0) total += cfg.lambda_ld * ld_loss(reference, model, cfg.p);
  return total;
}

LossGradient combined_loss_gradient(const ReferenceBatch& data, const ReferenceBatch& reference,
                                    const FlowModel& model, const LossConfig& cfg, std::int64_t batch_index) {
  cfg.validate();
  LossGradient out;
  out.gradient = VectorXd::Zero(static_cast<Index>(model.num_params()));
  if (cfg.lambda_data > 0.0) {
    data.validate(false);
    LossGradient g = loss_gradient([&](const VectorXd& lq) { return forward_kl_from_log_q(lq, as_span(data.weights)); },
                                   model, data.points, batch_index);
    out.data_term = g.value;
    out.gradient += cfg.lambda_data * g.gradient;
  }
  if (cfg.lambda_ld > 0.0) {
    reference.validate(true);
    LossGradient g = loss_gradient(
        [&](const VectorXd& lq) {
          LossValue v = ld_objective(as_span(f_theta(lq, reference.energies)), as_span(reference.weights), cfg.p);
          v.cotangent = -v.cotangent;
          return v;
        },
        model, reference.points, batch_index);
    out.ld_term = g.value;
    out.gradient += cfg.lambda_ld * g.gradient;
  }
  out.value = cfg.lambda_data * out.data_term + cfg.lambda_ld * out.ld_term;
  return out;
}

LossGradient combined_loss_gradient(const ReferenceBatch& batch, const FlowModel& model, const LossConfig& cfg,
                                    std::int64_t batch_index) {
  cfg.validate();
  batch.validate(cfg.lambda_ld > 0.0);
  double data_term = 0.0;
  double ld_term = 0.0;
  LossGradient out = loss_gradient(
      [&](const VectorXd& lq) {
        LossValue total{0.0, VectorXd::Zero(lq.size())};
        if (cfg.lambda_data > 0.0) {
          LossValue d = forward_kl_from_log_q(lq, as_span(batch.weights));
          data_term = d.value;
          total.value += cfg.lambda_data * d.value;
          total.cotangent += cfg.lambda_data * d.cotangent;
        }
        if (cfg.lambda_ld > 0.0) {
          LossValue l = ld_objective(as_span(f_theta(lq, batch.energies)), as_span(batch.weights), cfg.p);
          ld_term = l.value;
          total.value += cfg.lambda_ld * l.value;
          total.cotangent -= cfg.lambda_ld * l.cotangent;
        }
        return total;
      },
      model, batch.points, batch_index);
  out.data_term = data_term;
  out.ld_term = ld_term;
  return out;
}

ReverseKlResult reverse_kl_loss(const FlowModel& model, const TargetDensity& target, std::size_t n,
                                std::uint64_t seed, bool with_gradient) {
  if (n < 2) throw ConfigError("reverse KL needs at least two samples");
  Rng rng(seed, 0x7e4b);
  Points z(static_cast<Index>(model.dim()), static_cast<Index>(n));
  rng.fill_normal(z);

  FlowTape tape;
  FlowOutput fwd = with_gradient ? model.forward_taped(z, tape) : model.forward(z);
  Points score;
  const VectorXd log_p = with_gradient ? target.log_density_and_score(fwd.points, score) : target.log_density(fwd.points);
  const VectorXd log_q = FlowModel::base_log_density(z) - fwd.log_det;

  ReverseKlResult out;
  double sum = 0.0;
  double sum_sq = 0.0;
  std::vector<bool> keep(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    const auto ii = static_cast<Index>(i);
    if (!std::isfinite(log_p(ii))) {
      ++out.excluded;
      continue;
    }
    keep[i] = true;
    const double v = log_q(ii) - log_p(ii);
    sum += v;
    sum_sq += v * v;
  }
  if (static_cast<double>(out.excluded) > 0.01 * static_cast<double>(n)) {
    std::ostringstream os;
    os << "reverse KL: " << out.excluded << " of " << n << " samples have non-finite target log-density";
    throw TrainingError(os.str());
  }
  const double m = static_cast<double>(n - out.excluded);
  out.value = sum / m;
  const double var = std::max(0.0, sum_sq / m - out.value * out.value) * m / std::max(1.0, m - 1.0);
  out.std_error = std::sqrt(var / m);
  check_finite(out.value, -1);

  if (with_gradient) {
    // log q(x) = log N(z) - log_det(z); only log_det and x depend on the parameters.
    Points cot_x = Points::Zero(z.rows(), z.cols());
    VectorXd cot_ld = VectorXd::Zero(z.cols());
    for (std::size_t i = 0; i < n; ++i) {
      if (!keep[i]) continue;
      const auto ii = static_cast<Index>(i);
      cot_x.col(ii) = -score.col(ii) / m;
      cot_ld(ii) = -1.0 / m;
    }
    out.gradient = model.forward_backward(tape, cot_x, cot_ld);
  }
  return out;
}

}  // namespace ldreg
