#pragma once

#include <cstdint>
#include <functional>
#include <span>

#include "ldreg/flow.hpp"
#include "ldreg/targets.hpp"

namespace ldreg {

/// Weights of the combined objective
///   lambda_data * L_data + lambda_ld * L_LD^(p).
struct LossConfig {
  double lambda_data = 1.0;
  double lambda_ld = 0.0;
  int p = 1;  ///< dispersion order, 1 or 2

  void validate() const;
};

/// Points with target energy labels E(x) and optional sample weights. Empty
/// weights mean uniform; non-empty weights are self-normalized on use.
struct ReferenceBatch {
  Points points;
  Eigen::VectorXd energies;
  Eigen::VectorXd weights;

  Eigen::Index size() const { return points.cols(); }
  void validate(bool need_energies) const;
};

/// A scalar built from per-sample quantities together with its derivative
/// with respect to each of them.
struct LossValue {
  double value = 0.0;
  Eigen::VectorXd cotangent;
};

struct LossGradient {
  double value = 0.0;
  double data_term = 0.0;
  double ld_term = 0.0;
  Eigen::VectorXd gradient;
};

/// f(x) = -log q(x) + log p~(x), the unnormalized log importance weight.
double f_theta(const Eigen::VectorXd& x, const FlowModel& model, const TargetDensity& target);
Eigen::VectorXd f_theta(const Points& x, const FlowModel& model, const TargetDensity& target);
/// Same, with log p~ supplied as energy labels.
Eigen::VectorXd f_theta(const Eigen::VectorXd& log_q, const Eigen::VectorXd& energies);

/// Weighted p-th absolute central moment around the weighted mean. The mean
/// is part of the function, so the cotangent includes its contribution.
LossValue ld_objective(std::span<const double> values, std::span<const double> weights, int p);

/// Weighted mean of -log q given log q values.
LossValue forward_kl_from_log_q(const Eigen::VectorXd& log_q, std::span<const double> weights);

double forward_kl_loss(const Points& batch, const FlowModel& model, std::span<const double> weights = {});
LossGradient forward_kl_gradient(const Points& batch, const FlowModel& model, std::span<const double> weights = {});

/// LD over the reference batch with f = -log q - E.
double ld_loss(const ReferenceBatch& batch, const FlowModel& model, int p);
LossGradient ld_gradient(const ReferenceBatch& batch, const FlowModel& model, int p);

/// Scalar loss on the vector of log q values of a batch.
using DensityLoss = std::function<LossValue(const Eigen::VectorXd& log_q)>;

/// Exact reverse-mode gradient of a loss defined on log q over a batch.
/// A non-finite loss raises TrainingError naming the batch index.
LossGradient loss_gradient(const DensityLoss& loss, const FlowModel& model, const Points& batch,
                           std::int64_t batch_index = -1);

/// lambda_data * forward KL(data) + lambda_ld * LD(reference).
double combined_loss(const ReferenceBatch& data, const ReferenceBatch& reference, const FlowModel& model,
                     const LossConfig& cfg);
LossGradient combined_loss_gradient(const ReferenceBatch& data, const ReferenceBatch& reference,
                                    const FlowModel& model, const LossConfig& cfg, std::int64_t batch_index = -1);
/// Data and LD reference are the same batch: one taped pass.
LossGradient combined_loss_gradient(const ReferenceBatch& batch, const FlowModel& model, const LossConfig& cfg,
                                    std::int64_t batch_index = -1);

struct ReverseKlResult {
  double value = 0.0;
  double std_error = 0.0;
  std::size_t excluded = 0;  ///< samples with non-finite target log-density
  Eigen::VectorXd gradient;  ///< empty unless requested
};

/// Monte Carlo E_q[log q - log p~] on n fresh reparameterized draws. More
/// than 1% non-finite target values is a TrainingError.
ReverseKlResult reverse_kl_loss(const FlowModel& model, const TargetDensity& target, std::size_t n,
                                std::uint64_t seed, bool with_gradient = false);

}  // namespace ldreg
