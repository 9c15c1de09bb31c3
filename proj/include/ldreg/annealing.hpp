#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ldreg/flow.hpp"
#include "ldreg/objectives.hpp"
#include "ldreg/targets.hpp"
#include "ldreg/trainer.hpp"

namespace ldreg {

struct AnnealConfig {
  std::size_t outer_steps = 50;    ///< K
  std::size_t inner_steps = 400;   ///< L
  std::size_t buffer_size = 2000;  ///< fresh model samples per outer step
  std::size_t batch_size = 512;    ///< inner minibatch drawn from the buffer
  double eps_tr = 0.3;
  double t_start = 4.0;
  double t_end = 1.0;
  double anneal_fraction = 0.5;
  double lambda_tol = 1e-3;
  double lr0 = 1e-3;
  double min_buffer_ess = 1e-3;
  /// Train on a categorically resampled buffer with uniform weights instead
  /// of the weighted buffer.
  bool resample_buffer = false;
  /// Fix lambda instead of adapting it (testing and ablations).
  std::optional<double> force_lambda;
  LossConfig loss{1.0, 1.0, 1};
  AdamConfig adam;
  std::uint64_t seed = 0;

  void validate() const;
};

/// (1 - lambda) log q_anchor + lambda / T log p~, unnormalized.
double intermediate_log_density(double log_q_anchor, double log_p, double lambda, double temperature);
double intermediate_log_density(const Eigen::VectorXd& x, const FlowModel& anchor, const TargetDensity& target,
                                double lambda, double temperature);

/// Geometric from t_start to t_end over floor(anneal_fraction K) outer steps,
/// t_end afterwards.
double temperature_schedule(std::size_t i, const AnnealConfig& cfg);

/// SNIS estimate of KL(q_lambda || q_anchor) from anchor samples with their
/// anchor and target log-densities. Needs at least 100 samples.
double estimate_kl_step(std::span<const double> log_q_anchor, std::span<const double> log_p, double lambda,
                        double temperature);

/// Largest lambda in [0, 1] with kl(lambda) <= eps, by bisection to `tol`.
double bisect_lambda(const std::function<double(double)>& kl, double eps, double tol = 1e-3);
double adapt_lambda(std::span<const double> log_q_anchor, std::span<const double> log_p, double temperature,
                    double eps, double tol = 1e-3);

struct AnnealRecord {
  std::size_t outer_step = 0;
  double temperature = 1.0;
  double lambda = 0.0;
  double kl_step = 0.0;    ///< estimated KL(q_lambda || q_anchor) at the chosen lambda
  double buffer_ess = 0.0;
  double loss_data = 0.0;
  double loss_ld = 0.0;
  double kl_expost = 0.0;  ///< KL(q_new || q_anchor) on fresh samples of the new model
  std::uint64_t target_evals = 0;  ///< cumulative
};

struct AnnealHistory {
  std::vector<AnnealRecord> records;
  std::uint64_t target_evals = 0;

  void write_csv(const std::string& path) const;
};

/// Annealed buffer training with a rolling anchor. Each outer step snapshots
/// the model, draws a buffer from it, picks the temperature, adapts lambda
/// under the trust region, weights the buffer toward the intermediate density
/// and takes `inner_steps` gradient steps on the weighted combined loss whose
/// LD term uses the intermediate density as target. Target evaluations are
/// exactly outer_steps * buffer_size.
AnnealHistory anneal_run(const AnnealConfig& cfg, const TargetDensity& target, FlowModel& model);

}  // namespace ldreg
