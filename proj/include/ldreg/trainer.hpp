#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "ldreg/dataset.hpp"
#include "ldreg/flow.hpp"
#include "ldreg/objectives.hpp"
#include "ldreg/rng.hpp"
#include "ldreg/targets.hpp"

namespace ldreg {

/// Single-cycle cosine schedule lr0 * (1 + cos(pi t / steps)) / 2.
double cosine_lr(std::size_t t, std::size_t steps, double lr0);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias-corrected moments.
class Adam {
 public:
  Adam() = default;
  Adam(std::size_t n, AdamConfig cfg = {});

  /// One update in place. A non-finite gradient raises TrainingError.
  void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad, double lr);

  std::size_t steps_taken() const { return t_; }
  const Eigen::VectorXd& first_moment() const { return m_; }
  const Eigen::VectorXd& second_moment() const { return v_; }

 private:
  AdamConfig cfg_;
  Eigen::VectorXd m_, v_;
  std::size_t t_ = 0;
};

struct TrainConfig {
  std::size_t steps = 10000;
  std::size_t batch_size = 1024;
  double lr0 = 1e-3;
  std::uint64_t seed = 0;
  LossConfig loss;
  std::size_t eval_every = 0;  ///< 0: only at the end
  AdamConfig adam;

  void validate() const;
};

struct HistoryRecord {
  std::size_t step = 0;
  double loss = 0.0;
  double data_term = 0.0;
  double ld_term = 0.0;
  double val_nll = std::numeric_limits<double>::quiet_NaN();
  double ess = std::numeric_limits<double>::quiet_NaN();
  double lr = 0.0;
};

struct RunHistory {
  std::vector<HistoryRecord> records;
  std::uint64_t target_evals = 0;

  void write_csv(const std::string& path) const;
};

/// Optional evaluation hook, called every eval_every steps and at the end. It
/// may fill val_nll and ess of the record.
using EvalHook = std::function<void(const FlowModel&, HistoryRecord&)>;

/// Gradient of the training loss at a given step. Batch draws belong to the
/// provider so that workflows differ only here.
using StepGradient = std::function<LossGradient(const FlowModel&, std::size_t step)>;

/// Adam + cosine loop over cfg.steps.
RunHistory run_optimizer(FlowModel& model, const TrainConfig& cfg, const StepGradient& gradient,
                         const EvalHook& eval = {});

/// Shuffled minibatches without replacement, reshuffled at each epoch. A batch
/// never exceeds the dataset.
class EpochSampler {
 public:
  EpochSampler(Eigen::Index n, std::size_t batch, std::uint64_t seed, std::uint64_t stream = 0);
  std::vector<Eigen::Index> next();

 private:
  std::vector<Eigen::Index> order_;
  std::size_t batch_;
  std::size_t pos_;
  Rng rng_;
};

/// Combined loss on shuffled minibatches; the same batch serves as data and
/// LD reference. Never calls a target.
RunHistory train_unbiased(const LabeledDataset& data, const TrainConfig& cfg, FlowModel& model,
                          const EvalHook& eval = {});

enum class LdReference { IsOnly, Both };
LdReference parse_ld_reference(const std::string& s);
std::string to_string(LdReference mode);

struct RefineConfig {
  TrainConfig stage1;  ///< forward KL on the biased data
  TrainConfig stage2;  ///< combined loss on the resampled data
  std::size_t m_is = 10000;
  LdReference mode = LdReference::Both;
  double min_stage1_ess = 1e-4;
  double clip_fraction = 0.0;  ///< clipping before resampling; 0 keeps raw weights
};

struct RefineResult {
  RunHistory stage1;
  RunHistory stage2;
  double stage1_ess = 0.0;
  LabeledDataset resampled;
  std::uint64_t target_evals = 0;
};

/// Two-stage refinement: forward KL on biased data, importance resampling of
/// m_is stage-1 samples toward the target, then the combined loss with the
/// resampled set as data and either it or a 50:50 batch mixture with the
/// biased data as LD reference. Target evaluations: exactly m_is.
/// `after_stage1` sees the model between the two stages.
RefineResult refine_biased(const LabeledDataset& biased, const TargetDensity& target, const RefineConfig& cfg,
                           FlowModel& model, const EvalHook& eval = {},
                           const std::function<void(const FlowModel&)>& after_stage1 = {});

struct DemoRun {
  double ld_loss = 0.0;
  double nll_full = 0.0;
  double hist_kl = 0.0;
  double box_mass = 0.0;
};

struct DemoReport {
  DemoRun ld_only;
  DemoRun combined;
};

struct DemoConfig {
  TrainConfig train;            ///< loss.lambda_data is forced to 0 for the LD-only run
  double combined_lambda_data = 0.5;
  std::size_t n_test = 100000;
  std::array<double, 2> box_lo{-3.0, -3.0};
  std::array<double, 2> box_hi{3.0, 3.0};
  int box_grid = 200;
};

/// Pure LD training on a reference with partial support next to the same
/// run with a data term; reports final LD loss, NLL on the full target,
/// histogram KL and the probability mass inside a box.
DemoReport ldr_only_demo(const LabeledDataset& restricted, const TargetDensity& full_target, const DemoConfig& cfg,
                         const FlowShape& shape, std::uint64_t model_seed);

}  // namespace ldreg
