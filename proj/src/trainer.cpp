#include "ldreg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

#include "ldreg/error.hpp"
#include "ldreg/impsampling.hpp"
#include "ldreg/metrics.hpp"

namespace ldreg {

using Eigen::Index;
using Eigen::VectorXd;

double cosine_lr(std::size_t t, std::size_t steps, double lr0) {
  if (steps == 0) return lr0;
  const double u = static_cast<double>(std::min(t, steps)) / static_cast<double>(steps);
  return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * u));
}

Adam::Adam(std::size_t n, AdamConfig cfg)
    : cfg_(cfg), m_(VectorXd::Zero(static_cast<Index>(n))), v_(VectorXd::Zero(static_cast<Index>(n))) {}

void Adam::step(VectorXd& params, const VectorXd& grad, double lr) {
  if (grad.size() != params.size() || m_.size() != params.size()) throw ConfigError("Adam: shape mismatch");
  if (!grad.allFinite()) throw TrainingError("non-finite gradient at step " + std::to_string(t_));
  ++t_;
  m_ = cfg_.beta1 * m_ + (1.0 - cfg_.beta1) * grad;
  v_ = cfg_.beta2 * v_ + (1.0 - cfg_.beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  params.array() -= lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + cfg_.eps);
}

void TrainConfig::validate() const {
  if (steps < 1) throw ConfigError("steps must be at least 1");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (!(lr0 > 0.0)) throw ConfigError("lr0 must be positive");
  loss.validate();
}

void RunHistory::write_csv(const std::string& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write history: " + path);
  out << "step,loss,loss_data,loss_ld,val_nll,ess,lr\n";
  out.precision(10);
  for (const auto& r : records)
    out << r.step << ',' << r.loss << ',' << r.data_term << ',' << r.ld_term << ',' << r.val_nll << ',' << r.ess
        << ',' << r.lr << '\n';
}

RunHistory run_optimizer(FlowModel& model, const TrainConfig& cfg, const StepGradient& gradient,
                         const EvalHook& eval) {
  cfg.validate();
  RunHistory hist;
  Adam adam(model.num_params(), cfg.adam);
  for (std::size_t t = 0; t < cfg.steps; ++t) {
    const double lr = cosine_lr(t, cfg.steps, cfg.lr0);
    const LossGradient g = gradient(model, t);
    adam.step(model.mutable_parameters(), g.gradient, lr);
    const bool last = t + 1 == cfg.steps;
    if (last || (cfg.eval_every > 0 && (t + 1) % cfg.eval_every == 0)) {
      HistoryRecord r;
      r.step = t + 1;
      r.loss = g.value;
      r.data_term = g.data_term;
      r.ld_term = g.ld_term;
      r.lr = lr;
      if (eval) eval(model, r);
      hist.records.push_back(r);
    }
  }
  return hist;
}

EpochSampler::EpochSampler(Index n, std::size_t batch, std::uint64_t seed, std::uint64_t stream)
    : order_(static_cast<std::size_t>(n)), batch_(std::min<std::size_t>(batch, static_cast<std::size_t>(n))),
      pos_(static_cast<std::size_t>(n)), rng_(seed, 0xba7c + stream) {
  if (n < 1) throw ConfigError("cannot draw batches from an empty dataset");
  std::iota(order_.begin(), order_.end(), Index{0});
}

std::vector<Index> EpochSampler::next() {
  if (pos_ + batch_ > order_.size()) {
    std::shuffle(order_.begin(), order_.end(), rng_.engine());
    pos_ = 0;
  }
  std::vector<Index> out(order_.begin() + static_cast<std::ptrdiff_t>(pos_),
                         order_.begin() + static_cast<std::ptrdiff_t>(pos_ + batch_));
  pos_ += batch_;
  return out;
}

RunHistory train_unbiased(const LabeledDataset& data, const TrainConfig& cfg, FlowModel& model,
                          const EvalHook& eval) {
  cfg.validate();
  data.validate();
  if (data.dim() != model.dim()) throw ConfigError("dataset and model differ in dimension");
  EpochSampler sampler(data.size(), cfg.batch_size, cfg.seed);
  const bool full = static_cast<std::size_t>(data.size()) <= cfg.batch_size;
  const ReferenceBatch whole = full ? data.all() : ReferenceBatch{};
  return run_optimizer(
      model, cfg,
      [&](const FlowModel& m, std::size_t step) {
        if (full) return combined_loss_gradient(whole, m, cfg.loss, static_cast<std::int64_t>(step));
        return combined_loss_gradient(data.batch(sampler.next()), m, cfg.loss, static_cast<std::int64_t>(step));
      },
      eval);
}

LdReference parse_ld_reference(const std::string& s) {
  if (s == "is_only") return LdReference::IsOnly;
  if (s == "both") return LdReference::Both;
  throw ConfigError("ld_reference must be 'is_only' or 'both', got '" + s + "'");
}

std::string to_string(LdReference mode) { return mode == LdReference::IsOnly ? "is_only" : "both"; }

RefineResult refine_biased(const LabeledDataset& biased, const TargetDensity& target, const RefineConfig& cfg,
                           FlowModel& model, const EvalHook& eval,
                           const std::function<void(const FlowModel&)>& after_stage1) {
  if (cfg.m_is < 2) throw ConfigError("m_is must be at least 2");
  TrainConfig s1 = cfg.stage1;
  s1.loss.lambda_data = 1.0;
  s1.loss.lambda_ld = 0.0;
  RefineResult out;
  out.stage1 = train_unbiased(biased, s1, model, eval);
  if (after_stage1) after_stage1(model);

  const std::uint64_t before = target.evaluations();
  const FlowSample prop = model.sample(cfg.m_is, cfg.stage2.seed ^ 0x15a3);
  const VectorXd log_p = target.log_density(prop.points);
  WeightedSamples ws = make_weighted(prop.points, log_p - prop.log_density);
  out.stage1_ess = ess(clip_top_weights(ws, 1e-4));
  if (!(out.stage1_ess >= cfg.min_stage1_ess))
    throw TrainingError("refinement aborted: stage-1 ESS " + std::to_string(out.stage1_ess) + " is below " +
                        std::to_string(cfg.min_stage1_ess));
  if (cfg.clip_fraction > 0.0) ws = clip_top_weights(ws, cfg.clip_fraction);
  const auto idx = categorical_indices(ws.normalized, cfg.m_is, cfg.stage2.seed ^ 0x2e5a);

  LabeledDataset& is = out.resampled;
  is.target = target.name();
  is.seed = cfg.stage2.seed;
  is.points.resize(prop.points.rows(), static_cast<Index>(cfg.m_is));
  is.energies.resize(static_cast<Index>(cfg.m_is));
  for (std::size_t j = 0; j < cfg.m_is; ++j) {
    is.points.col(static_cast<Index>(j)) = prop.points.col(idx[j]);
    is.energies(static_cast<Index>(j)) = -log_p(idx[j]);
  }
  out.target_evals = target.evaluations() - before;

  const TrainConfig& s2 = cfg.stage2;
  s2.validate();
  EpochSampler data_sampler(is.size(), s2.batch_size, s2.seed, 1);
  if (cfg.mode == LdReference::IsOnly) {
    out.stage2 = run_optimizer(
        model, s2,
        [&](const FlowModel& m, std::size_t step) {
          return combined_loss_gradient(is.batch(data_sampler.next()), m, s2.loss, static_cast<std::int64_t>(step));
        },
        eval);
  } else {
    const std::size_t half = std::max<std::size_t>(1, s2.batch_size / 2);
    EpochSampler is_half(is.size(), half, s2.seed, 2);
    EpochSampler biased_half(biased.size(), s2.batch_size - half > 0 ? s2.batch_size - half : 1, s2.seed, 3);
    out.stage2 = run_optimizer(
        model, s2,
        [&](const FlowModel& m, std::size_t step) {
          const ReferenceBatch data = is.batch(data_sampler.next());
          ReferenceBatch a = is.batch(is_half.next());
          const ReferenceBatch b = biased.batch(biased_half.next());
          ReferenceBatch ref;
          ref.points.resize(a.points.rows(), a.size() + b.size());
          ref.points << a.points, b.points;
          ref.energies.resize(a.size() + b.size());
          ref.energies << a.energies, b.energies;
          return combined_loss_gradient(data, ref, m, s2.loss, static_cast<std::int64_t>(step));
        },
        eval);
  }
  out.stage2.target_evals = out.target_evals;
  return out;
}

DemoReport ldr_only_demo(const LabeledDataset& restricted, const TargetDensity& full_target, const DemoConfig& cfg,
                         const FlowShape& shape, std::uint64_t model_seed) {
  if (shape.dim != 2) throw ConfigError("the LD-only demonstration is defined for 2-D targets");
  const Points test = full_target.sample(cfg.n_test, cfg.train.seed ^ 0xde30);
  auto run = [&](double lambda_data) {
    TrainConfig tc = cfg.train;
    tc.loss.lambda_data = lambda_data;
    tc.loss.lambda_ld = tc.loss.lambda_ld > 0.0 ? tc.loss.lambda_ld : 1.0;
    FlowModel model(shape, model_seed);
    train_unbiased(restricted, tc, model);
    DemoRun r;
    r.ld_loss = ld_loss(restricted.all(), model, tc.loss.p);
    r.nll_full = nll(test, model).mean;
    const FlowSample s = model.sample(cfg.n_test, cfg.train.seed ^ 0xde31);
    r.hist_kl = hist_kl_2d(test, s.points);
    r.box_mass = normalization_check(model, cfg.box_lo, cfg.box_hi, cfg.box_grid);
    return r;
  };
  DemoReport rep;
  rep.ld_only = run(0.0);
  rep.combined = run(cfg.combined_lambda_data);
  return rep;
}

}  // namespace ldreg
