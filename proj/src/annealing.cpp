#include "ldreg/annealing.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include "ldreg/error.hpp"
#include "ldreg/impsampling.hpp"
#include "ldreg/rng.hpp"

namespace ldreg {

using Eigen::Index;
using Eigen::VectorXd;

void AnnealConfig::validate() const {
  if (outer_steps < 1 || inner_steps < 1 || buffer_size < 1 || batch_size < 1)
    throw ConfigError("outer_steps, inner_steps, buffer_size and batch_size must be at least 1");
  if (!(eps_tr > 0.0)) throw ConfigError("eps_tr must be positive");
  if (!(t_end >= 1.0) || !(t_start >= t_end)) throw ConfigError("temperatures must satisfy t_start >= t_end >= 1");
  if (!(anneal_fraction >= 0.0 && anneal_fraction <= 1.0)) throw ConfigError("anneal_fraction must be in [0, 1]");
  if (!(lambda_tol > 0.0)) throw ConfigError("lambda_tol must be positive");
  if (!(lr0 > 0.0)) throw ConfigError("lr0 must be positive");
  if (force_lambda && !(*force_lambda >= 0.0 && *force_lambda <= 1.0)) throw ConfigError("force_lambda must be in [0, 1]");
  loss.validate();
}

double intermediate_log_density(double log_q_anchor, double log_p, double lambda, double temperature) {
  if (lambda == 0.0) return log_q_anchor;
  if (lambda == 1.0) return log_p / temperature;
  return (1.0 - lambda) * log_q_anchor + lambda * log_p / temperature;
}

double intermediate_log_density(const VectorXd& x, const FlowModel& anchor, const TargetDensity& target,
                                double lambda, double temperature) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must be in [0, 1]");
  if (!(temperature >= 1.0)) throw ConfigError("temperature must be >= 1");
  return intermediate_log_density(anchor.log_density(x), target.log_density(Eigen::Ref<const VectorXd>(x)), lambda,
                                  temperature);
}

double temperature_schedule(std::size_t i, const AnnealConfig& cfg) {
  const auto span = static_cast<std::size_t>(std::floor(cfg.anneal_fraction * static_cast<double>(cfg.outer_steps)));
  if (span == 0 || i >= span) return cfg.t_end;
  const double u = static_cast<double>(i) / static_cast<double>(span);
  return cfg.t_start * std::pow(cfg.t_end / cfg.t_start, u);
}

double estimate_kl_step(std::span<const double> log_q_anchor, std::span<const double> log_p, double lambda,
                        double temperature) {
  if (log_q_anchor.size() != log_p.size()) throw ConfigError("buffer arrays differ in length");
  if (log_q_anchor.size() < 100) throw DegenerateError("KL step estimate needs at least 100 buffer points");
  if (lambda == 0.0) return 0.0;
  const auto n = static_cast<Index>(log_q_anchor.size());
  VectorXd r(n);
  for (Index i = 0; i < n; ++i) r(i) = lambda * (log_p[static_cast<std::size_t>(i)] / temperature - log_q_anchor[static_cast<std::size_t>(i)]);
  const double mx = r.maxCoeff();
  const VectorXd w = (r.array() - mx).exp();
  const double s = w.sum();
  return w.dot(r) / s - (mx + std::log(s / static_cast<double>(n)));
}

double bisect_lambda(const std::function<double(double)>& kl, double eps, double tol) {
  if (kl(1.0) <= eps) return 1.0;
  double lo = 0.0;
  double hi = 1.0;
  while (hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    if (kl(mid) <= eps)
      lo = mid;
    else
      hi = mid;
  }
  return lo;
}

double adapt_lambda(std::span<const double> log_q_anchor, std::span<const double> log_p, double temperature,
                    double eps, double tol) {
  return bisect_lambda([&](double l) { return estimate_kl_step(log_q_anchor, log_p, l, temperature); }, eps, tol);
}

void AnnealHistory::write_csv(const std::string& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write history: " + path);
  out << "outer_step,T,lambda,kl_step,buffer_ess,loss_data,loss_ld,kl_expost,target_evals\n";
  out.precision(10);
  for (const auto& r : records)
    out << r.outer_step << ',' << r.temperature << ',' << r.lambda << ',' << r.kl_step << ',' << r.buffer_ess << ','
        << r.loss_data << ',' << r.loss_ld << ',' << r.kl_expost << ',' << r.target_evals << '\n';
}

AnnealHistory anneal_run(const AnnealConfig& cfg, const TargetDensity& target, FlowModel& model) {
  cfg.validate();
  if (target.dim() != model.dim()) throw ConfigError("target and model differ in dimension");
  AnnealHistory hist;
  Adam adam(model.num_params(), cfg.adam);
  const std::size_t total_steps = cfg.outer_steps * cfg.inner_steps;
  const std::uint64_t evals_before = target.evaluations();
  Rng batch_rng(cfg.seed, 0xa11e);

  for (std::size_t i = 0; i < cfg.outer_steps; ++i) {
    const FlowModel anchor = model;
    const FlowSample buf = anchor.sample(cfg.buffer_size, cfg.seed * 1000003ULL + i);
    const VectorXd log_p = target.log_density(buf.points);
    const VectorXd& log_qa = buf.log_density;

    AnnealRecord rec;
    rec.outer_step = i;
    rec.temperature = temperature_schedule(i, cfg);
    const std::span<const double> sq(log_qa.data(), static_cast<std::size_t>(log_qa.size()));
    const std::span<const double> sp(log_p.data(), static_cast<std::size_t>(log_p.size()));
    rec.lambda = cfg.force_lambda ? *cfg.force_lambda : adapt_lambda(sq, sp, rec.temperature, cfg.eps_tr, cfg.lambda_tol);
    rec.kl_step = buf.points.cols() >= 100 ? estimate_kl_step(sq, sp, rec.lambda, rec.temperature) : 0.0;

    // Buffer labels: energies of the intermediate density, weights toward it.
    VectorXd log_qi(log_qa.size());
    for (Index j = 0; j < log_qa.size(); ++j)
      log_qi(j) = intermediate_log_density(log_qa(j), log_p(j), rec.lambda, rec.temperature);
    const WeightedSamples ws = make_weighted(buf.points, log_qi - log_qa);
    rec.buffer_ess = ess(ws);
    if (rec.buffer_ess < cfg.min_buffer_ess)
      throw TrainingError("mode collapse: buffer ESS " + std::to_string(rec.buffer_ess) + " at outer step " +
                          std::to_string(i));

    ReferenceBatch buffer;
    if (cfg.resample_buffer) {
      const auto idx = categorical_indices(ws.normalized, cfg.buffer_size, cfg.seed * 7919ULL + i);
      buffer.points.resize(buf.points.rows(), static_cast<Index>(idx.size()));
      buffer.energies.resize(static_cast<Index>(idx.size()));
      for (std::size_t j = 0; j < idx.size(); ++j) {
        buffer.points.col(static_cast<Index>(j)) = buf.points.col(idx[j]);
        buffer.energies(static_cast<Index>(j)) = -log_qi(idx[j]);
      }
    } else {
      buffer.points = buf.points;
      buffer.energies = -log_qi;
      buffer.weights = ws.normalized;
    }

    const auto n = static_cast<std::size_t>(buffer.size());
    const std::size_t bs = std::min(cfg.batch_size, n);
    std::vector<Index> idx(bs);
    ReferenceBatch mb;
    for (std::size_t t = 0; t < cfg.inner_steps; ++t) {
      const std::size_t global = i * cfg.inner_steps + t;
      const double lr = cosine_lr(global, total_steps, cfg.lr0);
      LossGradient g;
      if (bs == n) {
        g = combined_loss_gradient(buffer, model, cfg.loss, static_cast<std::int64_t>(global));
      } else {
        for (auto& k : idx) k = static_cast<Index>(batch_rng.index(n));
        mb.points.resize(buffer.points.rows(), static_cast<Index>(bs));
        mb.energies.resize(static_cast<Index>(bs));
        if (buffer.weights.size()) mb.weights.resize(static_cast<Index>(bs));
        for (std::size_t k = 0; k < bs; ++k) {
          mb.points.col(static_cast<Index>(k)) = buffer.points.col(idx[k]);
          mb.energies(static_cast<Index>(k)) = buffer.energies(idx[k]);
          if (buffer.weights.size()) mb.weights(static_cast<Index>(k)) = buffer.weights(idx[k]);
        }
        if (mb.weights.size() && !(mb.weights.sum() > 0.0)) continue;
        g = combined_loss_gradient(mb, model, cfg.loss, static_cast<std::int64_t>(global));
      }
      adam.step(model.mutable_parameters(), g.gradient, lr);
      rec.loss_data = g.data_term;
      rec.loss_ld = g.ld_term;
    }

    // Ex-post trust region: KL(q_new || q_anchor) on fresh draws of the new model.
    const FlowSample fresh = model.sample(cfg.buffer_size, cfg.seed * 1000003ULL + i + 0x9e37);
    rec.kl_expost = (fresh.log_density - anchor.log_density(fresh.points)).mean();
    rec.target_evals = target.evaluations() - evals_before;
    hist.records.push_back(rec);
  }
  hist.target_evals = target.evaluations() - evals_before;
  return hist;
}

}  // namespace ldreg
