#include "ldreg/targets.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "ldreg/error.hpp"
#include "ldreg/rng.hpp"

namespace ldreg {

using Eigen::Index;
using Eigen::VectorXd;

double energy_regularize(double energy, const EnergyRegularization& reg) {
  if (std::isnan(energy)) return energy;
  if (energy <= reg.e_high) return energy;
  if (energy <= reg.e_max) return std::log(energy - reg.e_high + 1.0) + reg.e_high;
  return std::log(reg.e_max - reg.e_high + 1.0) + reg.e_high;
}

double energy_regularize_slope(double energy, const EnergyRegularization& reg) {
  if (energy <= reg.e_high) return 1.0;
  if (energy <= reg.e_max) return 1.0 / (energy - reg.e_high + 1.0);
  return 0.0;
}

// ---------------------------------------------------------------------------
// TargetDensity

double TargetDensity::regularize(double raw_log_p) const {
  if (!reg_) return raw_log_p;
  // An infinite energy (zero density) lands on the constant branch.
  const double e = std::isinf(raw_log_p) && raw_log_p < 0 ? std::numeric_limits<double>::infinity() : -raw_log_p;
  return -energy_regularize(e, *reg_);
}

double TargetDensity::log_density(const Eigen::Ref<const VectorXd>& x) const {
  if (static_cast<std::size_t>(x.size()) != dim()) throw ConfigError("target dimension mismatch");
  evals_.fetch_add(1);
  return regularize(raw_log_density(x));
}

VectorXd TargetDensity::log_density(const Points& x) const {
  if (static_cast<std::size_t>(x.rows()) != dim()) throw ConfigError("target dimension mismatch");
  evals_.fetch_add(static_cast<std::uint64_t>(x.cols()));
  VectorXd out = raw_log_density_batch(x);
  if (reg_)
    for (Index i = 0; i < out.size(); ++i) out(i) = regularize(out(i));
  return out;
}

VectorXd TargetDensity::energy(const Points& x) const { return -log_density(x); }

VectorXd TargetDensity::log_density_and_score(const Points& x, Points& score) const {
  if (static_cast<std::size_t>(x.rows()) != dim()) throw ConfigError("target dimension mismatch");
  evals_.fetch_add(static_cast<std::uint64_t>(x.cols()));
  score.resize(x.rows(), x.cols());
  VectorXd out = raw_log_density_and_score_batch(x, score);
  if (reg_) {
    for (Index i = 0; i < out.size(); ++i) {
      const double slope = energy_regularize_slope(-out(i), *reg_);
      out(i) = regularize(out(i));
      score.col(i) *= slope;
    }
  }
  return out;
}

VectorXd TargetDensity::raw_log_density_batch(const Points& x) const {
  VectorXd out(x.cols());
  for (Index i = 0; i < x.cols(); ++i) out(i) = raw_log_density(x.col(i));
  return out;
}

VectorXd TargetDensity::raw_log_density_and_score_batch(const Points& x, Points& score) const {
  VectorXd out(x.cols());
  for (Index i = 0; i < x.cols(); ++i) out(i) = raw_log_density_and_score(x.col(i), score.col(i));
  return out;
}

Points TargetDensity::sample(std::size_t, std::uint64_t) const {
  throw ConfigError("target '" + name() + "' has no exact sampler");
}

// ---------------------------------------------------------------------------
// GmmTarget

GmmTarget::GmmTarget(std::size_t dim, double sigma)
    : GmmTarget(dim, std::vector<double>(std::size_t{1} << dim, 1.0 / static_cast<double>(std::size_t{1} << dim)),
                sigma) {}

GmmTarget::GmmTarget(std::size_t dim, std::vector<double> weights, double sigma)
    : dim_(dim), sigma_(sigma), weights_(std::move(weights)) {
  if (dim_ < 1 || dim_ > 16) throw ConfigError("gmm dimension must be in [1, 16]");
  if (!(sigma_ > 0.0)) throw ConfigError("gmm sigma must be positive");
  const std::size_t k = std::size_t{1} << dim_;
  if (weights_.size() != k)
    throw ConfigError("gmm needs " + std::to_string(k) + " weights, got " + std::to_string(weights_.size()));
  double total = 0.0;
  for (double w : weights_) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("gmm weights must be finite and non-negative");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("gmm weights must sum to 1");
  log_weights_.resize(k);
  for (std::size_t c = 0; c < k; ++c) log_weights_[c] = std::log(weights_[c]);
  means_.resize(static_cast<Index>(dim_), static_cast<Index>(k));
  for (std::size_t c = 0; c < k; ++c)
    for (std::size_t j = 0; j < dim_; ++j) means_(static_cast<Index>(j), static_cast<Index>(c)) = (c >> j) & 1u ? 1.0 : -1.0;
}

std::string GmmTarget::name() const { return "gmm" + std::to_string(dim_); }

double GmmTarget::raw_log_density(const Eigen::Ref<const VectorXd>& x) const {
  VectorXd unused(x.size());
  return raw_log_density_and_score(x, unused);
}

double GmmTarget::raw_log_density_and_score(const Eigen::Ref<const VectorXd>& x, Eigen::Ref<VectorXd> score) const {
  const double var = sigma_ * sigma_;
  const double norm = -0.5 * static_cast<double>(dim_) * std::log(2.0 * std::numbers::pi * var);
  const Index k = means_.cols();
  VectorXd logc(k);
  double mx = -std::numeric_limits<double>::infinity();
  for (Index c = 0; c < k; ++c) {
    logc(c) = log_weights_[static_cast<std::size_t>(c)] + norm - 0.5 * (x - means_.col(c)).squaredNorm() / var;
    mx = std::max(mx, logc(c));
  }
  if (std::isinf(mx)) {
    score.setZero();
    return mx;
  }
  double s = 0.0;
  score.setZero();
  for (Index c = 0; c < k; ++c) {
    const double r = std::exp(logc(c) - mx);
    s += r;
    score += r * (means_.col(c) - x);
  }
  score /= s * var;
  return mx + std::log(s);
}

Points GmmTarget::sample(std::size_t n, std::uint64_t seed) const { return sample(n, seed, nullptr); }

Points GmmTarget::sample(std::size_t n, std::uint64_t seed, std::vector<std::size_t>* components) const {
  Rng rng(seed, 0x6e33);
  std::discrete_distribution<std::size_t> pick(weights_.begin(), weights_.end());
  Points out(static_cast<Index>(dim_), static_cast<Index>(n));
  if (components) components->resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = pick(rng.engine());
    if (components) (*components)[i] = c;
    for (std::size_t j = 0; j < dim_; ++j)
      out(static_cast<Index>(j), static_cast<Index>(i)) = means_(static_cast<Index>(j), static_cast<Index>(c)) + sigma_ * rng.normal();
  }
  return out;
}

// ---------------------------------------------------------------------------
// TemperedTarget

TemperedTarget::TemperedTarget(std::shared_ptr<const TargetDensity> base, double temperature)
    : base_(std::move(base)), temperature_(temperature) {
  if (!base_) throw ConfigError("tempered target needs a base target");
  if (!(temperature_ >= 1.0)) throw ConfigError("temperature must be >= 1");
}

std::string TemperedTarget::name() const {
  std::ostringstream os;
  os << base_->name() << "-T" << temperature_;
  return os.str();
}

Points TemperedTarget::sample(std::size_t n, std::uint64_t seed) const {
  if (!can_sample()) throw ConfigError("tempered target '" + name() + "' has no exact sampler");
  return base_->sample(n, seed);
}

double TemperedTarget::raw_log_density(const Eigen::Ref<const VectorXd>& x) const {
  return base_->log_density(x) / temperature_;
}

double TemperedTarget::raw_log_density_and_score(const Eigen::Ref<const VectorXd>& x, Eigen::Ref<VectorXd> score) const {
  Points p = x;
  Points s;
  const double lp = base_->log_density_and_score(p, s)(0);
  score = s.col(0) / temperature_;
  return lp / temperature_;
}

// ---------------------------------------------------------------------------
// FlowTarget

FlowTarget::FlowTarget(FlowModel model, double log_scale) : model_(std::move(model)), log_scale_(log_scale) {}

Points FlowTarget::sample(std::size_t n, std::uint64_t seed) const { return model_.sample(n, seed).points; }

double FlowTarget::raw_log_density(const Eigen::Ref<const VectorXd>& x) const {
  Points p = x;
  return raw_log_density_batch(p)(0);
}

double FlowTarget::raw_log_density_and_score(const Eigen::Ref<const VectorXd>& x, Eigen::Ref<VectorXd> score) const {
  Points p = x;
  Points s;
  const double lp = raw_log_density_and_score_batch(p, s)(0);
  score = s.col(0);
  return lp;
}

VectorXd FlowTarget::raw_log_density_batch(const Points& x) const {
  return (model_.log_density(x).array() + log_scale_).matrix();
}

VectorXd FlowTarget::raw_log_density_and_score_batch(const Points& x, Points& score) const {
  FlowTape tape;
  VectorXd lq = model_.log_density_taped(x, tape);
  model_.log_density_backward(tape, VectorXd::Ones(x.cols()), &score);
  return (lq.array() + log_scale_).matrix();
}

// ---------------------------------------------------------------------------

double tempered_log_density(const Eigen::Ref<const VectorXd>& x, double temperature, const TargetDensity& target) {
  if (!(temperature >= 1.0)) throw ConfigError("temperature must be >= 1");
  return target.log_density(x) / temperature;
}

GmmTarget biased_gmm(const GmmTarget& target, const std::vector<double>& biased_weights) {
  if (biased_weights.size() != target.num_components())
    throw ConfigError("biased weights must cover all " + std::to_string(target.num_components()) + " modes");
  const double total = std::accumulate(biased_weights.begin(), biased_weights.end(), 0.0);
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("biased weights must sum to 1 within 1e-9");
  return GmmTarget(target.dim(), biased_weights, target.sigma());
}

std::unique_ptr<TargetDensity> make_target(const std::string& name, const TargetOptions& options) {
  auto fail = [&]() -> std::unique_ptr<TargetDensity> { throw ConfigError("unknown target: '" + name + "'"); };
  if (name.rfind("gmm", 0) != 0) return fail();
  std::size_t pos = 3;
  std::size_t end = pos;
  while (end < name.size() && std::isdigit(static_cast<unsigned char>(name[end]))) ++end;
  if (end == pos) return fail();
  const auto dim = static_cast<std::size_t>(std::stoul(name.substr(pos, end - pos)));
  if (dim < 1 || dim > 16) return fail();
  const std::string rest = name.substr(end);

  std::unique_ptr<TargetDensity> target;
  if (rest.empty()) {
    target = std::make_unique<GmmTarget>(dim);
  } else if (rest == "-biased") {
    const GmmTarget base(dim);
    std::vector<double> w;
    if (options.bias_weights)
      w = *options.bias_weights;
    else if (dim == 2)
      w = default_biased_weights();
    else
      throw ConfigError("target '" + name + "' needs explicit bias weights");
    target = std::make_unique<GmmTarget>(biased_gmm(base, w));
  } else if (rest.rfind("-T", 0) == 0) {
    double t = 0.0;
    try {
      std::size_t used = 0;
      t = std::stod(rest.substr(2), &used);
      if (used != rest.size() - 2) return fail();
    } catch (const std::logic_error&) {
      return fail();
    }
    target = std::make_unique<TemperedTarget>(std::make_shared<GmmTarget>(dim), t);
  } else {
    return fail();
  }
  target->set_regularization(options.regularization);
  return target;
}

}  // namespace ldreg
