#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ldreg/flow.hpp"

namespace ldreg {

/// Soft cap on energies: identity up to e_high, logarithmic growth up to
/// e_max, constant beyond.
struct EnergyRegularization {
  double e_high = 1e8;
  double e_max = 1e20;
};

double energy_regularize(double energy, const EnergyRegularization& reg);
/// d E_reg / d E.
double energy_regularize_slope(double energy, const EnergyRegularization& reg);

/// Unnormalized target density p~(x) = exp(-E(x)) with k_B T = 1.
///
/// Every point evaluated through the public interface increments an evaluation
/// counter, so run accounting can be checked against it.
class TargetDensity {
 public:
  TargetDensity() = default;
  /// Copies start with a fresh evaluation counter.
  TargetDensity(const TargetDensity& other) : reg_(other.reg_) {}
  TargetDensity& operator=(const TargetDensity& other) {
    reg_ = other.reg_;
    return *this;
  }
  virtual ~TargetDensity() = default;

  virtual std::size_t dim() const = 0;
  virtual std::string name() const = 0;

  /// log p~ (regularized when a regularization is set).
  double log_density(const Eigen::Ref<const Eigen::VectorXd>& x) const;
  double log_density(const Eigen::VectorXd& x) const { return log_density(Eigen::Ref<const Eigen::VectorXd>(x)); }
  Eigen::VectorXd log_density(const Points& x) const;
  /// E(x) = -log p~(x).
  Eigen::VectorXd energy(const Points& x) const;
  /// log p~ and its gradient in x, counted as one evaluation per point.
  Eigen::VectorXd log_density_and_score(const Points& x, Points& score) const;

  virtual bool can_sample() const { return false; }
  virtual Points sample(std::size_t n, std::uint64_t seed) const;

  void set_regularization(std::optional<EnergyRegularization> reg) { reg_ = reg; }
  const std::optional<EnergyRegularization>& regularization() const { return reg_; }

  std::uint64_t evaluations() const { return evals_.load(); }
  void reset_evaluations() const { evals_.store(0); }

 protected:
  virtual double raw_log_density(const Eigen::Ref<const Eigen::VectorXd>& x) const = 0;
  virtual double raw_log_density_and_score(const Eigen::Ref<const Eigen::VectorXd>& x,
                                           Eigen::Ref<Eigen::VectorXd> score) const = 0;
  /// Batched variants; the defaults loop over columns.
  virtual Eigen::VectorXd raw_log_density_batch(const Points& x) const;
  virtual Eigen::VectorXd raw_log_density_and_score_batch(const Points& x, Points& score) const;

 private:
  double regularize(double raw_log_p) const;
  mutable std::atomic<std::uint64_t> evals_{0};
  std::optional<EnergyRegularization> reg_;
};

/// Mixture of 2^d isotropic Gaussians centred on {-1,+1}^d. Component k has
/// coordinate j equal to +1 when bit j of k is set, so component 0 sits at
/// (-1,...,-1). Normalized: log Z = 0.
class GmmTarget final : public TargetDensity {
 public:
  explicit GmmTarget(std::size_t dim = 2, double sigma = 0.5);
  GmmTarget(std::size_t dim, std::vector<double> weights, double sigma = 0.5);

  std::size_t dim() const override { return dim_; }
  std::string name() const override;
  bool can_sample() const override { return true; }
  Points sample(std::size_t n, std::uint64_t seed) const override;
  /// Same draws as sample(), with the component index of each point.
  Points sample(std::size_t n, std::uint64_t seed, std::vector<std::size_t>* components) const;

  const Eigen::MatrixXd& means() const { return means_; }
  const std::vector<double>& weights() const { return weights_; }
  double sigma() const { return sigma_; }
  std::size_t num_components() const { return weights_.size(); }

 protected:
  double raw_log_density(const Eigen::Ref<const Eigen::VectorXd>& x) const override;
  double raw_log_density_and_score(const Eigen::Ref<const Eigen::VectorXd>& x,
                                   Eigen::Ref<Eigen::VectorXd> score) const override;

 private:
  std::size_t dim_;
  double sigma_;
  std::vector<double> weights_;
  std::vector<double> log_weights_;
  Eigen::MatrixXd means_;  // dim x 2^dim
};

/// p~^(1/T). Samples only at T = 1.
class TemperedTarget final : public TargetDensity {
 public:
  TemperedTarget(std::shared_ptr<const TargetDensity> base, double temperature);

  std::size_t dim() const override { return base_->dim(); }
  std::string name() const override;
  double temperature() const { return temperature_; }
  bool can_sample() const override { return temperature_ == 1.0 && base_->can_sample(); }
  Points sample(std::size_t n, std::uint64_t seed) const override;

 protected:
  double raw_log_density(const Eigen::Ref<const Eigen::VectorXd>& x) const override;
  double raw_log_density_and_score(const Eigen::Ref<const Eigen::VectorXd>& x,
                                   Eigen::Ref<Eigen::VectorXd> score) const override;

 private:
  std::shared_ptr<const TargetDensity> base_;
  double temperature_;
};

/// A frozen flow used as a normalized target (exact optimum in tests and
/// oracle checks), optionally shifted by a constant log factor.
class FlowTarget final : public TargetDensity {
 public:
  explicit FlowTarget(FlowModel model, double log_scale = 0.0);

  std::size_t dim() const override { return model_.dim(); }
  std::string name() const override { return "flow"; }
  bool can_sample() const override { return true; }
  Points sample(std::size_t n, std::uint64_t seed) const override;
  const FlowModel& model() const { return model_; }

 protected:
  double raw_log_density(const Eigen::Ref<const Eigen::VectorXd>& x) const override;
  double raw_log_density_and_score(const Eigen::Ref<const Eigen::VectorXd>& x,
                                   Eigen::Ref<Eigen::VectorXd> score) const override;
  Eigen::VectorXd raw_log_density_batch(const Points& x) const override;
  Eigen::VectorXd raw_log_density_and_score_batch(const Points& x, Points& score) const override;

 private:
  FlowModel model_;
  double log_scale_;
};

/// log p~(x) / T. T < 1 is a configuration error.
double tempered_log_density(const Eigen::Ref<const Eigen::VectorXd>& x, double temperature,
                            const TargetDensity& target);

/// GMM with the same means and sigma but different mixture weights.
GmmTarget biased_gmm(const GmmTarget& target, const std::vector<double>& biased_weights);

inline const std::vector<double>& default_biased_weights() {
  static const std::vector<double> w{0.55, 0.25, 0.15, 0.05};
  return w;
}

struct TargetOptions {
  std::optional<std::vector<double>> bias_weights;
  std::optional<EnergyRegularization> regularization;
};

/// Registry: "gmm<d>" (e.g. "gmm2"), "gmm<d>-biased", "gmm<d>-T<temp>".
std::unique_ptr<TargetDensity> make_target(const std::string& name, const TargetOptions& options = {});

}  // namespace ldreg
