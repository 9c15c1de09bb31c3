#include "ldreg/augment.hpp"

#include <cmath>
#include <numbers>

#include <Eigen/Geometry>

#include "ldreg/error.hpp"

namespace ldreg {

void AugmentConfig::validate() const {
  if (!(sigma_t > 0.0)) throw ConfigError("sigma_t must be positive");
}

Centered center(const PointSet& x) {
  if (x.rows() < 1) throw ConfigError("point set needs at least one atom");
  Centered c;
  c.com = x.colwise().mean().transpose();
  c.x = x.rowwise() - c.com.transpose();
  return c;
}

Eigen::Matrix3d random_rotation(Rng& rng) {
  Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
  q.normalize();
  return q.toRotationMatrix();
}

PointSet augment(const PointSet& x_centered, const Eigen::Vector3d& t, const std::optional<Eigen::Matrix3d>& rotation) {
  const Eigen::Vector3d com = x_centered.colwise().mean().transpose();
  if (com.norm() > 1e-9) throw ContractError("augment expects a centred point set");
  PointSet out = rotation ? PointSet(x_centered * rotation->transpose()) : x_centered;
  out.rowwise() += t.transpose();
  return out;
}

PointSet augment_random(const PointSet& x_centered, const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  std::optional<Eigen::Matrix3d> rot;
  if (cfg.apply_rotation) rot = random_rotation(rng);
  const Eigen::Vector3d t(cfg.sigma_t * rng.normal(), cfg.sigma_t * rng.normal(), cfg.sigma_t * rng.normal());
  return augment(x_centered, t, rot);
}

double log_normal_com(const Eigen::Vector3d& com, double sigma_t) {
  const double var = sigma_t * sigma_t;
  return -1.5 * std::log(2.0 * std::numbers::pi * var) - 0.5 * com.squaredNorm() / var;
}

double corrected_log_proposal_new(double log_q, const Eigen::Vector3d& com, double sigma_t) {
  return log_q - log_normal_com(com, sigma_t);
}

double corrected_log_proposal_old(double log_q, const Eigen::Vector3d& com, double sigma_t) {
  const double r2 = com.squaredNorm();
  if (!(r2 > 0.0)) throw DegenerateError("chi-3 correction is singular at zero centre of mass");
  const double s3 = sigma_t * sigma_t * sigma_t;
  return log_q + r2 / (2.0 * sigma_t * sigma_t) - std::log(r2 / (std::sqrt(2.0) * s3 * std::tgamma(1.5)));
}

double augmented_f_theta(const PointSet& x_centered, const Eigen::Vector3d& t, const PointSetDensity& model_log_q,
                         const PointSetDensity& target_centered_log_p, double sigma_t) {
  return target_centered_log_p(x_centered) + log_normal_com(t, sigma_t) - model_log_q(augment(x_centered, t));
}

CenteredGaussianPointSet::CenteredGaussianPointSet(int n_atoms, double scale) : n_atoms_(n_atoms), scale_(scale) {
  if (n_atoms_ < 2) throw ConfigError("point-set Gaussian needs at least two atoms");
  if (!(scale_ > 0.0)) throw ConfigError("scale must be positive");
}

double CenteredGaussianPointSet::log_density(const PointSet& x_centered) const {
  const double dof = 3.0 * (n_atoms_ - 1);
  const double var = scale_ * scale_;
  return -0.5 * dof * std::log(2.0 * std::numbers::pi * var) - 0.5 * x_centered.squaredNorm() / var;
}

double CenteredGaussianPointSet::log_augmented_density(const PointSet& x, double sigma_t) const {
  const Centered c = center(x);
  // Splitting each axis into its mean and centred part rescales the mean
  // coordinate by sqrt(N).
  return log_density(c.x) + log_normal_com(c.com, sigma_t) - 1.5 * std::log(static_cast<double>(n_atoms_));
}

PointSet CenteredGaussianPointSet::sample_centered(Rng& rng) const {
  PointSet x(n_atoms_, 3);
  for (int i = 0; i < n_atoms_; ++i)
    for (int a = 0; a < 3; ++a) x(i, a) = scale_ * rng.normal();
  return center(x).x;
}

}  // namespace ldreg
