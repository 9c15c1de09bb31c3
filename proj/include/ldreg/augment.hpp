#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "ldreg/rng.hpp"

namespace ldreg {

/// N x 3 coordinates, one row per atom.
using PointSet = Eigen::Matrix<double, Eigen::Dynamic, 3>;

struct AugmentConfig {
  double sigma_t = 0.1;
  bool apply_rotation = false;

  void validate() const;
};

struct Centered {
  PointSet x;
  Eigen::Vector3d com;
};

Centered center(const PointSet& x);

/// Uniform random rotation from a normalized Gaussian quaternion.
Eigen::Matrix3d random_rotation(Rng& rng);

/// Rotate (optional) then shift every row by t. The input must have zero
/// centre of mass (norm <= 1e-9), else ContractError.
PointSet augment(const PointSet& x_centered, const Eigen::Vector3d& t,
                 const std::optional<Eigen::Matrix3d>& rotation = std::nullopt);

/// Draw t ~ N(0, sigma_t^2 I) (and a rotation when configured) and augment.
PointSet augment_random(const PointSet& x_centered, const AugmentConfig& cfg, Rng& rng);

/// log N(com; 0, sigma^2 I_3).
double log_normal_com(const Eigen::Vector3d& com, double sigma_t);

/// Proposal log-density with the centre-of-mass Gaussian divided out.
double corrected_log_proposal_new(double log_q, const Eigen::Vector3d& com, double sigma_t);

/// Prior correction removing a chi-3 radial factor. Singular at com = 0,
/// where it raises DegenerateError.
double corrected_log_proposal_old(double log_q, const Eigen::Vector3d& com, double sigma_t);

using PointSetDensity = std::function<double(const PointSet&)>;

/// log p~0(x_centered) + log N(t) - log q(augment(x_centered, t)).
double augmented_f_theta(const PointSet& x_centered, const Eigen::Vector3d& t, const PointSetDensity& model_log_q,
                         const PointSetDensity& target_centered_log_p, double sigma_t);

/// Isotropic Gaussian with scale s on the centred subspace of N atoms. The
/// closed-form reference for every augmentation identity.
class CenteredGaussianPointSet {
 public:
  CenteredGaussianPointSet(int n_atoms, double scale);

  int n_atoms() const { return n_atoms_; }
  double scale() const { return scale_; }

  /// Normalized density on the 3(N - 1)-dimensional centred subspace.
  double log_density(const PointSet& x_centered) const;
  /// Exact density of augmented points x = x_centered + t with t ~ N(0, sigma_t^2 I).
  double log_augmented_density(const PointSet& x, double sigma_t) const;

  PointSet sample_centered(Rng& rng) const;

 private:
  int n_atoms_;
  double scale_;
};

}  // namespace ldreg
