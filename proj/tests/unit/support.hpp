#pragma once

#include <cmath>
#include <functional>

#include <Eigen/Core>

#include "ldreg/flow.hpp"

namespace testing {

inline ldreg::FlowShape small_shape(std::size_t layers = 4, std::size_t hidden = 12) {
  ldreg::FlowShape s;
  s.layers = layers;
  s.hidden = hidden;
  return s;
}

/// A flow far from the identity: the default init with every parameter
/// jittered so that scales and shifts are of order one.
inline ldreg::FlowModel rough_flow(std::size_t layers, std::size_t hidden, std::uint64_t seed, double jitter = 0.3) {
  ldreg::FlowModel m(small_shape(layers, hidden), seed);
  Eigen::VectorXd p = m.parameters();
  std::uint64_t s = seed * 6364136223846793005ULL + 1442695040888963407ULL;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    s = s * 6364136223846793005ULL + 1442695040888963407ULL;
    const double u = static_cast<double>(s >> 11) / 9007199254740992.0;
    p[i] += jitter * (2.0 * u - 1.0);
  }
  m.set_parameters(p);
  return m;
}

/// Central differences of a scalar function of the flow parameters.
inline Eigen::VectorXd fd_gradient(const ldreg::FlowModel& model, const std::function<double(const ldreg::FlowModel&)>& f,
                                   double h = 1e-5) {
  ldreg::FlowModel m = model;
  Eigen::VectorXd p = model.parameters();
  Eigen::VectorXd g(p.size());
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double keep = p[i];
    p[i] = keep + h;
    m.set_parameters(p);
    const double up = f(m);
    p[i] = keep - h;
    m.set_parameters(p);
    const double down = f(m);
    p[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// Largest relative error over coordinates whose magnitude exceeds `floor`.
inline double max_rel_error(const Eigen::VectorXd& exact, const Eigen::VectorXd& approx, double floor = 1e-6) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < exact.size(); ++i) {
    const double scale = std::max(std::abs(exact[i]), std::abs(approx[i]));
    if (scale <= floor) continue;
    worst = std::max(worst, std::abs(exact[i] - approx[i]) / scale);
  }
  return worst;
}

}  // namespace testing
