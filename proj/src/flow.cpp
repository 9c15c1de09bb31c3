#include "ldreg/flow.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "fastmath.hpp"
#include "ldreg/error.hpp"
#include "ldreg/rng.hpp"

namespace ldreg {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using ConstMap = Eigen::Map<const MatrixXd>;
using MutMap = Eigen::Map<MatrixXd>;

constexpr Index kChunk = 4096;

ConstMap view(const VectorXd& p, const ParamSlice& s) {
  return ConstMap(p.data() + s.offset, static_cast<Index>(s.rows), static_cast<Index>(s.cols));
}

MutMap view(VectorXd& p, const ParamSlice& s) {
  return MutMap(p.data() + s.offset, static_cast<Index>(s.rows), static_cast<Index>(s.cols));
}

struct Conditioner {
  MatrixXd h1, h2, squash, shift;
};

void run_conditioner(const VectorXd& p, const LayerIndex& li, const MatrixXd& cond, Conditioner& c) {
  const auto kt = static_cast<Index>(li.transformed.size());
  c.h1.noalias() = view(p, li.w1) * cond;
  c.h1.colwise() += view(p, li.b1).col(0);
  detail::tanh_inplace(c.h1);
  c.h2.noalias() = view(p, li.w2) * c.h1;
  c.h2.colwise() += view(p, li.b2).col(0);
  detail::tanh_inplace(c.h2);
  MatrixXd out = view(p, li.w3) * c.h2;
  out.colwise() += view(p, li.b3).col(0);
  c.squash = out.topRows(kt);
  detail::tanh_inplace(c.squash);
  c.shift = out.bottomRows(kt);
}

void check_points(const Points& pts, std::size_t dim) {
  if (static_cast<std::size_t>(pts.rows()) != dim)
    throw ConfigError("point dimension " + std::to_string(pts.rows()) + " does not match flow dimension " +
                      std::to_string(dim));
}

// One coupling layer applied to a block of columns. forward=true maps z -> x.
void apply_layer(const VectorXd& p, const LayerIndex& li, double clamp, bool forward, Points& y,
                 Eigen::Ref<VectorXd> log_det, FlowTape::Layer* tape) {
  Conditioner c;
  const MatrixXd cond = y(li.conditioned, Eigen::all);
  run_conditioner(p, li, cond, c);
  MatrixXd scale = clamp * c.squash;
  MatrixXd yt = y(li.transformed, Eigen::all);
  MatrixXd out;
  if (forward) {
    out = yt.cwiseProduct(scale.array().exp().matrix()) + c.shift;
    log_det += scale.colwise().sum().transpose();
  } else {
    out = (yt - c.shift).cwiseProduct((-scale.array()).exp().matrix());
    log_det -= scale.colwise().sum().transpose();
  }
  if (tape) {
    tape->input = y;
    tape->h1 = std::move(c.h1);
    tape->h2 = std::move(c.h2);
    tape->squash = std::move(c.squash);
    tape->scale = scale;
    tape->transformed_out = out;
  }
  y(li.transformed, Eigen::all) = out;
}

// Shared conditioner backward: given d/d(raw scale) and d/d(shift), accumulate
// parameter gradients and return d/d(conditioned inputs).
MatrixXd conditioner_backward(const VectorXd& p, const LayerIndex& li, const FlowTape::Layer& t,
                              const MatrixXd& g_raw, const MatrixXd& g_shift, VectorXd& grad) {
  const Index kt = g_raw.rows();
  MatrixXd g_o(2 * kt, g_raw.cols());
  g_o.topRows(kt) = g_raw;
  g_o.bottomRows(kt) = g_shift;
  view(grad, li.w3).noalias() += g_o * t.h2.transpose();
  view(grad, li.b3).col(0) += g_o.rowwise().sum();

  MatrixXd g_a2 = view(p, li.w3).transpose() * g_o;
  g_a2.array() *= 1.0 - t.h2.array().square();
  view(grad, li.w2).noalias() += g_a2 * t.h1.transpose();
  view(grad, li.b2).col(0) += g_a2.rowwise().sum();

  MatrixXd g_a1 = view(p, li.w2).transpose() * g_a2;
  g_a1.array() *= 1.0 - t.h1.array().square();
  const MatrixXd cond = t.input(li.conditioned, Eigen::all);
  view(grad, li.w1).noalias() += g_a1 * cond.transpose();
  view(grad, li.b1).col(0) += g_a1.rowwise().sum();

  return view(p, li.w1).transpose() * g_a1;
}

}  // namespace

FlowModel::FlowModel(const FlowShape& shape, std::uint64_t seed) : shape_(shape), seed_(seed) {
  build_index();
  Rng rng(seed, 0x1417);
  for (const auto& li : index_) {
    auto init = [&](const ParamSlice& s, double gain) {
      const double stddev = gain * std::sqrt(2.0 / static_cast<double>(s.cols));
      auto w = view(params_, s);
      for (Index j = 0; j < w.cols(); ++j)
        for (Index i = 0; i < w.rows(); ++i) w(i, j) = stddev * rng.normal();
    };
    init(li.w1, 1.0);
    init(li.w2, 1.0);
    init(li.w3, 0.01);
  }
}

FlowModel FlowModel::identity(const FlowShape& shape) {
  FlowModel m;
  m.shape_ = shape;
  m.build_index();
  return m;
}

void FlowModel::build_index() {
  if (shape_.dim < 2) throw ConfigError("coupling flow needs dim >= 2");
  if (shape_.layers < 1 || shape_.hidden < 1) throw ConfigError("flow needs at least one layer and one hidden unit");
  if (!(shape_.scale_clamp > 0.0)) throw ConfigError("scale clamp must be positive");
  index_.clear();
  std::size_t offset = 0;
  auto slice = [&](std::size_t rows, std::size_t cols) {
    ParamSlice s{offset, rows, cols};
    offset += rows * cols;
    return s;
  };
  for (std::size_t k = 0; k < shape_.layers; ++k) {
    LayerIndex li;
    for (std::size_t j = 0; j < shape_.dim; ++j) {
      if ((j + k) % 2 == 0)
        li.conditioned.push_back(static_cast<Index>(j));
      else
        li.transformed.push_back(static_cast<Index>(j));
    }
    const std::size_t kc = li.conditioned.size();
    const std::size_t kt = li.transformed.size();
    const std::size_t h = shape_.hidden;
    li.w1 = slice(h, kc);
    li.b1 = slice(h, 1);
    li.w2 = slice(h, h);
    li.b2 = slice(h, 1);
    li.w3 = slice(2 * kt, h);
    li.b3 = slice(2 * kt, 1);
    index_.push_back(std::move(li));
  }
  params_ = VectorXd::Zero(static_cast<Index>(offset));
}

void FlowModel::set_parameters(const VectorXd& params) {
  if (params.size() != params_.size())
    throw ConfigError("parameter vector has " + std::to_string(params.size()) + " entries, flow expects " +
                      std::to_string(params_.size()));
  params_ = params;
}

double FlowModel::base_log_density(const Eigen::Ref<const VectorXd>& z) {
  const double d = static_cast<double>(z.size());
  return -0.5 * z.squaredNorm() - 0.5 * d * std::log(2.0 * std::numbers::pi);
}

VectorXd FlowModel::base_log_density(const Points& z) {
  const double d = static_cast<double>(z.rows());
  return (-0.5 * z.colwise().squaredNorm().array() - 0.5 * d * std::log(2.0 * std::numbers::pi)).matrix().transpose();
}

FlowOutput FlowModel::forward(const Points& z) const {
  check_points(z, dim());
  FlowOutput out{z, VectorXd::Zero(z.cols())};
  for (Index start = 0; start < z.cols(); start += kChunk) {
    const Index len = std::min(kChunk, z.cols() - start);
    Points block = z.middleCols(start, len);
    auto ld = out.log_det.segment(start, len);
    for (const auto& li : index_) apply_layer(params_, li, shape_.scale_clamp, true, block, ld, nullptr);
    out.points.middleCols(start, len) = block;
  }
  return out;
}

FlowOutput FlowModel::inverse(const Points& x) const {
  check_points(x, dim());
  FlowOutput out{x, VectorXd::Zero(x.cols())};
  for (Index start = 0; start < x.cols(); start += kChunk) {
    const Index len = std::min(kChunk, x.cols() - start);
    Points block = x.middleCols(start, len);
    auto ld = out.log_det.segment(start, len);
    for (auto it = index_.rbegin(); it != index_.rend(); ++it)
      apply_layer(params_, *it, shape_.scale_clamp, false, block, ld, nullptr);
    out.points.middleCols(start, len) = block;
  }
  return out;
}

VectorXd FlowModel::log_density(const Points& x) const {
  FlowOutput inv = inverse(x);
  return base_log_density(inv.points) + inv.log_det;
}

double FlowModel::log_density(const VectorXd& x) const {
  Points p = x;
  return log_density(p)(0);
}

FlowSample FlowModel::sample(std::size_t n, std::uint64_t seed) const {
  Rng rng(seed, 0x5a3b1e);
  Points z(static_cast<Index>(dim()), static_cast<Index>(n));
  rng.fill_normal(z);
  return sample_from_base(z);
}

FlowSample FlowModel::sample_from_base(const Points& z) const {
  FlowOutput fwd = forward(z);
  return {std::move(fwd.points), base_log_density(z) - fwd.log_det};
}

VectorXd FlowModel::log_density_taped(const Points& x, FlowTape& tape) const {
  check_points(x, dim());
  tape.layers.assign(index_.size(), {});
  Points y = x;
  VectorXd log_det = VectorXd::Zero(x.cols());
  std::size_t slot = 0;
  for (auto it = index_.rbegin(); it != index_.rend(); ++it, ++slot)
    apply_layer(params_, *it, shape_.scale_clamp, false, y, log_det, &tape.layers[slot]);
  VectorXd lq = base_log_density(y) + log_det;
  tape.output = std::move(y);
  tape.log_det = std::move(log_det);
  return lq;
}

VectorXd FlowModel::log_density_backward(const FlowTape& tape, const VectorXd& cot, Points* grad_x) const {
  if (tape.layers.size() != index_.size() || tape.output.cols() != cot.size())
    throw ContractError("log_density_backward: tape does not match cotangent");
  VectorXd grad = VectorXd::Zero(params_.size());
  // d/dz of base log-density is -z.
  Points g = -(tape.output.array().rowwise() * cot.transpose().array()).matrix();
  const Eigen::RowVectorXd gl = cot.transpose();
  const double clamp = shape_.scale_clamp;
  // Tape slot s holds layer index_[K-1-s]; walk back from the last applied.
  for (std::size_t s = tape.layers.size(); s-- > 0;) {
    const LayerIndex& li = index_[index_.size() - 1 - s];
    const FlowTape::Layer& t = tape.layers[s];
    const MatrixXd e = (-t.scale.array()).exp().matrix();
    const MatrixXd g_out_t = g(li.transformed, Eigen::all);
    MatrixXd g_shift = -g_out_t.cwiseProduct(e);
    MatrixXd g_s = -g_out_t.cwiseProduct(t.transformed_out);
    g_s.rowwise() -= gl;
    MatrixXd g_raw = (g_s.array() * clamp * (1.0 - t.squash.array().square())).matrix();
    MatrixXd g_cond = conditioner_backward(params_, li, t, g_raw, g_shift, grad);
    g(li.transformed, Eigen::all) = g_out_t.cwiseProduct(e);
    g(li.conditioned, Eigen::all) += g_cond;
  }
  if (grad_x) *grad_x = std::move(g);
  return grad;
}

FlowOutput FlowModel::forward_taped(const Points& z, FlowTape& tape) const {
  check_points(z, dim());
  tape.layers.assign(index_.size(), {});
  Points y = z;
  VectorXd log_det = VectorXd::Zero(z.cols());
  for (std::size_t k = 0; k < index_.size(); ++k)
    apply_layer(params_, index_[k], shape_.scale_clamp, true, y, log_det, &tape.layers[k]);
  tape.output = y;
  tape.log_det = log_det;
  return {std::move(y), std::move(log_det)};
}

VectorXd FlowModel::forward_backward(const FlowTape& tape, const Points& cot_x, const VectorXd& cot_log_det) const {
  if (tape.layers.size() != index_.size() || cot_x.cols() != tape.output.cols() ||
      cot_log_det.size() != tape.output.cols())
    throw ContractError("forward_backward: tape does not match cotangents");
  VectorXd grad = VectorXd::Zero(params_.size());
  Points g = cot_x;
  const Eigen::RowVectorXd gl = cot_log_det.transpose();
  const double clamp = shape_.scale_clamp;
  for (std::size_t k = index_.size(); k-- > 0;) {
    const LayerIndex& li = index_[k];
    const FlowTape::Layer& t = tape.layers[k];
    const MatrixXd e = t.scale.array().exp().matrix();
    const MatrixXd g_out_t = g(li.transformed, Eigen::all);
    const MatrixXd z_t = t.input(li.transformed, Eigen::all);
    MatrixXd g_s = g_out_t.cwiseProduct(z_t).cwiseProduct(e);
    g_s.rowwise() += gl;
    MatrixXd g_raw = (g_s.array() * clamp * (1.0 - t.squash.array().square())).matrix();
    MatrixXd g_cond = conditioner_backward(params_, li, t, g_raw, g_out_t, grad);
    g(li.transformed, Eigen::all) = g_out_t.cwiseProduct(e);
    g(li.conditioned, Eigen::all) += g_cond;
  }
  return grad;
}

}  // namespace ldreg
