#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace ldreg {

/// Batch of points, one column per point (dim x n).
using Points = Eigen::MatrixXd;

struct FlowShape {
  std::size_t dim = 2;
  std::size_t layers = 15;
  std::size_t hidden = 160;
  /// Scale outputs are squashed to clamp * tanh(raw).
  double scale_clamp = 4.0;
};

/// Location of one weight or bias block inside the flat parameter vector.
/// Matrices are stored column-major.
struct ParamSlice {
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t size() const { return rows * cols; }
};

/// Conditioner of one coupling layer: cond -> tanh -> tanh -> (raw scale, shift).
struct LayerIndex {
  ParamSlice w1, b1, w2, b2, w3, b3;
  std::vector<Eigen::Index> conditioned;  // mask == 1, passed through
  std::vector<Eigen::Index> transformed;  // mask == 0, affinely transformed
};

struct FlowOutput {
  Points points;
  Eigen::VectorXd log_det;  // per point
};

struct FlowSample {
  Points points;
  Eigen::VectorXd log_density;
};

/// Activations kept by a taped pass; consumed by the matching backward call.
struct FlowTape {
  struct Layer {
    Points input;
    Eigen::MatrixXd h1, h2;
    Eigen::MatrixXd squash;  // tanh(raw scale)
    Eigen::MatrixXd scale;   // clamp * squash
    Eigen::MatrixXd transformed_out;
  };
  std::vector<Layer> layers;
  Points output;
  Eigen::VectorXd log_det;
};

/// Affine coupling flow (RealNVP) with a standard normal base density.
///
/// The generative direction maps base draws z to samples x; the density is
/// evaluated through the inverse. All trainable values live in one flat
/// vector so optimizers and checkpoints see a single array.
class FlowModel {
 public:
  FlowModel() = default;

  /// He-style initialization; the last conditioner layer is scaled by 0.01 so
  /// every coupling starts close to the identity.
  FlowModel(const FlowShape& shape, std::uint64_t seed);

  /// All parameters zero: the flow is exactly the identity map.
  static FlowModel identity(const FlowShape& shape);

  const FlowShape& shape() const { return shape_; }
  std::size_t dim() const { return shape_.dim; }
  std::size_t num_layers() const { return index_.size(); }
  std::size_t num_params() const { return static_cast<std::size_t>(params_.size()); }
  std::uint64_t seed() const { return seed_; }

  const Eigen::VectorXd& parameters() const { return params_; }
  Eigen::VectorXd& mutable_parameters() { return params_; }
  void set_parameters(const Eigen::VectorXd& params);

  const LayerIndex& layer_index(std::size_t k) const { return index_.at(k); }

  FlowOutput forward(const Points& z) const;
  /// x -> z; log_det is log|det dz/dx|.
  FlowOutput inverse(const Points& x) const;

  Eigen::VectorXd log_density(const Points& x) const;
  double log_density(const Eigen::VectorXd& x) const;

  FlowSample sample(std::size_t n, std::uint64_t seed) const;
  /// Push given base draws through the flow.
  FlowSample sample_from_base(const Points& z) const;

  /// log q(x) with the activations needed for a later backward pass.
  Eigen::VectorXd log_density_taped(const Points& x, FlowTape& tape) const;

  /// Parameter gradient of sum_i cot[i] * log q(x_i) given the tape of
  /// log_density_taped(x). When grad_x is non-null it receives d/dx as well.
  Eigen::VectorXd log_density_backward(const FlowTape& tape, const Eigen::VectorXd& cot,
                                       Points* grad_x = nullptr) const;

  /// Taped generative pass z -> x.
  FlowOutput forward_taped(const Points& z, FlowTape& tape) const;

  /// Parameter gradient of sum_i <cot_x_i, x_i> + cot_log_det[i] * log_det_i
  /// for the generative pass recorded in tape.
  Eigen::VectorXd forward_backward(const FlowTape& tape, const Points& cot_x,
                                   const Eigen::VectorXd& cot_log_det) const;

  static double base_log_density(const Eigen::Ref<const Eigen::VectorXd>& z);
  static Eigen::VectorXd base_log_density(const Points& z);

 private:
  void build_index();

  FlowShape shape_;
  std::uint64_t seed_ = 0;
  Eigen::VectorXd params_;
  std::vector<LayerIndex> index_;
};

/// Binary checkpoint; layout documented in docs/formats.md.
void save_checkpoint(const FlowModel& model, const std::string& path);
FlowModel load_checkpoint(const std::string& path);

}  // namespace ldreg
