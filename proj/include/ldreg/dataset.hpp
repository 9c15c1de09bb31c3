#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ldreg/flow.hpp"
#include "ldreg/objectives.hpp"
#include "ldreg/targets.hpp"

namespace ldreg {

/// Points with energy labels E(x) = -log p~(x) of the target they are meant
/// for, and optional proposal log-densities and weights.
struct LabeledDataset {
  Points points;
  Eigen::VectorXd energies;
  Eigen::VectorXd log_q;    // empty when unknown
  Eigen::VectorXd weights;  // empty means uniform

  std::string target;  // name of the labelling target
  std::uint64_t seed = 0;
  std::optional<std::vector<double>> bias_weights;

  Eigen::Index size() const { return points.cols(); }
  std::size_t dim() const { return static_cast<std::size_t>(points.rows()); }
  void validate() const;

  LabeledDataset subset(const std::vector<Eigen::Index>& idx) const;
  ReferenceBatch batch(const std::vector<Eigen::Index>& idx) const;
  ReferenceBatch all() const;
};

/// n exact draws from `sampler`, labelled with energies of `labeler`. The
/// labeler's evaluation counter advances by n.
LabeledDataset make_dataset(const TargetDensity& sampler, const TargetDensity& labeler, std::size_t n,
                            std::uint64_t seed);

/// Deterministic shuffled split; the first part holds round((1 - fraction) n).
std::pair<LabeledDataset, LabeledDataset> split_dataset(const LabeledDataset& data, double holdout_fraction,
                                                        std::uint64_t seed);

/// CSV with header x1..xd,energy and a JSON sidecar at csv_path + ".json".
void write_dataset(const LabeledDataset& data, const std::string& csv_path);
LabeledDataset read_dataset(const std::string& csv_path);

}  // namespace ldreg
