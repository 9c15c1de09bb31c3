#include "ldreg/dataset.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ldreg/error.hpp"
#include "ldreg/rng.hpp"

namespace ldreg {

using Eigen::Index;
using Eigen::VectorXd;

void LabeledDataset::validate() const {
  if (points.cols() == 0) throw ConfigError("dataset is empty");
  if (energies.size() != points.cols()) throw ConfigError("dataset needs one energy label per point");
  if (log_q.size() != 0 && log_q.size() != points.cols()) throw ConfigError("dataset log_q has the wrong length");
  if (weights.size() != 0 && weights.size() != points.cols()) throw ConfigError("dataset weights have the wrong length");
}

LabeledDataset LabeledDataset::subset(const std::vector<Index>& idx) const {
  LabeledDataset out;
  out.target = target;
  out.seed = seed;
  out.bias_weights = bias_weights;
  const auto m = static_cast<Index>(idx.size());
  out.points.resize(points.rows(), m);
  out.energies.resize(m);
  if (log_q.size()) out.log_q.resize(m);
  if (weights.size()) out.weights.resize(m);
  for (Index j = 0; j < m; ++j) {
    const Index i = idx[static_cast<std::size_t>(j)];
    out.points.col(j) = points.col(i);
    out.energies(j) = energies(i);
    if (log_q.size()) out.log_q(j) = log_q(i);
    if (weights.size()) out.weights(j) = weights(i);
  }
  return out;
}

ReferenceBatch LabeledDataset::batch(const std::vector<Index>& idx) const {
  LabeledDataset s = subset(idx);
  return {std::move(s.points), std::move(s.energies), std::move(s.weights)};
}

ReferenceBatch LabeledDataset::all() const { return {points, energies, weights}; }

LabeledDataset make_dataset(const TargetDensity& sampler, const TargetDensity& labeler, std::size_t n,
                            std::uint64_t seed) {
  if (n < 1) throw ConfigError("dataset size must be at least 1");
  if (sampler.dim() != labeler.dim()) throw ConfigError("sampler and labelling target differ in dimension");
  LabeledDataset d;
  d.points = sampler.sample(n, seed);
  d.energies = labeler.energy(d.points);
  d.target = labeler.name();
  d.seed = seed;
  return d;
}

std::pair<LabeledDataset, LabeledDataset> split_dataset(const LabeledDataset& data, double holdout_fraction,
                                                        std::uint64_t seed) {
  if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) throw ConfigError("holdout fraction must be in (0, 1)");
  std::vector<Index> idx(static_cast<std::size_t>(data.size()));
  std::iota(idx.begin(), idx.end(), Index{0});
  Rng rng(seed, 0x5711);
  std::shuffle(idx.begin(), idx.end(), rng.engine());
  const auto keep = static_cast<std::size_t>(std::llround((1.0 - holdout_fraction) * static_cast<double>(idx.size())));
  if (keep < 2 || keep >= idx.size()) throw ConfigError("dataset too small to split");
  return {data.subset({idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(keep)}),
          data.subset({idx.begin() + static_cast<std::ptrdiff_t>(keep), idx.end()})};
}

namespace {

void write_double(std::ostream& os, double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  os.write(buf, res.ptr - buf);
}

double parse_double(const std::string& s, const std::string& path, std::size_t line) {
  double v = 0.0;
  const char* b = s.data();
  const char* e = b + s.size();
  while (b < e && *b == ' ') ++b;
  const auto res = std::from_chars(b, e, v);
  if (res.ec != std::errc{} || res.ptr != e)
    throw IoError(path + ":" + std::to_string(line) + ": cannot parse number '" + s + "'");
  return v;
}

}  // namespace

void write_dataset(const LabeledDataset& data, const std::string& csv_path) {
  data.validate();
  std::ofstream out(csv_path, std::ios::trunc);
  if (!out) throw IoError("cannot write dataset: " + csv_path);
  const Index d = data.points.rows();
  for (Index j = 0; j < d; ++j) out << 'x' << (j + 1) << ',';
  out << "energy\n";
  for (Index i = 0; i < data.size(); ++i) {
    for (Index j = 0; j < d; ++j) {
      write_double(out, data.points(j, i));
      out << ',';
    }
    write_double(out, data.energies(i));
    out << '\n';
  }
  if (!out) throw IoError("failed writing dataset: " + csv_path);

  nlohmann::json meta;
  meta["target"] = data.target;
  meta["n"] = data.size();
  meta["dim"] = d;
  meta["seed"] = data.seed;
  meta["bias_weights"] = data.bias_weights ? nlohmann::json(*data.bias_weights) : nlohmann::json(nullptr);
  std::ofstream side(csv_path + ".json", std::ios::trunc);
  side << meta.dump(2) << '\n';
  if (!side) throw IoError("failed writing dataset sidecar: " + csv_path + ".json");
}

LabeledDataset read_dataset(const std::string& csv_path) {
  std::ifstream in(csv_path);
  if (!in) throw IoError("cannot open dataset: " + csv_path);
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty dataset file: " + csv_path);
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  if (header.size() < 2 || header.back() != "energy") throw IoError("dataset header must be x1..xd,energy: " + csv_path);
  const std::size_t d = header.size() - 1;
  for (std::size_t j = 0; j < d; ++j)
    if (header[j] != "x" + std::to_string(j + 1)) throw IoError("dataset header must be x1..xd,energy: " + csv_path);

  std::vector<double> values;
  std::size_t rows = 0;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::size_t cols = 0;
    while (std::getline(ss, cell, ',')) {
      values.push_back(parse_double(cell, csv_path, lineno));
      ++cols;
    }
    if (cols != d + 1) throw IoError(csv_path + ":" + std::to_string(lineno) + ": expected " + std::to_string(d + 1) + " columns");
    ++rows;
  }
  LabeledDataset data;
  data.points.resize(static_cast<Index>(d), static_cast<Index>(rows));
  data.energies.resize(static_cast<Index>(rows));
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < d; ++j) data.points(static_cast<Index>(j), static_cast<Index>(i)) = values[i * (d + 1) + j];
    data.energies(static_cast<Index>(i)) = values[i * (d + 1) + d];
  }

  const std::string side = csv_path + ".json";
  if (std::filesystem::exists(side)) {
    std::ifstream s(side);
    nlohmann::json meta;
    try {
      s >> meta;
    } catch (const nlohmann::json::exception& e) {
      throw IoError("bad dataset sidecar " + side + ": " + e.what());
    }
    data.target = meta.value("target", std::string{});
    data.seed = meta.value("seed", std::uint64_t{0});
    if (meta.contains("bias_weights") && !meta["bias_weights"].is_null())
      data.bias_weights = meta["bias_weights"].get<std::vector<double>>();
  }
  data.validate();
  return data;
}

}  // namespace ldreg
