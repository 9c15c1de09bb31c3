#include <bit>
#include <cstring>
#include <fstream>

#include "ldreg/error.hpp"
#include "ldreg/flow.hpp"

namespace ldreg {

namespace {

constexpr char kMagic[8] = {'L', 'D', 'R', 'G', 'F', 'L', 'O', 'W'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint layout assumes a little-endian host");

template <typename T>
void put(std::ofstream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::ifstream& in, const std::string& path) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) throw IoError("truncated checkpoint: " + path);
  return value;
}

}  // namespace

void save_checkpoint(const FlowModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path);
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, 0);
  put<std::uint64_t>(out, model.shape().dim);
  put<std::uint64_t>(out, model.shape().layers);
  put<std::uint64_t>(out, model.shape().hidden);
  put<std::uint64_t>(out, model.seed());
  put<double>(out, model.shape().scale_clamp);
  put<std::uint64_t>(out, model.num_params());
  out.write(reinterpret_cast<const char*>(model.parameters().data()),
            static_cast<std::streamsize>(model.num_params() * sizeof(double)));
  if (!out) throw IoError("failed writing checkpoint: " + path);
}

FlowModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw IoError("not a flow checkpoint: " + path);
  const auto version = get<std::uint32_t>(in, path);
  if (version != kVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
  get<std::uint32_t>(in, path);
  FlowShape shape;
  shape.dim = get<std::uint64_t>(in, path);
  shape.layers = get<std::uint64_t>(in, path);
  shape.hidden = get<std::uint64_t>(in, path);
  const auto seed = get<std::uint64_t>(in, path);
  shape.scale_clamp = get<double>(in, path);
  const auto n = get<std::uint64_t>(in, path);
  FlowModel model(shape, seed);
  if (n != model.num_params()) throw IoError("checkpoint parameter count does not match its header: " + path);
  Eigen::VectorXd params(static_cast<Eigen::Index>(n));
  if (!in.read(reinterpret_cast<char*>(params.data()), static_cast<std::streamsize>(n * sizeof(double))))
    throw IoError("truncated checkpoint: " + path);
  if (in.peek() != std::ifstream::traits_type::eof()) throw IoError("trailing data in checkpoint: " + path);
  model.set_parameters(params);
  return model;
}

}  // namespace ldreg
