#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "atalp/backbone.hpp"
#include "atalp/tensor.hpp"

namespace atalp::test {

inline Tensor<double> random_images(Index batch, Index channels, Index size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Tensor<double> t(batch, channels, size, size);
  for (Index i = 0; i < t.matrix().size(); ++i) t.matrix()(i) = unit(rng);
  return t;
}

inline ImageBatch<double> random_batch(Index batch, Index size, Index classes, std::uint64_t seed) {
  ImageBatch<double> out{random_images(batch, 3, size, seed), {}};
  for (Index b = 0; b < batch; ++b) out.labels.push_back(static_cast<int>(b % classes));
  return out;
}

// ReLU on/off pattern and pool argmax of a forward pass. Central differences are
// only meaningful when both probes share the pattern of the base point.
template <typename Scalar>
std::vector<Index> activation_pattern(const Model<Scalar>& model, const Tensor<Scalar>& x) {
  const auto trace = model.forward_trace(x);
  std::vector<Index> out;
  for (const auto& u : trace.units)
    for (Index i = 0; i < u.affine_out.size(); ++i) out.push_back(u.affine_out(i) > 0);
  for (const auto& a : trace.pool_argmax) out.insert(out.end(), a.data(), a.data() + a.size());
  return out;
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("atalp_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace atalp::test
