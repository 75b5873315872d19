#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "dfnet/tensor.hpp"

namespace dfnet {

// DFT1: flat binary tensor format. Magic "DFT1", u32 rank, u32 dims, then
// the row-major payload as little-endian f32.

void save_dft1(std::ostream& os, const Tensor<float>& t);
void save_dft1(const std::string& path, const Tensor<float>& t);

Tensor<float> load_dft1(std::istream& is);
Tensor<float> load_dft1(const std::string& path);

std::vector<char> dft1_bytes(const Tensor<float>& t);
Tensor<float> dft1_from_bytes(const std::vector<char>& bytes);

/// Model checkpoint: a versioned key-value manifest followed by named DFT1
/// tensor entries, in one file. Tensors are stored sorted by key so a given
/// state always produces identical bytes.
struct Checkpoint {
  std::map<std::string, std::string> manifest;
  std::map<std::string, Tensor<float>> tensors;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);

  bool has(const std::string& key) const { return tensors.count(key) > 0; }

  const Tensor<float>& tensor(const std::string& key) const;
  std::string manifest_at(const std::string& key) const;
};

/// Precision casts used when checkpointing a 64-bit verification model.
template <typename From, typename To>
Tensor<To> cast_tensor(const Tensor<From>& t) {
  std::vector<To> data(t.data().begin(), t.data().end());
  return Tensor<To>(t.shape(), std::move(data));
}

}  // namespace dfnet
