#pragma once

#include <string>
#include <vector>

#include "dfnet/tensor.hpp"

namespace dfnet {

struct Sample {
  std::string name;
  Tensor<float> image;  // H x W x 3 in [0,1]
  Tensor<float> mask;   // H x W in {0,1}; undefined when the set has no masks
};

struct Group {
  std::string name;
  std::vector<Sample> frames;
};

struct Dataset {
  std::vector<Group> groups;
};

/// Loads <root>/<group>/frames/NNNNN.png (+ masks/NNNNN.png when present).
/// Groups and frames are ordered by name.
Dataset load_dataset(const std::string& root, bool require_masks = true);

/// Sorted PNG basenames (without extension) in a directory.
std::vector<std::string> list_png_names(const std::string& dir);

}  // namespace dfnet
