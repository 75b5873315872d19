#pragma once

#include <array>
#include <string>
#include <vector>

#include "dfnet/tensor.hpp"

namespace dfnet {

enum class SynthKind { static_blobs, moving_blobs, coseg_groups };

SynthKind parse_synth_kind(const std::string& name);

struct EllipseSpec {
  double cx, cy;      // centre in pixel coordinates
  double rx, ry;      // radii
  double angle;       // rotation, radians
  std::array<float, 3> color;
};

/// Membership test used both for rasterization and as the test oracle.
/// px, py are continuous coordinates; pixel (y, x) samples (x+0.5, y+0.5).
bool ellipse_contains(const EllipseSpec& e, double px, double py);

struct SynthFrame {
  Tensor<float> image;                  // H x W x 3 in [0,1]
  Tensor<float> mask;                   // H x W in {0,1}
  std::vector<EllipseSpec> foreground;  // shapes the mask tracks
  std::vector<EllipseSpec> distractors;
};

struct SynthGroup {
  std::string name;
  std::vector<SynthFrame> frames;
};

/// Deterministic synthetic data. count is the number of samples
/// (static_blobs), videos (moving_blobs) or classes (coseg_groups);
/// size is the square image side, a multiple of 8 and at least 32.
std::vector<SynthGroup> gen_synthetic(SynthKind kind, int count, int size, std::uint64_t seed);

/// Writes groups as <root>/<group>/frames/NNNNN.png + masks/NNNNN.png.
void write_dataset(const std::vector<SynthGroup>& groups, const std::string& root);

}  // namespace dfnet
