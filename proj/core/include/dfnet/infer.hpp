#pragma once

#include "dfnet/model.hpp"

namespace dfnet {

struct InferConfig {
  std::vector<double> scales{0.75, 1.0, 1.25};
  bool mirror = true;
  double threshold = 0.5;
  int n_in = 4;
  bool resize_before_average = true;

  static InferConfig from_run_config(const RunConfig& rc) {
    InferConfig ic;
    ic.scales = rc.scales;
    ic.mirror = rc.mirror;
    ic.threshold = rc.threshold;
    ic.n_in = rc.n_in;
    ic.resize_before_average = rc.resize_before_average;
    return ic;
  }
};

/// A frame with its intrinsic id. Ids canonicalize the DFM stacking order,
/// so results do not depend on the order frames are listed in.
struct InferInput {
  Tensor<float> image;  // H x W x 3
  int frame_id = 0;
};

/// Runs the full pipeline on one frame group with multi-scale and mirrored
/// averaging (bank frozen). Returns one native-resolution heatmap in (0,1)
/// per input frame, in input order.
std::vector<Tensor<float>> infer_group(const std::vector<InferInput>& frames,
                                       DfnetModel<float>& model, const InferConfig& cfg);

/// Per-frame heatmaps for a whole video: every frame is inferred as the
/// reference of a group of n_in frames (itself plus evenly spaced others).
std::vector<Tensor<float>> infer_video(const std::vector<Tensor<float>>& frames,
                                       DfnetModel<float>& model, const InferConfig& cfg);

/// Evenly spaced companion indices for a reference frame (helper exposed for
/// the CLI and tests).
std::vector<int> group_indices(int reference, int n_frames, int n_in);

}  // namespace dfnet
