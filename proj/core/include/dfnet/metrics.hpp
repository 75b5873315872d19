#pragma once

#include <utility>
#include <vector>

#include "dfnet/tensor.hpp"

namespace dfnet {

struct MetricsReport {
  double j_mean = 0.0;
  double boundary_f = 0.0;
  double mae = 0.0;
  double max_f = 0.0;
  std::vector<std::pair<double, double>> pr_curve;  // (precision, recall) per threshold
};

/// Thresholds a heatmap in [0,1]; pixels >= threshold become foreground.
Tensor<float> binarize(const Tensor<float>& heatmap, double threshold);

/// Intersection over union of two binary masks; 1.0 when both are empty.
double iou_j(const Tensor<float>& pred, const Tensor<float>& gt);

/// Contour F-measure. Boundary pixels are foreground pixels with a
/// 4-connected background neighbour or on the image edge; matching uses a
/// Euclidean tolerance in pixels. 1.0 when both boundaries are empty, 0.0
/// when exactly one is.
double boundary_f(const Tensor<float>& pred, const Tensor<float>& gt, double tol_px);

/// DAVIS-style default tolerance: 0.8% of the image diagonal, rounded up.
double default_boundary_tol(int h, int w);

/// Mean absolute error between a heatmap in [0,1] and a binary mask.
double mae(const Tensor<float>& heatmap, const Tensor<float>& gt);

/// Sweeps 255 evenly spaced thresholds in (0,1) and returns the maximum
/// F-measure (beta^2 = 0.3) together with the (precision, recall) curve.
/// Empty predictions score precision 1, recall 0.
std::pair<double, std::vector<std::pair<double, double>>> max_fmeasure(
    const Tensor<float>& heatmap, const Tensor<float>& gt);

/// Keeps only the instance regions that overlap the predicted mask by at
/// least `keep_ratio` of their own area. `instances` holds integer labels
/// (0 = background) scaled into [0,1] as read from an 8-bit PNG.
Tensor<float> instance_prune(const Tensor<float>& mask, const Tensor<float>& instances,
                             double keep_ratio = 0.5);

}  // namespace dfnet
