#include "dfnet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace dfnet {

namespace {

void check_same_2d(const Tensor<float>& a, const Tensor<float>& b, const char* op) {
  check_shape(a.rank() == 2 && b.rank() == 2 && a.shape() == b.shape(),
              std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                  shape_str(b.shape()));
}

inline bool fg(float v) { return v >= 0.5f; }

/// Boundary = foreground pixel with a background 4-neighbour or on the edge.
std::vector<std::uint8_t> boundary_map(const Tensor<float>& mask) {
  const int h = mask.dim(0), w = mask.dim(1);
  auto d = mask.data();
  std::vector<std::uint8_t> b(static_cast<std::size_t>(h) * w, 0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const auto i = static_cast<std::size_t>(y) * w + x;
      if (!fg(d[i])) continue;
      if (y == 0 || y == h - 1 || x == 0 || x == w - 1 ||
          !fg(d[i - static_cast<std::size_t>(w)]) || !fg(d[i + static_cast<std::size_t>(w)]) ||
          !fg(d[i - 1]) || !fg(d[i + 1])) {
        b[i] = 1;
      }
    }
  }
  return b;
}

/// Dilates a boundary bitmap by a Euclidean disk of radius tol.
std::vector<std::uint8_t> dilate(const std::vector<std::uint8_t>& b, int h, int w, double tol) {
  const int r = static_cast<int>(std::floor(tol));
  std::vector<std::pair<int, int>> offsets;
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx)
      if (static_cast<double>(dy) * dy + static_cast<double>(dx) * dx <= tol * tol)
        offsets.emplace_back(dy, dx);
  std::vector<std::uint8_t> out(b.size(), 0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!b[static_cast<std::size_t>(y) * w + x]) continue;
      for (auto [dy, dx] : offsets) {
        const int ny = y + dy, nx = x + dx;
        if (ny >= 0 && ny < h && nx >= 0 && nx < w) out[static_cast<std::size_t>(ny) * w + nx] = 1;
      }
    }
  }
  return out;
}

}  // namespace

Tensor<float> binarize(const Tensor<float>& heatmap, double threshold) {
  std::vector<float> out(heatmap.data().begin(), heatmap.data().end());
  for (auto& v : out) v = (v >= static_cast<float>(threshold)) ? 1.0f : 0.0f;
  return Tensor<float>(heatmap.shape(), std::move(out));
}

double iou_j(const Tensor<float>& pred, const Tensor<float>& gt) {
  check_same_2d(pred, gt, "iou_j");
  auto p = pred.data();
  auto g = gt.data();
  std::int64_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const bool a = fg(p[i]), b = fg(g[i]);
    inter += (a && b);
    uni += (a || b);
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

double default_boundary_tol(int h, int w) {
  return std::ceil(0.008 * std::sqrt(static_cast<double>(h) * h + static_cast<double>(w) * w));
}

double boundary_f(const Tensor<float>& pred, const Tensor<float>& gt, double tol_px) {
  check_same_2d(pred, gt, "boundary_f");
  check_value(tol_px >= 0.0, "boundary_f: tolerance must be >= 0");
  const int h = pred.dim(0), w = pred.dim(1);
  const auto pb = boundary_map(pred);
  const auto gb = boundary_map(gt);
  const std::int64_t np = std::count(pb.begin(), pb.end(), std::uint8_t(1));
  const std::int64_t ng = std::count(gb.begin(), gb.end(), std::uint8_t(1));
  if (np == 0 && ng == 0) return 1.0;
  if (np == 0 || ng == 0) return 0.0;

  const auto gd = dilate(gb, h, w, tol_px);
  const auto pd = dilate(pb, h, w, tol_px);
  std::int64_t matched_p = 0, matched_g = 0;
  for (std::size_t i = 0; i < pb.size(); ++i) {
    matched_p += (pb[i] && gd[i]);
    matched_g += (gb[i] && pd[i]);
  }
  const double precision = static_cast<double>(matched_p) / static_cast<double>(np);
  const double recall = static_cast<double>(matched_g) / static_cast<double>(ng);
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

double mae(const Tensor<float>& heatmap, const Tensor<float>& gt) {
  check_same_2d(heatmap, gt, "mae");
  auto hd = heatmap.data();
  auto gd = gt.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < hd.size(); ++i)
    acc += std::fabs(static_cast<double>(hd[i]) - static_cast<double>(gd[i]));
  return acc / static_cast<double>(hd.size());
}

std::pair<double, std::vector<std::pair<double, double>>> max_fmeasure(
    const Tensor<float>& heatmap, const Tensor<float>& gt) {
  check_same_2d(heatmap, gt, "max_fmeasure");
  auto hd = heatmap.data();
  auto gd = gt.data();
  const double beta2 = 0.3;

  std::vector<std::pair<double, double>> curve;
  curve.reserve(255);
  double best = 0.0;
  for (int j = 1; j <= 255; ++j) {
    const float t = static_cast<float>(j) / 256.0f;
    std::int64_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < hd.size(); ++i) {
      const bool p = hd[i] >= t;
      const bool g = fg(gd[i]);
      tp += (p && g);
      fp += (p && !g);
      fn += (!p && g);
    }
    const double precision = (tp + fp == 0) ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
    const double recall = (tp + fn == 0) ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
    const double denom = beta2 * precision + recall;
    const double f = (denom == 0.0) ? 0.0 : (1.0 + beta2) * precision * recall / denom;
    best = std::max(best, f);
    curve.emplace_back(precision, recall);
  }
  return {best, std::move(curve)};
}

Tensor<float> instance_prune(const Tensor<float>& mask, const Tensor<float>& instances,
                             double keep_ratio) {
  check_same_2d(mask, instances, "instance_prune");
  auto md = mask.data();
  auto id = instances.data();
  // labels arrive as v/255 from an 8-bit PNG; recover the integer label
  std::map<int, std::pair<std::int64_t, std::int64_t>> area;  // label -> (total, overlapping)
  for (std::size_t i = 0; i < id.size(); ++i) {
    const int label = static_cast<int>(std::lround(id[i] * 255.0f));
    if (label == 0) continue;
    auto& [total, overlap] = area[label];
    ++total;
    overlap += fg(md[i]);
  }
  std::vector<float> out(md.size(), 0.0f);
  for (std::size_t i = 0; i < id.size(); ++i) {
    const int label = static_cast<int>(std::lround(id[i] * 255.0f));
    if (label == 0) continue;
    const auto& [total, overlap] = area[label];
    if (static_cast<double>(overlap) >= keep_ratio * static_cast<double>(total)) out[i] = 1.0f;
  }
  return Tensor<float>(mask.shape(), std::move(out));
}

}  // namespace dfnet
