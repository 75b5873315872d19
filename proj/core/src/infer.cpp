#include "dfnet/infer.hpp"

#include <cmath>

namespace dfnet {

namespace {

int round_to_multiple_of_8(double v) {
  const int r = static_cast<int>(std::lround(v / 8.0)) * 8;
  return std::max(r, 16);
}

}  // namespace

std::vector<Tensor<float>> infer_group(const std::vector<InferInput>& frames,
                                       DfnetModel<float>& model, const InferConfig& cfg) {
  check_value(!frames.empty(), "infer_group: empty frame group");
  check_value(!cfg.scales.empty(), "infer_group: no scales configured");
  const int H = frames[0].image.dim(0), W = frames[0].image.dim(1);
  for (const auto& f : frames)
    check_shape(f.image.dim(0) == H && f.image.dim(1) == W,
                "infer_group: all frames must share dimensions");

  NoGradGuard ng;
  model.set_train(false);
  const bool use_crf = model.cfg.crf_enabled;
  const int n = static_cast<int>(frames.size());
  std::vector<int> ids(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) ids[static_cast<std::size_t>(i)] = frames[static_cast<std::size_t>(i)].frame_id;

  // accumulate either at native resolution or on the scale-1 feature grid
  const int acc_h = cfg.resize_before_average ? H : H / 8;
  const int acc_w = cfg.resize_before_average ? W : W / 8;
  std::vector<Tensor<float>> acc;
  acc.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) acc.emplace_back(Shape{acc_h, acc_w});  // handles must not alias
  int variants = 0;

  for (const double scale : cfg.scales) {
    const int sh = round_to_multiple_of_8(H * scale);
    const int sw = round_to_multiple_of_8(W * scale);
    std::vector<Tensor<float>> scaled;
    scaled.reserve(static_cast<std::size_t>(n));
    for (const auto& f : frames) scaled.push_back(bilinear_resize(f.image, sh, sw));

    for (int mirrored = 0; mirrored < (cfg.mirror ? 2 : 1); ++mirrored) {
      std::vector<Tensor<float>> imgs;
      imgs.reserve(static_cast<std::size_t>(n));
      for (const auto& img : scaled) imgs.push_back(mirrored ? flip_w(img) : img);
      auto heats = model.forward_group(imgs, ids, use_crf);
      for (int i = 0; i < n; ++i) {
        auto h = heats[static_cast<std::size_t>(i)];
        if (mirrored) h = flip_w(h);
        h = bilinear_resize(h, acc_h, acc_w);
        auto a = acc[static_cast<std::size_t>(i)].data_mut();
        auto hd = h.data();
        for (std::size_t e = 0; e < a.size(); ++e) a[e] += hd[e];
      }
      ++variants;
    }
  }

  std::vector<Tensor<float>> out;
  out.reserve(static_cast<std::size_t>(n));
  const float inv = 1.0f / static_cast<float>(variants);
  for (int i = 0; i < n; ++i) {
    auto a = acc[static_cast<std::size_t>(i)].data_mut();
    for (auto& v : a) v *= inv;
    out.push_back(cfg.resize_before_average ? acc[static_cast<std::size_t>(i)]
                                            : bilinear_resize(acc[static_cast<std::size_t>(i)], H, W));
  }
  return out;
}

std::vector<int> group_indices(int reference, int n_frames, int n_in) {
  check_value(n_in >= 1, "group_indices: n_in must be >= 1");
  check_value(reference >= 0 && reference < n_frames, "group_indices: bad reference index");
  std::vector<int> group{reference};
  std::vector<int> others;
  for (int i = 0; i < n_frames; ++i)
    if (i != reference) others.push_back(i);
  const int want = std::min(n_in - 1, static_cast<int>(others.size()));
  if (want > 0) {
    const int m = static_cast<int>(others.size());
    for (int t = 0; t < want; ++t) {
      // evenly spaced picks over the remaining frames
      const int pos = (want == 1) ? (m - 1) / 2
                                  : static_cast<int>(std::llround(
                                        static_cast<double>(t) * (m - 1) / (want - 1)));
      group.push_back(others[static_cast<std::size_t>(pos)]);
    }
  }
  return group;
}

std::vector<Tensor<float>> infer_video(const std::vector<Tensor<float>>& frames,
                                       DfnetModel<float>& model, const InferConfig& cfg) {
  check_value(!frames.empty(), "infer_video: empty video");
  const int n = static_cast<int>(frames.size());
  std::vector<Tensor<float>> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    std::vector<InferInput> group;
    for (int idx : group_indices(i, n, cfg.n_in))
      group.push_back({frames[static_cast<std::size_t>(idx)], idx});
    out.push_back(infer_group(group, model, cfg)[0]);
  }
  return out;
}

}  // namespace dfnet
