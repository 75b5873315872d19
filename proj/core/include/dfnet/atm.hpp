#pragma once

#include "dfnet/dfm.hpp"

namespace dfnet {

/// Bilinear attention weight. Initialized to identity plus small Kaiming
/// noise so early training behaves like plain dot-product attention.
template <typename T>
struct AttentionParams {
  Tensor<T> w_att;  // c x c

  AttentionParams() = default;
  AttentionParams(int channels, Rng& rng)
      : w_att(kaiming_normal<T>({channels, channels}, channels, rng, 0.01)) {
    auto d = w_att.data_mut();
    for (int i = 0; i < channels; ++i) d[static_cast<std::size_t>(i) * channels + i] += T(1);
    w_att.set_requires_grad(true);
  }
};

/// Per-position affinity logits against the K D-features.
template <typename T>
struct AttentionMap {
  Tensor<T> logits;  // (h*w) x K
  int h = 0, w = 0;
  int m() const { return h * w; }
  int k() const { return logits.dim(1); }
};

/// logits[i,k] = f_i . W_att . d_k over flattened positions.
template <typename T>
AttentionMap<T> attention_logits(const FeatureMap<T>& f, const DFeatureSet<T>& dfeat,
                                 const AttentionParams<T>& params) {
  const int c = f.channels();
  check_shape(params.w_att.dim(0) == c && params.w_att.dim(1) == c,
              "attention_logits: W_att " + shape_str(params.w_att.shape()) +
                  " does not match feature channels " + std::to_string(c));
  check_shape(dfeat.channels() == c, "attention_logits: D-feature channels " +
                                         std::to_string(dfeat.channels()) +
                                         " do not match feature channels " + std::to_string(c));
  auto flat = reshape(f.tensor, {f.h() * f.w(), c});
  auto logits = matmul(matmul(flat, params.w_att), transpose2d(dfeat.features));
  return {logits, f.h(), f.w()};
}

/// New feature map from a row-stochastic assignment q: position i receives
/// sum_k q[i,k] * d_k, reshaped to h x w x c.
template <typename T>
FeatureMap<T> reconstruct_features(const Tensor<T>& q, const DFeatureSet<T>& dfeat, int h, int w,
                                   int source_frame = -1) {
  check_shape(q.rank() == 2 && q.dim(0) == h * w && q.dim(1) == dfeat.k(),
              "reconstruct_features: assignment " + shape_str(q.shape()) +
                  " does not match " + std::to_string(h * w) + " positions x " +
                  std::to_string(dfeat.k()) + " labels");
  auto qd = q.data();
  const int rows = q.dim(0), k = q.dim(1);
  for (int i = 0; i < rows; ++i) {
    double total = 0.0;
    for (int col = 0; col < k; ++col) total += qd[static_cast<std::size_t>(i) * k + col];
    check_value(std::fabs(total - 1.0) <= 1e-4,
                "reconstruct_features: row " + std::to_string(i) + " sums to " +
                    std::to_string(total) + ", not 1");
  }
  return {reshape(matmul(q, dfeat.features), {h, w, dfeat.channels()}), source_frame};
}

}  // namespace dfnet
