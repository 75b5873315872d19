#pragma once

#include "dfnet/encoder.hpp"
#include "dfnet/nn.hpp"

namespace dfnet {

/// Decode head: two sigmoid 1x1 self-weight gates, a 3x3 conv with
/// batchnorm, and a 1x1 conv to a per-pixel foreground probability.
/// The conv -> relu -> batchnorm order is the default; bn_before_relu
/// switches to the more common conv -> bn -> relu.
template <typename T>
struct HeadParams {
  Conv2dLayer<T> gate_new;   // c -> 1
  Conv2dLayer<T> gate_orig;  // c -> 1
  Conv2dLayer<T> conv3x3;    // 2c -> c
  BatchNorm2dLayer<T> bn;    // c
  Conv2dLayer<T> conv1x1;    // c -> 1
  bool bn_before_relu = false;

  HeadParams() = default;
  HeadParams(int c, bool bn_before_relu_, Rng& rng)
      : gate_new(1, 1, c, 1, 1, 0, rng),
        gate_orig(1, 1, c, 1, 1, 0, rng),
        conv3x3(3, 3, 2 * c, c, 1, 1, rng),
        bn(c),
        conv1x1(1, 1, c, 1, 1, 0, rng),
        bn_before_relu(bn_before_relu_) {}

  void collect_params(ParamMap<T>& params, const std::string& prefix) {
    gate_new.collect(params, prefix + ".gate_new");
    gate_orig.collect(params, prefix + ".gate_orig");
    conv3x3.collect(params, prefix + ".conv3x3");
    bn.collect(params, prefix + ".bn");
    conv1x1.collect(params, prefix + ".conv1x1");
  }
};

/// Scales each map by a sigmoid gate of itself (one scalar per position,
/// broadcast over channels), then concatenates along channels.
template <typename T>
Tensor<T> self_weight_fuse(const FeatureMap<T>& f_new, const FeatureMap<T>& f_orig,
                           const HeadParams<T>& params) {
  check_shape(f_new.tensor.shape() == f_orig.tensor.shape(),
              "self_weight_fuse: feature maps disagree, " + shape_str(f_new.tensor.shape()) +
                  " vs " + shape_str(f_orig.tensor.shape()));
  auto gated_new = mul(f_new.tensor, sigmoid(params.gate_new.forward(f_new.tensor)));
  auto gated_orig = mul(f_orig.tensor, sigmoid(params.gate_orig.forward(f_orig.tensor)));
  return concat(gated_new, gated_orig, 2);
}

/// Fused 2c map -> per-pixel probability at feature resolution. The caller
/// upsamples to input resolution.
template <typename T>
Tensor<T> predict_mask(const Tensor<T>& fused, HeadParams<T>& params) {
  check_shape(fused.rank() == 3 && fused.dim(2) == params.conv3x3.weight.dim(2),
              "predict_mask: expected " + std::to_string(params.conv3x3.weight.dim(2)) +
                  " channels, got " + shape_str(fused.shape()));
  auto x = params.conv3x3.forward(fused);
  x = params.bn_before_relu ? relu(params.bn.forward(x)) : params.bn.forward(relu(x));
  auto logits = params.conv1x1.forward(x);
  return reshape(sigmoid(logits), {fused.dim(0), fused.dim(1)});
}

}  // namespace dfnet
