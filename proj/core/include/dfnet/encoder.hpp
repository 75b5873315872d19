#pragma once

#include <array>
#include <string>
#include <vector>

#include "dfnet/nn.hpp"
#include "dfnet/serialize.hpp"

namespace dfnet {

struct EncoderConfig {
  int in_channels = 3;
  int base_width = 16;
  int out_channels = 32;     // c
  int downsample_factor = 8;

  void validate() const {
    check_value(downsample_factor == 8, "encoder downsample factor must be 8");
    check_value(out_channels >= 8, "encoder out_channels must be at least 8");
    check_value(in_channels >= 1 && base_width >= 1, "encoder channel counts must be positive");
  }
};

/// Per-frame feature map at 1/8 input resolution.
template <typename T>
struct FeatureMap {
  Tensor<T> tensor;      // h x w x c
  int source_frame = -1;
  int h() const { return tensor.dim(0); }
  int w() const { return tensor.dim(1); }
  int channels() const { return tensor.dim(2); }
};

/// Small fully convolutional backbone: four conv-bn-relu blocks with strides
/// 2,2,2,1 and widths b,2b,4b,c, then a 1x1 channel-mixing conv to c. Output
/// stride is exactly 8; weights are shared across all frames of a batch.
template <typename T>
class Encoder {
 public:
  Encoder() = default;

  Encoder(const EncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg.validate();
    const int b = cfg.base_width, c = cfg.out_channels;
    const std::array<int, 5> widths{cfg.in_channels, b, 2 * b, 4 * b, c};
    const std::array<int, 4> strides{2, 2, 2, 1};
    for (int i = 0; i < 4; ++i) {
      blocks_[static_cast<std::size_t>(i)].conv = Conv2dLayer<T>(
          3, 3, widths[static_cast<std::size_t>(i)], widths[static_cast<std::size_t>(i + 1)],
          strides[static_cast<std::size_t>(i)], 1, rng);
      blocks_[static_cast<std::size_t>(i)].bn =
          BatchNorm2dLayer<T>(widths[static_cast<std::size_t>(i + 1)]);
    }
    reduce_ = Conv2dLayer<T>(1, 1, c, c, 1, 0, rng);
  }

  FeatureMap<T> encode(const Tensor<T>& image, int frame_id) {
    check_shape(image.rank() == 3 && image.dim(2) == cfg_.in_channels,
                "encode: expected H x W x " + std::to_string(cfg_.in_channels) + ", got " +
                    shape_str(image.shape()));
    const int H = image.dim(0), W = image.dim(1);
    check_value(H % 8 == 0 && W % 8 == 0 && H >= 16 && W >= 16,
                "encode: input dims must be multiples of 8 and at least 16, got " +
                    shape_str(image.shape()));
    Tensor<T> x = image;
    for (auto& blk : blocks_) {
      x = relu(blk.bn.forward(blk.conv.forward(x)));
    }
    x = reduce_.forward(x);
    return {x, frame_id};
  }

  const EncoderConfig& config() const { return cfg_; }

  void set_mode(BnMode mode) {
    for (auto& blk : blocks_) blk.bn.mode = mode;
  }

  void set_bn_journal(std::vector<BnStats<T>>* journal) {
    for (auto& blk : blocks_) blk.bn.journal = journal;
  }

  void collect_params(ParamMap<T>& params, const std::string& prefix) {
    for (int i = 0; i < 4; ++i) {
      const std::string p = prefix + ".block" + std::to_string(i);
      blocks_[static_cast<std::size_t>(i)].conv.collect(params, p + ".conv");
      blocks_[static_cast<std::size_t>(i)].bn.collect(params, p + ".bn");
    }
    reduce_.collect(params, prefix + ".reduce");
  }

  /// Batchnorm layers in a fixed order, for running-stat checkpointing and
  /// deferred statistic updates.
  std::vector<BatchNorm2dLayer<T>*> bn_layers() {
    std::vector<BatchNorm2dLayer<T>*> out;
    for (auto& blk : blocks_) out.push_back(&blk.bn);
    return out;
  }

 private:
  struct Block {
    Conv2dLayer<T> conv;
    BatchNorm2dLayer<T> bn;
  };

  EncoderConfig cfg_;
  std::array<Block, 4> blocks_;
  Conv2dLayer<T> reduce_;
};

/// Loads precomputed feature maps from a rank-4 (N x h x w x c) DFT1 file,
/// the hook for plugging a real backbone's features.
std::vector<FeatureMap<float>> load_features(const std::string& path);

}  // namespace dfnet
