#pragma once

#include <string>
#include <vector>

#include "dfnet/ops.hpp"
#include "dfnet/rng.hpp"
#include "dfnet/tensor.hpp"

namespace dfnet {

/// Named handle to a learnable tensor. Entries with sgd == false are
/// excluded from optimizer steps (they are maintained by their own update
/// rules) but still flow gradients and are checkpointed.
template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T>* tensor;
  bool sgd = true;
};

template <typename T>
using ParamMap = std::vector<ParamRef<T>>;

/// Kaiming fan-in initialization: N(0, sqrt(2 / fan_in)) * scale.
template <typename T>
Tensor<T> kaiming_normal(Shape shape, int fan_in, Rng& rng, double scale = 1.0) {
  const double sigma = std::sqrt(2.0 / fan_in) * scale;
  std::vector<T> data(static_cast<std::size_t>(numel(shape)));
  for (auto& v : data) v = static_cast<T>(rng.normal(0.0, sigma));
  return Tensor<T>(std::move(shape), std::move(data));
}

template <typename T>
struct Conv2dLayer {
  Tensor<T> weight;  // kh x kw x cin x cout
  Tensor<T> bias;    // 1 x 1 x cout
  int stride = 1;
  int padding = 0;
  bool use_bias = true;

  Conv2dLayer() = default;

  Conv2dLayer(int kh, int kw, int cin, int cout, int stride_, int padding_, Rng& rng,
              bool use_bias_ = true)
      : weight(kaiming_normal<T>({kh, kw, cin, cout}, kh * kw * cin, rng)),
        bias(Shape{1, 1, cout}),
        stride(stride_),
        padding(padding_),
        use_bias(use_bias_) {
    weight.set_requires_grad(true);
    bias.set_requires_grad(use_bias);
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    Tensor<T> y = conv2d(x, weight, stride, padding);
    return use_bias ? add(y, bias) : y;
  }

  void collect(ParamMap<T>& params, const std::string& prefix) {
    params.push_back({prefix + ".weight", &weight});
    if (use_bias) params.push_back({prefix + ".bias", &bias});
  }
};

template <typename T>
struct BatchNorm2dLayer {
  Tensor<T> gamma;
  Tensor<T> beta;
  std::vector<T> running_mean;
  std::vector<T> running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);
  BnMode mode = BnMode::train;
  /// When set, train-mode batch statistics are appended here instead of
  /// being folded into the running statistics immediately.
  std::vector<BnStats<T>>* journal = nullptr;

  BatchNorm2dLayer() = default;

  explicit BatchNorm2dLayer(int channels)
      : gamma(Shape{channels}, std::vector<T>(static_cast<std::size_t>(channels), T(1))),
        beta(Shape{channels}),
        running_mean(static_cast<std::size_t>(channels), T(0)),
        running_var(static_cast<std::size_t>(channels), T(1)) {
    gamma.set_requires_grad(true);
    beta.set_requires_grad(true);
  }

  Tensor<T> forward(const Tensor<T>& x) {
    return batchnorm2d(x, gamma, beta, running_mean, running_var, momentum, eps, mode, journal);
  }

  /// Folds one recorded batch statistic into the running statistics.
  void apply_stats(const BnStats<T>& s) {
    for (std::size_t i = 0; i < running_mean.size(); ++i) {
      running_mean[i] = (T(1) - momentum) * running_mean[i] + momentum * s.first[i];
      running_var[i] = (T(1) - momentum) * running_var[i] + momentum * s.second[i];
    }
  }

  void collect(ParamMap<T>& params, const std::string& prefix) {
    params.push_back({prefix + ".gamma", &gamma});
    params.push_back({prefix + ".beta", &beta});
  }
};

}  // namespace dfnet
