#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dfnet/dataset.hpp"
#include "dfnet/model.hpp"

namespace dfnet {

enum class Stage { static_pretrain, video, coseg };

Stage parse_stage(const std::string& name);

struct TrainConfig {
  Stage stage = Stage::video;
  double base_lr = 0.001;
  int batch_size = 8;
  int max_iter = 2000;
  double power = 0.9;
  double weight_decay = 0.0001;
  int n_workers = 1;
  std::uint64_t seed = 0;
  bool crf_in_training = true;
  bool clip_gradients = false;
  double clip_norm = 10.0;
  // Freeze the encoder's batchnorm affine parameters during fine-tuning.
  bool encoder_bn_frozen = false;

  void validate() const {
    check_value(base_lr > 0.0, "train: base_lr must be positive");
    check_value(power > 0.0, "train: power must be positive");
    check_value(max_iter >= 0, "train: max_iter must be >= 0");
    check_value(batch_size >= 1, "train: batch_size must be positive");
    check_value(n_workers >= 1, "train: n_workers must be positive");
  }

  static TrainConfig from_run_config(const RunConfig& rc) {
    TrainConfig tc;
    tc.stage = parse_stage(rc.train_stage);
    tc.base_lr = rc.base_lr;
    tc.batch_size = rc.batch_size;
    tc.max_iter = rc.max_iter;
    tc.power = rc.power;
    tc.weight_decay = rc.weight_decay;
    tc.n_workers = rc.n_workers;
    tc.seed = rc.seed;
    tc.crf_in_training = rc.crf_in_training;
    tc.clip_gradients = rc.clip_gradients;
    tc.clip_norm = rc.clip_norm;
    tc.encoder_bn_frozen = rc.encoder_bn_frozen;
    return tc;
  }
};

/// One training example: a group of frames with ground-truth masks.
struct SampleBatch {
  std::vector<Tensor<float>> frames;
  std::vector<Tensor<float>> masks;
  std::string group_id;
};

struct TraceRow {
  int iter;
  double lr;
  double loss;
};

/// Mean binary cross entropy over pixels; predictions are clamped to
/// [1e-7, 1 - 1e-7] before the logs.
template <typename T>
Tensor<T> bce_loss(const Tensor<T>& pred, const Tensor<T>& gt) {
  check_shape(pred.shape() == gt.shape(), "bce_loss: prediction " + shape_str(pred.shape()) +
                                              " vs ground truth " + shape_str(gt.shape()));
  for (T v : gt.data())
    check_value(v == T(0) || v == T(1), "bce_loss: ground truth must be binary");
  const T eps = static_cast<T>(1e-7);
  auto p = clamp(pred, eps, T(1) - eps);
  auto term = add(mul(gt, log(p)), mul(rsub_scalar(T(1), gt), log(rsub_scalar(T(1), p))));
  return mul_scalar(mean(term), T(-1));
}

/// base_lr * (1 - iter/max_iter)^power.
inline double poly_lr(double base_lr, int iter, int max_iter, double power) {
  check_value(iter >= 0 && iter <= max_iter,
              "poly_lr: iteration " + std::to_string(iter) + " outside [0, " +
                  std::to_string(max_iter) + "]");
  return base_lr * std::pow(1.0 - static_cast<double>(iter) / max_iter, power);
}

/// p <- p - lr * (g + weight_decay * p) for every sgd-managed parameter.
/// grads must align with params; missing gradients count as zero.
template <typename T>
void sgd_step(ParamMap<T>& params, const std::vector<std::vector<T>>& grads, double lr,
              double weight_decay) {
  check_shape(params.size() == grads.size(), "sgd_step: " + std::to_string(grads.size()) +
                                                 " gradients for " + std::to_string(params.size()) +
                                                 " parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].sgd) continue;
    auto p = params[i].tensor->data_mut();
    const auto& g = grads[i];
    check_shape(g.empty() || g.size() == p.size(),
                "sgd_step: gradient size mismatch for " + params[i].name);
    const T lrT = static_cast<T>(lr), wdT = static_cast<T>(weight_decay);
    for (std::size_t e = 0; e < p.size(); ++e) {
      const T ge = g.empty() ? T(0) : g[e];
      p[e] -= lrT * (ge + wdT * p[e]);
    }
  }
}

/// Anchor frame (index 0) paired with one uniformly drawn other frame.
SampleBatch sample_video_batch(const Dataset& ds, int video_index, Rng& rng);

/// Three distinct images drawn uniformly from a class.
SampleBatch sample_coseg_group(const Dataset& ds, int class_index, Rng& rng);

/// Runs one training stage in place and returns the per-iteration loss
/// trace. Data-parallel workers hold model replicas; every cross-worker
/// reduction (gradient average, batchnorm statistics, scoring-bank update)
/// is gathered per batch slot and folded in ascending slot order, so results
/// are bit-identical for any worker count.
std::vector<TraceRow> train_stage(const TrainConfig& cfg, DfnetModel<float>& model,
                                  const Dataset& dataset);

void write_loss_trace(const std::string& path, const std::vector<TraceRow>& trace);

}  // namespace dfnet
