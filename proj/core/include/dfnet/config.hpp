#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dfnet/common.hpp"

namespace dfnet {

/// Every run hyperparameter in one serializable record. The on-disk form is
/// a versioned key-value text file; unknown keys are rejected on parse.
struct RunConfig {
  // model
  int base_width = 16;
  int channels = 32;  // encoder output channels c
  int k = 8;          // number of D-features
  double lambda = 0.5;
  bool head_bn_before_relu = false;
  bool bn_frame_stats = true;
  std::uint64_t init_seed = 0;

  // crf
  bool crf_enabled = true;
  int crf_n_iters = 5;
  double crf_w_appearance = 1.0;
  double crf_w_smoothness = 0.5;
  double crf_theta_alpha = 8.0;
  double crf_theta_beta = 0.1;
  double crf_theta_gamma = 3.0;
  bool crf_learn_compat = true;

  // train
  std::string train_stage = "video";  // static_pretrain | video | coseg
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
  bool encoder_bn_frozen = false;

  // infer
  std::vector<double> scales{0.75, 1.0, 1.25};
  bool mirror = true;
  double threshold = 0.5;
  int n_in = 4;
  bool resize_before_average = true;

  void validate() const;
};

RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);
std::string format_run_config(const RunConfig& cfg);
void save_run_config(const std::string& path, const RunConfig& cfg);

}  // namespace dfnet
