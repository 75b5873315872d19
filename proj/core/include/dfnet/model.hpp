#pragma once

#include <sstream>

#include "dfnet/config.hpp"
#include "dfnet/crf.hpp"
#include "dfnet/head.hpp"
#include "dfnet/serialize.hpp"

namespace dfnet {

struct ModelConfig {
  EncoderConfig encoder;
  int k = 8;
  double lambda = 0.5;
  bool crf_enabled = true;
  int crf_n_iters = 5;
  double crf_w_appearance = 1.0;
  double crf_w_smoothness = 0.5;
  double crf_theta_alpha = 8.0;
  double crf_theta_beta = 0.1;
  double crf_theta_gamma = 3.0;
  bool crf_learn_compat = true;
  bool head_bn_before_relu = false;
  // Per-frame batchnorm statistics at inference. Desk-scale frames have
  // strongly content-dependent spatial statistics, so a global running
  // average misrepresents individual frames; classic running-statistics
  // inference stays available behind this flag.
  bool bn_frame_stats = true;
  std::uint64_t init_seed = 0;

  static ModelConfig from_run_config(const RunConfig& rc) {
    ModelConfig mc;
    mc.encoder.base_width = rc.base_width;
    mc.encoder.out_channels = rc.channels;
    mc.k = rc.k;
    mc.lambda = rc.lambda;
    mc.crf_enabled = rc.crf_enabled;
    mc.crf_n_iters = rc.crf_n_iters;
    mc.crf_w_appearance = rc.crf_w_appearance;
    mc.crf_w_smoothness = rc.crf_w_smoothness;
    mc.crf_theta_alpha = rc.crf_theta_alpha;
    mc.crf_theta_beta = rc.crf_theta_beta;
    mc.crf_theta_gamma = rc.crf_theta_gamma;
    mc.crf_learn_compat = rc.crf_learn_compat;
    mc.head_bn_before_relu = rc.head_bn_before_relu;
    mc.bn_frame_stats = rc.bn_frame_stats;
    mc.init_seed = rc.init_seed;
    return mc;
  }
};

/// Whole network: encoder -> DFM -> ATM (+ CRF) -> decode head, plus the
/// throwaway 1x1 adapter used to train the encoder standalone in stage 1.
template <typename T>
struct DfnetModel {
  ModelConfig cfg;
  Encoder<T> encoder;
  ScoringBank<T> bank;
  AttentionParams<T> atm;
  CrfParams<T> crf;
  HeadParams<T> head;
  Conv2dLayer<T> stage1_adapter;  // c -> 1

  static DfnetModel init(const ModelConfig& cfg) {
    Rng rng(cfg.init_seed);
    DfnetModel m;
    m.cfg = cfg;
    m.encoder = Encoder<T>(cfg.encoder, rng);
    m.bank = ScoringBank<T>(cfg.encoder.out_channels, cfg.k, static_cast<T>(cfg.lambda), rng);
    m.atm = AttentionParams<T>(cfg.encoder.out_channels, rng);
    m.crf = CrfParams<T>(cfg.k, cfg.crf_learn_compat);
    m.crf.n_iters = cfg.crf_n_iters;
    m.crf.w_appearance = static_cast<T>(cfg.crf_w_appearance);
    m.crf.w_smoothness = static_cast<T>(cfg.crf_w_smoothness);
    m.crf.theta_alpha = static_cast<T>(cfg.crf_theta_alpha);
    m.crf.theta_beta = static_cast<T>(cfg.crf_theta_beta);
    m.crf.theta_gamma = static_cast<T>(cfg.crf_theta_gamma);
    m.head = HeadParams<T>(cfg.encoder.out_channels, cfg.head_bn_before_relu, rng);
    m.stage1_adapter = Conv2dLayer<T>(1, 1, cfg.encoder.out_channels, 1, 1, 0, rng);
    return m;
  }

  std::vector<FeatureMap<T>> encode_frames(const std::vector<Tensor<T>>& images,
                                           const std::vector<int>& frame_ids) {
    check_value(images.size() == frame_ids.size(), "encode_frames: one id per image required");
    std::vector<FeatureMap<T>> feats;
    feats.reserve(images.size());
    for (std::size_t i = 0; i < images.size(); ++i)
      feats.push_back(encoder.encode(images[i], frame_ids[i]));
    return feats;
  }

  /// Attention + optional CRF + reconstruction + decode for one frame.
  Tensor<T> decode_frame(const FeatureMap<T>& feat, const DFeatureSet<T>& dfeat,
                         const Tensor<T>& image, bool use_crf) {
    auto att = attention_logits(feat, dfeat, atm);
    Tensor<T> q;
    if (use_crf && crf.n_iters > 0) {
      const auto g = build_guidance(image, feat.h(), feat.w());
      q = refine_attention(att, g, crf);
    } else {
      q = softmax(att.logits, 1);
    }
    const auto f_new = reconstruct_features(q, dfeat, feat.h(), feat.w(), feat.source_frame);
    const auto fused = self_weight_fuse(f_new, feat, head);
    return predict_mask(fused, head);
  }

  /// Stage-1 path: encoder features -> 1x1 adapter -> sigmoid.
  Tensor<T> stage1_predict(const FeatureMap<T>& feat) {
    return reshape(sigmoid(stage1_adapter.forward(feat.tensor)), {feat.h(), feat.w()});
  }

  /// Full group pass: D-features from all frames, then per-frame decode.
  /// Heatmaps are at feature resolution, in input order.
  std::vector<Tensor<T>> forward_group(const std::vector<Tensor<T>>& images,
                                       const std::vector<int>& frame_ids, bool use_crf,
                                       DFeatureSet<T>* out_dfeat = nullptr) {
    const auto feats = encode_frames(images, frame_ids);
    const auto dfeat = dfm_forward(feats, bank);
    if (out_dfeat) *out_dfeat = DFeatureSet<T>{dfeat.features.detach()};
    std::vector<Tensor<T>> heats;
    heats.reserve(images.size());
    for (std::size_t i = 0; i < images.size(); ++i)
      heats.push_back(decode_frame(feats[i], dfeat, images[i], use_crf));
    return heats;
  }

  void set_train(bool train) {
    const BnMode mode =
        train ? BnMode::train : (cfg.bn_frame_stats ? BnMode::frame : BnMode::eval);
    encoder.set_mode(mode);
    head.bn.mode = mode;
    bank.train_mode = train;
  }

  void set_bn_journal(std::vector<BnStats<T>>* journal) {
    encoder.set_bn_journal(journal);
    head.bn.journal = journal;
  }

  void collect_params(ParamMap<T>& params) {
    encoder.collect_params(params, "encoder");
    params.push_back({"dfm.bank.weights", &bank.weights, /*sgd=*/false});
    params.push_back({"atm.w_att", &atm.w_att});
    params.push_back({"crf.compat", &crf.compatibility, /*sgd=*/crf.learn_compat});
    head.collect_params(params, "head");
    stage1_adapter.collect(params, "stage1.adapter");
  }

  std::vector<std::pair<std::string, BatchNorm2dLayer<T>*>> bn_layers() {
    std::vector<std::pair<std::string, BatchNorm2dLayer<T>*>> out;
    const auto enc = encoder.bn_layers();
    for (std::size_t i = 0; i < enc.size(); ++i)
      out.emplace_back("encoder.block" + std::to_string(i) + ".bn", enc[i]);
    out.emplace_back("head.bn", &head.bn);
    return out;
  }

  /// Deep copy; replicas share no storage.
  DfnetModel clone() {
    DfnetModel copy = DfnetModel::init(cfg);
    ParamMap<T> src, dst;
    collect_params(src);
    copy.collect_params(dst);
    for (std::size_t i = 0; i < src.size(); ++i) {
      auto s = src[i].tensor->data();
      auto d = dst[i].tensor->data_mut();
      std::copy(s.begin(), s.end(), d.begin());
    }
    auto sbn = bn_layers();
    auto dbn = copy.bn_layers();
    for (std::size_t i = 0; i < sbn.size(); ++i) {
      dbn[i].second->running_mean = sbn[i].second->running_mean;
      dbn[i].second->running_var = sbn[i].second->running_var;
      dbn[i].second->mode = sbn[i].second->mode;
    }
    copy.bank.train_mode = bank.train_mode;
    return copy;
  }

  Checkpoint to_checkpoint() {
    Checkpoint ck;
    auto fmt = [](double v) {
      std::ostringstream os;
      os.precision(17);
      os << v;
      return os.str();
    };
    ck.manifest["format_version"] = "1";
    ck.manifest["model.base_width"] = std::to_string(cfg.encoder.base_width);
    ck.manifest["model.channels"] = std::to_string(cfg.encoder.out_channels);
    ck.manifest["model.k"] = std::to_string(cfg.k);
    ck.manifest["model.init_seed"] = std::to_string(cfg.init_seed);
    ck.manifest["dfm.lambda"] = fmt(cfg.lambda);
    ck.manifest["dfm.train_mode"] = bank.train_mode ? "true" : "false";
    ck.manifest["crf.enabled"] = cfg.crf_enabled ? "true" : "false";
    ck.manifest["crf.n_iters"] = std::to_string(cfg.crf_n_iters);
    ck.manifest["crf.w_appearance"] = fmt(cfg.crf_w_appearance);
    ck.manifest["crf.w_smoothness"] = fmt(cfg.crf_w_smoothness);
    ck.manifest["crf.theta_alpha"] = fmt(cfg.crf_theta_alpha);
    ck.manifest["crf.theta_beta"] = fmt(cfg.crf_theta_beta);
    ck.manifest["crf.theta_gamma"] = fmt(cfg.crf_theta_gamma);
    ck.manifest["crf.learn_compat"] = cfg.crf_learn_compat ? "true" : "false";
    ck.manifest["head.bn_before_relu"] = cfg.head_bn_before_relu ? "true" : "false";
    ck.manifest["model.bn_frame_stats"] = cfg.bn_frame_stats ? "true" : "false";
    ParamMap<T> params;
    collect_params(params);
    for (const auto& p : params) ck.tensors[p.name] = cast_tensor<T, float>(*p.tensor);
    for (const auto& [name, bn] : bn_layers()) {
      const int c = static_cast<int>(bn->running_mean.size());
      ck.tensors[name + ".running_mean"] = cast_tensor<T, float>(
          Tensor<T>({c}, std::vector<T>(bn->running_mean.begin(), bn->running_mean.end())));
      ck.tensors[name + ".running_var"] = cast_tensor<T, float>(
          Tensor<T>({c}, std::vector<T>(bn->running_var.begin(), bn->running_var.end())));
    }
    return ck;
  }

  static DfnetModel from_checkpoint(const Checkpoint& ck) {
    ModelConfig cfg;
    cfg.encoder.base_width = std::stoi(ck.manifest_at("model.base_width"));
    cfg.encoder.out_channels = std::stoi(ck.manifest_at("model.channels"));
    cfg.k = std::stoi(ck.manifest_at("model.k"));
    cfg.init_seed = std::stoull(ck.manifest_at("model.init_seed"));
    cfg.lambda = std::stod(ck.manifest_at("dfm.lambda"));
    cfg.crf_enabled = ck.manifest_at("crf.enabled") == "true";
    cfg.crf_n_iters = std::stoi(ck.manifest_at("crf.n_iters"));
    cfg.crf_w_appearance = std::stod(ck.manifest_at("crf.w_appearance"));
    cfg.crf_w_smoothness = std::stod(ck.manifest_at("crf.w_smoothness"));
    cfg.crf_theta_alpha = std::stod(ck.manifest_at("crf.theta_alpha"));
    cfg.crf_theta_beta = std::stod(ck.manifest_at("crf.theta_beta"));
    cfg.crf_theta_gamma = std::stod(ck.manifest_at("crf.theta_gamma"));
    cfg.crf_learn_compat = ck.manifest_at("crf.learn_compat") == "true";
    cfg.head_bn_before_relu = ck.manifest_at("head.bn_before_relu") == "true";
    cfg.bn_frame_stats = ck.manifest_at("model.bn_frame_stats") == "true";

    DfnetModel m = DfnetModel::init(cfg);
    m.bank.train_mode = ck.manifest_at("dfm.train_mode") == "true";
    ParamMap<T> params;
    m.collect_params(params);
    for (auto& p : params) {
      const auto& src = ck.tensor(p.name);
      check_shape(src.shape() == p.tensor->shape(),
                  "checkpoint tensor " + p.name + " has shape " + shape_str(src.shape()) +
                      ", expected " + shape_str(p.tensor->shape()));
      auto cast = cast_tensor<float, T>(src);
      auto d = p.tensor->data_mut();
      std::copy(cast.data().begin(), cast.data().end(), d.begin());
    }
    for (const auto& [name, bn] : m.bn_layers()) {
      const auto& rm = ck.tensor(name + ".running_mean");
      const auto& rv = ck.tensor(name + ".running_var");
      bn->running_mean.assign(rm.data().begin(), rm.data().end());
      bn->running_var.assign(rv.data().begin(), rv.data().end());
    }
    return m;
  }

  /// Copies matching tensors (and batchnorm statistics) from a checkpoint
  /// into this model, leaving everything else untouched. Used to warm-start
  /// stage 2 from a stage-1 checkpoint whose run settings differ.
  void load_weights_from(const Checkpoint& ck) {
    ParamMap<T> params;
    collect_params(params);
    for (auto& p : params) {
      if (!ck.has(p.name)) continue;
      const auto& src = ck.tensor(p.name);
      check_shape(src.shape() == p.tensor->shape(),
                  "checkpoint tensor " + p.name + " has shape " + shape_str(src.shape()) +
                      ", expected " + shape_str(p.tensor->shape()));
      auto cast = cast_tensor<float, T>(src);
      auto d = p.tensor->data_mut();
      std::copy(cast.data().begin(), cast.data().end(), d.begin());
    }
    for (const auto& [name, bn] : bn_layers()) {
      if (!ck.has(name + ".running_mean")) continue;
      const auto& rm = ck.tensor(name + ".running_mean");
      const auto& rv = ck.tensor(name + ".running_var");
      bn->running_mean.assign(rm.data().begin(), rm.data().end());
      bn->running_var.assign(rv.data().begin(), rv.data().end());
    }
  }

  void save(const std::string& path) { to_checkpoint().save(path); }

  static DfnetModel load(const std::string& path) {
    return from_checkpoint(Checkpoint::load(path));
  }
};

}  // namespace dfnet
