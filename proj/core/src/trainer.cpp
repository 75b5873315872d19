#include "dfnet/trainer.hpp"

#include <cmath>
#include <deque>
#include <fstream>

namespace dfnet {

Stage parse_stage(const std::string& name) {
  if (name == "static_pretrain") return Stage::static_pretrain;
  if (name == "video") return Stage::video;
  if (name == "coseg") return Stage::coseg;
  throw ValueError("unknown training stage '" + name + "'");
}

SampleBatch sample_video_batch(const Dataset& ds, int video_index, Rng& rng) {
  check_value(video_index >= 0 && video_index < static_cast<int>(ds.groups.size()),
              "sample_video_batch: bad video index");
  const Group& g = ds.groups[static_cast<std::size_t>(video_index)];
  check_value(g.frames.size() >= 2,
              "sample_video_batch: video '" + g.name + "' has fewer than 2 frames");
  const int other = 1 + rng.uniform_int(static_cast<int>(g.frames.size()) - 1);
  SampleBatch b;
  b.group_id = g.name;
  b.frames = {g.frames[0].image, g.frames[static_cast<std::size_t>(other)].image};
  b.masks = {g.frames[0].mask, g.frames[static_cast<std::size_t>(other)].mask};
  return b;
}

SampleBatch sample_coseg_group(const Dataset& ds, int class_index, Rng& rng) {
  check_value(class_index >= 0 && class_index < static_cast<int>(ds.groups.size()),
              "sample_coseg_group: bad class index");
  const Group& g = ds.groups[static_cast<std::size_t>(class_index)];
  const int n = static_cast<int>(g.frames.size());
  check_value(n >= 3, "sample_coseg_group: class '" + g.name + "' has fewer than 3 images");
  std::vector<int> idx(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  for (int i = 0; i < 3; ++i) {
    const int j = i + rng.uniform_int(n - i);
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  SampleBatch b;
  b.group_id = g.name;
  for (int i = 0; i < 3; ++i) {
    const auto& s = g.frames[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])];
    b.frames.push_back(s.image);
    b.masks.push_back(s.mask);
  }
  return b;
}

namespace {

void validate_dataset(const TrainConfig& cfg, const Dataset& ds) {
  check_value(!ds.groups.empty(), "train: empty dataset");
  for (const auto& g : ds.groups) {
    check_value(!g.frames.empty(), "train: group '" + g.name + "' is empty");
    for (const auto& s : g.frames)
      check_value(s.mask.defined(), "train: dataset kind mismatch, group '" + g.name +
                                        "' lacks masks required for training");
    if (cfg.stage == Stage::video)
      check_value(g.frames.size() >= 2, "train: dataset kind mismatch, video stage needs >= 2 "
                                        "frames per group but '" + g.name + "' has " +
                                            std::to_string(g.frames.size()));
    if (cfg.stage == Stage::coseg)
      check_value(g.frames.size() >= 3, "train: dataset kind mismatch, coseg stage needs >= 3 "
                                        "images per class but '" + g.name + "' has " +
                                            std::to_string(g.frames.size()));
  }
}

/// Per-layer batchnorm statistic capture for one batch slot.
struct SlotJournal {
  std::vector<std::vector<BnStats<float>>> per_layer;
};

void attach_journal(DfnetModel<float>& m, SlotJournal& j) {
  auto layers = m.bn_layers();
  j.per_layer.assign(layers.size(), {});
  for (std::size_t i = 0; i < layers.size(); ++i) layers[i].second->journal = &j.per_layer[i];
}

void detach_journal(DfnetModel<float>& m) {
  for (auto& [name, bn] : m.bn_layers()) bn->journal = nullptr;
}

}  // namespace

std::vector<TraceRow> train_stage(const TrainConfig& cfg, DfnetModel<float>& model,
                                  const Dataset& ds) {
  cfg.validate();
  validate_dataset(cfg, ds);
  model.set_train(true);

  // Worker replicas: replica 0 is the caller's model; all replicas are
  // bit-identical at every barrier.
  std::deque<DfnetModel<float>> extra;
  std::vector<DfnetModel<float>*> replicas{&model};
  for (int w = 1; w < cfg.n_workers; ++w) {
    extra.push_back(model.clone());
    replicas.push_back(&extra.back());
  }
  std::vector<ParamMap<float>> pmaps(replicas.size());
  for (std::size_t r = 0; r < replicas.size(); ++r) {
    replicas[r]->collect_params(pmaps[r]);
    if (cfg.encoder_bn_frozen) {
      for (auto& p : pmaps[r]) {
        if (p.name.rfind("encoder.", 0) == 0 && (p.name.ends_with(".bn.gamma") ||
                                                 p.name.ends_with(".bn.beta")))
          p.sgd = false;
      }
    }
  }
  std::vector<ScoringBank<float>*> banks;
  for (auto* r : replicas) banks.push_back(&r->bank);

  const std::size_t n_params = pmaps[0].size();
  const bool use_crf = cfg.crf_in_training && model.cfg.crf_enabled;
  const int n_groups = static_cast<int>(ds.groups.size());

  Rng rng(cfg.seed);
  std::vector<TraceRow> trace;
  trace.reserve(static_cast<std::size_t>(cfg.max_iter));

  for (int iter = 0; iter < cfg.max_iter; ++iter) {
    const double lr = poly_lr(cfg.base_lr, iter, cfg.max_iter, cfg.power);

    // Global batch, sampled centrally so composition is independent of the
    // worker count.
    std::vector<SampleBatch> slots;
    slots.reserve(static_cast<std::size_t>(cfg.batch_size));
    for (int s = 0; s < cfg.batch_size; ++s) {
      const int gidx = rng.uniform_int(n_groups);
      switch (cfg.stage) {
        case Stage::static_pretrain: {
          const Group& g = ds.groups[static_cast<std::size_t>(gidx)];
          const int f = rng.uniform_int(static_cast<int>(g.frames.size()));
          SampleBatch b;
          b.group_id = g.name;
          b.frames = {g.frames[static_cast<std::size_t>(f)].image};
          b.masks = {g.frames[static_cast<std::size_t>(f)].mask};
          slots.push_back(std::move(b));
          break;
        }
        case Stage::video: slots.push_back(sample_video_batch(ds, gidx, rng)); break;
        case Stage::coseg: slots.push_back(sample_coseg_group(ds, gidx, rng)); break;
      }
    }

    // Per-slot forward/backward on the slot's worker replica. Replicas are
    // identical at this point, so each slot's contribution depends only on
    // the slot content; reductions below run in ascending slot order.
    std::vector<std::vector<float>> grad_sum(n_params);
    std::vector<SlotJournal> journals(slots.size());
    std::vector<DFeatureSet<float>> dfeats;
    double loss_sum = 0.0;
    std::int64_t frame_count = 0;

    for (std::size_t s = 0; s < slots.size(); ++s) {
      const auto w = s % replicas.size();
      DfnetModel<float>& rep = *replicas[w];
      ParamMap<float>& pmap = pmaps[w];
      const SampleBatch& slot = slots[s];

      attach_journal(rep, journals[s]);
      Tensor<float> slot_loss;
      try {
      if (cfg.stage == Stage::static_pretrain) {
        const auto feat = rep.encoder.encode(slot.frames[0], 0);
        const auto heat = rep.stage1_predict(feat);
        const auto up =
            bilinear_resize(heat, slot.masks[0].dim(0), slot.masks[0].dim(1));
        slot_loss = bce_loss(up, slot.masks[0]);
      } else {
        std::vector<int> ids(slot.frames.size());
        for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);
        DFeatureSet<float> dfeat;
        const auto heats = rep.forward_group(slot.frames, ids, use_crf, &dfeat);
        for (std::size_t i = 0; i < heats.size(); ++i) {
          const auto up =
              bilinear_resize(heats[i], slot.masks[i].dim(0), slot.masks[i].dim(1));
          const auto l = bce_loss(up, slot.masks[i]);
          slot_loss = slot_loss.defined() ? add(slot_loss, l) : l;
        }
        dfeats.push_back(std::move(dfeat));
      }
      } catch (const ValueError& e) {
        // numeric blow-ups can trip validation inside the forward pass;
        // either way the abort carries the iteration index
        throw ValueError(std::string(e.what()) + " (at training iteration " +
                         std::to_string(iter) + ")");
      }
      detach_journal(rep);

      const double lv = slot_loss.item();
      if (!std::isfinite(lv))
        throw ValueError("train: non-finite loss at training iteration " + std::to_string(iter));
      loss_sum += lv;
      frame_count += static_cast<std::int64_t>(slot.frames.size());

      slot_loss.backward();
      for (std::size_t p = 0; p < n_params; ++p) {
        auto g = pmap[p].tensor->grad();
        if (g.empty()) continue;
        if (grad_sum[p].empty()) grad_sum[p].assign(g.size(), 0.0f);
        for (std::size_t e = 0; e < g.size(); ++e) grad_sum[p][e] += g[e];
        pmap[p].tensor->zero_grad();
      }
    }

    // All-reduce: one global mean over frames, then the identical update on
    // every replica.
    const float inv = 1.0f / static_cast<float>(frame_count);
    for (auto& g : grad_sum)
      for (auto& v : g) v *= inv;

    if (cfg.clip_gradients) {
      double norm_sq = 0.0;
      for (const auto& g : grad_sum)
        for (float v : g) norm_sq += static_cast<double>(v) * v;
      const double norm = std::sqrt(norm_sq);
      if (norm > cfg.clip_norm) {
        const float scale = static_cast<float>(cfg.clip_norm / norm);
        for (auto& g : grad_sum)
          for (auto& v : g) v *= scale;
      }
    }

    for (std::size_t r = 0; r < replicas.size(); ++r)
      sgd_step(pmaps[r], grad_sum, lr, cfg.weight_decay);

    // Deferred batchnorm statistics, folded per slot in order on every
    // replica so running stats stay synchronized.
    for (std::size_t r = 0; r < replicas.size(); ++r) {
      auto layers = replicas[r]->bn_layers();
      for (const auto& journal : journals)
        for (std::size_t l = 0; l < layers.size(); ++l)
          for (const auto& entry : journal.per_layer[l]) layers[l].second->apply_stats(entry);
    }

    // Synchronized scoring-bank update (statistics path, after the step).
    if (cfg.stage != Stage::static_pretrain) synchronized_update(banks, dfeats);

    trace.push_back({iter, lr, loss_sum / static_cast<double>(frame_count)});
  }
  return trace;
}

void write_loss_trace(const std::string& path, const std::vector<TraceRow>& trace) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os << "iter,lr,loss\n";
  os.precision(10);
  for (const auto& row : trace) os << row.iter << "," << row.lr << "," << row.loss << "\n";
}

}  // namespace dfnet
