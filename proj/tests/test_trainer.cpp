#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <dfnet/synthetic.hpp>
#include <dfnet/trainer.hpp>

#include <cmath>
#include <filesystem>
#include <map>
#include <sstream>

#include "test_util.hpp"

using namespace dfnet;
using namespace dfnet::testutil;

namespace {

ModelConfig tiny_model_config(bool crf = true) {
  ModelConfig mc;
  mc.encoder.base_width = 4;
  mc.encoder.out_channels = 8;
  mc.k = 3;
  mc.crf_enabled = crf;
  mc.crf_n_iters = 2;
  mc.init_seed = 11;
  return mc;
}

Dataset dataset_from(const std::vector<SynthGroup>& groups) {
  Dataset ds;
  for (const auto& g : groups) {
    Group group;
    group.name = g.name;
    for (std::size_t i = 0; i < g.frames.size(); ++i)
      group.frames.push_back({std::to_string(i), g.frames[i].image, g.frames[i].mask});
    ds.groups.push_back(std::move(group));
  }
  return ds;
}

std::string checkpoint_fingerprint(DfnetModel<float>& m) {
  auto ck = m.to_checkpoint();
  std::ostringstream os;
  for (const auto& [name, t] : ck.tensors) {
    os << name << ":";
    const auto* bytes = reinterpret_cast<const char*>(t.data().data());
    os.write(bytes, static_cast<std::streamsize>(t.size() * sizeof(float)));
  }
  return os.str();
}

}  // namespace

TEST_CASE("bce_loss: closed form, perfect prediction and symmetry") {
  Tensor<float> half({2, 2}, {0.5f, 0.5f, 0.5f, 0.5f});
  Tensor<float> gt({2, 2}, {1, 0, 1, 0});
  CHECK(bce_loss(half, gt).item() == doctest::Approx(std::log(2.0)).epsilon(1e-6));

  const float eps = 1e-7f;
  Tensor<float> perfect({2, 2}, {1 - eps, eps, 1 - eps, eps});
  CHECK(bce_loss(perfect, gt).item() < 1e-6f);

  Rng rng(1);
  auto p = random_tensor<float>({3, 3}, rng, 0.05, 0.95);
  std::vector<float> gd(9);
  for (auto& v : gd) v = rng.uniform() < 0.5 ? 0.0f : 1.0f;
  Tensor<float> g({3, 3}, gd);
  auto flipped_p = rsub_scalar(1.0f, p).detach();
  auto flipped_g = rsub_scalar(1.0f, g).detach();
  CHECK(bce_loss(p, g).item() == doctest::Approx(bce_loss(flipped_p, flipped_g).item()).epsilon(1e-6));

  CHECK_THROWS_AS(bce_loss(p, Tensor<float>({2, 2})), ShapeError);
  Tensor<float> not_binary({3, 3}, std::vector<float>(9, 0.5f));
  CHECK_THROWS_AS(bce_loss(p, not_binary), ValueError);
}

TEST_CASE("poly_lr: start, end, midpoint oracle and range check") {
  CHECK(poly_lr(0.01, 0, 100, 0.9) == 0.01);
  CHECK(poly_lr(0.01, 100, 100, 0.9) == 0.0);
  CHECK(poly_lr(0.001, 50, 100, 0.9) == doctest::Approx(0.001 * std::pow(0.5, 0.9)).epsilon(1e-12));
  CHECK(poly_lr(0.001, 50, 100, 0.9) == doctest::Approx(5.359e-4).epsilon(1e-3));
  CHECK_THROWS_AS(poly_lr(0.01, 101, 100, 0.9), ValueError);
  CHECK_THROWS_AS(poly_lr(0.01, -1, 100, 0.9), ValueError);

  double prev = 1e9;
  for (int it = 0; it <= 100; ++it) {
    const double lr = poly_lr(0.01, it, 100, 0.9);
    CHECK(lr <= prev);
    prev = lr;
  }
}

TEST_CASE("sgd_step: fixed point and forced arithmetic") {
  Tensor<float> p({1}, {1.0f});
  p.set_requires_grad(true);
  ParamMap<float> params{{"p", &p}};

  sgd_step(params, {std::vector<float>{0.0f}}, 0.1, 0.0);
  CHECK(p.data()[0] == 1.0f);

  sgd_step(params, {std::vector<float>{0.0f}}, 0.1, 0.0001);
  CHECK(p.data()[0] == doctest::Approx(0.99999).epsilon(1e-6));

  Tensor<float> q({1}, {2.0f});
  ParamMap<float> params2{{"q", &q}};
  sgd_step(params2, {std::vector<float>{1.0f}}, 0.5, 0.0);
  CHECK(q.data()[0] == 1.5f);

  // non-sgd parameters are untouched
  Tensor<float> bankish({1}, {3.0f});
  ParamMap<float> params3{{"bank", &bankish, /*sgd=*/false}};
  sgd_step(params3, {std::vector<float>{1.0f}}, 0.5, 0.0);
  CHECK(bankish.data()[0] == 3.0f);
}

TEST_CASE("sample_video_batch: forced choice, determinism, uniformity") {
  auto groups = gen_synthetic(SynthKind::moving_blobs, 1, 32, 3);
  Dataset two = dataset_from(groups);
  two.groups[0].frames.resize(2);
  {
    Rng rng(0);
    for (int i = 0; i < 5; ++i) {
      auto b = sample_video_batch(two, 0, rng);
      REQUIRE(b.frames.size() == 2);
      CHECK(bitwise_equal(b.frames[0], two.groups[0].frames[0].image));
      CHECK(bitwise_equal(b.frames[1], two.groups[0].frames[1].image));
    }
  }
  {
    Dataset five = dataset_from(groups);
    five.groups[0].frames.resize(5);
    Rng r1(7), r2(7);
    auto a = sample_video_batch(five, 0, r1);
    auto b = sample_video_batch(five, 0, r2);
    CHECK(bitwise_equal(a.frames[1], b.frames[1]));

    Rng rng(9);
    std::array<int, 5> hist{};
    for (int draw = 0; draw < 10000; ++draw) {
      auto s = sample_video_batch(five, 0, rng);
      for (int f = 1; f < 5; ++f)
        if (bitwise_equal(s.frames[1], five.groups[0].frames[static_cast<std::size_t>(f)].image))
          ++hist[static_cast<std::size_t>(f)];
    }
    for (int f = 1; f < 5; ++f)
      CHECK(std::fabs(hist[static_cast<std::size_t>(f)] / 10000.0 - 0.25) <= 0.02);
  }
  Dataset one = dataset_from(groups);
  one.groups[0].frames.resize(1);
  Rng rng(1);
  CHECK_THROWS_AS(sample_video_batch(one, 0, rng), ValueError);
}

TEST_CASE("sample_coseg_group: forced triple, distinctness, uniform over triples") {
  auto groups = gen_synthetic(SynthKind::coseg_groups, 1, 32, 5);
  Dataset three = dataset_from(groups);
  three.groups[0].frames.resize(3);
  {
    Rng rng(0);
    auto b = sample_coseg_group(three, 0, rng);
    REQUIRE(b.frames.size() == 3);
  }
  Dataset five = dataset_from(groups);
  five.groups[0].frames.resize(5);
  {
    Rng rng(3);
    std::map<std::array<int, 3>, int> hist;
    for (int draw = 0; draw < 10000; ++draw) {
      auto b = sample_coseg_group(five, 0, rng);
      std::array<int, 3> ids{-1, -1, -1};
      for (int s = 0; s < 3; ++s)
        for (int f = 0; f < 5; ++f)
          if (bitwise_equal(b.frames[static_cast<std::size_t>(s)],
                            five.groups[0].frames[static_cast<std::size_t>(f)].image))
            ids[static_cast<std::size_t>(s)] = f;
      std::sort(ids.begin(), ids.end());
      CHECK(ids[0] >= 0);
      CHECK(ids[0] != ids[1]);
      CHECK(ids[1] != ids[2]);
      ++hist[ids];
    }
    CHECK(hist.size() == 10);  // all C(5,3) triples appear
    for (const auto& [triple, count] : hist)
      CHECK(std::fabs(count / 10000.0 - 0.1) <= 0.02);
  }
  Dataset two = dataset_from(groups);
  two.groups[0].frames.resize(2);
  Rng rng(1);
  CHECK_THROWS_AS(sample_coseg_group(two, 0, rng), ValueError);
}

TEST_CASE("train_stage with max_iter 0 is a no-op") {
  auto ds = dataset_from(gen_synthetic(SynthKind::moving_blobs, 2, 32, 13));
  auto model = DfnetModel<float>::init(tiny_model_config());
  const auto before = checkpoint_fingerprint(model);
  TrainConfig cfg;
  cfg.stage = Stage::video;
  cfg.max_iter = 0;
  cfg.batch_size = 2;
  auto trace = train_stage(cfg, model, ds);
  CHECK(trace.empty());
  CHECK(checkpoint_fingerprint(model) == before);
}

TEST_CASE("train_stage rejects mismatched dataset kinds") {
  auto st = dataset_from(gen_synthetic(SynthKind::static_blobs, 3, 32, 15));
  auto model = DfnetModel<float>::init(tiny_model_config());
  TrainConfig cfg;
  cfg.stage = Stage::video;
  cfg.max_iter = 1;
  CHECK_THROWS_AS(train_stage(cfg, model, st), ValueError);  // 1-frame groups
  cfg.stage = Stage::coseg;
  CHECK_THROWS_AS(train_stage(cfg, model, st), ValueError);
}

TEST_CASE("a single tiny sample is overfit within 200 iterations") {
  // close-up sample: the object fills the frame, so the target is exactly
  // representable and the loss floor is zero
  auto groups = gen_synthetic(SynthKind::static_blobs, 1, 32, 17);
  Dataset ds;
  Group g;
  g.name = "sample";
  g.frames.push_back({"0", groups[0].frames[0].image,
                      Tensor<float>({32, 32}, std::vector<float>(32 * 32, 1.0f))});
  ds.groups.push_back(std::move(g));
  auto model = DfnetModel<float>::init(tiny_model_config(false));

  TrainConfig cfg;
  cfg.stage = Stage::static_pretrain;
  cfg.base_lr = 0.3;
  cfg.batch_size = 1;
  cfg.max_iter = 200;
  cfg.seed = 4;
  auto trace = train_stage(cfg, model, ds);
  REQUIRE(trace.size() == 200);
  CHECK(trace.back().loss < 0.05 * trace.front().loss);

  // a blob sample cannot reach zero (binary edges are not representable at
  // 1/8 resolution) but still trains far below its starting loss
  auto blob_ds = dataset_from(groups);
  auto blob_model = DfnetModel<float>::init(tiny_model_config(false));
  auto blob_trace = train_stage(cfg, blob_model, blob_ds);
  CHECK(blob_trace.back().loss < 0.5 * blob_trace.front().loss);
}

TEST_CASE("video stage smoke run exercises DFM, ATM, CRF and the bank update") {
  auto ds = dataset_from(gen_synthetic(SynthKind::moving_blobs, 2, 32, 19));
  auto model = DfnetModel<float>::init(tiny_model_config(true));
  const auto bank_before = model.bank.weights.clone();

  TrainConfig cfg;
  cfg.stage = Stage::video;
  cfg.base_lr = 0.01;
  cfg.batch_size = 2;
  cfg.max_iter = 3;
  cfg.crf_in_training = true;
  auto trace = train_stage(cfg, model, ds);
  REQUIRE(trace.size() == 3);
  for (const auto& row : trace) CHECK(std::isfinite(row.loss));
  CHECK_FALSE(bitwise_equal(model.bank.weights, bank_before));  // moving average moved
}

TEST_CASE("coseg stage trains on 3-image groups") {
  auto ds = dataset_from(gen_synthetic(SynthKind::coseg_groups, 2, 32, 23));
  auto model = DfnetModel<float>::init(tiny_model_config(false));
  TrainConfig cfg;
  cfg.stage = Stage::coseg;
  cfg.base_lr = 0.01;
  cfg.batch_size = 1;
  cfg.max_iter = 2;
  auto trace = train_stage(cfg, model, ds);
  CHECK(trace.size() == 2);
}

TEST_CASE("split-batch training matches combined-batch training bit for bit") {
  auto ds = dataset_from(gen_synthetic(SynthKind::moving_blobs, 4, 32, 29));

  auto run = [&](int workers) {
    auto model = DfnetModel<float>::init(tiny_model_config(true));
    TrainConfig cfg;
    cfg.stage = Stage::video;
    cfg.base_lr = 0.01;
    cfg.batch_size = 4;
    cfg.max_iter = 10;
    cfg.n_workers = workers;
    cfg.seed = 31;
    train_stage(cfg, model, ds);
    return checkpoint_fingerprint(model);
  };
  const auto solo = run(1);
  CHECK(run(2) == solo);
  CHECK(run(4) == solo);
}

TEST_CASE("fixed seed and worker count give bitwise-identical checkpoints") {
  auto ds = dataset_from(gen_synthetic(SynthKind::moving_blobs, 2, 32, 37));
  auto run = [&] {
    auto model = DfnetModel<float>::init(tiny_model_config(true));
    TrainConfig cfg;
    cfg.stage = Stage::video;
    cfg.batch_size = 2;
    cfg.max_iter = 5;
    cfg.seed = 41;
    train_stage(cfg, model, ds);
    return checkpoint_fingerprint(model);
  };
  CHECK(run() == run());
}

TEST_CASE("exploding updates abort with the iteration index") {
  auto ds = dataset_from(gen_synthetic(SynthKind::moving_blobs, 1, 32, 43));
  auto model = DfnetModel<float>::init(tiny_model_config(false));
  TrainConfig cfg;
  cfg.stage = Stage::video;
  cfg.base_lr = 1e38;  // the decay term overflows the parameters within two steps
  cfg.batch_size = 1;
  cfg.max_iter = 10;
  try {
    train_stage(cfg, model, ds);
    FAIL("expected non-finite loss abort");
  } catch (const ValueError& e) {
    CHECK(std::string(e.what()).find("iteration") != std::string::npos);
  }
}

TEST_CASE("checkpoint save/load round trips a trained model") {
  namespace fs = std::filesystem;
  auto ds = dataset_from(gen_synthetic(SynthKind::moving_blobs, 1, 32, 47));
  auto model = DfnetModel<float>::init(tiny_model_config(true));
  TrainConfig cfg;
  cfg.stage = Stage::video;
  cfg.batch_size = 1;
  cfg.max_iter = 2;
  train_stage(cfg, model, ds);

  const auto path = (fs::temp_directory_path() / "dfnet_trainer_ck.ckpt").string();
  model.save(path);
  auto back = DfnetModel<float>::load(path);
  CHECK(checkpoint_fingerprint(back) == checkpoint_fingerprint(model));
  std::remove(path.c_str());
}
