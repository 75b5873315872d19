#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <dfnet/grad_check.hpp>
#include <dfnet/head.hpp>
#include <dfnet/model.hpp>

#include <filesystem>

#include "test_util.hpp"

using namespace dfnet;
using namespace dfnet::testutil;

#ifndef DFNET_FIXTURE_DIR
#define DFNET_FIXTURE_DIR "."
#endif

namespace {

HeadParams<float> make_head(int c, std::uint64_t seed = 3) {
  Rng rng(seed);
  return HeadParams<float>(c, false, rng);
}

void fill(Tensor<float>& t, float v) {
  for (auto& x : t.data_mut()) x = v;
}

}  // namespace

TEST_CASE("self_weight_fuse gates: saturated, closed and exactly half-open") {
  Rng rng(1);
  const int c = 4;
  FeatureMap<float> fn{random_tensor<float>({3, 3, c}, rng), 0};
  FeatureMap<float> fo{random_tensor<float>({3, 3, c}, rng), 0};

  auto head = make_head(c);
  fill(head.gate_new.weight, 0.0f);
  fill(head.gate_orig.weight, 0.0f);

  // bias +20: sigmoid saturates to 1, output is the plain concatenation
  fill(head.gate_new.bias, 20.0f);
  fill(head.gate_orig.bias, 20.0f);
  auto fused = self_weight_fuse(fn, fo, head);
  REQUIRE(fused.shape() == Shape{3, 3, 2 * c});
  for (int i = 0; i < 9; ++i)
    for (int ch = 0; ch < c; ++ch) {
      CHECK(std::fabs(fused.data()[static_cast<std::size_t>(i) * 2 * c + ch] -
                      fn.tensor.data()[static_cast<std::size_t>(i) * c + ch]) <= 1e-6f);
      CHECK(std::fabs(fused.data()[static_cast<std::size_t>(i) * 2 * c + c + ch] -
                      fo.tensor.data()[static_cast<std::size_t>(i) * c + ch]) <= 1e-6f);
    }

  // bias -20: both maps gated to ~0
  fill(head.gate_new.bias, -20.0f);
  fill(head.gate_orig.bias, -20.0f);
  auto closed = self_weight_fuse(fn, fo, head);
  for (float v : closed.data()) CHECK(std::fabs(v) <= 1e-6f);

  // zero weights, zero bias: every value scaled by exactly sigmoid(0) = 0.5
  fill(head.gate_new.bias, 0.0f);
  fill(head.gate_orig.bias, 0.0f);
  auto half = self_weight_fuse(fn, fo, head);
  for (int i = 0; i < 9; ++i)
    for (int ch = 0; ch < c; ++ch) {
      CHECK(half.data()[static_cast<std::size_t>(i) * 2 * c + ch] ==
            fn.tensor.data()[static_cast<std::size_t>(i) * c + ch] * 0.5f);
      CHECK(half.data()[static_cast<std::size_t>(i) * 2 * c + c + ch] ==
            fo.tensor.data()[static_cast<std::size_t>(i) * c + ch] * 0.5f);
    }

  FeatureMap<float> mismatched{Tensor<float>({2, 3, c}), 0};
  CHECK_THROWS_AS(self_weight_fuse(fn, mismatched, head), ShapeError);
}

TEST_CASE("predict_mask: zero logits give 0.5, outputs live strictly inside (0,1)") {
  Rng rng(2);
  const int c = 4;
  auto head = make_head(c);
  head.bn.mode = BnMode::eval;

  fill(head.conv1x1.weight, 0.0f);
  fill(head.conv1x1.bias, 0.0f);
  auto fused = random_tensor<float>({3, 3, 2 * c}, rng);
  auto heat = predict_mask(fused, head);
  REQUIRE(heat.shape() == Shape{3, 3});
  for (float v : heat.data()) CHECK(v == 0.5f);

  auto head2 = make_head(c, 7);
  head2.bn.mode = BnMode::eval;
  for (int trial = 0; trial < 5; ++trial) {
    auto x = random_tensor<float>({4, 4, 2 * c}, rng, -3.0, 3.0);
    auto h = predict_mask(x, head2);
    for (float v : h.data()) {
      CHECK(v > 0.0f);
      CHECK(v < 1.0f);
    }
  }

  CHECK_THROWS_AS(predict_mask(random_tensor<float>({3, 3, c}, rng), head), ShapeError);
}

TEST_CASE("fixed-seed forward matches the stored golden heatmap") {
  // frozen forward-pass oracle, generated on the first run
  namespace fs = std::filesystem;
  const int c = 8;
  Rng rng(99);
  auto head = make_head(c, 42);
  head.bn.mode = BnMode::eval;
  auto fused = random_tensor<float>({6, 5, 2 * c}, rng, -2.0, 2.0);
  auto heat = predict_mask(fused, head);

  const fs::path golden = fs::path(DFNET_FIXTURE_DIR) / "head_golden.dft";
  if (!fs::exists(golden)) {
    fs::create_directories(golden.parent_path());
    save_dft1(golden.string(), heat);
    MESSAGE("golden fixture generated at ", golden.string());
  }
  auto expect = load_dft1(golden.string());
  REQUIRE(expect.shape() == heat.shape());
  CHECK(max_abs_diff(heat, expect) <= 1e-5);
}

TEST_CASE("gradient checks through the full head") {
  Rng rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    const int c = 3;
    auto fn = random_tensor<double>({3, 3, c}, rng);
    auto fo = random_tensor<double>({3, 3, c}, rng);
    Rng wrng(100 + static_cast<std::uint64_t>(trial));
    HeadParams<double> head(c, trial % 2 == 1, wrng);
    auto wfix = random_tensor<double>({3, 3}, rng);
    auto rep = grad_check(
        "full head",
        [&head, wfix](const std::vector<Tensor<double>>& in) {
          std::vector<BnStats<double>> journal;
          head.bn.journal = &journal;  // keep the closure pure
          head.bn.mode = BnMode::train;
          FeatureMap<double> a{in[0], 0}, b{in[1], 0};
          auto out = predict_mask(self_weight_fuse(a, b, head), head);
          return sum(mul(out, wfix));
        },
        {fn, fo,
         head.gate_new.weight, head.conv3x3.weight, head.conv1x1.weight, head.bn.gamma},
        1e-4);
    CHECK(rep.passed);
  }
}
