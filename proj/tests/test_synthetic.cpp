#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <dfnet/dataset.hpp>
#include <dfnet/synthetic.hpp>

#include <filesystem>

#include "test_util.hpp"

using namespace dfnet;
using namespace dfnet::testutil;

TEST_CASE("same seed produces bitwise-identical datasets") {
  for (auto kind : {SynthKind::static_blobs, SynthKind::moving_blobs, SynthKind::coseg_groups}) {
    auto a = gen_synthetic(kind, 3, 32, 77);
    auto b = gen_synthetic(kind, 3, 32, 77);
    REQUIRE(a.size() == b.size());
    for (std::size_t g = 0; g < a.size(); ++g) {
      CHECK(a[g].name == b[g].name);
      REQUIRE(a[g].frames.size() == b[g].frames.size());
      for (std::size_t f = 0; f < a[g].frames.size(); ++f) {
        CHECK(bitwise_equal(a[g].frames[f].image, b[g].frames[f].image));
        CHECK(bitwise_equal(a[g].frames[f].mask, b[g].frames[f].mask));
      }
    }
    auto c = gen_synthetic(kind, 3, 32, 78);
    bool any_diff = false;
    for (std::size_t g = 0; g < a.size() && !any_diff; ++g)
      for (std::size_t f = 0; f < std::min(a[g].frames.size(), c[g].frames.size()); ++f)
        if (!bitwise_equal(a[g].frames[f].image, c[g].frames[f].image)) any_diff = true;
    CHECK(any_diff);
  }
}

TEST_CASE("every mask has foreground and matches the analytic membership test") {
  auto groups = gen_synthetic(SynthKind::moving_blobs, 4, 48, 5);
  for (const auto& g : groups) {
    CHECK(g.frames.size() >= 8);
    CHECK(g.frames.size() <= 16);
    for (const auto& frame : g.frames) {
      const int size = frame.mask.dim(0);
      std::int64_t fg_count = 0;
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
          bool inside = false;
          for (const auto& e : frame.foreground)
            if (ellipse_contains(e, x + 0.5, y + 0.5)) inside = true;
          const float mv = frame.mask.at({y, x});
          CHECK(mv == (inside ? 1.0f : 0.0f));
          fg_count += inside;
        }
      CHECK(fg_count > 0);
      CHECK(frame.foreground.size() == 1);  // one persistent object per video
    }
  }
}

TEST_CASE("static blobs carry 1..3 foreground ellipses, coseg groups share a class") {
  auto st = gen_synthetic(SynthKind::static_blobs, 6, 32, 9);
  CHECK(st.size() == 6);
  for (const auto& g : st) {
    REQUIRE(g.frames.size() == 1);
    CHECK(g.frames[0].foreground.size() >= 1);
    CHECK(g.frames[0].foreground.size() <= 3);
  }

  auto cs = gen_synthetic(SynthKind::coseg_groups, 3, 32, 11);
  for (const auto& g : cs) {
    CHECK(g.frames.size() >= 3);
    for (const auto& f : g.frames) CHECK(f.foreground.size() == 1);
  }
}

TEST_CASE("generator rejects bad sizes and unknown kinds") {
  CHECK_THROWS_AS(gen_synthetic(SynthKind::static_blobs, 1, 30, 0), ValueError);
  CHECK_THROWS_AS(gen_synthetic(SynthKind::static_blobs, 1, 24, 0), ValueError);
  CHECK_THROWS_AS(gen_synthetic(SynthKind::static_blobs, 0, 32, 0), ValueError);
  CHECK_THROWS_AS(parse_synth_kind("wobbly_blobs"), ValueError);
  CHECK(parse_synth_kind("moving_blobs") == SynthKind::moving_blobs);
}

TEST_CASE("write_dataset lays out groups and round-trips through load_dataset") {
  namespace fs = std::filesystem;
  const auto root = fs::temp_directory_path() / "dfnet_synth_ds";
  fs::remove_all(root);

  auto groups = gen_synthetic(SynthKind::moving_blobs, 2, 32, 21);
  write_dataset(groups, root.string());

  CHECK(fs::exists(root / groups[0].name / "frames" / "00000.png"));
  CHECK(fs::exists(root / groups[0].name / "masks" / "00000.png"));

  auto ds = load_dataset(root.string());
  REQUIRE(ds.groups.size() == groups.size());
  for (std::size_t g = 0; g < ds.groups.size(); ++g) {
    REQUIRE(ds.groups[g].frames.size() == groups[g].frames.size());
    for (std::size_t f = 0; f < ds.groups[g].frames.size(); ++f) {
      // masks survive exactly; images within 8-bit quantization
      CHECK(bitwise_equal(ds.groups[g].frames[f].mask, groups[g].frames[f].mask));
      CHECK(max_abs_diff(ds.groups[g].frames[f].image, groups[g].frames[f].image) <=
            0.5 / 255.0 + 1e-6);
    }
  }
  fs::remove_all(root);
}
