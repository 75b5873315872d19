#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <dfnet/grad_check.hpp>
#include <dfnet/ops.hpp>
#include <dfnet/rng.hpp>
#include <dfnet/tensor.hpp>

using namespace dfnet;

namespace {

template <typename T>
Tensor<T> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<T> data(static_cast<std::size_t>(numel(shape)));
  for (auto& v : data) v = static_cast<T>(rng.uniform(lo, hi));
  return Tensor<T>(std::move(shape), std::move(data));
}

// random values kept away from zero, for ops with a kink at the origin
template <typename T>
Tensor<T> random_tensor_off_origin(Shape shape, Rng& rng) {
  std::vector<T> data(static_cast<std::size_t>(numel(shape)));
  for (auto& v : data) {
    double x = rng.uniform(0.1, 1.0);
    if (rng.uniform() < 0.5) x = -x;
    v = static_cast<T>(x);
  }
  return Tensor<T>(std::move(shape), std::move(data));
}

}  // namespace

TEST_CASE("tensor construction and invariants") {
  Tensor<float> t({2, 3}, std::vector<float>{1, 2, 3, 4, 5, 6});
  CHECK(t.rank() == 2);
  CHECK(t.size() == 6);
  CHECK(t.at({1, 2}) == 6.0f);
  CHECK_THROWS_AS(Tensor<float>({2, 3}, std::vector<float>{1, 2}), ShapeError);
  CHECK_THROWS_AS(Tensor<float>({0, 3}), ShapeError);
}

TEST_CASE("matmul identity, zero and hand-computed cases") {
  Tensor<float> eye({2, 2}, {1, 0, 0, 1});
  Tensor<float> a({2, 2}, {1, 2, 3, 4});
  auto r = matmul(eye, a);
  for (std::size_t i = 0; i < 4; ++i) CHECK(r.data()[i] == a.data()[i]);

  Tensor<float> z({2, 3});
  auto rz = matmul(eye, z);
  for (float v : rz.data()) CHECK(v == 0.0f);

  // hand multiplication oracle
  Tensor<float> b({2, 1}, {5, 6});
  auto rb = matmul(a, b);
  CHECK(rb.at({0, 0}) == doctest::Approx(17.0));
  CHECK(rb.at({1, 0}) == doctest::Approx(39.0));

  CHECK_THROWS_WITH_AS(matmul(a, Tensor<float>({3, 2})),
                       doctest::Contains("[2x2]"), ShapeError);
  try {
    matmul(a, Tensor<float>({3, 2}));
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("[3x2]") != std::string::npos);
  }
}

TEST_CASE("matmul agrees with a straight-line triple loop on random inputs") {
  Rng rng(7);
  for (int trial = 0; trial < 5; ++trial) {
    const int m = 1 + rng.uniform_int(5), k = 1 + rng.uniform_int(5), n = 1 + rng.uniform_int(5);
    auto a = random_tensor<double>({m, k}, rng);
    auto b = random_tensor<double>({k, n}, rng);
    auto r = matmul(a, b);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) {
        double acc = 0;
        for (int l = 0; l < k; ++l) acc += a.at({i, l}) * b.at({l, j});
        CHECK(r.at({i, j}) == doctest::Approx(acc).epsilon(1e-12));
      }
  }
}

TEST_CASE("softmax symmetry, scalar oracle and overflow stability") {
  auto u = softmax(Tensor<float>({3}, {0, 0, 0}), 0);
  for (float v : u.data()) CHECK(v == doctest::Approx(1.0 / 3.0));

  // scalar exp oracle: e^1/(e^1+e^0)
  auto s = softmax(Tensor<float>({2}, {1, 0}), 0);
  CHECK(s.data()[0] == doctest::Approx(0.73106).epsilon(1e-4));
  CHECK(s.data()[1] == doctest::Approx(0.26894).epsilon(1e-4));

  auto big = softmax(Tensor<float>({2}, {1000, 0}), 0);
  CHECK(big.all_finite());
  CHECK(big.data()[0] == doctest::Approx(1.0));
  CHECK(big.data()[1] == doctest::Approx(0.0));

  CHECK_THROWS_AS(softmax(Tensor<float>({2, 2}), 2), ValueError);
}

TEST_CASE("softmax slices sum to one across extreme magnitudes") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const int rows = 1 + rng.uniform_int(6), cols = 1 + rng.uniform_int(64);
    auto x = random_tensor<float>({rows, cols}, rng, -1e3, 1e3);
    for (int axis = 0; axis < 2; ++axis) {
      auto y = softmax(x, axis);
      REQUIRE(y.all_finite());
      const int outer = (axis == 0) ? cols : rows;
      const int n = (axis == 0) ? rows : cols;
      for (int o = 0; o < outer; ++o) {
        double total = 0;
        for (int j = 0; j < n; ++j)
          total += (axis == 0) ? y.at({j, o}) : y.at({o, j});
        CHECK(std::fabs(total - 1.0) <= 1e-6);
      }
    }
  }
}

TEST_CASE("conv2d identity kernel, sum pooling, block means") {
  Rng rng(3);
  auto x = random_tensor<float>({4, 5, 2}, rng);
  Tensor<float> ident({1, 1, 2, 2}, {1, 0, 0, 1});
  auto y = conv2d(x, ident, 1, 0);
  REQUIRE(y.shape() == x.shape());
  for (std::size_t i = 0; i < static_cast<std::size_t>(x.size()); ++i)
    CHECK(y.data()[i] == doctest::Approx(x.data()[i]));

  Tensor<float> ones_img({3, 3, 1}, std::vector<float>(9, 1.0f));
  Tensor<float> ones_k({3, 3, 1, 1}, std::vector<float>(9, 1.0f));
  auto pooled = conv2d(ones_img, ones_k, 1, 0);
  REQUIRE(pooled.shape() == Shape{1, 1, 1});
  CHECK(pooled.data()[0] == doctest::Approx(9.0));

  // 4x4 ramp, 2x2 averaging kernel, stride 2 -> block means (sliding-window oracle)
  std::vector<float> ramp(16);
  for (int i = 0; i < 16; ++i) ramp[static_cast<std::size_t>(i)] = static_cast<float>(i);
  Tensor<float> rimg({4, 4, 1}, ramp);
  Tensor<float> avg_k({2, 2, 1, 1}, std::vector<float>(4, 0.25f));
  auto blocks = conv2d(rimg, avg_k, 2, 0);
  REQUIRE(blocks.shape() == Shape{2, 2, 1});
  for (int by = 0; by < 2; ++by)
    for (int bx = 0; bx < 2; ++bx) {
      double mean_val = 0;
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx) mean_val += ramp[static_cast<std::size_t>((2 * by + dy) * 4 + 2 * bx + dx)];
      mean_val /= 4.0;
      CHECK(blocks.at({by, bx, 0}) == doctest::Approx(mean_val));
    }

  CHECK_THROWS_AS(conv2d(Tensor<float>({2, 2, 1}), Tensor<float>({3, 3, 1, 1}), 1, 0), ShapeError);
}

TEST_CASE("conv2d padding and stride output geometry") {
  Rng rng(5);
  auto x = random_tensor<float>({7, 9, 3}, rng);
  auto k = random_tensor<float>({3, 3, 3, 4}, rng);
  auto y = conv2d(x, k, 2, 1);
  CHECK(y.shape() == Shape{4, 5, 4});
}

TEST_CASE("bilinear_resize identity and geometry") {
  Rng rng(9);
  auto x = random_tensor<float>({5, 7, 2}, rng);
  auto same = bilinear_resize(x, 5, 7);
  for (std::size_t i = 0; i < static_cast<std::size_t>(x.size()); ++i)
    CHECK(same.data()[i] == x.data()[i]);  // exact

  auto up = bilinear_resize(x, 10, 14);
  CHECK(up.shape() == Shape{10, 14, 2});
  auto heat = random_tensor<float>({4, 4}, rng, 0.0, 1.0);
  auto up2 = bilinear_resize(heat, 8, 8);
  CHECK(up2.shape() == Shape{8, 8});
}

TEST_CASE("batchnorm2d running statistics follow the momentum recurrence exactly") {
  Rng rng(21);
  const int c = 3;
  Tensor<float> gamma({c}, {1, 1, 1});
  Tensor<float> beta({c});
  std::vector<float> rm(c, 0.0f), rv(c, 1.0f);
  const float momentum = 0.1f;

  std::vector<float> rm_ref = rm, rv_ref = rv;
  for (int step = 0; step < 4; ++step) {
    auto x = random_tensor<float>({4, 4, c}, rng);
    // reference recurrence computed independently
    for (int ch = 0; ch < c; ++ch) {
      double m = 0;
      for (int i = 0; i < 16; ++i) m += x.data()[static_cast<std::size_t>(i * c + ch)];
      m /= 16.0;
      double v = 0;
      for (int i = 0; i < 16; ++i) {
        const double d = x.data()[static_cast<std::size_t>(i * c + ch)] - m;
        v += d * d;
      }
      v /= 16.0;
      rm_ref[static_cast<std::size_t>(ch)] =
          (1.0f - momentum) * rm_ref[static_cast<std::size_t>(ch)] + momentum * static_cast<float>(m);
      rv_ref[static_cast<std::size_t>(ch)] =
          (1.0f - momentum) * rv_ref[static_cast<std::size_t>(ch)] + momentum * static_cast<float>(v);
    }
    batchnorm2d(x, gamma, beta, rm, rv, momentum, 1e-5f, BnMode::train);
    for (int ch = 0; ch < c; ++ch) {
      CHECK(rm[static_cast<std::size_t>(ch)] == doctest::Approx(rm_ref[static_cast<std::size_t>(ch)]).epsilon(1e-6));
      CHECK(rv[static_cast<std::size_t>(ch)] == doctest::Approx(rv_ref[static_cast<std::size_t>(ch)]).epsilon(1e-6));
    }
  }
}

TEST_CASE("batchnorm2d eval mode is a deterministic affine map") {
  Rng rng(22);
  const int c = 2;
  Tensor<float> gamma({c}, {2.0f, 0.5f});
  Tensor<float> beta({c}, {1.0f, -1.0f});
  std::vector<float> rm = {0.5f, -0.25f}, rv = {4.0f, 1.0f};
  auto x = random_tensor<float>({3, 3, c}, rng);
  auto y1 = batchnorm2d(x, gamma, beta, rm, rv, 0.1f, 1e-5f, BnMode::eval);
  auto y2 = batchnorm2d(x, gamma, beta, rm, rv, 0.1f, 1e-5f, BnMode::eval);
  for (std::size_t i = 0; i < static_cast<std::size_t>(x.size()); ++i) {
    CHECK(y1.data()[i] == y2.data()[i]);
    const int ch = static_cast<int>(i % c);
    const float expect = gamma.data()[static_cast<std::size_t>(ch)] *
                             (x.data()[i] - rm[static_cast<std::size_t>(ch)]) /
                             std::sqrt(rv[static_cast<std::size_t>(ch)] + 1e-5f) +
                         beta.data()[static_cast<std::size_t>(ch)];
    CHECK(y1.data()[i] == doctest::Approx(expect).epsilon(1e-6));
  }
  // journal capture leaves running stats untouched
  std::vector<BnStats<float>> journal;
  batchnorm2d(x, gamma, beta, rm, rv, 0.1f, 1e-5f, BnMode::train, &journal);
  CHECK(journal.size() == 1);
  CHECK(rm[0] == 0.5f);
  CHECK(rv[0] == 4.0f);
}

TEST_CASE("backward through a small expression graph") {
  // d/dx sum((x * x) + 3x) = 2x + 3
  Tensor<double> x({3}, {1.0, -2.0, 0.5});
  x.set_requires_grad(true);
  auto y = sum(add(mul(x, x), mul_scalar(x, 3.0)));
  y.backward();
  REQUIRE(x.grad().size() == 3);
  CHECK(x.grad()[0] == doctest::Approx(5.0));
  CHECK(x.grad()[1] == doctest::Approx(-1.0));
  CHECK(x.grad()[2] == doctest::Approx(4.0));
}

TEST_CASE("grad_check: matmul, weighted softmax and constant op") {
  Rng rng(31);
  auto a = random_tensor<double>({3, 3}, rng);
  auto b = random_tensor<double>({3, 3}, rng);
  auto rep = grad_check(
      "sum(matmul(a,b))",
      [](const std::vector<Tensor<double>>& in) { return sum(matmul(in[0], in[1])); }, {a, b},
      1e-4);
  CHECK(rep.passed);
  CHECK(rep.max_rel_error <= rep.tolerance);

  // sum(softmax(x)) is constant, so weight the entries with a fixed random w
  auto x = random_tensor<double>({4, 5}, rng);
  auto w = random_tensor<double>({4, 5}, rng);
  auto rep2 = grad_check(
      "sum(softmax(x) * w)",
      [w](const std::vector<Tensor<double>>& in) { return sum(mul(softmax(in[0], 1), w)); }, {x},
      1e-4);
  CHECK(rep2.passed);

  auto rep3 = grad_check(
      "constant",
      [](const std::vector<Tensor<double>>& in) {
        return sum(mul_scalar(in[0], 0.0));
      },
      {random_tensor<double>({3}, rng)}, 1e-4);
  CHECK(rep3.passed);
  CHECK(rep3.max_rel_error == 0.0);
}

TEST_CASE("grad_check passes for every differentiable primitive on random shapes") {
  Rng rng(41);
  for (int trial = 0; trial < 5; ++trial) {
    const int h = 2 + rng.uniform_int(3), w = 2 + rng.uniform_int(3), c = 1 + rng.uniform_int(3);

    CHECK(grad_check("relu", [](const std::vector<Tensor<double>>& in) { return sum(relu(in[0])); },
                     {random_tensor_off_origin<double>({h, w}, rng)}, 1e-4)
              .passed);
    CHECK(grad_check("sigmoid",
                     [](const std::vector<Tensor<double>>& in) { return sum(sigmoid(in[0])); },
                     {random_tensor<double>({h, w}, rng)}, 1e-4)
              .passed);
    CHECK(grad_check("mean", [](const std::vector<Tensor<double>>& in) { return mean(in[0]); },
                     {random_tensor<double>({h, w, c}, rng)}, 1e-4)
              .passed);
    CHECK(grad_check("add",
                     [](const std::vector<Tensor<double>>& in) { return sum(add(in[0], in[1])); },
                     {random_tensor<double>({h, w}, rng), random_tensor<double>({h, w}, rng)}, 1e-4)
              .passed);
    CHECK(grad_check("mul",
                     [](const std::vector<Tensor<double>>& in) { return sum(mul(in[0], in[1])); },
                     {random_tensor<double>({h, w}, rng), random_tensor<double>({h, w}, rng)}, 1e-4)
              .passed);
    CHECK(grad_check("mul broadcast channel",
                     [](const std::vector<Tensor<double>>& in) { return sum(mul(in[0], in[1])); },
                     {random_tensor<double>({h, w, c}, rng), random_tensor<double>({h, w, 1}, rng)},
                     1e-4)
              .passed);
    CHECK(grad_check("add broadcast bias",
                     [](const std::vector<Tensor<double>>& in) { return sum(add(in[0], in[1])); },
                     {random_tensor<double>({h, w, c}, rng), random_tensor<double>({1, 1, c}, rng)},
                     1e-4)
              .passed);
    CHECK(grad_check("concat",
                     [](const std::vector<Tensor<double>>& in) {
                       return sum(mul(concat(in[0], in[1], 2), concat(in[1], in[0], 2)));
                     },
                     {random_tensor<double>({h, w, c}, rng), random_tensor<double>({h, w, c}, rng)},
                     1e-4)
              .passed);
    CHECK(grad_check("conv2d",
                     [](const std::vector<Tensor<double>>& in) {
                       return sum(conv2d(in[0], in[1], 1, 1));
                     },
                     {random_tensor<double>({h + 2, w + 2, 2}, rng),
                      random_tensor<double>({3, 3, 2, 2}, rng)},
                     1e-4)
              .passed);
    CHECK(grad_check("bilinear_resize",
                     [](const std::vector<Tensor<double>>& in) {
                       return sum(bilinear_resize(in[0], 7, 5));
                     },
                     {random_tensor<double>({h + 1, w + 1, c}, rng)}, 1e-4)
              .passed);
    {
      auto wfix = random_tensor<double>({h, w}, rng);
      CHECK(grad_check("softmax axis0",
                       [wfix](const std::vector<Tensor<double>>& in) {
                         return sum(mul(softmax(in[0], 0), wfix));
                       },
                       {random_tensor<double>({h, w}, rng)}, 1e-4)
                .passed);
    }
    {
      // batchnorm train mode with frozen statistics capture (pure closure)
      Tensor<double> gamma({c}, std::vector<double>(static_cast<std::size_t>(c), 1.0));
      Tensor<double> beta({c}, std::vector<double>(static_cast<std::size_t>(c), 0.0));
      auto x = random_tensor<double>({h, w, c}, rng);
      auto wfix = random_tensor<double>({h, w, c}, rng);
      auto rep = grad_check(
          "batchnorm2d",
          [c, wfix](const std::vector<Tensor<double>>& in) {
            std::vector<double> rm(static_cast<std::size_t>(c), 0.0), rv(static_cast<std::size_t>(c), 1.0);
            std::vector<BnStats<double>> journal;  // keep closure pure
            auto y = batchnorm2d(in[0], in[1], in[2], rm, rv, 0.1, 1e-5, BnMode::train, &journal);
            return sum(mul(y, wfix));
          },
          {x, gamma, beta}, 1e-4);
      CHECK(rep.passed);
    }
    CHECK(grad_check("transpose/reshape",
                     [](const std::vector<Tensor<double>>& in) {
                       return sum(mul(transpose2d(in[0]), transpose2d(in[0])));
                     },
                     {random_tensor<double>({h, w}, rng)}, 1e-4)
              .passed);
    CHECK(grad_check("flip_w",
                     [](const std::vector<Tensor<double>>& in) {
                       return sum(mul(flip_w(in[0]), in[0]));
                     },
                     {random_tensor<double>({h, w, c}, rng)}, 1e-4)
              .passed);
    CHECK(grad_check("clamp/log",
                     [](const std::vector<Tensor<double>>& in) {
                       return sum(log(clamp(in[0], 1e-7, 1.0 - 1e-7)));
                     },
                     {random_tensor<double>({h, w}, rng, 0.2, 0.8)}, 1e-4)
              .passed);
  }
}

TEST_CASE("all values stay finite through public ops on finite inputs") {
  Rng rng(55);
  auto x = random_tensor<float>({6, 6, 3}, rng, -1e3, 1e3);
  CHECK(softmax(x, 2).all_finite());
  CHECK(sigmoid(x).all_finite());
  CHECK(relu(x).all_finite());
  CHECK(bilinear_resize(x, 3, 9).all_finite());
  auto k = random_tensor<float>({3, 3, 3, 2}, rng);
  CHECK(conv2d(x, k, 1, 1).all_finite());
}

TEST_CASE("grad_check reports non-finite gradients") {
  Tensor<double> x({2}, {0.0, 1.0});
  CHECK_THROWS_AS(grad_check("log at zero",
                             [](const std::vector<Tensor<double>>& in) { return sum(log(in[0])); },
                             {x}, 1e-4),
                  ValueError);
}
