#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "dfnet/tensor.hpp"

namespace dfnet {

namespace detail {

// Strides of b aligned against the shape of a; broadcast axes get stride 0.
template <typename T>
std::vector<std::int64_t> broadcast_strides(const Tensor<T>& a, const Tensor<T>& b,
                                            const char* op_name) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  check_shape(as.size() == bs.size(),
              std::string(op_name) + ": rank mismatch " + shape_str(as) + " vs " + shape_str(bs));
  std::vector<std::int64_t> stride(bs.size(), 0);
  std::int64_t s = 1;
  for (int i = static_cast<int>(bs.size()) - 1; i >= 0; --i) {
    auto u = static_cast<std::size_t>(i);
    check_shape(bs[u] == as[u] || bs[u] == 1, std::string(op_name) + ": shape " + shape_str(bs) +
                                                  " not broadcastable to " + shape_str(as));
    stride[u] = (bs[u] == 1) ? 0 : s;
    s *= bs[u];
  }
  return stride;
}

// Calls f(flat_a_index, flat_b_index) over every element of shape, where b
// follows the given (possibly zero) strides.
template <typename F>
void for_each_broadcast(const Shape& shape, const std::vector<std::int64_t>& bstride, F&& f) {
  const int rank = static_cast<int>(shape.size());
  std::vector<int> idx(static_cast<std::size_t>(rank), 0);
  std::int64_t boff = 0;
  const std::int64_t total = numel(shape);
  for (std::int64_t ai = 0; ai < total; ++ai) {
    f(ai, boff);
    for (int axis = rank - 1; axis >= 0; --axis) {
      auto u = static_cast<std::size_t>(axis);
      boff += bstride[u];
      if (++idx[u] < shape[u]) break;
      boff -= static_cast<std::int64_t>(shape[u]) * bstride[u];
      idx[u] = 0;
    }
  }
}

template <typename T>
void add_into(std::vector<T>& dst, const std::vector<T>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

/// Elementwise a + b. b may broadcast against a (dims equal or 1), or be a
/// single-element tensor.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  std::vector<T> out(a.data().begin(), a.data().end());
  if (a.shape() == b.shape()) {
    auto bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
    return detail::make_op<T>(a.shape(), std::move(out), {a, b}, [a, b](auto& n) {
      if (a.requires_grad()) {
        a.node()->ensure_grad();
        detail::add_into(a.node()->grad, n.grad);
      }
      if (b.requires_grad()) {
        b.node()->ensure_grad();
        detail::add_into(b.node()->grad, n.grad);
      }
    });
  }
  if (b.size() == 1) {
    const T bv = b.data()[0];
    for (auto& v : out) v += bv;
    return detail::make_op<T>(a.shape(), std::move(out), {a, b}, [a, b](auto& n) {
      if (a.requires_grad()) {
        a.node()->ensure_grad();
        detail::add_into(a.node()->grad, n.grad);
      }
      if (b.requires_grad()) {
        b.node()->ensure_grad();
        T acc = T(0);
        for (T g : n.grad) acc += g;
        b.node()->grad[0] += acc;
      }
    });
  }
  auto bstride = detail::broadcast_strides(a, b, "add");
  auto bd = b.data();
  detail::for_each_broadcast(a.shape(), bstride,
                             [&](std::int64_t ai, std::int64_t bi) { out[ai] += bd[bi]; });
  Shape ashape = a.shape();
  return detail::make_op<T>(a.shape(), std::move(out), {a, b}, [a, b, bstride, ashape](auto& n) {
    if (a.requires_grad()) {
      a.node()->ensure_grad();
      detail::add_into(a.node()->grad, n.grad);
    }
    if (b.requires_grad()) {
      b.node()->ensure_grad();
      auto& bg = b.node()->grad;
      detail::for_each_broadcast(ashape, bstride,
                                 [&](std::int64_t ai, std::int64_t bi) { bg[bi] += n.grad[ai]; });
    }
  });
}

/// Elementwise a * b with the same broadcasting rules as add.
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  std::vector<T> out(a.data().begin(), a.data().end());
  if (a.shape() == b.shape()) {
    auto bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bd[i];
    return detail::make_op<T>(a.shape(), std::move(out), {a, b}, [a, b](auto& n) {
      if (a.requires_grad()) {
        a.node()->ensure_grad();
        auto& ag = a.node()->grad;
        auto bd2 = b.data();
        for (std::size_t i = 0; i < ag.size(); ++i) ag[i] += n.grad[i] * bd2[i];
      }
      if (b.requires_grad()) {
        b.node()->ensure_grad();
        auto& bg = b.node()->grad;
        auto ad = a.data();
        for (std::size_t i = 0; i < bg.size(); ++i) bg[i] += n.grad[i] * ad[i];
      }
    });
  }
  if (b.size() == 1) {
    const T bv = b.data()[0];
    for (auto& v : out) v *= bv;
    return detail::make_op<T>(a.shape(), std::move(out), {a, b}, [a, b, bv](auto& n) {
      if (a.requires_grad()) {
        a.node()->ensure_grad();
        auto& ag = a.node()->grad;
        for (std::size_t i = 0; i < ag.size(); ++i) ag[i] += n.grad[i] * bv;
      }
      if (b.requires_grad()) {
        b.node()->ensure_grad();
        T acc = T(0);
        auto ad = a.data();
        for (std::size_t i = 0; i < ad.size(); ++i) acc += n.grad[i] * ad[i];
        b.node()->grad[0] += acc;
      }
    });
  }
  auto bstride = detail::broadcast_strides(a, b, "mul");
  auto bd = b.data();
  detail::for_each_broadcast(a.shape(), bstride,
                             [&](std::int64_t ai, std::int64_t bi) { out[ai] *= bd[bi]; });
  Shape ashape = a.shape();
  return detail::make_op<T>(a.shape(), std::move(out), {a, b}, [a, b, bstride, ashape](auto& n) {
    auto ad = a.data();
    auto bd2 = b.data();
    if (a.requires_grad()) {
      a.node()->ensure_grad();
      auto& ag = a.node()->grad;
      detail::for_each_broadcast(ashape, bstride, [&](std::int64_t ai, std::int64_t bi) {
        ag[ai] += n.grad[ai] * bd2[bi];
      });
    }
    if (b.requires_grad()) {
      b.node()->ensure_grad();
      auto& bg = b.node()->grad;
      detail::for_each_broadcast(ashape, bstride, [&](std::int64_t ai, std::int64_t bi) {
        bg[bi] += n.grad[ai] * ad[ai];
      });
    }
  });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (auto& v : out) v = -v;
  return detail::make_op<T>(a.shape(), std::move(out), {a}, [a](auto& n) {
    if (!a.requires_grad()) return;
    a.node()->ensure_grad();
    auto& ag = a.node()->grad;
    for (std::size_t i = 0; i < ag.size(); ++i) ag[i] -= n.grad[i];
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return add(a, neg(b));
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (auto& v : out) v += c;
  return detail::make_op<T>(a.shape(), std::move(out), {a}, [a](auto& n) {
    if (!a.requires_grad()) return;
    a.node()->ensure_grad();
    detail::add_into(a.node()->grad, n.grad);
  });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T c) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= c;
  return detail::make_op<T>(a.shape(), std::move(out), {a}, [a, c](auto& n) {
    if (!a.requires_grad()) return;
    a.node()->ensure_grad();
    auto& ag = a.node()->grad;
    for (std::size_t i = 0; i < ag.size(); ++i) ag[i] += n.grad[i] * c;
  });
}

/// c - a, elementwise.
template <typename T>
Tensor<T> rsub_scalar(T c, const Tensor<T>& a) {
  return add_scalar(neg(a), c);
}

template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, T c) { return mul_scalar(a, c); }

// ---------------------------------------------------------------------------
// activations and pointwise math
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (auto& v : out) v = v > T(0) ? v : T(0);
  return detail::make_op<T>(a.shape(), std::move(out), {a}, [a](auto& n) {
    if (!a.requires_grad()) return;
    a.node()->ensure_grad();
    auto& ag = a.node()->grad;
    auto ad = a.data();
    for (std::size_t i = 0; i < ag.size(); ++i) {
      if (ad[i] > T(0)) ag[i] += n.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (auto& v : out) {
    if (v >= T(0)) {
      v = T(1) / (T(1) + std::exp(-v));
    } else {
      T e = std::exp(v);
      v = e / (T(1) + e);
    }
  }
  return detail::make_op<T>(a.shape(), std::move(out), {a}, [a](auto& n) {
    if (!a.requires_grad()) return;
    a.node()->ensure_grad();
    auto& ag = a.node()->grad;
    for (std::size_t i = 0; i < ag.size(); ++i) {
      T y = n.value[i];
      ag[i] += n.grad[i] * y * (T(1) - y);
    }
  });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (auto& v : out) v = std::exp(v);
  return detail::make_op<T>(a.shape(), std::move(out), {a}, [a](auto& n) {
    if (!a.requires_grad()) return;
    a.node()->ensure_grad();
    auto& ag = a.node()->grad;
    for (std::size_t i = 0; i < ag.size(); ++i) ag[i] += n.grad[i] * n.value[i];
  });
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (auto& v : out) v = std::log(v);
  return detail::make_op<T>(a.shape(), std::move(out), {a}, [a](auto& n) {
    if (!a.requires_grad()) return;
    a.node()->ensure_grad();
    auto& ag = a.node()->grad;
    auto ad = a.data();
    for (std::size_t i = 0; i < ag.size(); ++i) ag[i] += n.grad[i] / ad[i];
  });
}

/// Clamp to [lo, hi]; gradient passes only strictly inside the interval.
template <typename T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi) {
  check_value(lo <= hi, "clamp: lo must not exceed hi");
  std::vector<T> out(a.data().begin(), a.data().end());
  for (auto& v : out) v = std::min(std::max(v, lo), hi);
  return detail::make_op<T>(a.shape(), std::move(out), {a}, [a, lo, hi](auto& n) {
    if (!a.requires_grad()) return;
    a.node()->ensure_grad();
    auto& ag = a.node()->grad;
    auto ad = a.data();
    for (std::size_t i = 0; i < ag.size(); ++i) {
      if (ad[i] > lo && ad[i] < hi) ag[i] += n.grad[i];
    }
  });
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape new_shape) {
  check_shape(numel(new_shape) == a.size(), "reshape: cannot view " + shape_str(a.shape()) +
                                                " as " + shape_str(new_shape));
  std::vector<T> out(a.data().begin(), a.data().end());
  return detail::make_op<T>(std::move(new_shape), std::move(out), {a}, [a](auto& n) {
    if (!a.requires_grad()) return;
    a.node()->ensure_grad();
    detail::add_into(a.node()->grad, n.grad);
  });
}

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& a) {
  check_shape(a.rank() == 2, "transpose2d expects a matrix, got " + shape_str(a.shape()));
  const int m = a.dim(0), k = a.dim(1);
  std::vector<T> out(static_cast<std::size_t>(a.size()));
  auto ad = a.data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < k; ++j) out[static_cast<std::size_t>(j) * m + i] = ad[static_cast<std::size_t>(i) * k + j];
  return detail::make_op<T>({k, m}, std::move(out), {a}, [a, m, k](auto& n) {
    if (!a.requires_grad()) return;
    a.node()->ensure_grad();
    auto& ag = a.node()->grad;
    for (int j = 0; j < k; ++j)
      for (int i = 0; i < m; ++i)
        ag[static_cast<std::size_t>(i) * k + j] += n.grad[static_cast<std::size_t>(j) * m + i];
  });
}

/// Concatenates two tensors along the given axis.
template <typename T>
Tensor<T> concat(const Tensor<T>& a, const Tensor<T>& b, int axis) {
  check_shape(a.rank() == b.rank(), "concat: rank mismatch " + shape_str(a.shape()) + " vs " +
                                        shape_str(b.shape()));
  check_value(axis >= 0 && axis < a.rank(), "concat: invalid axis " + std::to_string(axis));
  for (int i = 0; i < a.rank(); ++i) {
    if (i != axis)
      check_shape(a.dim(i) == b.dim(i), "concat: shapes " + shape_str(a.shape()) + " and " +
                                            shape_str(b.shape()) + " differ off-axis");
  }
  Shape out_shape = a.shape();
  out_shape[static_cast<std::size_t>(axis)] += b.dim(axis);

  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= a.dim(i);
  for (int i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
  const std::int64_t an = a.dim(axis) * inner;
  const std::int64_t bn = b.dim(axis) * inner;

  std::vector<T> out(static_cast<std::size_t>(outer * (an + bn)));
  auto ad = a.data();
  auto bd = b.data();
  for (std::int64_t o = 0; o < outer; ++o) {
    std::copy_n(ad.begin() + o * an, an, out.begin() + o * (an + bn));
    std::copy_n(bd.begin() + o * bn, bn, out.begin() + o * (an + bn) + an);
  }
  return detail::make_op<T>(std::move(out_shape), std::move(out), {a, b},
                            [a, b, outer, an, bn](auto& n) {
                              if (a.requires_grad()) {
                                a.node()->ensure_grad();
                                auto& ag = a.node()->grad;
                                for (std::int64_t o = 0; o < outer; ++o)
                                  for (std::int64_t i = 0; i < an; ++i)
                                    ag[static_cast<std::size_t>(o * an + i)] +=
                                        n.grad[static_cast<std::size_t>(o * (an + bn) + i)];
                              }
                              if (b.requires_grad()) {
                                b.node()->ensure_grad();
                                auto& bg = b.node()->grad;
                                for (std::int64_t o = 0; o < outer; ++o)
                                  for (std::int64_t i = 0; i < bn; ++i)
                                    bg[static_cast<std::size_t>(o * bn + i)] +=
                                        n.grad[static_cast<std::size_t>(o * (an + bn) + an + i)];
                              }
                            });
}

/// Reverses the width axis. Rank 2 tensors are treated as h x w, rank 3 as
/// h x w x c.
template <typename T>
Tensor<T> flip_w(const Tensor<T>& a) {
  check_shape(a.rank() == 2 || a.rank() == 3, "flip_w expects h x w or h x w x c");
  const int h = a.dim(0), w = a.dim(1);
  const int c = a.rank() == 3 ? a.dim(2) : 1;
  std::vector<T> out(static_cast<std::size_t>(a.size()));
  auto ad = a.data();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch)
        out[(static_cast<std::size_t>(y) * w + x) * c + ch] =
            ad[(static_cast<std::size_t>(y) * w + (w - 1 - x)) * c + ch];
  return detail::make_op<T>(a.shape(), std::move(out), {a}, [a, h, w, c](auto& n) {
    if (!a.requires_grad()) return;
    a.node()->ensure_grad();
    auto& ag = a.node()->grad;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int ch = 0; ch < c; ++ch)
          ag[(static_cast<std::size_t>(y) * w + (w - 1 - x)) * c + ch] +=
              n.grad[(static_cast<std::size_t>(y) * w + x) * c + ch];
  });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T acc = T(0);
  for (T v : a.data()) acc += v;
  return detail::make_op<T>({1}, {acc}, {a}, [a](auto& n) {
    if (!a.requires_grad()) return;
    a.node()->ensure_grad();
    auto& ag = a.node()->grad;
    const T g = n.grad[0];
    for (auto& v : ag) v += g;
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  const T inv = T(1) / static_cast<T>(a.size());
  T acc = T(0);
  for (T v : a.data()) acc += v;
  acc *= inv;
  return detail::make_op<T>({1}, {acc}, {a}, [a, inv](auto& n) {
    if (!a.requires_grad()) return;
    a.node()->ensure_grad();
    auto& ag = a.node()->grad;
    const T g = n.grad[0] * inv;
    for (auto& v : ag) v += g;
  });
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

/// Matrix product of a (m x k) and b (k x n). Accumulation runs in ascending
/// inner index so results are reproducible bit for bit.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  check_shape(a.rank() == 2 && b.rank() == 2,
              "matmul expects matrices, got " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  check_shape(a.dim(1) == b.dim(0), "matmul: inner dimensions disagree, " + shape_str(a.shape()) +
                                        " x " + shape_str(b.shape()));
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(static_cast<std::size_t>(m) * n, T(0));
  auto ad = a.data();
  auto bd = b.data();
  for (int i = 0; i < m; ++i) {
    T* orow = out.data() + static_cast<std::size_t>(i) * n;
    for (int l = 0; l < k; ++l) {
      const T av = ad[static_cast<std::size_t>(i) * k + l];
      const T* brow = bd.data() + static_cast<std::size_t>(l) * n;
      for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return detail::make_op<T>({m, n}, std::move(out), {a, b}, [a, b, m, k, n](auto& node) {
    auto ad2 = a.data();
    auto bd2 = b.data();
    if (a.requires_grad()) {
      a.node()->ensure_grad();
      auto& ag = a.node()->grad;
      for (int i = 0; i < m; ++i) {
        const T* grow = node.grad.data() + static_cast<std::size_t>(i) * n;
        for (int l = 0; l < k; ++l) {
          const T* brow = bd2.data() + static_cast<std::size_t>(l) * n;
          T acc = T(0);
          for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
          ag[static_cast<std::size_t>(i) * k + l] += acc;
        }
      }
    }
    if (b.requires_grad()) {
      b.node()->ensure_grad();
      auto& bg = b.node()->grad;
      for (int l = 0; l < k; ++l) {
        T* brow = bg.data() + static_cast<std::size_t>(l) * n;
        for (int i = 0; i < m; ++i) {
          const T av = ad2[static_cast<std::size_t>(i) * k + l];
          const T* grow = node.grad.data() + static_cast<std::size_t>(i) * n;
          for (int j = 0; j < n; ++j) brow[j] += av * grow[j];
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// softmax
// ---------------------------------------------------------------------------

/// Numerically stable softmax along one axis. The normalizer is accumulated
/// with compensated summation, which keeps slice sums within a few ulp of 1
/// even in 32-bit mode.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  check_value(axis >= 0 && axis < x.rank(),
              "softmax: invalid axis " + std::to_string(axis) + " for " + shape_str(x.shape()));
  const int n = x.dim(axis);
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= x.dim(i);
  for (int i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);

  std::vector<T> out(static_cast<std::size_t>(x.size()));
  auto xd = x.data();
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t in = 0; in < inner; ++in) {
      const std::int64_t base = o * n * inner + in;
      T mx = xd[static_cast<std::size_t>(base)];
      for (int j = 1; j < n; ++j) mx = std::max(mx, xd[static_cast<std::size_t>(base + j * inner)]);
      // Kahan-compensated normalizer
      T s = T(0), comp = T(0);
      for (int j = 0; j < n; ++j) {
        const T e = std::exp(xd[static_cast<std::size_t>(base + j * inner)] - mx);
        out[static_cast<std::size_t>(base + j * inner)] = e;
        const T y = e - comp;
        const T t = s + y;
        comp = (t - s) - y;
        s = t;
      }
      const T invs = T(1) / s;
      for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(base + j * inner)] *= invs;
    }
  }
  return detail::make_op<T>(x.shape(), std::move(out), {x}, [x, n, outer, inner](auto& node) {
    if (!x.requires_grad()) return;
    x.node()->ensure_grad();
    auto& xg = x.node()->grad;
    for (std::int64_t o = 0; o < outer; ++o) {
      for (std::int64_t in = 0; in < inner; ++in) {
        const std::int64_t base = o * n * inner + in;
        T dot = T(0);
        for (int j = 0; j < n; ++j) {
          const auto k = static_cast<std::size_t>(base + j * inner);
          dot += node.grad[k] * node.value[k];
        }
        for (int j = 0; j < n; ++j) {
          const auto k = static_cast<std::size_t>(base + j * inner);
          xg[k] += node.value[k] * (node.grad[k] - dot);
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

/// 2-d cross correlation. x is h x w x cin, kernel is kh x kw x cin x cout;
/// zero padding, output floor((h + 2p - kh)/stride) + 1 square rule.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel, int stride, int padding) {
  check_shape(x.rank() == 3, "conv2d: input must be h x w x cin, got " + shape_str(x.shape()));
  check_shape(kernel.rank() == 4,
              "conv2d: kernel must be kh x kw x cin x cout, got " + shape_str(kernel.shape()));
  check_value(stride >= 1, "conv2d: stride must be >= 1");
  check_value(padding >= 0, "conv2d: padding must be >= 0");
  const int h = x.dim(0), w = x.dim(1), cin = x.dim(2);
  const int kh = kernel.dim(0), kw = kernel.dim(1), cout = kernel.dim(3);
  check_shape(kernel.dim(2) == cin, "conv2d: kernel cin " + std::to_string(kernel.dim(2)) +
                                        " does not match input cin " + std::to_string(cin));
  check_shape(kh <= h + 2 * padding && kw <= w + 2 * padding,
              "conv2d: kernel " + shape_str(kernel.shape()) + " larger than padded input " +
                  shape_str(x.shape()) + " at padding " + std::to_string(padding));
  const int oh = (h + 2 * padding - kh) / stride + 1;
  const int ow = (w + 2 * padding - kw) / stride + 1;

  std::vector<T> out(static_cast<std::size_t>(oh) * ow * cout, T(0));
  auto xd = x.data();
  auto kd = kernel.data();
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      T* op = out.data() + (static_cast<std::size_t>(oy) * ow + ox) * cout;
      for (int ky = 0; ky < kh; ++ky) {
        const int iy = oy * stride + ky - padding;
        if (iy < 0 || iy >= h) continue;
        for (int kx = 0; kx < kw; ++kx) {
          const int ix = ox * stride + kx - padding;
          if (ix < 0 || ix >= w) continue;
          const T* xp = xd.data() + (static_cast<std::size_t>(iy) * w + ix) * cin;
          const T* kp = kd.data() + (static_cast<std::size_t>(ky) * kw + kx) * cin * cout;
          for (int ci = 0; ci < cin; ++ci) {
            const T xv = xp[ci];
            const T* krow = kp + static_cast<std::size_t>(ci) * cout;
            for (int co = 0; co < cout; ++co) op[co] += xv * krow[co];
          }
        }
      }
    }
  }
  return detail::make_op<T>(
      {oh, ow, cout}, std::move(out), {x, kernel},
      [x, kernel, stride, padding, h, w, cin, kh, kw, cout, oh, ow](auto& node) {
        auto xd2 = x.data();
        auto kd2 = kernel.data();
        const bool gx = x.requires_grad();
        const bool gk = kernel.requires_grad();
        if (gx) x.node()->ensure_grad();
        if (gk) kernel.node()->ensure_grad();
        auto& xg = x.node()->grad;
        auto& kg = kernel.node()->grad;
        for (int oy = 0; oy < oh; ++oy) {
          for (int ox = 0; ox < ow; ++ox) {
            const T* gp = node.grad.data() + (static_cast<std::size_t>(oy) * ow + ox) * cout;
            for (int ky = 0; ky < kh; ++ky) {
              const int iy = oy * stride + ky - padding;
              if (iy < 0 || iy >= h) continue;
              for (int kx = 0; kx < kw; ++kx) {
                const int ix = ox * stride + kx - padding;
                if (ix < 0 || ix >= w) continue;
                const std::size_t xoff = (static_cast<std::size_t>(iy) * w + ix) * cin;
                const std::size_t koff = (static_cast<std::size_t>(ky) * kw + kx) * cin * cout;
                if (gx) {
                  for (int ci = 0; ci < cin; ++ci) {
                    const T* krow = kd2.data() + koff + static_cast<std::size_t>(ci) * cout;
                    T acc = T(0);
                    for (int co = 0; co < cout; ++co) acc += gp[co] * krow[co];
                    xg[xoff + static_cast<std::size_t>(ci)] += acc;
                  }
                }
                if (gk) {
                  for (int ci = 0; ci < cin; ++ci) {
                    const T xv = xd2[xoff + static_cast<std::size_t>(ci)];
                    T* krow = kg.data() + koff + static_cast<std::size_t>(ci) * cout;
                    for (int co = 0; co < cout; ++co) krow[co] += xv * gp[co];
                  }
                }
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// batchnorm2d
// ---------------------------------------------------------------------------

enum class BnMode {
  train,  // batch statistics; running statistics tracked (or journaled)
  eval,   // running statistics as a fixed affine map
  frame,  // batch statistics, nothing tracked (per-frame inference)
};

/// Running-statistic journal entry: batch mean and biased variance of one
/// forward call, recorded for deferred application.
template <typename T>
using BnStats = std::pair<std::vector<T>, std::vector<T>>;

/// Per-channel batch normalization over the spatial axes of an h x w x c
/// tensor. Train mode normalizes with batch statistics and, unless a journal
/// captures them, updates the running statistics in place as
/// running = (1 - momentum) * running + momentum * batch (biased variance).
/// Eval mode applies the running statistics as a fixed affine map.
template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                      std::vector<T>& running_mean, std::vector<T>& running_var, T momentum,
                      T eps, BnMode mode, std::vector<BnStats<T>>* journal = nullptr) {
  check_shape(x.rank() == 3, "batchnorm2d: input must be h x w x c, got " + shape_str(x.shape()));
  const int h = x.dim(0), w = x.dim(1), c = x.dim(2);
  check_shape(gamma.size() == c && beta.size() == c,
              "batchnorm2d: affine parameters must have " + std::to_string(c) + " channels");
  check_shape(static_cast<int>(running_mean.size()) == c &&
                  static_cast<int>(running_var.size()) == c,
              "batchnorm2d: running statistics must have " + std::to_string(c) + " channels");
  const std::int64_t spatial = static_cast<std::int64_t>(h) * w;
  auto xd = x.data();

  std::vector<T> mean_c(static_cast<std::size_t>(c)), var_c(static_cast<std::size_t>(c));
  if (mode != BnMode::eval) {
    for (int ch = 0; ch < c; ++ch) {
      T m = T(0);
      for (std::int64_t i = 0; i < spatial; ++i) m += xd[static_cast<std::size_t>(i * c + ch)];
      m /= static_cast<T>(spatial);
      T v = T(0);
      for (std::int64_t i = 0; i < spatial; ++i) {
        const T d = xd[static_cast<std::size_t>(i * c + ch)] - m;
        v += d * d;
      }
      v /= static_cast<T>(spatial);
      mean_c[static_cast<std::size_t>(ch)] = m;
      var_c[static_cast<std::size_t>(ch)] = v;
    }
    if (mode == BnMode::train) {
      if (journal) {
        journal->push_back({mean_c, var_c});
      } else {
        for (int ch = 0; ch < c; ++ch) {
          auto u = static_cast<std::size_t>(ch);
          running_mean[u] = (T(1) - momentum) * running_mean[u] + momentum * mean_c[u];
          running_var[u] = (T(1) - momentum) * running_var[u] + momentum * var_c[u];
        }
      }
    }
  } else {
    mean_c = running_mean;
    var_c = running_var;
  }

  std::vector<T> inv_std(static_cast<std::size_t>(c));
  for (int ch = 0; ch < c; ++ch)
    inv_std[static_cast<std::size_t>(ch)] =
        T(1) / std::sqrt(var_c[static_cast<std::size_t>(ch)] + eps);

  std::vector<T> xhat(static_cast<std::size_t>(x.size()));
  std::vector<T> out(static_cast<std::size_t>(x.size()));
  auto gd = gamma.data();
  auto bd = beta.data();
  for (std::int64_t i = 0; i < spatial; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      const auto k = static_cast<std::size_t>(i * c + ch);
      const auto u = static_cast<std::size_t>(ch);
      xhat[k] = (xd[k] - mean_c[u]) * inv_std[u];
      out[k] = gd[u] * xhat[k] + bd[u];
    }
  }

  const bool train = (mode != BnMode::eval);  // frame mode also differentiates the statistics
  return detail::make_op<T>(
      x.shape(), std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), spatial, c,
       train](auto& node) {
        auto gd2 = gamma.data();
        if (gamma.requires_grad()) {
          gamma.node()->ensure_grad();
          auto& gg = gamma.node()->grad;
          for (int ch = 0; ch < c; ++ch) {
            T acc = T(0);
            for (std::int64_t i = 0; i < spatial; ++i) {
              const auto k = static_cast<std::size_t>(i * c + ch);
              acc += node.grad[k] * xhat[k];
            }
            gg[static_cast<std::size_t>(ch)] += acc;
          }
        }
        if (beta.requires_grad()) {
          beta.node()->ensure_grad();
          auto& bg = beta.node()->grad;
          for (int ch = 0; ch < c; ++ch) {
            T acc = T(0);
            for (std::int64_t i = 0; i < spatial; ++i)
              acc += node.grad[static_cast<std::size_t>(i * c + ch)];
            bg[static_cast<std::size_t>(ch)] += acc;
          }
        }
        if (!x.requires_grad()) return;
        x.node()->ensure_grad();
        auto& xg = x.node()->grad;
        if (!train) {
          for (std::int64_t i = 0; i < spatial; ++i)
            for (int ch = 0; ch < c; ++ch) {
              const auto k = static_cast<std::size_t>(i * c + ch);
              const auto u = static_cast<std::size_t>(ch);
              xg[k] += node.grad[k] * gd2[u] * inv_std[u];
            }
          return;
        }
        const T n = static_cast<T>(spatial);
        for (int ch = 0; ch < c; ++ch) {
          const auto u = static_cast<std::size_t>(ch);
          T sum_dy = T(0), sum_dy_xhat = T(0);
          for (std::int64_t i = 0; i < spatial; ++i) {
            const auto k = static_cast<std::size_t>(i * c + ch);
            const T dy = node.grad[k] * gd2[u];
            sum_dy += dy;
            sum_dy_xhat += dy * xhat[k];
          }
          const T scale = inv_std[u] / n;
          for (std::int64_t i = 0; i < spatial; ++i) {
            const auto k = static_cast<std::size_t>(i * c + ch);
            const T dy = node.grad[k] * gd2[u];
            xg[k] += scale * (n * dy - sum_dy - xhat[k] * sum_dy_xhat);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// bilinear resize
// ---------------------------------------------------------------------------

/// Bilinear resampling with half-pixel centers and edge clamping. Accepts
/// h x w or h x w x c; resizing to the input size is the identity.
template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, int out_h, int out_w) {
  check_shape(x.rank() == 2 || x.rank() == 3,
              "bilinear_resize expects h x w or h x w x c, got " + shape_str(x.shape()));
  check_value(out_h >= 1 && out_w >= 1, "bilinear_resize: output dims must be positive");
  const int h = x.dim(0), w = x.dim(1);
  const int c = x.rank() == 3 ? x.dim(2) : 1;

  struct Tap {
    int lo, hi;
    T frac;
  };
  auto make_taps = [](int in, int out) {
    std::vector<Tap> taps(static_cast<std::size_t>(out));
    const double scale = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
      double s = (o + 0.5) * scale - 0.5;
      if (s < 0) s = 0;
      if (s > in - 1) s = in - 1;
      const int lo = static_cast<int>(std::floor(s));
      const int hi = std::min(lo + 1, in - 1);
      taps[static_cast<std::size_t>(o)] = {lo, hi, static_cast<T>(s - lo)};
    }
    return taps;
  };
  const auto ty = make_taps(h, out_h);
  const auto tx = make_taps(w, out_w);

  std::vector<T> out(static_cast<std::size_t>(out_h) * out_w * c);
  auto xd = x.data();
  for (int oy = 0; oy < out_h; ++oy) {
    const auto& a = ty[static_cast<std::size_t>(oy)];
    for (int ox = 0; ox < out_w; ++ox) {
      const auto& b = tx[static_cast<std::size_t>(ox)];
      const T w00 = (T(1) - a.frac) * (T(1) - b.frac);
      const T w01 = (T(1) - a.frac) * b.frac;
      const T w10 = a.frac * (T(1) - b.frac);
      const T w11 = a.frac * b.frac;
      for (int ch = 0; ch < c; ++ch) {
        const T v = w00 * xd[(static_cast<std::size_t>(a.lo) * w + b.lo) * c + ch] +
                    w01 * xd[(static_cast<std::size_t>(a.lo) * w + b.hi) * c + ch] +
                    w10 * xd[(static_cast<std::size_t>(a.hi) * w + b.lo) * c + ch] +
                    w11 * xd[(static_cast<std::size_t>(a.hi) * w + b.hi) * c + ch];
        out[(static_cast<std::size_t>(oy) * out_w + ox) * c + ch] = v;
      }
    }
  }
  Shape out_shape = x.rank() == 3 ? Shape{out_h, out_w, c} : Shape{out_h, out_w};
  return detail::make_op<T>(std::move(out_shape), std::move(out), {x},
                            [x, ty, tx, out_h, out_w, w, c](auto& node) {
                              if (!x.requires_grad()) return;
                              x.node()->ensure_grad();
                              auto& xg = x.node()->grad;
                              for (int oy = 0; oy < out_h; ++oy) {
                                const auto& a = ty[static_cast<std::size_t>(oy)];
                                for (int ox = 0; ox < out_w; ++ox) {
                                  const auto& b = tx[static_cast<std::size_t>(ox)];
                                  const T w00 = (T(1) - a.frac) * (T(1) - b.frac);
                                  const T w01 = (T(1) - a.frac) * b.frac;
                                  const T w10 = a.frac * (T(1) - b.frac);
                                  const T w11 = a.frac * b.frac;
                                  for (int ch = 0; ch < c; ++ch) {
                                    const T g = node.grad[(static_cast<std::size_t>(oy) * out_w + ox) * c + ch];
                                    xg[(static_cast<std::size_t>(a.lo) * w + b.lo) * c + ch] += w00 * g;
                                    xg[(static_cast<std::size_t>(a.lo) * w + b.hi) * c + ch] += w01 * g;
                                    xg[(static_cast<std::size_t>(a.hi) * w + b.lo) * c + ch] += w10 * g;
                                    xg[(static_cast<std::size_t>(a.hi) * w + b.hi) * c + ch] += w11 * g;
                                  }
                                }
                              }
                            });
}

}  // namespace dfnet
