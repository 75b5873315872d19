#pragma once

#include "dfnet/atm.hpp"

namespace dfnet {

/// Potts compatibility: 0 on the diagonal, 1 elsewhere.
template <typename T>
Tensor<T> make_potts_compat(int k) {
  std::vector<T> data(static_cast<std::size_t>(k) * k, T(1));
  for (int i = 0; i < k; ++i) data[static_cast<std::size_t>(i) * k + i] = T(0);
  return Tensor<T>({k, k}, std::move(data));
}

/// Dense-CRF parameters: two Gaussian kernels (appearance + smoothness) with
/// a label compatibility matrix. Bandwidths are in feature-grid cells
/// (spatial) and [0,1] intensity units (color).
template <typename T>
struct CrfParams {
  int n_iters = 5;
  T w_appearance = T(1.0);
  T w_smoothness = T(0.5);
  T theta_alpha = T(8.0);
  T theta_beta = T(0.1);
  T theta_gamma = T(3.0);
  Tensor<T> compatibility;  // K x K
  bool learn_compat = false;
  int bruteforce_cap = 4096;

  CrfParams() = default;
  CrfParams(int k, bool learn) : compatibility(make_potts_compat<T>(k)), learn_compat(learn) {
    compatibility.set_requires_grad(learn);
  }

  void validate() const {
    check_value(n_iters >= 0, "crf: n_iters must be >= 0");
    check_value(w_appearance >= T(0) && w_smoothness >= T(0), "crf: kernel weights must be >= 0");
    check_value(theta_alpha > T(0) && theta_beta > T(0) && theta_gamma > T(0),
                "crf: bandwidths must be strictly positive");
  }

  /// Potts-style structure check: diagonal never exceeds the off-diagonal.
  /// Holds for the default initialization; learned matrices may drift.
  bool has_potts_structure() const {
    const int k = compatibility.dim(0);
    auto d = compatibility.data();
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < k; ++j)
        if (d[static_cast<std::size_t>(i) * k + i] > d[static_cast<std::size_t>(i) * k + j])
          return false;
    return true;
  }
};

/// The image evidence the pairwise term conditions on, at feature-grid
/// resolution.
template <typename T>
struct Guidance {
  Tensor<T> image;  // h x w x 3 in [0,1]
  int h() const { return image.dim(0); }
  int w() const { return image.dim(1); }
};

/// Downsamples the input image to the h x w feature grid (never up).
template <typename T>
Guidance<T> build_guidance(const Tensor<T>& image, int h, int w) {
  check_shape(image.rank() == 3 && image.dim(2) == 3,
              "build_guidance: expected H x W x 3, got " + shape_str(image.shape()));
  check_value(image.dim(0) >= h && image.dim(1) >= w,
              "build_guidance: refusing to upsample " + shape_str(image.shape()) + " to " +
                  std::to_string(h) + "x" + std::to_string(w));
  if (image.dim(0) == h && image.dim(1) == w) return {image};
  NoGradGuard ng;  // the kernel is constant w.r.t. gradients
  return {bilinear_resize(image, h, w)};
}

/// Brute-force M x M pairwise kernel:
///   k[i,j] = w_app * exp(-|p_i-p_j|^2 / (2 ta^2) - |I_i-I_j|^2 / (2 tb^2))
///          + w_smooth * exp(-|p_i-p_j|^2 / (2 tg^2)),  k[i,i] = 0.
/// Returned detached; message passing treats it as a constant.
template <typename T>
Tensor<T> pairwise_kernel(const Guidance<T>& g, const CrfParams<T>& params) {
  params.validate();
  const int h = g.h(), w = g.w();
  const int m = h * w;
  check_value(m <= params.bruteforce_cap,
              "pairwise_kernel: grid " + std::to_string(m) + " exceeds the brute-force cap " +
                  std::to_string(params.bruteforce_cap));
  const T inv2a = T(1) / (T(2) * params.theta_alpha * params.theta_alpha);
  const T inv2b = T(1) / (T(2) * params.theta_beta * params.theta_beta);
  const T inv2g = T(1) / (T(2) * params.theta_gamma * params.theta_gamma);
  auto img = g.image.data();
  std::vector<T> kern(static_cast<std::size_t>(m) * m, T(0));
  for (int i = 0; i < m; ++i) {
    const int yi = i / w, xi = i % w;
    const T* ci = img.data() + static_cast<std::size_t>(i) * 3;
    for (int j = i + 1; j < m; ++j) {
      const int yj = j / w, xj = j % w;
      const T dy = static_cast<T>(yi - yj), dx = static_cast<T>(xi - xj);
      const T spatial = dy * dy + dx * dx;
      const T* cj = img.data() + static_cast<std::size_t>(j) * 3;
      const T dc0 = ci[0] - cj[0], dc1 = ci[1] - cj[1], dc2 = ci[2] - cj[2];
      const T color = dc0 * dc0 + dc1 * dc1 + dc2 * dc2;
      const T v = params.w_appearance * std::exp(-spatial * inv2a - color * inv2b) +
                  params.w_smoothness * std::exp(-spatial * inv2g);
      kern[static_cast<std::size_t>(i) * m + j] = v;
      kern[static_cast<std::size_t>(j) * m + i] = v;
    }
  }
  return Tensor<T>({m, m}, std::move(kern));
}

/// One mean-field sweep: message m = kernel . q, penalty = m . compat,
/// q' = row-softmax(unary - penalty). Differentiable through q, unary and
/// compat; the kernel is a constant.
template <typename T>
Tensor<T> mean_field_step(const Tensor<T>& q, const Tensor<T>& unary, const Tensor<T>& kernel,
                          const Tensor<T>& compat) {
  check_shape(q.rank() == 2 && unary.shape() == q.shape(),
              "mean_field_step: q " + shape_str(q.shape()) + " vs unary " +
                  shape_str(unary.shape()));
  const int m = q.dim(0), k = q.dim(1);
  check_shape(kernel.rank() == 2 && kernel.dim(0) == m && kernel.dim(1) == m,
              "mean_field_step: kernel " + shape_str(kernel.shape()) + " must be " +
                  std::to_string(m) + "x" + std::to_string(m));
  check_shape(compat.rank() == 2 && compat.dim(0) == k && compat.dim(1) == k,
              "mean_field_step: compatibility " + shape_str(compat.shape()) + " must be " +
                  std::to_string(k) + "x" + std::to_string(k));
  auto qd = q.data();
  for (int i = 0; i < m; ++i) {
    double total = 0.0;
    for (int col = 0; col < k; ++col) total += qd[static_cast<std::size_t>(i) * k + col];
    check_value(std::fabs(total - 1.0) <= 1e-4, "mean_field_step: input row " +
                                                    std::to_string(i) + " sums to " +
                                                    std::to_string(total) + ", not 1");
  }
  auto message = matmul(kernel, q);
  auto penalty = matmul(message, compat);
  return softmax(sub(unary, penalty), 1);
}

/// Unrolled mean-field refinement of an attention map, with unary scores P
/// (higher logit = lower energy). q0 = row-softmax(P); with zero kernel
/// weights every iterate equals row-softmax(P) exactly.
template <typename T>
std::vector<Tensor<T>> refine_attention_trace(const AttentionMap<T>& att, const Guidance<T>& g,
                                              const CrfParams<T>& params) {
  check_shape(g.h() * g.w() == att.m(),
              "refine_attention: guidance grid " + std::to_string(g.h()) + "x" +
                  std::to_string(g.w()) + " does not match " + std::to_string(att.m()) +
                  " attention positions");
  const auto kernel = pairwise_kernel(g, params);
  std::vector<Tensor<T>> trace;
  trace.reserve(static_cast<std::size_t>(params.n_iters) + 1);
  trace.push_back(softmax(att.logits, 1));
  for (int it = 0; it < params.n_iters; ++it)
    trace.push_back(mean_field_step(trace.back(), att.logits, kernel, params.compatibility));
  return trace;
}

template <typename T>
Tensor<T> refine_attention(const AttentionMap<T>& att, const Guidance<T>& g,
                           const CrfParams<T>& params) {
  return refine_attention_trace(att, g, params).back();
}

}  // namespace dfnet
