#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "dfnet/encoder.hpp"
#include "dfnet/nn.hpp"

namespace dfnet {

/// All frames' features stacked into one (N*h*w) x c matrix. Rows are
/// ordered by ascending source frame id, then row-major position, so every
/// reduction over positions runs in a canonical order independent of the
/// order frames were supplied in.
template <typename T>
struct StackedFeatures {
  Tensor<T> tensor;  // (N*h*w) x c
  int n_frames = 0;
  int h = 0, w = 0;
};

/// The K scoring weight vectors, kept as the columns of a c x K matrix.
/// Gradients flow through the scoring product; the values themselves are
/// maintained by the moving-average update, not the optimizer.
template <typename T>
struct ScoringBank {
  Tensor<T> weights;  // c x K
  T momentum_lambda = T(0.5);
  bool train_mode = true;

  ScoringBank() = default;
  ScoringBank(int channels, int k, T lambda, Rng& rng)
      : weights(kaiming_normal<T>({channels, k}, channels, rng)), momentum_lambda(lambda) {
    check_value(lambda >= T(0) && lambda <= T(1), "scoring bank momentum must lie in [0,1]");
    weights.set_requires_grad(true);
  }

  int channels() const { return weights.dim(0); }
  int k() const { return weights.dim(1); }
};

template <typename T>
struct DFeatureSet {
  Tensor<T> features;  // K x c
  int k() const { return features.dim(0); }
  int channels() const { return features.dim(1); }
};

template <typename T>
StackedFeatures<T> stack_features(const std::vector<FeatureMap<T>>& maps) {
  check_value(!maps.empty(), "stack_features: need at least one feature map");
  const int h = maps[0].h(), w = maps[0].w(), c = maps[0].channels();
  for (const auto& m : maps)
    check_shape(m.h() == h && m.w() == w && m.channels() == c,
                "stack_features: mismatched feature map shapes");
  std::vector<const FeatureMap<T>*> order;
  order.reserve(maps.size());
  for (const auto& m : maps) order.push_back(&m);
  std::sort(order.begin(), order.end(), [](const FeatureMap<T>* a, const FeatureMap<T>* b) {
    return a->source_frame < b->source_frame;
  });
  for (std::size_t i = 1; i < order.size(); ++i)
    check_value(order[i]->source_frame != order[i - 1]->source_frame,
                "stack_features: duplicate source frame id " +
                    std::to_string(order[i]->source_frame));
  Tensor<T> stacked = reshape(order[0]->tensor, {h * w, c});
  for (std::size_t i = 1; i < order.size(); ++i)
    stacked = concat(stacked, reshape(order[i]->tensor, {h * w, c}), 0);
  return {stacked, static_cast<int>(maps.size()), h, w};
}

/// Scoring softmax: column k holds softmax over all N*h*w positions of
/// fa . W_k, so each column sums to one.
template <typename T>
Tensor<T> compute_scores(const StackedFeatures<T>& fa, const ScoringBank<T>& bank) {
  check_shape(fa.tensor.dim(1) == bank.channels(),
              "compute_scores: feature channels " + std::to_string(fa.tensor.dim(1)) +
                  " vs bank channels " + std::to_string(bank.channels()));
  return softmax(matmul(fa.tensor, bank.weights), 0);
}

/// D-feature k = sum_i scores[i,k] * fa[i]: a convex combination of the
/// stacked rows, reduced in ascending position order.
template <typename T>
DFeatureSet<T> aggregate_dfeatures(const StackedFeatures<T>& fa, const Tensor<T>& scores) {
  check_shape(scores.rank() == 2 && scores.dim(0) == fa.tensor.dim(0),
              "aggregate_dfeatures: scores " + shape_str(scores.shape()) +
                  " do not cover the stacked rows " + shape_str(fa.tensor.shape()));
  const int rows = scores.dim(0), k = scores.dim(1);
  auto sd = scores.data();
  for (int col = 0; col < k; ++col) {
    double total = 0.0;
    for (int i = 0; i < rows; ++i) total += sd[static_cast<std::size_t>(i) * k + col];
    check_value(std::fabs(total - 1.0) <= 1e-4,
                "aggregate_dfeatures: score column " + std::to_string(col) +
                    " sums to " + std::to_string(total) + ", not 1");
  }
  return {matmul(transpose2d(scores), fa.tensor)};
}

/// Moving-average bank update W_k <- lambda * W_k + (1 - lambda) * d_k,
/// applied to values only (no gradient path). Refused in eval mode, where
/// the bank is frozen.
template <typename T>
void update_scoring_bank(ScoringBank<T>& bank, const DFeatureSet<T>& dfeat) {
  check_value(bank.train_mode, "update_scoring_bank: bank is frozen in eval mode");
  check_shape(dfeat.k() == bank.k() && dfeat.channels() == bank.channels(),
              "update_scoring_bank: D-feature shape " + shape_str(dfeat.features.shape()) +
                  " does not match bank " + shape_str(bank.weights.shape()));
  const T lambda = bank.momentum_lambda;
  auto wd = bank.weights.data_mut();
  auto dd = dfeat.features.data();
  const int c = bank.channels(), k = bank.k();
  for (int ch = 0; ch < c; ++ch)
    for (int col = 0; col < k; ++col)
      wd[static_cast<std::size_t>(ch) * k + col] =
          lambda * wd[static_cast<std::size_t>(ch) * k + col] +
          (T(1) - lambda) * dd[static_cast<std::size_t>(col) * c + ch];
}

/// Barrier update for data-parallel replicas: verifies the replicas are
/// bit-identical, averages the contributed D-features in list order, applies
/// one moving-average update and broadcasts the result to every replica.
template <typename T>
void synchronized_update(const std::vector<ScoringBank<T>*>& replicas,
                         const std::vector<DFeatureSet<T>>& dfeats) {
  check_value(!replicas.empty(), "synchronized_update: no replicas");
  check_value(!dfeats.empty(), "synchronized_update: no D-features contributed");
  ScoringBank<T>& first = *replicas[0];
  for (std::size_t r = 1; r < replicas.size(); ++r) {
    const auto& other = *replicas[r];
    check_value(other.weights.shape() == first.weights.shape() &&
                    std::equal(other.weights.data().begin(), other.weights.data().end(),
                               first.weights.data().begin()) &&
                    other.momentum_lambda == first.momentum_lambda,
                "synchronized_update: replica " + std::to_string(r) +
                    " diverged from replica 0 before the barrier");
  }
  const int k = first.k(), c = first.channels();
  std::vector<T> mean_d(static_cast<std::size_t>(k) * c, T(0));
  for (const auto& d : dfeats) {
    check_shape(d.k() == k && d.channels() == c,
                "synchronized_update: D-feature shape mismatch");
    auto dd = d.features.data();
    for (std::size_t i = 0; i < mean_d.size(); ++i) mean_d[i] += dd[i];
  }
  const T inv = T(1) / static_cast<T>(dfeats.size());
  for (auto& v : mean_d) v *= inv;
  DFeatureSet<T> mean_set{Tensor<T>({k, c}, std::move(mean_d))};
  update_scoring_bank(first, mean_set);
  for (std::size_t r = 1; r < replicas.size(); ++r) {
    auto dst = replicas[r]->weights.data_mut();
    auto src = first.weights.data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

/// Stack, score, aggregate. Bit-for-bit invariant under permutations of the
/// input frame list (row order is canonicalized by frame id).
template <typename T>
DFeatureSet<T> dfm_forward(const std::vector<FeatureMap<T>>& maps, const ScoringBank<T>& bank) {
  const auto stacked = stack_features(maps);
  const auto scores = compute_scores(stacked, bank);
  return aggregate_dfeatures(stacked, scores);
}

}  // namespace dfnet
