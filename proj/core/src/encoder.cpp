#include "dfnet/encoder.hpp"

namespace dfnet {

std::vector<FeatureMap<float>> load_features(const std::string& path) {
  Tensor<float> stacked = load_dft1(path);
  if (stacked.rank() != 4)
    throw IoError(path + ": feature files must be rank 4 (N x h x w x c), got rank " +
                  std::to_string(stacked.rank()));
  const int n = stacked.dim(0), h = stacked.dim(1), w = stacked.dim(2), c = stacked.dim(3);
  const std::size_t per = static_cast<std::size_t>(h) * w * c;
  std::vector<FeatureMap<float>> out;
  out.reserve(static_cast<std::size_t>(n));
  auto d = stacked.data();
  for (int i = 0; i < n; ++i) {
    std::vector<float> frame(d.begin() + static_cast<std::ptrdiff_t>(per * static_cast<std::size_t>(i)),
                             d.begin() + static_cast<std::ptrdiff_t>(per * static_cast<std::size_t>(i + 1)));
    out.push_back({Tensor<float>({h, w, c}, std::move(frame)), i});
  }
  return out;
}

}  // namespace dfnet
