#include "diffusion/dataset.hpp"

#include <algorithm>
#include <cmath>

namespace tcaq {

namespace {
constexpr int kSide = 8;
}

ToyDataset generate_dataset(uint64_t seed, int n) {
  if (n < 1) throw Error("generate_dataset: n must be >= 1");
  ToyDataset ds;
  ds.n = n;
  ds.seed = seed;
  ds.modes.resize(static_cast<size_t>(n));
  ds.images = Tensor({n, 1, kSide, kSide}, 0.0f);
  Rng rng(seed, /*stream=*/0x11);
  auto& img = ds.images.raw_data();
  for (int i = 0; i < n; ++i) {
    const int mode = rng.uniform_int(4);
    ds.modes[static_cast<size_t>(i)] = mode;
    const float fg = rng.uniform(0.55f, 0.95f);
    const float bg = -rng.uniform(0.55f, 0.95f);
    float* p = &img[static_cast<size_t>(i) * kSide * kSide];
    switch (mode) {
      case 0: {  // horizontal bar, two rows
        const int r0 = rng.uniform_int(kSide - 1);
        for (int y = 0; y < kSide; ++y)
          for (int x = 0; x < kSide; ++x)
            p[y * kSide + x] = (y == r0 || y == r0 + 1) ? fg : bg;
        break;
      }
      case 1: {  // vertical bar
        const int c0 = rng.uniform_int(kSide - 1);
        for (int y = 0; y < kSide; ++y)
          for (int x = 0; x < kSide; ++x)
            p[y * kSide + x] = (x == c0 || x == c0 + 1) ? fg : bg;
        break;
      }
      case 2: {  // centered blob with jittered center and width
        const float cx = 3.5f + rng.uniform(-1.5f, 1.5f);
        const float cy = 3.5f + rng.uniform(-1.5f, 1.5f);
        const float sigma = rng.uniform(1.0f, 1.8f);
        for (int y = 0; y < kSide; ++y)
          for (int x = 0; x < kSide; ++x) {
            const float d2 = (static_cast<float>(x) - cx) * (static_cast<float>(x) - cx) +
                             (static_cast<float>(y) - cy) * (static_cast<float>(y) - cy);
            p[y * kSide + x] = bg + (fg - bg) * std::exp(-d2 / (2.0f * sigma * sigma));
          }
        break;
      }
      default: {  // 2x2 checkerboard with random phase
        const int phase = rng.uniform_int(2);
        for (int y = 0; y < kSide; ++y)
          for (int x = 0; x < kSide; ++x)
            p[y * kSide + x] = ((x / 2 + y / 2 + phase) % 2 == 0) ? fg : bg;
        break;
      }
    }
    for (int j = 0; j < kSide * kSide; ++j) {
      p[j] += 0.05f * rng.normal();
      p[j] = std::min(1.0f, std::max(-1.0f, p[j]));
    }
  }
  return ds;
}

Tensor dataset_batch(const ToyDataset& ds, const std::vector<int>& indices) {
  const int b = static_cast<int>(indices.size());
  Tensor out({b, 1, kSide, kSide}, 0.0f);
  auto& o = out.raw_data();
  for (int i = 0; i < b; ++i) {
    const int src = indices[static_cast<size_t>(i)];
    if (src < 0 || src >= ds.n) throw Error("dataset_batch: index out of range");
    std::copy_n(&ds.images.data()[static_cast<size_t>(src) * kSide * kSide], kSide * kSide,
                &o[static_cast<size_t>(i) * kSide * kSide]);
  }
  return out;
}

}  // namespace tcaq
