#pragma once

#include <vector>

#include "core/rng.hpp"
#include "core/tensor.hpp"

namespace tcaq {

// Four-mode procedural 8x8 dataset: horizontal bar, vertical bar, centered
// blob, checkerboard, each with jittered position and intensity. Pixel values
// stay in [-1, 1]. Regenerated from seed; never stored on disk.
struct ToyDataset {
  int n = 0;
  Tensor images;            // [n, 1, 8, 8]
  std::vector<int> modes;   // construction label per sample
  uint64_t seed = 0;
};

ToyDataset generate_dataset(uint64_t seed, int n);

Tensor dataset_batch(const ToyDataset& ds, const std::vector<int>& indices);

}  // namespace tcaq
