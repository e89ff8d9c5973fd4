#pragma once

#include <vector>

#include "core/tensor.hpp"

namespace tcaq {

struct LayerError {
  double mse = 0.0;
  double sqnr_db = 0.0;  // +inf when error is exactly zero, -inf for zero signal
};

LayerError layer_error(const Tensor& fp_acts, const Tensor& q_acts);

// Symmetric eigendecomposition by cyclic Jacobi rotations. a is n*n
// row-major and is destroyed; eigenvalues land in evals (unsorted).
void eigh_symmetric(std::vector<double>& a, int n, std::vector<double>& evals);

// Feature-free Frechet moment distance between two sample batches (any
// shape with the batch on dim 0; rows are flattened). Mean/covariance
// formula with the matrix square root taken through the symmetrized product;
// covariances use the 1/n estimator and +1e-6 I regularization.
double fmd(const Tensor& samples_a, const Tensor& samples_b);

// Frechet distance between diagonal Gaussians fitted per timestep; the
// marginal-alignment measure used on small per-timestep batches where a full
// covariance would be rank-deficient.
double diagonal_moment_distance(const Tensor& samples_a, const Tensor& samples_b);

}  // namespace tcaq
