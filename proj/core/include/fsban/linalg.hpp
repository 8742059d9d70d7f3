#pragma once

#include <cstddef>
#include <vector>

#include "fsban/rng.hpp"
#include "fsban/tensor.hpp"

namespace fsban::linalg {

// Plain-value dense helpers used by the synthetic data generator and the
// feature diagnostics. None of these participate in autodiff.

// Random orthogonal matrix (Householder QR of a gaussian sample, sign-fixed).
Tensor random_orthogonal(std::size_t n, RngStream& rng);

// Solves A x = b for symmetric positive definite A via Cholesky.
std::vector<double> solve_spd(const Tensor& a, std::span<const double> b);

// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
// Eigenvalues are returned in descending order with matching eigenvectors
// (columns of the returned matrix).
struct SymmetricEigen {
  std::vector<double> values;
  Tensor vectors;  // n x n, column j pairs with values[j]
};
SymmetricEigen eigh(const Tensor& a);

// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
Tensor cholesky(const Tensor& a);

// Condition number estimate via the eigenvalues of A^T A.
double condition_number(const Tensor& a);

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> a);

}  // namespace fsban::linalg
