#include "fsban/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace fsban::linalg {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

Tensor random_orthogonal(std::size_t n, RngStream& rng) {
  // QR of a gaussian matrix by Householder reflections; the Q factor with the
  // R diagonal sign fixed is Haar-distributed.
  std::vector<double> a(n * n);
  for (double& v : a) v = rng.next_normal();

  Tensor q = Tensor::zeros({n, n});
  for (std::size_t i = 0; i < n; ++i) q.data()[i * n + i] = 1.0;

  std::vector<double> house(n);
  for (std::size_t k = 0; k < n; ++k) {
    double norm_x = 0.0;
    for (std::size_t i = k; i < n; ++i) norm_x += a[i * n + k] * a[i * n + k];
    norm_x = std::sqrt(norm_x);
    if (norm_x < 1e-300) continue;
    const double alpha = a[k * n + k] >= 0.0 ? -norm_x : norm_x;
    double vnorm2 = 0.0;
    for (std::size_t i = k; i < n; ++i) {
      house[i] = a[i * n + k] - (i == k ? alpha : 0.0);
      vnorm2 += house[i] * house[i];
    }
    if (vnorm2 < 1e-300) continue;
    const double beta = 2.0 / vnorm2;
    // A <- (I - beta v v^T) A on the trailing block
    for (std::size_t j = k; j < n; ++j) {
      double s = 0.0;
      for (std::size_t i = k; i < n; ++i) s += house[i] * a[i * n + j];
      s *= beta;
      for (std::size_t i = k; i < n; ++i) a[i * n + j] -= s * house[i];
    }
    // Q <- Q (I - beta v v^T)
    double* qd = q.data().data();
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = k; j < n; ++j) s += qd[i * n + j] * house[j];
      s *= beta;
      for (std::size_t j = k; j < n; ++j) qd[i * n + j] -= s * house[j];
    }
  }
  // Fix signs so diag(R) > 0 and the distribution is unambiguous.
  for (std::size_t k = 0; k < n; ++k) {
    if (a[k * n + k] < 0.0) {
      double* qd = q.data().data();
      for (std::size_t i = 0; i < n; ++i) qd[i * n + k] = -qd[i * n + k];
    }
  }
  return q;
}

Tensor cholesky(const Tensor& a) {
  const std::size_t n = a.rows();
  if (a.cols() != n) throw std::invalid_argument("cholesky: square matrix required");
  Tensor l = Tensor::zeros({n, n});
  double* ld = l.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = a.at(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= ld[i * n + k] * ld[j * n + k];
      if (i == j) {
        if (s <= 0.0) throw std::runtime_error("cholesky: matrix not positive definite");
        ld[i * n + i] = std::sqrt(s);
      } else {
        ld[i * n + j] = s / ld[j * n + j];
      }
    }
  }
  return l;
}

std::vector<double> solve_spd(const Tensor& a, std::span<const double> b) {
  const std::size_t n = a.rows();
  if (b.size() != n) throw std::invalid_argument("solve_spd: dimension mismatch");
  Tensor l = cholesky(a);
  const double* ld = l.data().data();
  std::vector<double> y(n), x(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = b[i];
    for (std::size_t k = 0; k < i; ++k) s -= ld[i * n + k] * y[k];
    y[i] = s / ld[i * n + i];
  }
  for (std::size_t ii = n; ii-- > 0;) {
    double s = y[ii];
    for (std::size_t k = ii + 1; k < n; ++k) s -= ld[k * n + ii] * x[k];
    x[ii] = s / ld[ii * n + ii];
  }
  return x;
}

SymmetricEigen eigh(const Tensor& a) {
  const std::size_t n = a.rows();
  if (a.cols() != n) throw std::invalid_argument("eigh: square matrix required");
  std::vector<double> m(a.data().begin(), a.data().end());
  Tensor vecs = Tensor::zeros({n, n});
  double* vd = vecs.data().data();
  for (std::size_t i = 0; i < n; ++i) vd[i * n + i] = 1.0;

  // Cyclic Jacobi sweeps.
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += m[p * n + q] * m[p * n + q];
    if (off < 1e-24) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = m[p * n + q];
        if (std::abs(apq) < 1e-300) continue;
        const double app = m[p * n + p], aqq = m[q * n + q];
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = m[k * n + p], akq = m[k * n + q];
          m[k * n + p] = c * akp - s * akq;
          m[k * n + q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = m[p * n + k], aqk = m[q * n + k];
          m[p * n + k] = c * apk - s * aqk;
          m[q * n + k] = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = vd[k * n + p], vkq = vd[k * n + q];
          vd[k * n + p] = c * vkp - s * vkq;
          vd[k * n + q] = s * vkp + c * vkq;
        }
      }
    }
  }

  SymmetricEigen out;
  out.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.values[i] = m[i * n + i];
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t x, std::size_t y) { return out.values[x] > out.values[y]; });
  std::vector<double> sorted_vals(n);
  Tensor sorted_vecs = Tensor::zeros({n, n});
  for (std::size_t j = 0; j < n; ++j) {
    sorted_vals[j] = out.values[order[j]];
    for (std::size_t i = 0; i < n; ++i) {
      sorted_vecs.data()[i * n + j] = vd[i * n + order[j]];
    }
  }
  out.values = std::move(sorted_vals);
  out.vectors = std::move(sorted_vecs);
  return out;
}

double condition_number(const Tensor& a) {
  const std::size_t n = a.rows();
  Tensor ata = Tensor::zeros({a.cols(), a.cols()});
  for (std::size_t i = 0; i < a.cols(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < n; ++k) s += a.at(k, i) * a.at(k, j);
      ata.data()[i * a.cols() + j] = s;
    }
  SymmetricEigen e = eigh(ata);
  const double lo = e.values.back(), hi = e.values.front();
  if (lo <= 0.0) return std::numeric_limits<double>::infinity();
  return std::sqrt(hi / lo);
}

}  // namespace fsban::linalg
