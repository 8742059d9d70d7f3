#include "fsban/losses.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace fsban {
namespace {

constexpr double kLogClamp = 1e-12;

void check_distribution(const Tensor& p, const char* who) {
  if (p.rank() > 2) throw std::invalid_argument(std::string(who) + ": rank > 2");
  const std::size_t r = p.rows(), c = p.cols();
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double v = p.at(i * c + j);
      if (v < 0.0) throw std::invalid_argument(std::string(who) + ": negative probability");
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-6) {
      throw std::invalid_argument(std::string(who) + ": row does not sum to 1");
    }
  }
}

double clamped_log(double x) { return std::log(x < kLogClamp ? kLogClamp : x); }

}  // namespace

double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double MetaTemperature::tau() const { return softplus(rho); }

MetaTemperature MetaTemperature::from_tau(double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("MetaTemperature: tau must be > 0");
  // Inverse softplus, stable for both small and large tau.
  MetaTemperature t;
  t.rho = tau > 30.0 ? tau : std::log(std::expm1(tau));
  return t;
}

void LossWeights::validate() const {
  if (!(lambda1 > 0.0)) throw std::invalid_argument("LossWeights: lambda1 must be > 0");
  if (lambda2 < 0.0 || lambda3 < 0.0) {
    throw std::invalid_argument("LossWeights: lambda2/lambda3 must be >= 0");
  }
}

Tensor softened_softmax(const Tensor& logits, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("softened_softmax: tau must be > 0");
  return softmax_rows(logits, tau);
}

Tensor cross_entropy(const Tensor& probs, const Tensor& one_hot_targets) {
  check_distribution(probs, "cross_entropy");
  const std::size_t r = probs.rows(), c = probs.cols();
  if (one_hot_targets.rows() != r || one_hot_targets.cols() != c) {
    throw std::invalid_argument("cross_entropy: probs/targets geometry mismatch");
  }
  std::vector<std::size_t> target(r);
  for (std::size_t i = 0; i < r; ++i) {
    int hits = 0;
    for (std::size_t j = 0; j < c; ++j) {
      const double t = one_hot_targets.at(i * c + j);
      if (t == 1.0) {
        target[i] = j;
        ++hits;
      } else if (t != 0.0) {
        throw std::invalid_argument("cross_entropy: targets must be one-hot");
      }
    }
    if (hits != 1) throw std::invalid_argument("cross_entropy: targets must be one-hot");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < r; ++i) total -= clamped_log(probs.at(i * c + target[i]));
  const double inv_rows = 1.0 / static_cast<double>(r);
  return Tape::record_if_active(
      "cross_entropy", {&probs, &one_hot_targets}, Tensor::scalar(total * inv_rows),
      [r, c, inv_rows, target = std::move(target),
       pv = std::vector<double>(probs.data().begin(), probs.data().end())](
          const Tensor& g, std::span<Tensor* const> gi) {
        if (!gi[0]) return;
        const double gv = g.value() * inv_rows;
        double* d = gi[0]->data().data();
        for (std::size_t i = 0; i < r; ++i) {
          const std::size_t j = target[i];
          const double p = pv[i * c + j];
          d[i * c + j] -= gv / (p < kLogClamp ? kLogClamp : p);
        }
      });
}

Tensor js_divergence(const Tensor& p, const Tensor& q) {
  check_distribution(p, "js_divergence");
  check_distribution(q, "js_divergence");
  if (p.rows() != q.rows() || p.cols() != q.cols()) {
    throw std::invalid_argument("js_divergence: geometry mismatch");
  }
  const std::size_t r = p.rows(), c = p.cols();
  const double inv_rows = 1.0 / static_cast<double>(r);
  double total = 0.0;
  for (std::size_t i = 0; i < r * c; ++i) {
    const double pi = p.at(i), qi = q.at(i);
    const double mi = 0.5 * (pi + qi);
    if (pi > 0.0) total += 0.5 * pi * (clamped_log(pi) - clamped_log(mi));
    if (qi > 0.0) total += 0.5 * qi * (clamped_log(qi) - clamped_log(mi));
  }
  return Tape::record_if_active(
      "js_divergence", {&p, &q}, Tensor::scalar(total * inv_rows),
      [r, c, inv_rows, pv = std::vector<double>(p.data().begin(), p.data().end()),
       qv = std::vector<double>(q.data().begin(), q.data().end())](const Tensor& g,
                                                                   std::span<Tensor* const> gi) {
        // dJS/dp_i = 0.5 * log(p_i / m_i); same form for q by symmetry.
        const double gv = g.value() * inv_rows;
        for (std::size_t i = 0; i < r * c; ++i) {
          const double mi = 0.5 * (pv[i] + qv[i]);
          if (gi[0]) {
            gi[0]->data()[i] += gv * 0.5 * (clamped_log(pv[i]) - clamped_log(mi));
          }
          if (gi[1]) {
            gi[1]->data()[i] += gv * 0.5 * (clamped_log(qv[i]) - clamped_log(mi));
          }
        }
      });
}

Tensor ban_loss(const Tensor& student_probs, const Tensor& teacher_probs,
                const Tensor& one_hot_targets, const LossWeights& weights, double tau) {
  weights.validate();
  if (!(tau > 0.0)) throw std::invalid_argument("ban_loss: tau must be > 0");
  Tensor teacher_const = teacher_probs.detached();
  Tensor ce = cross_entropy(student_probs, one_hot_targets);
  Tensor js = js_divergence(student_probs, teacher_const);
  return add(scale(ce, weights.lambda1), scale(js, weights.lambda2 * tau * tau));
}

Tensor mr_loss(const Tensor& student_probs, const Tensor& teacher_probs,
               const LossWeights& weights, double tau) {
  weights.validate();
  if (!(tau > 0.0)) throw std::invalid_argument("mr_loss: tau must be > 0");
  Tensor student_const = student_probs.detached();
  Tensor js = js_divergence(student_const, teacher_probs);
  return scale(js, weights.lambda2 * tau * tau);
}

Tensor mm_loss(const Tensor& student_probs, const Tensor& mismatched_teacher_probs,
               const Tensor& one_hot_targets, const LossWeights& weights, double tau) {
  weights.validate();
  if (!(tau > 0.0)) throw std::invalid_argument("mm_loss: tau must be > 0");
  Tensor teacher_const = mismatched_teacher_probs.detached();
  Tensor ce = cross_entropy(student_probs, one_hot_targets);
  Tensor js = js_divergence(student_probs, teacher_const);
  return add(scale(ce, weights.lambda1), scale(js, weights.lambda3 * tau * tau));
}

double mct_meta_loss(const ModelParams& updated_student, const Episode& episode2) {
  Tensor logits = head_logits(updated_student, episode2);
  Tensor probs = softened_softmax(logits, 1.0);
  Tensor targets = one_hot(episode2.query_y, static_cast<std::size_t>(episode2.n_way));
  return cross_entropy(probs, targets).value();
}

Tensor one_hot(std::span<const int> labels, std::size_t n_classes) {
  std::vector<double> data(labels.size() * n_classes, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= n_classes) {
      throw std::invalid_argument("one_hot: label out of range");
    }
    data[i * n_classes + static_cast<std::size_t>(y)] = 1.0;
  }
  return Tensor::matrix(labels.size(), n_classes, std::move(data));
}

}  // namespace fsban
