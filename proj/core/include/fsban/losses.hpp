#pragma once

#include "fsban/model.hpp"
#include "fsban/tensor.hpp"
#include "fsban/universe.hpp"

namespace fsban {

// Learned distillation temperature. The raw scalar rho is the trainable
// quantity; tau = softplus(rho) keeps the temperature strictly positive.
struct MetaTemperature {
  double rho = 0.0;

  double tau() const;
  static MetaTemperature from_tau(double tau);
};

double softplus(double x);

struct LossWeights {
  double lambda1 = 1.0;  // ground-truth cross-entropy; must stay > 0
  double lambda2 = 0.8;  // distillation / mutual-regularization divergence
  double lambda3 = 0.5;  // mismatched-teacher divergence

  void validate() const;
  bool operator==(const LossWeights&) const = default;
};

// Temperature softmax over logit rows; stable, rows sum to 1. tau > 0.
Tensor softened_softmax(const Tensor& logits, double tau);

// Mean over rows of -log p[target]. probs rows must sum to 1, targets must be
// one-hot with matching geometry. Logs are clamped at 1e-12 so one-hot inputs
// stay finite; the raw log op is not clamped.
Tensor cross_entropy(const Tensor& probs, const Tensor& one_hot_targets);

// Jensen-Shannon divergence in nats, averaged over rows; symmetric, bounded by
// ln 2, with 0*log(0) treated as 0.
Tensor js_divergence(const Tensor& p, const Tensor& q);

// lambda1 * CE(targets, student) + lambda2 * tau^2 * JS(student, teacher).
// Teacher probabilities are treated as constants.
Tensor ban_loss(const Tensor& student_probs, const Tensor& teacher_probs,
                const Tensor& one_hot_targets, const LossWeights& weights, double tau);

// lambda2 * tau^2 * JS(student, teacher), with the student side detached so
// the gradient flows to the teacher only.
Tensor mr_loss(const Tensor& student_probs, const Tensor& teacher_probs,
               const LossWeights& weights, double tau);

// lambda1 * CE + lambda3 * tau^2 * JS(student, mismatched teacher).
Tensor mm_loss(const Tensor& student_probs, const Tensor& mismatched_teacher_probs,
               const Tensor& one_hot_targets, const LossWeights& weights, double tau);

// Cross-entropy of the one-step-updated student on the query set of a task
// from another domain, at tau = 1 (the evaluation temperature). Plain value;
// the temperature is meta-learned by finite differences, not by the tape.
double mct_meta_loss(const ModelParams& updated_student, const Episode& episode2);

// One-hot row matrix from pseudo-labels.
Tensor one_hot(std::span<const int> labels, std::size_t n_classes);

}  // namespace fsban
