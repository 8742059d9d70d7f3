#pragma once

#include <span>
#include <vector>

#include "fsban/model.hpp"
#include "fsban/rng.hpp"
#include "fsban/tensor.hpp"
#include "fsban/universe.hpp"

namespace fsban {

struct EpisodeGeometry {
  int n_way = 5;
  int n_shot = 1;
  int n_query = 16;
};

// Accuracy over sampled tasks with a 95% confidence interval
// (1.96 * sample std / sqrt(n_tasks)). Accuracies are percentages.
struct EvalReport {
  double mean_acc = 0.0;
  double ci95 = 0.0;
  int n_tasks = 0;
  std::vector<double> task_acc;
};

struct SeparationReport {
  double r_fc = 0.0;
  double r_hv = 0.0;
  int n_tasks = 0;
};

// Fraction of query samples whose argmax logit matches the pseudo-label.
double episode_accuracy(const ModelParams& model, const Episode& episode);

// Samples n_tasks episodes from (domain, split) and scores them at tau = 1.
EvalReport evaluate(const ModelParams& model, const Universe& universe, int domain, Split split,
                    int n_tasks, const EpisodeGeometry& geometry, RngStream rng);

// Top-score difference: mean over rows of (top1 - mean of the next m-1
// scores). Rows must hold at least m entries.
double tsd(const Tensor& prob_rows, int m);

// Intra-class to inter-class variance ratio of features,
// (n_way / n_query) * sum_ij ||x_ij - mu_i||^2 / sum_i ||mu_i - mu||^2.
// Labels must be balanced.
double r_fc(const Tensor& features, std::span<const int> labels);

// Hyperplane variation: mean over class pairs of ||w_A - w_B|| / (||w_A|| +
// ||w_B||), where w_A, w_B are least-squares linear separators (with bias)
// fitted on two disjoint random halves of each class's samples. This metric
// is a reconstruction: the formula is not published, only its intent
// (sensitivity of separating hyperplanes to data sampling).
double r_hv(const Tensor& features, std::span<const int> labels, RngStream& rng);

struct LdaResult {
  Tensor projection;  // dim x k, unit columns with fixed signs
  Tensor projected;   // rows x k
};

// Fisher LDA directions via the generalized eigenproblem with the
// within-class scatter regularized by 1e-6 * I.
LdaResult lda_project(const Tensor& features, std::span<const int> labels, int k = 2);

// Training accuracy (%) of a one-vs-rest least-squares linear probe on the
// projected features.
double lr_acc(const Tensor& projected, std::span<const int> labels);

struct NoisePoint {
  double noise_std = 0.0;  // in units of the global parameter RMS
  double mean_acc = 0.0;
};

// Accuracy under parameter noise. For each std (expressed in units of the
// model's global weight RMS), every parameter is perturbed by gaussian noise
// of that absolute scale, n_trials times, and the same evaluation tasks are
// scored each time. std_list must be ascending and start at 0, so the first
// point reproduces the unperturbed evaluation exactly.
std::vector<NoisePoint> noise_robustness_sweep(const ModelParams& model, const Universe& universe,
                                               int domain, Split split,
                                               std::span<const double> std_list, int n_trials,
                                               int n_tasks, const EpisodeGeometry& geometry,
                                               const RngStream& rng);

// r_fc / r_hv of encoded query features, averaged over sampled tasks.
SeparationReport separation_report(const ModelParams& model, const Universe& universe, int domain,
                                   Split split, int n_tasks, int n_way, int query_per_class,
                                   RngStream rng);

double global_weight_rms(const ModelParams& model);

}  // namespace fsban
