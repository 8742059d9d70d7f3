#include "fsban/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

#include "fsban/linalg.hpp"

namespace fsban {
namespace {

// Class index -> row indices, in first-appearance order of the labels.
std::vector<std::vector<std::size_t>> group_by_class(std::span<const int> labels) {
  std::map<int, std::size_t> index_of;
  std::vector<std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto [it, inserted] = index_of.try_emplace(labels[i], groups.size());
    if (inserted) groups.emplace_back();
    groups[it->second].push_back(i);
  }
  return groups;
}

std::vector<double> class_centroid(const Tensor& features, std::span<const std::size_t> rows) {
  const std::size_t d = features.cols();
  std::vector<double> mu(d, 0.0);
  for (std::size_t r : rows) {
    for (std::size_t j = 0; j < d; ++j) mu[j] += features.at(r, j);
  }
  for (double& v : mu) v /= static_cast<double>(rows.size());
  return mu;
}

// Least-squares fit of [w; b] minimizing ||X w + b - y||^2 with a small ridge.
std::vector<double> fit_linear(const Tensor& features, std::span<const std::size_t> rows,
                               std::span<const double> targets) {
  const std::size_t d = features.cols();
  const std::size_t n = d + 1;
  Tensor normal = Tensor::zeros({n, n});
  std::vector<double> rhs(n, 0.0);
  std::vector<double> xi(n);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const std::size_t r = rows[k];
    for (std::size_t j = 0; j < d; ++j) xi[j] = features.at(r, j);
    xi[d] = 1.0;
    for (std::size_t a = 0; a < n; ++a) {
      for (std::size_t b = 0; b < n; ++b) normal.data()[a * n + b] += xi[a] * xi[b];
      rhs[a] += xi[a] * targets[k];
    }
  }
  for (std::size_t a = 0; a < n; ++a) normal.data()[a * n + a] += 1e-8;
  return linalg::solve_spd(normal, rhs);
}

}  // namespace

double global_weight_rms(const ModelParams& model) {
  double s = 0.0;
  std::size_t n = 0;
  for (const Tensor* p : model.parameters()) {
    for (double v : p->data()) s += v * v;
    n += p->size();
  }
  return n == 0 ? 0.0 : std::sqrt(s / static_cast<double>(n));
}

double episode_accuracy(const ModelParams& model, const Episode& ep) {
  Tensor logits = head_logits(model, ep);
  const std::size_t rows = logits.rows(), cols = logits.cols();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < rows; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < cols; ++j) {
      if (logits.at(i, j) > logits.at(i, best)) best = j;
    }
    if (static_cast<int>(best) == ep.query_y[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(rows);
}

EvalReport evaluate(const ModelParams& model, const Universe& universe, int domain, Split split,
                    int n_tasks, const EpisodeGeometry& geometry, RngStream rng) {
  if (n_tasks < 1) throw std::invalid_argument("evaluate: n_tasks must be >= 1");
  EvalReport report;
  report.n_tasks = n_tasks;
  report.task_acc.reserve(n_tasks);
  for (int t = 0; t < n_tasks; ++t) {
    Episode ep = sample_episode(universe, domain, split, geometry.n_way, geometry.n_shot,
                                geometry.n_query, rng);
    report.task_acc.push_back(100.0 * episode_accuracy(model, ep));
  }
  double mean = 0.0;
  for (double a : report.task_acc) mean += a;
  mean /= report.task_acc.size();
  double var = 0.0;
  for (double a : report.task_acc) var += (a - mean) * (a - mean);
  const double sd = report.task_acc.size() > 1
                        ? std::sqrt(var / static_cast<double>(report.task_acc.size() - 1))
                        : 0.0;
  report.mean_acc = mean;
  report.ci95 = 1.96 * sd / std::sqrt(static_cast<double>(report.task_acc.size()));
  return report;
}

double tsd(const Tensor& prob_rows, int m) {
  if (m < 2) throw std::invalid_argument("tsd: m must be >= 2");
  const std::size_t rows = prob_rows.rows(), cols = prob_rows.cols();
  if (cols < static_cast<std::size_t>(m)) {
    throw std::invalid_argument("tsd: rows have fewer than m entries");
  }
  std::vector<double> row(cols);
  double total = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) row[j] = prob_rows.at(i, j);
    std::partial_sort(row.begin(), row.begin() + m, row.end(), std::greater<double>());
    double runners = 0.0;
    for (int k = 1; k < m; ++k) runners += row[k];
    total += row[0] - runners / static_cast<double>(m - 1);
  }
  return total / static_cast<double>(rows);
}

double r_fc(const Tensor& features, std::span<const int> labels) {
  if (features.rows() != labels.size()) throw std::invalid_argument("r_fc: label count mismatch");
  const auto groups = group_by_class(labels);
  if (groups.size() < 2) throw std::invalid_argument("r_fc: at least two classes required");
  const std::size_t per_class = groups.front().size();
  for (const auto& g : groups) {
    if (g.empty() || g.size() != per_class) {
      throw std::invalid_argument("r_fc: classes must be balanced and non-empty");
    }
  }
  const std::size_t d = features.cols();

  std::vector<std::vector<double>> centroids;
  centroids.reserve(groups.size());
  for (const auto& g : groups) centroids.push_back(class_centroid(features, g));

  std::vector<double> global(d, 0.0);
  for (const auto& mu : centroids) {
    for (std::size_t j = 0; j < d; ++j) global[j] += mu[j];
  }
  for (double& v : global) v /= static_cast<double>(centroids.size());

  double intra = 0.0;
  for (std::size_t c = 0; c < groups.size(); ++c) {
    for (std::size_t r : groups[c]) {
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = features.at(r, j) - centroids[c][j];
        intra += diff * diff;
      }
    }
  }
  double inter = 0.0;
  for (const auto& mu : centroids) {
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = mu[j] - global[j];
      inter += diff * diff;
    }
  }
  if (inter <= 0.0) throw std::runtime_error("r_fc: zero inter-class variance");
  const double ratio = static_cast<double>(groups.size()) / static_cast<double>(per_class);
  return ratio * intra / inter;
}

double r_hv(const Tensor& features, std::span<const int> labels, RngStream& rng) {
  if (features.rows() != labels.size()) throw std::invalid_argument("r_hv: label count mismatch");
  const auto groups = group_by_class(labels);
  if (groups.size() < 2) throw std::invalid_argument("r_hv: at least two classes required");

  // Stratified disjoint halves per class, shuffled by the caller's stream.
  std::vector<std::vector<std::size_t>> half_a(groups.size()), half_b(groups.size());
  for (std::size_t c = 0; c < groups.size(); ++c) {
    std::vector<std::size_t> idx = groups[c];
    for (std::size_t k = idx.size(); k > 1; --k) {
      const std::size_t j = static_cast<std::size_t>(rng.next_below(k));
      std::swap(idx[k - 1], idx[j]);
    }
    const std::size_t half = idx.size() / 2;
    if (half < 2) {
      throw std::invalid_argument("r_hv: need at least 2 samples per class per half-split");
    }
    half_a[c].assign(idx.begin(), idx.begin() + half);
    half_b[c].assign(idx.begin() + half, idx.begin() + 2 * half);
  }

  double total = 0.0;
  std::size_t pairs = 0;
  std::vector<std::size_t> rows;
  std::vector<double> targets;
  auto fit_pair = [&](const std::vector<std::size_t>& pos, const std::vector<std::size_t>& neg) {
    rows.clear();
    targets.clear();
    for (std::size_t r : pos) {
      rows.push_back(r);
      targets.push_back(1.0);
    }
    for (std::size_t r : neg) {
      rows.push_back(r);
      targets.push_back(-1.0);
    }
    return fit_linear(features, rows, targets);
  };
  for (std::size_t i = 0; i < groups.size(); ++i) {
    for (std::size_t j = i + 1; j < groups.size(); ++j) {
      const std::vector<double> wa = fit_pair(half_a[i], half_a[j]);
      const std::vector<double> wb = fit_pair(half_b[i], half_b[j]);
      double diff2 = 0.0;
      for (std::size_t t = 0; t < wa.size(); ++t) diff2 += (wa[t] - wb[t]) * (wa[t] - wb[t]);
      const double na = linalg::norm(wa), nb = linalg::norm(wb);
      total += (na + nb) > 0.0 ? std::sqrt(diff2) / (na + nb) : 0.0;
      ++pairs;
    }
  }
  return total / static_cast<double>(pairs);
}

LdaResult lda_project(const Tensor& features, std::span<const int> labels, int k) {
  if (features.rows() != labels.size()) {
    throw std::invalid_argument("lda_project: label count mismatch");
  }
  const auto groups = group_by_class(labels);
  if (groups.size() < 2) throw std::invalid_argument("lda_project: at least two classes required");
  const std::size_t d = features.cols();
  if (k < 1 || static_cast<std::size_t>(k) > d) {
    throw std::invalid_argument("lda_project: k out of range");
  }

  std::vector<std::vector<double>> centroids;
  centroids.reserve(groups.size());
  for (const auto& g : groups) centroids.push_back(class_centroid(features, g));
  std::vector<double> global(d, 0.0);
  for (std::size_t i = 0; i < features.rows(); ++i) {
    for (std::size_t j = 0; j < d; ++j) global[j] += features.at(i, j);
  }
  for (double& v : global) v /= static_cast<double>(features.rows());

  Tensor sw = Tensor::zeros({d, d});
  for (std::size_t c = 0; c < groups.size(); ++c) {
    for (std::size_t r : groups[c]) {
      for (std::size_t a = 0; a < d; ++a) {
        const double da = features.at(r, a) - centroids[c][a];
        for (std::size_t b = 0; b < d; ++b) {
          sw.data()[a * d + b] += da * (features.at(r, b) - centroids[c][b]);
        }
      }
    }
  }
  for (std::size_t a = 0; a < d; ++a) sw.data()[a * d + a] += 1e-6;

  Tensor sb = Tensor::zeros({d, d});
  for (std::size_t c = 0; c < groups.size(); ++c) {
    const double nc = static_cast<double>(groups[c].size());
    for (std::size_t a = 0; a < d; ++a) {
      const double da = centroids[c][a] - global[a];
      for (std::size_t b = 0; b < d; ++b) {
        sb.data()[a * d + b] += nc * da * (centroids[c][b] - global[b]);
      }
    }
  }

  // Generalized eigenproblem Sb w = lambda Sw w via Cholesky whitening:
  // Sw = L L^T, M = L^-1 Sb L^-T symmetric, w = L^-T u.
  Tensor l = linalg::cholesky(sw);
  const double* ld = l.data().data();
  auto fwd_solve = [&](std::vector<double> b) {
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t t = 0; t < i; ++t) b[i] -= ld[i * d + t] * b[t];
      b[i] /= ld[i * d + i];
    }
    return b;
  };
  auto back_solve = [&](std::vector<double> b) {
    for (std::size_t ii = d; ii-- > 0;) {
      for (std::size_t t = ii + 1; t < d; ++t) b[ii] -= ld[t * d + ii] * b[t];
      b[ii] /= ld[ii * d + ii];
    }
    return b;
  };

  // M = L^-1 Sb L^-T, built column by column.
  Tensor m = Tensor::zeros({d, d});
  std::vector<double> col(d);
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t i = 0; i < d; ++i) col[i] = sb.at(i, j);
    col = fwd_solve(std::move(col));
    for (std::size_t i = 0; i < d; ++i) m.data()[i * d + j] = col[i];
  }
  Tensor mt = Tensor::zeros({d, d});
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) col[j] = m.at(i, j);
    col = fwd_solve(std::move(col));
    for (std::size_t j = 0; j < d; ++j) mt.data()[i * d + j] = col[j];
  }
  // Symmetrize against roundoff.
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = i + 1; j < d; ++j) {
      const double avg = 0.5 * (mt.at(i, j) + mt.at(j, i));
      mt.data()[i * d + j] = avg;
      mt.data()[j * d + i] = avg;
    }
  }

  linalg::SymmetricEigen eig = linalg::eigh(mt);
  for (double v : eig.values) {
    if (!std::isfinite(v)) throw std::runtime_error("lda_project: degenerate scatter");
  }

  LdaResult out;
  out.projection = Tensor::zeros({d, static_cast<std::size_t>(k)});
  for (int j = 0; j < k; ++j) {
    for (std::size_t i = 0; i < d; ++i) col[i] = eig.vectors.at(i, static_cast<std::size_t>(j));
    std::vector<double> w = back_solve(col);
    // Unit norm, sign fixed by the largest-magnitude component.
    const double n = linalg::norm(w);
    if (n <= 0.0) throw std::runtime_error("lda_project: degenerate scatter");
    std::size_t lead = 0;
    for (std::size_t i = 1; i < d; ++i) {
      if (std::abs(w[i]) > std::abs(w[lead])) lead = i;
    }
    const double sign = w[lead] >= 0.0 ? 1.0 : -1.0;
    for (std::size_t i = 0; i < d; ++i) {
      out.projection.data()[i * static_cast<std::size_t>(k) + j] = sign * w[i] / n;
    }
  }
  out.projected = matmul(features, out.projection);
  return out;
}

double lr_acc(const Tensor& projected, std::span<const int> labels) {
  if (projected.rows() != labels.size()) throw std::invalid_argument("lr_acc: label count mismatch");
  const auto groups = group_by_class(labels);
  if (groups.size() < 2) throw std::invalid_argument("lr_acc: at least two classes required");
  const std::size_t n = projected.rows(), d = projected.cols();
  for (std::size_t i = 0; i < n * d; ++i) {
    if (!std::isfinite(projected.at(i))) throw std::invalid_argument("lr_acc: degenerate design matrix");
  }

  // Class index per row, matching group_by_class's first-appearance order.
  std::map<int, std::size_t> class_index;
  std::vector<std::size_t> row_class(n);
  for (std::size_t i = 0; i < n; ++i) {
    row_class[i] = class_index.try_emplace(labels[i], class_index.size()).first->second;
  }

  // Shared normal matrix for all one-vs-rest columns.
  const std::size_t m = d + 1;
  Tensor normal = Tensor::zeros({m, m});
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> xi(m);
    for (std::size_t j = 0; j < d; ++j) xi[j] = projected.at(i, j);
    xi[d] = 1.0;
    for (std::size_t a = 0; a < m; ++a) {
      for (std::size_t b = 0; b < m; ++b) normal.data()[a * m + b] += xi[a] * xi[b];
    }
  }
  for (std::size_t a = 0; a < m; ++a) normal.data()[a * m + a] += 1e-8;

  std::vector<std::vector<double>> weights;
  weights.reserve(groups.size());
  for (std::size_t c = 0; c < groups.size(); ++c) {
    std::vector<double> rhs(m, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      if (row_class[i] != c) continue;
      for (std::size_t j = 0; j < d; ++j) rhs[j] += projected.at(i, j);
      rhs[d] += 1.0;
    }
    weights.push_back(linalg::solve_spd(normal, rhs));
  }

  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    double best_score = -1e300;
    for (std::size_t c = 0; c < weights.size(); ++c) {
      double s = weights[c][d];
      for (std::size_t j = 0; j < d; ++j) s += weights[c][j] * projected.at(i, j);
      if (s > best_score) {
        best_score = s;
        best = c;
      }
    }
    if (best == row_class[i]) ++correct;
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(n);
}

std::vector<NoisePoint> noise_robustness_sweep(const ModelParams& model, const Universe& universe,
                                               int domain, Split split,
                                               std::span<const double> std_list, int n_trials,
                                               int n_tasks, const EpisodeGeometry& geometry,
                                               const RngStream& rng) {
  if (std_list.empty() || std_list.front() != 0.0) {
    throw std::invalid_argument("noise_robustness_sweep: std_list must start at 0");
  }
  for (std::size_t i = 1; i < std_list.size(); ++i) {
    if (std_list[i] < std_list[i - 1]) {
      throw std::invalid_argument("noise_robustness_sweep: std_list must be ascending");
    }
  }
  if (n_trials < 1) throw std::invalid_argument("noise_robustness_sweep: n_trials must be >= 1");

  const double rms = global_weight_rms(model);
  std::vector<NoisePoint> curve;
  curve.reserve(std_list.size());
  for (std::size_t si = 0; si < std_list.size(); ++si) {
    const double abs_std = std_list[si] * rms;
    double acc_sum = 0.0;
    for (int trial = 0; trial < n_trials; ++trial) {
      ModelParams noisy = model;
      if (abs_std > 0.0) {
        RngStream noise = rng.split("noise", si * 1000003ULL + static_cast<std::uint64_t>(trial));
        for (Tensor* p : noisy.parameters()) {
          for (double& v : p->data()) v += abs_std * noise.next_normal();
        }
      }
      // Same task stream for every (std, trial): paired comparison, and the
      // std = 0 point reproduces evaluate() exactly.
      EvalReport rep =
          evaluate(noisy, universe, domain, split, n_tasks, geometry, rng.split("tasks"));
      acc_sum += rep.mean_acc;
    }
    curve.push_back({std_list[si], acc_sum / n_trials});
  }
  return curve;
}

SeparationReport separation_report(const ModelParams& model, const Universe& universe, int domain,
                                   Split split, int n_tasks, int n_way, int query_per_class,
                                   RngStream rng) {
  SeparationReport rep;
  rep.n_tasks = n_tasks;
  double fc = 0.0, hv = 0.0;
  for (int t = 0; t < n_tasks; ++t) {
    Episode ep = sample_episode(universe, domain, split, n_way, 1, query_per_class, rng);
    Tensor features = encode(model, ep.query_x);
    RngStream hv_rng = rng.split("rhv", static_cast<std::uint64_t>(t));
    fc += r_fc(features, ep.query_y);
    hv += r_hv(features, ep.query_y, hv_rng);
  }
  rep.r_fc = fc / n_tasks;
  rep.r_hv = hv / n_tasks;
  return rep;
}

}  // namespace fsban
