#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fsban/rng.hpp"
#include "fsban/tensor.hpp"

namespace fsban {

// Procedural multi-domain classification universe. Every domain owns a
// disjoint set of global classes; each class is a latent gaussian prototype
// rendered through the domain's affine map and a smooth tanh-style warp, with
// per-domain sample noise injected in latent space:
//
//   x = warp(A (m ⊙ p_c + eta) + b),   eta ~ N(0, noise_std^2 I)
//   warp(y) = y + warp_strength * tanh(y)
//
// Each domain's affine map is a blend (1 - domain_blend) * A_common +
// domain_blend * A_own, so domains share rendering structure the way natural
// image domains do: what a model learns about unmixing the common component
// transfers to held-out domains, the domain-specific residual does not.
//
// The latent space is organized into view_count redundant view blocks, and the
// per-sample mask m blanks each view with probability view_dropout (at least
// one view always survives). A blanked view replaces its class content with
// high-energy clutter (noise scaled by view_blank_scale), the way occlusion
// replaces object pixels. Every class is recognizable from any clean view, no
// sample carries all of them, and raw euclidean distances are polluted by the
// clutter blocks, so representations that detect and gate views generalize
// while plain input-space metrics do not. The masking is part of the
// sample-noise channel: noise_std = 0 disables it along with eta.
//
// Rendering a latent class through a *different* domain's transform is exposed
// for diagnostics, which is how the distribution shift between domains is
// measured.

struct DomainSpec {
  int domain_id = 0;
  Tensor affine;          // dim x dim, well conditioned by construction
  Tensor bias;            // dim
  double warp_strength = 0.0;  // >= 0
  double noise_std = 0.0;      // >= 0, latent-space sample noise
};

struct ClassSplit {
  std::vector<int> base;
  std::vector<int> valid;
  std::vector<int> novel;
};

enum class Split { Base, Valid, Novel };

const char* to_string(Split split);
Split split_from_string(const std::string& name);

struct UniverseConfig {
  std::uint64_t seed = 1;
  int n_domains = 4;
  int classes_per_domain = 20;
  int dim = 32;
  int samples_per_class = 40;  // finite per-class pool; episodes draw from it
  int view_count = 4;          // redundant latent view blocks per sample
  double view_dropout = 0.5;   // per-sample probability of blanking a view
  double view_blank_scale = 3.0;  // noise multiplier inside blanked views
  double domain_blend = 0.5;   // 0: all domains render identically, 1: fully independent
  double split_base = 0.5;
  double split_valid = 0.25;
  double split_novel = 0.25;
  double proto_scale = 1.0;
  double warp_min = 0.8;
  double warp_max = 1.6;
  double noise_min = 0.5;
  double noise_max = 0.7;

  bool operator==(const UniverseConfig&) const = default;
};

struct Domain {
  DomainSpec spec;
  std::vector<int> class_ids;  // global ids owned by this domain
  Tensor prototypes;           // classes_per_domain x dim, latent space
  ClassSplit split;
};

// One N-way K-shot task. Support and query rows are grouped by pseudo-label:
// pseudo-label c occupies rows [c*n_shot, (c+1)*n_shot) of the support set and
// [c*n_query, (c+1)*n_query) of the query set. class_map[c] is the global
// class id behind pseudo-label c and is injective. Sample ids encode
// (class, pool index), so support/query disjointness at the raw-sample level
// is checkable by id.
struct Episode {
  Tensor support_x;
  std::vector<int> support_y;
  Tensor query_x;
  std::vector<int> query_y;
  std::vector<int> class_map;
  int domain_id = 0;
  int n_way = 0;
  int n_shot = 0;
  int n_query = 0;
  std::vector<std::uint64_t> support_ids;
  std::vector<std::uint64_t> query_ids;
};

class Universe {
 public:
  Universe() = default;
  Universe(UniverseConfig config, std::vector<Domain> domains)
      : config_(std::move(config)), domains_(std::move(domains)) {}

  const UniverseConfig& config() const { return config_; }
  const std::vector<Domain>& domains() const { return domains_; }
  const Domain& domain(int domain_id) const;
  int dim() const { return config_.dim; }
  int n_domains() const { return static_cast<int>(domains_.size()); }

  const std::vector<int>& split_classes(int domain_id, Split split) const;

  // Renders n samples of a global class through `via`'s transform. `owner` is
  // the domain that owns the class (where its prototype lives).
  Tensor render_class(int global_class, const DomainSpec& via, int n, RngStream& rng) const;

  // The index-th sample of a class's finite pool, rendered through its own
  // domain. Deterministic in (universe seed, class, index); this is what
  // episodes are built from, so every raw sample has a stable identity.
  // Indices at or beyond samples_per_class are valid and deterministic too;
  // episode sampling only uses them for oversized analysis draws.
  std::vector<double> class_sample(int global_class, std::uint32_t index) const;

 private:
  UniverseConfig config_;
  std::vector<Domain> domains_;
};

Universe generate_universe(const UniverseConfig& config);

Episode sample_episode(const Universe& universe, int domain_id, Split split, int n_way, int n_shot,
                       int n_query, RngStream& rng);

// Checks the structural invariants of an episode against the universe; used as
// an assertion hook inside the training loops. Throws on violation.
void validate_episode(const Universe& universe, const Episode& episode, Split expected_split);

// Leave-one-out protocol: all domain ids except the held-out one, plus the
// held-out id itself.
std::pair<std::vector<int>, int> leave_one_out(const Universe& universe, int held_out_domain);

// Versioned binary container. Identical configs produce byte-identical files.
void save_universe(const Universe& universe, const std::string& path);
Universe load_universe(const std::string& path);

}  // namespace fsban
