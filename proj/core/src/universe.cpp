#include "fsban/universe.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <set>
#include <stdexcept>
#include <unordered_set>

#include "binary_io.hpp"
#include "fsban/errors.hpp"
#include "fsban/linalg.hpp"

namespace fsban {
namespace {

constexpr std::uint32_t kUniverseMagic = 0x55425346;  // "FSBU"
constexpr std::uint32_t kUniverseVersion = 1;

void apply_warp(std::span<double> x, double strength) {
  if (strength == 0.0) return;
  for (double& v : x) v += strength * std::tanh(v);
}

std::array<int, 3> split_counts(const UniverseConfig& cfg) {
  const double total = cfg.split_base + cfg.split_valid + cfg.split_novel;
  if (std::abs(total - 1.0) > 1e-9 || cfg.split_base < 0 || cfg.split_valid < 0 ||
      cfg.split_novel < 0) {
    throw ConfigError("universe: split fractions must be non-negative and sum to 1");
  }
  const int c = cfg.classes_per_domain;
  std::array<double, 3> want = {cfg.split_base * c, cfg.split_valid * c, cfg.split_novel * c};
  std::array<int, 3> got = {static_cast<int>(want[0]), static_cast<int>(want[1]),
                            static_cast<int>(want[2])};
  int assigned = got[0] + got[1] + got[2];
  // Distribute the remainder by largest fractional part (ties to lower index).
  while (assigned < c) {
    int best = 0;
    double best_frac = -1.0;
    for (int i = 0; i < 3; ++i) {
      const double frac = want[i] - got[i];
      if (frac > best_frac + 1e-12) {
        best_frac = frac;
        best = i;
      }
    }
    ++got[best];
    ++assigned;
  }
  return got;
}

}  // namespace

const char* to_string(Split split) {
  switch (split) {
    case Split::Base: return "base";
    case Split::Valid: return "valid";
    case Split::Novel: return "novel";
  }
  throw std::invalid_argument("unknown split");
}

Split split_from_string(const std::string& name) {
  if (name == "base") return Split::Base;
  if (name == "valid") return Split::Valid;
  if (name == "novel") return Split::Novel;
  throw ConfigError("unknown split name: " + name);
}

const Domain& Universe::domain(int domain_id) const {
  for (const Domain& d : domains_) {
    if (d.spec.domain_id == domain_id) return d;
  }
  throw std::invalid_argument("unknown domain id: " + std::to_string(domain_id));
}

const std::vector<int>& Universe::split_classes(int domain_id, Split split) const {
  const Domain& d = domain(domain_id);
  switch (split) {
    case Split::Base: return d.split.base;
    case Split::Valid: return d.split.valid;
    case Split::Novel: return d.split.novel;
  }
  throw std::invalid_argument("unknown split");
}

namespace {

void render_row(const UniverseConfig& cfg, const DomainSpec& via, const double* proto, int d,
                RngStream& rng, double* row) {
  // Per-sample view mask; masking rides on the noise channel so noise_std = 0
  // keeps samples exactly at their affine-mapped prototype.
  const int views = std::max(1, cfg.view_count);
  std::vector<char> blank(views, 0);
  if (via.noise_std > 0.0 && cfg.view_dropout > 0.0) {
    bool all_blank = true;
    for (int v = 0; v < views; ++v) {
      blank[v] = rng.next_double() < cfg.view_dropout ? 1 : 0;
      all_blank = all_blank && blank[v];
    }
    if (all_blank) {
      blank[static_cast<int>(rng.next_below(static_cast<std::uint64_t>(views)))] = 0;
    }
  }
  std::vector<double> latent(d);
  for (int t = 0; t < d; ++t) {
    const int v = static_cast<int>((static_cast<long long>(t) * views) / d);
    const double sigma = blank[v] ? via.noise_std * cfg.view_blank_scale : via.noise_std;
    latent[t] = (blank[v] ? 0.0 : proto[t]) + sigma * rng.next_normal();
  }
  const double* a = via.affine.data().data();
  for (int i = 0; i < d; ++i) {
    double acc = via.bias.at(static_cast<std::size_t>(i));
    const double* arow = a + static_cast<std::size_t>(i) * d;
    for (int t = 0; t < d; ++t) acc += arow[t] * latent[t];
    row[i] = acc;
  }
  apply_warp({row, static_cast<std::size_t>(d)}, via.warp_strength);
}

}  // namespace

Tensor Universe::render_class(int global_class, const DomainSpec& via, int n,
                              RngStream& rng) const {
  const int owner = global_class / config_.classes_per_domain;
  const int local = global_class % config_.classes_per_domain;
  if (owner < 0 || owner >= n_domains()) {
    throw std::invalid_argument("render_class: unknown class id");
  }
  const Domain& home = domain(owner);
  const int d = config_.dim;
  const double* proto = home.prototypes.data().data() + static_cast<std::size_t>(local) * d;

  Tensor out = Tensor::zeros({static_cast<std::size_t>(n), static_cast<std::size_t>(d)});
  for (int s = 0; s < n; ++s) {
    render_row(config_, via, proto, d, rng, out.data().data() + static_cast<std::size_t>(s) * d);
  }
  return out;
}

std::vector<double> Universe::class_sample(int global_class, std::uint32_t index) const {
  const int owner = global_class / config_.classes_per_domain;
  const int local = global_class % config_.classes_per_domain;
  if (owner < 0 || owner >= n_domains()) {
    throw std::invalid_argument("class_sample: unknown class id");
  }
  const Domain& home = domain(owner);
  const int d = config_.dim;
  const double* proto = home.prototypes.data().data() + static_cast<std::size_t>(local) * d;
  RngStream rng = RngStream(config_.seed, "sample")
                      .split("class", static_cast<std::uint64_t>(global_class))
                      .split("idx", index);
  std::vector<double> row(d);
  render_row(config_, home.spec, proto, d, rng, row.data());
  return row;
}

Universe generate_universe(const UniverseConfig& config) {
  if (config.n_domains < 2) throw ConfigError("universe: n_domains must be >= 2");
  if (config.classes_per_domain < 2) throw ConfigError("universe: classes_per_domain must be >= 2");
  if (config.dim < 1) throw ConfigError("universe: dim must be >= 1");
  if (config.samples_per_class < 2) {
    throw ConfigError("universe: samples_per_class must be >= 2");
  }
  if (config.view_count < 1 || config.view_count > config.dim) {
    throw ConfigError("universe: view_count must be in [1, dim]");
  }
  if (config.view_dropout < 0.0 || config.view_dropout >= 1.0) {
    throw ConfigError("universe: view_dropout must be in [0, 1)");
  }
  if (config.domain_blend < 0.0 || config.domain_blend > 1.0) {
    throw ConfigError("universe: domain_blend must be in [0, 1]");
  }
  if (config.view_blank_scale < 0.0) {
    throw ConfigError("universe: view_blank_scale must be >= 0");
  }
  if (config.warp_min < 0 || config.warp_max < config.warp_min || config.noise_min < 0 ||
      config.noise_max < config.noise_min) {
    throw ConfigError("universe: warp/noise ranges must be non-negative and ordered");
  }
  const auto counts = split_counts(config);
  const std::size_t d = static_cast<std::size_t>(config.dim);

  RngStream root(config.seed, "universe");
  std::vector<Domain> domains;
  domains.reserve(config.n_domains);

  // Shared rendering component blended into every domain's map. Mixing is
  // block-diagonal over the view blocks: views keep their coordinate ranges in
  // input space (the way image patches do), while the content mixing inside a
  // block is what varies by domain.
  auto random_block_affine = [&](RngStream rng_in) {
    Tensor m = Tensor::zeros({d, d});
    const int views = std::max(1, config.view_count);
    for (int v = 0; v < views; ++v) {
      const std::size_t lo = (static_cast<std::size_t>(v) * d) / views;
      const std::size_t hi = (static_cast<std::size_t>(v + 1) * d) / views;
      const std::size_t bs = hi - lo;
      RngStream block_rng = rng_in.split("view", static_cast<std::uint64_t>(v));
      Tensor q1 = linalg::random_orthogonal(bs, block_rng);
      Tensor q2 = linalg::random_orthogonal(bs, block_rng);
      std::vector<double> s(bs);
      for (double& x : s) x = std::exp(std::log(0.5) + block_rng.next_double() * std::log(4.0));
      for (std::size_t r = 0; r < bs; ++r) {
        for (std::size_t c2 = 0; c2 < bs; ++c2) {
          double acc = 0.0;
          for (std::size_t k = 0; k < bs; ++k) acc += q1.at(r, k) * s[k] * q2.at(c2, k);
          m.data()[(lo + r) * d + (lo + c2)] = acc;
        }
      }
    }
    return m;
  };

  RngStream common_rng = root.split("common");
  Tensor common_affine = random_block_affine(common_rng.split("affine"));
  Tensor common_bias;
  {
    std::vector<double> cb(d);
    for (double& v : cb) v = 0.5 * common_rng.next_normal();
    common_bias = Tensor::row(std::move(cb));
  }

  for (int i = 0; i < config.n_domains; ++i) {
    RngStream dr = root.split("domain", static_cast<std::uint64_t>(i));
    Domain dom;
    dom.spec.domain_id = i;

    // Domain map: blend of the shared component with a domain-specific one,
    // both block-diagonal with per-block orthogonal factors and singular
    // values log-uniform in [1/2, 2]. Draws are retried until the blend is
    // well conditioned.
    const double blend = config.domain_blend;
    for (std::uint64_t attempt = 0;; ++attempt) {
      Tensor own = random_block_affine(dr.split("affine", attempt));
      Tensor affine = Tensor::zeros({d, d});
      for (std::size_t r = 0; r < d; ++r) {
        for (std::size_t c = 0; c < d; ++c) {
          affine.data()[r * d + c] =
              (1.0 - blend) * common_affine.at(r, c) + blend * own.at(r, c);
        }
      }
      if (linalg::condition_number(affine) <= 100.0) {
        dom.spec.affine = std::move(affine);
        break;
      }
      if (attempt > 64) throw ConfigError("universe: cannot draw a well-conditioned domain map");
    }

    RngStream bias_rng = dr.split("bias");
    std::vector<double> bias(d);
    for (std::size_t t = 0; t < d; ++t) {
      bias[t] = (1.0 - blend) * common_bias.at(t) + blend * 0.5 * bias_rng.next_normal();
    }
    dom.spec.bias = Tensor::row(std::move(bias));

    RngStream knobs = dr.split("knobs");
    dom.spec.warp_strength =
        config.warp_min + knobs.next_double() * (config.warp_max - config.warp_min);
    dom.spec.noise_std =
        config.noise_min + knobs.next_double() * (config.noise_max - config.noise_min);

    RngStream proto_rng = dr.split("prototypes");
    const std::size_t n_classes = static_cast<std::size_t>(config.classes_per_domain);
    std::vector<double> protos(n_classes * d);
    for (double& v : protos) v = config.proto_scale * proto_rng.next_normal();
    dom.prototypes = Tensor::matrix(n_classes, d, std::move(protos));

    dom.class_ids.resize(n_classes);
    for (std::size_t c = 0; c < n_classes; ++c) {
      dom.class_ids[c] = i * config.classes_per_domain + static_cast<int>(c);
    }

    // Shuffle the domain's classes, then partition into base/valid/novel.
    std::vector<int> shuffled = dom.class_ids;
    RngStream shuffle_rng = dr.split("classsplit");
    for (std::size_t k = shuffled.size(); k > 1; --k) {
      const std::size_t j = static_cast<std::size_t>(shuffle_rng.next_below(k));
      std::swap(shuffled[k - 1], shuffled[j]);
    }
    auto it = shuffled.begin();
    dom.split.base.assign(it, it + counts[0]);
    it += counts[0];
    dom.split.valid.assign(it, it + counts[1]);
    it += counts[1];
    dom.split.novel.assign(it, it + counts[2]);

    domains.push_back(std::move(dom));
  }
  return Universe(config, std::move(domains));
}

Episode sample_episode(const Universe& universe, int domain_id, Split split, int n_way, int n_shot,
                       int n_query, RngStream& rng) {
  if (n_way < 2) throw std::invalid_argument("sample_episode: n_way must be >= 2");
  if (n_shot < 1 || n_query < 1) {
    throw std::invalid_argument("sample_episode: n_shot and n_query must be >= 1");
  }
  const std::vector<int>& pool = universe.split_classes(domain_id, split);
  if (static_cast<int>(pool.size()) < n_way) {
    throw std::invalid_argument("sample_episode: split has fewer classes than n_way");
  }
  const Domain& dom = universe.domain(domain_id);
  const std::size_t d = static_cast<std::size_t>(universe.dim());

  // Partial Fisher-Yates: the selection order doubles as the fresh random
  // pseudo-label assignment for this episode.
  std::vector<int> classes = pool;
  for (int c = 0; c < n_way; ++c) {
    const std::size_t j =
        static_cast<std::size_t>(c) +
        static_cast<std::size_t>(rng.next_below(classes.size() - static_cast<std::size_t>(c)));
    std::swap(classes[static_cast<std::size_t>(c)], classes[j]);
  }
  classes.resize(static_cast<std::size_t>(n_way));

  Episode ep;
  ep.domain_id = domain_id;
  ep.n_way = n_way;
  ep.n_shot = n_shot;
  ep.n_query = n_query;
  ep.class_map = classes;

  const std::size_t support_rows = static_cast<std::size_t>(n_way) * n_shot;
  const std::size_t query_rows = static_cast<std::size_t>(n_way) * n_query;
  ep.support_x = Tensor::zeros({support_rows, d});
  ep.query_x = Tensor::zeros({query_rows, d});
  ep.support_y.reserve(support_rows);
  ep.query_y.reserve(query_rows);
  ep.support_ids.reserve(support_rows);
  ep.query_ids.reserve(query_rows);

  // Distinct pool indices per class: the support and query draws can never
  // share a raw sample. The pool widens automatically for oversized analysis
  // draws (more rows requested than the configured per-class pool).
  const int need = n_shot + n_query;
  const std::uint32_t pool_extent =
      static_cast<std::uint32_t>(std::max(universe.config().samples_per_class, need));
  std::vector<std::vector<std::uint32_t>> picks(n_way);
  for (int c = 0; c < n_way; ++c) {
    std::vector<std::uint32_t> indices(pool_extent);
    for (std::uint32_t i = 0; i < pool_extent; ++i) indices[i] = i;
    for (int k = 0; k < need; ++k) {
      const std::size_t j = static_cast<std::size_t>(k) +
                            static_cast<std::size_t>(rng.next_below(pool_extent - k));
      std::swap(indices[static_cast<std::size_t>(k)], indices[j]);
    }
    indices.resize(static_cast<std::size_t>(need));
    picks[c] = std::move(indices);
  }

  auto sample_id = [](int cls, std::uint32_t index) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(cls)) << 32) | index;
  };
  for (int c = 0; c < n_way; ++c) {
    for (int s = 0; s < n_shot; ++s) {
      const std::uint32_t idx = picks[c][static_cast<std::size_t>(s)];
      const std::vector<double> row = universe.class_sample(classes[c], idx);
      std::copy(row.begin(), row.end(),
                ep.support_x.data().begin() + (static_cast<std::size_t>(c) * n_shot + s) * d);
      ep.support_y.push_back(c);
      ep.support_ids.push_back(sample_id(classes[c], idx));
    }
  }
  for (int c = 0; c < n_way; ++c) {
    for (int q = 0; q < n_query; ++q) {
      const std::uint32_t idx = picks[c][static_cast<std::size_t>(n_shot + q)];
      const std::vector<double> row = universe.class_sample(classes[c], idx);
      std::copy(row.begin(), row.end(),
                ep.query_x.data().begin() + (static_cast<std::size_t>(c) * n_query + q) * d);
      ep.query_y.push_back(c);
      ep.query_ids.push_back(sample_id(classes[c], idx));
    }
  }
  return ep;
}

void validate_episode(const Universe& universe, const Episode& ep, Split expected_split) {
  const std::size_t d = static_cast<std::size_t>(universe.dim());
  const std::size_t support_rows = static_cast<std::size_t>(ep.n_way) * ep.n_shot;
  const std::size_t query_rows = static_cast<std::size_t>(ep.n_way) * ep.n_query;
  if (ep.support_x.rows() != support_rows || ep.support_x.cols() != d ||
      ep.query_x.rows() != query_rows || ep.query_x.cols() != d) {
    throw std::runtime_error("episode: geometry does not match n_way/n_shot/n_query");
  }
  if (ep.support_y.size() != support_rows || ep.query_y.size() != query_rows) {
    throw std::runtime_error("episode: label count mismatch");
  }
  std::vector<int> support_counts(ep.n_way, 0), query_counts(ep.n_way, 0);
  for (int y : ep.support_y) support_counts.at(y)++;
  for (int y : ep.query_y) query_counts.at(y)++;
  for (int c = 0; c < ep.n_way; ++c) {
    if (support_counts[c] != ep.n_shot || query_counts[c] != ep.n_query) {
      throw std::runtime_error("episode: pseudo-label counts are not uniform");
    }
  }
  std::set<int> distinct(ep.class_map.begin(), ep.class_map.end());
  if (distinct.size() != ep.class_map.size()) {
    throw std::runtime_error("episode: class_map is not injective");
  }
  const std::vector<int>& allowed = universe.split_classes(ep.domain_id, expected_split);
  for (int cls : ep.class_map) {
    if (std::find(allowed.begin(), allowed.end(), cls) == allowed.end()) {
      throw std::runtime_error("episode: class outside the expected split");
    }
  }
  std::unordered_set<std::uint64_t> ids(ep.support_ids.begin(), ep.support_ids.end());
  if (ids.size() != ep.support_ids.size()) {
    throw std::runtime_error("episode: duplicate support sample ids");
  }
  for (std::uint64_t id : ep.query_ids) {
    if (!ids.insert(id).second) {
      throw std::runtime_error("episode: support and query share a raw sample");
    }
  }
}

std::pair<std::vector<int>, int> leave_one_out(const Universe& universe, int held_out_domain) {
  if (universe.n_domains() < 2) {
    throw std::invalid_argument("leave_one_out: need at least two domains");
  }
  universe.domain(held_out_domain);  // throws on unknown id
  std::vector<int> seen;
  for (const Domain& d : universe.domains()) {
    if (d.spec.domain_id != held_out_domain) seen.push_back(d.spec.domain_id);
  }
  return {seen, held_out_domain};
}

void save_universe(const Universe& universe, const std::string& path) {
  detail::BinaryWriter w(path);
  w.u32(kUniverseMagic);
  w.u32(kUniverseVersion);
  const UniverseConfig& c = universe.config();
  w.u64(c.seed);
  w.i32(c.n_domains);
  w.i32(c.classes_per_domain);
  w.i32(c.dim);
  w.i32(c.samples_per_class);
  w.i32(c.view_count);
  w.f64(c.view_dropout);
  w.f64(c.view_blank_scale);
  w.f64(c.domain_blend);
  w.f64(c.split_base);
  w.f64(c.split_valid);
  w.f64(c.split_novel);
  w.f64(c.proto_scale);
  w.f64(c.warp_min);
  w.f64(c.warp_max);
  w.f64(c.noise_min);
  w.f64(c.noise_max);
  for (const Domain& d : universe.domains()) {
    w.i32(d.spec.domain_id);
    w.f64(d.spec.warp_strength);
    w.f64(d.spec.noise_std);
    w.doubles(d.spec.affine.data());
    w.doubles(d.spec.bias.data());
    w.doubles(d.prototypes.data());
    w.ints(d.class_ids);
    w.ints(d.split.base);
    w.ints(d.split.valid);
    w.ints(d.split.novel);
  }
  w.close();
}

Universe load_universe(const std::string& path) {
  detail::BinaryReader r(path);
  r.expect_magic(kUniverseMagic, kUniverseVersion, "universe");
  UniverseConfig c;
  c.seed = r.u64();
  c.n_domains = r.i32();
  c.classes_per_domain = r.i32();
  c.dim = r.i32();
  c.samples_per_class = r.i32();
  c.view_count = r.i32();
  c.view_dropout = r.f64();
  c.view_blank_scale = r.f64();
  c.domain_blend = r.f64();
  c.split_base = r.f64();
  c.split_valid = r.f64();
  c.split_novel = r.f64();
  c.proto_scale = r.f64();
  c.warp_min = r.f64();
  c.warp_max = r.f64();
  c.noise_min = r.f64();
  c.noise_max = r.f64();
  if (c.n_domains < 2 || c.classes_per_domain < 2 || c.dim < 1 || c.samples_per_class < 2) {
    throw SchemaError(path + ": implausible universe header");
  }
  const std::size_t d = static_cast<std::size_t>(c.dim);
  std::vector<Domain> domains;
  domains.reserve(c.n_domains);
  for (int i = 0; i < c.n_domains; ++i) {
    Domain dom;
    dom.spec.domain_id = r.i32();
    dom.spec.warp_strength = r.f64();
    dom.spec.noise_std = r.f64();
    std::vector<double> affine = r.doubles();
    std::vector<double> bias = r.doubles();
    std::vector<double> protos = r.doubles();
    if (affine.size() != d * d || bias.size() != d ||
        protos.size() != static_cast<std::size_t>(c.classes_per_domain) * d) {
      throw SchemaError(path + ": domain block has wrong geometry");
    }
    dom.spec.affine = Tensor::matrix(d, d, std::move(affine));
    dom.spec.bias = Tensor::row(std::move(bias));
    dom.prototypes =
        Tensor::matrix(static_cast<std::size_t>(c.classes_per_domain), d, std::move(protos));
    dom.class_ids = r.ints();
    dom.split.base = r.ints();
    dom.split.valid = r.ints();
    dom.split.novel = r.ints();
    if (dom.class_ids.size() != static_cast<std::size_t>(c.classes_per_domain) ||
        dom.split.base.size() + dom.split.valid.size() + dom.split.novel.size() !=
            dom.class_ids.size()) {
      throw SchemaError(path + ": domain class split is inconsistent");
    }
    domains.push_back(std::move(dom));
  }
  r.expect_eof("universe");
  return Universe(c, std::move(domains));
}

}  // namespace fsban
