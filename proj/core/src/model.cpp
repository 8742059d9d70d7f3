#include "fsban/model.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "binary_io.hpp"
#include "fsban/errors.hpp"

namespace fsban {
namespace {

constexpr std::uint32_t kCheckpointMagic = 0x43425346;  // "FSBC"
constexpr std::uint32_t kCheckpointVersion = 1;

Tensor uniform_fan_in(std::size_t fan_in, std::size_t fan_out, RngStream& rng) {
  // Uniform in [-a, a] with a = sqrt(3 / fan_in), i.e. variance 1 / fan_in.
  const double a = std::sqrt(3.0 / static_cast<double>(fan_in));
  std::vector<double> w(fan_in * fan_out);
  for (double& v : w) v = a * (2.0 * rng.next_double() - 1.0);
  return Tensor::matrix(fan_in, fan_out, std::move(w));
}

}  // namespace

const char* to_string(HeadKind kind) {
  switch (kind) {
    case HeadKind::Prototypical: return "proto";
    case HeadKind::Matching: return "matching";
    case HeadKind::Relation: return "relation";
  }
  throw std::invalid_argument("unknown head kind");
}

HeadKind head_from_string(const std::string& name) {
  if (name == "proto") return HeadKind::Prototypical;
  if (name == "matching") return HeadKind::Matching;
  if (name == "relation") return HeadKind::Relation;
  throw ConfigError("unknown head kind: " + name);
}

std::vector<Tensor*> ModelParams::parameters() {
  std::vector<Tensor*> out;
  for (std::size_t i = 0; i < encoder.weights.size(); ++i) {
    out.push_back(&encoder.weights[i]);
    out.push_back(&encoder.biases[i]);
  }
  if (relation) {
    out.push_back(&relation->w1);
    out.push_back(&relation->b1);
    out.push_back(&relation->w2);
    out.push_back(&relation->b2);
  }
  return out;
}

std::vector<const Tensor*> ModelParams::parameters() const {
  std::vector<const Tensor*> out;
  for (std::size_t i = 0; i < encoder.weights.size(); ++i) {
    out.push_back(&encoder.weights[i]);
    out.push_back(&encoder.biases[i]);
  }
  if (relation) {
    out.push_back(&relation->w1);
    out.push_back(&relation->b1);
    out.push_back(&relation->w2);
    out.push_back(&relation->b2);
  }
  return out;
}

ModelParams init_model(const ModelConfig& config, RngStream& rng) {
  if (config.input_dim < 1 || config.hidden_width < 1 || config.hidden_layers < 0 ||
      config.feature_dim < 1) {
    throw ConfigError("model: dimensions must be positive");
  }
  ModelParams m;
  m.config = config;
  m.encoder.input_dim = config.input_dim;
  m.encoder.feature_dim = config.feature_dim;

  RngStream enc = rng.split("encoder");
  int in = config.input_dim;
  for (int layer = 0; layer < config.hidden_layers; ++layer) {
    m.encoder.weights.push_back(uniform_fan_in(in, config.hidden_width, enc));
    m.encoder.biases.push_back(Tensor::zeros({static_cast<std::size_t>(config.hidden_width)}));
    in = config.hidden_width;
  }
  m.encoder.weights.push_back(uniform_fan_in(in, config.feature_dim, enc));
  m.encoder.biases.push_back(Tensor::zeros({static_cast<std::size_t>(config.feature_dim)}));

  if (config.head == HeadKind::Relation) {
    RngStream rel = rng.split("relation");
    RelationParams r;
    r.w1 = uniform_fan_in(2 * config.feature_dim, config.relation_hidden, rel);
    r.b1 = Tensor::zeros({static_cast<std::size_t>(config.relation_hidden)});
    r.w2 = uniform_fan_in(config.relation_hidden, 1, rel);
    r.b2 = Tensor::zeros({1});
    m.relation = std::move(r);
  }
  return m;
}

ModelParams trace(const ModelParams& model, Tape& tape) {
  ModelParams traced = model;
  for (Tensor* p : traced.parameters()) *p = tape.watch(*p);
  return traced;
}

Tensor encode(const EncoderParams& encoder, const Tensor& x) {
  if (x.cols() != static_cast<std::size_t>(encoder.input_dim)) {
    throw std::invalid_argument("encode: input has " + std::to_string(x.cols()) +
                                " columns, encoder expects " + std::to_string(encoder.input_dim));
  }
  Tensor h = x;
  const std::size_t n_layers = encoder.weights.size();
  for (std::size_t i = 0; i < n_layers; ++i) {
    Tensor bias_row = encoder.biases[i];
    h = add_bias(matmul(h, encoder.weights[i]), bias_row);
    if (i + 1 < n_layers) h = relu(h);
  }
  return h;
}

Tensor head_logits(const ModelParams& model, const Episode& ep) {
  const std::size_t n_way = static_cast<std::size_t>(ep.n_way);
  const std::size_t query_rows = static_cast<std::size_t>(ep.n_way) * ep.n_query;

  Tensor support_f = encode(model.encoder, ep.support_x);
  Tensor query_f = encode(model.encoder, ep.query_x);

  switch (model.config.head) {
    case HeadKind::Prototypical: {
      // Distances are averaged over feature coordinates so the logit scale is
      // insensitive to the feature width and the softmax temperature bites.
      Tensor protos = mean_pool_rows(support_f, static_cast<std::size_t>(ep.n_shot));
      return scale(pairwise_sq_dist(query_f, protos),
                   -1.0 / static_cast<double>(model.config.feature_dim));
    }
    case HeadKind::Matching: {
      Tensor attention = cosine_similarity(query_f, support_f);
      Tensor weights = softmax_rows(attention, 1.0);
      Tensor mass = sum_pool_cols(weights, static_cast<std::size_t>(ep.n_shot));
      return log(mass);
    }
    case HeadKind::Relation: {
      if (!model.relation) throw std::invalid_argument("head_logits: missing relation comparator");
      Tensor protos = mean_pool_rows(support_f, static_cast<std::size_t>(ep.n_shot));
      Tensor left = repeat_rows(query_f, n_way);
      Tensor right = tile_rows(protos, query_rows);
      Tensor pairs = concat(left, right, 1);
      Tensor h = relu(add_bias(matmul(pairs, model.relation->w1), model.relation->b1));
      Tensor score = add_bias(matmul(h, model.relation->w2), model.relation->b2);
      return reshape(score, {query_rows, n_way});
    }
  }
  throw std::invalid_argument("head_logits: unknown head kind");
}

void save_checkpoint(const std::string& path, const ModelParams& model,
                     const std::string& config_echo) {
  detail::BinaryWriter w(path);
  w.u32(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.str(config_echo);
  const ModelConfig& c = model.config;
  w.i32(c.input_dim);
  w.i32(c.hidden_width);
  w.i32(c.hidden_layers);
  w.i32(c.feature_dim);
  w.i32(c.relation_hidden);
  w.str(to_string(c.head));
  const auto params = model.parameters();
  w.u64(params.size());
  for (const Tensor* p : params) {
    w.u64(p->rank());
    for (std::size_t e : p->shape()) w.u64(e);
    w.doubles(p->data());
  }
  w.close();
}

Checkpoint load_checkpoint(const std::string& path) {
  detail::BinaryReader r(path);
  r.expect_magic(kCheckpointMagic, kCheckpointVersion, "checkpoint");
  Checkpoint out;
  out.config_echo = r.str();
  ModelConfig c;
  c.input_dim = r.i32();
  c.hidden_width = r.i32();
  c.hidden_layers = r.i32();
  c.feature_dim = r.i32();
  c.relation_hidden = r.i32();
  c.head = head_from_string(r.str());

  // Rebuild the parameter skeleton, then overwrite every tensor from the file.
  RngStream scratch(0, "checkpoint-skeleton");
  out.model = init_model(c, scratch);
  const auto params = out.model.parameters();
  const std::uint64_t count = r.u64();
  if (count != params.size()) throw SchemaError(path + ": parameter count mismatch");
  for (Tensor* p : params) {
    const std::uint64_t rank = r.u64();
    if (rank > 2) throw SchemaError(path + ": implausible tensor rank");
    Shape shape(rank);
    for (auto& e : shape) e = r.u64();
    std::vector<double> data = r.doubles();
    Tensor loaded(shape, std::move(data));
    if (loaded.shape() != p->shape()) throw SchemaError(path + ": tensor shape mismatch");
    *p = std::move(loaded);
  }
  r.expect_eof("checkpoint");
  return out;
}

std::string params_checksum(const ModelParams& model) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  auto eat = [&h](const void* ptr, std::size_t n) {
    const unsigned char* p = static_cast<const unsigned char*>(ptr);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 0x100000001B3ULL;
    }
  };
  for (const Tensor* p : model.parameters()) {
    eat(p->data().data(), p->size() * sizeof(double));
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

bool params_equal(const ModelParams& a, const ModelParams& b) {
  const auto pa = a.parameters();
  const auto pb = b.parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i]->shape() != pb[i]->shape()) return false;
    if (std::memcmp(pa[i]->data().data(), pb[i]->data().data(),
                    pa[i]->size() * sizeof(double)) != 0) {
      return false;
    }
  }
  return true;
}

}  // namespace fsban
