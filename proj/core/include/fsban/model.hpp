#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fsban/rng.hpp"
#include "fsban/tensor.hpp"
#include "fsban/universe.hpp"

namespace fsban {

enum class HeadKind { Prototypical, Matching, Relation };

const char* to_string(HeadKind kind);
HeadKind head_from_string(const std::string& name);

struct ModelConfig {
  int input_dim = 32;
  int hidden_width = 64;
  int hidden_layers = 2;
  int feature_dim = 64;
  int relation_hidden = 32;
  HeadKind head = HeadKind::Prototypical;

  bool operator==(const ModelConfig&) const = default;
};

// Fully-connected feature encoder: hidden_layers relu layers of hidden_width,
// then a linear projection to feature_dim.
struct EncoderParams {
  std::vector<Tensor> weights;  // layer i: in x out
  std::vector<Tensor> biases;   // layer i: out
  int input_dim = 0;
  int feature_dim = 0;
};

// Comparator for the relation head: 2m -> relation_hidden (relu) -> 1.
struct RelationParams {
  Tensor w1, b1;
  Tensor w2, b2;
};

struct ModelParams {
  ModelConfig config;
  EncoderParams encoder;
  std::optional<RelationParams> relation;  // present iff config.head == Relation

  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
};

ModelParams init_model(const ModelConfig& config, RngStream& rng);

// Copy of `model` whose parameters are watched leaves of `tape`.
ModelParams trace(const ModelParams& model, Tape& tape);

// Feature embeddings, rows(X) x feature_dim. Differentiable when the encoder
// parameters are watched.
Tensor encode(const EncoderParams& encoder, const Tensor& x);
inline Tensor encode(const ModelParams& model, const Tensor& x) {
  return encode(model.encoder, x);
}

// Conditional query logits (n_way*n_query x n_way) for one episode:
//   Prototypical: -||f_q - mu_c||^2 against class-mean support features.
//   Matching:     log of class mass under softmax(cosine) attention from the
//                 query to every support feature.
//   Relation:     comparator score on concat(f_q, mu_c).
Tensor head_logits(const ModelParams& model, const Episode& episode);

// Versioned binary checkpoint with a config echo; round-trips bit-exactly.
void save_checkpoint(const std::string& path, const ModelParams& model,
                     const std::string& config_echo);
struct Checkpoint {
  ModelParams model;
  std::string config_echo;
};
Checkpoint load_checkpoint(const std::string& path);

// FNV-1a over the raw parameter bytes, as a hex string. Stable identifier for
// provenance chaining in result files.
std::string params_checksum(const ModelParams& model);

// True when every parameter tensor of both models is bitwise identical.
bool params_equal(const ModelParams& a, const ModelParams& b);

}  // namespace fsban
