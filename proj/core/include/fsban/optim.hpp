#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fsban/tensor.hpp"

namespace fsban {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. Moment buffers are allocated on the first step
// and must shape-match the parameters on every later step. The whole state is
// a copyable value, which makes snapshot/replay of an update trivial.
class AdamState {
 public:
  AdamState() = default;
  explicit AdamState(AdamConfig config) : config_(config) {}

  void step(std::span<Tensor* const> params, std::span<const Tensor> grads);

  std::int64_t step_count() const { return step_count_; }
  const AdamConfig& config() const { return config_; }

 private:
  AdamConfig config_;
  std::int64_t step_count_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

// Convenience wrapper matching the rest of the op-style API.
inline void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads,
                      AdamState& state) {
  state.step(params, grads);
}

}  // namespace fsban
