#pragma once

#include <cstdint>
#include <string_view>

namespace fsban {

// Counter-based pseudo-random stream. A stream is identified by a 64-bit key
// derived from (seed, label, index...); drawing advances only a counter, so
// streams are cheap to fork and two streams with different labels never
// interact. Every sampler in the project takes an explicit stream, which keeps
// whole runs bit-reproducible and lets independent phases (training episodes,
// validation, evaluation, noise trials) draw without perturbing each other.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed, std::string_view label = "root");

  // Forks a child stream. The child is independent of the parent and of any
  // sibling forked with a different label/index.
  RngStream split(std::string_view label) const;
  RngStream split(std::string_view label, std::uint64_t index) const;

  std::uint64_t next_u64();
  double next_double();  // uniform in [0, 1)
  double next_normal();  // standard normal, Box-Muller

  // Uniform integer in [0, n). n must be > 0.
  std::uint64_t next_below(std::uint64_t n);

  // Number of 64-bit draws consumed so far; usable as a unique per-draw id
  // within this stream.
  std::uint64_t counter() const { return counter_; }

 private:
  RngStream(std::uint64_t key, std::uint64_t counter, bool direct);

  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
  bool has_cached_normal_ = false;
  double cached_normal_ = 0.0;
};

}  // namespace fsban
