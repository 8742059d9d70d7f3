#include "fsban/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace fsban {
namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

// Finalizer from splitmix64; full avalanche on 64 bits.
std::uint64_t mix64(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xBF58476D1CE4E5B9ULL;
  x ^= x >> 27;
  x *= 0x94D049BB133111EBULL;
  x ^= x >> 31;
  return x;
}

std::uint64_t hash_label(std::uint64_t key, std::string_view label) {
  // FNV-1a over the label bytes, folded into the parent key.
  std::uint64_t h = 0xCBF29CE484222325ULL ^ key;
  for (unsigned char c : label) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return mix64(h);
}

}  // namespace

RngStream::RngStream(std::uint64_t seed, std::string_view label)
    : key_(hash_label(mix64(seed + kGolden), label)) {}

RngStream::RngStream(std::uint64_t key, std::uint64_t counter, bool)
    : key_(key), counter_(counter) {}

RngStream RngStream::split(std::string_view label) const {
  return RngStream(hash_label(key_, label), 0, true);
}

RngStream RngStream::split(std::string_view label, std::uint64_t index) const {
  return RngStream(mix64(hash_label(key_, label) + index * kGolden), 0, true);
}

std::uint64_t RngStream::next_u64() {
  return mix64(key_ + (++counter_) * kGolden);
}

double RngStream::next_double() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::next_normal() {
  if (has_cached_normal_) {
    has_cached_normal_ = false;
    return cached_normal_;
  }
  // u1 in (0, 1] so the log is finite.
  const double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
  const double u2 = next_double();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  cached_normal_ = r * std::sin(theta);
  has_cached_normal_ = true;
  return r * std::cos(theta);
}

std::uint64_t RngStream::next_below(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("RngStream::next_below: n must be > 0");
  // Rejection sampling to avoid modulo bias.
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t x = next_u64();
  while (x >= limit) x = next_u64();
  return x % n;
}

}  // namespace fsban
