#pragma once

#include <cstdint>
#include <random>

namespace gema {

// SplitMix64 finalizer; used to derive independent seeds from (seed, stream).
std::uint64_t mix64(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0);

// Seeded random stream. Identical (seed, stream) pairs give identical
// sequences; distinct stream ids are decorrelated through mix64.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

  std::uint64_t next_u64() { return engine_(); }
  double uniform();                        // [0, 1)
  double uniform(double lo, double hi);    // [lo, hi)
  double normal();                         // N(0, 1)
  double normal(double mean, double sd) { return mean + sd * normal(); }
  std::size_t index(std::size_t n);        // uniform in [0, n)

  // Child stream that does not perturb this one.
  RngStream split(std::uint64_t child) const;

  std::mt19937_64& engine() { return engine_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace gema
