#pragma once

#include <cstdint>

namespace scribvox {

// Independent draw purposes. Keying every draw with its purpose keeps the
// streams from colliding when several consumers hash the same voxel index.
enum class RngStream : std::uint64_t {
  scribble_keep = 1,
  geometry_drop = 2,
  geometry_add = 3,
  hint_noise = 4,
  hint_class = 5,
  scene_objects = 6,
  model_init = 7,
  seed_derive = 8,
};

namespace detail {

inline std::uint64_t mix64(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

}  // namespace detail

// Counter-based generator: each draw is a pure function of
// (seed, stream, counter), so per-voxel decisions are independent of
// iteration order and of how many draws other consumers made.
inline std::uint64_t hash_draw(std::uint64_t seed, RngStream stream,
                               std::uint64_t counter) {
  std::uint64_t h = detail::mix64(seed + 0x9e3779b97f4a7c15ULL);
  h = detail::mix64(h ^ (static_cast<std::uint64_t>(stream) *
                         0xff51afd7ed558ccdULL));
  h = detail::mix64(h ^ (counter * 0xc4ceb9fe1a85ec53ULL));
  return h;
}

// Uniform double in [0, 1), 53 mantissa bits of the hash.
inline double uniform_unit(std::uint64_t seed, RngStream stream,
                           std::uint64_t counter) {
  return static_cast<double>(hash_draw(seed, stream, counter) >> 11) *
         0x1.0p-53;
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) {
  return hash_draw(seed, RngStream::seed_derive, salt);
}

// Sequential draws for object placement and weight init, where a natural
// counter (the voxel index) does not exist.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, RngStream stream)
      : seed_(seed), stream_(stream) {}

  std::uint64_t next_u64() { return hash_draw(seed_, stream_, counter_++); }

  double next_unit() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double next_uniform(double lo, double hi) {
    return lo + (hi - lo) * next_unit();
  }

  // Inclusive on both ends. Modulo bias is irrelevant at these range sizes.
  int next_int(int lo, int hi) {
    std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(next_u64() % span);
  }

 private:
  std::uint64_t seed_;
  RngStream stream_;
  std::uint64_t counter_ = 0;
};

}  // namespace scribvox
