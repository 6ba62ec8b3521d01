#pragma once

#include <cstdint>
#include <random>

namespace fedfda {

using Rng = std::mt19937_64;

// Purpose tags separate the random streams of independent stochastic steps.
enum class StreamTag : std::uint64_t {
  model_init = 1,
  gaussian_init,
  participation,
  shuffle,
  kfold,
  dataset,
  lift,
  partition,
  corruption,
  split,
  subsample,
  fine_tune,
  theory,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Seed of the stream keyed by (master seed, purpose, round, client).
inline std::uint64_t stream_seed(std::uint64_t master, StreamTag tag,
                                 std::uint64_t round = 0,
                                 std::uint64_t client = 0) {
  std::uint64_t h = splitmix64(master);
  h = splitmix64(h ^ static_cast<std::uint64_t>(tag));
  h = splitmix64(h ^ round);
  h = splitmix64(h ^ (client + 0x51ed270b27a1f0d3ULL));
  return h;
}

inline Rng make_stream(std::uint64_t master, StreamTag tag,
                       std::uint64_t round = 0, std::uint64_t client = 0) {
  return Rng(stream_seed(master, tag, round, client));
}

}  // namespace fedfda
