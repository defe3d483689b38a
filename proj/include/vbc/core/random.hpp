#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace vbc {

//! splitmix64 finalizer, used to derive independent seeds.
inline std::uint64_t
mix_seed(std::uint64_t x)
{
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t
combine_seed(std::uint64_t seed, std::uint64_t value)
{
  return mix_seed(seed ^ mix_seed(value + 0x632be59bd9b4e019ULL));
}

inline std::uint64_t
combine_seed(std::uint64_t seed, std::string_view label)
{
  // FNV-1a over the label, then mixed into the seed
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : label) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return combine_seed(seed, h);
}

//! Seeded random stream. Draws are defined bit-for-bit by the 64-bit
//! Mersenne twister so results do not depend on the standard library's
//! distribution implementations.
class Rng
{
public:
  explicit Rng(std::uint64_t seed)
    : engine_(mix_seed(seed))
  {}

  //! Uniform on [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  //! Uniform on the open interval (0, 1).
  double uniform_open()
  {
    return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
  }

  //! Uniform integer in [0, n), unbiased.
  std::uint64_t below(std::uint64_t n)
  {
    if (n <= 1) {
      return 0;
    }
    const std::uint64_t limit = (~std::uint64_t{ 0 }) - (~std::uint64_t{ 0 }) % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  std::uint64_t next() { return engine_(); }

  //! Sample k distinct indices from [0, n) in draw order (partial
  //! Fisher-Yates). k is clamped to n.
  std::vector<std::size_t> sample_without_replacement(std::size_t n,
                                                      std::size_t k)
  {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) {
      idx[i] = i;
    }
    if (k > n) {
      k = n;
    }
    for (std::size_t i = 0; i < k; ++i) {
      std::size_t j = i + static_cast<std::size_t>(below(n - i));
      std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    return idx;
  }

private:
  std::mt19937_64 engine_;
};

} // namespace vbc
