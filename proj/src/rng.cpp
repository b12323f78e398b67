#include "circuitbench/rng.hpp"

namespace circuitbench {

double SeededRng::uniform01() {
  return static_cast<double>(next() >> 11) * 0x1.0p-53;
}

float SeededRng::uniform(float lo, float hi) {
  return lo + static_cast<float>(uniform01()) * (hi - lo);
}

std::uint64_t SeededRng::uniform_index(std::uint64_t n) {
  // Accept r in [2^64 mod n, 2^64): a range whose length is a multiple of n.
  const std::uint64_t threshold = (std::uint64_t{0} - n) % n;
  std::uint64_t r = next();
  while (r < threshold) {
    r = next();
  }
  return r % n;
}

std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a64(std::string_view bytes) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view name) noexcept {
  return mix64(global_seed ^ fnv1a64(name));
}

std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view name,
                          std::uint64_t index) noexcept {
  return mix64(derive_seed(global_seed, name) ^ mix64(index));
}

}  // namespace circuitbench
