// SPDX-License-Identifier: Apache-2.0
#include "caps/rng.hpp"

#include <cmath>

namespace caps {

double Rng::gauss() {
  const double u1 = uniform_pos();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

uint64_t derive_seed(uint64_t root, std::string_view tag) {
  // FNV-1a over the tag, mixed with the root through splitmix finalizers
  uint64_t h = 0xcbf29ce484222325ULL ^ root;
  for (unsigned char c : tag) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  uint64_t x = h;
  uint64_t a = Rng::splitmix64(x);
  uint64_t b = Rng::splitmix64(x);
  return a ^ (b + 0x9e3779b97f4a7c15ULL);
}

}  // namespace caps
