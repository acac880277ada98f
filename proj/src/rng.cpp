#include "ttsem/rng.hpp"

#include <cmath>
#include <numbers>

namespace ttsem::rng {

Stream Stream::child(std::uint64_t label) const {
  return Stream(mix64(key_ ^ mix64(label + 0x3c6ef372fe94f82bULL)) + 0x243f6a8885a308d3ULL);
}

double Stream::uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

double Stream::uniform_pos() { return static_cast<double>(((*this)() >> 11) + 1) * 0x1.0p-53; }

double Stream::normal() {
  const double u1 = uniform_pos();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t Stream::index(std::size_t n) {
  const std::uint64_t range = n;
  std::uint64_t x = (*this)();
  __uint128_t m = static_cast<__uint128_t>(x) * range;
  auto low = static_cast<std::uint64_t>(m);
  if (low < range) {
    const std::uint64_t threshold = (0 - range) % range;
    while (low < threshold) {
      x = (*this)();
      m = static_cast<__uint128_t>(x) * range;
      low = static_cast<std::uint64_t>(m);
    }
  }
  return static_cast<std::size_t>(m >> 64);
}

}  // namespace ttsem::rng
