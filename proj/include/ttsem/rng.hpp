#ifndef TTSEM_RNG_HPP
#define TTSEM_RNG_HPP

#include <cstddef>
#include <cstdint>
#include <limits>

namespace ttsem::rng {

/// SplitMix64 finalizer (Stafford variant 13).
constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Named stream roles derived from one root seed.
enum class Tag : std::uint64_t {
  index_i = 1,
  index_j = 2,
  posterior = 3,
  init = 4,
  simulate = 5,
  termination = 6,
  replicate = 7,
};

/// Counter-based stream: draw number c of a stream with key K is
/// mix64(K + (c + 1) * golden). Streams are addressed by key, so the value of
/// any draw depends only on (key, counter) and never on what other streams
/// consumed. `child` derives an independent key; it does not touch the counter.
class Stream {
 public:
  using result_type = std::uint64_t;

  explicit Stream(std::uint64_t key = 0) : key_(key) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    ++counter_;
    return mix64(key_ + counter_ * 0x9e3779b97f4a7c15ULL);
  }

  Stream child(std::uint64_t label) const;
  Stream child(Tag tag) const { return child(static_cast<std::uint64_t>(tag)); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  /// Uniform on (0, 1].
  double uniform_pos();
  /// Standard normal (Box-Muller, both uniforms consumed per call).
  double normal();
  /// Uniform integer in [0, n), unbiased (Lemire multiply-shift with rejection).
  std::size_t index(std::size_t n);

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// Root stream of a run or experiment.
inline Stream root(std::uint64_t seed) { return Stream(mix64(seed ^ 0x6a09e667f3bcc909ULL)); }

/// Posterior-sampling stream for sample i at engine iteration k.
inline Stream posterior_stream(const Stream& root_stream, std::int64_t k, std::size_t i) {
  return root_stream.child(Tag::posterior).child(static_cast<std::uint64_t>(k)).child(i);
}

/// Posterior-sampling stream for sample i in the initialization pass.
inline Stream init_stream(const Stream& root_stream, std::size_t i) {
  return root_stream.child(Tag::init).child(i);
}

}  // namespace ttsem::rng

#endif  // TTSEM_RNG_HPP
