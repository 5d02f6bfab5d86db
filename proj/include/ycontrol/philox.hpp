#pragma once

// Philox4x32-10 counter-based generator (Salmon et al., "Parallel random
// numbers: as easy as 1, 2, 3", SC'11). Every draw is a pure function of
// (key, counter), so a stream is fully determined by a seed plus a pair of
// stream identifiers (for example a path index and a channel) and can be
// split across workers without coordination.

#include <array>
#include <cstdint>

namespace ycontrol {

using PhiloxCounter = std::array<std::uint32_t, 4>;
using PhiloxKey = std::array<std::uint32_t, 2>;

PhiloxCounter philox4x32_10(PhiloxCounter counter, PhiloxKey key);

// Sequential view of one Philox stream. The counter layout is
// {block_lo, block_hi, stream_a, stream_b}; the key is the 64-bit seed.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  CounterRng(std::uint64_t seed, std::uint32_t stream_a,
             std::uint32_t stream_b = 0);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }

  result_type operator()();

  // Uniform on the open interval (0, 1), 53-bit resolution.
  double uniform();
  // Standard normal by the Box-Muller transform; values come in pairs.
  double normal();

  // Repositions the stream at the start of a given 128-bit block.
  void seek(std::uint64_t block);

 private:
  void refill();

  PhiloxKey key_;
  std::uint32_t stream_a_;
  std::uint32_t stream_b_;
  std::uint64_t block_ = 0;
  PhiloxCounter buffer_{};
  int words_left_ = 0;
  double spare_normal_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace ycontrol
