#include "ycontrol/philox.hpp"

#include <cmath>
#include <numbers>

namespace ycontrol {
namespace {

constexpr std::uint32_t kMul0 = 0xD2511F53u;
constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi,
                    std::uint32_t& lo) {
  const std::uint64_t product = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(product >> 32);
  lo = static_cast<std::uint32_t>(product);
}

inline void round(PhiloxCounter& ctr, const PhiloxKey& key) {
  std::uint32_t hi0, lo0, hi1, lo1;
  mulhilo(kMul0, ctr[0], hi0, lo0);
  mulhilo(kMul1, ctr[2], hi1, lo1);
  ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
}

}  // namespace

PhiloxCounter philox4x32_10(PhiloxCounter counter, PhiloxKey key) {
  for (int i = 0; i < 10; ++i) {
    if (i > 0) {
      key[0] += kWeyl0;
      key[1] += kWeyl1;
    }
    round(counter, key);
  }
  return counter;
}

CounterRng::CounterRng(std::uint64_t seed, std::uint32_t stream_a,
                       std::uint32_t stream_b)
    : key_{static_cast<std::uint32_t>(seed),
           static_cast<std::uint32_t>(seed >> 32)},
      stream_a_(stream_a),
      stream_b_(stream_b) {}

void CounterRng::seek(std::uint64_t block) {
  block_ = block;
  words_left_ = 0;
  has_spare_ = false;
}

void CounterRng::refill() {
  buffer_ = philox4x32_10({static_cast<std::uint32_t>(block_),
                           static_cast<std::uint32_t>(block_ >> 32),
                           stream_a_, stream_b_},
                          key_);
  ++block_;
  words_left_ = 4;
}

CounterRng::result_type CounterRng::operator()() {
  if (words_left_ < 2) refill();
  const int i = 4 - words_left_;
  words_left_ -= 2;
  return (static_cast<std::uint64_t>(buffer_[i + 1]) << 32) | buffer_[i];
}

double CounterRng::uniform() {
  return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53;
}

double CounterRng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_normal_;
  }
  const double u1 = uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_normal_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

}  // namespace ycontrol
