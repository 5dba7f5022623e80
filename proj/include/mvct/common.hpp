#ifndef MVCT_COMMON_HPP
#define MVCT_COMMON_HPP

#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace mvct {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

[[noreturn]] inline void fail(const std::string& msg) { throw Error(msg); }

inline void require(bool ok, const std::string& msg) {
  if (!ok) fail(msg);
}

// --- deterministic hashing / counter-based RNG -------------------------------
//
// All randomness in the project flows through keyed counter streams so that any
// draw is a pure function of (seed, purpose path, counter). This is what makes
// resume-from-checkpoint and multi-phase runs bit-reproducible.

inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t hash_bytes(const void* data, std::size_t n,
                                std::uint64_t seed = 0xcbf29ce484222325ULL) {
  // FNV-1a, then a final avalanche.
  const unsigned char* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return mix64(h);
}

inline std::uint64_t hash_str(const std::string& s) {
  return hash_bytes(s.data(), s.size());
}

// Keyed stream: the i-th output is mix64(key + i * golden-gamma), i.e. the
// splitmix64 sequence started at `key`. Streams with different keys are
// independent for all practical purposes.
class Stream {
 public:
  explicit Stream(std::uint64_t key) : key_(key) {}

  Stream(std::uint64_t seed, std::initializer_list<std::uint64_t> path)
      : key_(mix64(seed)) {
    for (std::uint64_t p : path) key_ = mix64(key_ ^ mix64(p));
  }

  std::uint64_t u64() { return mix64(key_ + (++ctr_) * 0x9e3779b97f4a7c15ULL); }

  // uniform in [0, 1)
  double uniform() { return double(u64() >> 11) * 0x1.0p-53; }

  // uniform in (0, 1]
  double uniform_pos() { return double((u64() >> 11) + 1) * 0x1.0p-53; }

  double gaussian() {
    double u1 = uniform_pos();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  // uniform integer in [0, n)
  std::uint64_t below(std::uint64_t n) { return u64() % n; }

  std::uint64_t key() const { return key_; }

 private:
  std::uint64_t key_;
  std::uint64_t ctr_ = 0;
};

// Purpose tags used to derive independent stream keys from one user seed.
namespace stream_tag {
constexpr std::uint64_t init = 1;
constexpr std::uint64_t atlas_register = 2;
constexpr std::uint64_t batch = 3;
constexpr std::uint64_t mask = 4;
constexpr std::uint64_t dropout = 5;
constexpr std::uint64_t split = 6;
constexpr std::uint64_t synth_centers = 7;
constexpr std::uint64_t synth_pattern = 8;
constexpr std::uint64_t synth_subject = 9;
constexpr std::uint64_t synth_noise = 10;
constexpr std::uint64_t synth_coords = 11;
}  // namespace stream_tag

}  // namespace mvct

#endif
