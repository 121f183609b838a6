#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace sifuse {

using real = double;

inline constexpr real kPi = 3.14159265358979323846;

// Error taxonomy. ParamError for bad call arguments, ConfigError for
// inconsistent run configuration, IoError for file ingestion/serialization,
// ContractError for broken internal invariants (e.g. frozen params mutated).
struct ParamError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Seeded RNG with fully spelled-out transforms. std:: distributions are
// implementation-defined, so uniform/normal draws are derived by hand to keep
// runs reproducible for a given build.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  // [0, 1)
  real uniform() { return real(eng_() >> 11) * 0x1.0p-53; }

  real uniform(real lo, real hi) { return lo + (hi - lo) * uniform(); }

  // Inclusive range.
  int uniform_int(int lo, int hi) {
    if (hi < lo) throw ParamError("Rng::uniform_int: empty range");
    uint64_t span = uint64_t(hi) - uint64_t(lo) + 1;
    return lo + int(eng_() % span);
  }

  // Box-Muller with a cached spare.
  real normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    real u1;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    real u2 = uniform();
    real r = std::sqrt(-2.0 * std::log(u1));
    real a = 2.0 * kPi * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  // Decorrelated child seed for a named sub-stream.
  static uint64_t derive(uint64_t seed, uint64_t stream) {
    return splitmix64(seed ^ splitmix64(stream));
  }

 private:
  std::mt19937_64 eng_;
  bool have_spare_ = false;
  real spare_ = 0.0;
};

}  // namespace sifuse
