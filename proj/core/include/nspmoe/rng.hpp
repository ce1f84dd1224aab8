#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace nspmoe {

// 64-bit Mersenne twister; the engine is fully specified by the standard so
// streams are reproducible across toolchains. Distributions below are
// implemented here for the same reason (std:: distributions are not).
using Rng = std::mt19937_64;

std::uint64_t splitmix64(std::uint64_t x);

// Independent stream seed for (base seed, stream tag, index).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream, std::uint64_t index);

// Named stream tags.
namespace stream {
inline constexpr std::uint64_t kPosition = 0x706f73;   // agent placement
inline constexpr std::uint64_t kCatalog = 0x636174;    // image catalogs
inline constexpr std::uint64_t kFading = 0x666164;     // per-episode fading
inline constexpr std::uint64_t kPolicy = 0x706f6c;     // per-episode action sampling
inline constexpr std::uint64_t kShuffle = 0x736866;    // minibatch shuffling
inline constexpr std::uint64_t kInit = 0x696e69;       // network init
inline constexpr std::uint64_t kBaseline = 0x62736c;   // baseline policies
inline constexpr std::uint64_t kCalibrate = 0x63616c;  // reference-cost warmup
}  // namespace stream

// Uniform in [0, 1) with 53 random bits.
double uniform01(Rng& rng);
// Uniform in (0, 1].
double uniform01_open_low(Rng& rng);
double uniform(Rng& rng, double lo, double hi);
// Uniform integer in [lo, hi].
std::uint64_t uniform_int(Rng& rng, std::uint64_t lo, std::uint64_t hi);
// Standard normal via Box-Muller (one draw per call, no caching).
double standard_normal(Rng& rng);
// Unit-mean exponential, i.e. Rayleigh power gain.
double unit_exponential(Rng& rng);

// FNV-1a 64-bit.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);

}  // namespace nspmoe
