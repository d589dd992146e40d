#ifndef UGSS_RNG_HPP
#define UGSS_RNG_HPP

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace ugss {

using Rng = std::mt19937_64;

// Independent stream keyed by (seed, tags...). Streams never depend on the
// order in which other streams were consumed.
inline Rng make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> tags = {}) {
    std::vector<std::uint32_t> words;
    words.push_back(static_cast<std::uint32_t>(seed));
    words.push_back(static_cast<std::uint32_t>(seed >> 32));
    for (auto t : tags) {
        words.push_back(static_cast<std::uint32_t>(t));
        words.push_back(static_cast<std::uint32_t>(t >> 32));
    }
    std::seed_seq seq(words.begin(), words.end());
    return Rng(seq);
}

inline double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

inline int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

inline bool bernoulli(Rng& rng, double p) {
    if (p <= 0.0) return false;
    if (p >= 1.0) return true;
    return std::bernoulli_distribution(p)(rng);
}

// Stream tags, kept distinct so that adding a consumer never shifts another.
namespace stream {
inline constexpr std::uint64_t kPhantom = 0x5048414e;
inline constexpr std::uint64_t kInit = 0x494e4954;
inline constexpr std::uint64_t kHeadInit = 0x48454144;
inline constexpr std::uint64_t kOrder = 0x4f524452;
inline constexpr std::uint64_t kSample = 0x534d504c;
inline constexpr std::uint64_t kHeadPick = 0x5049434b;
inline constexpr std::uint64_t kFolds = 0x464f4c44;
}  // namespace stream

}  // namespace ugss

#endif  // UGSS_RNG_HPP
