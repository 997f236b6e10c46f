#ifndef SAFEODE_RNG_HPP
#define SAFEODE_RNG_HPP

#include <cstdint>
#include <random>

namespace safeode {

// splitmix64; used to derive independent substream seeds from (seed, id)
// so that parallel workers never share generator state.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t s = splitmix64(seed ^ splitmix64(stream + 0x51ed2701ULL));
    return std::mt19937_64(s);
}

}  // namespace safeode

#endif
