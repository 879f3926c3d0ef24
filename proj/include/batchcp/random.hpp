#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>

namespace batchcp {

inline constexpr const char* kGeneratorName = "mt19937_64+splitmix64";

inline std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Derives an independent stream seed from a master seed and a tuple of
/// counters, so that results never depend on evaluation order.
inline std::uint64_t derive_seed(std::uint64_t master, std::span<const std::uint64_t> counters)
{
    std::uint64_t h = splitmix64(master);
    for (auto c : counters) {
        h = splitmix64(h ^ splitmix64(c + 0x632be59bd9b4e019ULL));
    }
    return h;
}

inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> counters)
{
    return derive_seed(master, std::span<const std::uint64_t>(counters.begin(), counters.size()));
}

using Engine = std::mt19937_64;

/// Uniform on [0,1) with 53 random bits; portable across standard libraries.
inline double uniform01(Engine& eng)
{
    return static_cast<double>(eng() >> 11) * 0x1.0p-53;
}

} // namespace batchcp
