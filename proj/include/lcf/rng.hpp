#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <string_view>

#include "lcf/errors.hpp"

namespace lcf {

using Rng = std::mt19937_64;

/// 64-bit FNV-1a; stable across platforms, used to derive seeds from names and ids.
inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

/// Independent generator for `name` derived from a root seed.
inline Rng derive_rng(std::uint64_t root_seed, std::string_view name) {
    const std::uint64_t h = fnv1a(name);
    std::seed_seq seq{static_cast<std::uint32_t>(root_seed), static_cast<std::uint32_t>(root_seed >> 32),
                      static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
    return Rng(seq);
}

/// The five named sub-streams every run draws from.
struct RngStreams {
    Rng data;
    Rng mask;
    Rng init;
    Rng depth;
    Rng dropout;

    explicit RngStreams(std::uint64_t root_seed = 0)
        : data(derive_rng(root_seed, "data")),
          mask(derive_rng(root_seed, "mask")),
          init(derive_rng(root_seed, "init")),
          depth(derive_rng(root_seed, "depth")),
          dropout(derive_rng(root_seed, "dropout")) {}
};

inline std::string rng_state(const Rng& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

inline void set_rng_state(Rng& rng, const std::string& state) {
    std::istringstream is(state);
    is >> rng;
    if (is.fail()) throw ConfigError("malformed generator state");
}

}  // namespace lcf
