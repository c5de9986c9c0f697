#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace stellar {

using Rng = std::mt19937_64;

// All randomness in the project funnels through this hierarchy: streams are
// keyed by (root seed, stream name, index) so any stage can re-derive its
// generator without serializing mid-stream state.
std::uint64_t derive_seed(std::uint64_t root, std::string_view name, std::uint64_t index = 0);

inline Rng derive_rng(std::uint64_t root, std::string_view name, std::uint64_t index = 0) {
  return Rng(derive_seed(root, name, index));
}

std::string rng_state_string(const Rng& rng);
Rng rng_from_state_string(const std::string& state);

}  // namespace stellar
