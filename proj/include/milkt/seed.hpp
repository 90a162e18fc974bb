#pragma once

#include <cstdint>
#include <string_view>

namespace milkt {

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view s);

/// Independent, platform-stable sub-seed: splitmix64(master ^ fnv1a64(tag)).
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view stream_tag) {
  return splitmix64(master ^ fnv1a64(stream_tag));
}

}  // namespace milkt
