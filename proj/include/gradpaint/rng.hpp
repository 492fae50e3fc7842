#pragma once

// Seeding: every random stream in the project is a std::mt19937_64 seeded
// through derive_seed(global, stream, index), a splitmix64 counter scheme.
// Parallel workers therefore draw identical numbers regardless of scheduling.

#include <cstdint>
#include <random>

#include "gradpaint/tensor.hpp"

namespace gradpaint {

using Rng = std::mt19937_64;

std::uint64_t splitmix64(std::uint64_t x) noexcept;
std::uint64_t derive_seed(std::uint64_t global, std::uint64_t stream, std::uint64_t index) noexcept;

/// Named streams; the numeric values are part of the reproducibility contract.
namespace stream {
inline constexpr std::uint64_t kImage = 1;
inline constexpr std::uint64_t kMask = 2;
inline constexpr std::uint64_t kChain = 3;
inline constexpr std::uint64_t kTraining = 4;
inline constexpr std::uint64_t kInit = 5;
}  // namespace stream

/// Standard-normal tensor of the given shape.
Tensor normal_tensor(const Shape& shape, Rng& rng);

}  // namespace gradpaint
