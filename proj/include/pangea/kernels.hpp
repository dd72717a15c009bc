#pragma once

// Byte-summing kernel used by the scan benchmarks to touch every record byte.
// A portable scalar reference plus vector variants; `byte_sum` picks the widest
// variant the running CPU supports.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>

namespace pangea::kernels {

enum class Isa { Scalar, Avx2, Neon };

std::uint64_t byte_sum_scalar(std::span<const std::byte> bytes) noexcept;

#if defined(__x86_64__) || defined(__i386__)
std::uint64_t byte_sum_avx2(std::span<const std::byte> bytes) noexcept;
#endif

#if defined(__aarch64__)
std::uint64_t byte_sum_neon(std::span<const std::byte> bytes) noexcept;
#endif

/// Widest ISA usable on this machine, probed once.
Isa detected_isa() noexcept;
std::string_view isa_name(Isa isa) noexcept;

std::uint64_t byte_sum(std::span<const std::byte> bytes) noexcept;

}  // namespace pangea::kernels
