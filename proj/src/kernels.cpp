#include "pangea/kernels.hpp"

#if defined(__x86_64__) || defined(__i386__)
#include <immintrin.h>
#endif
#if defined(__aarch64__)
#include <arm_neon.h>
#endif

namespace pangea::kernels {

std::uint64_t byte_sum_scalar(std::span<const std::byte> bytes) noexcept {
  std::uint64_t sum = 0;
  for (std::byte b : bytes) sum += static_cast<std::uint8_t>(b);
  return sum;
}

#if defined(__x86_64__) || defined(__i386__)
__attribute__((target("avx2"))) std::uint64_t byte_sum_avx2(std::span<const std::byte> bytes) noexcept {
  const auto* p = reinterpret_cast<const std::uint8_t*>(bytes.data());
  const std::size_t n = bytes.size();
  std::size_t i = 0;
  // _mm256_sad_epu8 against zero folds 32 bytes into four u64 lanes.
  __m256i acc = _mm256_setzero_si256();
  const __m256i zero = _mm256_setzero_si256();
  for (; i + 32 <= n; i += 32) {
    const __m256i v = _mm256_loadu_si256(reinterpret_cast<const __m256i*>(p + i));
    acc = _mm256_add_epi64(acc, _mm256_sad_epu8(v, zero));
  }
  alignas(32) std::uint64_t lanes[4];
  _mm256_store_si256(reinterpret_cast<__m256i*>(lanes), acc);
  std::uint64_t sum = lanes[0] + lanes[1] + lanes[2] + lanes[3];
  for (; i < n; ++i) sum += p[i];
  return sum;
}
#endif

#if defined(__aarch64__)
std::uint64_t byte_sum_neon(std::span<const std::byte> bytes) noexcept {
  const auto* p = reinterpret_cast<const std::uint8_t*>(bytes.data());
  const std::size_t n = bytes.size();
  std::size_t i = 0;
  uint64x2_t acc = vdupq_n_u64(0);
  for (; i + 16 <= n; i += 16) {
    const uint8x16_t v = vld1q_u8(p + i);
    acc = vpadalq_u32(acc, vpaddlq_u16(vpaddlq_u8(v)));
  }
  std::uint64_t sum = vgetq_lane_u64(acc, 0) + vgetq_lane_u64(acc, 1);
  for (; i < n; ++i) sum += p[i];
  return sum;
}
#endif

Isa detected_isa() noexcept {
#if defined(__x86_64__) || defined(__i386__)
  static const Isa isa = __builtin_cpu_supports("avx2") ? Isa::Avx2 : Isa::Scalar;
  return isa;
#elif defined(__aarch64__)
  return Isa::Neon;
#else
  return Isa::Scalar;
#endif
}

std::string_view isa_name(Isa isa) noexcept {
  switch (isa) {
    case Isa::Scalar: return "scalar";
    case Isa::Avx2: return "avx2";
    case Isa::Neon: return "neon";
  }
  return "scalar";
}

std::uint64_t byte_sum(std::span<const std::byte> bytes) noexcept {
  switch (detected_isa()) {
#if defined(__x86_64__) || defined(__i386__)
    case Isa::Avx2: return byte_sum_avx2(bytes);
#endif
#if defined(__aarch64__)
    case Isa::Neon: return byte_sum_neon(bytes);
#endif
    default: return byte_sum_scalar(bytes);
  }
}

}  // namespace pangea::kernels
