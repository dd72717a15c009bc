#pragma once

// Shared vocabulary for the engine: identifiers, the logical clock, the error
// type every module throws, and the stable byte hash used for routing.

#include <atomic>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

namespace pangea {

inline constexpr std::size_t kKiB = std::size_t{1} << 10;
inline constexpr std::size_t kMiB = std::size_t{1} << 20;
inline constexpr std::size_t kGiB = std::size_t{1} << 30;

using Tick = std::uint64_t;
using NodeId = std::uint32_t;

struct SetId {
  std::uint64_t value = 0;

  friend auto operator<=>(const SetId&, const SetId&) = default;
};

struct PageKey {
  SetId set;
  std::uint64_t seq = 0;

  friend auto operator<=>(const PageKey&, const PageKey&) = default;
};

std::string to_string(SetId id);
std::string to_string(const PageKey& key);

enum class Errc {
  DuplicateName,
  PageSizeExceedsPool,
  SetNotFound,
  LifetimeEnded,
  PagesStillPinned,
  ZeroCapacity,
  EvictionExhausted,
  PageUnknown,
  MissingImage,
  NotPinned,
  PagePinned,
  NotResident,
  NonPositiveInterval,
  NoEvictablePage,
  PolicyBlocked,
  IoFailure,
  SizeMismatch,
  PageNotOnDisk,
  CorruptMeta,
  RecordLargerThanPage,
  RecordLargerThanSmallPage,
  KeyLargerThanPage,
  TargetNotEmpty,
  ObjectSetMismatch,
  InvalidArgs,
  NoSurvivingReplica,
  UnrecoverableObjects,
  InsufficientDiskSpace,
  NodeDown,
  UnknownNode,
  InvalidConfig,
};

std::string_view errc_name(Errc code);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what);

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] void fail(Errc code, const std::string& what);

/// Monotone counter shared by the registry and the buffer pool. One tick per
/// page pin or service access.
class LogicalClock {
 public:
  Tick now() const noexcept { return tick_.load(std::memory_order_acquire); }
  Tick advance() noexcept { return tick_.fetch_add(1, std::memory_order_acq_rel) + 1; }

 private:
  std::atomic<Tick> tick_{0};
};

std::uint64_t splitmix64(std::uint64_t x) noexcept;

/// FNV-1a over the bytes, finalized with a seeded splitmix step. Stable across
/// runs and platforms, unlike std::hash.
std::uint64_t stable_hash(std::span<const std::byte> bytes, std::uint64_t seed = 0) noexcept;
std::uint64_t stable_hash(std::string_view text, std::uint64_t seed = 0) noexcept;

inline std::span<const std::byte> as_bytes(std::string_view text) noexcept {
  return {reinterpret_cast<const std::byte*>(text.data()), text.size()};
}

inline std::string_view as_string_view(std::span<const std::byte> bytes) noexcept {
  return {reinterpret_cast<const char*>(bytes.data()), bytes.size()};
}

}  // namespace pangea

template <>
struct std::hash<pangea::SetId> {
  std::size_t operator()(const pangea::SetId& id) const noexcept {
    return static_cast<std::size_t>(pangea::splitmix64(id.value));
  }
};

template <>
struct std::hash<pangea::PageKey> {
  std::size_t operator()(const pangea::PageKey& key) const noexcept {
    return static_cast<std::size_t>(pangea::splitmix64(key.set.value * 0x9E3779B97F4A7C15ULL ^ key.seq));
  }
};
