#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <vector>

namespace pangea {

enum class AllocatorKind { SegregatedFit, Slab };

/// One contiguous byte region carved into page-sized blocks.
///
/// SegregatedFit keeps free blocks in power-of-two size classes and coalesces
/// neighbours on release, in the spirit of TLSF, so variable-size pages from
/// different sets share one region. Slab fixes a single slot size on first use
/// and hands out whole slots.
///
/// Not thread-safe; the buffer pool serializes access.
class Arena {
 public:
  static constexpr std::size_t kGranule = 8;

  Arena(std::size_t capacity, AllocatorKind kind);

  Arena(const Arena&) = delete;
  Arena& operator=(const Arena&) = delete;
  Arena(Arena&&) = default;
  Arena& operator=(Arena&&) = default;

  /// Offset of a block of at least `bytes`, or nullopt when no block fits.
  std::optional<std::size_t> allocate(std::size_t bytes);
  void release(std::size_t offset, std::size_t bytes);

  std::span<std::byte> region(std::size_t offset, std::size_t bytes) noexcept {
    return {storage_.get() + offset, bytes};
  }

  AllocatorKind kind() const noexcept { return kind_; }
  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t free_bytes() const noexcept { return free_bytes_; }
  /// Largest single block that could be allocated right now.
  std::size_t largest_free_block() const noexcept;
  std::size_t slab_slot_size() const noexcept { return slot_size_; }

 private:
  static constexpr std::size_t kClasses = 64;

  static std::size_t round_up(std::size_t bytes) noexcept {
    return (bytes + kGranule - 1) / kGranule * kGranule;
  }
  static std::size_t size_class(std::size_t bytes) noexcept;

  void insert_free(std::size_t offset, std::size_t size);
  void erase_free(std::map<std::size_t, std::size_t>::iterator it);

  std::optional<std::size_t> allocate_fit(std::size_t bytes);
  std::optional<std::size_t> allocate_slab(std::size_t bytes);

  AllocatorKind kind_;
  std::size_t capacity_;
  std::size_t free_bytes_;
  std::unique_ptr<std::byte[]> storage_;

  // SegregatedFit state.
  std::map<std::size_t, std::size_t> free_by_offset_;
  std::array<std::set<std::size_t>, kClasses> free_by_class_;

  // Slab state.
  std::size_t slot_size_ = 0;
  std::vector<std::size_t> free_slots_;
};

}  // namespace pangea
