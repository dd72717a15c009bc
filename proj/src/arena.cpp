#include "pangea/arena.hpp"

#include <bit>

#include "pangea/common.hpp"

namespace pangea {

Arena::Arena(std::size_t capacity, AllocatorKind kind)
    : kind_(kind), capacity_(round_up(capacity)), free_bytes_(capacity_) {
  if (capacity == 0) fail(Errc::ZeroCapacity, "arena capacity must be positive");
  // Default-initialized: untouched pages stay uncommitted until first write.
  storage_.reset(new std::byte[capacity_]);
  if (kind_ == AllocatorKind::SegregatedFit) insert_free(0, capacity_);
}

std::size_t Arena::size_class(std::size_t bytes) noexcept {
  return static_cast<std::size_t>(std::bit_width(bytes) - 1);
}

void Arena::insert_free(std::size_t offset, std::size_t size) {
  free_by_offset_.emplace(offset, size);
  free_by_class_[size_class(size)].insert(offset);
}

void Arena::erase_free(std::map<std::size_t, std::size_t>::iterator it) {
  free_by_class_[size_class(it->second)].erase(it->first);
  free_by_offset_.erase(it);
}

std::optional<std::size_t> Arena::allocate(std::size_t bytes) {
  if (bytes == 0) fail(Errc::InvalidArgs, "zero-byte allocation");
  return kind_ == AllocatorKind::SegregatedFit ? allocate_fit(bytes) : allocate_slab(bytes);
}

std::optional<std::size_t> Arena::allocate_fit(std::size_t bytes) {
  const std::size_t need = round_up(bytes);
  if (need > free_bytes_) return std::nullopt;
  const std::size_t first = size_class(need);
  for (std::size_t cls = first; cls < kClasses; ++cls) {
    for (std::size_t offset : free_by_class_[cls]) {
      auto it = free_by_offset_.find(offset);
      const std::size_t size = it->second;
      if (size < need) continue;  // only possible in the first class
      erase_free(it);
      if (size > need) insert_free(offset + need, size - need);
      free_bytes_ -= need;
      return offset;
    }
  }
  return std::nullopt;
}

std::optional<std::size_t> Arena::allocate_slab(std::size_t bytes) {
  if (slot_size_ == 0) {
    slot_size_ = round_up(bytes);
    if (slot_size_ > capacity_) {
      slot_size_ = 0;
      return std::nullopt;
    }
    const std::size_t slots = capacity_ / slot_size_;
    free_slots_.reserve(slots);
    for (std::size_t i = slots; i-- > 0;) free_slots_.push_back(i * slot_size_);
    free_bytes_ = slots * slot_size_;
  }
  if (bytes > slot_size_) fail(Errc::PageSizeExceedsPool, "slab arena holds only one slot size");
  if (free_slots_.empty()) return std::nullopt;
  const std::size_t offset = free_slots_.back();
  free_slots_.pop_back();
  free_bytes_ -= slot_size_;
  return offset;
}

void Arena::release(std::size_t offset, std::size_t bytes) {
  if (kind_ == AllocatorKind::Slab) {
    free_slots_.push_back(offset);
    free_bytes_ += slot_size_;
    return;
  }
  std::size_t start = offset;
  std::size_t size = round_up(bytes);
  free_bytes_ += size;
  auto next = free_by_offset_.lower_bound(start);
  if (next != free_by_offset_.end() && next->first == start + size) {
    size += next->second;
    erase_free(next);
  }
  auto after = free_by_offset_.lower_bound(start);
  if (after != free_by_offset_.begin()) {
    auto prev = std::prev(after);
    if (prev->first + prev->second == start) {
      start = prev->first;
      size += prev->second;
      erase_free(prev);
    }
  }
  insert_free(start, size);
}

std::size_t Arena::largest_free_block() const noexcept {
  if (kind_ == AllocatorKind::Slab) {
    if (slot_size_ == 0) return capacity_;
    return free_slots_.empty() ? 0 : slot_size_;
  }
  for (std::size_t cls = kClasses; cls-- > 0;) {
    std::size_t best = 0;
    for (std::size_t offset : free_by_class_[cls]) best = std::max(best, free_by_offset_.at(offset));
    if (best > 0) return best;
  }
  return 0;
}

}  // namespace pangea
