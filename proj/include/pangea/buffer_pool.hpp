#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "pangea/arena.hpp"
#include "pangea/common.hpp"
#include "pangea/file_store.hpp"
#include "pangea/locality.hpp"
#include "pangea/paging.hpp"

namespace pangea {

struct PoolConfig {
  std::size_t capacity = 256 * kMiB;
  AllocatorKind allocator = AllocatorKind::SegregatedFit;
  /// Feed measured I/O times into the per-set v_r / v_w averages. Off gives
  /// cost-model decisions that depend only on page sizes and ticks.
  bool profile_io = true;
  /// Re-check accounting invariants after every mutating call.
  bool check_invariants = false;
  /// Pages the scan producer keeps pinned ahead of consumers.
  std::size_t scan_prefetch = 1;
};

/// A pinned page. The span stays valid until the matching unpin.
struct PageHandle {
  PageKey key;
  std::span<std::byte> bytes;
};

struct PageState {
  PageKey key;
  std::size_t size = 0;
  std::uint32_t pin_count = 0;
  bool dirty = false;
  Tick last_access_tick = 0;
  bool resident = false;
  bool on_disk = false;
};

enum class PoolEventKind { Allocate, Load, Unpin, Write, Evict };

struct PoolEvent {
  PoolEventKind kind;
  PageKey key;
  bool dirty = false;       // Unpin: dirty hint; Evict: page was dirty
  bool alive = true;        // Evict: owner still alive
  std::uint32_t pin_count = 0;  // pin count at the time of the event
};

struct PoolStats {
  std::uint64_t pages_allocated = 0;
  std::uint64_t pages_loaded = 0;
  std::uint64_t pages_evicted = 0;
  std::uint64_t pages_written = 0;
  std::uint64_t dirty_discarded = 0;
  std::uint64_t eviction_decisions = 0;
};

class ScanQueue;

class BufferPool final : private PagingView {
 public:
  BufferPool(PoolConfig config, LocalityRegistry& registry, FileStore& files, LogicalClock& clock,
             std::unique_ptr<PagingPolicy> policy);
  ~BufferPool() override;

  BufferPool(const BufferPool&) = delete;
  BufferPool& operator=(const BufferPool&) = delete;

  void add_set(SetId set, std::size_t page_size);
  /// Registers pages that exist only on disk (reopened set).
  void add_disk_pages(SetId set, const SetFileIndex& index);

  PageHandle allocate_page(SetId set);
  PageHandle pin_page(PageKey key);
  void unpin_page(PageKey key, bool dirty_hint);
  void unpin_page(const PageHandle& handle, bool dirty_hint) { unpin_page(handle.key, dirty_hint); }
  /// Evicts one specific page. Returns bytes written to disk.
  std::uint64_t evict_page(PageKey key);
  /// Writes every dirty unpinned page of the set and persists its meta file.
  void flush_set(SetId set);
  /// Frees every page of the set. Throws PagesStillPinned when any is pinned.
  void remove_set(SetId set);

  std::shared_ptr<ScanQueue> scan_queue(SetId set, std::size_t num_consumers);

  PageState page_state(PageKey key) const;
  std::vector<std::uint64_t> page_seqs(SetId set) const;
  std::size_t resident_count(SetId set) const;

  std::size_t capacity() const noexcept { return config_.capacity; }
  std::size_t used() const;
  std::size_t free_bytes() const { return capacity() - used(); }
  PoolStats stats() const;
  AllocatorKind allocator_kind() const noexcept { return config_.allocator; }

  void set_policy(std::unique_ptr<PagingPolicy> policy);
  PolicyKind policy_kind() const;
  void set_observer(std::function<void(const PoolEvent&)> observer);
  /// Throws std::logic_error describing the first broken invariant.
  void check_invariants() const;

 private:
  struct PageMeta {
    std::size_t size = 0;
    std::uint32_t pin_count = 0;
    bool dirty = false;
    Tick last_access = 0;
    bool resident = false;
    bool on_disk = false;
    std::size_t offset = 0;
  };

  struct SetPages {
    std::size_t page_size = 0;
    std::uint64_t next_seq = 0;
    std::map<std::uint64_t, PageMeta> pages;
    std::set<std::pair<Tick, std::uint64_t>> unpinned;  // resident, pin_count == 0
    std::size_t resident = 0;
  };

  using GlobalEntry = std::tuple<Tick, SetId, std::uint64_t>;

  // PagingView
  std::vector<SetId> evictable_sets() const override;
  std::vector<SetId> populated_sets() const override;
  SetCostInputs set_inputs(SetId set) const override;
  std::size_t resident_unpinned(SetId set) const override;
  std::size_t resident_pages(SetId set) const override;
  std::size_t total_pages(SetId set) const override;
  std::vector<CandidatePage> candidates(SetId set, VictimOrder order, std::size_t limit) const override;
  std::size_t global_unpinned() const override;
  std::vector<CandidatePage> global_candidates(VictimOrder order, std::size_t limit) const override;
  std::size_t capacity_bytes() const override { return config_.capacity; }

  SetPages& pages_of(SetId set);
  const SetPages& pages_of(SetId set) const;
  PageMeta& meta_of(PageKey key);

  void index_unpinned(SetId set, SetPages& sp, std::uint64_t seq, const PageMeta& m);
  void unindex_unpinned(SetId set, SetPages& sp, std::uint64_t seq, const PageMeta& m);

  std::size_t reserve_locked(std::size_t bytes, std::optional<SetId> requester);
  std::uint64_t evict_locked(PageKey key);
  void write_page_locked(PageKey key, PageMeta& m, bool persist_meta);
  PageHandle pin_locked(PageKey key);
  void emit(const PoolEvent& event) const;
  void maybe_check() const;
  void check_invariants_locked() const;

  PoolConfig config_;
  LocalityRegistry& registry_;
  FileStore& files_;
  LogicalClock& clock_;
  std::unique_ptr<PagingPolicy> policy_;

  mutable std::mutex mutex_;
  Arena arena_;
  std::size_t used_ = 0;
  std::map<SetId, SetPages> sets_;
  std::set<GlobalEntry> global_unpinned_;
  std::unordered_map<PageKey, std::size_t> page_table_;
  PoolStats stats_;
  std::function<void(const PoolEvent&)> observer_;

  friend class ScanQueue;
};

/// Shared work queue over the pages of one set, in sequence order. The
/// producer side pins pages into a circular buffer of metadata; each consumer
/// dequeues a page exclusively and releases (unpins) it when done.
class ScanQueue {
 public:
  ScanQueue(BufferPool& pool, SetId set, std::vector<std::uint64_t> seqs, std::size_t ring_capacity,
            std::size_t num_consumers);
  ~ScanQueue();

  ScanQueue(const ScanQueue&) = delete;
  ScanQueue& operator=(const ScanQueue&) = delete;

  /// Next page, pinned; nullopt once every page has been handed out.
  std::optional<PageHandle> next();
  void release(const PageHandle& page);

  SetId set() const noexcept { return set_; }
  std::size_t num_consumers() const noexcept { return num_consumers_; }
  std::size_t total_pages() const noexcept { return seqs_.size(); }

 private:
  BufferPool& pool_;
  SetId set_;
  std::vector<std::uint64_t> seqs_;
  std::size_t num_consumers_;
  std::mutex mutex_;
  std::size_t next_to_pin_ = 0;
  std::vector<std::optional<PageHandle>> ring_;
  std::size_t head_ = 0;
  std::size_t count_ = 0;
};

}  // namespace pangea
