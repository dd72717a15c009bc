#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "pangea/buffer_pool.hpp"
#include "pangea/file_store.hpp"
#include "pangea/locality.hpp"
#include "pangea/paging.hpp"

namespace pangea {

struct EngineConfig {
  std::size_t memory = 256 * kMiB;
  AllocatorKind allocator = AllocatorKind::SegregatedFit;
  std::vector<std::filesystem::path> storage_dirs;
  PolicyKind policy = PolicyKind::DataAware;
  CostModelParams cost;
  bool profile_io = true;
  bool check_invariants = false;
  std::size_t scan_prefetch = 1;
};

/// One node's storage stack: locality-set registry, file store and buffer
/// pool wired together. Services and the cluster simulator build on this.
class Engine {
 public:
  explicit Engine(EngineConfig config);
  /// Persists meta files of write-back sets unless crash() was called.
  ~Engine();

  Engine(const Engine&) = delete;
  Engine& operator=(const Engine&) = delete;

  SetId create_set(std::string name, std::size_t page_size, Durability durability);
  /// Re-registers a set whose files survive from an earlier engine and
  /// exposes its indexed pages as on-disk, non-resident pages.
  SetId open_existing_set(SetId id, std::string name, std::size_t page_size, Durability durability);

  SetAttributes infer_attributes(SetId set, ServiceKind kind);
  SetAttributes release_service(SetId set, ServiceKind kind);
  void mark_lifetime_ended(SetId set);
  void remove_set(SetId set);
  void record_access(SetId set, Tick tick);
  /// Advances the clock for a service-level access to the set.
  Tick touch(SetId set);

  PageHandle allocate_page(SetId set) { return pool_->allocate_page(set); }
  PageHandle pin_page(PageKey key) { return pool_->pin_page(key); }
  void unpin_page(const PageHandle& handle, bool dirty) { pool_->unpin_page(handle, dirty); }
  void unpin_page(PageKey key, bool dirty) { pool_->unpin_page(key, dirty); }
  std::uint64_t evict_page(PageKey key) { return pool_->evict_page(key); }
  void flush_set(SetId set) { pool_->flush_set(set); }
  std::shared_ptr<ScanQueue> scan_queue(SetId set, std::size_t num_consumers) {
    return pool_->scan_queue(set, num_consumers);
  }

  LocalitySet set_info(SetId set) const { return registry_.get(set); }
  std::optional<SetId> find_set(std::string_view name) const { return registry_.find(name); }

  LocalityRegistry& registry() noexcept { return registry_; }
  const LocalityRegistry& registry() const noexcept { return registry_; }
  BufferPool& pool() noexcept { return *pool_; }
  const BufferPool& pool() const noexcept { return *pool_; }
  FileStore& files() noexcept { return files_; }
  const FileStore& files() const noexcept { return files_; }
  LogicalClock& clock() noexcept { return clock_; }
  const EngineConfig& config() const noexcept { return config_; }

  /// Drops the engine on the floor at destruction: nothing more is written.
  void crash() noexcept { crashed_ = true; }

 private:
  EngineConfig config_;
  LogicalClock clock_;
  LocalityRegistry registry_;
  FileStore files_;
  std::unique_ptr<BufferPool> pool_;
  bool crashed_ = false;
};

}  // namespace pangea
