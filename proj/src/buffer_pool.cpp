#include "pangea/buffer_pool.hpp"

#include <chrono>
#include <cstring>
#include <stdexcept>

namespace pangea {

namespace {

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

BufferPool::BufferPool(PoolConfig config, LocalityRegistry& registry, FileStore& files, LogicalClock& clock,
                       std::unique_ptr<PagingPolicy> policy)
    : config_(config),
      registry_(registry),
      files_(files),
      clock_(clock),
      policy_(policy ? std::move(policy) : make_policy(PolicyKind::DataAware)),
      arena_(config.capacity, config.allocator) {}

BufferPool::~BufferPool() = default;

void BufferPool::add_set(SetId set, std::size_t page_size) {
  std::lock_guard lock(mutex_);
  auto& sp = sets_[set];
  sp.page_size = page_size;
}

void BufferPool::add_disk_pages(SetId set, const SetFileIndex& index) {
  std::lock_guard lock(mutex_);
  auto& sp = pages_of(set);
  for (const auto& [seq, loc] : index.pages) {
    PageMeta m;
    m.size = sp.page_size;
    m.on_disk = true;
    sp.pages.emplace(seq, m);
    sp.next_seq = std::max(sp.next_seq, seq + 1);
  }
}

BufferPool::SetPages& BufferPool::pages_of(SetId set) {
  auto it = sets_.find(set);
  if (it == sets_.end()) fail(Errc::SetNotFound, "buffer pool: " + to_string(set));
  return it->second;
}

const BufferPool::SetPages& BufferPool::pages_of(SetId set) const {
  auto it = sets_.find(set);
  if (it == sets_.end()) fail(Errc::SetNotFound, "buffer pool: " + to_string(set));
  return it->second;
}

BufferPool::PageMeta& BufferPool::meta_of(PageKey key) {
  auto sit = sets_.find(key.set);
  if (sit == sets_.end()) fail(Errc::PageUnknown, to_string(key));
  auto pit = sit->second.pages.find(key.seq);
  if (pit == sit->second.pages.end()) fail(Errc::PageUnknown, to_string(key));
  return pit->second;
}

void BufferPool::index_unpinned(SetId set, SetPages& sp, std::uint64_t seq, const PageMeta& m) {
  sp.unpinned.emplace(m.last_access, seq);
  global_unpinned_.emplace(m.last_access, set, seq);
}

void BufferPool::unindex_unpinned(SetId set, SetPages& sp, std::uint64_t seq, const PageMeta& m) {
  sp.unpinned.erase({m.last_access, seq});
  global_unpinned_.erase({m.last_access, set, seq});
}

void BufferPool::emit(const PoolEvent& event) const {
  if (observer_) observer_(event);
}

std::size_t BufferPool::reserve_locked(std::size_t bytes, std::optional<SetId> requester) {
  for (;;) {
    if (used_ + bytes <= config_.capacity) {
      if (auto offset = arena_.allocate(bytes)) {
        used_ += bytes;
        return *offset;
      }
    }
    if (global_unpinned_.empty()) {
      fail(Errc::EvictionExhausted, "need " + std::to_string(bytes) + " bytes, every resident page is pinned");
    }
    EvictionDecision decision;
    try {
      decision = policy_->decide(*this, clock_.now(), requester);
    } catch (const Error& e) {
      if (e.code() == Errc::NoEvictablePage) fail(Errc::EvictionExhausted, e.what());
      throw;
    }
    ++stats_.eviction_decisions;
    for (const auto& key : decision.victim_pages) evict_locked(key);
  }
}

void BufferPool::write_page_locked(PageKey key, PageMeta& m, bool persist_meta) {
  const auto start = std::chrono::steady_clock::now();
  files_.append_page(key.set, key.seq, arena_.region(m.offset, m.size), persist_meta);
  if (config_.profile_io) registry_.record_write_time(key.set, seconds_since(start));
  m.on_disk = true;
  m.dirty = false;
  ++stats_.pages_written;
  emit({PoolEventKind::Write, key, false, true, m.pin_count});
}

std::uint64_t BufferPool::evict_locked(PageKey key) {
  auto& sp = pages_of(key.set);
  auto& m = meta_of(key);
  if (m.pin_count > 0) fail(Errc::PagePinned, to_string(key));
  if (!m.resident) fail(Errc::NotResident, to_string(key));

  const auto info = registry_.get(key.set);
  const bool alive = info.attributes.lifetime == Lifetime::Alive;
  const bool was_dirty = m.dirty;
  std::uint64_t written = 0;
  if (m.dirty && alive) {
    write_page_locked(key, m, info.attributes.durability == Durability::WriteThrough);
    written = m.size;
  } else if (m.dirty) {
    ++stats_.dirty_discarded;
  }

  unindex_unpinned(key.set, sp, key.seq, m);
  arena_.release(m.offset, m.size);
  used_ -= m.size;
  page_table_.erase(key);
  m.resident = false;
  m.dirty = false;
  --sp.resident;
  ++stats_.pages_evicted;
  emit({PoolEventKind::Evict, key, was_dirty, alive, 0});
  return written;
}

PageHandle BufferPool::allocate_page(SetId set) {
  std::lock_guard lock(mutex_);
  auto& sp = pages_of(set);
  const auto info = registry_.get(set);
  if (info.attributes.lifetime == Lifetime::LifetimeEnded) fail(Errc::LifetimeEnded, info.name);

  const std::size_t offset = reserve_locked(sp.page_size, set);
  const std::uint64_t seq = sp.next_seq++;
  PageMeta m;
  m.size = sp.page_size;
  m.pin_count = 1;
  m.resident = true;
  m.offset = offset;
  m.last_access = clock_.advance();
  auto region = arena_.region(offset, m.size);
  std::memset(region.data(), 0, region.size());

  sp.pages.emplace(seq, m);
  ++sp.resident;
  const PageKey key{set, seq};
  page_table_.emplace(key, offset);
  registry_.record_access(set, m.last_access);
  ++stats_.pages_allocated;
  emit({PoolEventKind::Allocate, key, false, true, 1});
  maybe_check();
  return {key, region};
}

PageHandle BufferPool::pin_locked(PageKey key) {
  auto& m = meta_of(key);
  auto& sp = pages_of(key.set);
  if (!m.resident) {
    if (!m.on_disk) fail(Errc::MissingImage, to_string(key) + " is neither resident nor on disk");
    const std::size_t offset = reserve_locked(m.size, key.set);
    const auto start = std::chrono::steady_clock::now();
    try {
      files_.read_page(key.set, key.seq, arena_.region(offset, m.size));
    } catch (...) {
      arena_.release(offset, m.size);
      used_ -= m.size;
      throw;
    }
    if (config_.profile_io) registry_.record_read_time(key.set, seconds_since(start));
    m.offset = offset;
    m.resident = true;
    ++sp.resident;
    page_table_.emplace(key, offset);
    ++stats_.pages_loaded;
    emit({PoolEventKind::Load, key, false, true, 0});
  } else if (m.pin_count == 0) {
    unindex_unpinned(key.set, sp, key.seq, m);
  }
  ++m.pin_count;
  m.last_access = clock_.advance();
  registry_.record_access(key.set, m.last_access);
  return {key, arena_.region(m.offset, m.size)};
}

PageHandle BufferPool::pin_page(PageKey key) {
  std::lock_guard lock(mutex_);
  auto handle = pin_locked(key);
  maybe_check();
  return handle;
}

void BufferPool::unpin_page(PageKey key, bool dirty_hint) {
  std::lock_guard lock(mutex_);
  auto& m = meta_of(key);
  if (m.pin_count == 0) fail(Errc::NotPinned, to_string(key));
  --m.pin_count;
  m.dirty = m.dirty || dirty_hint;
  emit({PoolEventKind::Unpin, key, dirty_hint, true, m.pin_count});
  if (m.pin_count == 0) {
    const auto info = registry_.get(key.set);
    if (m.dirty && info.attributes.durability == Durability::WriteThrough &&
        info.attributes.lifetime == Lifetime::Alive) {
      write_page_locked(key, m, true);
    }
    index_unpinned(key.set, pages_of(key.set), key.seq, m);
  }
  maybe_check();
}

std::uint64_t BufferPool::evict_page(PageKey key) {
  std::lock_guard lock(mutex_);
  const auto written = evict_locked(key);
  maybe_check();
  return written;
}

void BufferPool::flush_set(SetId set) {
  std::lock_guard lock(mutex_);
  auto& sp = pages_of(set);
  const auto info = registry_.get(set);
  if (info.attributes.lifetime == Lifetime::Alive) {
    for (auto& [seq, m] : sp.pages) {
      if (m.resident && m.dirty && m.pin_count == 0) write_page_locked({set, seq}, m, false);
    }
  }
  files_.persist_meta(set);
}

void BufferPool::remove_set(SetId set) {
  std::lock_guard lock(mutex_);
  auto it = sets_.find(set);
  if (it == sets_.end()) fail(Errc::SetNotFound, "buffer pool: " + to_string(set));
  auto& sp = it->second;
  for (const auto& [seq, m] : sp.pages) {
    if (m.pin_count > 0) fail(Errc::PagesStillPinned, to_string(PageKey{set, seq}));
  }
  for (auto& [seq, m] : sp.pages) {
    if (!m.resident) continue;
    unindex_unpinned(set, sp, seq, m);
    arena_.release(m.offset, m.size);
    used_ -= m.size;
    page_table_.erase({set, seq});
  }
  sets_.erase(it);
  maybe_check();
}

std::shared_ptr<ScanQueue> BufferPool::scan_queue(SetId set, std::size_t num_consumers) {
  std::vector<std::uint64_t> seqs;
  {
    std::lock_guard lock(mutex_);
    for (const auto& [seq, m] : pages_of(set).pages) seqs.push_back(seq);
  }
  return std::make_shared<ScanQueue>(*this, set, std::move(seqs), std::max<std::size_t>(1, config_.scan_prefetch),
                                     std::max<std::size_t>(1, num_consumers));
}

PageState BufferPool::page_state(PageKey key) const {
  std::lock_guard lock(mutex_);
  auto sit = sets_.find(key.set);
  if (sit == sets_.end()) fail(Errc::PageUnknown, to_string(key));
  auto pit = sit->second.pages.find(key.seq);
  if (pit == sit->second.pages.end()) fail(Errc::PageUnknown, to_string(key));
  const auto& m = pit->second;
  return {key, m.size, m.pin_count, m.dirty, m.last_access, m.resident, m.on_disk};
}

std::vector<std::uint64_t> BufferPool::page_seqs(SetId set) const {
  std::lock_guard lock(mutex_);
  std::vector<std::uint64_t> out;
  for (const auto& [seq, m] : pages_of(set).pages) out.push_back(seq);
  return out;
}

std::size_t BufferPool::resident_count(SetId set) const {
  std::lock_guard lock(mutex_);
  return pages_of(set).resident;
}

std::size_t BufferPool::used() const {
  std::lock_guard lock(mutex_);
  return used_;
}

PoolStats BufferPool::stats() const {
  std::lock_guard lock(mutex_);
  return stats_;
}

void BufferPool::set_policy(std::unique_ptr<PagingPolicy> policy) {
  std::lock_guard lock(mutex_);
  policy_ = std::move(policy);
}

PolicyKind BufferPool::policy_kind() const {
  std::lock_guard lock(mutex_);
  return policy_->kind();
}

void BufferPool::set_observer(std::function<void(const PoolEvent&)> observer) {
  std::lock_guard lock(mutex_);
  observer_ = std::move(observer);
}

void BufferPool::maybe_check() const {
  if (config_.check_invariants) check_invariants_locked();
}

void BufferPool::check_invariants() const {
  std::lock_guard lock(mutex_);
  check_invariants_locked();
}

void BufferPool::check_invariants_locked() const {
  std::size_t resident_bytes = 0;
  std::size_t resident_pages = 0;
  std::size_t unpinned = 0;
  for (const auto& [set, sp] : sets_) {
    std::size_t set_resident = 0;
    std::size_t set_unpinned = 0;
    for (const auto& [seq, m] : sp.pages) {
      const PageKey key{set, seq};
      if (m.pin_count > 0 && !m.resident) throw std::logic_error("pinned page not resident: " + to_string(key));
      if (m.dirty && !m.resident) throw std::logic_error("dirty page not resident: " + to_string(key));
      if (m.resident) {
        resident_bytes += m.size;
        ++set_resident;
        if (!page_table_.contains(key)) throw std::logic_error("resident page missing from table: " + to_string(key));
        if (m.pin_count == 0) {
          ++set_unpinned;
          if (!sp.unpinned.contains({m.last_access, seq})) {
            throw std::logic_error("unpinned page missing from index: " + to_string(key));
          }
        }
      }
    }
    if (set_resident != sp.resident) throw std::logic_error("resident count drift in " + to_string(set));
    if (set_unpinned != sp.unpinned.size()) throw std::logic_error("unpinned index drift in " + to_string(set));
    resident_pages += set_resident;
    unpinned += set_unpinned;
  }
  if (resident_bytes != used_) throw std::logic_error("used bytes differ from resident page sizes");
  if (used_ > config_.capacity) throw std::logic_error("used exceeds capacity");
  if (page_table_.size() != resident_pages) throw std::logic_error("page table holds non-resident pages");
  if (global_unpinned_.size() != unpinned) throw std::logic_error("global unpinned index drift");
}

// PagingView -----------------------------------------------------------------

std::vector<SetId> BufferPool::evictable_sets() const {
  std::vector<SetId> out;
  for (const auto& [set, sp] : sets_) {
    if (!sp.unpinned.empty()) out.push_back(set);
  }
  return out;
}

std::vector<SetId> BufferPool::populated_sets() const {
  std::vector<SetId> out;
  for (const auto& [set, sp] : sets_) {
    if (!sp.pages.empty()) out.push_back(set);
  }
  return out;
}

SetCostInputs BufferPool::set_inputs(SetId set) const { return cost_inputs(registry_.get(set)); }

std::size_t BufferPool::resident_unpinned(SetId set) const { return pages_of(set).unpinned.size(); }

std::size_t BufferPool::resident_pages(SetId set) const { return pages_of(set).resident; }

std::size_t BufferPool::total_pages(SetId set) const { return pages_of(set).pages.size(); }

std::vector<CandidatePage> BufferPool::candidates(SetId set, VictimOrder order, std::size_t limit) const {
  const auto& sp = pages_of(set);
  std::vector<CandidatePage> out;
  auto take = [&](const std::pair<Tick, std::uint64_t>& entry) {
    const auto& m = sp.pages.at(entry.second);
    out.push_back({{set, entry.second}, m.last_access, m.dirty, false});
    return out.size() < limit;
  };
  if (order == VictimOrder::Lru) {
    for (auto it = sp.unpinned.begin(); it != sp.unpinned.end() && take(*it); ++it) {
    }
  } else {
    for (auto it = sp.unpinned.rbegin(); it != sp.unpinned.rend() && take(*it); ++it) {
    }
  }
  return out;
}

std::size_t BufferPool::global_unpinned() const { return global_unpinned_.size(); }

std::vector<CandidatePage> BufferPool::global_candidates(VictimOrder order, std::size_t limit) const {
  std::vector<CandidatePage> out;
  auto take = [&](const GlobalEntry& entry) {
    const auto& [tick, set, seq] = entry;
    const auto& m = pages_of(set).pages.at(seq);
    out.push_back({{set, seq}, tick, m.dirty, false});
    return out.size() < limit;
  };
  if (order == VictimOrder::Lru) {
    for (auto it = global_unpinned_.begin(); it != global_unpinned_.end() && take(*it); ++it) {
    }
  } else {
    for (auto it = global_unpinned_.rbegin(); it != global_unpinned_.rend() && take(*it); ++it) {
    }
  }
  return out;
}

// ScanQueue ------------------------------------------------------------------

ScanQueue::ScanQueue(BufferPool& pool, SetId set, std::vector<std::uint64_t> seqs, std::size_t ring_capacity,
                     std::size_t num_consumers)
    : pool_(pool), set_(set), seqs_(std::move(seqs)), num_consumers_(num_consumers), ring_(ring_capacity) {}

ScanQueue::~ScanQueue() {
  std::lock_guard lock(mutex_);
  for (; count_ > 0; --count_) {
    try {
      pool_.unpin_page(*ring_[head_], false);
    } catch (...) {
    }
    head_ = (head_ + 1) % ring_.size();
  }
}

std::optional<PageHandle> ScanQueue::next() {
  std::lock_guard lock(mutex_);
  while (count_ < ring_.size() && next_to_pin_ < seqs_.size()) {
    auto handle = pool_.pin_page({set_, seqs_[next_to_pin_]});
    ++next_to_pin_;
    ring_[(head_ + count_) % ring_.size()] = handle;
    ++count_;
  }
  if (count_ == 0) return std::nullopt;
  auto out = ring_[head_];
  ring_[head_].reset();
  head_ = (head_ + 1) % ring_.size();
  --count_;
  return out;
}

void ScanQueue::release(const PageHandle& page) { pool_.unpin_page(page, false); }

}  // namespace pangea
