#include <algorithm>
#include <bit>
#include <cstring>
#include <stdexcept>
#include <limits>
#include <unordered_map>

#include "pangea/services.hpp"

namespace pangea {

namespace {

// In-page hash table. Everything lives inside the page so that a spilled page
// is a self-describing partial aggregate.
//
//   header   magic, bucket count, heap start/top, entry count, used bytes,
//            slab class count, free-list heads per class
//   buckets  u32 offset of the first entry in each chain, 0 = empty
//   heap     slab chunks of 32 << class bytes
//
// Entry: next u32 | key_len u32 | val_len u32 | class u32 | hash u64 | key | value
class HashPage {
 public:
  static constexpr std::uint32_t kMagic = 0x50484750;  // "PGHP"
  static constexpr std::size_t kMaxClasses = 32;
  static constexpr std::size_t kHeaderBytes = 32 + 4 * kMaxClasses;
  static constexpr std::size_t kEntryHeader = 24;
  static constexpr std::size_t kMinChunk = 32;

  explicit HashPage(std::span<std::byte> page) : p_(page.data()), size_(page.size()) {}

  static std::size_t bucket_count_for(std::size_t page_size) {
    std::size_t b = std::bit_floor(std::max<std::size_t>(page_size / 256, 8));
    return b;
  }

  static std::size_t heap_start_for(std::size_t page_size) {
    return (kHeaderBytes + 4 * bucket_count_for(page_size) + 7) & ~std::size_t{7};
  }

  /// Largest chunk the page offers, which bounds a single entry.
  static std::size_t max_chunk_for(std::size_t page_size) {
    const std::size_t heap = page_size - heap_start_for(page_size);
    return heap < kMinChunk ? 0 : std::bit_floor(heap);
  }

  void init() {
    std::memset(p_, 0, heap_start_for(size_));
    put(0, kMagic);
    put(4, static_cast<std::uint32_t>(bucket_count_for(size_)));
    put(8, static_cast<std::uint32_t>(heap_start_for(size_)));
    put(12, static_cast<std::uint32_t>(heap_start_for(size_)));
    put(16, 0);
    put(20, 0);
    const std::size_t max_chunk = max_chunk_for(size_);
    put(24, static_cast<std::uint32_t>(std::countr_zero(max_chunk / kMinChunk) + 1));
  }

  bool valid() const { return size_ >= kHeaderBytes && get(0) == kMagic; }
  std::uint32_t entries() const { return get(16); }
  std::uint32_t used() const { return get(20); }

  std::uint32_t find(std::uint64_t hash, std::span<const std::byte> key) const {
    for (std::uint32_t e = get(bucket_slot(hash)); e != 0; e = get(e)) {
      if (hash_at(e) == hash && key_len(e) == key.size() &&
          std::memcmp(p_ + e + kEntryHeader, key.data(), key.size()) == 0) {
        return e;
      }
    }
    return 0;
  }

  bool insert(std::uint64_t hash, std::span<const std::byte> key, std::span<const std::byte> value) {
    const std::uint32_t e = alloc(kEntryHeader + key.size() + value.size());
    if (e == 0) return false;
    put(e + 4, static_cast<std::uint32_t>(key.size()));
    put(e + 8, static_cast<std::uint32_t>(value.size()));
    std::memcpy(p_ + e + 16, &hash, 8);
    if (!key.empty()) std::memcpy(p_ + e + kEntryHeader, key.data(), key.size());
    if (!value.empty()) std::memcpy(p_ + e + kEntryHeader + key.size(), value.data(), value.size());
    const std::size_t slot = bucket_slot(hash);
    put(e, get(slot));
    put(slot, e);
    put(16, entries() + 1);
    return true;
  }

  /// Replaces the value; false (entry untouched) when there is no room.
  bool assign(std::uint32_t e, std::span<const std::byte> value) {
    const std::size_t klen = key_len(e);
    if (kEntryHeader + klen + value.size() <= chunk_size(e)) {
      put(e + 8, static_cast<std::uint32_t>(value.size()));
      if (!value.empty()) std::memmove(p_ + e + kEntryHeader + klen, value.data(), value.size());
      return true;
    }
    const std::vector<std::byte> key(p_ + e + kEntryHeader, p_ + e + kEntryHeader + klen);
    const std::uint64_t hash = hash_at(e);
    const std::uint32_t fresh = alloc(kEntryHeader + klen + value.size());
    if (fresh == 0) return false;
    free_chunk_after_unlink(e);
    put(fresh + 4, static_cast<std::uint32_t>(klen));
    put(fresh + 8, static_cast<std::uint32_t>(value.size()));
    std::memcpy(p_ + fresh + 16, &hash, 8);
    std::memcpy(p_ + fresh + kEntryHeader, key.data(), klen);
    if (!value.empty()) std::memcpy(p_ + fresh + kEntryHeader + klen, value.data(), value.size());
    const std::size_t slot = bucket_slot(hash);
    put(fresh, get(slot));
    put(slot, fresh);
    put(16, entries() + 1);
    return true;
  }

  void remove(std::uint32_t e) { free_chunk_after_unlink(e); }

  template <typename Fn>
  void for_each(Fn&& fn) const {
    const std::uint32_t buckets = get(4);
    for (std::uint32_t b = 0; b < buckets; ++b) {
      for (std::uint32_t e = get(kHeaderBytes + 4 * b); e != 0; e = get(e)) fn(e);
    }
  }

  std::uint64_t hash_at(std::uint32_t e) const {
    std::uint64_t h;
    std::memcpy(&h, p_ + e + 16, 8);
    return h;
  }
  std::uint32_t key_len(std::uint32_t e) const { return get(e + 4); }
  std::span<const std::byte> key(std::uint32_t e) const { return {p_ + e + kEntryHeader, key_len(e)}; }
  std::span<const std::byte> value(std::uint32_t e) const {
    return {p_ + e + kEntryHeader + key_len(e), get(e + 8)};
  }

 private:
  std::uint32_t get(std::size_t at) const {
    std::uint32_t v;
    std::memcpy(&v, p_ + at, 4);
    return v;
  }
  void put(std::size_t at, std::uint32_t v) { std::memcpy(p_ + at, &v, 4); }

  std::size_t bucket_slot(std::uint64_t hash) const {
    return kHeaderBytes + 4 * (splitmix64(hash) & (get(4) - 1));
  }
  std::size_t chunk_size(std::uint32_t e) const { return kMinChunk << get(e + 12); }

  std::uint32_t alloc(std::size_t bytes) {
    const std::uint32_t classes = get(24);
    std::uint32_t cls = 0;
    while (cls < classes && (kMinChunk << cls) < bytes) ++cls;
    if (cls == classes) return 0;
    for (std::uint32_t c = cls; c < classes; ++c) {
      const std::uint32_t head = get(32 + 4 * c);
      if (head != 0) {
        put(32 + 4 * c, get(head));
        put(head + 12, c);
        put(20, used() + static_cast<std::uint32_t>(kMinChunk << c));
        return head;
      }
    }
    const std::size_t chunk = kMinChunk << cls;
    const std::uint32_t top = get(12);
    if (top + chunk > size_) return 0;
    put(12, static_cast<std::uint32_t>(top + chunk));
    put(top + 12, cls);
    put(20, used() + static_cast<std::uint32_t>(chunk));
    return top;
  }

  void free_chunk_after_unlink(std::uint32_t e) {
    const std::size_t slot = bucket_slot(hash_at(e));
    std::size_t link = slot;
    while (get(link) != e) {
      if (get(link) == 0) throw std::logic_error("hash page entry missing from its chain");
      link = get(link);
    }
    put(link, get(e));
    const std::uint32_t cls = get(e + 12);
    put(e, get(32 + 4 * cls));
    put(32 + 4 * cls, e);
    put(20, used() - static_cast<std::uint32_t>(kMinChunk << cls));
    put(16, entries() - 1);
  }

  std::byte* p_;
  std::size_t size_;
};

bool cannot_allocate(const Error& e) {
  return e.code() == Errc::EvictionExhausted || e.code() == Errc::PolicyBlocked;
}

}  // namespace

Combine int64_sum() {
  return [](std::span<const std::byte> acc, std::span<const std::byte> in, std::vector<std::byte>& out) {
    out = encode_int64(decode_int64(acc) + decode_int64(in));
  };
}

std::vector<std::byte> encode_int64(std::int64_t value) {
  std::vector<std::byte> out(8);
  const auto u = static_cast<std::uint64_t>(value);
  for (int i = 0; i < 8; ++i) out[i] = static_cast<std::byte>(u >> (8 * i));
  return out;
}

std::int64_t decode_int64(std::span<const std::byte> bytes) {
  if (bytes.size() != 8) fail(Errc::SizeMismatch, "int64 value must be 8 bytes");
  std::uint64_t u = 0;
  for (int i = 0; i < 8; ++i) u |= std::to_integer<std::uint64_t>(bytes[i]) << (8 * i);
  return static_cast<std::int64_t>(u);
}

// VirtualHashBuffer ----------------------------------------------------------------

VirtualHashBuffer::VirtualHashBuffer(Engine& engine, SetId set, Combine combine, HashBufferOptions options)
    : engine_(engine), set_(set), combine_(std::move(combine)), options_(options) {
  page_size_ = engine.set_info(set).page_size;
  if (options.root_partitions == 0) fail(Errc::InvalidArgs, "hash buffer needs at least one root partition");
  if (options.max_split_depth > 24) fail(Errc::InvalidArgs, "split depth is limited to 24");
  if (page_size_ < 1024 || page_size_ > std::numeric_limits<std::uint32_t>::max()) {
    fail(Errc::InvalidArgs, "hash pages must be between 1 KiB and 4 GiB");
  }
  max_entry_bytes_ = HashPage::max_chunk_for(page_size_);
  engine.infer_attributes(set, ServiceKind::Hash);
  roots_.reserve(options.root_partitions);
  partitions_.reserve(options.root_partitions);
  for (std::size_t r = 0; r < options.root_partitions; ++r) {
    auto root = std::make_unique<Root>();
    root->directory.push_back(r);
    root->members.push_back(r);
    roots_.push_back(std::move(root));
    partitions_.push_back(Partition{r, 0, 0, std::nullopt, {}});
  }
  // One page per root partition up front; roots the pool cannot supply yet
  // get their page on first insert.
  for (auto& p : partitions_) {
    try {
      p.page = fresh_page();
    } catch (const Error& e) {
      if (!cannot_allocate(e)) throw;
      break;
    }
  }
}

VirtualHashBuffer::~VirtualHashBuffer() {
  for (auto& p : partitions_) {
    if (!p.page) continue;
    try {
      engine_.unpin_page(*p.page, false);
    } catch (...) {
    }
  }
  try {
    if (engine_.registry().contains(set_)) engine_.release_service(set_, ServiceKind::Hash);
  } catch (...) {
  }
}

std::uint64_t VirtualHashBuffer::hash_of(std::span<const std::byte> key) const noexcept {
  return stable_hash(key, options_.seed);
}

std::size_t VirtualHashBuffer::root_of(std::uint64_t hash) const noexcept {
  return static_cast<std::size_t>((hash >> 32) % roots_.size());
}

std::size_t VirtualHashBuffer::partition_of(std::uint64_t hash) const noexcept {
  const Root& root = *roots_[root_of(hash)];
  const std::uint64_t mask = (std::uint64_t{1} << root.global_depth) - 1;
  return root.directory[hash & mask];
}

VirtualHashBuffer::Attempt VirtualHashBuffer::try_upsert(Partition& p, std::uint64_t hash,
                                                         std::span<const std::byte> key,
                                                         std::span<const std::byte> value) {
  if (!p.page) return Attempt::Full;
  HashPage page(p.page->bytes);
  const std::uint32_t e = page.find(hash, key);
  if (e == 0) return page.insert(hash, key, value) ? Attempt::Done : Attempt::Full;
  std::vector<std::byte> merged;
  combine_(page.value(e), value, merged);
  if (HashPage::kEntryHeader + key.size() + merged.size() > max_entry_bytes_) {
    fail(Errc::KeyLargerThanPage, "aggregated entry of " + std::to_string(key.size() + merged.size()) +
                                      " bytes exceeds the page");
  }
  return page.assign(e, merged) ? Attempt::Done : Attempt::Full;
}

void VirtualHashBuffer::upsert(std::span<const std::byte> key, std::span<const std::byte> value) {
  if (HashPage::kEntryHeader + key.size() + value.size() > max_entry_bytes_) {
    fail(Errc::KeyLargerThanPage, "entry of " + std::to_string(key.size() + value.size()) +
                                      " bytes exceeds the largest in-page chunk of " +
                                      std::to_string(max_entry_bytes_));
  }
  const std::uint64_t hash = hash_of(key);
  {
    std::shared_lock shared(structure_);
    if (finalized_) fail(Errc::InvalidArgs, "hash buffer already finalized");
    std::lock_guard root_lock(roots_[root_of(hash)]->mutex);
    if (try_upsert(partitions_[partition_of(hash)], hash, key, value) == Attempt::Done) return;
  }
  std::unique_lock exclusive(structure_);
  if (finalized_) fail(Errc::InvalidArgs, "hash buffer already finalized");
  for (;;) {
    const std::size_t p = partition_of(hash);
    if (try_upsert(partitions_[p], hash, key, value) == Attempt::Done) return;
    make_room(p);
  }
}

std::optional<std::vector<std::byte>> VirtualHashBuffer::find(std::span<const std::byte> key) const {
  const std::uint64_t hash = hash_of(key);
  std::shared_lock shared(structure_);
  std::lock_guard root_lock(roots_[root_of(hash)]->mutex);
  const Partition& p = partitions_[partition_of(hash)];
  if (!p.page) return std::nullopt;
  HashPage page(p.page->bytes);
  const std::uint32_t e = page.find(hash, key);
  if (e == 0) return std::nullopt;
  const auto v = page.value(e);
  return std::vector<std::byte>(v.begin(), v.end());
}

PageHandle VirtualHashBuffer::fresh_page() {
  PageHandle handle = engine_.allocate_page(set_);
  HashPage(handle.bytes).init();
  return handle;
}

void VirtualHashBuffer::make_room(std::size_t partition) {
  if (!partitions_[partition].page) {
    for (;;) {
      try {
        partitions_[partition].page = fresh_page();
        return;
      } catch (const Error& e) {
        if (!cannot_allocate(e)) throw;
        if (!spill_one()) throw;
      }
    }
  }
  if (partitions_[partition].depth < options_.max_split_depth) {
    try {
      split(partition, fresh_page());
      return;
    } catch (const Error& e) {
      if (!cannot_allocate(e)) throw;
    }
  }
  if (!spill_one()) fail(Errc::EvictionExhausted, "hash buffer has nothing left to spill");
}

void VirtualHashBuffer::split(std::size_t partition, PageHandle fresh) {
  const std::size_t root_index = partitions_[partition].root;
  const unsigned d = partitions_[partition].depth;
  const std::uint32_t child_bits = partitions_[partition].bits | (std::uint32_t{1} << d);
  partitions_[partition].depth = d + 1;
  const std::size_t child = partitions_.size();
  partitions_.push_back(Partition{root_index, d + 1, child_bits, fresh, {}});

  Root& root = *roots_[root_index];
  if (d + 1 > root.global_depth) {
    const std::vector<std::size_t> copy = root.directory;
    root.directory.insert(root.directory.end(), copy.begin(), copy.end());
    ++root.global_depth;
  }
  const std::uint32_t mask = (std::uint32_t{1} << (d + 1)) - 1;
  for (std::size_t i = 0; i < root.directory.size(); ++i) {
    if ((i & mask) == child_bits) root.directory[i] = child;
  }
  root.members.push_back(child);

  HashPage src(partitions_[partition].page->bytes);
  HashPage dst(partitions_[child].page->bytes);
  std::vector<std::uint32_t> moving;
  src.for_each([&](std::uint32_t e) {
    if ((src.hash_at(e) >> d) & 1) moving.push_back(e);
  });
  for (std::uint32_t e : moving) {
    if (!dst.insert(src.hash_at(e), src.key(e), src.value(e))) {
      throw std::logic_error("split child page cannot hold its share of the parent");
    }
    src.remove(e);
  }
  events_.push_back({HashEvent::Kind::Split, child, d + 1});
  ++stats_.splits;
}

bool VirtualHashBuffer::spill_one() {
  std::optional<std::size_t> victim;
  std::uint32_t most = 0;
  for (std::size_t i = 0; i < partitions_.size(); ++i) {
    if (!partitions_[i].page) continue;
    const std::uint32_t used = HashPage(partitions_[i].page->bytes).used();
    if (!victim || used > most) {
      victim = i;
      most = used;
    }
  }
  if (!victim) return false;
  Partition& p = partitions_[*victim];
  const PageKey key = p.page->key;
  p.page.reset();
  if (most == 0) {
    // Nothing to keep: hand the empty page back without writing it.
    engine_.unpin_page(key, false);
    try {
      engine_.evict_page(key);
    } catch (const Error& e) {
      if (e.code() != Errc::NotResident) throw;
    }
    return true;
  }
  engine_.unpin_page(key, true);
  try {
    engine_.evict_page(key);
  } catch (const Error& e) {
    // Another pool user may already have evicted (and written) it.
    if (e.code() != Errc::NotResident) throw;
  }
  p.spills.push_back(key.seq);
  events_.push_back({HashEvent::Kind::Spill, *victim, p.depth});
  ++stats_.spills;
  return true;
}

AggregateCursor VirtualHashBuffer::finalize() {
  std::unique_lock exclusive(structure_);
  if (finalized_) fail(Errc::InvalidArgs, "hash buffer already finalized");
  finalized_ = true;
  return AggregateCursor(*this);
}

std::vector<KeyValue> VirtualHashBuffer::drain_root(std::size_t root_index) {
  std::unique_lock exclusive(structure_);
  const Root& root = *roots_[root_index];
  bool spilled = false;
  for (std::size_t m : root.members) spilled = spilled || !partitions_[m].spills.empty();

  std::vector<KeyValue> out;
  if (!spilled) {
    for (std::size_t m : root.members) {
      Partition& p = partitions_[m];
      if (!p.page) continue;
      HashPage page(p.page->bytes);
      page.for_each([&](std::uint32_t e) {
        const auto k = page.key(e);
        const auto v = page.value(e);
        out.push_back({std::string(as_string_view(k)), std::vector<std::byte>(v.begin(), v.end())});
      });
      engine_.unpin_page(*p.page, false);
      p.page.reset();
    }
    return out;
  }

  std::unordered_map<std::string, std::vector<std::byte>> merged;
  std::vector<std::byte> tmp;
  auto absorb = [&](const HashPage& page) {
    page.for_each([&](std::uint32_t e) {
      const auto v = page.value(e);
      auto [it, fresh] = merged.try_emplace(std::string(as_string_view(page.key(e))));
      if (fresh) {
        it->second.assign(v.begin(), v.end());
      } else {
        combine_(it->second, v, tmp);
        it->second.swap(tmp);
      }
    });
  };
  // Live pages first, so their memory is free before spilled pages load.
  for (std::size_t m : root.members) {
    Partition& p = partitions_[m];
    if (!p.page) continue;
    absorb(HashPage(p.page->bytes));
    engine_.unpin_page(*p.page, false);
    p.page.reset();
  }
  for (std::size_t m : root.members) {
    for (std::uint64_t seq : partitions_[m].spills) {
      std::optional<PageHandle> pinned;
      while (!pinned) {
        try {
          pinned = engine_.pin_page({set_, seq});
        } catch (const Error& e) {
          // Later roots still hold pages; push one of them out.
          if (!cannot_allocate(e) || !spill_one()) throw;
        }
      }
      const PageHandle h = *pinned;
      HashPage page(h.bytes);
      if (!page.valid()) {
        engine_.unpin_page(h, false);
        fail(Errc::CorruptMeta, "spilled hash page " + to_string(h.key) + " is not a hash page");
      }
      absorb(page);
      engine_.unpin_page(h, false);
      ++stats_.spill_pages_read;
    }
  }
  out.reserve(merged.size());
  for (auto& [k, v] : merged) out.push_back({k, std::move(v)});
  return out;
}

std::optional<KeyValue> AggregateCursor::next() {
  while (pos_ >= batch_.size()) {
    if (root_ >= buffer_->roots_.size()) return std::nullopt;
    batch_ = buffer_->drain_root(root_++);
    pos_ = 0;
  }
  return std::move(batch_[pos_++]);
}

HashBufferStats VirtualHashBuffer::stats() const {
  std::shared_lock shared(structure_);
  HashBufferStats s = stats_;
  s.partitions = partitions_.size();
  return s;
}

std::vector<HashEvent> VirtualHashBuffer::events() const {
  std::shared_lock shared(structure_);
  return events_;
}

bool VirtualHashBuffer::verify_partitions() const {
  std::unique_lock exclusive(structure_);
  for (std::size_t i = 0; i < partitions_.size(); ++i) {
    const Partition& p = partitions_[i];
    if (!p.page) continue;
    HashPage page(p.page->bytes);
    bool ok = page.valid();
    page.for_each([&](std::uint32_t e) {
      const std::uint64_t h = page.hash_at(e);
      if (h != hash_of(page.key(e)) || partition_of(h) != i) ok = false;
    });
    if (!ok) return false;
  }
  return true;
}

}  // namespace pangea
