#pragma once

// Data-processing services layered on the buffer pool. Each service attaches
// itself to the locality sets it touches, which is how set attributes (and so
// the paging strategy) get inferred at runtime.
//
// Records are opaque byte strings framed as a u32 little-endian length
// followed by the payload. A record never spans frames; a zero length (or
// fewer than four bytes left) ends a frame.

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pangea/engine.hpp"

namespace pangea {

inline constexpr std::size_t kRecordPrefix = 4;

/// Records of `record_size` payload bytes that fit in one frame.
constexpr std::size_t records_per_frame(std::size_t frame_size, std::size_t record_size) noexcept {
  return frame_size / (record_size + kRecordPrefix);
}

/// Appends one framed record at `cursor`; false when it does not fit.
bool append_record(std::span<std::byte> frame, std::size_t& cursor, std::span<const std::byte> record) noexcept;

/// Walks the records of one page, frame by frame.
class PageRecordReader {
 public:
  PageRecordReader(std::span<const std::byte> page, std::size_t frame_size) noexcept;
  std::optional<std::span<const std::byte>> next() noexcept;

 private:
  std::span<const std::byte> page_;
  std::size_t frame_size_;
  std::size_t frame_start_ = 0;
  std::size_t cursor_ = 0;
};

// Sequential write / read ----------------------------------------------------

class SequentialWriter {
 public:
  SequentialWriter(Engine& engine, SetId set);
  ~SequentialWriter();

  SequentialWriter(const SequentialWriter&) = delete;
  SequentialWriter& operator=(const SequentialWriter&) = delete;
  SequentialWriter(SequentialWriter&& other) noexcept;
  SequentialWriter& operator=(SequentialWriter&&) = delete;

  void add_object(std::span<const std::byte> record);
  void add_object(std::string_view record) { add_object(as_bytes(record)); }
  /// Unpins the current page and detaches the service. Idempotent.
  void close();

  std::uint64_t records_written() const noexcept { return records_; }

 private:
  Engine* engine_;
  SetId set_;
  std::size_t page_size_;
  std::optional<PageHandle> page_;
  std::size_t cursor_ = 0;
  std::uint64_t records_ = 0;
  bool closed_ = false;
};

/// Consumes pages from a shared scan queue and yields their records. Several
/// iterators over one set partition its records between them.
class RecordIterator {
 public:
  struct Session;

  RecordIterator(std::shared_ptr<Session> session, std::size_t frame_size);
  ~RecordIterator();

  RecordIterator(RecordIterator&&) noexcept;
  RecordIterator& operator=(RecordIterator&&) noexcept;
  RecordIterator(const RecordIterator&) = delete;
  RecordIterator& operator=(const RecordIterator&) = delete;

  /// Next record; the span stays valid until the following call.
  std::optional<std::span<const std::byte>> next();
  std::uint64_t pages_consumed() const noexcept { return pages_; }

 private:
  void release_current();

  std::shared_ptr<Session> session_;
  std::size_t frame_size_ = 0;
  std::optional<PageHandle> page_;
  std::optional<PageRecordReader> reader_;
  std::uint64_t pages_ = 0;
};

std::vector<RecordIterator> seq_get_iterators(Engine& engine, SetId set, std::size_t num_threads);

/// Reads every record of a set in order on the calling thread.
std::vector<std::string> read_all_records(Engine& engine, SetId set);

// Shuffle -----------------------------------------------------------------------

inline constexpr std::size_t kDefaultSmallPageSize = 4 * kMiB;

/// Splits pinned host pages of one partition's set into small pages handed to
/// concurrent writers. A host page is unpinned once all its small pages have
/// been claimed and given back.
class SmallPageAllocator {
 public:
  struct SmallPage {
    std::uint64_t host_seq = 0;
    std::span<std::byte> region;
  };

  SmallPageAllocator(Engine& engine, SetId set, std::size_t small_page_size);
  ~SmallPageAllocator();

  SmallPage claim();
  void release(const SmallPage& page);
  /// Unpins the partially claimed host page once nothing is outstanding.
  void finish();

  std::size_t small_page_size() const noexcept { return small_page_size_; }
  SetId set() const noexcept { return set_; }

 private:
  struct Host {
    PageHandle handle;
    std::size_t claimed = 0;
    std::size_t released = 0;
  };

  void maybe_unpin(std::uint64_t seq);

  Engine& engine_;
  SetId set_;
  std::size_t small_page_size_;
  std::size_t per_host_;
  std::mutex mutex_;
  std::map<std::uint64_t, Host> hosts_;
  std::optional<std::uint64_t> current_;
  bool finished_ = false;
};

/// One writer's view of one partition.
class VirtualShuffleBuffer {
 public:
  VirtualShuffleBuffer(SmallPageAllocator& allocator, std::size_t writer_id, std::size_t partition_id);
  ~VirtualShuffleBuffer();

  VirtualShuffleBuffer(VirtualShuffleBuffer&&) noexcept;
  VirtualShuffleBuffer& operator=(VirtualShuffleBuffer&&) = delete;
  VirtualShuffleBuffer(const VirtualShuffleBuffer&) = delete;
  VirtualShuffleBuffer& operator=(const VirtualShuffleBuffer&) = delete;

  void add_object(std::span<const std::byte> record);
  void add_object(std::string_view record) { add_object(as_bytes(record)); }
  void close();

  std::size_t writer_id() const noexcept { return writer_id_; }
  std::size_t partition_id() const noexcept { return partition_id_; }

 private:
  SmallPageAllocator* allocator_;
  std::size_t writer_id_;
  std::size_t partition_id_;
  std::optional<SmallPageAllocator::SmallPage> current_;
  std::size_t cursor_ = 0;
};

using KeyExtractor = std::function<std::span<const std::byte>(std::span<const std::byte>)>;

/// Whole record as key.
std::span<const std::byte> whole_record_key(std::span<const std::byte> record) noexcept;

std::size_t shuffle_partition(std::span<const std::byte> key, std::size_t num_partitions,
                              std::uint64_t seed = 0) noexcept;

struct ShuffleOptions {
  std::size_t page_size = 64 * kMiB;
  std::size_t small_page_size = kDefaultSmallPageSize;
  Durability durability = Durability::WriteBack;
  std::uint64_t seed = 0;
};

/// One locality set per partition, written concurrently through virtual
/// shuffle buffers and read back with the sequential read service.
class ShuffleService {
 public:
  ShuffleService(Engine& engine, std::string name, std::size_t num_partitions, ShuffleOptions options = {});
  /// Shuffles into existing, equally sized sets; options.page_size is ignored.
  ShuffleService(Engine& engine, const std::vector<SetId>& partition_sets, ShuffleOptions options = {});
  ~ShuffleService();

  ShuffleService(const ShuffleService&) = delete;
  ShuffleService& operator=(const ShuffleService&) = delete;

  VirtualShuffleBuffer get_virtual_shuffle_buffer(std::size_t writer_id, std::size_t partition_id);
  std::size_t partition_for(std::span<const std::byte> key) const noexcept {
    return shuffle_partition(key, partitions_.size(), options_.seed);
  }
  /// Unpins outstanding host pages and detaches the write service.
  void finish();

  std::size_t num_partitions() const noexcept { return partitions_.size(); }
  SetId partition_set(std::size_t partition) const { return partitions_.at(partition).set; }
  /// Partition sets that have at least one data file on disk.
  std::size_t spill_file_count() const;

 private:
  struct Partition {
    SetId set;
    std::unique_ptr<SmallPageAllocator> allocator;
  };

  void adopt(SetId set);

  Engine& engine_;
  ShuffleOptions options_;
  std::vector<Partition> partitions_;
  bool finished_ = false;
};

/// Routes records of one writer thread to its virtual shuffle buffers.
class ShuffleWriter {
 public:
  ShuffleWriter(ShuffleService& service, std::size_t writer_id, KeyExtractor key = whole_record_key);

  void write(std::span<const std::byte> record);
  void write(std::string_view record) { write(as_bytes(record)); }
  void close();

 private:
  ShuffleService& service_;
  KeyExtractor key_;
  std::vector<VirtualShuffleBuffer> buffers_;
};

// Hash aggregation -------------------------------------------------------------

/// Folds `incoming` into `accumulated`, writing the result to `out`. Must be
/// associative and commutative.
using Combine = std::function<void(std::span<const std::byte> accumulated, std::span<const std::byte> incoming,
                                   std::vector<std::byte>& out)>;

Combine int64_sum();
std::vector<std::byte> encode_int64(std::int64_t value);
std::int64_t decode_int64(std::span<const std::byte> bytes);

struct HashBufferOptions {
  std::size_t root_partitions = 200;
  std::uint64_t seed = 0;
  unsigned max_split_depth = 20;
};

struct HashEvent {
  enum class Kind { Split, Spill } kind;
  std::size_t partition = 0;
  unsigned depth = 0;

  friend bool operator==(const HashEvent&, const HashEvent&) = default;
};

struct HashBufferStats {
  std::size_t partitions = 0;
  std::size_t splits = 0;
  std::size_t spills = 0;
  std::size_t spill_pages_read = 0;
};

struct KeyValue {
  std::string key;
  std::vector<std::byte> value;
};

class VirtualHashBuffer;

/// Yields each aggregated key exactly once, root partition by root partition.
class AggregateCursor {
 public:
  explicit AggregateCursor(VirtualHashBuffer& buffer) : buffer_(&buffer) {}
  std::optional<KeyValue> next();

 private:
  VirtualHashBuffer* buffer_;
  std::size_t root_ = 0;
  std::vector<KeyValue> batch_;
  std::size_t pos_ = 0;
};

/// Hash aggregation where every partition is one buffer-pool page holding its
/// own hash table and payloads. Full pages split into child partitions while
/// the pool can supply pages; after that the largest partition is spilled to
/// disk as a partial aggregate and re-aggregated at finalize.
class VirtualHashBuffer {
 public:
  VirtualHashBuffer(Engine& engine, SetId set, Combine combine, HashBufferOptions options = {});
  ~VirtualHashBuffer();

  VirtualHashBuffer(const VirtualHashBuffer&) = delete;
  VirtualHashBuffer& operator=(const VirtualHashBuffer&) = delete;

  void upsert(std::span<const std::byte> key, std::span<const std::byte> value);
  void upsert(std::string_view key, std::span<const std::byte> value) { upsert(as_bytes(key), value); }
  /// In-memory partial aggregate only; spilled partials are not consulted.
  std::optional<std::vector<std::byte>> find(std::span<const std::byte> key) const;

  AggregateCursor finalize();

  HashBufferStats stats() const;
  std::vector<HashEvent> events() const;
  /// Checks that every in-memory key sits in the partition its hash selects.
  bool verify_partitions() const;
  std::size_t max_entry_bytes() const noexcept { return max_entry_bytes_; }

 private:
  friend class AggregateCursor;
  struct Partition {
    std::size_t root = 0;
    unsigned depth = 0;
    std::uint32_t bits = 0;
    std::optional<PageHandle> page;
    std::vector<std::uint64_t> spills;
  };
  struct Root {
    unsigned global_depth = 0;
    std::vector<std::size_t> directory;
    std::vector<std::size_t> members;
    std::mutex mutex;
  };

  std::uint64_t hash_of(std::span<const std::byte> key) const noexcept;
  std::size_t root_of(std::uint64_t hash) const noexcept;
  std::size_t partition_of(std::uint64_t hash) const noexcept;

  enum class Attempt { Done, Full };
  Attempt try_upsert(Partition& p, std::uint64_t hash, std::span<const std::byte> key,
                     std::span<const std::byte> value);
  void make_room(std::size_t partition);
  void split(std::size_t partition, PageHandle fresh);
  bool spill_one();
  PageHandle fresh_page();
  std::vector<KeyValue> drain_root(std::size_t root);

  Engine& engine_;
  SetId set_;
  Combine combine_;
  HashBufferOptions options_;
  std::size_t page_size_;
  std::size_t max_entry_bytes_;
  mutable std::shared_mutex structure_;
  std::vector<std::unique_ptr<Root>> roots_;
  std::vector<Partition> partitions_;
  std::vector<HashEvent> events_;
  HashBufferStats stats_;
  bool finalized_ = false;
};

}  // namespace pangea
