#pragma once

// Per-set persistent storage. Each locality set owns one data file per stripe
// directory (`<set_id>.data.<stripe>`) holding fixed-size page images, and one
// meta file (`<set_id>.meta`, in the first stripe) indexing where each page
// lives. Every disk byte the engine moves goes through here and is counted.
//
// Meta layout, little-endian:
//   "PGMF" | version u32 | set_id u64 | page_size u64 | count u64 |
//   count x { page_seq u64 | stripe u32 | offset u64 } | crc32(body) u32
// where body is everything between the magic and the checksum.

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <unordered_map>
#include <vector>

#include "pangea/common.hpp"

namespace pangea {

inline constexpr std::uint32_t kMetaVersion = 1;

struct PageLocation {
  std::uint32_t stripe = 0;
  std::uint64_t offset = 0;

  friend bool operator==(const PageLocation&, const PageLocation&) = default;
};

/// Decoded meta file contents.
struct SetFileIndex {
  SetId set_id;
  std::uint64_t page_size = 0;
  std::map<std::uint64_t, PageLocation> pages;

  friend bool operator==(const SetFileIndex&, const SetFileIndex&) = default;
};

std::vector<std::byte> encode_meta(const SetFileIndex& index);
SetFileIndex decode_meta(std::span<const std::byte> bytes);

struct IoCounters {
  std::uint64_t read_bytes = 0;
  std::uint64_t write_bytes = 0;
  std::uint64_t page_reads = 0;
  std::uint64_t page_writes = 0;
};

class FileStore {
 public:
  explicit FileStore(std::vector<std::filesystem::path> stripes);
  ~FileStore();

  FileStore(const FileStore&) = delete;
  FileStore& operator=(const FileStore&) = delete;

  /// Starts tracking a set with an empty index. No file is created until the
  /// first append.
  void open_set(SetId set, std::size_t page_size);
  /// Loads the index of a set from its meta file. Counters start at zero.
  const SetFileIndex& load_meta(SetId set);
  void persist_meta(SetId set);
  /// Deletes every file of the set and forgets it.
  void remove_set(SetId set);
  /// Forgets in-memory state for all sets without touching disk.
  void drop_state();

  PageLocation append_page(SetId set, std::uint64_t page_seq, std::span<const std::byte> bytes,
                           bool persist_meta_now);
  void read_page(SetId set, std::uint64_t page_seq, std::span<std::byte> out);
  std::vector<std::byte> read_page(SetId set, std::uint64_t page_seq);

  bool has_page(SetId set, std::uint64_t page_seq) const;
  bool tracks(SetId set) const;
  SetFileIndex index(SetId set) const;
  IoCounters counters() const;
  IoCounters counters(SetId set) const;
  /// Number of data files currently on disk for the set.
  std::size_t data_file_count(SetId set) const;

  const std::vector<std::filesystem::path>& stripes() const noexcept { return stripes_; }
  std::filesystem::path data_path(SetId set, std::uint32_t stripe) const;
  std::filesystem::path meta_path(SetId set) const;

 private:
  struct SetFile;

  SetFile& file(SetId set);
  const SetFile& file(SetId set) const;
  int data_fd(SetFile& f, std::uint32_t stripe);
  void write_meta_locked(SetFile& f);

  std::vector<std::filesystem::path> stripes_;
  mutable std::mutex mutex_;
  std::unordered_map<SetId, std::unique_ptr<SetFile>> files_;
  std::atomic<std::uint64_t> read_bytes_{0};
  std::atomic<std::uint64_t> write_bytes_{0};
  std::atomic<std::uint64_t> page_reads_{0};
  std::atomic<std::uint64_t> page_writes_{0};
};

}  // namespace pangea
