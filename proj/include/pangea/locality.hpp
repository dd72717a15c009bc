#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "pangea/common.hpp"

namespace pangea {

enum class Durability { WriteBack, WriteThrough };
enum class WritingPattern { None, SequentialWrite, ConcurrentWrite, RandomMutableWrite };
enum class ReadingPattern { None, SequentialRead, RandomRead };
enum class Lifetime { Alive, LifetimeEnded };
enum class CurrentOperation { None, Read, Write, ReadAndWrite };
enum class ServiceKind { SeqWrite, SeqRead, Shuffle, Hash };

std::string_view to_string(Durability d);
std::string_view to_string(WritingPattern p);
std::string_view to_string(ReadingPattern p);
std::string_view to_string(CurrentOperation op);

struct SetAttributes {
  Durability durability = Durability::WriteBack;
  WritingPattern writing_pattern = WritingPattern::None;
  ReadingPattern reading_pattern = ReadingPattern::None;
  Lifetime lifetime = Lifetime::Alive;
  CurrentOperation current_operation = CurrentOperation::None;
  Tick access_recency = 0;

  friend bool operator==(const SetAttributes&, const SetAttributes&) = default;
};

/// Number of live service attachments per kind. Together with SetAttributes
/// this is the full input to attribute inference.
struct ServiceAttachments {
  int seq_write = 0;
  int seq_read = 0;
  int shuffle = 0;
  int hash = 0;

  friend bool operator==(const ServiceAttachments&, const ServiceAttachments&) = default;
};

struct AttributeState {
  SetAttributes attributes;
  ServiceAttachments attached;

  friend bool operator==(const AttributeState&, const AttributeState&) = default;
};

// Pure transitions. Patterns are sticky (they describe how the data was
// produced/consumed); CurrentOperation follows the live attachments.
AttributeState attach_service(AttributeState state, ServiceKind kind);
AttributeState detach_service(AttributeState state, ServiceKind kind);

inline constexpr double kDefaultRandomReadPenalty = 2.0;
inline constexpr double kProfileEmaAlpha = 0.3;
inline constexpr double kSeedBandwidthBytesPerSecond = 200.0 * kMiB;

struct LocalitySet {
  SetId id;
  std::string name;
  std::size_t page_size = 0;
  SetAttributes attributes;
  ServiceAttachments attached;
  double profiled_v_r = 0.0;
  double profiled_v_w = 0.0;
  double random_read_penalty = kDefaultRandomReadPenalty;
  /// Records are framed independently inside each frame of this many bytes;
  /// 0 means the whole page is one frame. Shuffle sets use the small-page size.
  std::size_t frame_size = 0;
  std::optional<std::uint64_t> partition_scheme;

  /// Read penalty w_r: 1 for anything but random reads.
  double read_penalty() const noexcept {
    return attributes.reading_pattern == ReadingPattern::RandomRead ? random_read_penalty : 1.0;
  }
};

class LocalityRegistry {
 public:
  LocalityRegistry(std::size_t max_page_size, LogicalClock& clock);

  SetId create_set(std::string name, std::size_t page_size, Durability durability);
  /// Re-registers a set under a known id, e.g. when reopening from disk.
  SetId register_existing(SetId id, std::string name, std::size_t page_size, Durability durability);

  SetAttributes infer_attributes(SetId id, ServiceKind kind);
  SetAttributes release_service(SetId id, ServiceKind kind);
  void mark_lifetime_ended(SetId id);
  void remove_set(SetId id);
  void record_access(SetId id, Tick tick);

  void record_read_time(SetId id, double seconds);
  void record_write_time(SetId id, double seconds);
  void set_random_read_penalty(SetId id, double penalty);
  void set_frame_size(SetId id, std::size_t frame_size);
  void set_partition_scheme(SetId id, std::optional<std::uint64_t> scheme);

  LocalitySet get(SetId id) const;
  bool contains(SetId id) const;
  std::optional<SetId> find(std::string_view name) const;
  std::vector<SetId> ids() const;
  std::size_t max_page_size() const noexcept { return max_page_size_; }

 private:
  SetId insert_locked(SetId id, std::string name, std::size_t page_size, Durability durability);
  LocalitySet& lookup(SetId id);
  const LocalitySet& lookup(SetId id) const;

  std::size_t max_page_size_;
  LogicalClock& clock_;
  mutable std::shared_mutex mutex_;
  std::map<SetId, LocalitySet> sets_;
  std::unordered_map<std::string, SetId> by_name_;
  std::uint64_t next_id_ = 1;
};

}  // namespace pangea
