#include "pangea/locality.hpp"

#include <algorithm>
#include <mutex>

namespace pangea {

std::string_view to_string(Durability d) {
  return d == Durability::WriteBack ? "write-back" : "write-through";
}

std::string_view to_string(WritingPattern p) {
  switch (p) {
    case WritingPattern::None: return "none";
    case WritingPattern::SequentialWrite: return "sequential-write";
    case WritingPattern::ConcurrentWrite: return "concurrent-write";
    case WritingPattern::RandomMutableWrite: return "random-mutable-write";
  }
  return "none";
}

std::string_view to_string(ReadingPattern p) {
  switch (p) {
    case ReadingPattern::None: return "none";
    case ReadingPattern::SequentialRead: return "sequential-read";
    case ReadingPattern::RandomRead: return "random-read";
  }
  return "none";
}

std::string_view to_string(CurrentOperation op) {
  switch (op) {
    case CurrentOperation::None: return "none";
    case CurrentOperation::Read: return "read";
    case CurrentOperation::Write: return "write";
    case CurrentOperation::ReadAndWrite: return "read-and-write";
  }
  return "none";
}

namespace {

CurrentOperation operation_for(const ServiceAttachments& a) {
  const bool reading = a.seq_read > 0 || a.hash > 0;
  const bool writing = a.seq_write > 0 || a.shuffle > 0 || a.hash > 0;
  if (reading && writing) return CurrentOperation::ReadAndWrite;
  if (reading) return CurrentOperation::Read;
  if (writing) return CurrentOperation::Write;
  return CurrentOperation::None;
}

int& counter_for(ServiceAttachments& a, ServiceKind kind) {
  switch (kind) {
    case ServiceKind::SeqWrite: return a.seq_write;
    case ServiceKind::SeqRead: return a.seq_read;
    case ServiceKind::Shuffle: return a.shuffle;
    case ServiceKind::Hash: return a.hash;
  }
  return a.seq_write;
}

double ema(double prior, double sample) {
  return kProfileEmaAlpha * sample + (1.0 - kProfileEmaAlpha) * prior;
}

}  // namespace

AttributeState attach_service(AttributeState state, ServiceKind kind) {
  auto& attrs = state.attributes;
  switch (kind) {
    case ServiceKind::SeqWrite:
      attrs.writing_pattern = WritingPattern::SequentialWrite;
      break;
    case ServiceKind::SeqRead:
      attrs.reading_pattern = ReadingPattern::SequentialRead;
      break;
    case ServiceKind::Shuffle:
      attrs.writing_pattern = WritingPattern::ConcurrentWrite;
      break;
    case ServiceKind::Hash:
      attrs.writing_pattern = WritingPattern::RandomMutableWrite;
      attrs.reading_pattern = ReadingPattern::RandomRead;
      break;
  }
  ++counter_for(state.attached, kind);
  attrs.current_operation = operation_for(state.attached);
  return state;
}

AttributeState detach_service(AttributeState state, ServiceKind kind) {
  int& count = counter_for(state.attached, kind);
  count = std::max(0, count - 1);
  state.attributes.current_operation = operation_for(state.attached);
  return state;
}

LocalityRegistry::LocalityRegistry(std::size_t max_page_size, LogicalClock& clock)
    : max_page_size_(max_page_size), clock_(clock) {}

SetId LocalityRegistry::create_set(std::string name, std::size_t page_size, Durability durability) {
  std::unique_lock lock(mutex_);
  return insert_locked(SetId{next_id_}, std::move(name), page_size, durability);
}

SetId LocalityRegistry::register_existing(SetId id, std::string name, std::size_t page_size,
                                          Durability durability) {
  std::unique_lock lock(mutex_);
  return insert_locked(id, std::move(name), page_size, durability);
}

SetId LocalityRegistry::insert_locked(SetId id, std::string name, std::size_t page_size,
                                      Durability durability) {
  if (page_size == 0 || page_size > max_page_size_) {
    fail(Errc::PageSizeExceedsPool, name + ": page size " + std::to_string(page_size) +
                                        " outside (0, " + std::to_string(max_page_size_) + "]");
  }
  if (by_name_.contains(name)) fail(Errc::DuplicateName, name);
  if (sets_.contains(id)) fail(Errc::DuplicateName, to_string(id));

  LocalitySet set;
  set.id = id;
  set.name = name;
  set.page_size = page_size;
  set.attributes.durability = durability;
  set.attributes.access_recency = clock_.now();
  const double seed = static_cast<double>(page_size) / kSeedBandwidthBytesPerSecond;
  set.profiled_v_r = seed;
  set.profiled_v_w = seed;
  sets_.emplace(id, std::move(set));
  by_name_.emplace(std::move(name), id);
  next_id_ = std::max(next_id_, id.value + 1);
  return id;
}

LocalitySet& LocalityRegistry::lookup(SetId id) {
  auto it = sets_.find(id);
  if (it == sets_.end()) fail(Errc::SetNotFound, to_string(id));
  return it->second;
}

const LocalitySet& LocalityRegistry::lookup(SetId id) const {
  auto it = sets_.find(id);
  if (it == sets_.end()) fail(Errc::SetNotFound, to_string(id));
  return it->second;
}

SetAttributes LocalityRegistry::infer_attributes(SetId id, ServiceKind kind) {
  std::unique_lock lock(mutex_);
  auto& set = lookup(id);
  if (set.attributes.lifetime == Lifetime::LifetimeEnded) fail(Errc::LifetimeEnded, set.name);
  auto next = attach_service({set.attributes, set.attached}, kind);
  set.attributes = next.attributes;
  set.attached = next.attached;
  return set.attributes;
}

SetAttributes LocalityRegistry::release_service(SetId id, ServiceKind kind) {
  std::unique_lock lock(mutex_);
  auto& set = lookup(id);
  auto next = detach_service({set.attributes, set.attached}, kind);
  set.attributes = next.attributes;
  set.attached = next.attached;
  return set.attributes;
}

void LocalityRegistry::mark_lifetime_ended(SetId id) {
  std::unique_lock lock(mutex_);
  lookup(id).attributes.lifetime = Lifetime::LifetimeEnded;
}

void LocalityRegistry::remove_set(SetId id) {
  std::unique_lock lock(mutex_);
  auto it = sets_.find(id);
  if (it == sets_.end()) fail(Errc::SetNotFound, to_string(id));
  by_name_.erase(it->second.name);
  sets_.erase(it);
}

void LocalityRegistry::record_access(SetId id, Tick tick) {
  std::unique_lock lock(mutex_);
  auto& recency = lookup(id).attributes.access_recency;
  recency = std::max(recency, tick);
}

void LocalityRegistry::record_read_time(SetId id, double seconds) {
  std::unique_lock lock(mutex_);
  if (auto it = sets_.find(id); it != sets_.end() && seconds > 0.0) {
    it->second.profiled_v_r = ema(it->second.profiled_v_r, seconds);
  }
}

void LocalityRegistry::record_write_time(SetId id, double seconds) {
  std::unique_lock lock(mutex_);
  if (auto it = sets_.find(id); it != sets_.end() && seconds > 0.0) {
    it->second.profiled_v_w = ema(it->second.profiled_v_w, seconds);
  }
}

void LocalityRegistry::set_random_read_penalty(SetId id, double penalty) {
  if (!(penalty > 1.0)) fail(Errc::InvalidArgs, "random read penalty must exceed 1");
  std::unique_lock lock(mutex_);
  lookup(id).random_read_penalty = penalty;
}

void LocalityRegistry::set_frame_size(SetId id, std::size_t frame_size) {
  std::unique_lock lock(mutex_);
  auto& set = lookup(id);
  if (frame_size != 0 && set.page_size % frame_size != 0) {
    fail(Errc::InvalidArgs, "frame size must divide the page size");
  }
  set.frame_size = frame_size;
}

void LocalityRegistry::set_partition_scheme(SetId id, std::optional<std::uint64_t> scheme) {
  std::unique_lock lock(mutex_);
  lookup(id).partition_scheme = scheme;
}

LocalitySet LocalityRegistry::get(SetId id) const {
  std::shared_lock lock(mutex_);
  return lookup(id);
}

bool LocalityRegistry::contains(SetId id) const {
  std::shared_lock lock(mutex_);
  return sets_.contains(id);
}

std::optional<SetId> LocalityRegistry::find(std::string_view name) const {
  std::shared_lock lock(mutex_);
  if (auto it = by_name_.find(std::string(name)); it != by_name_.end()) return it->second;
  return std::nullopt;
}

std::vector<SetId> LocalityRegistry::ids() const {
  std::shared_lock lock(mutex_);
  std::vector<SetId> out;
  out.reserve(sets_.size());
  for (const auto& [id, _] : sets_) out.push_back(id);
  return out;
}

}  // namespace pangea
