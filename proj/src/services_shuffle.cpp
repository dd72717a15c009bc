#include <algorithm>

#include "pangea/services.hpp"

namespace pangea {

// SmallPageAllocator -----------------------------------------------------------

SmallPageAllocator::SmallPageAllocator(Engine& engine, SetId set, std::size_t small_page_size)
    : engine_(engine), set_(set), small_page_size_(small_page_size) {
  const std::size_t host = engine.set_info(set).page_size;
  if (small_page_size <= kRecordPrefix || host % small_page_size != 0) {
    fail(Errc::InvalidArgs, "small page size " + std::to_string(small_page_size) +
                                " must divide the host page size " + std::to_string(host));
  }
  per_host_ = host / small_page_size;
}

SmallPageAllocator::~SmallPageAllocator() {
  try {
    finish();
  } catch (...) {
  }
}

SmallPageAllocator::SmallPage SmallPageAllocator::claim() {
  std::lock_guard lock(mutex_);
  if (finished_) fail(Errc::InvalidArgs, "small page allocator already finished");
  if (!current_ || hosts_.at(*current_).claimed == per_host_) {
    PageHandle handle = engine_.allocate_page(set_);
    const std::uint64_t seq = handle.key.seq;
    hosts_.emplace(seq, Host{handle, 0, 0});
    const std::optional<std::uint64_t> previous = current_;
    current_ = seq;
    if (previous) maybe_unpin(*previous);
  }
  Host& host = hosts_.at(*current_);
  const std::size_t index = host.claimed++;
  return {*current_, host.handle.bytes.subspan(index * small_page_size_, small_page_size_)};
}

void SmallPageAllocator::release(const SmallPage& page) {
  std::lock_guard lock(mutex_);
  auto it = hosts_.find(page.host_seq);
  if (it == hosts_.end()) fail(Errc::InvalidArgs, "small page does not belong to a pinned host page");
  ++it->second.released;
  maybe_unpin(page.host_seq);
}

void SmallPageAllocator::maybe_unpin(std::uint64_t seq) {
  auto it = hosts_.find(seq);
  const Host& host = it->second;
  const bool still_claiming = current_ == seq && host.claimed < per_host_ && !finished_;
  if (host.released != host.claimed || still_claiming) return;
  const PageHandle handle = host.handle;
  hosts_.erase(it);
  if (current_ == seq) current_.reset();
  engine_.unpin_page(handle, true);
}

void SmallPageAllocator::finish() {
  std::lock_guard lock(mutex_);
  if (finished_) return;
  finished_ = true;
  if (current_) maybe_unpin(*current_);
}

// VirtualShuffleBuffer -----------------------------------------------------------

VirtualShuffleBuffer::VirtualShuffleBuffer(SmallPageAllocator& allocator, std::size_t writer_id,
                                           std::size_t partition_id)
    : allocator_(&allocator), writer_id_(writer_id), partition_id_(partition_id) {}

VirtualShuffleBuffer::VirtualShuffleBuffer(VirtualShuffleBuffer&& other) noexcept
    : allocator_(other.allocator_),
      writer_id_(other.writer_id_),
      partition_id_(other.partition_id_),
      current_(std::move(other.current_)),
      cursor_(other.cursor_) {
  other.current_.reset();
}

VirtualShuffleBuffer::~VirtualShuffleBuffer() {
  try {
    close();
  } catch (...) {
  }
}

void VirtualShuffleBuffer::add_object(std::span<const std::byte> record) {
  if (record.empty()) fail(Errc::InvalidArgs, "empty record");
  const std::size_t small = allocator_->small_page_size();
  if (record.size() + kRecordPrefix > small) {
    fail(Errc::RecordLargerThanSmallPage, std::to_string(record.size()) + " byte record in " +
                                              std::to_string(small) + " byte small pages");
  }
  if (current_ && append_record(current_->region, cursor_, record)) return;
  if (current_) {
    allocator_->release(*current_);
    current_.reset();
  }
  current_ = allocator_->claim();
  cursor_ = 0;
  append_record(current_->region, cursor_, record);
}

void VirtualShuffleBuffer::close() {
  if (!current_) return;
  const auto page = *current_;
  current_.reset();
  allocator_->release(page);
}

// ShuffleService ---------------------------------------------------------------

std::span<const std::byte> whole_record_key(std::span<const std::byte> record) noexcept { return record; }

std::size_t shuffle_partition(std::span<const std::byte> key, std::size_t num_partitions,
                              std::uint64_t seed) noexcept {
  return num_partitions == 0 ? 0 : static_cast<std::size_t>(stable_hash(key, seed) % num_partitions);
}

ShuffleService::ShuffleService(Engine& engine, std::string name, std::size_t num_partitions,
                               ShuffleOptions options)
    : engine_(engine), options_(options) {
  if (num_partitions == 0) fail(Errc::InvalidArgs, "shuffle needs at least one partition");
  if (options.small_page_size == 0 || options.page_size % options.small_page_size != 0) {
    fail(Errc::InvalidArgs, "small page size must divide the page size");
  }
  partitions_.reserve(num_partitions);
  for (std::size_t p = 0; p < num_partitions; ++p) {
    adopt(engine.create_set(name + ".p" + std::to_string(p), options.page_size, options.durability));
  }
}

ShuffleService::ShuffleService(Engine& engine, const std::vector<SetId>& partition_sets, ShuffleOptions options)
    : engine_(engine), options_(options) {
  if (partition_sets.empty()) fail(Errc::InvalidArgs, "shuffle needs at least one partition");
  options_.page_size = engine.set_info(partition_sets.front()).page_size;
  options_.small_page_size = std::min(options_.small_page_size, options_.page_size);
  partitions_.reserve(partition_sets.size());
  for (SetId set : partition_sets) {
    if (engine.set_info(set).page_size != options_.page_size) {
      fail(Errc::InvalidArgs, "shuffle partitions must share one page size");
    }
    adopt(set);
  }
}

void ShuffleService::adopt(SetId set) {
  engine_.registry().set_frame_size(set, options_.small_page_size);
  engine_.infer_attributes(set, ServiceKind::Shuffle);
  partitions_.push_back({set, std::make_unique<SmallPageAllocator>(engine_, set, options_.small_page_size)});
}

ShuffleService::~ShuffleService() {
  try {
    finish();
  } catch (...) {
  }
}

VirtualShuffleBuffer ShuffleService::get_virtual_shuffle_buffer(std::size_t writer_id, std::size_t partition_id) {
  if (partition_id >= partitions_.size()) fail(Errc::InvalidArgs, "partition out of range");
  return VirtualShuffleBuffer(*partitions_[partition_id].allocator, writer_id, partition_id);
}

void ShuffleService::finish() {
  if (finished_) return;
  finished_ = true;
  for (auto& p : partitions_) {
    p.allocator->finish();
    if (engine_.registry().contains(p.set)) engine_.release_service(p.set, ServiceKind::Shuffle);
  }
}

std::size_t ShuffleService::spill_file_count() const {
  std::size_t n = 0;
  for (const auto& p : partitions_) {
    if (engine_.files().data_file_count(p.set) > 0) ++n;
  }
  return n;
}

// ShuffleWriter ------------------------------------------------------------------

ShuffleWriter::ShuffleWriter(ShuffleService& service, std::size_t writer_id, KeyExtractor key)
    : service_(service), key_(std::move(key)) {
  buffers_.reserve(service.num_partitions());
  for (std::size_t p = 0; p < service.num_partitions(); ++p) {
    buffers_.push_back(service.get_virtual_shuffle_buffer(writer_id, p));
  }
}

void ShuffleWriter::write(std::span<const std::byte> record) {
  buffers_[service_.partition_for(key_(record))].add_object(record);
}

void ShuffleWriter::close() {
  for (auto& b : buffers_) b.close();
}

}  // namespace pangea
