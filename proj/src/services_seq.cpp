#include <cstring>

#include "pangea/services.hpp"

namespace pangea {

namespace {

void store_u32(std::byte* at, std::uint32_t v) noexcept {
  for (int i = 0; i < 4; ++i) at[i] = static_cast<std::byte>(v >> (8 * i));
}

std::uint32_t load_u32(const std::byte* at) noexcept {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::to_integer<std::uint32_t>(at[i]) << (8 * i);
  return v;
}

}  // namespace

bool append_record(std::span<std::byte> frame, std::size_t& cursor, std::span<const std::byte> record) noexcept {
  if (cursor > frame.size() || frame.size() - cursor < record.size() + kRecordPrefix) return false;
  store_u32(frame.data() + cursor, static_cast<std::uint32_t>(record.size()));
  if (!record.empty()) std::memcpy(frame.data() + cursor + kRecordPrefix, record.data(), record.size());
  cursor += kRecordPrefix + record.size();
  // Pages come zero-filled, so the terminator is implicit unless the frame is
  // being reused; write it anyway when there is room.
  if (frame.size() - cursor >= kRecordPrefix) store_u32(frame.data() + cursor, 0);
  return true;
}

PageRecordReader::PageRecordReader(std::span<const std::byte> page, std::size_t frame_size) noexcept
    : page_(page), frame_size_(frame_size == 0 || frame_size > page.size() ? page.size() : frame_size) {}

std::optional<std::span<const std::byte>> PageRecordReader::next() noexcept {
  while (frame_start_ < page_.size()) {
    const std::size_t frame_end = std::min(page_.size(), frame_start_ + frame_size_);
    const std::size_t at = frame_start_ + cursor_;
    if (at + kRecordPrefix <= frame_end) {
      const std::uint32_t len = load_u32(page_.data() + at);
      if (len != 0 && at + kRecordPrefix + len <= frame_end) {
        cursor_ += kRecordPrefix + len;
        return page_.subspan(at + kRecordPrefix, len);
      }
    }
    frame_start_ += frame_size_;
    cursor_ = 0;
  }
  return std::nullopt;
}

// SequentialWriter ------------------------------------------------------------

SequentialWriter::SequentialWriter(Engine& engine, SetId set)
    : engine_(&engine), set_(set), page_size_(engine.set_info(set).page_size) {
  engine.infer_attributes(set, ServiceKind::SeqWrite);
}

SequentialWriter::SequentialWriter(SequentialWriter&& other) noexcept
    : engine_(other.engine_),
      set_(other.set_),
      page_size_(other.page_size_),
      page_(std::move(other.page_)),
      cursor_(other.cursor_),
      records_(other.records_),
      closed_(other.closed_) {
  other.page_.reset();
  other.closed_ = true;
}

SequentialWriter::~SequentialWriter() {
  try {
    close();
  } catch (...) {
  }
}

void SequentialWriter::add_object(std::span<const std::byte> record) {
  if (closed_) fail(Errc::InvalidArgs, "writer is closed");
  if (record.empty()) fail(Errc::InvalidArgs, "empty record");
  if (record.size() + kRecordPrefix > page_size_) {
    fail(Errc::RecordLargerThanPage, std::to_string(record.size()) + " byte record in " +
                                         std::to_string(page_size_) + " byte pages");
  }
  if (page_ && append_record(page_->bytes, cursor_, record)) {
    ++records_;
    return;
  }
  if (page_) {
    engine_->unpin_page(*page_, true);
    page_.reset();
  }
  page_ = engine_->allocate_page(set_);
  cursor_ = 0;
  append_record(page_->bytes, cursor_, record);
  ++records_;
}

void SequentialWriter::close() {
  if (closed_) return;
  closed_ = true;
  if (page_) {
    engine_->unpin_page(*page_, true);
    page_.reset();
  }
  engine_->release_service(set_, ServiceKind::SeqWrite);
}

// Sequential read -------------------------------------------------------------

struct RecordIterator::Session {
  Engine& engine;
  SetId set;
  std::shared_ptr<ScanQueue> queue;

  ~Session() {
    queue.reset();
    try {
      engine.release_service(set, ServiceKind::SeqRead);
    } catch (...) {
    }
  }
};

RecordIterator::RecordIterator(std::shared_ptr<Session> session, std::size_t frame_size)
    : session_(std::move(session)), frame_size_(frame_size) {}

RecordIterator::RecordIterator(RecordIterator&& other) noexcept
    : session_(std::move(other.session_)),
      frame_size_(other.frame_size_),
      page_(std::move(other.page_)),
      reader_(std::move(other.reader_)),
      pages_(other.pages_) {
  other.page_.reset();
  other.reader_.reset();
}

RecordIterator& RecordIterator::operator=(RecordIterator&& other) noexcept {
  if (this != &other) {
    release_current();
    session_ = std::move(other.session_);
    frame_size_ = other.frame_size_;
    page_ = std::move(other.page_);
    reader_ = std::move(other.reader_);
    pages_ = other.pages_;
    other.page_.reset();
    other.reader_.reset();
  }
  return *this;
}

RecordIterator::~RecordIterator() { release_current(); }

void RecordIterator::release_current() {
  if (page_ && session_) {
    try {
      session_->queue->release(*page_);
    } catch (...) {
    }
  }
  page_.reset();
  reader_.reset();
}

std::optional<std::span<const std::byte>> RecordIterator::next() {
  if (!session_) return std::nullopt;
  for (;;) {
    if (reader_) {
      if (auto rec = reader_->next()) return rec;
      release_current();
    }
    auto page = session_->queue->next();
    if (!page) return std::nullopt;
    page_ = *page;
    reader_.emplace(std::span<const std::byte>(page_->bytes), frame_size_);
    ++pages_;
  }
}

std::vector<RecordIterator> seq_get_iterators(Engine& engine, SetId set, std::size_t num_threads) {
  if (num_threads == 0) fail(Errc::InvalidArgs, "need at least one iterator");
  const auto info = engine.set_info(set);
  engine.infer_attributes(set, ServiceKind::SeqRead);
  std::shared_ptr<RecordIterator::Session> session;
  try {
    session = std::shared_ptr<RecordIterator::Session>(
        new RecordIterator::Session{engine, set, engine.scan_queue(set, num_threads)});
  } catch (...) {
    engine.release_service(set, ServiceKind::SeqRead);
    throw;
  }
  std::vector<RecordIterator> out;
  out.reserve(num_threads);
  for (std::size_t i = 0; i < num_threads; ++i) out.emplace_back(session, info.frame_size);
  return out;
}

std::vector<std::string> read_all_records(Engine& engine, SetId set) {
  auto iters = seq_get_iterators(engine, set, 1);
  std::vector<std::string> out;
  while (auto rec = iters[0].next()) out.emplace_back(as_string_view(*rec));
  return out;
}

}  // namespace pangea
