#include "pangea/file_store.hpp"

#include <fcntl.h>
#include <unistd.h>
#include <zlib.h>

#include <cerrno>
#include <cstring>
#include <fstream>
#include <iterator>

namespace pangea {

namespace {

constexpr char kMetaMagic[4] = {'P', 'G', 'M', 'F'};

template <typename T>
void put_le(std::vector<std::byte>& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<std::byte>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xFF));
  }
}

template <typename T>
T get_le(std::span<const std::byte> in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) fail(Errc::CorruptMeta, "truncated meta file");
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    v |= static_cast<std::uint64_t>(in[pos + i]) << (8 * i);
  }
  pos += sizeof(T);
  return static_cast<T>(v);
}

std::uint32_t crc_of(std::span<const std::byte> bytes) {
  return static_cast<std::uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

[[noreturn]] void io_fail(const std::string& what) {
  const int err = errno;
  fail(err == ENOSPC ? Errc::InsufficientDiskSpace : Errc::IoFailure, what + ": " + std::strerror(err));
}

}  // namespace

std::vector<std::byte> encode_meta(const SetFileIndex& index) {
  std::vector<std::byte> out;
  out.reserve(4 + 4 + 24 + index.pages.size() * 20 + 4);
  for (char c : kMetaMagic) out.push_back(static_cast<std::byte>(c));
  put_le<std::uint32_t>(out, kMetaVersion);
  put_le<std::uint64_t>(out, index.set_id.value);
  put_le<std::uint64_t>(out, index.page_size);
  put_le<std::uint64_t>(out, index.pages.size());
  for (const auto& [seq, loc] : index.pages) {
    put_le<std::uint64_t>(out, seq);
    put_le<std::uint32_t>(out, loc.stripe);
    put_le<std::uint64_t>(out, loc.offset);
  }
  const auto body = std::span<const std::byte>(out).subspan(4);
  put_le<std::uint32_t>(out, crc_of(body));
  return out;
}

SetFileIndex decode_meta(std::span<const std::byte> bytes) {
  if (bytes.size() < 4 + 4 + 24 + 4) fail(Errc::CorruptMeta, "meta file too short");
  if (std::memcmp(bytes.data(), kMetaMagic, 4) != 0) fail(Errc::CorruptMeta, "bad magic");
  const auto body = bytes.subspan(4, bytes.size() - 8);
  std::size_t crc_pos = bytes.size() - 4;
  if (get_le<std::uint32_t>(bytes, crc_pos) != crc_of(body)) fail(Errc::CorruptMeta, "checksum mismatch");

  std::size_t pos = 4;
  if (get_le<std::uint32_t>(bytes, pos) != kMetaVersion) fail(Errc::CorruptMeta, "unsupported version");
  SetFileIndex index;
  index.set_id = SetId{get_le<std::uint64_t>(bytes, pos)};
  index.page_size = get_le<std::uint64_t>(bytes, pos);
  const auto count = get_le<std::uint64_t>(bytes, pos);
  if (count != (bytes.size() - 4 - 4 - 24 - 4) / 20 || (bytes.size() - 36) % 20 != 0) {
    fail(Errc::CorruptMeta, "entry count does not match file length");
  }
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto seq = get_le<std::uint64_t>(bytes, pos);
    PageLocation loc;
    loc.stripe = get_le<std::uint32_t>(bytes, pos);
    loc.offset = get_le<std::uint64_t>(bytes, pos);
    if (index.page_size == 0 || loc.offset % index.page_size != 0) {
      fail(Errc::CorruptMeta, "unaligned page offset");
    }
    index.pages.emplace(seq, loc);
  }
  return index;
}

struct FileStore::SetFile {
  SetFileIndex index;
  std::vector<int> fds;
  std::mutex mutex;
  std::atomic<std::uint64_t> read_bytes{0};
  std::atomic<std::uint64_t> write_bytes{0};
  std::atomic<std::uint64_t> page_reads{0};
  std::atomic<std::uint64_t> page_writes{0};

  ~SetFile() {
    for (int fd : fds) {
      if (fd >= 0) ::close(fd);
    }
  }
};

FileStore::FileStore(std::vector<std::filesystem::path> stripes) : stripes_(std::move(stripes)) {
  if (stripes_.empty()) fail(Errc::InvalidArgs, "file store needs at least one directory");
  for (const auto& dir : stripes_) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) fail(Errc::IoFailure, "cannot create " + dir.string() + ": " + ec.message());
  }
}

FileStore::~FileStore() = default;

std::filesystem::path FileStore::data_path(SetId set, std::uint32_t stripe) const {
  return stripes_[stripe] / (std::to_string(set.value) + ".data." + std::to_string(stripe));
}

std::filesystem::path FileStore::meta_path(SetId set) const {
  return stripes_.front() / (std::to_string(set.value) + ".meta");
}

FileStore::SetFile& FileStore::file(SetId set) {
  std::lock_guard lock(mutex_);
  auto it = files_.find(set);
  if (it == files_.end()) fail(Errc::SetNotFound, "file store: " + to_string(set));
  return *it->second;
}

const FileStore::SetFile& FileStore::file(SetId set) const {
  std::lock_guard lock(mutex_);
  auto it = files_.find(set);
  if (it == files_.end()) fail(Errc::SetNotFound, "file store: " + to_string(set));
  return *it->second;
}

void FileStore::open_set(SetId set, std::size_t page_size) {
  if (page_size == 0) fail(Errc::InvalidArgs, "page size must be positive");
  auto f = std::make_unique<SetFile>();
  f->index.set_id = set;
  f->index.page_size = page_size;
  f->fds.assign(stripes_.size(), -1);
  std::lock_guard lock(mutex_);
  files_[set] = std::move(f);
}

const SetFileIndex& FileStore::load_meta(SetId set) {
  std::ifstream in(meta_path(set), std::ios::binary);
  if (!in) fail(Errc::CorruptMeta, "missing meta file for " + to_string(set));
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  auto index = decode_meta(std::as_bytes(std::span(raw)));
  if (index.set_id != set) fail(Errc::CorruptMeta, "meta file belongs to another set");
  for (const auto& [seq, loc] : index.pages) {
    if (loc.stripe >= stripes_.size()) fail(Errc::CorruptMeta, "stripe index out of range");
  }

  auto f = std::make_unique<SetFile>();
  f->index = std::move(index);
  f->fds.assign(stripes_.size(), -1);
  std::lock_guard lock(mutex_);
  auto& slot = files_[set];
  slot = std::move(f);
  return slot->index;
}

void FileStore::write_meta_locked(SetFile& f) {
  const auto bytes = encode_meta(f.index);
  const auto path = meta_path(f.index.set_id);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) io_fail("open " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) io_fail("write " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(Errc::IoFailure, "rename meta: " + ec.message());
}

void FileStore::persist_meta(SetId set) {
  auto& f = file(set);
  std::lock_guard lock(f.mutex);
  write_meta_locked(f);
}

void FileStore::remove_set(SetId set) {
  std::unique_ptr<SetFile> doomed;
  {
    std::lock_guard lock(mutex_);
    auto it = files_.find(set);
    if (it != files_.end()) {
      doomed = std::move(it->second);
      files_.erase(it);
    }
  }
  doomed.reset();
  std::error_code ec;
  for (std::uint32_t s = 0; s < stripes_.size(); ++s) std::filesystem::remove(data_path(set, s), ec);
  std::filesystem::remove(meta_path(set), ec);
}

void FileStore::drop_state() {
  std::lock_guard lock(mutex_);
  files_.clear();
}

int FileStore::data_fd(SetFile& f, std::uint32_t stripe) {
  if (f.fds[stripe] < 0) {
    const auto path = data_path(f.index.set_id, stripe);
    const int fd = ::open(path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
    if (fd < 0) io_fail("open " + path.string());
    f.fds[stripe] = fd;
  }
  return f.fds[stripe];
}

PageLocation FileStore::append_page(SetId set, std::uint64_t page_seq, std::span<const std::byte> bytes,
                                    bool persist_meta_now) {
  auto& f = file(set);
  if (bytes.size() != f.index.page_size) {
    fail(Errc::SizeMismatch, to_string(set) + ": got " + std::to_string(bytes.size()) + " bytes, page is " +
                                 std::to_string(f.index.page_size));
  }
  // Round-robin by sequence number: the slot of a page never moves, so a
  // re-spilled write-back page overwrites its previous image in place.
  const auto nstripes = static_cast<std::uint64_t>(stripes_.size());
  const PageLocation loc{static_cast<std::uint32_t>(page_seq % nstripes), (page_seq / nstripes) * f.index.page_size};

  std::lock_guard lock(f.mutex);
  const int fd = data_fd(f, loc.stripe);
  std::size_t done = 0;
  while (done < bytes.size()) {
    const auto n = ::pwrite(fd, bytes.data() + done, bytes.size() - done, static_cast<off_t>(loc.offset + done));
    if (n < 0) {
      if (errno == EINTR) continue;
      io_fail("pwrite " + data_path(set, loc.stripe).string());
    }
    done += static_cast<std::size_t>(n);
  }
  f.index.pages[page_seq] = loc;
  f.write_bytes += bytes.size();
  f.page_writes += 1;
  write_bytes_ += bytes.size();
  page_writes_ += 1;
  if (persist_meta_now) write_meta_locked(f);
  return loc;
}

void FileStore::read_page(SetId set, std::uint64_t page_seq, std::span<std::byte> out) {
  auto& f = file(set);
  PageLocation loc;
  int fd = -1;
  {
    std::lock_guard lock(f.mutex);
    auto it = f.index.pages.find(page_seq);
    if (it == f.index.pages.end()) fail(Errc::PageNotOnDisk, to_string(PageKey{set, page_seq}));
    if (out.size() != f.index.page_size) fail(Errc::SizeMismatch, "read buffer does not match page size");
    loc = it->second;
    fd = data_fd(f, loc.stripe);
  }
  std::size_t done = 0;
  while (done < out.size()) {
    const auto n = ::pread(fd, out.data() + done, out.size() - done, static_cast<off_t>(loc.offset + done));
    if (n < 0) {
      if (errno == EINTR) continue;
      io_fail("pread " + data_path(set, loc.stripe).string());
    }
    if (n == 0) fail(Errc::IoFailure, "short read for " + to_string(PageKey{set, page_seq}));
    done += static_cast<std::size_t>(n);
  }
  f.read_bytes += out.size();
  f.page_reads += 1;
  read_bytes_ += out.size();
  page_reads_ += 1;
}

std::vector<std::byte> FileStore::read_page(SetId set, std::uint64_t page_seq) {
  std::vector<std::byte> out(file(set).index.page_size);
  read_page(set, page_seq, out);
  return out;
}

bool FileStore::has_page(SetId set, std::uint64_t page_seq) const {
  std::lock_guard lock(mutex_);
  auto it = files_.find(set);
  if (it == files_.end()) return false;
  std::lock_guard inner(it->second->mutex);
  return it->second->index.pages.contains(page_seq);
}

bool FileStore::tracks(SetId set) const {
  std::lock_guard lock(mutex_);
  return files_.contains(set);
}

SetFileIndex FileStore::index(SetId set) const {
  auto& f = const_cast<SetFile&>(file(set));
  std::lock_guard lock(f.mutex);
  return f.index;
}

IoCounters FileStore::counters() const {
  return {read_bytes_.load(), write_bytes_.load(), page_reads_.load(), page_writes_.load()};
}

IoCounters FileStore::counters(SetId set) const {
  const auto& f = file(set);
  return {f.read_bytes.load(), f.write_bytes.load(), f.page_reads.load(), f.page_writes.load()};
}

std::size_t FileStore::data_file_count(SetId set) const {
  std::size_t count = 0;
  for (std::uint32_t s = 0; s < stripes_.size(); ++s) {
    if (std::filesystem::exists(data_path(set, s))) ++count;
  }
  return count;
}

}  // namespace pangea
