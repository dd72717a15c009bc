#include "pangea/common.hpp"

namespace pangea {

std::string to_string(SetId id) { return "set#" + std::to_string(id.value); }

std::string to_string(const PageKey& key) {
  return to_string(key.set) + "/" + std::to_string(key.seq);
}

std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::DuplicateName: return "DuplicateName";
    case Errc::PageSizeExceedsPool: return "PageSizeExceedsPool";
    case Errc::SetNotFound: return "SetNotFound";
    case Errc::LifetimeEnded: return "LifetimeEnded";
    case Errc::PagesStillPinned: return "PagesStillPinned";
    case Errc::ZeroCapacity: return "ZeroCapacity";
    case Errc::EvictionExhausted: return "EvictionExhausted";
    case Errc::PageUnknown: return "PageUnknown";
    case Errc::MissingImage: return "MissingImage";
    case Errc::NotPinned: return "NotPinned";
    case Errc::PagePinned: return "PagePinned";
    case Errc::NotResident: return "NotResident";
    case Errc::NonPositiveInterval: return "NonPositiveInterval";
    case Errc::NoEvictablePage: return "NoEvictablePage";
    case Errc::PolicyBlocked: return "PolicyBlocked";
    case Errc::IoFailure: return "IoFailure";
    case Errc::SizeMismatch: return "SizeMismatch";
    case Errc::PageNotOnDisk: return "PageNotOnDisk";
    case Errc::CorruptMeta: return "CorruptMeta";
    case Errc::RecordLargerThanPage: return "RecordLargerThanPage";
    case Errc::RecordLargerThanSmallPage: return "RecordLargerThanSmallPage";
    case Errc::KeyLargerThanPage: return "KeyLargerThanPage";
    case Errc::TargetNotEmpty: return "TargetNotEmpty";
    case Errc::ObjectSetMismatch: return "ObjectSetMismatch";
    case Errc::InvalidArgs: return "InvalidArgs";
    case Errc::NoSurvivingReplica: return "NoSurvivingReplica";
    case Errc::UnrecoverableObjects: return "UnrecoverableObjects";
    case Errc::InsufficientDiskSpace: return "InsufficientDiskSpace";
    case Errc::NodeDown: return "NodeDown";
    case Errc::UnknownNode: return "UnknownNode";
    case Errc::InvalidConfig: return "InvalidConfig";
  }
  return "Unknown";
}

Error::Error(Errc code, const std::string& what)
    : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

void fail(Errc code, const std::string& what) { throw Error(code, what); }

std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t stable_hash(std::span<const std::byte> bytes, std::uint64_t seed) noexcept {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (std::byte b : bytes) {
    h ^= static_cast<std::uint64_t>(b);
    h *= 0x100000001B3ULL;
  }
  return splitmix64(h ^ splitmix64(seed));
}

std::uint64_t stable_hash(std::string_view text, std::uint64_t seed) noexcept {
  return stable_hash(as_bytes(text), seed);
}

}  // namespace pangea
