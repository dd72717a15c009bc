#pragma once

#include <stdlib.h>

#include <filesystem>
#include <string>

#include "pangea/engine.hpp"

namespace pangea::testing {

class TempDir {
 public:
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "pangea-test-XXXXXX").string();
    if (::mkdtemp(tmpl.data()) == nullptr) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& sub) const { return path_ / sub; }

 private:
  std::filesystem::path path_;
};

inline EngineConfig engine_config(const TempDir& dir, std::size_t memory, PolicyKind policy = PolicyKind::DataAware,
                                  std::size_t stripes = 1) {
  EngineConfig c;
  c.memory = memory;
  c.policy = policy;
  c.profile_io = false;
  c.check_invariants = true;
  for (std::size_t i = 0; i < stripes; ++i) c.storage_dirs.push_back(dir / ("disk" + std::to_string(i)));
  return c;
}

}  // namespace pangea::testing

// Checks that `expr` throws pangea::Error carrying `errc`.
#define CHECK_ERRC(expr, errc)                                                         \
  do {                                                                                 \
    bool thrown_ = false;                                                              \
    try {                                                                              \
      (void)(expr);                                                                    \
    } catch (const ::pangea::Error& e_) {                                              \
      thrown_ = true;                                                                  \
      CHECK(::pangea::errc_name(e_.code()) == ::pangea::errc_name(errc));              \
    }                                                                                  \
    CHECK_MESSAGE(thrown_, "expected " << ::pangea::errc_name(errc) << " from " #expr); \
  } while (0)
