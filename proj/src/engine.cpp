#include "pangea/engine.hpp"

namespace pangea {

namespace {

EngineConfig validated(EngineConfig config) {
  if (config.memory == 0) fail(Errc::ZeroCapacity, "engine memory must be positive");
  if (config.storage_dirs.empty()) fail(Errc::InvalidConfig, "engine needs at least one storage directory");
  return config;
}

}  // namespace

Engine::Engine(EngineConfig config)
    : config_(validated(std::move(config))),
      registry_(config_.memory, clock_),
      files_(config_.storage_dirs) {
  PoolConfig pc;
  pc.capacity = config_.memory;
  pc.allocator = config_.allocator;
  pc.profile_io = config_.profile_io;
  pc.check_invariants = config_.check_invariants;
  pc.scan_prefetch = config_.scan_prefetch;
  pool_ = std::make_unique<BufferPool>(pc, registry_, files_, clock_, make_policy(config_.policy, config_.cost));
}

Engine::~Engine() {
  if (crashed_) return;
  for (SetId id : registry_.ids()) {
    try {
      const auto info = registry_.get(id);
      if (info.attributes.durability == Durability::WriteBack && info.attributes.lifetime == Lifetime::Alive &&
          files_.tracks(id)) {
        files_.persist_meta(id);
      }
    } catch (...) {
      // Shutdown is best effort; a failed meta write leaves the previous one.
    }
  }
}

SetId Engine::create_set(std::string name, std::size_t page_size, Durability durability) {
  const SetId id = registry_.create_set(std::move(name), page_size, durability);
  files_.open_set(id, page_size);
  pool_->add_set(id, page_size);
  return id;
}

SetId Engine::open_existing_set(SetId id, std::string name, std::size_t page_size, Durability durability) {
  registry_.register_existing(id, std::move(name), page_size, durability);
  try {
    const auto& index = files_.load_meta(id);
    if (index.page_size != page_size) fail(Errc::CorruptMeta, "page size in meta differs from catalog");
    pool_->add_set(id, page_size);
    pool_->add_disk_pages(id, index);
  } catch (...) {
    registry_.remove_set(id);
    throw;
  }
  return id;
}

SetAttributes Engine::infer_attributes(SetId set, ServiceKind kind) {
  auto attrs = registry_.infer_attributes(set, kind);
  touch(set);
  return attrs;
}

SetAttributes Engine::release_service(SetId set, ServiceKind kind) { return registry_.release_service(set, kind); }

void Engine::mark_lifetime_ended(SetId set) { registry_.mark_lifetime_ended(set); }

void Engine::remove_set(SetId set) {
  if (!registry_.contains(set)) fail(Errc::SetNotFound, to_string(set));
  pool_->remove_set(set);
  files_.remove_set(set);
  registry_.remove_set(set);
}

void Engine::record_access(SetId set, Tick tick) { registry_.record_access(set, tick); }

Tick Engine::touch(SetId set) {
  const Tick tick = clock_.advance();
  registry_.record_access(set, tick);
  return tick;
}

}  // namespace pangea
