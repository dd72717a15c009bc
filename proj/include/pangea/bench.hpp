#pragma once

// Micro-benchmark harness. Every run reports exact counters taken from the
// buffer pool and the file store per phase; wall time is reported alongside
// but never compared.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pangea/engine.hpp"

namespace pangea::bench {

enum class Command { Seq, Shuffle, HashAgg, PagingCompare, RecoveryDrill };

Command parse_command(std::string_view name);
std::string_view command_name(Command command) noexcept;

struct BenchConfig {
  std::size_t memory = 0;
  AllocatorKind allocator = AllocatorKind::SegregatedFit;
  PolicyKind policy = PolicyKind::DataAware;
  CostModelParams cost;
  std::vector<std::filesystem::path> storage_dirs;  // empty: a temp dir
  std::size_t page_size = 0;
  std::size_t small_page_size = 0;

  std::uint64_t objects = 0;
  std::size_t object_size = 80;
  Durability durability = Durability::WriteBack;
  std::size_t scans = 5;

  std::size_t writers = 1;
  std::size_t readers = 1;
  std::size_t partitions = 0;  // 0: 4 per node for recovery-drill
  double mb_per_thread = 0.0;
  std::uint64_t keys = 0;
  double zipf = 0.0;  // 0 draws keys uniformly

  std::size_t nodes = 3;
  NodeId fail_node = 0;
  std::uint64_t seed = 1;
  std::size_t schemes = 2;
};

/// Paper-scale defaults, or the desk preset (1 MiB pages, 1000x fewer objects).
BenchConfig defaults(Command command, bool desk);

/// Applies one `key=value` setting; keys are the long flag names without
/// dashes. Sizes accept K/KiB/M/MiB/G/GiB suffixes. Throws InvalidConfig.
void apply_setting(BenchConfig& config, std::string_view key, std::string_view value);
/// Keys accepted by apply_setting.
const std::vector<std::string>& setting_keys();

/// Throws InvalidConfig when the command cannot run with `config`.
void validate(Command command, const BenchConfig& config);

/// `key=value;...` of the settings that shape the run.
std::string config_echo(Command command, const BenchConfig& config);

struct PhaseResult {
  std::string phase;
  std::string status = "ok";  // ok, blocked, failed, skipped
  double wall_seconds = 0.0;
  std::uint64_t pages_loaded = 0;
  std::uint64_t pages_evicted = 0;
  std::uint64_t pages_written = 0;
  std::uint64_t bytes_written = 0;
  std::uint64_t bytes_read = 0;
  std::uint64_t spills = 0;
  std::string detail;  // key=value;... extras
};

struct BenchResult {
  std::string benchmark;
  std::string policy;
  std::string config;
  std::vector<PhaseResult> phases;
  bool blocked = false;
  std::vector<std::string> failures;  // failed self-verifications

  bool verified() const noexcept { return failures.empty(); }
  const PhaseResult& phase(std::string_view name) const;
  std::uint64_t total(std::uint64_t PhaseResult::*counter) const;
};

BenchResult bench_seq(const BenchConfig& config);
BenchResult bench_shuffle(const BenchConfig& config);
BenchResult bench_hash(const BenchConfig& config);
BenchResult bench_recovery(const BenchConfig& config);
/// bench_seq once per policy.
std::vector<BenchResult> paging_compare(const BenchConfig& config);

std::vector<BenchResult> run(Command command, const BenchConfig& config);

std::string csv_header();
void write_csv(std::ostream& out, const std::vector<BenchResult>& results);

}  // namespace pangea::bench
