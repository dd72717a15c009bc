#include "pangea/bench.hpp"

#include <stdlib.h>

#include <algorithm>
#include <cerrno>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <thread>
#include <unordered_map>

#include "pangea/kernels.hpp"
#include "pangea/placement.hpp"
#include "pangea/services.hpp"

namespace pangea::bench {

namespace fs = std::filesystem;

// Settings --------------------------------------------------------------------

Command parse_command(std::string_view name) {
  for (auto c : {Command::Seq, Command::Shuffle, Command::HashAgg, Command::PagingCompare, Command::RecoveryDrill}) {
    if (command_name(c) == name) return c;
  }
  fail(Errc::InvalidConfig, "unknown benchmark '" + std::string(name) + "'");
}

std::string_view command_name(Command command) noexcept {
  switch (command) {
    case Command::Seq: return "seq";
    case Command::Shuffle: return "shuffle";
    case Command::HashAgg: return "hash-agg";
    case Command::PagingCompare: return "paging-compare";
    case Command::RecoveryDrill: return "recovery-drill";
  }
  return "seq";
}

BenchConfig defaults(Command command, bool desk) {
  BenchConfig c;
  c.memory = desk ? 16 * kMiB : 16 * kGiB;
  c.page_size = desk ? kMiB : 64 * kMiB;
  c.small_page_size = desk ? 64 * kKiB : kDefaultSmallPageSize;
  const std::uint64_t scale = desk ? 1 : 1000;
  switch (command) {
    case Command::Seq:
    case Command::PagingCompare:
      c.objects = 250'000 * scale;
      break;
    case Command::Shuffle:
      c.writers = 4;
      c.readers = 4;
      c.partitions = 4;
      c.mb_per_thread = desk ? 2.0 : 2048.0;
      break;
    case Command::HashAgg:
      c.page_size = desk ? 64 * kKiB : 64 * kMiB;
      c.partitions = 200;
      c.objects = 100'000 * scale;
      c.keys = 10'000 * scale;
      break;
    case Command::RecoveryDrill:
      c.page_size = desk ? 64 * kKiB : 64 * kMiB;
      c.objects = 30'000 * scale;
      c.object_size = 32;
      break;
  }
  return c;
}

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char ch) { return std::tolower(ch); });
  return out;
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value) {
  fail(Errc::InvalidConfig, "bad value '" + std::string(value) + "' for " + std::string(key));
}

double parse_double(std::string_view key, std::string_view value) {
  const std::string text(value);
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  if (text.empty() || end != text.c_str() + text.size() || !std::isfinite(v)) bad_value(key, value);
  return v;
}

std::uint64_t parse_count(std::string_view key, std::string_view value) {
  const std::string text(value);
  char* end = nullptr;
  errno = 0;
  const unsigned long long v = std::strtoull(text.c_str(), &end, 10);
  if (text.empty() || text[0] == '-' || errno != 0 || end != text.c_str() + text.size()) bad_value(key, value);
  return v;
}

std::size_t parse_size(std::string_view key, std::string_view value) {
  static const std::array<std::pair<std::string_view, std::size_t>, 7> units{{
      {"kib", kKiB}, {"mib", kMiB}, {"gib", kGiB}, {"k", kKiB}, {"m", kMiB}, {"g", kGiB}, {"b", 1}}};
  const std::string text = lower(value);
  std::size_t mult = 1;
  std::string_view digits = text;
  for (const auto& [suffix, m] : units) {
    if (digits.size() > suffix.size() && digits.ends_with(suffix)) {
      digits.remove_suffix(suffix.size());
      mult = m;
      break;
    }
  }
  const double v = parse_double(key, digits);
  if (v < 0) bad_value(key, value);
  return static_cast<std::size_t>(std::llround(v * static_cast<double>(mult)));
}

bool parse_bool(std::string_view key, std::string_view value) {
  const auto v = lower(value);
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  bad_value(key, value);
}

std::string size_text(std::size_t bytes) {
  if (bytes != 0 && bytes % kGiB == 0) return std::to_string(bytes / kGiB) + "GiB";
  if (bytes != 0 && bytes % kMiB == 0) return std::to_string(bytes / kMiB) + "MiB";
  if (bytes != 0 && bytes % kKiB == 0) return std::to_string(bytes / kKiB) + "KiB";
  return std::to_string(bytes);
}

std::string number_text(double v) {
  std::ostringstream out;
  out << v;
  return out.str();
}

using Setter = std::function<void(BenchConfig&, std::string_view)>;
using Getter = std::function<std::string(const BenchConfig&)>;

struct Setting {
  std::string key;
  Setter set;
  Getter get;
};

const std::vector<Setting>& settings() {
  static const std::vector<Setting> table = [] {
    std::vector<Setting> t;
    auto size = [&](std::string key, std::size_t BenchConfig::*field) {
      t.push_back({key, [key, field](BenchConfig& c, std::string_view v) { c.*field = parse_size(key, v); },
                   [field](const BenchConfig& c) { return size_text(c.*field); }});
    };
    auto count = [&](std::string key, auto field) {
      t.push_back({key,
                   [key, field](BenchConfig& c, std::string_view v) {
                     c.*field = static_cast<std::remove_reference_t<decltype(c.*field)>>(parse_count(key, v));
                   },
                   [field](const BenchConfig& c) { return std::to_string(c.*field); }});
    };
    auto real = [&](std::string key, double BenchConfig::*field) {
      t.push_back({key, [key, field](BenchConfig& c, std::string_view v) { c.*field = parse_double(key, v); },
                   [field](const BenchConfig& c) { return number_text(c.*field); }});
    };

    size("memory", &BenchConfig::memory);
    t.push_back({"allocator",
                 [](BenchConfig& c, std::string_view v) {
                   const auto s = lower(v);
                   if (s == "segregated-fit") c.allocator = AllocatorKind::SegregatedFit;
                   else if (s == "slab") c.allocator = AllocatorKind::Slab;
                   else bad_value("allocator", v);
                 },
                 [](const BenchConfig& c) {
                   return std::string(c.allocator == AllocatorKind::Slab ? "slab" : "segregated-fit");
                 }});
    t.push_back({"policy", [](BenchConfig& c, std::string_view v) { c.policy = parse_policy(lower(v)); },
                 [](const BenchConfig& c) { return std::string(policy_name(c.policy)); }});
    t.push_back({"horizon", [](BenchConfig& c, std::string_view v) { c.cost.horizon_t = parse_double("horizon", v); },
                 [](const BenchConfig& c) { return number_text(c.cost.horizon_t); }});
    t.push_back({"linear-approx",
                 [](BenchConfig& c, std::string_view v) { c.cost.use_linear_approx = parse_bool("linear-approx", v); },
                 [](const BenchConfig& c) { return std::string(c.cost.use_linear_approx ? "true" : "false"); }});
    t.push_back({"write-cost-form",
                 [](BenchConfig& c, std::string_view v) {
                   const auto s = lower(v);
                   if (s == "divided") c.cost.write_cost_form = WriteCostForm::DividedByVw;
                   else if (s == "times") c.cost.write_cost_form = WriteCostForm::TimesVw;
                   else bad_value("write-cost-form", v);
                 },
                 [](const BenchConfig& c) {
                   return std::string(c.cost.write_cost_form == WriteCostForm::DividedByVw ? "divided" : "times");
                 }});
    t.push_back({"storage-dirs",
                 [](BenchConfig& c, std::string_view v) {
                   c.storage_dirs.clear();
                   std::size_t start = 0;
                   while (start <= v.size()) {
                     const auto comma = std::min(v.find(',', start), v.size());
                     if (comma > start) c.storage_dirs.emplace_back(std::string(v.substr(start, comma - start)));
                     start = comma + 1;
                   }
                 },
                 [](const BenchConfig& c) {
                   std::string out;
                   for (const auto& d : c.storage_dirs) out += (out.empty() ? "" : ",") + d.string();
                   return out;
                 }});
    size("page-size", &BenchConfig::page_size);
    size("small-page-size", &BenchConfig::small_page_size);
    count("objects", &BenchConfig::objects);
    size("object-size", &BenchConfig::object_size);
    t.push_back({"durability",
                 [](BenchConfig& c, std::string_view v) {
                   const auto s = lower(v);
                   if (s == "write-back") c.durability = Durability::WriteBack;
                   else if (s == "write-through") c.durability = Durability::WriteThrough;
                   else bad_value("durability", v);
                 },
                 [](const BenchConfig& c) {
                   return std::string(c.durability == Durability::WriteBack ? "write-back" : "write-through");
                 }});
    count("scans", &BenchConfig::scans);
    count("writers", &BenchConfig::writers);
    count("readers", &BenchConfig::readers);
    count("partitions", &BenchConfig::partitions);
    real("mb-per-thread", &BenchConfig::mb_per_thread);
    count("keys", &BenchConfig::keys);
    real("zipf", &BenchConfig::zipf);
    count("nodes", &BenchConfig::nodes);
    count("fail-node", &BenchConfig::fail_node);
    count("seed", &BenchConfig::seed);
    count("schemes", &BenchConfig::schemes);
    return t;
  }();
  return table;
}

const Setting& setting(std::string_view key) {
  for (const auto& s : settings()) {
    if (s.key == key) return s;
  }
  fail(Errc::InvalidConfig, "unknown setting '" + std::string(key) + "'");
}

std::vector<std::string_view> echoed_keys(Command command) {
  std::vector<std::string_view> keys{"memory", "allocator", "policy", "horizon", "linear-approx", "write-cost-form",
                                     "page-size"};
  auto add = [&](std::initializer_list<std::string_view> more) { keys.insert(keys.end(), more); };
  switch (command) {
    case Command::Seq:
    case Command::PagingCompare: add({"objects", "object-size", "durability", "scans", "readers"}); break;
    case Command::Shuffle:
      add({"small-page-size", "durability", "writers", "readers", "partitions", "mb-per-thread", "seed"});
      break;
    case Command::HashAgg: add({"partitions", "objects", "keys", "zipf", "seed"}); break;
    case Command::RecoveryDrill: add({"objects", "object-size", "nodes", "partitions", "fail-node", "seed", "schemes"}); break;
  }
  return keys;
}

}  // namespace

void apply_setting(BenchConfig& config, std::string_view key, std::string_view value) {
  setting(key).set(config, value);
}

const std::vector<std::string>& setting_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> out;
    for (const auto& s : settings()) out.push_back(s.key);
    return out;
  }();
  return keys;
}

std::string config_echo(Command command, const BenchConfig& config) {
  std::string out;
  for (auto key : echoed_keys(command)) {
    out += (out.empty() ? "" : ";") + std::string(key) + "=" + setting(key).get(config);
  }
  return out;
}

void validate(Command command, const BenchConfig& c) {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) fail(Errc::InvalidConfig, what);
  };
  require(c.memory > 0, "memory must be positive");
  require(c.page_size > 0, "page-size must be positive");
  require(c.page_size <= c.memory, "page-size exceeds memory");
  require(c.cost.horizon_t >= 1.0, "horizon must be at least 1");
  switch (command) {
    case Command::Seq:
    case Command::PagingCompare:
      require(c.object_size > 0, "object-size must be positive");
      require(c.object_size + kRecordPrefix <= c.page_size, "object-size does not fit a page");
      require(c.readers >= 1, "readers must be at least 1");
      break;
    case Command::Shuffle:
      require(c.partitions >= 1, "partitions must be at least 1");
      require(c.writers >= 1 && c.readers >= 1, "writers and readers must be at least 1");
      require(c.mb_per_thread > 0, "mb-per-thread must be positive");
      require(c.small_page_size > 0 && c.small_page_size <= c.page_size && c.page_size % c.small_page_size == 0,
              "page-size must be a multiple of small-page-size");
      break;
    case Command::HashAgg:
      require(c.partitions >= 1, "partitions must be at least 1");
      require(c.keys >= 1, "keys must be at least 1");
      require(c.zipf >= 0, "zipf exponent must be non-negative");
      require(c.memory / c.page_size >= c.partitions, "memory must hold one page per root partition");
      break;
    case Command::RecoveryDrill:
      require(c.nodes >= 2, "recovery needs at least 2 nodes to survive a failure");
      require(c.schemes == 2, "replica groups of exactly 2 schemes are supported");
      require(c.fail_node < c.nodes, "fail-node out of range");
      require(c.object_size + kRecordPrefix <= c.page_size, "object-size does not fit a page");
      break;
  }
}

// Results -----------------------------------------------------------------------

const PhaseResult& BenchResult::phase(std::string_view name) const {
  for (const auto& p : phases) {
    if (p.phase == name) return p;
  }
  fail(Errc::InvalidArgs, "no phase '" + std::string(name) + "' in " + benchmark);
}

std::uint64_t BenchResult::total(std::uint64_t PhaseResult::*counter) const {
  std::uint64_t sum = 0;
  for (const auto& p : phases) sum += p.*counter;
  return sum;
}

namespace {

// Scratch storage directories, removed afterwards.
class Scratch {
 public:
  explicit Scratch(const std::vector<fs::path>& bases) {
    auto targets = bases;
    if (targets.empty()) targets.push_back(fs::temp_directory_path());
    for (const auto& base : targets) {
      fs::create_directories(base);
      std::string tmpl = (base / "pangea-bench-XXXXXX").string();
      if (::mkdtemp(tmpl.data()) == nullptr) fail(Errc::IoFailure, "cannot create a directory under " + base.string());
      dirs_.emplace_back(tmpl);
    }
  }
  ~Scratch() {
    for (const auto& d : dirs_) {
      std::error_code ec;
      fs::remove_all(d, ec);
    }
  }
  Scratch(const Scratch&) = delete;
  Scratch& operator=(const Scratch&) = delete;

  const std::vector<fs::path>& dirs() const noexcept { return dirs_; }

 private:
  std::vector<fs::path> dirs_;
};

EngineConfig engine_config(const BenchConfig& c, const Scratch& scratch) {
  EngineConfig e;
  e.memory = c.memory;
  e.allocator = c.allocator;
  e.storage_dirs = scratch.dirs();
  e.policy = c.policy;
  e.cost = c.cost;
  // Measured I/O speeds would make victim choices depend on the machine.
  e.profile_io = false;
  return e;
}

struct Counters {
  PoolStats pool;
  IoCounters io;
};

Counters snapshot(const Engine& engine) { return {engine.pool().stats(), engine.files().counters()}; }

void add_delta(PhaseResult& r, const Counters& before, const Counters& after) {
  r.pages_loaded += after.pool.pages_loaded - before.pool.pages_loaded;
  r.pages_evicted += after.pool.pages_evicted - before.pool.pages_evicted;
  r.pages_written += after.pool.pages_written - before.pool.pages_written;
  r.bytes_written += after.io.write_bytes - before.io.write_bytes;
  r.bytes_read += after.io.read_bytes - before.io.read_bytes;
}

using Snapshot = std::vector<std::optional<Counters>>;

// Runs phases in order. A phase that throws marks itself blocked or failed and
// every later phase is listed as skipped, so the CSV rows stay the same shape.
class Phases {
 public:
  Phases(BenchResult& result, std::function<Snapshot()> snap) : result_(result), snap_(std::move(snap)) {}

  void run(const std::string& name, const std::function<void(PhaseResult&)>& body) {
    PhaseResult r;
    r.phase = name;
    if (stopped_) {
      r.status = "skipped";
      result_.phases.push_back(std::move(r));
      return;
    }
    const auto before = snap_();
    const auto start = std::chrono::steady_clock::now();
    try {
      body(r);
    } catch (const Error& e) {
      stopped_ = true;
      if (e.code() == Errc::PolicyBlocked) {
        r.status = "blocked";
        result_.blocked = true;
      } else {
        r.status = "failed";
        result_.failures.push_back(name + ": " + e.what());
      }
      if (!r.detail.empty()) r.detail += ";";
      r.detail += "error=" + std::string(errc_name(e.code()));
    } catch (const std::exception& e) {
      stopped_ = true;
      r.status = "failed";
      result_.failures.push_back(name + ": " + e.what());
    }
    r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const auto after = snap_();
    for (std::size_t i = 0; i < before.size() && i < after.size(); ++i) {
      if (before[i] && after[i]) add_delta(r, *before[i], *after[i]);
    }
    result_.phases.push_back(std::move(r));
  }

  void check(bool ok, const std::string& what) {
    if (!ok) result_.failures.push_back(what);
  }

 private:
  BenchResult& result_;
  std::function<Snapshot()> snap_;
  bool stopped_ = false;
};

BenchResult start(Command command, const BenchConfig& c) {
  BenchResult r;
  r.benchmark = std::string(command_name(command == Command::PagingCompare ? Command::Seq : command));
  r.policy = std::string(policy_name(c.policy));
  r.config = config_echo(command, c);
  return r;
}

// Runs fn(i) for i in [0, n) on n threads; rethrows the first failure.
void parallel(std::size_t n, const std::function<void(std::size_t)>& fn) {
  if (n == 1) {
    fn(0);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> threads;
  threads.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    threads.emplace_back([&, i] {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

void fill_object(std::vector<std::byte>& out, std::uint64_t index) {
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = static_cast<std::byte>((index * 31 + j * 7 + 1) & 0xff);
}

std::string kv(std::string_view key, std::uint64_t value) { return std::string(key) + "=" + std::to_string(value); }

}  // namespace

// Sequential write / scan / delete ------------------------------------------------

BenchResult bench_seq(const BenchConfig& c) {
  validate(Command::Seq, c);
  BenchResult result = start(Command::Seq, c);
  Scratch scratch(c.storage_dirs);
  Engine engine(engine_config(c, scratch));
  const SetId set = engine.create_set("objects", c.page_size, c.durability);
  Phases phases(result, [&] { return Snapshot{snapshot(engine)}; });

  std::uint64_t expected_sum = 0;
  phases.run("write", [&](PhaseResult& ph) {
    SequentialWriter writer(engine, set);
    std::vector<std::byte> record(c.object_size);
    for (std::uint64_t i = 0; i < c.objects; ++i) {
      fill_object(record, i);
      expected_sum += kernels::byte_sum(record);
      writer.add_object(record);
    }
    writer.close();
    ph.detail = kv("pages", engine.pool().page_seqs(set).size());
  });

  for (std::size_t s = 1; s <= c.scans; ++s) {
    phases.run("scan" + std::to_string(s), [&](PhaseResult& ph) {
      auto iterators = seq_get_iterators(engine, set, c.readers);
      std::vector<std::uint64_t> sums(c.readers, 0), counts(c.readers, 0);
      parallel(c.readers, [&](std::size_t t) {
        while (auto rec = iterators[t].next()) {
          sums[t] += kernels::byte_sum(*rec);
          ++counts[t];
        }
      });
      iterators.clear();
      std::uint64_t sum = 0, count = 0;
      for (std::size_t t = 0; t < c.readers; ++t) {
        sum += sums[t];
        count += counts[t];
      }
      phases.check(sum == expected_sum && count == c.objects,
                   "scan" + std::to_string(s) + ": read " + std::to_string(count) + " records summing " +
                       std::to_string(sum) + ", expected " + std::to_string(c.objects) + " summing " +
                       std::to_string(expected_sum));
      ph.detail = kv("records", count);
    });
  }

  phases.run("delete", [&](PhaseResult&) {
    engine.mark_lifetime_ended(set);
    engine.remove_set(set);
  });
  return result;
}

std::vector<BenchResult> paging_compare(const BenchConfig& c) {
  std::vector<BenchResult> out;
  for (auto kind : {PolicyKind::DataAware, PolicyKind::GlobalLru, PolicyKind::GlobalMru, PolicyKind::DbminAdaptive,
                    PolicyKind::Dbmin1, PolicyKind::Dbmin1000}) {
    auto run = c;
    run.policy = kind;
    out.push_back(bench_seq(run));
  }
  return out;
}

// Shuffle -------------------------------------------------------------------------

namespace {

struct Tally {
  std::uint64_t records = 0;
  std::uint64_t byte_sum = 0;
  std::uint64_t fingerprint = 0;  // sum of record hashes, order independent

  void add(std::span<const std::byte> rec) {
    ++records;
    byte_sum += kernels::byte_sum(rec);
    fingerprint += stable_hash(rec, 0x5eed);
  }
  void merge(const Tally& o) {
    records += o.records;
    byte_sum += o.byte_sum;
    fingerprint += o.fingerprint;
  }
  friend bool operator==(const Tally&, const Tally&) = default;
};

}  // namespace

BenchResult bench_shuffle(const BenchConfig& c) {
  validate(Command::Shuffle, c);
  BenchResult result = start(Command::Shuffle, c);
  Scratch scratch(c.storage_dirs);
  Engine engine(engine_config(c, scratch));
  ShuffleOptions options;
  options.page_size = c.page_size;
  options.small_page_size = c.small_page_size;
  options.durability = c.durability;
  options.seed = c.seed;
  ShuffleService service(engine, "shuffle", c.partitions, options);
  Phases phases(result, [&] { return Snapshot{snapshot(engine)}; });

  const auto budget = static_cast<std::uint64_t>(c.mb_per_thread * static_cast<double>(kMiB));
  std::vector<std::vector<Tally>> written(c.writers, std::vector<Tally>(c.partitions));
  auto data_files = [&] {
    std::uint64_t n = 0;
    for (std::size_t p = 0; p < c.partitions; ++p) n += engine.files().data_file_count(service.partition_set(p));
    return n;
  };
  // Largest number of data files found in any one storage directory.
  auto files_per_dir = [&] {
    std::uint64_t most = 0;
    for (const auto& dir : scratch.dirs()) {
      std::uint64_t n = 0;
      for (const auto& entry : fs::recursive_directory_iterator(dir)) {
        n += entry.path().filename().string().find(".data.") != std::string::npos;
      }
      most = std::max(most, n);
    }
    return most;
  };

  phases.run("write", [&](PhaseResult& ph) {
    parallel(c.writers, [&](std::size_t w) {
      ShuffleWriter writer(service, w);
      std::mt19937_64 rng(splitmix64(c.seed * 0x100 + w));
      std::string rec;
      for (std::uint64_t produced = 0; produced < budget;) {
        rec.resize(8 + rng() % 5);
        for (auto& ch : rec) ch = static_cast<char>('a' + rng() % 26);
        writer.write(rec);
        written[w][service.partition_for(as_bytes(rec))].add(as_bytes(rec));
        produced += rec.size();
      }
      writer.close();
    });
    service.finish();
    ph.spills = service.spill_file_count();
    ph.detail = kv("data_files", data_files());
  });

  phases.run("read", [&](PhaseResult& ph) {
    std::vector<Tally> read(c.partitions);
    std::vector<std::uint64_t> misrouted(c.partitions, 0);
    parallel(std::min(c.readers, c.partitions), [&](std::size_t r) {
      for (std::size_t p = r; p < c.partitions; p += c.readers) {
        auto it = seq_get_iterators(engine, service.partition_set(p), 1);
        while (auto rec = it[0].next()) {
          read[p].add(*rec);
          misrouted[p] += service.partition_for(*rec) != p;
        }
      }
    });
    std::uint64_t records = 0;
    for (std::size_t p = 0; p < c.partitions; ++p) {
      Tally expect;
      for (std::size_t w = 0; w < c.writers; ++w) expect.merge(written[w][p]);
      phases.check(read[p] == expect, "partition " + std::to_string(p) + ": read " +
                                          std::to_string(read[p].records) + " records, wrote " +
                                          std::to_string(expect.records));
      phases.check(misrouted[p] == 0, "partition " + std::to_string(p) + " holds " +
                                          std::to_string(misrouted[p]) + " misrouted records");
      records += read[p].records;
    }
    ph.spills = service.spill_file_count();
    phases.check(ph.spills <= c.partitions, "spill files exceed partitions");
    ph.detail = kv("records", records) + ";" + kv("data_files", data_files()) + ";" +
                kv("max_files_per_dir", files_per_dir());
  });

  phases.run("delete", [&](PhaseResult&) {
    for (std::size_t p = 0; p < c.partitions; ++p) {
      engine.mark_lifetime_ended(service.partition_set(p));
      engine.remove_set(service.partition_set(p));
    }
  });
  return result;
}

// Hash aggregation --------------------------------------------------------------------

namespace {

// Draws key indices uniformly, or Zipf-distributed with exponent s over
// [0, keys) through an inverted CDF.
class KeySampler {
 public:
  KeySampler(std::uint64_t keys, double s, std::uint64_t seed) : keys_(keys), rng_(seed) {
    if (s > 0) {
      cdf_.resize(keys);
      double acc = 0;
      for (std::uint64_t i = 0; i < keys; ++i) cdf_[i] = acc += std::pow(static_cast<double>(i + 1), -s);
      for (auto& v : cdf_) v /= acc;
    }
  }

  std::uint64_t next() {
    if (cdf_.empty()) return std::uniform_int_distribution<std::uint64_t>(0, keys_ - 1)(rng_);
    const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng_);
    const auto it = std::lower_bound(cdf_.begin(), cdf_.end(), u);
    return std::min<std::uint64_t>(static_cast<std::uint64_t>(it - cdf_.begin()), keys_ - 1);
  }

  std::int64_t value() { return static_cast<std::int64_t>(rng_() % 100) + 1; }

 private:
  std::uint64_t keys_;
  std::mt19937_64 rng_;
  std::vector<double> cdf_;
};

std::string key_text(std::uint64_t index) { return "key-" + std::to_string(index); }

}  // namespace

BenchResult bench_hash(const BenchConfig& c) {
  validate(Command::HashAgg, c);
  BenchResult result = start(Command::HashAgg, c);

  std::unordered_map<std::string, std::int64_t> reference;
  {
    KeySampler sampler(c.keys, c.zipf, c.seed);
    for (std::uint64_t i = 0; i < c.objects; ++i) {
      const auto k = sampler.next();
      reference[key_text(k)] += sampler.value();
    }
  }

  Scratch scratch(c.storage_dirs);
  Engine engine(engine_config(c, scratch));
  const SetId set = engine.create_set("aggregate", c.page_size, Durability::WriteBack);
  Phases phases(result, [&] { return Snapshot{snapshot(engine)}; });
  {
    HashBufferOptions options;
    options.root_partitions = c.partitions;
    options.seed = c.seed;
    std::optional<VirtualHashBuffer> buffer;

    phases.run("aggregate", [&](PhaseResult& ph) {
      buffer.emplace(engine, set, int64_sum(), options);
      KeySampler sampler(c.keys, c.zipf, c.seed);
      for (std::uint64_t i = 0; i < c.objects; ++i) {
        const auto k = sampler.next();
        buffer->upsert(key_text(k), encode_int64(sampler.value()));
      }
      const auto stats = buffer->stats();
      ph.spills = stats.spills;
      ph.detail = kv("splits", stats.splits) + ";" + kv("partitions", stats.partitions);
    });

    phases.run("finalize", [&](PhaseResult& ph) {
      auto remaining = reference;
      std::uint64_t emitted = 0, wrong = 0;
      auto cursor = buffer->finalize();
      while (auto entry = cursor.next()) {
        ++emitted;
        auto it = remaining.find(entry->key);
        if (it == remaining.end() || it->second != decode_int64(entry->value)) {
          ++wrong;
        } else {
          remaining.erase(it);
        }
      }
      phases.check(wrong == 0 && remaining.empty(),
                   "aggregate differs from the reference: " + std::to_string(wrong) + " wrong or repeated keys, " +
                       std::to_string(remaining.size()) + " missing");
      const auto stats = buffer->stats();
      ph.spills = stats.spills;
      ph.detail = kv("keys", emitted) + ";" + kv("spill_pages_read", stats.spill_pages_read);
    });
    buffer.reset();
  }
  phases.run("delete", [&](PhaseResult&) {
    engine.mark_lifetime_ended(set);
    engine.remove_set(set);
  });
  return result;
}

// Recovery drill ----------------------------------------------------------------------

BenchResult bench_recovery(const BenchConfig& c) {
  validate(Command::RecoveryDrill, c);
  BenchResult result = start(Command::RecoveryDrill, c);
  // Each simulated node lays out its own disks under the first directory.
  std::vector<fs::path> bases;
  if (!c.storage_dirs.empty()) bases.push_back(c.storage_dirs.front());
  Scratch scratch(bases);

  ClusterConfig cc;
  cc.num_workers = c.nodes;
  cc.mem_per_worker = c.memory;
  cc.root = scratch.dirs().front() / "cluster";
  cc.policy = c.policy;
  cc.profile_io = false;
  Cluster cluster(cc);

  Phases phases(result, [&] {
    Snapshot s(c.nodes);
    for (NodeId n = 0; n < c.nodes; ++n) {
      if (cluster.alive(n)) s[n] = snapshot(cluster.engine(n));
    }
    return s;
  });

  std::vector<std::string> records;
  records.reserve(c.objects);
  std::mt19937_64 rng(c.seed);
  for (std::uint64_t i = 0; i < c.objects; ++i) {
    std::string r = "o" + std::to_string(i) + "-";
    while (r.size() < c.object_size) r.push_back(static_cast<char>('a' + rng() % 26));
    records.push_back(std::move(r));
  }

  const std::size_t partitions = c.partitions ? c.partitions : 4 * c.nodes;
  std::optional<ReplicaGroup> group;
  std::vector<std::string> snapshot_b;

  phases.run("setup", [&](PhaseResult& ph) {
    cluster.create_set("raw", c.page_size, Durability::WriteBack);
    cluster.dispatch_data("raw", records, DispatchStrategy::RoundRobin);
    partition_set(cluster, "raw", "a", make_hash_scheme(1, partitions, c.nodes, 2 * c.seed));
    partition_set(cluster, "raw", "b", make_hash_scheme(2, partitions, c.nodes, 2 * c.seed + 1));
    group = register_replica(cluster, "a", "b");
    snapshot_b = cluster.read_all("b");
    std::sort(snapshot_b.begin(), snapshot_b.end());
    const double fraction =
        group->object_count ? static_cast<double>(group->colliding_count) / static_cast<double>(group->object_count) : 0;
    ph.detail = kv("objects", group->object_count) + ";" + kv("colliding", group->colliding_count) +
                ";colliding_fraction=" + number_text(fraction);
  });

  phases.run("recover", [&](PhaseResult& ph) {
    cluster.fail_node(c.fail_node);
    const auto report = recover_node(cluster, *group, 1, c.fail_node);
    auto after = cluster.read_all("b");
    std::sort(after.begin(), after.end());
    phases.check(after == snapshot_b, "recovered copy holds " + std::to_string(after.size()) +
                                          " objects, snapshot had " + std::to_string(snapshot_b.size()));
    ph.detail = kv("objects_restored", report.objects_restored) + ";" +
                kv("colliding_restored", report.colliding_restored) + ";" +
                kv("lost_partitions", report.lost_partitions.size()) + ";" + kv("pages_shipped", report.pages_shipped);
  });
  return result;
}

std::vector<BenchResult> run(Command command, const BenchConfig& config) {
  switch (command) {
    case Command::Seq: return {bench_seq(config)};
    case Command::Shuffle: return {bench_shuffle(config)};
    case Command::HashAgg: return {bench_hash(config)};
    case Command::PagingCompare: return paging_compare(config);
    case Command::RecoveryDrill: return {bench_recovery(config)};
  }
  return {};
}

// CSV ------------------------------------------------------------------------------

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

}  // namespace

std::string csv_header() {
  return "benchmark,policy,phase,status,wall_seconds,pages_loaded,pages_evicted,pages_written,bytes_written,"
         "bytes_read,spills,detail,config";
}

void write_csv(std::ostream& out, const std::vector<BenchResult>& results) {
  out << csv_header() << '\n';
  for (const auto& r : results) {
    for (const auto& p : r.phases) {
      char wall[32];
      std::snprintf(wall, sizeof wall, "%.6f", p.wall_seconds);
      out << csv_field(r.benchmark) << ',' << csv_field(r.policy) << ',' << csv_field(p.phase) << ','
          << csv_field(p.status) << ',' << wall << ',' << p.pages_loaded << ',' << p.pages_evicted << ','
          << p.pages_written << ',' << p.bytes_written << ',' << p.bytes_read << ',' << p.spills << ','
          << csv_field(p.detail) << ',' << csv_field(r.config) << '\n';
    }
  }
}

}  // namespace pangea::bench
