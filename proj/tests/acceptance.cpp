// Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any fail.
// Expected values come from closed forms, reference containers and the
// page-level simulator in trace_sim.hpp, never from the engine itself.

#include <stdlib.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstring>
#include <cstdio>
#include <functional>
#include <map>
#include <mutex>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "fake_view.hpp"
#include "pangea/bench.hpp"
#include "pangea/placement.hpp"
#include "pangea/services.hpp"
#include "trace_sim.hpp"

using namespace pangea;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

class Scratch {
 public:
  Scratch() {
    std::string tmpl = (fs::temp_directory_path() / "pangea-accept-XXXXXX").string();
    if (::mkdtemp(tmpl.data()) == nullptr) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
  }
  ~Scratch() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  fs::path operator/(const std::string& sub) const { return path_ / sub; }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

EngineConfig config_in(const Scratch& dir, std::size_t memory, PolicyKind policy = PolicyKind::DataAware) {
  EngineConfig c;
  c.memory = memory;
  c.storage_dirs = {dir / "disk0"};
  c.policy = policy;
  c.profile_io = false;
  return c;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::uint64_t detail_value(const std::string& detail, const std::string& key) {
  const auto at = detail.find(key + "=");
  if (at == std::string::npos) throw std::runtime_error("no " + key + " in '" + detail + "'");
  return std::stoull(detail.substr(at + key.size() + 1));
}

double detail_real(const std::string& detail, const std::string& key) {
  const auto at = detail.find(key + "=");
  if (at == std::string::npos) throw std::runtime_error("no " + key + " in '" + detail + "'");
  return std::stod(detail.substr(at + key.size() + 1));
}

// 1. Cost model -------------------------------------------------------------------

Outcome cost_model() {
  struct Case {
    std::string name;
    double got;
    long double want;
  };
  std::vector<Case> cases;
  auto exact = [](long double x) { return 1.0L - std::exp(-x); };

  for (double lambda : {0.001, 0.01, 0.1, 0.25, 0.5, 1.0, 2.0}) {
    for (double t : {1.0, 3.0}) {
      cases.push_back({fmt("p_reuse(%g,%g)", lambda, t), p_reuse(lambda, t, false), exact((long double)lambda * t)});
      cases.push_back({fmt("linear(%g,%g)", lambda, t), p_reuse(lambda, t, true),
                       std::min<long double>((long double)lambda * t, 1.0L)});
    }
  }
  cases.push_back({"p_reuse(1,1)", p_reuse(1.0, 1.0, false), 0.6321205588285576784L});
  cases.push_back({"lambda(100,96)", lambda_estimate(100, 96), 0.25L});
  cases.push_back({"lambda(t,t-1)", lambda_estimate(77, 76), 1.0L});
  cases.push_back({"lambda(1000,0)", lambda_estimate(1000, 0), 0.001L});

  CostModelParams params;
  SetCostInputs wt;
  wt.durability = Durability::WriteThrough;
  wt.v_r = 0.1;
  wt.v_w = 0.3;
  const CandidatePage clean{PageKey{SetId{1}, 0}, 0, false, false};
  cases.push_back({"cost clean write-through", eviction_cost(clean, wt, params, 1000), exact(0.001L) * 0.1L});

  SetCostInputs wb;
  wb.durability = Durability::WriteBack;
  wb.v_r = 0.0;
  wb.v_w = 0.2;
  const CandidatePage dirty{PageKey{SetId{2}, 0}, 0, true, false};
  cases.push_back({"cost dirty write-back", eviction_cost(dirty, wb, params, 1'000'000), 0.2L});

  SetCostInputs seq = wt;
  seq.v_r = 0.4;
  seq.reading_pattern = ReadingPattern::SequentialRead;
  SetCostInputs rnd = seq;
  rnd.reading_pattern = ReadingPattern::RandomRead;
  rnd.w_r = 2.0;
  const CandidatePage recent{PageKey{SetId{3}, 0}, 90, false, false};
  cases.push_back({"random read doubles", eviction_cost(recent, rnd, params, 100),
                   2.0L * eviction_cost(recent, seq, params, 100)});
  cases.push_back({"random read term", eviction_cost(recent, rnd, params, 100), exact(0.1L) * 0.8L});

  SetCostInputs mixed;
  mixed.durability = Durability::WriteBack;
  mixed.v_r = 0.05;
  mixed.v_w = 0.02;
  const CandidatePage old_dirty{PageKey{SetId{4}, 0}, 40, true, false};
  params.horizon_t = 4;
  cases.push_back({"times form, t=4", eviction_cost(old_dirty, mixed, params, 60), 0.02L + exact(0.2L) * 0.05L});
  params.write_cost_form = WriteCostForm::DividedByVw;
  cases.push_back({"divided form, t=4", eviction_cost(old_dirty, mixed, params, 60), 50.0L + exact(0.2L) * 0.05L});
  params.use_linear_approx = true;
  cases.push_back({"divided form, linear", eviction_cost(old_dirty, mixed, params, 60), 50.0L + 0.2L * 0.05L});

  double worst = 0;
  std::string worst_name;
  for (const auto& c : cases) {
    const long double err = c.want == 0 ? std::fabs((long double)c.got) : std::fabs((c.got - c.want) / c.want);
    if (err > worst) {
      worst = static_cast<double>(err);
      worst_name = c.name;
    }
  }

  // Linear versus exact gap stays under (lambda t)^2 / 2 while lambda t <= 0.5.
  std::size_t gap_violations = 0;
  for (int i = 1; i <= 500; ++i) {
    const double x = 0.5 * i / 500.0;
    for (double t : {1.0, 2.0, 5.0}) {
      const double lambda = x / t;
      const double gap = p_reuse(lambda, t, true) - p_reuse(lambda, t, false);
      if (gap < 0 || gap > x * x / 2 + 1e-15) ++gap_violations;
    }
  }

  Outcome o;
  o.pass = cases.size() >= 20 && worst <= 1e-12 && gap_violations == 0;
  o.detail = fmt("%zu cases, worst relative error %.2e (%s), %zu gap-bound violations", cases.size(), worst,
                 worst_name.c_str(), gap_violations);
  return o;
}

// 2 and 3. Loop-sequential paging ------------------------------------------------------

constexpr std::size_t kLoopPages = 50;
constexpr std::size_t kLoopPageSize = kMiB;
constexpr std::size_t kLoopObject = 80;
constexpr std::size_t kLoopScans = 5;

bench::BenchConfig loop_config(PolicyKind policy) {
  auto c = bench::defaults(bench::Command::Seq, true);
  const std::size_t per_page = kLoopPageSize / (kLoopObject + 4);
  c.objects = kLoopPages * per_page;
  c.object_size = kLoopObject;
  c.page_size = kLoopPageSize;
  c.memory = kLoopPages * 8 / 10 * kLoopPageSize;  // 80% of the data
  c.scans = kLoopScans;
  c.durability = Durability::WriteBack;
  c.policy = policy;
  return c;
}

struct LoopRun {
  bench::BenchResult result;
  std::vector<testing::SimPhase> expected;
  std::uint64_t loads = 0;
  std::uint64_t written = 0;
  std::size_t mismatches = 0;
};

LoopRun loop_run(PolicyKind policy, testing::SimPolicy sim) {
  LoopRun r;
  r.result = bench::bench_seq(loop_config(policy));
  r.expected = testing::LoopSequentialSim(sim, kLoopPages * 8 / 10).run(kLoopPages, kLoopScans);
  if (r.result.phases.size() != r.expected.size()) {
    r.mismatches = 1 + r.expected.size();
    return r;
  }
  for (std::size_t i = 0; i < r.expected.size(); ++i) {
    const auto& got = r.result.phases[i];
    const auto& want = r.expected[i];
    r.mismatches += got.phase != want.name || got.pages_loaded != want.loads || got.pages_evicted != want.evictions ||
                    got.pages_written != want.writes || got.bytes_written != want.writes * kLoopPageSize;
  }
  r.loads = r.result.total(&bench::PhaseResult::pages_loaded);
  r.written = r.result.total(&bench::PhaseResult::bytes_written);
  return r;
}

std::map<std::string, LoopRun> loop_runs;

const LoopRun& loop(PolicyKind policy) {
  const auto name = std::string(policy_name(policy));
  if (!loop_runs.count(name)) {
    const auto sim = policy == PolicyKind::DataAware   ? testing::SimPolicy::DataAware
                     : policy == PolicyKind::GlobalLru ? testing::SimPolicy::Lru
                     : policy == PolicyKind::GlobalMru ? testing::SimPolicy::Mru
                                                       : testing::SimPolicy::DbminAdaptive;
    loop_runs.emplace(name, loop_run(policy, sim));
  }
  return loop_runs.at(name);
}

Outcome paging_ordering() {
  const auto& aware = loop(PolicyKind::DataAware);
  const auto& mru = loop(PolicyKind::GlobalMru);
  const auto& lru = loop(PolicyKind::GlobalLru);
  const std::size_t mismatches = aware.mismatches + mru.mismatches + lru.mismatches;
  const bool verified = aware.result.verified() && mru.result.verified() && lru.result.verified();
  Outcome o;
  o.pass = verified && mismatches == 0 && aware.loads <= mru.loads && 2 * mru.loads < lru.loads &&
           aware.written <= mru.written;
  o.detail = fmt("loads data-aware %llu, mru %llu, lru %llu; MiB written %llu / %llu / %llu; %zu phase mismatches "
                 "against the simulator",
                 (unsigned long long)aware.loads, (unsigned long long)mru.loads, (unsigned long long)lru.loads,
                 (unsigned long long)(aware.written / kMiB), (unsigned long long)(mru.written / kMiB),
                 (unsigned long long)(lru.written / kMiB), mismatches);
  return o;
}

Outcome dbmin() {
  const auto blocked = bench::bench_seq(loop_config(PolicyKind::Dbmin1000));

  // With room for 1000 pages the same policy runs to completion.
  auto roomy = loop_config(PolicyKind::Dbmin1000);
  roomy.page_size = 4 * kKiB;
  roomy.memory = 1024 * roomy.page_size;
  roomy.objects = 1250 * (roomy.page_size / (kLoopObject + 4));
  roomy.scans = 1;
  const auto fits = bench::bench_seq(roomy);

  const auto& adaptive = loop(PolicyKind::DbminAdaptive);
  const auto& mru = loop(PolicyKind::GlobalMru);
  const double ratio = static_cast<double>(adaptive.loads) / static_cast<double>(mru.loads);
  Outcome o;
  o.pass = blocked.blocked && blocked.phase("write").status == "blocked" && fits.verified() && !fits.blocked &&
           adaptive.result.verified() && !adaptive.result.blocked && adaptive.mismatches == 0 &&
           std::fabs(ratio - 1.0) <= 0.25;
  o.detail = fmt("dbmin-1000 %s at 40 pages, %s at 1024 pages; dbmin-adaptive loads %llu vs mru %llu (ratio %.3f)",
                 blocked.blocked ? "blocked" : "ran", fits.blocked ? "blocked" : "ran",
                 (unsigned long long)adaptive.loads, (unsigned long long)mru.loads, ratio);
  return o;
}

// 4. Eviction quota --------------------------------------------------------------------

Outcome quota_rule() {
  std::mt19937_64 rng(2024);
  const auto policy = make_policy(PolicyKind::DataAware);
  std::size_t writing = 0, reading = 0, ended_cases = 0, failures = 0;
  const WritingPattern writes[] = {WritingPattern::None, WritingPattern::SequentialWrite,
                                   WritingPattern::ConcurrentWrite, WritingPattern::RandomMutableWrite};
  const ReadingPattern reads[] = {ReadingPattern::None, ReadingPattern::SequentialRead, ReadingPattern::RandomRead};
  const CurrentOperation ops[] = {CurrentOperation::None, CurrentOperation::Read, CurrentOperation::Write,
                                  CurrentOperation::ReadAndWrite};

  for (int scenario = 0; scenario < 200; ++scenario) {
    testing::FakeView view;
    struct Info {
      CurrentOperation op;
      bool ended;
      bool mru;
      std::vector<std::pair<Tick, std::uint64_t>> unpinned;
    };
    std::map<std::uint64_t, Info> sets;
    Tick tick = 0;
    const int nsets = 1 + static_cast<int>(rng() % 5);
    for (int s = 1; s <= nsets; ++s) {
      auto& in = view.add_set(s);
      in.writing_pattern = writes[rng() % 4];
      in.reading_pattern = reads[rng() % 3];
      in.current_operation = ops[rng() % 4];
      in.durability = rng() % 2 ? Durability::WriteBack : Durability::WriteThrough;
      in.lifetime = rng() % 4 == 0 ? Lifetime::LifetimeEnded : Lifetime::Alive;
      in.v_r = 0.01 * static_cast<double>(1 + rng() % 100);
      in.v_w = 0.01 * static_cast<double>(1 + rng() % 100);
      in.w_r = in.reading_pattern == ReadingPattern::RandomRead ? 2.0 : 1.0;
      const bool lru = in.reading_pattern == ReadingPattern::RandomRead ||
                       in.writing_pattern == WritingPattern::RandomMutableWrite ||
                       (in.reading_pattern == ReadingPattern::None && in.writing_pattern == WritingPattern::None);
      Info info{in.current_operation, in.lifetime == Lifetime::LifetimeEnded, !lru, {}};
      const int npages = 1 + static_cast<int>(rng() % 60);
      for (int p = 0; p < npages; ++p) {
        testing::FakeView::Page page{static_cast<std::uint64_t>(p), tick += 1 + rng() % 3, rng() % 2 == 0,
                                     rng() % 5 == 0};
        if (!page.pinned) info.unpinned.push_back({page.tick, page.seq});
        view.add_page(s, page);
      }
      sets.emplace(s, std::move(info));
    }
    bool any_evictable = false, ended_evictable = false;
    for (const auto& [id, info] : sets) {
      any_evictable = any_evictable || !info.unpinned.empty();
      ended_evictable = ended_evictable || (info.ended && !info.unpinned.empty());
    }
    if (!any_evictable) continue;

    const auto d = policy->decide(view, tick + 10, std::nullopt);
    const auto& info = sets.at(d.victim_set.value);
    const bool is_writing = info.op == CurrentOperation::Write || info.op == CurrentOperation::ReadAndWrite;
    const std::size_t n = info.unpinned.size();
    const std::size_t quota = is_writing ? 1 : std::max<std::size_t>(1, (n + 9) / 10);
    auto order = info.unpinned;
    std::sort(order.begin(), order.end());
    if (info.mru) std::reverse(order.begin(), order.end());
    std::vector<PageKey> want;
    for (std::size_t i = 0; i < quota && i < order.size(); ++i) want.push_back({d.victim_set, order[i].second});

    bool ok = d.victim_pages == want;
    if (ended_evictable) {
      ++ended_cases;
      ok = ok && info.ended;
    }
    (is_writing ? writing : reading) += 1;
    failures += !ok;
  }
  Outcome o;
  o.pass = failures == 0 && writing > 0 && reading > 0 && ended_cases > 0;
  o.detail = fmt("200 scenarios: %zu writing, %zu not writing, %zu with an ended set; %zu failures", writing, reading,
                 ended_cases, failures);
  return o;
}

// 5. Durability --------------------------------------------------------------------------

std::vector<std::string> make_records(std::size_t n, std::uint64_t seed, std::size_t max_len = 120) {
  std::mt19937_64 rng(seed);
  std::vector<std::string> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::string r = std::to_string(i) + ":";
    const std::size_t len = 1 + rng() % max_len;
    while (r.size() < len) r.push_back(static_cast<char>('A' + rng() % 58));
    out.push_back(std::move(r));
  }
  return out;
}

Outcome durability() {
  Scratch dir;
  const auto records = make_records(20'000, 5);
  const std::size_t page = 16 * kKiB;

  // Write-through: everything survives a crash.
  std::size_t wt_recovered = 0;
  bool wt_equal = false;
  {
    SetId id;
    {
      Engine e(config_in(dir, 256 * kKiB));
      id = e.create_set("wt", page, Durability::WriteThrough);
      SequentialWriter w(e, id);
      for (const auto& r : records) w.add_object(r);
      w.close();
      e.crash();
    }
    Engine e(config_in(dir, 256 * kKiB));
    e.open_existing_set(id, "wt", page, Durability::WriteThrough);
    const auto back = read_all_records(e, id);
    wt_recovered = back.size();
    wt_equal = back == records;
  }

  // Write-back: only what was flushed comes back, even when later pages were
  // evicted to disk before the crash.
  bool wb_equal = false;
  std::size_t wb_recovered = 0, flushed = 0;
  {
    Scratch wbdir;
    SetId id;
    {
      Engine e(config_in(wbdir, 256 * kKiB));
      id = e.create_set("wb", page, Durability::WriteBack);
      SequentialWriter w(e, id);
      for (std::size_t i = 0; i < records.size() / 2; ++i) w.add_object(records[i]);
      w.close();
      e.flush_set(id);
      flushed = records.size() / 2;
      SequentialWriter more(e, id);
      for (std::size_t i = records.size() / 2; i < records.size(); ++i) more.add_object(records[i]);
      more.close();
      e.crash();
    }
    Engine e(config_in(wbdir, 256 * kKiB));
    e.open_existing_set(id, "wb", page, Durability::WriteBack);
    const auto back = read_all_records(e, id);
    wb_recovered = back.size();
    wb_equal = back == std::vector<std::string>(records.begin(), records.begin() + flushed);
  }

  // Random operations: a dirty page of a live set is never evicted without
  // being written first.
  std::size_t violations = 0, dirty_evictions = 0, ops = 0;
  {
    Scratch opdir;
    Engine e(config_in(opdir, 16 * 4 * kKiB));
    std::unordered_map<PageKey, PoolEventKind> last;
    std::mutex m;
    e.pool().set_observer([&](const PoolEvent& ev) {
      std::lock_guard lock(m);
      if (ev.kind == PoolEventKind::Evict && ev.dirty && ev.alive) {
        ++dirty_evictions;
        auto it = last.find(ev.key);
        if (it == last.end() || it->second != PoolEventKind::Write) ++violations;
      }
      last[ev.key] = ev.kind;
    });
    std::mt19937_64 rng(77);
    struct Live {
      SetId id;
      std::vector<std::uint64_t> seqs;
    };
    std::vector<Live> sets;
    std::uint64_t names = 0;
    auto add_set = [&] {
      const auto d = rng() % 2 ? Durability::WriteBack : Durability::WriteThrough;
      sets.push_back({e.create_set("s" + std::to_string(names++), 4 * kKiB, d), {}});
    };
    for (int i = 0; i < 4; ++i) add_set();
    for (ops = 0; ops < 100'000; ++ops) {
      auto& s = sets[rng() % sets.size()];
      const auto roll = rng() % 100;
      if (roll < 30 || s.seqs.empty()) {
        const auto h = e.allocate_page(s.id);
        h.bytes[0] = std::byte{1};
        e.unpin_page(h, true);
        s.seqs.push_back(h.key.seq);
      } else if (roll < 80) {
        const PageKey key{s.id, s.seqs[rng() % s.seqs.size()]};
        const auto h = e.pin_page(key);
        e.unpin_page(h, rng() % 2 == 0);
      } else if (roll < 92) {
        const PageKey key{s.id, s.seqs[rng() % s.seqs.size()]};
        if (e.pool().page_state(key).resident) e.evict_page(key);
      } else if (roll < 97) {
        e.flush_set(s.id);
      } else {
        const SetId gone = s.id;
        e.mark_lifetime_ended(gone);
        e.remove_set(gone);
        sets.erase(std::find_if(sets.begin(), sets.end(), [&](const Live& l) { return l.id == gone; }));
        add_set();
      }
    }
    e.pool().set_observer(nullptr);
  }

  Outcome o;
  o.pass = wt_equal && wb_equal && violations == 0 && dirty_evictions > 0;
  o.detail = fmt("write-through recovered %zu/%zu; write-back recovered %zu (flushed %zu, exact %s); %zu ops, "
                 "%zu dirty evictions, %zu without a prior write",
                 wt_recovered, records.size(), wb_recovered, flushed, wb_equal ? "yes" : "no", ops, dirty_evictions,
                 violations);
  return o;
}

// 6. Service oracles -------------------------------------------------------------------

Outcome service_oracles() {
  std::vector<std::string> notes;
  bool ok = true;

  // Shuffle: 4 writers into 4 partitions, 10^6 records, read back whole.
  {
    Scratch dir;
    Engine e(config_in(dir, 12 * kMiB));
    ShuffleOptions opt;
    opt.page_size = kMiB;
    opt.small_page_size = 64 * kKiB;
    ShuffleService service(e, "shuffle", 4, opt);
    std::vector<std::vector<std::string>> input(4);
    for (std::size_t w = 0; w < 4; ++w) {
      std::mt19937_64 rng(100 + w);
      for (int i = 0; i < 250'000; ++i) {
        std::string s(8 + rng() % 5, ' ');
        for (auto& ch : s) ch = static_cast<char>('a' + rng() % 26);
        input[w].push_back(std::move(s));
      }
    }
    std::vector<std::thread> threads;
    for (std::size_t w = 0; w < 4; ++w) {
      threads.emplace_back([&, w] {
        ShuffleWriter writer(service, w);
        for (const auto& s : input[w]) writer.write(s);
        writer.close();
      });
    }
    for (auto& t : threads) t.join();
    service.finish();
    std::vector<std::vector<std::string>> output(4);
    std::atomic<std::size_t> misrouted{0};
    threads.clear();
    for (std::size_t p = 0; p < 4; ++p) {
      threads.emplace_back([&, p] {
        auto it = seq_get_iterators(e, service.partition_set(p), 1);
        while (auto rec = it[0].next()) {
          if (shuffle_partition(*rec, 4) != p) ++misrouted;
          output[p].emplace_back(as_string_view(*rec));
        }
      });
    }
    for (auto& t : threads) t.join();
    std::vector<std::string> all_in, all_out;
    for (auto& v : input) all_in.insert(all_in.end(), v.begin(), v.end());
    for (auto& v : output) all_out.insert(all_out.end(), v.begin(), v.end());
    std::sort(all_in.begin(), all_in.end());
    std::sort(all_out.begin(), all_out.end());
    const bool equal = all_in == all_out && misrouted == 0;
    ok = ok && equal && e.pool().stats().pages_evicted > 0;
    notes.push_back(fmt("shuffle %zu records %s (%llu evictions)", all_out.size(), equal ? "exact" : "DIFFERENT",
                        (unsigned long long)e.pool().stats().pages_evicted));
  }

  // Hash aggregation against the reference map.
  std::size_t hash_runs = 0, hash_ok = 0;
  for (std::uint64_t pairs : {100'000ull, 1'000'000ull}) {
    for (double zipf : {0.0, 1.1}) {
      auto c = bench::defaults(bench::Command::HashAgg, true);
      c.objects = pairs;
      c.keys = pairs / 2;
      c.partitions = 8;
      c.zipf = zipf;
      c.memory = 256 * kMiB;
      const auto ample = bench::bench_hash(c);
      const auto used = detail_value(ample.phase("aggregate").detail, "partitions");
      c.memory = std::max<std::size_t>(c.partitions, used / 2) * c.page_size;
      const auto tight = bench::bench_hash(c);
      hash_runs += 2;
      const bool a = ample.verified() && ample.phase("aggregate").spills == 0;
      const bool t = tight.verified() && tight.phase("aggregate").spills > 0;
      hash_ok += a + t;
      notes.push_back(fmt("hash %llu %s: ample %s, constrained %s (%llu spills)", (unsigned long long)pairs,
                          zipf > 0 ? "zipf" : "uniform", a ? "exact" : "FAILED", t ? "exact" : "FAILED",
                          (unsigned long long)tight.phase("aggregate").spills));
    }
  }
  ok = ok && hash_ok == hash_runs;

  // Sequential round trip through a pool smaller than the data.
  {
    Scratch dir;
    Engine e(config_in(dir, 512 * kKiB));
    const auto id = e.create_set("seq", 32 * kKiB, Durability::WriteBack);
    const auto records = make_records(100'000, 9, 200);
    SequentialWriter w(e, id);
    for (const auto& r : records) w.add_object(r);
    w.close();
    const bool equal = read_all_records(e, id) == records;
    ok = ok && equal;
    notes.push_back(fmt("sequential 100000 records %s", equal ? "exact" : "DIFFERENT"));
  }

  Outcome o;
  o.pass = ok;
  for (const auto& n : notes) o.detail += (o.detail.empty() ? "" : "; ") + n;
  return o;
}

// 7. Spill files ------------------------------------------------------------------------

Outcome spill_bound() {
  std::size_t configs = 0, violations = 0, spilled = 0, most = 0;
  for (std::size_t partitions : {1u, 3u, 4u, 8u}) {
    for (bool tight : {false, true}) {
      for (std::size_t writers : {1u, 4u}) {
        for (std::size_t dirs : {1u, 2u}) {
          Scratch scratch;
          auto c = bench::defaults(bench::Command::Shuffle, true);
          c.partitions = partitions;
          c.writers = writers;
          c.readers = 2;
          c.memory = (2 * partitions + 2) * kMiB;
          const double footprint = (tight ? 1.6 : 0.5) * static_cast<double>(c.memory) / 1.4;
          c.mb_per_thread = footprint / static_cast<double>(kMiB) / static_cast<double>(writers);
          if (!tight) c.memory *= 2;
          for (std::size_t d = 0; d < dirs; ++d) c.storage_dirs.push_back(scratch / ("d" + std::to_string(d)));
          const auto r = bench::bench_shuffle(c);
          ++configs;
          // A partition's file may be striped over the directories; it still
          // counts once, and no directory holds more than one piece of it.
          const auto files = detail_value(r.phase("read").detail, "data_files");
          const auto per_dir = detail_value(r.phase("read").detail, "max_files_per_dir");
          const bool ok = r.verified() && r.phase("write").spills <= partitions &&
                          r.phase("read").spills <= partitions && per_dir <= partitions &&
                          files <= partitions * dirs;
          violations += !ok;
          spilled += files > 0;
          most = std::max<std::size_t>(most, r.phase("read").spills);
        }
      }
    }
  }
  Outcome o;
  o.pass = violations == 0 && spilled > 0;
  o.detail = fmt("%zu configurations, %zu spilled to disk, at most %zu partition files, %zu violations", configs, spilled, most,
                 violations);
  return o;
}

// 8. Collision statistics ----------------------------------------------------------------

Outcome collisions() {
  const std::size_t n = 30'000;
  std::vector<std::string> objects;
  for (std::size_t i = 0; i < n; ++i) objects.push_back("object-" + std::to_string(i));
  bool ok = multi_failure_ratio(10, 1) == 0.1 && multi_failure_ratio(10, 2) == 0.28;
  std::string detail;
  for (std::size_t k : {3u, 10u}) {
    double sum = 0;
    const int seeds = 50;
    for (int s = 0; s < seeds; ++s) {
      const auto a = make_hash_scheme(1, 4 * k, k, 7000 + 2 * s);
      const auto b = make_hash_scheme(2, 4 * k, k, 7001 + 2 * s);
      std::size_t hits = 0;
      for (const auto& obj : objects) hits += a.node_of(obj) == b.node_of(obj);
      sum += static_cast<double>(hits);
    }
    const double p = 1.0 / static_cast<double>(k);
    const double bound = 3 * std::sqrt(static_cast<double>(n) * p * (1 - p)) / std::sqrt(static_cast<double>(seeds));
    const double mean = sum / seeds;
    const double expect = static_cast<double>(n) / static_cast<double>(k);
    ok = ok && std::fabs(mean - expect) <= bound;
    detail += fmt("k=%zu mean %.1f vs %.1f (bound %.1f); ", k, mean, expect, bound);
  }
  detail += fmt("ratio(10,1)=%g ratio(10,2)=%g", multi_failure_ratio(10, 1), multi_failure_ratio(10, 2));
  return {ok, detail};
}

// 9. Recovery drill -----------------------------------------------------------------------

Outcome recovery() {
  std::size_t runs = 0, restored = 0;
  std::uint64_t colliding_restored = 0;
  std::vector<double> mean_fraction;
  for (std::size_t k : {3u, 5u, 10u}) {
    double sum = 0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      auto c = bench::defaults(bench::Command::RecoveryDrill, true);
      c.nodes = k;
      c.objects = 3000;
      c.seed = seed;
      c.fail_node = static_cast<NodeId>(seed % k);
      const auto r = bench::bench_recovery(c);
      ++runs;
      restored += r.verified();
      if (!r.verified()) continue;
      sum += detail_real(r.phase("setup").detail, "colliding_fraction");
      colliding_restored += detail_value(r.phase("recover").detail, "colliding_restored");
    }
    mean_fraction.push_back(sum / 20);
  }
  Outcome o;
  o.pass = restored == runs && colliding_restored > 0 && mean_fraction[0] >= mean_fraction[1] &&
           mean_fraction[1] >= mean_fraction[2];
  o.detail = fmt("%zu/%zu drills restored the snapshot, %llu colliding objects restored; mean colliding fraction "
                 "k=3 %.4f, k=5 %.4f, k=10 %.4f",
                 restored, runs, (unsigned long long)colliding_restored, mean_fraction[0], mean_fraction[1],
                 mean_fraction[2]);
  return o;
}

// 10. Concurrency ------------------------------------------------------------------------

Outcome concurrency() {
  std::string detail;
  bool ok = true;
  {
    Scratch dir;
    Engine e(config_in(dir, 256 * kKiB));
    const auto id = e.create_set("scan", 16 * kKiB, Durability::WriteBack);
    auto records = make_records(30'000, 3, 60);
    SequentialWriter w(e, id);
    for (const auto& r : records) w.add_object(r);
    w.close();
    std::sort(records.begin(), records.end());
    for (std::size_t consumers : {1u, 2u, 8u}) {
      auto iters = seq_get_iterators(e, id, consumers);
      std::vector<std::vector<std::string>> got(consumers);
      std::vector<std::thread> threads;
      for (std::size_t t = 0; t < consumers; ++t) {
        threads.emplace_back([&, t] {
          while (auto rec = iters[t].next()) got[t].emplace_back(as_string_view(*rec));
        });
      }
      for (auto& t : threads) t.join();
      iters.clear();
      std::vector<std::string> all;
      for (auto& g : got) all.insert(all.end(), g.begin(), g.end());
      std::sort(all.begin(), all.end());
      const bool same = all == records;
      ok = ok && same;
      detail += fmt("%zu consumers %s; ", consumers, same ? "identical" : "DIFFERENT");
    }
  }

  Scratch dir;
  const std::size_t page = 4 * kKiB;
  Engine e(config_in(dir, 32 * page));
  std::mutex held_mutex;
  std::multiset<PageKey> held;
  std::atomic<std::size_t> pinned_evictions{0}, over_capacity{0}, bad_stamps{0}, ops{0};
  e.pool().set_observer([&](const PoolEvent& ev) {
    if (ev.kind != PoolEventKind::Evict) return;
    std::lock_guard lock(held_mutex);
    if (held.count(ev.key)) ++pinned_evictions;
  });
  std::vector<SetId> sets;
  for (int t = 0; t < 8; ++t) sets.push_back(e.create_set("t" + std::to_string(t), page, Durability::WriteBack));

  auto stamp_of = [](PageKey key) { return key.set.value * 1'000'003 + key.seq; };
  std::vector<std::thread> threads;
  for (int t = 0; t < 8; ++t) {
    threads.emplace_back([&, t] {
      std::mt19937_64 rng(500 + t);
      std::vector<std::uint64_t> seqs;
      std::vector<PageHandle> mine;
      auto hold = [&](const PageHandle& h) {
        std::lock_guard lock(held_mutex);
        held.insert(h.key);
      };
      auto release = [&](const PageHandle& h, bool dirty) {
        {
          std::lock_guard lock(held_mutex);
          held.erase(held.find(h.key));
        }
        e.unpin_page(h, dirty);
      };
      for (int i = 0; i < 12'500; ++i) {
        const auto roll = rng() % 10;
        if (roll < 3 || seqs.empty()) {
          if (mine.size() < 2) {
            auto h = e.allocate_page(sets[t]);
            hold(h);
            const auto v = stamp_of(h.key);
            std::memcpy(h.bytes.data(), &v, sizeof v);
            seqs.push_back(h.key.seq);
            mine.push_back(h);
          }
        } else if (roll < 7) {
          if (mine.size() < 2) {
            auto h = e.pin_page({sets[t], seqs[rng() % seqs.size()]});
            hold(h);
            std::uint64_t v = 0;
            std::memcpy(&v, h.bytes.data(), sizeof v);
            if (v != stamp_of(h.key)) ++bad_stamps;
            mine.push_back(h);
          }
        } else if (!mine.empty()) {
          const std::size_t k = rng() % mine.size();
          release(mine[k], true);
          mine.erase(mine.begin() + static_cast<std::ptrdiff_t>(k));
        }
        if (e.pool().used() > e.pool().capacity()) ++over_capacity;
        ++ops;
      }
      for (const auto& h : mine) release(h, true);
    });
  }
  for (auto& t : threads) t.join();
  e.pool().set_observer(nullptr);
  e.pool().check_invariants();
  ok = ok && pinned_evictions == 0 && over_capacity == 0 && bad_stamps == 0 && e.pool().stats().pages_evicted > 0;
  detail += fmt("%zu ops on 8 threads, %llu evictions, %zu of a pinned page, %zu over capacity, %zu bad pages",
                ops.load(), (unsigned long long)e.pool().stats().pages_evicted, pinned_evictions.load(),
                over_capacity.load(), bad_stamps.load());
  return {ok, detail};
}

}  // namespace

int main() {
  struct Criterion {
    std::string name;
    std::function<Outcome()> check;
    double max_seconds;  // 0: no limit
  };
  const std::vector<Criterion> criteria{
      {"cost model closed forms", cost_model, 1},
      {"paging order on loop-sequential scans", paging_ordering, 30},
      {"DBMIN blocking and adaptive cap", dbmin, 0},
      {"eviction quota and ended-first rule", quota_rule, 0},
      {"durability", durability, 0},
      {"service oracles", service_oracles, 120},
      {"shuffle spill-file bound", spill_bound, 0},
      {"collision statistics", collisions, 0},
      {"recovery drill", recovery, 0},
      {"concurrency safety", concurrency, 0},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].check();
    } catch (const std::exception& e) {
      o = {false, std::string("threw ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (criteria[i].max_seconds > 0 && secs > criteria[i].max_seconds) {
      o.pass = false;
      o.detail += fmt(" [over the %.0fs limit]", criteria[i].max_seconds);
    }
    std::printf("[%2zu] %s  %s: %s (%.2fs)\n", i + 1, o.pass ? "PASS" : "FAIL", criteria[i].name.c_str(),
                o.detail.c_str(), secs);
    std::fflush(stdout);
    failed += !o.pass;
  }
  std::printf("%d of %zu criteria failed\n", failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
