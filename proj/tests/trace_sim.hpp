#pragma once

// Page-level replay of the loop-sequential workload: one write-back set is
// written page by page, scanned `scans` times, then dropped. Eviction follows
// the stated policy rules directly and shares no code with the engine.

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

namespace pangea::testing {

enum class SimPolicy { DataAware, Lru, Mru, DbminAdaptive };

struct SimPhase {
  std::string name;
  std::uint64_t loads = 0;
  std::uint64_t evictions = 0;
  std::uint64_t writes = 0;
};

class LoopSequentialSim {
 public:
  LoopSequentialSim(SimPolicy policy, std::size_t capacity_pages) : policy_(policy), capacity_(capacity_pages) {}

  std::vector<SimPhase> run(std::size_t pages, std::size_t scans) {
    pages_.assign(pages, Page{});
    std::vector<SimPhase> out;

    begin("write", true);
    for (std::size_t i = 0; i < pages; ++i) {
      make_room();
      pages_[i] = Page{++clock_, true, true};
      ++resident_;
    }
    out.push_back(phase_);

    for (std::size_t s = 1; s <= scans; ++s) {
      begin("scan" + std::to_string(s), false);
      for (std::size_t i = 0; i < pages; ++i) {
        if (!pages_[i].resident) {
          make_room();
          pages_[i].resident = true;
          ++resident_;
          ++phase_.loads;
        }
        pages_[i].tick = ++clock_;
      }
      out.push_back(phase_);
    }

    // Dropping an ended set discards its dirty pages unwritten.
    begin("delete", false);
    out.push_back(phase_);
    return out;
  }

 private:
  struct Page {
    std::uint64_t tick = 0;
    bool resident = false;
    bool dirty = false;
  };

  void begin(std::string name, bool writing) {
    phase_ = SimPhase{std::move(name)};
    writing_ = writing;
  }

  // Every resident page is unpinned whenever room is needed: the writer
  // releases its page before asking for the next, and so does the scan.
  void make_room() {
    while (resident_ >= capacity_) {
      std::vector<std::size_t> order;
      for (std::size_t i = 0; i < pages_.size(); ++i) {
        if (pages_[i].resident) order.push_back(i);
      }
      const bool recent_first = policy_ != SimPolicy::Lru;
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return recent_first ? pages_[a].tick > pages_[b].tick : pages_[a].tick < pages_[b].tick;
      });
      const std::size_t tenth = std::max<std::size_t>(1, (order.size() + 9) / 10);
      std::size_t quota = 1;
      switch (policy_) {
        case SimPolicy::DataAware: quota = writing_ ? 1 : tenth; break;
        case SimPolicy::Lru:
        case SimPolicy::Mru: quota = tenth; break;
        case SimPolicy::DbminAdaptive: quota = 1; break;
      }
      for (std::size_t k = 0; k < quota && k < order.size(); ++k) {
        Page& p = pages_[order[k]];
        if (p.dirty) {
          ++phase_.writes;
          p.dirty = false;
        }
        p.resident = false;
        --resident_;
        ++phase_.evictions;
      }
    }
  }

  SimPolicy policy_;
  std::size_t capacity_;
  std::vector<Page> pages_;
  std::size_t resident_ = 0;
  std::uint64_t clock_ = 0;
  bool writing_ = false;
  SimPhase phase_;
};

}  // namespace pangea::testing
