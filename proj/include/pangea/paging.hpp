#pragma once

// Victim selection. The data-aware policy picks the locality set whose next
// victim page has the lowest expected eviction cost
//
//     cost = c_w + p_reuse * c_r
//     c_r  = v_r * w_r
//     c_w  = d * v_w          (or d / v_w, see WriteCostForm)
//     p_reuse = 1 - exp(-lambda * t),  lambda = 1 / (t_now - t_ref)
//
// with d = 1 only for dirty pages of write-back sets. Sets whose lifetime has
// ended are always drained first. Within a set, MRU or LRU is chosen from the
// set's access patterns, and the number of pages evicted depends on whether
// the set is currently being written.
//
// Global LRU/MRU and three DBMIN variants are provided as baselines.

#include <cstddef>
#include <memory>
#include <optional>
#include <string_view>
#include <vector>

#include "pangea/common.hpp"
#include "pangea/locality.hpp"

namespace pangea {

enum class WriteCostForm {
  DividedByVw,  // c_w = d / v_w
  TimesVw,      // c_w = d * v_w
};

struct CostModelParams {
  double horizon_t = 1.0;
  bool use_linear_approx = false;
  WriteCostForm write_cost_form = WriteCostForm::TimesVw;
};

/// Everything the cost model needs to know about a set.
struct SetCostInputs {
  SetId id;
  Durability durability = Durability::WriteBack;
  Lifetime lifetime = Lifetime::Alive;
  WritingPattern writing_pattern = WritingPattern::None;
  ReadingPattern reading_pattern = ReadingPattern::None;
  CurrentOperation current_operation = CurrentOperation::None;
  double v_r = 0.0;
  double v_w = 0.0;
  double w_r = 1.0;
  std::size_t page_size = 0;
};

SetCostInputs cost_inputs(const LocalitySet& set);

struct CandidatePage {
  PageKey key;
  Tick last_access = 0;
  bool dirty = false;
  bool pinned = false;
};

/// 1 / (t_now - t_ref). Throws NonPositiveInterval when t_now <= t_ref.
double lambda_estimate(Tick t_now, Tick t_ref);
/// Same, with intervals below one tick clamped to one.
double lambda_clamped(Tick t_now, Tick t_ref) noexcept;

double p_reuse(double lambda, double t, bool use_linear_approx) noexcept;

double eviction_cost(const CandidatePage& page, const SetCostInputs& set, const CostModelParams& params,
                     Tick now);

enum class VictimOrder { Mru, Lru };

/// MRU for sequential and concurrent writes and sequential reads, LRU for
/// random access and for sets with no recorded pattern.
VictimOrder victim_order(WritingPattern writing, ReadingPattern reading) noexcept;

/// One page while the set is being written, otherwise ceil(10%) of the
/// resident unpinned pages with a floor of one.
std::size_t eviction_quota(CurrentOperation op, std::size_t resident_unpinned) noexcept;

/// ceil(n / 10), at least 1.
std::size_t ten_percent(std::size_t n) noexcept;

/// Read-only window onto buffer-pool state, implemented by the pool and by
/// test fixtures. Only unpinned resident pages are ever listed as candidates.
class PagingView {
 public:
  virtual ~PagingView() = default;

  /// Sets owning at least one unpinned resident page, ascending by id.
  virtual std::vector<SetId> evictable_sets() const = 0;
  /// Sets owning at least one page, ascending by id.
  virtual std::vector<SetId> populated_sets() const = 0;
  virtual SetCostInputs set_inputs(SetId set) const = 0;
  virtual std::size_t resident_unpinned(SetId set) const = 0;
  virtual std::size_t resident_pages(SetId set) const = 0;
  virtual std::size_t total_pages(SetId set) const = 0;
  virtual std::vector<CandidatePage> candidates(SetId set, VictimOrder order, std::size_t limit) const = 0;
  virtual std::size_t global_unpinned() const = 0;
  virtual std::vector<CandidatePage> global_candidates(VictimOrder order, std::size_t limit) const = 0;
  virtual std::size_t capacity_bytes() const = 0;
};

struct EvictionDecision {
  SetId victim_set;
  std::vector<PageKey> victim_pages;
  double predicted_cost = 0.0;
};

SetId select_victim_set(const PagingView& view, Tick now, const CostModelParams& params);
std::vector<PageKey> select_victim_pages(const PagingView& view, SetId set, std::size_t quota);

enum class PolicyKind { DataAware, GlobalLru, GlobalMru, DbminAdaptive, Dbmin1, Dbmin1000 };

std::string_view policy_name(PolicyKind kind) noexcept;
PolicyKind parse_policy(std::string_view name);

class PagingPolicy {
 public:
  virtual ~PagingPolicy() = default;
  virtual PolicyKind kind() const noexcept = 0;
  /// `requester` is the set asking for memory, when known.
  virtual EvictionDecision decide(const PagingView& view, Tick now, std::optional<SetId> requester) const = 0;
};

std::unique_ptr<PagingPolicy> make_policy(PolicyKind kind, const CostModelParams& params = {});

/// DBMIN's per-set buffer allotment in pages.
std::size_t dbmin_desired_pages(PolicyKind kind, const SetCostInputs& set, std::size_t set_pages,
                                std::size_t pool_pages);

}  // namespace pangea
