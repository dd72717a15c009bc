#include "pangea/paging.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace pangea {

SetCostInputs cost_inputs(const LocalitySet& set) {
  SetCostInputs in;
  in.id = set.id;
  in.durability = set.attributes.durability;
  in.lifetime = set.attributes.lifetime;
  in.writing_pattern = set.attributes.writing_pattern;
  in.reading_pattern = set.attributes.reading_pattern;
  in.current_operation = set.attributes.current_operation;
  in.v_r = set.profiled_v_r;
  in.v_w = set.profiled_v_w;
  in.w_r = set.read_penalty();
  in.page_size = set.page_size;
  return in;
}

double lambda_estimate(Tick t_now, Tick t_ref) {
  if (t_now <= t_ref) {
    fail(Errc::NonPositiveInterval, "t_now=" + std::to_string(t_now) + " t_ref=" + std::to_string(t_ref));
  }
  return 1.0 / static_cast<double>(t_now - t_ref);
}

double lambda_clamped(Tick t_now, Tick t_ref) noexcept {
  const Tick interval = t_now > t_ref ? t_now - t_ref : 1;
  return 1.0 / static_cast<double>(interval);
}

double p_reuse(double lambda, double t, bool use_linear_approx) noexcept {
  if (use_linear_approx) return std::min(lambda * t, 1.0);
  return -std::expm1(-lambda * t);
}

double eviction_cost(const CandidatePage& page, const SetCostInputs& set, const CostModelParams& params,
                     Tick now) {
  if (page.pinned) fail(Errc::PagePinned, to_string(page.key));
  const double c_r = set.v_r * set.w_r;
  const double d = (set.durability == Durability::WriteBack && page.dirty) ? 1.0 : 0.0;
  double c_w = 0.0;
  if (d != 0.0) c_w = params.write_cost_form == WriteCostForm::TimesVw ? d * set.v_w : d / set.v_w;
  const double lambda = lambda_clamped(now, page.last_access);
  return c_w + p_reuse(lambda, params.horizon_t, params.use_linear_approx) * c_r;
}

VictimOrder victim_order(WritingPattern writing, ReadingPattern reading) noexcept {
  if (reading == ReadingPattern::RandomRead || writing == WritingPattern::RandomMutableWrite) {
    return VictimOrder::Lru;
  }
  if (reading == ReadingPattern::SequentialRead || writing == WritingPattern::SequentialWrite ||
      writing == WritingPattern::ConcurrentWrite) {
    return VictimOrder::Mru;
  }
  return VictimOrder::Lru;
}

std::size_t ten_percent(std::size_t n) noexcept { return std::max<std::size_t>(1, (n + 9) / 10); }

std::size_t eviction_quota(CurrentOperation op, std::size_t resident_unpinned) noexcept {
  if (op == CurrentOperation::Write || op == CurrentOperation::ReadAndWrite) return 1;
  return ten_percent(resident_unpinned);
}

namespace {

VictimOrder order_of(const SetCostInputs& in) { return victim_order(in.writing_pattern, in.reading_pattern); }

struct Scored {
  SetId set;
  double cost;
};

std::optional<Scored> cheapest_set(const PagingView& view, Tick now, const CostModelParams& params,
                                   bool ended_only) {
  std::optional<Scored> best;
  for (SetId id : view.evictable_sets()) {
    const auto in = view.set_inputs(id);
    if (ended_only != (in.lifetime == Lifetime::LifetimeEnded)) continue;
    const auto next = view.candidates(id, order_of(in), 1);
    if (next.empty()) continue;
    const double cost = eviction_cost(next.front(), in, params, now);
    // evictable_sets is ascending, so strict comparison keeps the smallest id on ties.
    if (!best || cost < best->cost) best = Scored{id, cost};
  }
  return best;
}

class DataAwarePolicy final : public PagingPolicy {
 public:
  explicit DataAwarePolicy(CostModelParams params) : params_(params) {}

  PolicyKind kind() const noexcept override { return PolicyKind::DataAware; }

  EvictionDecision decide(const PagingView& view, Tick now, std::optional<SetId>) const override {
    auto chosen = cheapest_set(view, now, params_, true);
    if (!chosen) chosen = cheapest_set(view, now, params_, false);
    if (!chosen) fail(Errc::NoEvictablePage, "every resident page is pinned");
    const auto in = view.set_inputs(chosen->set);
    const auto quota = eviction_quota(in.current_operation, view.resident_unpinned(chosen->set));
    return {chosen->set, select_victim_pages(view, chosen->set, quota), chosen->cost};
  }

 private:
  CostModelParams params_;
};

class GlobalRecencyPolicy final : public PagingPolicy {
 public:
  explicit GlobalRecencyPolicy(VictimOrder order) : order_(order) {}

  PolicyKind kind() const noexcept override {
    return order_ == VictimOrder::Lru ? PolicyKind::GlobalLru : PolicyKind::GlobalMru;
  }

  EvictionDecision decide(const PagingView& view, Tick, std::optional<SetId>) const override {
    const auto unpinned = view.global_unpinned();
    if (unpinned == 0) fail(Errc::NoEvictablePage, "every resident page is pinned");
    const auto pages = view.global_candidates(order_, ten_percent(unpinned));
    EvictionDecision out;
    out.victim_set = pages.front().key.set;
    for (const auto& p : pages) out.victim_pages.push_back(p.key);
    return out;
  }

 private:
  VictimOrder order_;
};

class DbminPolicy final : public PagingPolicy {
 public:
  explicit DbminPolicy(PolicyKind kind) : kind_(kind) {}

  PolicyKind kind() const noexcept override { return kind_; }

  EvictionDecision decide(const PagingView& view, Tick, std::optional<SetId> requester) const override {
    struct Allotment {
      SetId id;
      SetCostInputs in;
      std::size_t desired;
    };
    std::vector<Allotment> sets;
    std::size_t desired_bytes = 0;
    for (SetId id : view.populated_sets()) {
      const auto in = view.set_inputs(id);
      const std::size_t pool_pages = view.capacity_bytes() / in.page_size;
      const std::size_t desired = dbmin_desired_pages(kind_, in, view.total_pages(id), pool_pages);
      desired_bytes += desired * in.page_size;
      sets.push_back({id, in, desired});
    }
    if (desired_bytes > view.capacity_bytes()) {
      fail(Errc::PolicyBlocked, "desired locality set sizes total " + std::to_string(desired_bytes) +
                                    " bytes, pool holds " + std::to_string(view.capacity_bytes()));
    }

    auto evict_one = [&](const Allotment& a) {
      auto pages = select_victim_pages(view, a.id, 1);
      return EvictionDecision{a.id, std::move(pages), 0.0};
    };

    // A set at or above its allotment replaces within itself.
    if (requester) {
      for (const auto& a : sets) {
        if (a.id == *requester && view.resident_unpinned(a.id) > 0 && view.resident_pages(a.id) >= a.desired) {
          return evict_one(a);
        }
      }
    }
    // Otherwise take from the set furthest over its allotment.
    const Allotment* over = nullptr;
    std::size_t worst = 0;
    for (const auto& a : sets) {
      const auto resident = view.resident_pages(a.id);
      if (resident > a.desired && view.resident_unpinned(a.id) > 0 && resident - a.desired > worst) {
        worst = resident - a.desired;
        over = &a;
      }
    }
    if (over) return evict_one(*over);
    // Every set is within its allotment yet memory is short: fall back to the
    // largest set that has anything evictable.
    const Allotment* largest = nullptr;
    for (const auto& a : sets) {
      if (view.resident_unpinned(a.id) == 0) continue;
      if (!largest || view.resident_pages(a.id) > view.resident_pages(largest->id)) largest = &a;
    }
    if (!largest) fail(Errc::NoEvictablePage, "every resident page is pinned");
    return evict_one(*largest);
  }

 private:
  PolicyKind kind_;
};

}  // namespace

SetId select_victim_set(const PagingView& view, Tick now, const CostModelParams& params) {
  auto chosen = cheapest_set(view, now, params, true);
  if (!chosen) chosen = cheapest_set(view, now, params, false);
  if (!chosen) fail(Errc::NoEvictablePage, "every resident page is pinned");
  return chosen->set;
}

std::vector<PageKey> select_victim_pages(const PagingView& view, SetId set, std::size_t quota) {
  const auto in = view.set_inputs(set);
  const auto pages = view.candidates(set, order_of(in), quota);
  if (pages.empty()) fail(Errc::NoEvictablePage, to_string(set) + " has no unpinned resident page");
  std::vector<PageKey> out;
  out.reserve(pages.size());
  for (const auto& p : pages) out.push_back(p.key);
  return out;
}

std::size_t dbmin_desired_pages(PolicyKind kind, const SetCostInputs& set, std::size_t set_pages,
                                std::size_t pool_pages) {
  if (kind != PolicyKind::Dbmin1 && kind != PolicyKind::Dbmin1000 && kind != PolicyKind::DbminAdaptive) {
    fail(Errc::InvalidArgs, "not a DBMIN policy");
  }
  if (set.lifetime == Lifetime::LifetimeEnded) return 0;
  switch (kind) {
    case PolicyKind::Dbmin1: return 1;
    case PolicyKind::Dbmin1000: return 1000;
    case PolicyKind::DbminAdaptive:
      if (set.reading_pattern == ReadingPattern::RandomRead ||
          set.writing_pattern == WritingPattern::RandomMutableWrite) {
        return std::max<std::size_t>(4, pool_pages / 20);
      }
      if (set.reading_pattern == ReadingPattern::SequentialRead) {
        // Loop-sequential: the whole set, capped at what the pool can hold.
        return std::max<std::size_t>(1, std::min(set_pages, pool_pages));
      }
      return 1;
    default:
      return 1;
  }
}

std::string_view policy_name(PolicyKind kind) noexcept {
  switch (kind) {
    case PolicyKind::DataAware: return "data-aware";
    case PolicyKind::GlobalLru: return "lru";
    case PolicyKind::GlobalMru: return "mru";
    case PolicyKind::DbminAdaptive: return "dbmin-adaptive";
    case PolicyKind::Dbmin1: return "dbmin-1";
    case PolicyKind::Dbmin1000: return "dbmin-1000";
  }
  return "data-aware";
}

PolicyKind parse_policy(std::string_view name) {
  for (auto kind : {PolicyKind::DataAware, PolicyKind::GlobalLru, PolicyKind::GlobalMru, PolicyKind::DbminAdaptive,
                    PolicyKind::Dbmin1, PolicyKind::Dbmin1000}) {
    if (policy_name(kind) == name) return kind;
  }
  fail(Errc::InvalidConfig, "unknown policy '" + std::string(name) + "'");
}

std::unique_ptr<PagingPolicy> make_policy(PolicyKind kind, const CostModelParams& params) {
  if (params.horizon_t < 1.0) fail(Errc::InvalidConfig, "horizon must be at least one tick");
  switch (kind) {
    case PolicyKind::DataAware: return std::make_unique<DataAwarePolicy>(params);
    case PolicyKind::GlobalLru: return std::make_unique<GlobalRecencyPolicy>(VictimOrder::Lru);
    case PolicyKind::GlobalMru: return std::make_unique<GlobalRecencyPolicy>(VictimOrder::Mru);
    case PolicyKind::DbminAdaptive:
    case PolicyKind::Dbmin1:
    case PolicyKind::Dbmin1000: return std::make_unique<DbminPolicy>(kind);
  }
  fail(Errc::InvalidArgs, "unknown policy kind");
}

}  // namespace pangea
