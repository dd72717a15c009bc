#include "pangea/placement.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <tuple>
#include <unordered_map>

namespace pangea {

double expected_collisions(double n, double k) {
  if (!(n >= 0.0) || !(k >= 1.0)) fail(Errc::InvalidArgs, "need n >= 0 and k >= 1");
  return n / k;
}

double multi_failure_ratio(std::uint64_t k, std::uint64_t r) {
  if (r < 1 || r >= k) fail(Errc::InvalidArgs, "need 1 <= r < k");
  // Exact integers while k^(r+1) fits, so (10,1) gives 10/100 rather than 1 - 0.9.
  unsigned __int128 denom = 1;
  unsigned __int128 numer = 1;
  bool exact = true;
  for (std::uint64_t i = 0; i <= r && exact; ++i) {
    denom *= k;
    numer *= (k - i);
    if (denom > std::numeric_limits<std::uint64_t>::max()) exact = false;
  }
  if (exact) {
    return static_cast<double>(static_cast<std::uint64_t>(denom - numer)) /
           static_cast<double>(static_cast<std::uint64_t>(denom));
  }
  long double surviving = 1.0L;
  for (std::uint64_t i = 0; i <= r; ++i) surviving *= static_cast<long double>(k - i) / static_cast<long double>(k);
  return static_cast<double>(1.0L - surviving);
}

// Partitioning -------------------------------------------------------------------------

namespace {

std::uint64_t record_count(Cluster& cluster, const std::string& set) {
  std::uint64_t n = 0;
  for (NodeId node = 0; node < cluster.size(); ++node) {
    if (cluster.alive(node)) n += cluster.read_node(node, set).size();
  }
  return n;
}

void require_all_alive(const Cluster& cluster) {
  for (NodeId n = 0; n < cluster.size(); ++n) {
    if (!cluster.alive(n)) fail(Errc::NodeDown, "node " + std::to_string(n));
  }
}

}  // namespace

void partition_set(Cluster& cluster, const std::string& source, const std::string& target,
                   const PartitionScheme& scheme) {
  require_all_alive(cluster);
  const ClusterSetInfo src = cluster.catalog().get(source);
  if (cluster.catalog().contains(target)) {
    const ClusterSetInfo existing = cluster.catalog().get(target);
    if (record_count(cluster, target) > 0) fail(Errc::TargetNotEmpty, target);
    if (!existing.scheme || existing.scheme->num_partitions != scheme.num_partitions) {
      fail(Errc::InvalidArgs, target + " exists with a different partitioning");
    }
    cluster.catalog().set_scheme(target, scheme);
  } else {
    cluster.create_set(target, src.page_size, src.durability, scheme);
  }

  // Each source node frames its records per destination; each destination
  // unpacks the messages into its partitions through the shuffle service.
  const std::size_t k = cluster.size();
  std::vector<std::vector<std::vector<std::string>>> outbox(k, std::vector<std::vector<std::string>>(k));
  for (NodeId s = 0; s < k; ++s) {
    for (auto& rec : cluster.read_node(s, source)) {
      const NodeId d = scheme.node_of(rec);
      outbox[s][d].push_back(std::move(rec));
    }
  }
  for (NodeId d = 0; d < k; ++d) {
    Engine& engine = cluster.engine(d);
    std::vector<SetId> sets;
    for (std::size_t p = 0; p < scheme.num_partitions; ++p) {
      sets.push_back(*engine.find_set(Cluster::partition_set_name(target, p)));
    }
    std::lock_guard lock(cluster.node_mutex(d));
    ShuffleService shuffle(engine, sets);
    std::vector<std::optional<VirtualShuffleBuffer>> buffers(scheme.num_partitions);
    for (NodeId s = 0; s < k; ++s) {
      if (outbox[s][d].empty()) continue;
      const auto messages = Cluster::pack_records(outbox[s][d], src.page_size);
      for (const auto& m : messages) {
        PageRecordReader reader(m, src.page_size);
        while (auto rec = reader.next()) {
          const std::size_t p = scheme.partition_of(*rec);
          if (!buffers[p]) buffers[p].emplace(shuffle.get_virtual_shuffle_buffer(s, p));
          buffers[p]->add_object(*rec);
        }
      }
      cluster.count_transfer(s == d ? std::nullopt : std::optional<NodeId>(s), d, s == d ? 0 : messages.size());
    }
    for (auto& b : buffers) {
      if (b) b->close();
    }
    shuffle.finish();
  }
}

// Replica groups --------------------------------------------------------------------------

bool ObjectPlacement::colliding() const {
  return !nodes.empty() && std::all_of(nodes.begin(), nodes.end(), [&](NodeId n) { return n == nodes.front(); });
}

namespace {

using NodeMap = std::unordered_map<std::string, std::vector<NodeId>>;

NodeMap locate(Cluster& cluster, const std::string& set) {
  NodeMap out;
  for (NodeId n = 0; n < cluster.size(); ++n) {
    if (!cluster.alive(n)) continue;
    for (auto& rec : cluster.read_node(n, set)) out[std::move(rec)].push_back(n);
  }
  return out;
}

std::uint64_t total(const NodeMap& m) {
  std::uint64_t n = 0;
  for (const auto& [_, nodes] : m) n += nodes.size();
  return n;
}

bool sampled(const std::string& key) { return stable_hash(key, 0x5eed) % 100 == 0; }

void check_multisets(const NodeMap& a, const NodeMap& b, std::uint64_t full_check_limit) {
  const std::uint64_t na = total(a);
  if (na != total(b)) fail(Errc::ObjectSetMismatch, "object counts differ");
  const bool full = na < full_check_limit;
  if (full && a.size() != b.size()) fail(Errc::ObjectSetMismatch, "distinct object counts differ");
  for (const auto& [key, nodes] : a) {
    if (!full && !sampled(key)) continue;
    auto it = b.find(key);
    if (it == b.end() || it->second.size() != nodes.size()) {
      fail(Errc::ObjectSetMismatch, "object multiplicity differs");
    }
  }
  if (!full) {
    for (const auto& [key, nodes] : b) {
      if (sampled(key) && a.count(key) == 0) fail(Errc::ObjectSetMismatch, "object missing from source");
    }
  }
}

std::vector<ObjectPlacement> pair_up(std::vector<NodeMap> maps) {
  std::vector<std::string> keys;
  keys.reserve(maps.front().size());
  for (const auto& [key, _] : maps.front()) keys.push_back(key);
  std::sort(keys.begin(), keys.end());
  std::vector<ObjectPlacement> out;
  for (auto& m : maps) {
    for (auto& [_, nodes] : m) std::sort(nodes.begin(), nodes.end());
  }
  for (const auto& key : keys) {
    std::size_t copies = std::numeric_limits<std::size_t>::max();
    for (const auto& m : maps) {
      auto it = m.find(key);
      copies = std::min(copies, it == m.end() ? std::size_t{0} : it->second.size());
    }
    for (std::size_t i = 0; i < copies; ++i) {
      ObjectPlacement p{key, {}};
      for (const auto& m : maps) p.nodes.push_back(m.at(key)[i]);
      out.push_back(std::move(p));
    }
  }
  return out;
}

std::string encode_side(const std::vector<NodeId>& member_nodes, std::uint64_t ordinal, const std::string& object) {
  std::string out;
  auto put = [&](std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  };
  put(member_nodes.size(), 4);
  for (NodeId n : member_nodes) put(n, 4);
  put(ordinal, 8);
  out += object;
  return out;
}

SideCopy decode_side(NodeId holder, const std::string& rec) {
  std::size_t at = 0;
  auto get = [&](int bytes) {
    if (at + bytes > rec.size()) fail(Errc::CorruptMeta, "truncated side-set record");
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= std::uint64_t{static_cast<unsigned char>(rec[at + i])} << (8 * i);
    at += bytes;
    return v;
  };
  SideCopy c;
  c.holder = holder;
  const auto count = get(4);
  for (std::uint64_t i = 0; i < count; ++i) c.member_nodes.push_back(static_cast<NodeId>(get(4)));
  c.ordinal = get(8);
  c.object = rec.substr(at);
  return c;
}

}  // namespace

ReplicaGroup register_replica(Cluster& cluster, const std::string& source, const std::string& target,
                              ReplicaOptions options) {
  require_all_alive(cluster);
  const ClusterSetInfo src = cluster.catalog().get(source);
  const ClusterSetInfo tgt = cluster.catalog().get(target);
  if (src.replica_group || tgt.replica_group) fail(Errc::InvalidArgs, "set already belongs to a replica group");
  if (options.tolerate_failures < 1) fail(Errc::InvalidArgs, "must tolerate at least one failure");

  NodeMap a = locate(cluster, source);
  NodeMap b = locate(cluster, target);
  check_multisets(a, b, options.full_check_limit);

  ReplicaGroup group;
  group.name = source + "~" + target;
  group.members = {{source, src.scheme, {}}, {target, tgt.scheme, {}}};
  group.colliding_set = group.name + ".colliding";
  group.object_count = total(a);
  const std::size_t k = cluster.size();
  const std::uint64_t r = options.tolerate_failures;
  group.side_fraction_estimate = r < k ? multi_failure_ratio(k, r) : 1.0;

  // Objects whose member copies span fewer than r+1 nodes get side copies on
  // the least-loaded nodes outside that span, two at minimum.
  std::vector<std::uint64_t> load(k, 0);
  std::map<std::pair<NodeId, NodeId>, std::vector<std::string>> shipments;
  std::uint64_t ordinal = 0;
  for (const auto& placement : pair_up({std::move(a), std::move(b)})) {
    const std::set<NodeId> span(placement.nodes.begin(), placement.nodes.end());
    if (placement.colliding()) ++group.colliding_count;
    if (span.size() >= r + 1) continue;
    const std::size_t copies = std::min<std::size_t>(k, std::max<std::size_t>(2, r + 1 - span.size()));
    std::vector<NodeId> order(k);
    for (NodeId n = 0; n < k; ++n) order[n] = n;
    std::stable_sort(order.begin(), order.end(), [&](NodeId x, NodeId y) {
      const bool xin = span.count(x) > 0;
      const bool yin = span.count(y) > 0;
      if (xin != yin) return !xin;
      return load[x] < load[y];
    });
    const std::string rec = encode_side(placement.nodes, ordinal++, placement.object);
    const NodeId origin = placement.nodes.front();
    for (std::size_t c = 0; c < copies; ++c) {
      ++load[order[c]];
      shipments[{origin, order[c]}].push_back(rec);
    }
  }

  cluster.create_set(group.colliding_set, src.page_size, src.durability);
  for (const auto& [route, records] : shipments) {
    const bool local = route.first == route.second;
    cluster.ship_records(local ? std::nullopt : std::optional<NodeId>(route.first), route.second,
                         group.colliding_set, records);
  }
  cluster.catalog().set_replica_group(source, group.name);
  cluster.catalog().set_replica_group(target, group.name);
  return group;
}

std::vector<ObjectPlacement> object_placements(Cluster& cluster, const ReplicaGroup& group) {
  std::vector<NodeMap> maps;
  for (const auto& m : group.members) maps.push_back(locate(cluster, m.set));
  return pair_up(std::move(maps));
}

std::vector<SideCopy> side_copies(Cluster& cluster, const ReplicaGroup& group) {
  std::vector<SideCopy> out;
  for (NodeId n = 0; n < cluster.size(); ++n) {
    if (!cluster.alive(n)) continue;
    for (const auto& rec : cluster.read_local(n, group.colliding_set)) out.push_back(decode_side(n, rec));
  }
  return out;
}

// Recovery --------------------------------------------------------------------------------

RecoveryReport recover_node(Cluster& cluster, ReplicaGroup& group, std::size_t target, NodeId failed) {
  if (group.members.size() < 2) fail(Errc::NoSurvivingReplica, group.name + " has a single member");
  if (target >= group.members.size()) fail(Errc::InvalidArgs, "no such group member");
  if (failed >= cluster.size()) fail(Errc::UnknownNode, "node " + std::to_string(failed));
  if (cluster.alive(failed)) fail(Errc::InvalidArgs, "node " + std::to_string(failed) + " is not marked failed");
  const std::vector<NodeId> survivors = cluster.alive_nodes();
  if (survivors.size() + 1 != cluster.size()) fail(Errc::InvalidArgs, "recovery handles exactly one failed node");
  if (survivors.empty()) fail(Errc::NoSurvivingReplica, "no live node left");

  ReplicaMember& tgt = group.members[target];
  if (!tgt.scheme) fail(Errc::InvalidArgs, tgt.set + " has no partition scheme to recover by");
  const std::size_t source = target == 0 ? 1 : 0;
  const ReplicaMember& src = group.members[source];
  const bool source_lost_copies =
      std::find(src.recovered.begin(), src.recovered.end(), failed) == src.recovered.end();

  RecoveryReport report;
  report.source_replica = src.set;

  // Lost partitions move round-robin onto the survivors.
  const PartitionScheme old_scheme = *tgt.scheme;
  PartitionScheme scheme = old_scheme;
  for (std::size_t p = 0; p < old_scheme.num_partitions; ++p) {
    if (old_scheme.partition_map[p] != failed) continue;
    const NodeId to = survivors[report.lost_partitions.size() % survivors.size()];
    report.lost_partitions.push_back(p);
    report.takeover_nodes.push_back(to);
    scheme.partition_map[p] = to;
  }

  std::uint64_t surviving = 0;
  for (NodeId n : survivors) surviving += cluster.read_node(n, tgt.set).size();

  std::map<std::tuple<NodeId, NodeId, std::size_t>, std::vector<std::string>> outbox;
  for (NodeId n : survivors) {
    for (auto& rec : cluster.read_node(n, src.set)) {
      const std::size_t p = old_scheme.partition_of(rec);
      if (old_scheme.partition_map[p] != failed) continue;
      outbox[{n, scheme.partition_map[p], p}].push_back(std::move(rec));
      ++report.objects_restored;
    }
  }
  // Objects whose source copy died with the target copy come from the side set.
  if (source_lost_copies) {
    std::set<std::uint64_t> seen;
    for (auto& copy : side_copies(cluster, group)) {
      if (copy.member_nodes.size() != group.members.size()) continue;
      if (copy.member_nodes[target] != failed || copy.member_nodes[source] != failed) continue;
      if (!seen.insert(copy.ordinal).second) continue;
      const std::size_t p = old_scheme.partition_of(copy.object);
      outbox[{copy.holder, scheme.partition_map[p], p}].push_back(std::move(copy.object));
      ++report.objects_restored;
      ++report.colliding_restored;
    }
  }

  for (const auto& [route, records] : outbox) {
    const auto [from, to, p] = route;
    const std::string local = Cluster::partition_set_name(tgt.set, p);
    report.pages_shipped += cluster.ship_records(from == to ? std::nullopt : std::optional<NodeId>(from), to,
                                                 local, records);
  }

  tgt.scheme = scheme;
  tgt.recovered.push_back(failed);
  cluster.catalog().set_scheme(tgt.set, scheme);

  if (surviving + report.objects_restored != group.object_count) {
    fail(Errc::UnrecoverableObjects, std::to_string(group.object_count - std::min(group.object_count,
                                                                                 surviving + report.objects_restored)) +
                                         " objects of " + tgt.set + " existed only on node " +
                                         std::to_string(failed));
  }
  return report;
}

}  // namespace pangea
