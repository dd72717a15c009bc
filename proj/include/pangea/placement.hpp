#pragma once

// Data placement over a simulated cluster: hash partitioning of sets, replica
// groups of differently partitioned copies, colliding-object side sets, and
// single-node recovery.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pangea/cluster.hpp"

namespace pangea {

/// Expected objects whose copies all land on one node under independent
/// uniform schemes: n/k.
double expected_collisions(double n, double k);

/// Fraction of objects lost when r+1 of k nodes fail together.
double multi_failure_ratio(std::uint64_t k, std::uint64_t r);

/// Writes every record of `source` through the shuffle service into
/// `target`'s partition on its mapped node. Creates `target` when missing.
void partition_set(Cluster& cluster, const std::string& source, const std::string& target,
                   const PartitionScheme& scheme);

struct ReplicaMember {
  std::string set;
  std::optional<PartitionScheme> scheme;  // empty for a dispatched set
  std::vector<NodeId> recovered;          // failed nodes already rebuilt for this member
};

struct ReplicaGroup {
  std::string name;
  std::vector<ReplicaMember> members;
  std::string colliding_set;
  std::uint64_t object_count = 0;
  std::uint64_t colliding_count = 0;
  /// multi_failure_ratio(k, r) for the failures the side set is sized for.
  double side_fraction_estimate = 0.0;
};

struct ReplicaOptions {
  /// Concurrent node failures to survive. 1 gives the two-copy side set.
  std::uint64_t tolerate_failures = 1;
  /// At or above this many objects the multiset check samples 1% of them.
  std::uint64_t full_check_limit = 1'000'000;
};

/// Objects of a replica group with the node holding each member's copy.
struct ObjectPlacement {
  std::string object;
  std::vector<NodeId> nodes;  // one per member, in member order
  bool colliding() const;
};

/// Registers `target` as a replica of `source`. Verifies object-multiset
/// equality, then copies colliding objects into a side set.
ReplicaGroup register_replica(Cluster& cluster, const std::string& source, const std::string& target,
                              ReplicaOptions options = {});

/// Pairs up copies of every object across the members' live nodes.
std::vector<ObjectPlacement> object_placements(Cluster& cluster, const ReplicaGroup& group);

/// One copy held in the side set. `member_nodes` records where each member's
/// copy of the object lived when the group was registered.
struct SideCopy {
  NodeId holder = 0;
  std::vector<NodeId> member_nodes;
  std::uint64_t ordinal = 0;
  std::string object;
};
std::vector<SideCopy> side_copies(Cluster& cluster, const ReplicaGroup& group);

struct RecoveryReport {
  std::uint64_t objects_restored = 0;
  std::string source_replica;
  std::uint64_t colliding_restored = 0;
  std::vector<std::size_t> lost_partitions;
  std::vector<NodeId> takeover_nodes;  // parallel to lost_partitions
  std::uint64_t pages_shipped = 0;
};

/// Rebuilds the failed node's partitions of members[target] on the survivors
/// from another member plus the side set.
RecoveryReport recover_node(Cluster& cluster, ReplicaGroup& group, std::size_t target, NodeId failed);

}  // namespace pangea
