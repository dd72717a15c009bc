#pragma once

// In-process cluster: a manager catalog plus worker nodes that each own an
// Engine rooted under <root>/node<i>. Nodes only exchange data through page
// messages (ship_records / transfer_page), never by touching each other's pool.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "pangea/engine.hpp"
#include "pangea/services.hpp"

namespace pangea {

/// Maps records to partitions by hash(key) mod num_partitions, and partitions
/// to nodes through partition_map.
struct PartitionScheme {
  std::uint64_t scheme_id = 0;
  KeyExtractor key = whole_record_key;
  std::size_t num_partitions = 1;
  std::vector<NodeId> partition_map;
  std::uint64_t seed = 0;

  std::size_t partition_of(std::span<const std::byte> record) const;
  std::size_t partition_of(std::string_view record) const { return partition_of(as_bytes(record)); }
  NodeId node_of(std::span<const std::byte> record) const { return partition_map.at(partition_of(record)); }
  NodeId node_of(std::string_view record) const { return node_of(as_bytes(record)); }
};

/// Hash scheme with partitions spread round-robin over `num_nodes` nodes.
PartitionScheme make_hash_scheme(std::uint64_t scheme_id, std::size_t num_partitions, std::size_t num_nodes,
                                 std::uint64_t seed, KeyExtractor key = whole_record_key);

struct ClusterSetInfo {
  std::string name;
  std::size_t page_size = 0;
  Durability durability = Durability::WriteBack;
  std::optional<PartitionScheme> scheme;
  std::optional<std::string> replica_group;
};

/// Set metadata kept by the manager. Survives worker failures.
class ManagerCatalog {
 public:
  void add(ClusterSetInfo info);
  bool contains(const std::string& name) const;
  ClusterSetInfo get(const std::string& name) const;
  void set_scheme(const std::string& name, PartitionScheme scheme);
  void set_replica_group(const std::string& name, std::string group);
  std::vector<ClusterSetInfo> all() const;

 private:
  mutable std::shared_mutex mutex_;
  std::map<std::string, ClusterSetInfo> sets_;
};

struct SimNode {
  NodeId id = 0;
  std::filesystem::path root;
  std::unique_ptr<Engine> engine;
  bool alive = true;
  std::uint64_t pages_sent = 0;
  std::uint64_t pages_received = 0;
  std::map<std::string, SetId> local_ids;
  std::mutex mutex;  // serializes operations on this node
};

struct ClusterConfig {
  std::size_t num_workers = 1;
  std::size_t mem_per_worker = 256 * kMiB;
  std::size_t dirs_per_worker = 1;
  /// Empty: a fresh directory under the system temp dir, removed on destruction.
  std::filesystem::path root;
  PolicyKind policy = PolicyKind::DataAware;
  bool profile_io = false;
};

enum class DispatchStrategy { RoundRobin, Random };

class Cluster {
 public:
  explicit Cluster(ClusterConfig config);
  ~Cluster();

  Cluster(const Cluster&) = delete;
  Cluster& operator=(const Cluster&) = delete;

  std::size_t size() const noexcept { return nodes_.size(); }
  bool alive(NodeId node) const;
  std::vector<NodeId> alive_nodes() const;
  const std::filesystem::path& root() const noexcept { return root_; }
  ManagerCatalog& catalog() noexcept { return catalog_; }
  const ManagerCatalog& catalog() const noexcept { return catalog_; }
  /// Engine of a live node. Throws UnknownNode or NodeDown.
  Engine& engine(NodeId node);

  /// Registers a set in the catalog and creates its local sets on live nodes.
  /// A partitioned set gets one local set per partition on every node.
  void create_set(const std::string& name, std::size_t page_size, Durability durability,
                  std::optional<PartitionScheme> scheme = std::nullopt);

  /// Name of the node-local set holding `partition` of a partitioned set.
  static std::string partition_set_name(const std::string& name, std::size_t partition);

  void dispatch_data(const std::string& set, const std::vector<std::string>& records, DispatchStrategy strategy,
                     std::uint64_t seed = 0);

  /// Delivers records to a node-local set as page-sized messages. `from` is
  /// empty when the manager is the sender. Returns the number of messages.
  std::size_t ship_records(std::optional<NodeId> from, NodeId to, const std::string& local_set,
                           const std::vector<std::string>& records);
  /// Frames records into page-sized messages.
  static std::vector<std::vector<std::byte>> pack_records(const std::vector<std::string>& records,
                                                          std::size_t page_size);
  /// Accounts `messages` page messages from `from` (empty: manager) to `to`.
  void count_transfer(std::optional<NodeId> from, NodeId to, std::size_t messages);
  /// Serialization domain of one node.
  std::mutex& node_mutex(NodeId node) { return node_ref(node).mutex; }
  /// Copies one page of a node-local set to the same-named set on another node.
  void transfer_page(NodeId from, NodeId to, const std::string& local_set, std::uint64_t seq);

  /// Records of a node-local set.
  std::vector<std::string> read_local(NodeId node, const std::string& local_set);
  /// Everything a node holds for a cluster set (all its local partition sets).
  std::vector<std::string> read_node(NodeId node, const std::string& set);
  /// Concatenation over live nodes.
  std::vector<std::string> read_all(const std::string& set);

  /// Drops the node's pool. Drill mode (the default) also wipes its disk.
  void fail_node(NodeId node, bool destroy_disk = true);
  /// Brings a failed node back with an empty pool. Local sets whose meta file
  /// survived a soft failure are reattached; the rest are re-created empty.
  void restart_node(NodeId node);

  std::uint64_t pages_sent(NodeId node) const;
  std::uint64_t pages_received(NodeId node) const;

 private:
  SimNode& node_ref(NodeId node);
  const SimNode& node_ref(NodeId node) const;
  std::unique_ptr<Engine> make_engine(const SimNode& node) const;
  void create_local_sets(SimNode& node, const ClusterSetInfo& info);

  ClusterConfig config_;
  std::filesystem::path root_;
  bool owns_root_ = false;
  ManagerCatalog catalog_;
  std::vector<std::unique_ptr<SimNode>> nodes_;
};

}  // namespace pangea
