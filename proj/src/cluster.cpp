#include "pangea/cluster.hpp"

#include <stdlib.h>

#include <cstring>
#include <random>

namespace pangea {

// PartitionScheme -----------------------------------------------------------------

std::size_t PartitionScheme::partition_of(std::span<const std::byte> record) const {
  return shuffle_partition(key(record), num_partitions, seed);
}

PartitionScheme make_hash_scheme(std::uint64_t scheme_id, std::size_t num_partitions, std::size_t num_nodes,
                                 std::uint64_t seed, KeyExtractor key) {
  if (num_partitions == 0 || num_nodes == 0) fail(Errc::InvalidArgs, "scheme needs partitions and nodes");
  PartitionScheme s;
  s.scheme_id = scheme_id;
  s.key = std::move(key);
  s.num_partitions = num_partitions;
  s.seed = seed;
  s.partition_map.resize(num_partitions);
  for (std::size_t p = 0; p < num_partitions; ++p) s.partition_map[p] = static_cast<NodeId>(p % num_nodes);
  return s;
}

// ManagerCatalog -------------------------------------------------------------------

void ManagerCatalog::add(ClusterSetInfo info) {
  std::unique_lock lock(mutex_);
  const std::string name = info.name;
  if (!sets_.emplace(name, std::move(info)).second) fail(Errc::DuplicateName, name);
}

bool ManagerCatalog::contains(const std::string& name) const {
  std::shared_lock lock(mutex_);
  return sets_.count(name) > 0;
}

ClusterSetInfo ManagerCatalog::get(const std::string& name) const {
  std::shared_lock lock(mutex_);
  auto it = sets_.find(name);
  if (it == sets_.end()) fail(Errc::SetNotFound, name);
  return it->second;
}

void ManagerCatalog::set_scheme(const std::string& name, PartitionScheme scheme) {
  std::unique_lock lock(mutex_);
  auto it = sets_.find(name);
  if (it == sets_.end()) fail(Errc::SetNotFound, name);
  it->second.scheme = std::move(scheme);
}

void ManagerCatalog::set_replica_group(const std::string& name, std::string group) {
  std::unique_lock lock(mutex_);
  auto it = sets_.find(name);
  if (it == sets_.end()) fail(Errc::SetNotFound, name);
  it->second.replica_group = std::move(group);
}

std::vector<ClusterSetInfo> ManagerCatalog::all() const {
  std::shared_lock lock(mutex_);
  std::vector<ClusterSetInfo> out;
  for (const auto& [_, info] : sets_) out.push_back(info);
  return out;
}

// Cluster ----------------------------------------------------------------------------

namespace {

std::filesystem::path make_temp_root() {
  std::string tmpl = (std::filesystem::temp_directory_path() / "pangea-cluster-XXXXXX").string();
  if (::mkdtemp(tmpl.data()) == nullptr) fail(Errc::IoFailure, "cannot create cluster temp directory");
  return tmpl;
}

}  // namespace

Cluster::Cluster(ClusterConfig config) : config_(std::move(config)) {
  if (config_.num_workers == 0) fail(Errc::InvalidArgs, "cluster needs at least one worker");
  if (config_.dirs_per_worker == 0) fail(Errc::InvalidArgs, "workers need at least one storage directory");
  if (config_.root.empty()) {
    root_ = make_temp_root();
    owns_root_ = true;
  } else {
    root_ = config_.root;
    std::filesystem::create_directories(root_);
  }
  std::error_code ec;
  const auto space = std::filesystem::space(root_, ec);
  if (!ec && space.available < config_.num_workers * kMiB) {
    fail(Errc::InsufficientDiskSpace, "less than 1 MiB free per worker under " + root_.string());
  }
  for (std::size_t i = 0; i < config_.num_workers; ++i) {
    auto node = std::make_unique<SimNode>();
    node->id = static_cast<NodeId>(i);
    node->root = root_ / ("node" + std::to_string(i));
    node->engine = make_engine(*node);
    nodes_.push_back(std::move(node));
  }
}

Cluster::~Cluster() {
  for (auto& n : nodes_) n->engine.reset();
  if (owns_root_) {
    std::error_code ec;
    std::filesystem::remove_all(root_, ec);
  }
}

std::unique_ptr<Engine> Cluster::make_engine(const SimNode& node) const {
  EngineConfig ec;
  ec.memory = config_.mem_per_worker;
  ec.policy = config_.policy;
  ec.profile_io = config_.profile_io;
  for (std::size_t d = 0; d < config_.dirs_per_worker; ++d) ec.storage_dirs.push_back(node.root / ("disk" + std::to_string(d)));
  return std::make_unique<Engine>(ec);
}

SimNode& Cluster::node_ref(NodeId node) {
  if (node >= nodes_.size()) fail(Errc::UnknownNode, "node " + std::to_string(node));
  return *nodes_[node];
}

const SimNode& Cluster::node_ref(NodeId node) const {
  if (node >= nodes_.size()) fail(Errc::UnknownNode, "node " + std::to_string(node));
  return *nodes_[node];
}

bool Cluster::alive(NodeId node) const { return node_ref(node).alive; }

std::vector<NodeId> Cluster::alive_nodes() const {
  std::vector<NodeId> out;
  for (const auto& n : nodes_) {
    if (n->alive) out.push_back(n->id);
  }
  return out;
}

Engine& Cluster::engine(NodeId node) {
  SimNode& n = node_ref(node);
  if (!n.alive) fail(Errc::NodeDown, "node " + std::to_string(node));
  return *n.engine;
}

std::string Cluster::partition_set_name(const std::string& name, std::size_t partition) {
  return name + ".p" + std::to_string(partition);
}

namespace {

std::vector<std::string> local_names(const ClusterSetInfo& info) {
  if (!info.scheme) return {info.name};
  std::vector<std::string> out;
  for (std::size_t p = 0; p < info.scheme->num_partitions; ++p) out.push_back(Cluster::partition_set_name(info.name, p));
  return out;
}

}  // namespace

void Cluster::create_local_sets(SimNode& node, const ClusterSetInfo& info) {
  for (const auto& name : local_names(info)) {
    node.local_ids[name] = node.engine->create_set(name, info.page_size, info.durability);
  }
}

void Cluster::create_set(const std::string& name, std::size_t page_size, Durability durability,
                         std::optional<PartitionScheme> scheme) {
  if (scheme) {
    if (scheme->partition_map.size() != scheme->num_partitions) {
      fail(Errc::InvalidArgs, "partition map must cover every partition");
    }
    for (NodeId n : scheme->partition_map) node_ref(n);
  }
  ClusterSetInfo info{name, page_size, durability, std::move(scheme), std::nullopt};
  catalog_.add(info);
  for (auto& n : nodes_) {
    if (!n->alive) continue;
    std::lock_guard lock(n->mutex);
    create_local_sets(*n, info);
  }
}

std::size_t Cluster::ship_records(std::optional<NodeId> from, NodeId to, const std::string& local_set,
                                  const std::vector<std::string>& records) {
  if (from) engine(*from);
  Engine& dest = engine(to);
  const auto set = dest.find_set(local_set);
  if (!set) fail(Errc::SetNotFound, local_set + " on node " + std::to_string(to));
  const std::size_t page_size = dest.set_info(*set).page_size;

  const auto messages = pack_records(records, page_size);
  SimNode& dst = node_ref(to);
  {
    std::lock_guard lock(dst.mutex);
    SequentialWriter writer(dest, *set);
    for (const auto& m : messages) {
      PageRecordReader reader(m, page_size);
      while (auto rec = reader.next()) writer.add_object(*rec);
    }
    writer.close();
  }
  count_transfer(from, to, messages.size());
  return messages.size();
}

std::vector<std::vector<std::byte>> Cluster::pack_records(const std::vector<std::string>& records,
                                                          std::size_t page_size) {
  std::vector<std::vector<std::byte>> messages;
  std::size_t cursor = 0;
  for (const auto& r : records) {
    if (r.size() + kRecordPrefix > page_size) {
      fail(Errc::RecordLargerThanPage, std::to_string(r.size()) + " byte record");
    }
    if (messages.empty() || !append_record(messages.back(), cursor, as_bytes(r))) {
      messages.emplace_back(page_size);
      cursor = 0;
      append_record(messages.back(), cursor, as_bytes(r));
    }
  }
  return messages;
}

void Cluster::count_transfer(std::optional<NodeId> from, NodeId to, std::size_t messages) {
  if (from) node_ref(*from).pages_sent += messages;
  node_ref(to).pages_received += messages;
}

void Cluster::transfer_page(NodeId from, NodeId to, const std::string& local_set, std::uint64_t seq) {
  Engine& src = engine(from);
  Engine& dst = engine(to);
  const auto src_set = src.find_set(local_set);
  const auto dst_set = dst.find_set(local_set);
  if (!src_set || !dst_set) fail(Errc::SetNotFound, local_set);
  if (src.set_info(*src_set).page_size != dst.set_info(*dst_set).page_size) {
    fail(Errc::SizeMismatch, "page sizes differ between nodes for " + local_set);
  }
  std::vector<std::byte> message;
  {
    std::lock_guard lock(node_ref(from).mutex);
    const PageHandle h = src.pin_page({*src_set, seq});
    message.assign(h.bytes.begin(), h.bytes.end());
    src.unpin_page(h, false);
  }
  std::lock_guard lock(node_ref(to).mutex);
  const PageHandle h = dst.allocate_page(*dst_set);
  std::memcpy(h.bytes.data(), message.data(), message.size());
  dst.unpin_page(h, true);
  ++node_ref(from).pages_sent;
  ++node_ref(to).pages_received;
}

void Cluster::dispatch_data(const std::string& set, const std::vector<std::string>& records,
                            DispatchStrategy strategy, std::uint64_t seed) {
  const ClusterSetInfo info = catalog_.get(set);
  if (info.scheme) fail(Errc::InvalidArgs, set + " is partitioned; use partition_set");
  for (const auto& n : nodes_) {
    if (!n->alive) fail(Errc::NodeDown, "node " + std::to_string(n->id));
  }
  std::vector<std::vector<std::string>> per_node(nodes_.size());
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, nodes_.size() - 1);
  for (std::size_t i = 0; i < records.size(); ++i) {
    const std::size_t n = strategy == DispatchStrategy::RoundRobin ? i % nodes_.size() : pick(rng);
    per_node[n].push_back(records[i]);
  }
  for (std::size_t n = 0; n < nodes_.size(); ++n) {
    if (!per_node[n].empty()) ship_records(std::nullopt, static_cast<NodeId>(n), set, per_node[n]);
  }
}

std::vector<std::string> Cluster::read_local(NodeId node, const std::string& local_set) {
  Engine& e = engine(node);
  const auto set = e.find_set(local_set);
  if (!set) fail(Errc::SetNotFound, local_set + " on node " + std::to_string(node));
  std::lock_guard lock(node_ref(node).mutex);
  return read_all_records(e, *set);
}

std::vector<std::string> Cluster::read_node(NodeId node, const std::string& set) {
  const ClusterSetInfo info = catalog_.get(set);
  if (!info.scheme) return read_local(node, set);
  std::vector<std::string> out;
  for (std::size_t p = 0; p < info.scheme->num_partitions; ++p) {
    auto part = read_local(node, partition_set_name(set, p));
    out.insert(out.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  return out;
}

std::vector<std::string> Cluster::read_all(const std::string& set) {
  std::vector<std::string> out;
  for (NodeId n : alive_nodes()) {
    auto part = read_node(n, set);
    out.insert(out.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  return out;
}

void Cluster::fail_node(NodeId node, bool destroy_disk) {
  SimNode& n = node_ref(node);
  std::lock_guard lock(n.mutex);
  if (!n.alive) return;
  n.alive = false;
  n.engine->crash();
  n.engine.reset();
  if (destroy_disk) {
    std::error_code ec;
    std::filesystem::remove_all(n.root, ec);
  }
}

void Cluster::restart_node(NodeId node) {
  SimNode& n = node_ref(node);
  std::lock_guard lock(n.mutex);
  if (n.alive) return;
  n.engine = make_engine(n);
  n.alive = true;
  const auto previous = std::move(n.local_ids);
  n.local_ids.clear();
  std::vector<std::pair<std::string, const ClusterSetInfo*>> fresh;
  const auto infos = catalog_.all();
  // Reattach survivors first so their ids are taken before new ones are handed out.
  for (const auto& info : infos) {
    for (const auto& name : local_names(info)) {
      auto it = previous.find(name);
      if (it != previous.end() && std::filesystem::exists(n.engine->files().meta_path(it->second))) {
        n.local_ids[name] = n.engine->open_existing_set(it->second, name, info.page_size, info.durability);
      } else {
        fresh.emplace_back(name, &info);
      }
    }
  }
  for (const auto& [name, info] : fresh) {
    n.local_ids[name] = n.engine->create_set(name, info->page_size, info->durability);
  }
}

std::uint64_t Cluster::pages_sent(NodeId node) const { return node_ref(node).pages_sent; }
std::uint64_t Cluster::pages_received(NodeId node) const { return node_ref(node).pages_received; }

}  // namespace pangea
