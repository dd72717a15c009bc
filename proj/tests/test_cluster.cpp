#include <doctest.h>

#include <algorithm>

#include "pangea/cluster.hpp"
#include "support.hpp"

using namespace pangea;

namespace {

ClusterConfig small_cluster(std::size_t workers) {
  ClusterConfig c;
  c.num_workers = workers;
  c.mem_per_worker = 2 * kMiB;
  return c;
}

std::vector<std::string> numbered(std::size_t n, const std::string& prefix = "obj-") {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(prefix + std::to_string(i));
  return out;
}

template <typename T>
std::vector<T> sorted(std::vector<T> v) {
  std::sort(v.begin(), v.end());
  return v;
}

}  // namespace

TEST_CASE("spawning a cluster") {
  Cluster c(small_cluster(3));
  CHECK(c.size() == 3);
  std::size_t total = 0;
  for (NodeId n = 0; n < 3; ++n) {
    total += c.engine(n).pool().capacity();
    CHECK(std::filesystem::exists(c.root() / ("node" + std::to_string(n)) / "disk0"));
  }
  CHECK(total == 6 * kMiB);
  CHECK(&c.engine(0) != &c.engine(1));
  CHECK_ERRC(c.engine(3), Errc::UnknownNode);
  CHECK_ERRC(Cluster(small_cluster(0)), Errc::InvalidArgs);
}

TEST_CASE("temporary roots are removed with the cluster") {
  std::filesystem::path root;
  {
    Cluster c(small_cluster(1));
    root = c.root();
    CHECK(std::filesystem::exists(root));
  }
  CHECK_FALSE(std::filesystem::exists(root));
}

TEST_CASE("round-robin dispatch spreads records evenly") {
  Cluster c(small_cluster(3));
  c.create_set("data", 64 * kKiB, Durability::WriteBack);
  const auto records = numbered(3000);
  c.dispatch_data("data", records, DispatchStrategy::RoundRobin);
  for (NodeId n = 0; n < 3; ++n) CHECK(c.read_node(n, "data").size() == 1000);
  CHECK(sorted(c.read_all("data")) == sorted(records));
  CHECK(c.pages_received(0) > 0);
}

TEST_CASE("random dispatch is reproducible per seed") {
  auto layout = [](std::uint64_t seed) {
    Cluster c(small_cluster(3));
    c.create_set("data", 64 * kKiB, Durability::WriteBack);
    c.dispatch_data("data", numbered(600), DispatchStrategy::Random, seed);
    std::vector<std::vector<std::string>> out;
    for (NodeId n = 0; n < 3; ++n) out.push_back(c.read_node(n, "data"));
    return out;
  };
  CHECK(layout(5) == layout(5));
  CHECK(layout(5) != layout(6));
}

TEST_CASE("a single-node cluster keeps everything local") {
  Cluster c(small_cluster(1));
  c.create_set("data", 64 * kKiB, Durability::WriteBack);
  c.dispatch_data("data", numbered(100), DispatchStrategy::Random, 1);
  CHECK(c.read_node(0, "data").size() == 100);
}

TEST_CASE("failed nodes refuse service until restarted") {
  Cluster c(small_cluster(3));
  c.create_set("data", 64 * kKiB, Durability::WriteBack);
  c.dispatch_data("data", numbered(300), DispatchStrategy::RoundRobin);
  c.fail_node(1);
  CHECK_FALSE(c.alive(1));
  CHECK(c.alive_nodes() == std::vector<NodeId>{0, 2});
  CHECK_ERRC(c.read_node(1, "data"), Errc::NodeDown);
  CHECK_ERRC(c.engine(1), Errc::NodeDown);
  CHECK_ERRC(c.dispatch_data("data", numbered(3), DispatchStrategy::RoundRobin), Errc::NodeDown);
  CHECK(c.read_all("data").size() == 200);
  CHECK_ERRC(c.fail_node(7), Errc::UnknownNode);

  c.restart_node(1);
  CHECK(c.alive(1));
  CHECK(c.read_node(1, "data").empty());
  CHECK(c.catalog().contains("data"));
}

TEST_CASE("soft failure keeps write-through data on disk") {
  Cluster c(small_cluster(2));
  c.create_set("durable", 64 * kKiB, Durability::WriteThrough);
  c.dispatch_data("durable", numbered(500), DispatchStrategy::RoundRobin);
  const auto before = sorted(c.read_node(0, "durable"));
  c.fail_node(0, false);
  c.restart_node(0);
  CHECK(sorted(c.read_node(0, "durable")) == before);
}

TEST_CASE("partitioned sets get one local set per partition") {
  Cluster c(small_cluster(2));
  c.create_set("parts", 64 * kKiB, Durability::WriteBack, make_hash_scheme(1, 4, 2, 0));
  for (NodeId n = 0; n < 2; ++n) {
    for (std::size_t p = 0; p < 4; ++p) CHECK(c.engine(n).find_set(Cluster::partition_set_name("parts", p)));
  }
  CHECK_ERRC(c.dispatch_data("parts", numbered(1), DispatchStrategy::RoundRobin), Errc::InvalidArgs);
  CHECK_ERRC(c.create_set("parts", 64 * kKiB, Durability::WriteBack), Errc::DuplicateName);
  auto bad = make_hash_scheme(2, 4, 2, 0);
  bad.partition_map.pop_back();
  CHECK_ERRC(c.create_set("bad", 64 * kKiB, Durability::WriteBack, bad), Errc::InvalidArgs);
}

TEST_CASE("hash schemes place partitions round-robin") {
  const auto s = make_hash_scheme(1, 7, 3, 42);
  CHECK(s.partition_map == std::vector<NodeId>{0, 1, 2, 0, 1, 2, 0});
  for (const auto& r : numbered(200)) {
    CHECK(s.partition_of(r) == stable_hash(r, 42) % 7);
    CHECK(s.node_of(r) == s.partition_map[s.partition_of(r)]);
  }
  CHECK_ERRC(make_hash_scheme(1, 0, 3, 0), Errc::InvalidArgs);
}

TEST_CASE("page transfer copies a page between nodes") {
  Cluster c(small_cluster(2));
  c.create_set("data", 64 * kKiB, Durability::WriteBack);
  c.ship_records(std::nullopt, 0, "data", numbered(10));
  const SetId src = *c.engine(0).find_set("data");
  c.transfer_page(0, 1, "data", c.engine(0).pool().page_seqs(src).front());
  CHECK(c.read_node(1, "data") == numbered(10));
  CHECK(c.pages_sent(0) == 1);
  CHECK(c.pages_received(1) == 1);
}

TEST_CASE("record packing respects page boundaries") {
  const auto pages = Cluster::pack_records(numbered(100, "record-"), 128);
  std::vector<std::string> back;
  for (const auto& p : pages) {
    CHECK(p.size() == 128);
    PageRecordReader r(p, 0);
    while (auto rec = r.next()) back.emplace_back(as_string_view(*rec));
  }
  CHECK(back == numbered(100, "record-"));
  CHECK_ERRC(Cluster::pack_records({std::string(125, 'x')}, 128), Errc::RecordLargerThanPage);
}

TEST_CASE("manager catalog") {
  ManagerCatalog cat;
  cat.add({"a", 4096, Durability::WriteBack, std::nullopt, std::nullopt});
  CHECK(cat.contains("a"));
  CHECK_ERRC(cat.add({"a", 4096, Durability::WriteBack, std::nullopt, std::nullopt}), Errc::DuplicateName);
  CHECK_ERRC(cat.get("b"), Errc::SetNotFound);
  cat.set_replica_group("a", "g");
  CHECK(cat.get("a").replica_group == "g");
  cat.set_scheme("a", make_hash_scheme(3, 2, 2, 0));
  CHECK(cat.get("a").scheme->scheme_id == 3);
  CHECK(cat.all().size() == 1);
}
