#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "aptmcl/errors.hpp"
#include "aptmcl/provenance.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace aptmcl;

namespace {

EventRecord ev(std::string sub, std::string act, std::string obj, NodeType t, std::int64_t ts = 0) {
  EventRecord e;
  e.timestamp = ts;
  e.subject_id = std::move(sub);
  e.action = std::move(act);
  e.object_id = std::move(obj);
  e.object_type = t;
  return e;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("aptmcl_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("parse_event reads a minimal launch record") {
  const auto e = parse_event(R"({"ts":1,"sub":"p1","sub_t":"process","act":"launch","obj":"p2","obj_t":"process"})");
  CHECK(e.timestamp == 1);
  CHECK(e.subject_id == "p1");
  CHECK(e.subject_type == NodeType::kProcess);
  CHECK(e.action == "launch");
  CHECK(e.object_id == "p2");
  CHECK(e.object_type == NodeType::kProcess);
  CHECK(e.attrs.empty());
  CHECK(e.edge_type() == 1);
}

TEST_CASE("parse_event rejects an action that does not belong to the type pair") {
  try {
    parse_event(R"({"ts":2,"sub":"p1","sub_t":"process","act":"send","obj":"s1","obj_t":"file"})", 7);
    FAIL("expected a schema error");
  } catch (const SchemaError& e) {
    const std::string what = e.what();
    CHECK(what.find("send") != std::string::npos);
    CHECK(what.find("file") != std::string::npos);
  }
}

TEST_CASE("parse_event reports malformed json with its line number") {
  try {
    parse_event("{not json", 42);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 42);
  }
  CHECK_THROWS_AS(parse_event(R"({"ts":1,"sub":"p1","sub_t":"process","act":"launch","obj":"p2"})"), Error);
  CHECK_THROWS_AS(parse_event(R"({"ts":1,"sub":"p1","sub_t":"daemon","act":"launch","obj":"p2","obj_t":"process"})"),
                  SchemaError);
}

TEST_CASE("parse_event keeps object and subject attributes") {
  const auto e = parse_event(
      R"({"ts":5,"sub":"p1","sub_t":"process","act":"read","obj":"f1","obj_t":"file","attrs":{"path":"/etc/shadow"},"sub_attrs":{"exe":"/bin/cat"}})");
  CHECK(e.attrs.at("path") == "/etc/shadow");
  CHECK(e.subject_attrs.at("exe") == "/bin/cat");
  CHECK(parse_event(format_event(e)).attrs == e.attrs);
}

TEST_CASE("reading a 10000-line log keeps every record in order") {
  std::mt19937_64 rng(3);
  std::ostringstream text;
  const char* acts[] = {"read", "write", "launch", "send"};
  const char* types[] = {"file", "file", "process", "socket"};
  for (int i = 0; i < 10000; ++i) {
    const int k = static_cast<int>(rng() % 4);
    text << R"({"ts":)" << i << R"(,"sub":"p)" << rng() % 50 << R"(","sub_t":"process","act":")" << acts[k]
         << R"(","obj":"o)" << i % 97 << '_' << k << R"(","obj_t":")" << types[k] << "\"}\n";
  }
  const std::string s = text.str();
  // independent count: non-empty lines
  std::size_t lines = 0;
  for (std::size_t pos = 0; pos < s.size();) {
    const auto nl = s.find('\n', pos);
    if (nl > pos) ++lines;
    pos = nl + 1;
  }
  std::istringstream in(s);
  const auto events = read_events(in);
  REQUIRE(events.size() == lines);
  REQUIRE(lines == 10000);
  for (std::size_t i = 0; i < events.size(); ++i) CHECK(events[i].timestamp == static_cast<std::int64_t>(i));
}

TEST_CASE("edge type indices follow the canonical table order") {
  CHECK(edge_type_index(NodeType::kProcess, NodeType::kProcess, "launch") == 1);
  CHECK(edge_type_index(NodeType::kProcess, NodeType::kFile, "open") == 7);
  CHECK(edge_type_index(NodeType::kProcess, NodeType::kFile, "create") == 2);
  CHECK(edge_type_index(NodeType::kProcess, NodeType::kRegistry, "open") == 8);
  CHECK(edge_type_index(NodeType::kProcess, NodeType::kRegistry, "delete") == 13);
  CHECK(edge_type_index(NodeType::kProcess, NodeType::kSocket, "send") == 14);
  CHECK(edge_type_index(NodeType::kProcess, NodeType::kSocket, "reconnect") == 21);
  CHECK_THROWS_AS(edge_type_index(NodeType::kFile, NodeType::kFile, "read"), SchemaError);
  CHECK_FALSE(find_edge_type(NodeType::kProcess, NodeType::kRegistry, "send").has_value());
}

TEST_CASE("every monitored combination gets a distinct index") {
  const std::vector<std::pair<NodeType, std::vector<std::string>>> table = {
      {NodeType::kProcess, {"launch"}},
      {NodeType::kFile, {"create", "read", "write", "close", "delete", "open"}},
      {NodeType::kRegistry, {"open", "query", "enumerate", "modify", "close", "delete"}},
      {NodeType::kSocket, {"send", "receive", "retransmit", "copy", "connect", "disconnect", "accept", "reconnect"}}};
  std::multiset<int> hits;
  for (const auto& [type, actions] : table) {
    for (const auto& a : actions) hits.insert(edge_type_index(NodeType::kProcess, type, a));
  }
  CHECK(hits.size() == 21);
  for (int i = 1; i <= 21; ++i) CHECK(hits.count(i) == 1);
  for (int i = 1; i <= 21; ++i) CHECK(edge_type(i).index == i);
}

TEST_CASE("build_graph on three events") {
  const std::vector<EventRecord> events = {ev("p1", "launch", "p2", NodeType::kProcess),
                                           ev("p2", "write", "f1", NodeType::kFile),
                                           ev("p1", "write", "f1", NodeType::kFile)};
  const auto g = build_graph(events);
  CHECK(g.node_count() == 3);
  CHECK(g.edge_count() == 3);
  const auto f1 = g.index_of("f1");
  CHECK(g.in_edges(f1).size() == 2);
  CHECK(g.out_edges(f1).empty());
}

TEST_CASE("duplicate events collapse into multiplicity") {
  const std::vector<EventRecord> events = {ev("p1", "read", "f1", NodeType::kFile, 9),
                                           ev("p1", "read", "f1", NodeType::kFile, 3),
                                           ev("p1", "read", "f1", NodeType::kFile, 5)};
  const auto g = build_graph(events);
  REQUIRE(g.edge_count() == 1);
  CHECK(g.edges()[0].multiplicity == 3);
  CHECK(g.edges()[0].timestamp == 3);
}

TEST_CASE("one key with two node types is an integrity error") {
  const std::vector<EventRecord> events = {ev("p1", "read", "x", NodeType::kFile),
                                           ev("p1", "launch", "x", NodeType::kProcess)};
  CHECK_THROWS_AS(build_graph(events), IntegrityError);
}

TEST_CASE("the earliest attribute value wins") {
  auto a = ev("p1", "read", "f1", NodeType::kFile, 10);
  a.attrs = {{"path", "/late"}};
  auto b = ev("p1", "read", "f1", NodeType::kFile, 2);
  b.attrs = {{"path", "/early"}};
  const std::vector<EventRecord> fwd = {a, b};
  const std::vector<EventRecord> rev = {b, a};
  CHECK(build_graph(fwd).node(build_graph(fwd).index_of("f1")).attrs.at("path") == "/early");
  CHECK(build_graph(fwd) == build_graph(rev));
}

TEST_CASE("5000 random events over 200 entities") {
  std::mt19937_64 rng(11);
  std::vector<EventRecord> events;
  for (int i = 0; i < 5000; ++i) {
    const int sub = static_cast<int>(rng() % 80);
    switch (rng() % 3) {
      case 0: events.push_back(ev("p" + std::to_string(sub), "launch", "p" + std::to_string(rng() % 80), NodeType::kProcess)); break;
      case 1: events.push_back(ev("p" + std::to_string(sub), "read", "f" + std::to_string(rng() % 80), NodeType::kFile)); break;
      default: events.push_back(ev("p" + std::to_string(sub), "send", "s" + std::to_string(rng() % 40), NodeType::kSocket)); break;
    }
    events.back().timestamp = static_cast<std::int64_t>(rng() % 1000);
  }
  std::set<std::string> keys;
  for (const auto& e : events) {
    keys.insert(e.subject_id);
    keys.insert(e.object_id);
  }
  const auto g = build_graph(events);
  std::set<std::string> nodes;
  for (const auto& n : g.nodes()) nodes.insert(n.key);
  CHECK(nodes == keys);
  CHECK(g.total_multiplicity() == 5000);
  CHECK(g.node_count() <= 2 * events.size());
  for (const auto& e : g.edges()) {
    const auto& t = edge_type(e.edge_type);
    CHECK(g.node(e.src).type == t.src);
    CHECK(g.node(e.dst).type == t.dst);
  }

  SUBCASE("order insensitive") {
    auto shuffled = events;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    CHECK(build_graph(shuffled) == g);
  }
  SUBCASE("persistence round trip") {
    const auto dir = temp_dir("graph_rt");
    save_graph(g, dir);
    const auto back = load_graph(dir);
    CHECK(back == g);
    const auto dir2 = temp_dir("graph_rt2");
    save_graph(back, dir2);
    for (const char* f : {"nodes.jsonl", "edges.jsonl"}) {
      std::ifstream x(dir / f), y(dir2 / f);
      std::stringstream sx, sy;
      sx << x.rdbuf();
      sy << y.rdbuf();
      CHECK(sx.str() == sy.str());
    }
  }
}

TEST_CASE("neighbors are the union of in and out neighbours without self") {
  const std::vector<EventRecord> events = {ev("a", "launch", "b", NodeType::kProcess),
                                           ev("c", "launch", "a", NodeType::kProcess),
                                           ev("a", "launch", "a", NodeType::kProcess),
                                           ev("b", "launch", "a", NodeType::kProcess)};
  const auto g = build_graph(events);
  const auto n = g.neighbors(g.index_of("a"));
  CHECK(std::vector<std::uint32_t>(n.begin(), n.end()) ==
        std::vector<std::uint32_t>{static_cast<std::uint32_t>(g.index_of("b")),
                                   static_cast<std::uint32_t>(g.index_of("c"))});
  CHECK_THROWS_AS(g.index_of("zzz"), LookupError);
}
