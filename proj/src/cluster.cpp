// SPDX-License-Identifier: Apache-2.0
#include "beeplan/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "beeplan/errors.hpp"

namespace beeplan {

using nlohmann::json;

namespace {

constexpr double kMinLatencyMs = 1e-6;

[[noreturn]] void fail(const std::string& field, const std::string& why) {
  throw ValidationError(field + ": " + why);
}

void reject_unknown_keys(const json& obj, const std::set<std::string>& known,
                         const std::string& where) {
  for (const auto& [key, _] : obj.items()) {
    if (!known.contains(key)) fail(where + "." + key, "unknown field");
  }
}

const json& require(const json& obj, const std::string& key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) fail(where + "." + key, "missing field");
  return *it;
}

double require_number(const json& obj, const std::string& key, const std::string& where) {
  const json& v = require(obj, key, where);
  if (!v.is_number()) fail(where + "." + key, "expected a number");
  return v.get<double>();
}

std::uint64_t require_bytes(const json& obj, const std::string& key, const std::string& where) {
  const json& v = require(obj, key, where);
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
    fail(where + "." + key, "expected a non-negative integer byte count");
  return v.get<std::uint64_t>();
}

int require_count(const json& obj, const std::string& key, const std::string& where) {
  const json& v = require(obj, key, where);
  if (!v.is_number_integer()) fail(where + "." + key, "expected an integer");
  return v.get<int>();
}

LatencyTable parse_latency_table(const json& obj, const std::string& where) {
  if (!obj.is_object() || obj.empty()) fail(where, "expected a non-empty {micro_batch: ms} table");
  LatencyTable table;
  for (const auto& [key, value] : obj.items()) {
    int b = 0;
    try {
      std::size_t pos = 0;
      b = std::stoi(key, &pos);
      if (pos != key.size()) throw std::invalid_argument(key);
    } catch (const std::exception&) {
      fail(where + "." + key, "table key must be an integer micro-batch size");
    }
    if (b < 1) fail(where + "." + key, "micro-batch size must be >= 1");
    if (!value.is_number()) fail(where + "." + key, "expected a number");
    double ms = value.get<double>();
    if (!(ms > 0.0)) fail(where + "." + key, "latency-table entries must be > 0");
    table[b] = ms;
  }
  return table;
}

json latency_table_to_json(const LatencyTable& table) {
  json obj = json::object();
  for (const auto& [b, ms] : table) obj[std::to_string(b)] = ms;
  return obj;
}

NodeProfile parse_node(const json& obj, std::size_t index) {
  std::string where = "nodes[" + std::to_string(index) + "]";
  if (!obj.is_object()) fail(where, "expected an object");
  reject_unknown_keys(obj, {"node_id", "gpu_mem", "host_mem", "t_mlp", "t_attn_gpu",
                            "t_attn_cpu", "pcie_bw"},
                      where);
  NodeProfile node;
  const json& id = require(obj, "node_id", where);
  if (!id.is_string()) fail(where + ".node_id", "expected a string");
  node.node_id = id.get<std::string>();
  node.gpu_mem = require_bytes(obj, "gpu_mem", where);
  node.host_mem = require_bytes(obj, "host_mem", where);
  node.t_mlp = parse_latency_table(require(obj, "t_mlp", where), where + ".t_mlp");
  node.t_attn_gpu = parse_latency_table(require(obj, "t_attn_gpu", where), where + ".t_attn_gpu");
  node.t_attn_cpu = parse_latency_table(require(obj, "t_attn_cpu", where), where + ".t_attn_cpu");
  if (obj.contains("pcie_bw")) {
    const json& v = obj["pcie_bw"];
    if (!v.is_number()) fail(where + ".pcie_bw", "expected a number");
    node.pcie_bw = v.get<double>();
  }
  return node;
}

LinkProfile parse_link(const json& obj, std::size_t index) {
  std::string where = "links[" + std::to_string(index) + "]";
  if (!obj.is_object()) fail(where, "expected an object");
  reject_unknown_keys(obj, {"from", "to", "latency_ms", "bandwidth_mbps"}, where);
  LinkProfile link;
  const json& from = require(obj, "from", where);
  const json& to = require(obj, "to", where);
  if (!from.is_string()) fail(where + ".from", "expected a string");
  if (!to.is_string()) fail(where + ".to", "expected a string");
  link.from = from.get<std::string>();
  link.to = to.get<std::string>();
  link.latency_ms = require_number(obj, "latency_ms", where);
  // Bandwidth arrives in Mbps and is converted to bits/s exactly once, here.
  link.bandwidth_bps = require_number(obj, "bandwidth_mbps", where) * 1e6;
  return link;
}

ModelProfile parse_model(const json& obj) {
  const std::string where = "model";
  if (!obj.is_object()) fail(where, "expected an object");
  reject_unknown_keys(obj, {"total_blocks", "hidden_dim", "elem_bytes", "seq_len",
                            "weight_bytes_per_block", "kv_bytes_per_block_per_token",
                            "act_workspace_factor"},
                      where);
  ModelProfile model;
  model.total_blocks = require_count(obj, "total_blocks", where);
  model.hidden_dim = require_count(obj, "hidden_dim", where);
  model.elem_bytes = require_count(obj, "elem_bytes", where);
  model.seq_len = require_count(obj, "seq_len", where);
  model.weight_bytes_per_block = require_bytes(obj, "weight_bytes_per_block", where);
  model.kv_bytes_per_block_per_token = require_bytes(obj, "kv_bytes_per_block_per_token", where);
  if (obj.contains("act_workspace_factor")) {
    const json& v = obj["act_workspace_factor"];
    if (!v.is_number()) fail(where + ".act_workspace_factor", "expected a number");
    model.act_workspace_factor = v.get<double>();
  }
  return model;
}

} // namespace

double interpolate_latency(const LatencyTable& table, int b) {
  if (table.empty()) throw ValidationError("latency table: empty");
  if (table.size() == 1) return table.begin()->second;

  auto at = [&](LatencyTable::const_iterator it) {
    return std::pair<double, double>(static_cast<double>(it->first), it->second);
  };
  auto line = [&](std::pair<double, double> p0, std::pair<double, double> p1, double x) {
    double slope = (p1.second - p0.second) / (p1.first - p0.first);
    return p0.second + slope * (x - p0.first);
  };

  double x = static_cast<double>(b);
  auto hi = table.lower_bound(b);
  double value;
  if (hi == table.end()) {
    // Above the profiled range: extrapolate through the two largest keys.
    auto last = std::prev(table.end());
    value = line(at(std::prev(last)), at(last), x);
  } else if (hi->first == b) {
    return hi->second;
  } else if (hi == table.begin()) {
    // Below the profiled range: extrapolate through the two smallest keys.
    value = line(at(hi), at(std::next(hi)), x);
  } else {
    value = line(at(std::prev(hi)), at(hi), x);
  }
  return std::max(value, kMinLatencyMs);
}

const LinkProfile* ClusterSpec::find_link(const std::string& from, const std::string& to) const {
  for (const auto& link : links) {
    if (link.from == from && link.to == to) return &link;
  }
  return nullptr;
}

void validate(const ClusterSpec& spec) {
  if (spec.nodes.empty()) fail("nodes", "at least one node required");

  std::set<std::string> ids;
  for (std::size_t i = 0; i < spec.nodes.size(); ++i) {
    const NodeProfile& node = spec.nodes[i];
    std::string where = "nodes[" + std::to_string(i) + "]";
    if (node.node_id.empty()) fail(where + ".node_id", "must be non-empty");
    if (!ids.insert(node.node_id).second) fail(where + ".node_id", "duplicate node_id");
    if (node.gpu_mem == 0) fail(where + ".gpu_mem", "must be > 0");
    auto check_table = [&](const LatencyTable& t, const char* name) {
      if (t.empty()) fail(where + "." + name, "must be non-empty");
      for (const auto& [b, ms] : t) {
        if (b < 1) fail(where + "." + name, "micro-batch keys must be >= 1");
        if (!(ms > 0.0)) fail(where + "." + name, "entries must be > 0");
      }
    };
    check_table(node.t_mlp, "t_mlp");
    check_table(node.t_attn_gpu, "t_attn_gpu");
    check_table(node.t_attn_cpu, "t_attn_cpu");
    auto keys = [](const LatencyTable& t) {
      std::vector<int> ks;
      for (const auto& [b, _] : t) ks.push_back(b);
      return ks;
    };
    if (keys(node.t_mlp) != keys(node.t_attn_gpu) || keys(node.t_mlp) != keys(node.t_attn_cpu))
      fail(where, "latency tables must share the same micro-batch key set");
  }

  for (std::size_t i = 0; i < spec.links.size(); ++i) {
    const LinkProfile& link = spec.links[i];
    std::string where = "links[" + std::to_string(i) + "]";
    if (!ids.contains(link.from)) fail(where + ".from", "references unknown node " + link.from);
    if (!ids.contains(link.to)) fail(where + ".to", "references unknown node " + link.to);
    if (link.latency_ms < 0.0) fail(where + ".latency_ms", "must be >= 0");
    if (!(link.bandwidth_bps > 0.0)) fail(where + ".bandwidth_mbps", "must be > 0");
  }

  for (std::size_t i = 0; i + 1 < spec.nodes.size(); ++i) {
    if (spec.find_link(spec.nodes[i].node_id, spec.nodes[i + 1].node_id) == nullptr)
      fail("links", "missing link " + spec.nodes[i].node_id + " -> " + spec.nodes[i + 1].node_id);
  }

  const ModelProfile& m = spec.model;
  if (m.total_blocks < 1) fail("model.total_blocks", "must be >= 1");
  if (m.hidden_dim < 1) fail("model.hidden_dim", "must be >= 1");
  if (m.elem_bytes != 1 && m.elem_bytes != 2 && m.elem_bytes != 4)
    fail("model.elem_bytes", "must be one of {1,2,4}");
  if (m.seq_len < 1) fail("model.seq_len", "must be >= 1");
  if (m.weight_bytes_per_block == 0) fail("model.weight_bytes_per_block", "must be > 0");
  if (m.kv_bytes_per_block_per_token == 0)
    fail("model.kv_bytes_per_block_per_token", "must be > 0");
  if (!(m.act_workspace_factor >= 0.0)) fail("model.act_workspace_factor", "must be >= 0");
}

ClusterSpec load_cluster_spec(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("cluster spec: ") + e.what());
  }
  if (!doc.is_object()) throw ParseError("cluster spec: expected a JSON object");
  reject_unknown_keys(doc, {"nodes", "links", "model"}, "spec");

  ClusterSpec spec;
  const json& nodes = require(doc, "nodes", "spec");
  if (!nodes.is_array()) fail("nodes", "expected an array");
  for (std::size_t i = 0; i < nodes.size(); ++i) spec.nodes.push_back(parse_node(nodes[i], i));

  const json& links = require(doc, "links", "spec");
  if (!links.is_array()) fail("links", "expected an array");
  for (std::size_t i = 0; i < links.size(); ++i) spec.links.push_back(parse_link(links[i], i));

  spec.model = parse_model(require(doc, "model", "spec"));
  validate(spec);
  return spec;
}

ClusterSpec load_cluster_spec_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open cluster spec file: " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return load_cluster_spec(buffer.str());
}

std::string save_cluster_spec(const ClusterSpec& spec) {
  json doc;
  doc["nodes"] = json::array();
  for (const auto& node : spec.nodes) {
    json n;
    n["node_id"] = node.node_id;
    n["gpu_mem"] = node.gpu_mem;
    n["host_mem"] = node.host_mem;
    n["t_mlp"] = latency_table_to_json(node.t_mlp);
    n["t_attn_gpu"] = latency_table_to_json(node.t_attn_gpu);
    n["t_attn_cpu"] = latency_table_to_json(node.t_attn_cpu);
    if (node.pcie_bw) n["pcie_bw"] = *node.pcie_bw;
    doc["nodes"].push_back(std::move(n));
  }
  doc["links"] = json::array();
  for (const auto& link : spec.links) {
    json l;
    l["from"] = link.from;
    l["to"] = link.to;
    l["latency_ms"] = link.latency_ms;
    l["bandwidth_mbps"] = link.bandwidth_bps / 1e6;
    doc["links"].push_back(std::move(l));
  }
  json m;
  m["total_blocks"] = spec.model.total_blocks;
  m["hidden_dim"] = spec.model.hidden_dim;
  m["elem_bytes"] = spec.model.elem_bytes;
  m["seq_len"] = spec.model.seq_len;
  m["weight_bytes_per_block"] = spec.model.weight_bytes_per_block;
  m["kv_bytes_per_block_per_token"] = spec.model.kv_bytes_per_block_per_token;
  m["act_workspace_factor"] = spec.model.act_workspace_factor;
  doc["model"] = std::move(m);
  return doc.dump(2);
}

} // namespace beeplan
