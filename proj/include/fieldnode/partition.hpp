#pragma once

// Node partitions of a flat observation vector.
//
//   field_wise    one node per schema field
//   joint_wise    one node per group of fields (a physical joint / body)
//   chunk_wise    n chunks of floor(d/n) dims, the last takes the remainder
//   element_wise  one node per scalar dimension

#include <nlohmann/json.hpp>

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "fieldnode/env.hpp"

namespace fieldnode {

enum class PartitionStrategy { field_wise, joint_wise, chunk_wise, element_wise };

inline std::string to_string(PartitionStrategy s) {
  switch (s) {
    case PartitionStrategy::field_wise:
      return "field_wise";
    case PartitionStrategy::joint_wise:
      return "joint_wise";
    case PartitionStrategy::chunk_wise:
      return "chunk_wise";
    case PartitionStrategy::element_wise:
      return "element_wise";
  }
  return "?";
}

inline PartitionStrategy parse_strategy(const std::string& s) {
  for (auto st : {PartitionStrategy::field_wise, PartitionStrategy::joint_wise, PartitionStrategy::chunk_wise,
                  PartitionStrategy::element_wise})
    if (to_string(st) == s) return st;
  throw ConfigError("unknown partition strategy: " + s);
}

using JointMap = std::vector<std::vector<std::string>>;

struct NodeSlice {
  std::string name;
  std::vector<int> indices;  // flat observation indices, in order

  [[nodiscard]] int dim() const { return static_cast<int>(indices.size()); }
  bool operator==(const NodeSlice&) const = default;
};

struct PartitionPlan {
  PartitionStrategy strategy = PartitionStrategy::field_wise;
  std::vector<NodeSlice> nodes;
  int obs_dim = 0;
  std::optional<int> chunks;
  std::optional<JointMap> joint_map;

  [[nodiscard]] int node_count() const { return static_cast<int>(nodes.size()); }
  [[nodiscard]] std::vector<int> node_dims() const {
    std::vector<int> d;
    for (const auto& n : nodes) d.push_back(n.dim());
    return d;
  }

  bool operator==(const PartitionPlan&) const = default;
};

// Throws ConfigError unless the slices cover [0, d) exactly once.
inline void validate_plan(const PartitionPlan& plan) {
  if (plan.nodes.empty()) throw ConfigError("partition has no nodes");
  std::vector<int> seen(static_cast<std::size_t>(plan.obs_dim), 0);
  for (const auto& n : plan.nodes) {
    if (n.indices.empty()) throw ConfigError("partition node '" + n.name + "' is empty");
    for (int i : n.indices) {
      if (i < 0 || i >= plan.obs_dim) throw ConfigError("partition index out of range in node " + n.name);
      ++seen[static_cast<std::size_t>(i)];
    }
  }
  for (int c : seen)
    if (c != 1) throw ConfigError("partition slices must cover every dimension exactly once");
}

inline PartitionPlan build_partition(const FieldSchema& schema, PartitionStrategy strategy,
                                     std::optional<int> chunk_count = std::nullopt,
                                     std::optional<JointMap> joint_map = std::nullopt) {
  PartitionPlan plan;
  plan.strategy = strategy;
  plan.obs_dim = flat_dim(schema);
  const int d = plan.obs_dim;
  if (d < 1) throw ConfigError("observation schema is empty");

  std::vector<int> offsets;
  int off = 0;
  for (const auto& f : schema) {
    offsets.push_back(off);
    off += f.dim;
  }
  auto field_indices = [&](std::size_t fi) {
    std::vector<int> idx(static_cast<std::size_t>(schema[fi].dim));
    for (int k = 0; k < schema[fi].dim; ++k) idx[static_cast<std::size_t>(k)] = offsets[fi] + k;
    return idx;
  };

  switch (strategy) {
    case PartitionStrategy::field_wise:
      for (std::size_t fi = 0; fi < schema.size(); ++fi) plan.nodes.push_back({schema[fi].name, field_indices(fi)});
      break;
    case PartitionStrategy::joint_wise: {
      if (!joint_map || joint_map->empty()) throw ConfigError("joint_wise partition requires a joint map");
      std::vector<int> used(schema.size(), 0);
      for (std::size_t g = 0; g < joint_map->size(); ++g) {
        NodeSlice node{"joint" + std::to_string(g), {}};
        for (const auto& fname : (*joint_map)[g]) {
          auto it = std::find_if(schema.begin(), schema.end(), [&](const FieldSpec& f) { return f.name == fname; });
          if (it == schema.end()) throw ConfigError("joint map names unknown field: " + fname);
          const auto fi = static_cast<std::size_t>(it - schema.begin());
          ++used[fi];
          auto idx = field_indices(fi);
          node.indices.insert(node.indices.end(), idx.begin(), idx.end());
        }
        plan.nodes.push_back(std::move(node));
      }
      for (std::size_t fi = 0; fi < schema.size(); ++fi)
        if (used[fi] != 1) throw ConfigError("joint map must place field '" + schema[fi].name + "' in exactly one group");
      plan.joint_map = std::move(joint_map);
      break;
    }
    case PartitionStrategy::chunk_wise: {
      if (!chunk_count) throw ConfigError("chunk_wise partition requires a chunk count");
      const int n = *chunk_count;
      if (n < 1 || n > d) throw ConfigError("chunk count must satisfy 1 <= n <= d (d=" + std::to_string(d) + ")");
      const int base = d / n;
      int start = 0;
      for (int c = 0; c < n; ++c) {
        const int len = c + 1 < n ? base : d - start;
        NodeSlice node{"chunk" + std::to_string(c), {}};
        for (int k = 0; k < len; ++k) node.indices.push_back(start + k);
        start += len;
        plan.nodes.push_back(std::move(node));
      }
      plan.chunks = n;
      break;
    }
    case PartitionStrategy::element_wise:
      for (int i = 0; i < d; ++i) plan.nodes.push_back({"elem" + std::to_string(i), {i}});
      break;
  }
  validate_plan(plan);
  return plan;
}

// Concatenates node slices in order; the inverse of scatter_nodes.
inline std::vector<double> gather_nodes(const PartitionPlan& plan, const std::vector<double>& flat) {
  require_shape(static_cast<int>(flat.size()) == plan.obs_dim, "gather_nodes: observation size mismatch");
  std::vector<double> out;
  out.reserve(flat.size());
  for (const auto& n : plan.nodes)
    for (int i : n.indices) out.push_back(flat[static_cast<std::size_t>(i)]);
  return out;
}

inline std::vector<double> scatter_nodes(const PartitionPlan& plan, const std::vector<double>& node_major) {
  require_shape(static_cast<int>(node_major.size()) == plan.obs_dim, "scatter_nodes: size mismatch");
  std::vector<double> flat(node_major.size());
  std::size_t k = 0;
  for (const auto& n : plan.nodes)
    for (int i : n.indices) flat[static_cast<std::size_t>(i)] = node_major[k++];
  return flat;
}

inline nlohmann::json to_json(const PartitionPlan& plan) {
  nlohmann::json j;
  j["strategy"] = to_string(plan.strategy);
  j["obs_dim"] = plan.obs_dim;
  if (plan.chunks) j["chunks"] = *plan.chunks;
  if (plan.joint_map) j["joint_map"] = *plan.joint_map;
  j["nodes"] = nlohmann::json::array();
  for (const auto& n : plan.nodes) j["nodes"].push_back({{"name", n.name}, {"indices", n.indices}});
  return j;
}

inline PartitionPlan plan_from_json(const nlohmann::json& j) {
  PartitionPlan plan;
  plan.strategy = parse_strategy(j.at("strategy").get<std::string>());
  plan.obs_dim = j.at("obs_dim").get<int>();
  if (j.contains("chunks")) plan.chunks = j["chunks"].get<int>();
  if (j.contains("joint_map")) plan.joint_map = j["joint_map"].get<JointMap>();
  for (const auto& n : j.at("nodes")) plan.nodes.push_back({n.at("name").get<std::string>(), n.at("indices").get<std::vector<int>>()});
  validate_plan(plan);
  return plan;
}

}  // namespace fieldnode
