#pragma once

// Operation dependency graph of one decoder block.
//
// Each normalization site (Norm1 -> QKV, softmax -> attention*V,
// Norm2 -> MLP up-projection) is an element-wise node, a collective node
// and a matmul node. Conventionally they form a chain
//
//   elementwise -> collective -> matmul
//
// In the fused graph the collective no longer feeds the matmul: both hang
// off the element-wise node and meet in a "sync" node that applies the
// deferred scale to the matmul output.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <queue>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "opfuse/block.hpp"
#include "opfuse/error.hpp"

namespace opfuse {

enum class NodeKind { elementwise, collective, matmul, sync };
enum class Engine { vector, matrix };

inline std::string_view to_string(NodeKind k) {
  switch (k) {
    case NodeKind::elementwise: return "elementwise";
    case NodeKind::collective: return "collective";
    case NodeKind::matmul: return "matmul";
    case NodeKind::sync: return "sync";
  }
  return "?";
}

inline std::string_view to_string(Engine e) { return e == Engine::vector ? "vector" : "matrix"; }

inline Engine engine_for(NodeKind k) { return k == NodeKind::matmul ? Engine::matrix : Engine::vector; }

using NodeId = std::size_t;

struct OpNode {
  NodeId id = 0;
  std::string name;
  NodeKind kind = NodeKind::elementwise;
  Engine engine = Engine::vector;
  // Element count (vector nodes) or multiply-accumulate count (matmul).
  std::uint64_t work = 0;
  // Collectives only: `rows` reductions performed one after another, each
  // over `reduce_len` elements in each of `lanes` independent lanes (the
  // attention heads for softmax). work == rows * lanes * reduce_len.
  std::uint64_t rows = 1;
  std::uint64_t lanes = 1;
  std::uint64_t reduce_len = 1;
  std::string site;  // empty unless the node belongs to a fusion site
};

struct FusionSite {
  std::string name;
  NodeId elementwise = 0;
  NodeId collective = 0;
  NodeId matmul = 0;
  std::optional<NodeId> scale;  // fused graphs only
  std::uint64_t heads = 1;      // per-head granularity of the collective
};

class OpGraph {
 public:
  NodeId add_node(OpNode node) {
    node.id = nodes_.size();
    node.engine = engine_for(node.kind);
    nodes_.push_back(std::move(node));
    preds_.emplace_back();
    succs_.emplace_back();
    return nodes_.back().id;
  }

  void add_edge(NodeId from, NodeId to) {
    detail::require(from < nodes_.size() && to < nodes_.size(), "OpGraph::add_edge: unknown node");
    detail::require(from != to, "OpGraph::add_edge: self loop");
    if (std::find(succs_[from].begin(), succs_[from].end(), to) != succs_[from].end()) return;
    succs_[from].push_back(to);
    preds_[to].push_back(from);
    edges_.emplace_back(from, to);
  }

  void add_site(FusionSite site) { sites_.push_back(std::move(site)); }

  const std::vector<OpNode>& nodes() const noexcept { return nodes_; }
  const OpNode& node(NodeId id) const { return nodes_.at(id); }
  const std::vector<std::pair<NodeId, NodeId>>& edges() const noexcept { return edges_; }
  const std::vector<NodeId>& predecessors(NodeId id) const { return preds_.at(id); }
  const std::vector<NodeId>& successors(NodeId id) const { return succs_.at(id); }
  const std::vector<FusionSite>& sites() const noexcept { return sites_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  const FusionSite* find_site(std::string_view name) const {
    for (const auto& s : sites_)
      if (s.name == name) return &s;
    return nullptr;
  }

  // Kahn's algorithm, smallest ready id first. Empty if the graph has a cycle.
  std::vector<NodeId> topological_order() const {
    std::vector<std::size_t> indeg(nodes_.size());
    for (NodeId i = 0; i < nodes_.size(); ++i) indeg[i] = preds_[i].size();
    std::priority_queue<NodeId, std::vector<NodeId>, std::greater<>> ready;
    for (NodeId i = 0; i < nodes_.size(); ++i)
      if (indeg[i] == 0) ready.push(i);
    std::vector<NodeId> order;
    order.reserve(nodes_.size());
    while (!ready.empty()) {
      const NodeId n = ready.top();
      ready.pop();
      order.push_back(n);
      for (const NodeId s : succs_[n])
        if (--indeg[s] == 0) ready.push(s);
    }
    if (order.size() != nodes_.size()) return {};
    return order;
  }

  bool is_acyclic() const { return topological_order().size() == nodes_.size(); }

  bool has_path(NodeId from, NodeId to) const {
    std::vector<bool> seen(nodes_.size(), false);
    std::vector<NodeId> stack{from};
    while (!stack.empty()) {
      const NodeId n = stack.back();
      stack.pop_back();
      if (n == to) return true;
      if (seen[n]) continue;
      seen[n] = true;
      for (const NodeId s : succs_[n]) stack.push_back(s);
    }
    return false;
  }

  std::uint64_t total_work(NodeKind kind) const {
    std::uint64_t sum = 0;
    for (const auto& n : nodes_)
      if (n.kind == kind) sum += n.work;
    return sum;
  }

  // Induced subgraph on `keep`, with node ids renumbered in ascending order
  // of the original ids. Sites whose nodes all survive are carried over.
  OpGraph subgraph(std::vector<NodeId> keep) const {
    std::sort(keep.begin(), keep.end());
    keep.erase(std::unique(keep.begin(), keep.end()), keep.end());
    std::vector<std::optional<NodeId>> remap(nodes_.size());
    OpGraph g;
    for (const NodeId id : keep) {
      detail::require(id < nodes_.size(), "OpGraph::subgraph: unknown node");
      remap[id] = g.add_node(nodes_[id]);
    }
    for (const auto& [a, b] : edges_)
      if (remap[a] && remap[b]) g.add_edge(*remap[a], *remap[b]);
    for (const auto& s : sites_) {
      if (!remap[s.elementwise] || !remap[s.collective] || !remap[s.matmul]) continue;
      if (s.scale && !remap[*s.scale]) continue;
      FusionSite t = s;
      t.elementwise = *remap[s.elementwise];
      t.collective = *remap[s.collective];
      t.matmul = *remap[s.matmul];
      if (s.scale) t.scale = *remap[*s.scale];
      g.add_site(std::move(t));
    }
    return g;
  }

 private:
  std::vector<OpNode> nodes_;
  std::vector<std::vector<NodeId>> preds_;
  std::vector<std::vector<NodeId>> succs_;
  std::vector<std::pair<NodeId, NodeId>> edges_;
  std::vector<FusionSite> sites_;
};

namespace detail {

class GraphBuilder {
 public:
  explicit GraphBuilder(bool fused) : fused_(fused) {}

  NodeId op(std::string name, NodeKind kind, std::uint64_t work, std::optional<NodeId> after = std::nullopt,
            std::string site = {}) {
    OpNode n;
    n.name = std::move(name);
    n.kind = kind;
    n.work = work;
    n.site = std::move(site);
    const NodeId id = g_.add_node(std::move(n));
    if (after) g_.add_edge(*after, id);
    return id;
  }

  NodeId reduction(std::string name, std::uint64_t rows, std::uint64_t lanes, std::uint64_t len, NodeId after,
                   std::string site = {}) {
    OpNode n;
    n.name = std::move(name);
    n.site = std::move(site);
    n.kind = NodeKind::collective;
    n.rows = rows;
    n.lanes = lanes;
    n.reduce_len = len;
    n.work = rows * lanes * len;
    const NodeId id = g_.add_node(std::move(n));
    g_.add_edge(after, id);
    return id;
  }

  // Emits one normalization site and returns the node whose output feeds
  // the rest of the block (the matmul, or the deferred scale when fused).
  NodeId site(const std::string& name, std::optional<NodeId> after, std::uint64_t elementwise_work,
              std::uint64_t rows, std::uint64_t lanes, std::uint64_t reduce_len, std::uint64_t matmul_macs,
              std::uint64_t output_elems) {
    FusionSite s;
    s.name = name;
    s.heads = lanes;
    s.elementwise = op(name + ".elementwise", NodeKind::elementwise, elementwise_work, after, name);
    s.collective = reduction(name + ".collective", rows, lanes, reduce_len, s.elementwise, name);
    s.matmul = op(name + ".matmul", NodeKind::matmul, matmul_macs, std::nullopt, name);
    NodeId out = s.matmul;
    if (fused_) {
      g_.add_edge(s.elementwise, s.matmul);
      s.scale = op(name + ".scale", NodeKind::sync, output_elems, std::nullopt, name);
      g_.add_edge(s.collective, *s.scale);
      g_.add_edge(s.matmul, *s.scale);
      out = *s.scale;
    } else {
      g_.add_edge(s.collective, s.matmul);
    }
    g_.add_site(std::move(s));
    return out;
  }

  OpGraph take() { return std::move(g_); }

 private:
  bool fused_;
  OpGraph g_;
};

}  // namespace detail

// Whole-sequence (prefill) graph of one block. Work counts:
//   Norm sites : seq*d element-wise, seq reductions of length d
//   QKV        : 3*seq*d^2 MACs          (one node for the three projections)
//   scores     : seq^2*d MACs            (all heads)
//   softmax    : max and sum reductions of length seq, seq rows x heads lanes
//   attn*V     : seq^2*d MACs, out-proj seq*d^2
//   MLP        : standard seq*d*h up, seq*h gelu, seq*h*d down
//                llama    2*seq*d*h gate+up, seq*h swiglu, seq*h*d down
inline OpGraph build_graph(const BlockConfig& cfg, bool fused) {
  cfg.validate();
  const std::uint64_t s = cfg.seq_len, d = cfg.d_model, h = cfg.mlp_hidden, heads = cfg.n_heads;
  const bool llama = cfg.variant == BlockVariant::llama_swiglu;
  detail::GraphBuilder b(fused);

  const NodeId qkv = b.site("norm1", std::nullopt, s * d, s, 1, d, 3 * s * d * d, 3 * s * d);
  const NodeId scores = b.op("attn.scores.matmul", NodeKind::matmul, s * s * d, qkv);
  const NodeId smax = b.reduction("softmax.max", s, heads, s, scores);
  const NodeId pv = b.site("softmax", smax, heads * s * s, s, heads, s, s * s * d, s * d);
  const NodeId out_proj = b.op("attn.out.matmul", NodeKind::matmul, s * d * d, pv);
  const NodeId resid1 = b.op("residual1.elementwise", NodeKind::elementwise, s * d, out_proj);
  const NodeId up = b.site("norm2", resid1, s * d, s, 1, d, (llama ? 2 : 1) * s * d * h, (llama ? 2 : 1) * s * h);
  const NodeId act = b.op(llama ? "mlp.swiglu.elementwise" : "mlp.gelu.elementwise", NodeKind::elementwise, s * h, up);
  const NodeId down = b.op("mlp.down.matmul", NodeKind::matmul, s * h * d, act);
  b.op("residual2.elementwise", NodeKind::elementwise, s * d, down);
  return b.take();
}

// The site's nodes plus their immediate neighbours in the block graph.
inline OpGraph site_micrograph(const OpGraph& block, const FusionSite& site) {
  std::vector<NodeId> keep{site.elementwise, site.collective, site.matmul};
  if (site.scale) keep.push_back(*site.scale);
  const std::vector<NodeId> core = keep;
  for (const NodeId id : core) {
    for (const NodeId p : block.predecessors(id)) keep.push_back(p);
    for (const NodeId q : block.successors(id)) keep.push_back(q);
  }
  return block.subgraph(std::move(keep));
}

}  // namespace opfuse
