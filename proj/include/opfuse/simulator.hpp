#pragma once

// Logical-cycle model of a vector engine and a matrix engine executing an
// OpGraph. No host timing is involved; identical inputs give identical
// timelines.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "opfuse/error.hpp"
#include "opfuse/graph.hpp"

namespace opfuse {

using Cycles = std::uint64_t;

struct CostModel {
  double matrix_macs_per_cycle = 0;
  double vector_elems_per_cycle = 0;
  double collective_alpha = 0;  // startup cycles per reduction row
  double collective_beta = 0;   // cycles per tree level per reduction row
  double sync_overhead = 0;     // cycles per cross-engine dependency

  void validate() const {
    const auto finite_nonneg = [](double v) { return std::isfinite(v) && v >= 0; };
    if (!(std::isfinite(matrix_macs_per_cycle) && matrix_macs_per_cycle > 0) ||
        !(std::isfinite(vector_elems_per_cycle) && vector_elems_per_cycle > 0))
      throw ConfigError("cost model: engine rates must be finite and > 0");
    if (!finite_nonneg(collective_alpha) || !finite_nonneg(collective_beta) || !finite_nonneg(sync_overhead))
      throw ConfigError("cost model: collective_alpha, collective_beta and sync_overhead must be >= 0");
  }

  friend bool operator==(const CostModel&, const CostModel&) = default;
};

inline unsigned ceil_log2(std::uint64_t n) {
  unsigned levels = 0;
  std::uint64_t span = 1;
  while (span < n) {
    span <<= 1;
    ++levels;
  }
  return levels;
}

inline Cycles ceil_cycles(double c) {
  // Guard against 1e-15 noise turning an exact integer into the next cycle.
  const double r = std::round(c);
  return static_cast<Cycles>(std::abs(c - r) < 1e-9 * std::max(1.0, r) ? r : std::ceil(c));
}

// matmul     : work / matrix rate
// elementwise: work / vector rate  (also the deferred-scale sync node)
// collective : rows * (alpha + beta * ceil(log2 reduce_len)) + work / vector rate
// Rounded up to whole cycles.
inline Cycles node_latency(const OpNode& node, const CostModel& cm) {
  cm.validate();
  detail::require(node.work > 0, "node_latency: node has no work");
  const double work = static_cast<double>(node.work);
  switch (node.kind) {
    case NodeKind::matmul:
      return ceil_cycles(work / cm.matrix_macs_per_cycle);
    case NodeKind::elementwise:
    case NodeKind::sync:
      return ceil_cycles(work / cm.vector_elems_per_cycle);
    case NodeKind::collective: {
      const double per_row = cm.collective_alpha + cm.collective_beta * ceil_log2(node.reduce_len);
      return ceil_cycles(static_cast<double>(node.rows) * per_row + work / cm.vector_elems_per_cycle);
    }
  }
  return 0;
}

struct TimelineEntry {
  NodeId node_id = 0;
  Engine engine = Engine::vector;
  Cycles start = 0;
  Cycles end = 0;

  friend bool operator==(const TimelineEntry&, const TimelineEntry&) = default;
};

struct Timeline {
  std::vector<TimelineEntry> entries;  // indexed by node id
  Cycles total = 0;

  const TimelineEntry& at(NodeId id) const { return entries.at(id); }
  friend bool operator==(const Timeline&, const Timeline&) = default;
};

inline Cycles sync_cycles(const CostModel& cm) { return ceil_cycles(cm.sync_overhead); }

// Earliest start of `id` given already-placed predecessors.
inline Cycles ready_time(const OpGraph& g, const std::vector<TimelineEntry>& placed, NodeId id, Cycles sync) {
  Cycles ready = 0;
  for (const NodeId p : g.predecessors(id)) {
    const Cycles edge = g.node(p).engine != g.node(id).engine ? sync : 0;
    ready = std::max(ready, placed[p].end + edge);
  }
  return ready;
}

// Places nodes one at a time in `order` (must be topological): each starts at
// max(dependency ends + sync on cross-engine edges, time its engine frees up).
inline Timeline place_in_order(const OpGraph& g, const CostModel& cm, const std::vector<NodeId>& order) {
  const Cycles sync = sync_cycles(cm);
  Timeline t;
  t.entries.resize(g.size());
  std::array<Cycles, 2> engine_free{0, 0};
  for (const NodeId id : order) {
    const auto& n = g.node(id);
    auto& free_at = engine_free[n.engine == Engine::vector ? 0 : 1];
    const Cycles start = std::max(ready_time(g, t.entries, id, sync), free_at);
    const Cycles end = start + node_latency(n, cm);
    t.entries[id] = {id, n.engine, start, end};
    free_at = end;
    t.total = std::max(t.total, end);
  }
  return t;
}

// List scheduling over the topological order with ascending-id tie-break.
inline Timeline schedule(const OpGraph& g, const CostModel& cm) {
  cm.validate();
  const auto order = g.topological_order();
  if (order.size() != g.size()) throw InvalidInput("schedule: graph has a cycle");
  return place_in_order(g, cm, order);
}

// Checks engine exclusivity, dependency respect (with sync) and that total is
// the latest end. Returns an empty string when the timeline is valid.
inline std::string check_timeline(const OpGraph& g, const CostModel& cm, const Timeline& t) {
  if (t.entries.size() != g.size()) return "entry count differs from node count";
  const Cycles sync = sync_cycles(cm);
  Cycles latest = 0;
  for (NodeId id = 0; id < g.size(); ++id) {
    const auto& e = t.entries[id];
    if (e.node_id != id) return "entry " + std::to_string(id) + " has wrong node id";
    if (e.engine != g.node(id).engine) return "node " + std::to_string(id) + " on wrong engine";
    if (e.end - e.start != node_latency(g.node(id), cm)) return "node " + std::to_string(id) + " has wrong duration";
    if (e.start < ready_time(g, t.entries, id, sync)) return "node " + std::to_string(id) + " starts before its inputs";
    latest = std::max(latest, e.end);
  }
  for (NodeId a = 0; a < g.size(); ++a)
    for (NodeId b = a + 1; b < g.size(); ++b) {
      const auto& x = t.entries[a];
      const auto& y = t.entries[b];
      if (x.engine == y.engine && x.start < y.end && y.start < x.end)
        return "nodes " + std::to_string(a) + " and " + std::to_string(b) + " overlap on one engine";
    }
  if (latest != t.total) return "total differs from latest end";
  return {};
}

// Time a site occupies on the critical path: from the start of its
// element-wise node to the moment its output is consumed (the earliest
// start among the consumers of the site's last node, or that node's end if
// nothing consumes it).
inline Cycles site_span(const OpGraph& g, const Timeline& t, const FusionSite& site) {
  const NodeId last = site.scale ? *site.scale : site.matmul;
  Cycles exit = t.at(last).end;
  const auto& consumers = g.successors(last);
  if (!consumers.empty()) {
    exit = std::numeric_limits<Cycles>::max();
    for (const NodeId c : consumers) exit = std::min(exit, t.at(c).start);
  }
  return exit - t.at(site.elementwise).start;
}

struct SiteSaving {
  std::string site;
  std::int64_t hidden_cycles = 0;  // conventional span - fused span; negative if fusion loses
};

struct LatencyReport {
  Cycles conventional_total = 0;
  Cycles fused_total = 0;
  std::vector<SiteSaving> per_site_savings;
  double speedup_percent = 0;  // 100 * (1 - fused / conventional)
};

inline LatencyReport compare(const OpGraph& conventional, const OpGraph& fused, const CostModel& cm) {
  cm.validate();
  if (conventional.sites().size() != fused.sites().size())
    throw InvalidInput("compare: graphs have different fusion sites");
  if (conventional.total_work(NodeKind::matmul) != fused.total_work(NodeKind::matmul))
    throw InvalidInput("compare: graphs come from different block configurations");
  for (const auto& s : conventional.sites()) {
    if (s.scale) throw InvalidInput("compare: first graph is not a conventional graph");
    const auto* f = fused.find_site(s.name);
    if (!f || !f->scale) throw InvalidInput("compare: second graph lacks fused site '" + s.name + "'");
  }

  const auto tc = schedule(conventional, cm);
  const auto tf = schedule(fused, cm);
  LatencyReport r;
  r.conventional_total = tc.total;
  r.fused_total = tf.total;
  for (const auto& s : conventional.sites()) {
    const auto conv_span = static_cast<std::int64_t>(site_span(conventional, tc, s));
    const auto fused_span = static_cast<std::int64_t>(site_span(fused, tf, *fused.find_site(s.name)));
    r.per_site_savings.push_back({s.name, conv_span - fused_span});
  }
  r.speedup_percent =
      tc.total == 0 ? 0.0 : 100.0 * (1.0 - static_cast<double>(tf.total) / static_cast<double>(tc.total));
  return r;
}

}  // namespace opfuse
