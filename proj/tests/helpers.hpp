#pragma once

#include <algorithm>
#include <cstdint>
#include <variant>
#include <vector>

#include "opfuse/block.hpp"
#include "opfuse/graph.hpp"
#include "opfuse/random.hpp"
#include "opfuse/simulator.hpp"
#include "opfuse/tensor.hpp"
#include "oracles.hpp"

namespace testing_helpers {

inline oracle::Vec to_vec(const opfuse::RowVector& v) { return v.storage(); }

inline oracle::Mat to_mat(const opfuse::Matrix& m) {
  return {m.rows(), m.cols(), oracle::Vec(m.values().begin(), m.values().end())};
}

inline oracle::BlockRef to_reference(const opfuse::BlockConfig& cfg, const opfuse::BlockWeights& w) {
  oracle::BlockRef r;
  r.d = cfg.d_model;
  r.heads = cfg.n_heads;
  r.hidden = cfg.mlp_hidden;
  r.eps = cfg.epsilon_ln;
  r.wq = to_mat(w.w_q);
  r.wk = to_mat(w.w_k);
  r.wv = to_mat(w.w_v);
  r.wo = to_mat(w.w_o);
  if (const auto* p = std::get_if<opfuse::StandardBlockParams>(&w.params)) {
    r.g1 = to_vec(p->ln1.gamma);
    r.b1 = to_vec(p->ln1.beta);
    r.g2 = to_vec(p->ln2.gamma);
    r.b2 = to_vec(p->ln2.beta);
    r.up1 = to_mat(p->fc1);
    r.down = to_mat(p->fc2);
  } else {
    const auto& l = std::get<opfuse::LlamaBlockParams>(w.params);
    r.llama = true;
    r.g1 = to_vec(l.ln1.gamma);
    r.g2 = to_vec(l.ln2.gamma);
    r.up1 = to_mat(l.mlp.w_gate);
    r.up2 = to_mat(l.mlp.w_up);
    r.down = to_mat(l.mlp.w_down);
  }
  return r;
}

inline opfuse::BlockConfig random_block_config(opfuse::Rng& rng, opfuse::BlockVariant variant,
                                               std::size_t max_d = 128, std::size_t max_seq = 32) {
  opfuse::BlockConfig cfg;
  const std::size_t heads_choices[] = {1, 2, 4, 8};
  cfg.n_heads = heads_choices[rng.integer(0, 3)];
  const std::size_t max_dh = max_d / cfg.n_heads;
  cfg.d_model = cfg.n_heads * rng.integer(1, max_dh);
  cfg.seq_len = rng.integer(1, max_seq);
  cfg.mlp_hidden = rng.integer(1, 3 * cfg.d_model);
  cfg.variant = variant;
  cfg.epsilon_ln = 1e-5;
  return cfg;
}

// Any positive rates, alpha, beta and sync.
inline opfuse::CostModel random_cost_model(opfuse::Rng& rng) {
  opfuse::CostModel cm;
  cm.vector_elems_per_cycle = rng.uniform(64, 2048);
  cm.matrix_macs_per_cycle = cm.vector_elems_per_cycle * rng.uniform(4, 64);
  cm.collective_alpha = rng.uniform(0, 512);
  cm.collective_beta = rng.uniform(0, 32);
  cm.sync_overhead = static_cast<double>(rng.integer(0, 64));
  return cm;
}

// Cost models for which fusion never loses on `cfg`:
//  - latency-bound collectives: the per-row startup alpha covers the widest
//    per-row deferred scale ((3d + 2h) / vector rate) plus two engine hand-offs;
//  - the matrix engine is at most min(d, seq) times the vector rate, so no
//    site's matmul is shorter than its own deferred scale.
inline opfuse::CostModel latency_bound_cost_model(opfuse::Rng& rng, const opfuse::BlockConfig& cfg) {
  opfuse::CostModel cm;
  cm.vector_elems_per_cycle = rng.uniform(64, 2048);
  const double max_ratio = static_cast<double>(std::min(cfg.d_model, cfg.seq_len));
  cm.matrix_macs_per_cycle = cm.vector_elems_per_cycle * rng.uniform(1, max_ratio);
  cm.sync_overhead = static_cast<double>(rng.integer(0, 64));
  const double floor =
      static_cast<double>(3 * cfg.d_model + 2 * cfg.mlp_hidden) / cm.vector_elems_per_cycle + 2 * cm.sync_overhead;
  cm.collective_alpha = floor + rng.uniform(0, 512);
  cm.collective_beta = rng.uniform(0, 32);
  return cm;
}

// Saving the overlap law predicts for a fused site sitting in a chain. The
// conventional site pays collective + sync + matmul back to back; the fused
// one pays the longer of its two branches, then the scale. Cross-engine
// edges cost `sync`, which shifts the result by -sync when the consumer runs
// on the matrix engine and +sync when it runs on the vector engine:
//   hidden = min(M + sync, C - sync) - S -/+ sync
inline std::int64_t overlap_law_hidden(const opfuse::OpGraph& fused, const opfuse::FusionSite& s,
                                       const opfuse::CostModel& cm) {
  using opfuse::node_latency;
  const auto lat = [&](opfuse::NodeId id) { return static_cast<std::int64_t>(node_latency(fused.node(id), cm)); };
  const auto sync = static_cast<std::int64_t>(opfuse::sync_cycles(cm));
  const auto c = lat(s.collective), m = lat(s.matmul), scale = lat(*s.scale);
  std::int64_t exit_adjust = 0;
  const auto& consumers = fused.successors(*s.scale);
  if (!consumers.empty()) exit_adjust = fused.node(consumers.front()).engine == opfuse::Engine::vector ? sync : -sync;
  return std::min(m + sync, c - sync) - scale + exit_adjust;
}

// Site graph built by hand: e -> c -> m, or e -> {c, m} -> s when fused.
// Unit engine rates and alpha = beta = 0 make every latency equal its work.
inline opfuse::OpGraph isolated_site(std::uint64_t e, std::uint64_t c, std::uint64_t m, std::uint64_t s, bool fused) {
  using opfuse::NodeKind;
  opfuse::OpGraph g;
  opfuse::FusionSite site;
  site.name = "site";
  site.elementwise = g.add_node({.name = "e", .kind = NodeKind::elementwise, .work = e});
  site.collective = g.add_node({.name = "c", .kind = NodeKind::collective, .work = c, .reduce_len = c});
  site.matmul = g.add_node({.name = "m", .kind = NodeKind::matmul, .work = m});
  g.add_edge(site.elementwise, site.collective);
  if (fused) {
    g.add_edge(site.elementwise, site.matmul);
    site.scale = g.add_node({.name = "s", .kind = NodeKind::sync, .work = s});
    g.add_edge(site.collective, *site.scale);
    g.add_edge(site.matmul, *site.scale);
  } else {
    g.add_edge(site.collective, site.matmul);
  }
  g.add_site(site);
  return g;
}

inline opfuse::CostModel unit_rates(double sync = 0) { return {1, 1, 0, 0, sync}; }

}  // namespace testing_helpers
