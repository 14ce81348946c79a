#pragma once

// The CLI subcommands as plain functions. Each returns the exit status, the
// JSON report destined for stdout and human-readable notes for stderr, so
// tests can drive them without spawning a process.
//
// Exit status: 0 success, 1 numerical failure, 2 usage or config error.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "opfuse/block.hpp"
#include "opfuse/fusion.hpp"
#include "opfuse/graph.hpp"
#include "opfuse/io.hpp"
#include "opfuse/norms.hpp"
#include "opfuse/random.hpp"
#include "opfuse/simulator.hpp"

namespace opfuse {

inline constexpr int kExitOk = 0;
inline constexpr int kExitNumerical = 1;
inline constexpr int kExitUsage = 2;

struct CommandResult {
  int exit_code = kExitOk;
  std::string report;                // JSON, newline terminated; empty on usage errors
  std::vector<std::string> messages;  // for stderr
};

enum class SimMode { conventional, fused, both };

inline std::string_view to_string(SimMode m) {
  switch (m) {
    case SimMode::conventional: return "conventional";
    case SimMode::fused: return "fused";
    case SimMode::both: return "both";
  }
  return "?";
}

struct CommonOptions {
  std::optional<std::uint64_t> seed;  // overrides the config's seed
};

namespace detail {

inline nlohmann::ordered_json report_header(std::string_view command, const RunConfig& rc) {
  return {{"schema_version", kReportSchemaVersion}, {"command", command}, {"seed", rc.seed}, {"config", to_json(rc)}};
}

inline std::string dump(const nlohmann::ordered_json& j) { return j.dump(2) + "\n"; }

inline CommandResult usage_error(const std::string& what) { return {kExitUsage, {}, {"error: " + what}}; }

inline RunConfig load_config(const std::string& path, const CommonOptions& opt) {
  auto rc = load_run_config(path);
  if (opt.seed) rc.seed = *opt.seed;
  return rc;
}

// Shape used for the numerical checks. The block is scaled down so that a
// Llama-7B-sized config still verifies in seconds: d_model is capped at 256,
// the head count is the largest divisor of the capped d_model not above the
// configured one, mlp_hidden keeps its ratio to d_model and seq_len is capped
// at 32.
inline BlockConfig verification_block(const BlockConfig& b) {
  b.validate();
  BlockConfig p = b;
  p.d_model = std::min<std::size_t>(b.d_model, 256);
  p.n_heads = 1;
  for (std::size_t h = std::min(b.n_heads, p.d_model); h >= 1; --h)
    if (p.d_model % h == 0) {
      p.n_heads = h;
      break;
    }
  p.mlp_hidden = std::max<std::size_t>(1, b.mlp_hidden * p.d_model / b.d_model);
  p.seq_len = std::min<std::size_t>(b.seq_len, 32);
  return p;
}

struct SiteCheck {
  std::string site;
  double max_rel_err = 0;
};

// Runs `trials` comparisons of one fused path against its conventional form.
inline SiteCheck check_site(std::string site, std::size_t trials, const std::function<double()>& trial) {
  SiteCheck c{std::move(site), 0};
  for (std::size_t t = 0; t < trials; ++t) c.max_rel_err = std::max(c.max_rel_err, trial());
  return c;
}

inline std::vector<SiteCheck> run_equivalence(const RunConfig& rc, const BlockConfig& p) {
  Rng rng(rc.seed);
  const std::size_t n = p.d_model, h = p.mlp_hidden, seq = p.seq_len, dh = p.d_head();
  const double eps = p.epsilon_ln > 0 ? p.epsilon_ln : 1e-5;
  const double a_n = 1.0 / std::sqrt(static_cast<double>(n));
  const double a_h = 1.0 / std::sqrt(static_cast<double>(h));

  std::vector<SiteCheck> out;
  out.push_back(check_site("layernorm_linear", rc.trials, [&] {
    const auto x = rng.row(n, -3, 3);
    const LayerNormParams ln{rng.row(n, 0.5, 1.5), rng.row(n, -0.5, 0.5), eps};
    const auto f = rng.matrix(n, n, -a_n, a_n);
    return relative_error(fused_layernorm_matmul(x, fold_layernorm_linear(ln, f), eps), matmul(layernorm(x, ln), f));
  }));
  out.push_back(check_site("softmax_matmul", rc.trials, [&] {
    const auto logits = rng.row(seq, -10, 10);
    const auto v = rng.matrix(seq, dh, -1, 1);
    return relative_error(fused_softmax_matmul(logits, v), matmul(softmax_stable(logits), v));
  }));
  out.push_back(check_site("rmsnorm_llama_mlp", rc.trials, [&] {
    const auto x = rng.row(n, -3, 3);
    const RmsNormParams rms{rng.row(n, 0.5, 1.5), eps};
    const LlamaMlpWeights mlp{rng.matrix(n, h, -a_n, a_n), rng.matrix(n, h, -a_n, a_n), rng.matrix(h, n, -a_h, a_h)};
    const auto fused = fused_rmsnorm_llama_mlp(x, fold_rmsnorm_linear(rms, mlp.w_gate), fold_rmsnorm_linear(rms, mlp.w_up),
                                               mlp.w_down, eps);
    return relative_error(fused, swiglu_mlp(rmsnorm(x, rms), mlp));
  }));
  out.push_back(check_site("full_block", rc.trials, [&] {
    const auto w = random_block_weights(p, rng);
    const auto x = rng.matrix(seq, n, -1, 1);
    return relative_error(run_fused(p, w, x), run_conventional(p, w, x));
  }));
  return out;
}

inline std::filesystem::path with_suffix(const std::filesystem::path& path, std::string_view tag) {
  auto name = path.stem().string() + "." + std::string(tag) + path.extension().string();
  return path.parent_path() / name;
}

}  // namespace detail

// Randomized fused-vs-conventional comparisons on every fusion site plus a
// whole block, `trials` each.
inline CommandResult cmd_verify(const std::string& config_path, const CommonOptions& opt = {}) {
  RunConfig rc;
  BlockConfig proxy;
  try {
    rc = detail::load_config(config_path, opt);
    proxy = detail::verification_block(rc.block);
  } catch (const std::exception& e) {
    return detail::usage_error(e.what());
  }

  CommandResult result;
  std::vector<detail::SiteCheck> checks;
  try {
    checks = detail::run_equivalence(rc, proxy);
  } catch (const InvalidInput& e) {
    result.exit_code = kExitNumerical;
    result.messages.push_back(std::string("error: numerical failure: ") + e.what());
    return result;
  }

  bool all_pass = true;
  nlohmann::ordered_json sites = nlohmann::ordered_json::array();
  for (const auto& c : checks) {
    const bool pass = std::isfinite(c.max_rel_err) && c.max_rel_err <= rc.tolerance;
    all_pass = all_pass && pass;
    sites.push_back({{"site", c.site}, {"max_rel_err", c.max_rel_err}, {"pass", pass}});
    std::ostringstream line;
    line << (pass ? "ok   " : "FAIL ") << c.site << " max_rel_err=" << c.max_rel_err << " tolerance=" << rc.tolerance;
    result.messages.push_back(line.str());
  }

  auto j = detail::report_header("verify", rc);
  j["equivalence"] = {{"trials", rc.trials},
                      {"tolerance", rc.tolerance},
                      {"checked_block", to_json(proxy)},
                      {"sites", std::move(sites)},
                      {"pass", all_pass}};
  result.report = detail::dump(j);
  result.exit_code = all_pass ? kExitOk : kExitNumerical;
  return result;
}

struct SimulateOptions {
  SimMode mode = SimMode::both;
  std::optional<std::string> csv_path;  // with `both`, one file per graph
  bool include_timeline = false;
};

inline CommandResult cmd_simulate(const std::string& config_path, const SimulateOptions& sim = {},
                                  const CommonOptions& opt = {}) {
  try {
    const auto rc = detail::load_config(config_path, opt);
    const auto& cm = rc.cost_model;
    CommandResult result;
    auto j = detail::report_header("simulate", rc);
    nlohmann::ordered_json latency{{"mode", to_string(sim.mode)}};
    nlohmann::ordered_json timelines = nlohmann::ordered_json::object();

    const auto conv = build_graph(rc.block, false);
    const auto fused = build_graph(rc.block, true);
    std::vector<std::pair<std::string, const OpGraph*>> graphs;
    if (sim.mode != SimMode::fused) graphs.emplace_back("conventional", &conv);
    if (sim.mode != SimMode::conventional) graphs.emplace_back("fused", &fused);

    if (sim.mode == SimMode::both) {
      const auto r = compare(conv, fused, cm);
      const auto summary = to_json(r);
      for (const auto& [k, v] : summary.items()) latency[k] = v;
      std::ostringstream line;
      line << "conventional " << r.conventional_total << " cycles, fused " << r.fused_total << " cycles, speedup "
           << r.speedup_percent << "%";
      result.messages.push_back(line.str());
    }
    for (const auto& [name, g] : graphs) {
      const auto t = schedule(*g, cm);
      if (sim.mode != SimMode::both) {
        latency[name + "_total"] = t.total;
        result.messages.push_back(name + " " + std::to_string(t.total) + " cycles");
      }
      if (sim.include_timeline) timelines[name] = timeline_to_json(*g, t);
      if (sim.csv_path) {
        const auto path = sim.mode == SimMode::both ? detail::with_suffix(*sim.csv_path, name)
                                                    : std::filesystem::path(*sim.csv_path);
        detail::write_file(path.string(), timeline_to_csv(*g, t));
        result.messages.push_back("wrote " + path.string());
      }
    }
    j["latency"] = std::move(latency);
    if (sim.include_timeline) j["timelines"] = std::move(timelines);
    result.report = detail::dump(j);
    return result;
  } catch (const std::exception& e) {
    return detail::usage_error(e.what());
  }
}

// Folds block weights into their fused form and writes them out.
inline CommandResult cmd_fold(const std::string& config_path, const std::string& weights_in,
                              const std::string& weights_out, const CommonOptions& opt = {}) {
  try {
    const auto rc = detail::load_config(config_path, opt);
    const auto w = read_block_weights(rc.block, detail::read_file(weights_in));
    const auto text = write_folded_weights(rc.block, fold_block(rc.block, w));
    detail::write_file(weights_out, text);
    auto j = detail::report_header("fold", rc);
    j["artifact"] = {{"kind", "folded"}, {"path", weights_out}};
    return {kExitOk, detail::dump(j), {"wrote folded weights to " + weights_out}};
  } catch (const std::exception& e) {
    return detail::usage_error(e.what());
  }
}

// Seeded random block weights in the weight-file format.
inline CommandResult cmd_gen_weights(const std::string& config_path, const std::string& weights_out,
                                     const CommonOptions& opt = {}) {
  try {
    const auto rc = detail::load_config(config_path, opt);
    Rng rng(rc.seed);
    detail::write_file(weights_out, write_block_weights(rc.block, random_block_weights(rc.block, rng)));
    auto j = detail::report_header("gen-weights", rc);
    j["artifact"] = {{"kind", "block"}, {"path", weights_out}};
    return {kExitOk, detail::dump(j), {"wrote block weights to " + weights_out}};
  } catch (const std::exception& e) {
    return detail::usage_error(e.what());
  }
}

}  // namespace opfuse
