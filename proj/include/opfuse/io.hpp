#pragma once

// JSON run configs, weight files, reports and timeline export.
//
// Weight files carry a shape header per tensor and the values in row-major
// order, each written as the shortest decimal that parses back to the same
// double.

#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "opfuse/block.hpp"
#include "opfuse/error.hpp"
#include "opfuse/graph.hpp"
#include "opfuse/simulator.hpp"
#include "opfuse/tensor.hpp"

namespace opfuse {

inline constexpr std::string_view kReportSchemaVersion = "1.0";
inline constexpr std::string_view kWeightFormat = "opfuse-weights";
inline constexpr int kWeightFormatVersion = 1;

struct RunConfig {
  BlockConfig block;
  CostModel cost_model;
  std::uint64_t seed = 0;
  std::size_t trials = 1;
  double tolerance = 1e-10;
  std::string calibration;  // free-text note carried in cost_model

  void validate() const {
    block.validate();
    cost_model.validate();
    if (trials < 1) throw ConfigError("trials must be >= 1");
    // 0 is allowed and simply cannot be met; negative is meaningless.
    if (!std::isfinite(tolerance) || tolerance < 0) throw ConfigError("tolerance must be finite and >= 0");
  }
};

namespace detail {

using json = nlohmann::json;

inline void reject_unknown_keys(const json& obj, std::string_view where, std::initializer_list<std::string_view> allowed) {
  if (!obj.is_object()) throw ConfigError(std::string(where) + ": expected an object");
  for (const auto& [key, _] : obj.items()) {
    bool known = false;
    for (const auto a : allowed) known = known || key == a;
    if (!known) throw ConfigError(std::string(where) + ": unknown key '" + key + "'");
  }
}

inline const json& field(const json& obj, std::string_view where, const char* key) {
  const auto it = obj.find(key);
  if (it == obj.end()) throw ConfigError(std::string(where) + ": missing key '" + key + "'");
  return *it;
}

inline std::uint64_t get_uint(const json& obj, std::string_view where, const char* key) {
  const auto& v = field(obj, where, key);
  if (!v.is_number_unsigned()) throw ConfigError(std::string(where) + "." + key + ": expected a non-negative integer");
  return v.get<std::uint64_t>();
}

inline double get_number(const json& obj, std::string_view where, const char* key) {
  const auto& v = field(obj, where, key);
  if (!v.is_number()) throw ConfigError(std::string(where) + "." + key + ": expected a number");
  return v.get<double>();
}

inline std::string get_string(const json& obj, std::string_view where, const char* key) {
  const auto& v = field(obj, where, key);
  if (!v.is_string()) throw ConfigError(std::string(where) + "." + key + ": expected a string");
  return v.get<std::string>();
}

inline json parse_json_text(std::string_view text, std::string_view what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string(what) + ": malformed JSON: " + e.what());
  }
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  out << text;
  if (!out.flush()) throw ConfigError("write to '" + path + "' failed");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Run config

inline BlockConfig parse_block_config(const nlohmann::json& j) {
  using namespace detail;
  reject_unknown_keys(j, "block", {"d_model", "n_heads", "seq_len", "mlp_hidden", "variant", "epsilon_ln"});
  BlockConfig b;
  b.d_model = get_uint(j, "block", "d_model");
  b.n_heads = get_uint(j, "block", "n_heads");
  b.seq_len = get_uint(j, "block", "seq_len");
  b.mlp_hidden = get_uint(j, "block", "mlp_hidden");
  b.variant = parse_block_variant(get_string(j, "block", "variant"));
  if (j.contains("epsilon_ln")) b.epsilon_ln = get_number(j, "block", "epsilon_ln");
  b.validate();
  return b;
}

inline CostModel parse_cost_model(const nlohmann::json& j, std::string* calibration = nullptr) {
  using namespace detail;
  reject_unknown_keys(j, "cost_model",
                      {"matrix_macs_per_cycle", "vector_elems_per_cycle", "collective_alpha", "collective_beta",
                       "sync_overhead", "calibration"});
  CostModel cm;
  cm.matrix_macs_per_cycle = get_number(j, "cost_model", "matrix_macs_per_cycle");
  cm.vector_elems_per_cycle = get_number(j, "cost_model", "vector_elems_per_cycle");
  cm.collective_alpha = get_number(j, "cost_model", "collective_alpha");
  cm.collective_beta = get_number(j, "cost_model", "collective_beta");
  cm.sync_overhead = get_number(j, "cost_model", "sync_overhead");
  if (j.contains("calibration")) {
    const auto note = get_string(j, "cost_model", "calibration");
    if (calibration) *calibration = note;
  }
  cm.validate();
  return cm;
}

inline RunConfig parse_run_config(std::string_view text) {
  using namespace detail;
  const auto j = parse_json_text(text, "config");
  reject_unknown_keys(j, "config", {"block", "cost_model", "seed", "trials", "tolerance"});
  RunConfig rc;
  rc.block = parse_block_config(field(j, "config", "block"));
  rc.cost_model = parse_cost_model(field(j, "config", "cost_model"), &rc.calibration);
  rc.seed = get_uint(j, "config", "seed");
  rc.trials = get_uint(j, "config", "trials");
  if (j.contains("tolerance")) rc.tolerance = get_number(j, "config", "tolerance");
  rc.validate();
  return rc;
}

inline RunConfig load_run_config(const std::string& path) { return parse_run_config(detail::read_file(path)); }

inline nlohmann::ordered_json to_json(const BlockConfig& b) {
  return {{"d_model", b.d_model}, {"n_heads", b.n_heads},   {"seq_len", b.seq_len},
          {"mlp_hidden", b.mlp_hidden}, {"variant", to_string(b.variant)}, {"epsilon_ln", b.epsilon_ln}};
}

inline nlohmann::ordered_json to_json(const CostModel& cm, const std::string& calibration = {}) {
  nlohmann::ordered_json j{{"matrix_macs_per_cycle", cm.matrix_macs_per_cycle},
                           {"vector_elems_per_cycle", cm.vector_elems_per_cycle},
                           {"collective_alpha", cm.collective_alpha},
                           {"collective_beta", cm.collective_beta},
                           {"sync_overhead", cm.sync_overhead}};
  if (!calibration.empty()) j["calibration"] = calibration;
  return j;
}

inline nlohmann::ordered_json to_json(const RunConfig& rc) {
  return {{"block", to_json(rc.block)},
          {"cost_model", to_json(rc.cost_model, rc.calibration)},
          {"seed", rc.seed},
          {"trials", rc.trials},
          {"tolerance", rc.tolerance}};
}

// ---------------------------------------------------------------------------
// Weight files

// Shortest decimal that parses back to the same double (fewest significant
// digits; the plain to_chars overload minimizes characters instead and spells
// large integers out in full). Integral values get
// a ".0" so that JSON readers keep them as floats (and keep the sign of -0).
// Tensors only hold finite values, so no inf/nan spelling is needed.
inline void append_double(std::string& out, double v) {
  char buf[32];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general);
  if (ec != std::errc{}) throw InvalidInput("append_double: conversion failed");
  const std::string_view text(buf, static_cast<std::size_t>(end - buf));
  out += text;
  if (text.find_first_of(".e") == std::string_view::npos) out += ".0";
}

// Named tensors in a fixed order. Vectors have a one-element shape.
struct NamedTensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> data;
};

inline NamedTensor named(std::string name, const Matrix& m) {
  return {std::move(name), {m.rows(), m.cols()}, {m.values().begin(), m.values().end()}};
}

inline NamedTensor named(std::string name, const RowVector& v) {
  return {std::move(name), {v.size()}, {v.values().begin(), v.values().end()}};
}

inline std::string write_weight_text(std::string_view kind, const BlockConfig& cfg,
                                     const std::vector<NamedTensor>& tensors) {
  std::string out = "{\n";
  out += "  \"format\": \"" + std::string(kWeightFormat) + "\",\n";
  out += "  \"version\": " + std::to_string(kWeightFormatVersion) + ",\n";
  out += "  \"kind\": \"" + std::string(kind) + "\",\n";
  out += "  \"variant\": \"" + std::string(to_string(cfg.variant)) + "\",\n";
  out += "  \"d_model\": " + std::to_string(cfg.d_model) + ",\n";
  out += "  \"mlp_hidden\": " + std::to_string(cfg.mlp_hidden) + ",\n";
  out += "  \"tensors\": {\n";
  for (std::size_t t = 0; t < tensors.size(); ++t) {
    const auto& nt = tensors[t];
    out += "    \"" + nt.name + "\": {\"shape\": [";
    for (std::size_t i = 0; i < nt.shape.size(); ++i) out += (i ? ", " : "") + std::to_string(nt.shape[i]);
    out += "], \"data\": [";
    for (std::size_t i = 0; i < nt.data.size(); ++i) {
      if (i) out += ", ";
      append_double(out, nt.data[i]);
    }
    out += "]}";
    out += t + 1 < tensors.size() ? ",\n" : "\n";
  }
  out += "  }\n}\n";
  return out;
}

namespace detail {

class WeightReader {
 public:
  WeightReader(std::string_view text, std::string_view kind, const BlockConfig& cfg) {
    const auto j = parse_json_text(text, "weights");
    reject_unknown_keys(j, "weights", {"format", "version", "kind", "variant", "d_model", "mlp_hidden", "tensors"});
    if (get_string(j, "weights", "format") != kWeightFormat) throw ConfigError("weights: unknown format");
    if (get_uint(j, "weights", "version") != static_cast<std::uint64_t>(kWeightFormatVersion))
      throw ConfigError("weights: unsupported version");
    if (get_string(j, "weights", "kind") != kind)
      throw ConfigError("weights: expected kind '" + std::string(kind) + "'");
    if (parse_block_variant(get_string(j, "weights", "variant")) != cfg.variant)
      throw ConfigError("weights: variant does not match the config");
    if (get_uint(j, "weights", "d_model") != cfg.d_model || get_uint(j, "weights", "mlp_hidden") != cfg.mlp_hidden)
      throw ConfigError("weights: dimensions do not match the config");
    tensors_ = field(j, "weights", "tensors");
    if (!tensors_.is_object()) throw ConfigError("weights.tensors: expected an object");
  }

  Matrix matrix(const std::string& name, std::size_t rows, std::size_t cols) {
    return Matrix(rows, cols, values(name, {rows, cols}));
  }

  RowVector vector(const std::string& name, std::size_t n) { return RowVector(values(name, {n})); }

  // Every tensor in the file must have been consumed.
  void finish() const {
    for (const auto& [key, _] : tensors_.items())
      if (!used_.count(key)) throw ConfigError("weights: unexpected tensor '" + key + "'");
  }

 private:
  std::vector<double> values(const std::string& name, const std::vector<std::size_t>& shape) {
    const std::string where = "weights.tensors." + name;
    const auto it = tensors_.find(name);
    if (it == tensors_.end()) throw ConfigError("weights: missing tensor '" + name + "'");
    reject_unknown_keys(*it, where, {"shape", "data"});
    const auto& js = field(*it, where, "shape");
    if (!js.is_array() || js.size() != shape.size()) throw ConfigError(where + ": wrong rank");
    for (std::size_t i = 0; i < shape.size(); ++i)
      if (!js[i].is_number_unsigned() || js[i].get<std::size_t>() != shape[i])
        throw ConfigError(where + ": shape does not match the config");
    const auto& jd = field(*it, where, "data");
    std::size_t count = 1;
    for (const auto s : shape) count *= s;
    if (!jd.is_array() || jd.size() != count) throw ConfigError(where + ": data length does not match shape");
    std::vector<double> out;
    out.reserve(count);
    for (const auto& v : jd) {
      if (!v.is_number()) throw ConfigError(where + ": non-numeric entry");
      out.push_back(v.get<double>());
      if (!std::isfinite(out.back())) throw ConfigError(where + ": non-finite entry");
    }
    used_.insert(name);
    return out;
  }

  nlohmann::json tensors_;
  std::set<std::string> used_;
};

}  // namespace detail

inline std::string write_block_weights(const BlockConfig& cfg, const BlockWeights& w) {
  w.validate(cfg);
  std::vector<NamedTensor> t{named("w_q", w.w_q), named("w_k", w.w_k), named("w_v", w.w_v), named("w_o", w.w_o)};
  if (const auto* p = std::get_if<StandardBlockParams>(&w.params)) {
    t.push_back(named("ln1.gamma", p->ln1.gamma));
    t.push_back(named("ln1.beta", p->ln1.beta));
    t.push_back(named("ln2.gamma", p->ln2.gamma));
    t.push_back(named("ln2.beta", p->ln2.beta));
    t.push_back(named("fc1", p->fc1));
    t.push_back(named("fc2", p->fc2));
  } else {
    const auto& l = std::get<LlamaBlockParams>(w.params);
    t.push_back(named("ln1.gamma", l.ln1.gamma));
    t.push_back(named("ln2.gamma", l.ln2.gamma));
    t.push_back(named("w_gate", l.mlp.w_gate));
    t.push_back(named("w_up", l.mlp.w_up));
    t.push_back(named("w_down", l.mlp.w_down));
  }
  return write_weight_text("block", cfg, t);
}

// Norm epsilons are not stored; they come from cfg.epsilon_ln.
inline BlockWeights read_block_weights(const BlockConfig& cfg, std::string_view text) {
  cfg.validate();
  const std::size_t d = cfg.d_model, h = cfg.mlp_hidden;
  detail::WeightReader r(text, "block", cfg);
  auto w_q = r.matrix("w_q", d, d);
  auto w_k = r.matrix("w_k", d, d);
  auto w_v = r.matrix("w_v", d, d);
  auto w_o = r.matrix("w_o", d, d);
  std::variant<StandardBlockParams, LlamaBlockParams> params = [&]() -> decltype(params) {
    if (cfg.variant == BlockVariant::standard_gelu) {
      LayerNormParams ln1{r.vector("ln1.gamma", d), r.vector("ln1.beta", d), cfg.epsilon_ln};
      LayerNormParams ln2{r.vector("ln2.gamma", d), r.vector("ln2.beta", d), cfg.epsilon_ln};
      auto fc1 = r.matrix("fc1", d, h);
      return StandardBlockParams{std::move(ln1), std::move(ln2), std::move(fc1), r.matrix("fc2", h, d)};
    }
    RmsNormParams ln1{r.vector("ln1.gamma", d), cfg.epsilon_ln};
    RmsNormParams ln2{r.vector("ln2.gamma", d), cfg.epsilon_ln};
    auto gate = r.matrix("w_gate", d, h);
    auto up = r.matrix("w_up", d, h);
    return LlamaBlockParams{std::move(ln1), std::move(ln2),
                            LlamaMlpWeights{std::move(gate), std::move(up), r.matrix("w_down", h, d)}};
  }();
  r.finish();
  BlockWeights w{std::move(w_q), std::move(w_k), std::move(w_v), std::move(w_o), std::move(params)};
  w.validate(cfg);
  return w;
}

inline std::string write_folded_weights(const BlockConfig& cfg, const FusedBlockWeights& fw) {
  validate_fused(cfg, fw);
  std::vector<NamedTensor> t{named("w_o", fw.w_o)};
  if (const auto* p = std::get_if<FusedStandardParams>(&fw.params)) {
    for (const auto& [name, fl] : {std::pair<const char*, const FoldedLinear*>{"q", &p->q}, {"k", &p->k},
                                   {"v", &p->v}, {"fc1", &p->fc1}}) {
      t.push_back(named(std::string(name) + ".folded_weight", fl->folded_weight));
      t.push_back(named(std::string(name) + ".folded_bias", fl->folded_bias));
    }
    t.push_back(named("fc2", p->fc2));
  } else {
    const auto& l = std::get<FusedLlamaParams>(fw.params);
    for (const auto& [name, rf] : {std::pair<const char*, const RmsFoldedLinear*>{"q", &l.q}, {"k", &l.k},
                                   {"v", &l.v}, {"gate", &l.gate}, {"up", &l.up}})
      t.push_back(named(std::string(name) + ".folded_weight", rf->folded_weight));
    t.push_back(named("w_down", l.down));
  }
  return write_weight_text("folded", cfg, t);
}

inline FusedBlockWeights read_folded_weights(const BlockConfig& cfg, std::string_view text) {
  cfg.validate();
  const std::size_t d = cfg.d_model, h = cfg.mlp_hidden;
  const double eps = cfg.epsilon_ln;
  detail::WeightReader r(text, "folded", cfg);
  auto w_o = r.matrix("w_o", d, d);
  std::variant<FusedStandardParams, FusedLlamaParams> params = [&]() -> decltype(params) {
    if (cfg.variant == BlockVariant::standard_gelu) {
      const auto fl = [&](const std::string& name, std::size_t cols) {
        auto w = r.matrix(name + ".folded_weight", d, cols);
        return FoldedLinear{std::move(w), r.vector(name + ".folded_bias", cols)};
      };
      auto q = fl("q", d);
      auto k = fl("k", d);
      auto v = fl("v", d);
      auto fc1 = fl("fc1", h);
      return FusedStandardParams{std::move(q),   std::move(k), std::move(v), std::move(fc1),
                                 r.matrix("fc2", h, d), eps,     eps};
    }
    const auto rf = [&](const std::string& name, std::size_t cols) {
      return RmsFoldedLinear{r.matrix(name + ".folded_weight", d, cols)};
    };
    auto q = rf("q", d);
    auto k = rf("k", d);
    auto v = rf("v", d);
    auto gate = rf("gate", h);
    auto up = rf("up", h);
    return FusedLlamaParams{std::move(q),  std::move(k), std::move(v), std::move(gate), std::move(up),
                            r.matrix("w_down", h, d), eps, eps};
  }();
  r.finish();
  FusedBlockWeights fw{std::move(w_o), std::move(params)};
  validate_fused(cfg, fw);
  return fw;
}

// ---------------------------------------------------------------------------
// Reports and timelines

inline nlohmann::ordered_json to_json(const LatencyReport& r) {
  nlohmann::ordered_json savings = nlohmann::ordered_json::array();
  for (const auto& s : r.per_site_savings) savings.push_back({{"site", s.site}, {"hidden_cycles", s.hidden_cycles}});
  return {{"conventional_total", r.conventional_total},
          {"fused_total", r.fused_total},
          {"per_site_savings", std::move(savings)},
          {"speedup_percent", r.speedup_percent}};
}

inline nlohmann::ordered_json timeline_to_json(const OpGraph& g, const Timeline& t) {
  nlohmann::ordered_json entries = nlohmann::ordered_json::array();
  for (const auto& e : t.entries)
    entries.push_back({{"node_id", e.node_id},
                       {"name", g.node(e.node_id).name},
                       {"kind", to_string(g.node(e.node_id).kind)},
                       {"engine", to_string(e.engine)},
                       {"start_cycle", e.start},
                       {"end_cycle", e.end}});
  return {{"total", t.total}, {"entries", std::move(entries)}};
}

inline std::string timeline_to_csv(const OpGraph& g, const Timeline& t) {
  std::string out = "node_id,kind,engine,start_cycle,end_cycle\n";
  for (const auto& e : t.entries) {
    out += std::to_string(e.node_id) + ',' + std::string(to_string(g.node(e.node_id).kind)) + ',' +
           std::string(to_string(e.engine)) + ',' + std::to_string(e.start) + ',' + std::to_string(e.end) + '\n';
  }
  return out;
}

}  // namespace opfuse
