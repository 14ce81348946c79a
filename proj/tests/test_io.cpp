#include <gtest/gtest.h>

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <limits>

#include "helpers.hpp"
#include "opfuse/io.hpp"

using namespace opfuse;

namespace {

const char* kConfig = R"({
  "block": {"d_model": 8, "n_heads": 2, "seq_len": 4, "mlp_hidden": 12, "variant": "standard-gelu"},
  "cost_model": {"matrix_macs_per_cycle": 256, "vector_elems_per_cycle": 16, "collective_alpha": 8,
                 "collective_beta": 2, "sync_overhead": 4, "calibration": "note"},
  "seed": 42,
  "trials": 3
})";

nlohmann::json base() { return nlohmann::json::parse(kConfig); }

void expect_config_error(const nlohmann::json& j) {
  EXPECT_THROW(parse_run_config(j.dump()), ConfigError) << j.dump();
}

double parse_double(const std::string& s) { return std::strtod(s.c_str(), nullptr); }

std::uint64_t bits(double v) {
  std::uint64_t b;
  std::memcpy(&b, &v, sizeof b);
  return b;
}

// Fewest significant digits printf needs for an exact round trip.
int shortest_digits(double v) {
  char buf[64];
  for (int p = 1; p <= 17; ++p) {
    std::snprintf(buf, sizeof buf, "%.*e", p - 1, v);
    if (bits(std::strtod(buf, nullptr)) == bits(v)) return p;
  }
  return 17;
}

int significant_digits(const std::string& s) {
  const auto mantissa = s.substr(0, s.find('e'));
  std::string digits;
  for (const char c : mantissa)
    if (c >= '0' && c <= '9') digits += c;
  const auto first = digits.find_first_not_of('0');
  if (first == std::string::npos) return 1;
  digits = digits.substr(first);
  // Trailing zeros of an integer mantissa ("1200") are not significant.
  if (mantissa.find('.') == std::string::npos || mantissa.substr(mantissa.find('.')) == ".0") {
    while (digits.size() > 1 && digits.back() == '0') digits.pop_back();
  }
  return static_cast<int>(digits.size());
}

}  // namespace

TEST(RunConfig, ParsesAndDefaults) {
  const auto rc = parse_run_config(kConfig);
  EXPECT_EQ(rc.block, (BlockConfig{8, 2, 4, 12, BlockVariant::standard_gelu, 1e-5}));
  EXPECT_EQ(rc.cost_model, (CostModel{256, 16, 8, 2, 4}));
  EXPECT_EQ(rc.seed, 42u);
  EXPECT_EQ(rc.trials, 3u);
  EXPECT_EQ(rc.tolerance, 1e-10);
  EXPECT_EQ(rc.calibration, "note");
  // The echo parses back to the same config.
  const auto again = parse_run_config(to_json(rc).dump());
  EXPECT_EQ(again.block, rc.block);
  EXPECT_EQ(again.cost_model, rc.cost_model);
}

TEST(RunConfig, RejectsUnknownKeysAtEveryLevel) {
  auto j = base();
  j["extra"] = 1;
  expect_config_error(j);
  j = base();
  j["block"]["dmodel"] = 8;
  expect_config_error(j);
  j = base();
  j["cost_model"]["sync"] = 1;
  expect_config_error(j);
}

TEST(RunConfig, RejectsBadValues) {
  const auto with = [](const char* section, const char* key, nlohmann::json v) {
    auto j = base();
    if (section[0]) j[section][key] = v;
    else j[key] = v;
    return j;
  };
  expect_config_error(with("block", "d_model", 8.0));
  expect_config_error(with("block", "d_model", -8));
  expect_config_error(with("block", "d_model", 9));  // not divisible by 2 heads
  expect_config_error(with("block", "n_heads", 0));
  expect_config_error(with("block", "variant", "gpt"));
  expect_config_error(with("block", "epsilon_ln", 0.0));
  expect_config_error(with("cost_model", "matrix_macs_per_cycle", 0));
  expect_config_error(with("cost_model", "collective_alpha", -1));
  expect_config_error(with("cost_model", "calibration", 3));
  expect_config_error(with("", "seed", "42"));
  expect_config_error(with("", "trials", 0));
  expect_config_error(with("", "tolerance", -1e-10));
  auto missing = base();
  missing.erase("seed");
  expect_config_error(missing);
  EXPECT_THROW(parse_run_config("{\"block\": "), ConfigError);
  EXPECT_THROW(parse_run_config("[]"), ConfigError);
  EXPECT_NO_THROW(parse_run_config(with("", "tolerance", 0).dump()));
}

TEST(AppendDouble, ShortestRoundTrip) {
  std::vector<double> values{0.1, 1.0, -0.0, 0.0, 1e300, -2.5e-310, std::numeric_limits<double>::denorm_min(),
                             std::numeric_limits<double>::max(), 1.0 / 3.0, 123456789.0, 5e-324};
  Rng rng(70);
  for (int i = 0; i < 2000; ++i) values.push_back(rng.uniform(-1, 1) * std::pow(10.0, rng.uniform(-30, 30)));
  for (const double v : values) {
    std::string s;
    append_double(s, v);
    EXPECT_EQ(bits(parse_double(s)), bits(v)) << s;
    EXPECT_EQ(bits(nlohmann::json::parse(s).get<double>()), bits(v)) << s;
    EXPECT_EQ(significant_digits(s), shortest_digits(v)) << s;
  }
  std::string s;
  append_double(s, 0.1);
  EXPECT_EQ(s, "0.1");
}

class WeightFiles : public ::testing::TestWithParam<BlockVariant> {
 protected:
  BlockConfig cfg{8, 2, 4, 12, GetParam(), 1e-5};
};

TEST_P(WeightFiles, BlockWeightsRoundTripBitEqual) {
  Rng rng(71);
  const auto w = random_block_weights(cfg, rng);
  const auto text = write_block_weights(cfg, w);
  const auto back = read_block_weights(cfg, text);
  EXPECT_EQ(back.w_q, w.w_q);
  EXPECT_EQ(back.w_o, w.w_o);
  EXPECT_EQ(write_block_weights(cfg, back), text);
  const auto x = rng.matrix(4, 8, -1, 1);
  EXPECT_EQ(run_conventional(cfg, back, x), run_conventional(cfg, w, x));
}

TEST_P(WeightFiles, FoldedWeightsRoundTripAndRunBitEqual) {
  Rng rng(72);
  const auto fw = fold_block(cfg, random_block_weights(cfg, rng));
  const auto text = write_folded_weights(cfg, fw);
  const auto back = read_folded_weights(cfg, text);
  EXPECT_EQ(write_folded_weights(cfg, back), text);
  for (int trial = 0; trial < 5; ++trial) {
    const auto x = rng.matrix(1 + trial, 8, -2, 2);
    EXPECT_EQ(run_fused_folded(cfg, back, x), run_fused_folded(cfg, fw, x));
  }
}

TEST_P(WeightFiles, RejectsMismatches) {
  Rng rng(73);
  const auto text = write_block_weights(cfg, random_block_weights(cfg, rng));
  auto wider = cfg;
  wider.d_model = 16;
  EXPECT_THROW(read_block_weights(wider, text), ConfigError);
  auto other = cfg;
  other.variant = cfg.variant == BlockVariant::llama_swiglu ? BlockVariant::standard_gelu : BlockVariant::llama_swiglu;
  EXPECT_THROW(read_block_weights(other, text), ConfigError);
  EXPECT_THROW(read_folded_weights(cfg, text), ConfigError);

  auto j = nlohmann::json::parse(text);
  j["tensors"]["bonus"] = {{"shape", {1}}, {"data", {1.0}}};
  EXPECT_THROW(read_block_weights(cfg, j.dump()), ConfigError);
  j = nlohmann::json::parse(text);
  j["tensors"].erase("w_q");
  EXPECT_THROW(read_block_weights(cfg, j.dump()), ConfigError);
  j = nlohmann::json::parse(text);
  j["tensors"]["w_k"]["shape"] = {8, 7};
  EXPECT_THROW(read_block_weights(cfg, j.dump()), ConfigError);
  j = nlohmann::json::parse(text);
  j["tensors"]["w_k"]["data"].erase(0);
  EXPECT_THROW(read_block_weights(cfg, j.dump()), ConfigError);
  j = nlohmann::json::parse(text);
  j["tensors"]["w_k"]["data"][0] = "x";
  EXPECT_THROW(read_block_weights(cfg, j.dump()), ConfigError);
}

INSTANTIATE_TEST_SUITE_P(Variants, WeightFiles,
                         ::testing::Values(BlockVariant::standard_gelu, BlockVariant::llama_swiglu));

TEST(WeightFiles, IdentityGammaZeroBetaFoldsToCenteredWeights) {
  const BlockConfig cfg{4, 1, 2, 3, BlockVariant::standard_gelu, 1e-5};
  Rng rng(74);
  auto w = random_block_weights(cfg, rng);
  auto& p = std::get<StandardBlockParams>(w.params);
  p.ln1 = {RowVector::filled(4, 1.0), RowVector::zeros(4), 1e-5};
  p.ln2 = p.ln1;
  const auto back = read_folded_weights(cfg, write_folded_weights(cfg, fold_block(cfg, w)));
  const auto& fp = std::get<FusedStandardParams>(back.params);
  const auto centered = [](const Matrix& f) {
    oracle::Mat c{f.rows(), f.cols(), oracle::Vec(f.rows() * f.cols())};
    for (std::size_t j = 0; j < f.cols(); ++j) {
      long double mean = 0;
      for (std::size_t i = 0; i < f.rows(); ++i) mean += f(i, j);
      mean /= f.rows();
      for (std::size_t i = 0; i < f.rows(); ++i) c.at(i, j) = static_cast<double>(f(i, j) - mean);
    }
    return c;
  };
  EXPECT_LE(oracle::max_row_rel_err(testing_helpers::to_mat(fp.q.folded_weight), centered(w.w_q)), 1e-15);
  EXPECT_LE(oracle::max_row_rel_err(testing_helpers::to_mat(fp.fc1.folded_weight), centered(p.fc1)), 1e-15);
  for (const double b : fp.q.folded_bias.values()) EXPECT_EQ(b, 0.0);
}

TEST(Timeline, CsvAndJson) {
  const BlockConfig cfg{8, 2, 4, 12, BlockVariant::llama_swiglu, 1e-5};
  const CostModel cm{256, 16, 8, 2, 4};
  const auto g = build_graph(cfg, true);
  const auto t = schedule(g, cm);
  const auto csv = timeline_to_csv(g, t);
  EXPECT_EQ(csv.rfind("node_id,kind,engine,start_cycle,end_cycle\n", 0), 0u);
  EXPECT_EQ(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')), g.size() + 1);
  const auto first = "0,elementwise,vector,0," + std::to_string(t.at(0).end) + "\n";
  EXPECT_NE(csv.find(first), std::string::npos);
  const auto j = timeline_to_json(g, t);
  EXPECT_EQ(j["total"].get<Cycles>(), t.total);
  EXPECT_EQ(j["entries"].size(), g.size());
  EXPECT_EQ(j["entries"][2]["kind"], "matmul");
}
