#include <gtest/gtest.h>

#include <atomic>
#include <filesystem>
#include <fstream>

#include "helpers.hpp"
#include "opfuse/commands.hpp"

using namespace opfuse;
namespace fs = std::filesystem;

namespace {

const std::string kRoot = OPFUSE_SOURCE_DIR;
const std::string kDefault = kRoot + "/configs/default.json";
const std::string kSmall = kRoot + "/configs/small.json";

class Commands : public ::testing::Test {
 protected:
  void SetUp() override {
    static std::atomic<int> counter{0};
    dir_ = fs::temp_directory_path() /
           ("opfuse_cmd_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  // configs/small.json with `edit` applied, written to a temp file.
  std::string config(const std::function<void(nlohmann::json&)>& edit = {}) {
    auto j = nlohmann::json::parse(detail::read_file(kSmall));
    if (edit) edit(j);
    const auto p = path("config" + std::to_string(configs_++) + ".json");
    detail::write_file(p, j.dump(2));
    return p;
  }

  fs::path dir_;
  int configs_ = 0;
};

nlohmann::json report(const CommandResult& r) { return nlohmann::json::parse(r.report); }

}  // namespace

TEST_F(Commands, VerifyDefaultConfigPasses) {
  const auto r = cmd_verify(kDefault);
  ASSERT_EQ(r.exit_code, kExitOk) << r.report;
  const auto j = report(r);
  EXPECT_EQ(j["schema_version"], "1.0");
  EXPECT_EQ(j["seed"], 42);
  ASSERT_EQ(j["equivalence"]["sites"].size(), 4u);
  for (const auto& s : j["equivalence"]["sites"]) {
    EXPECT_LE(s["max_rel_err"].get<double>(), 1e-10) << s["site"];
    EXPECT_GE(s["max_rel_err"].get<double>(), 0.0);
    EXPECT_TRUE(s["pass"].get<bool>());
  }
}

TEST_F(Commands, VerifyToleranceZeroIsANumericalFailure) {
  const auto r = cmd_verify(config([](auto& j) { j["tolerance"] = 0; }));
  EXPECT_EQ(r.exit_code, kExitNumerical);
  EXPECT_FALSE(report(r)["equivalence"]["pass"].get<bool>());
}

TEST_F(Commands, ConfigErrorsExitTwo) {
  EXPECT_EQ(cmd_verify(config([](auto& j) { j["block"]["n_heads"] = 3; })).exit_code, kExitUsage);
  EXPECT_EQ(cmd_verify(config([](auto& j) { j["unknown"] = true; })).exit_code, kExitUsage);
  EXPECT_EQ(cmd_simulate(config([](auto& j) { j["cost_model"]["vector_elems_per_cycle"] = 0; })).exit_code,
            kExitUsage);
  EXPECT_EQ(cmd_verify(path("missing.json")).exit_code, kExitUsage);
  detail::write_file(path("bad.json"), "{ not json");
  const auto r = cmd_simulate(path("bad.json"));
  EXPECT_EQ(r.exit_code, kExitUsage);
  EXPECT_TRUE(r.report.empty());
  ASSERT_FALSE(r.messages.empty());
}

TEST_F(Commands, RepeatedRunsAreByteIdentical) {
  EXPECT_EQ(cmd_verify(kSmall).report, cmd_verify(kSmall).report);
  EXPECT_EQ(cmd_simulate(kDefault).report, cmd_simulate(kDefault).report);
  const SimulateOptions with_timeline{SimMode::both, std::nullopt, true};
  EXPECT_EQ(cmd_simulate(kSmall, with_timeline).report, cmd_simulate(kSmall, with_timeline).report);
}

TEST_F(Commands, SeedOverride) {
  const auto a = report(cmd_verify(kSmall, {7}));
  const auto b = report(cmd_verify(kSmall, {8}));
  EXPECT_EQ(a["seed"], 7);
  EXPECT_EQ(b["seed"], 8);
  EXPECT_EQ(a["config"]["seed"], 7);
  EXPECT_NE(a["equivalence"]["sites"], b["equivalence"]["sites"]);
}

TEST_F(Commands, SimulateDefaultLandsInBand) {
  const auto j = report(cmd_simulate(kDefault));
  const double s = j["latency"]["speedup_percent"].get<double>();
  EXPECT_GE(s, 15.0);
  EXPECT_LE(s, 20.0);
  std::int64_t hidden = 0;
  for (const auto& site : j["latency"]["per_site_savings"]) hidden += site["hidden_cycles"].get<std::int64_t>();
  EXPECT_EQ(hidden, j["latency"]["conventional_total"].get<std::int64_t>() -
                        j["latency"]["fused_total"].get<std::int64_t>());
}

TEST_F(Commands, FreeCollectivesGiveNoSpeedup) {
  const auto cfg = config([](auto& j) {
    j = nlohmann::json::parse(detail::read_file(kDefault));
    j["cost_model"]["collective_alpha"] = 0;
    j["cost_model"]["collective_beta"] = 0;
    j["cost_model"]["vector_elems_per_cycle"] = 1e18;
  });
  // Only the cross-engine hand-offs of the fused sites remain; against a
  // ~1e8-cycle block they are a few thousandths of a percent.
  const auto s = report(cmd_simulate(cfg))["latency"]["speedup_percent"].get<double>();
  EXPECT_NEAR(s, 0.0, 1e-2);
}

TEST_F(Commands, SimulateModesAndCsv) {
  const auto fused = report(cmd_simulate(kSmall, {SimMode::fused, path("f.csv"), false}));
  EXPECT_TRUE(fused["latency"].contains("fused_total"));
  EXPECT_FALSE(fused["latency"].contains("conventional_total"));
  EXPECT_TRUE(fs::exists(path("f.csv")));

  const auto conv = report(cmd_simulate(kSmall, {SimMode::conventional, std::nullopt, false}));
  EXPECT_FALSE(conv["latency"].contains("fused_total"));

  const auto both = report(cmd_simulate(kSmall, {SimMode::both, path("t.csv"), true}));
  EXPECT_EQ(both["latency"]["fused_total"], fused["latency"]["fused_total"]);
  EXPECT_EQ(both["latency"]["conventional_total"], conv["latency"]["conventional_total"]);
  EXPECT_EQ(both["timelines"]["fused"]["total"], fused["latency"]["fused_total"]);
  const auto fused_csv = detail::read_file(path("t.fused.csv"));
  EXPECT_EQ(fused_csv, detail::read_file(path("f.csv")));
  EXPECT_EQ(detail::read_file(path("t.conventional.csv")).rfind("node_id,kind,engine,start_cycle,end_cycle\n", 0),
            0u);
}

TEST_F(Commands, FoldIsIdempotentAndRoundTrips) {
  for (const char* variant : {"standard-gelu", "llama-swiglu"}) {
    const auto cfg_path = config([&](auto& j) { j["block"]["variant"] = variant; });
    ASSERT_EQ(cmd_gen_weights(cfg_path, path("w.json")).exit_code, kExitOk);
    ASSERT_EQ(cmd_fold(cfg_path, path("w.json"), path("f1.json")).exit_code, kExitOk);
    ASSERT_EQ(cmd_fold(cfg_path, path("w.json"), path("f2.json")).exit_code, kExitOk);
    EXPECT_EQ(detail::read_file(path("f1.json")), detail::read_file(path("f2.json")));

    const auto rc = load_run_config(cfg_path);
    const auto w = read_block_weights(rc.block, detail::read_file(path("w.json")));
    const auto loaded = read_folded_weights(rc.block, detail::read_file(path("f1.json")));
    Rng rng(80);
    const auto x = rng.matrix(rc.block.seq_len, rc.block.d_model, -1, 1);
    EXPECT_EQ(run_fused_folded(rc.block, loaded, x), run_fused(rc.block, w, x)) << variant;
  }
}

TEST_F(Commands, FoldRejectsMismatchedWeights) {
  const auto small = config();
  const auto wide = config([](auto& j) { j["block"]["d_model"] = 128; });
  ASSERT_EQ(cmd_gen_weights(small, path("w.json")).exit_code, kExitOk);
  EXPECT_EQ(cmd_fold(wide, path("w.json"), path("f.json")).exit_code, kExitUsage);
  EXPECT_FALSE(fs::exists(path("f.json")));
  EXPECT_EQ(cmd_fold(small, path("nope.json"), path("f.json")).exit_code, kExitUsage);
}

TEST_F(Commands, GenWeightsIsSeeded) {
  const auto cfg = config();
  cmd_gen_weights(cfg, path("a.json"));
  cmd_gen_weights(cfg, path("b.json"));
  cmd_gen_weights(cfg, path("c.json"), {99});
  EXPECT_EQ(detail::read_file(path("a.json")), detail::read_file(path("b.json")));
  EXPECT_NE(detail::read_file(path("a.json")), detail::read_file(path("c.json")));
}

TEST(VerificationBlock, ScalesDownLargeConfigs) {
  const auto p = detail::verification_block({4096, 32, 2048, 11008, BlockVariant::llama_swiglu, 1e-5});
  EXPECT_EQ(p.d_model, 256u);
  EXPECT_EQ(p.n_heads, 32u);
  EXPECT_EQ(p.seq_len, 32u);
  EXPECT_EQ(p.mlp_hidden, 688u);
  const auto q = detail::verification_block({600, 24, 8, 100, BlockVariant::standard_gelu, 1e-5});
  EXPECT_EQ(q.d_model, 256u);
  EXPECT_EQ(q.n_heads, 16u);
  EXPECT_EQ(q.seq_len, 8u);
  EXPECT_EQ(q.mlp_hidden, 42u);
  const BlockConfig small{64, 4, 16, 128, BlockVariant::standard_gelu, 1e-5};
  EXPECT_EQ(detail::verification_block(small), small);
}
