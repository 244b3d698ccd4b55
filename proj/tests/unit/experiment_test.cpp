#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "fraclt/experiment.hpp"

using namespace fraclt;
namespace fs = std::filesystem;

namespace {

ExperimentConfig sweep_config() {
  ExperimentConfig c;
  c.command = "iepsilon-sweep";
  c.spec = "1,1,1/2,1/2,4";
  c.seed = 42;
  c.eps_min = 1e-8;
  c.eps_max = 0.1;
  c.replications = 3;
  c.grid = {32, 48};
  c.tolerances = {{"exponent", 0.07}};
  return c;
}

std::string field_of(const ExperimentConfig& c) {
  try {
    resolve(c);
  } catch (const ConfigError& e) {
    return e.field();
  }
  return "<none>";
}

fs::path scratch_dir(const char* name) {
  const fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST(Config, RoundTripsThroughJson) {
  const ExperimentConfig c = resolve(sweep_config());
  EXPECT_EQ(config_from_json(nlohmann::json::parse(to_json(c).dump())), c);
  ExperimentConfig odd = sweep_config();
  odd.scales = {0.1, 1.0 / 3.0, 7e-300};
  odd.pair_cap = (std::uint64_t{1} << 63) + 5;
  EXPECT_EQ(config_from_json(nlohmann::json::parse(to_json(odd).dump())), odd);
}

TEST(Config, ReadsFiles) {
  const fs::path dir = scratch_dir("fraclt_config_test");
  fs::create_directories(dir);
  std::ofstream(dir / "c.json") << R"({"command": "regime", "spec": "1,1,1/2,1/2,1", "seed": 7})";
  const ExperimentConfig c = read_config((dir / "c.json").string());
  EXPECT_EQ(c.command, "regime");
  EXPECT_EQ(c.seed, 7u);
  std::ofstream(dir / "bad.json") << "{ not json";
  EXPECT_THROW(read_config((dir / "bad.json").string()), ConfigError);
  EXPECT_THROW(read_config((dir / "missing.json").string()), ConfigError);
  fs::remove_all(dir);
}

TEST(Config, UnknownAndMistypedFieldsNameTheirPath) {
  try {
    config_from_json({{"command", "regime"}, {"spce", "1,1,1/2,1/2,1"}});
    FAIL() << "unknown key accepted";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "spce");
    EXPECT_EQ(e.diagnostics().at("field"), "spce");
    EXPECT_EQ(e.diagnostics().at("error"), "invalid configuration");
  }
  try {
    config_from_json({{"command", "regime"}, {"seed", "seven"}});
    FAIL() << "mistyped seed accepted";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "seed");
  }
}

TEST(Config, ResolveFillsCommandDefaults) {
  ExperimentConfig c;
  c.command = "iepsilon-sweep";
  c.spec = "1,1,1/2,1/2,3";
  const ExperimentConfig r = resolve(c);
  EXPECT_EQ(*r.eps_points, 13);
  EXPECT_DOUBLE_EQ(*r.eps_min, 1e-8);
  EXPECT_EQ(r.grid, (std::vector<int>{64, 64}));
  EXPECT_DOUBLE_EQ(r.tolerances.at("exponent"), 0.05);
  EXPECT_EQ(resolve(r), r);

  c.command = "simulate";
  c.spec = "2,1,0.5,0.5,1";
  EXPECT_EQ(resolve(c).grid, (std::vector<int>{64, 1025}));
  c.command = "dim-m2";
  EXPECT_EQ(*resolve(c).replications, 8);
  c.command = "verify";
  c.spec.clear();
  EXPECT_NO_THROW(resolve(c));
  EXPECT_DOUBLE_EQ(resolve(sweep_config()).tolerances.at("exponent"), 0.07);
}

TEST(Config, ValidationErrorsCarryFieldPaths) {
  ExperimentConfig c = sweep_config();
  c.command = "nonsense";
  EXPECT_EQ(field_of(c), "command");
  c = sweep_config();
  c.spec = "1,1,1.5,0.5,1";
  EXPECT_EQ(field_of(c), "spec");
  c.spec.clear();
  EXPECT_EQ(field_of(c), "spec");
  c = sweep_config();
  c.eps_max = 1e-9;
  EXPECT_EQ(field_of(c), "eps_max");
  c = sweep_config();
  c.grid = {1};
  EXPECT_EQ(field_of(c), "grid");
  c = sweep_config();
  c.scales = {2.0, -1.0};
  EXPECT_EQ(field_of(c), "scales[1]");
  c = sweep_config();
  c.tolerances["exponent"] = -1.0;
  EXPECT_EQ(field_of(c), "tolerances.exponent");
  c = sweep_config();
  c.replications = -2;
  EXPECT_EQ(field_of(c), "replications");
}

TEST(Hashing, KnownDigestAndOutputRootExcluded) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  ExperimentConfig a = resolve(sweep_config());
  ExperimentConfig b = a;
  b.out = "elsewhere";
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16u);
  b.seed = 43;
  EXPECT_NE(config_hash(a), config_hash(b));
  EXPECT_EQ(run_directory(a), fs::path("runs") / ("iepsilon-sweep-" + config_hash(a)));
}

TEST(RunDirectory, RefusesToOverwriteWithoutTheFlag) {
  ExperimentConfig c = resolve(sweep_config());
  c.out = scratch_dir("fraclt_rundir_test").string();
  const fs::path dir = prepare_run_directory(c, false);
  std::ofstream(dir / "b.csv") << "x\n1\n";
  std::ofstream(dir / "a.csv") << "abc";
  try {
    prepare_run_directory(c, false);
    FAIL() << "existing run directory was reused";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "out");
  }
  EXPECT_TRUE(fs::exists(dir / "b.csv"));
  const auto files = manifest(dir, "b.csv");
  ASSERT_EQ(files.size(), 1u);
  EXPECT_EQ(files[0].file, "a.csv");
  EXPECT_EQ(files[0].bytes, 3u);
  EXPECT_EQ(files[0].sha256, sha256_hex("abc"));
  prepare_run_directory(c, true);
  EXPECT_TRUE(fs::is_empty(dir));
  fs::remove_all(c.out);
}

TEST(RunRecord, JsonCarriesConfigVerdictsAndManifest) {
  RunRecord r;
  r.config = resolve(sweep_config());
  r.verdicts.push_back({"exponent", 0.51, 0.05, true, {}});
  r.files.push_back({"sweep.csv", 10, "00"});
  nlohmann::json j = to_json(r);
  EXPECT_EQ(j.at("config_hash"), config_hash(r.config));
  EXPECT_EQ(j.at("version"), kToolVersion);
  EXPECT_TRUE(j.at("passed").get<bool>());
  EXPECT_EQ(j.at("files").size(), 1u);
  r.verdicts.push_back({"log_r2", 0.5, 0.99, false, {}});
  EXPECT_FALSE(r.passed());
}
