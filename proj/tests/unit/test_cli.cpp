#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "fixtures.hpp"
#include "search_nne/cli.hpp"

namespace search_nne {
namespace {

struct CliRun {
  int code = 0;
  std::string out, err;
};

CliRun run(std::vector<std::string> args) {
  args.insert(args.begin(), "search_nne");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  CliRun r;
  r.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string write_file(const std::string& name, const std::string& text) {
  const std::string path = testing::tmp_path(name);
  std::ofstream(path) << text;
  return path;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string artifact_path() {
  static const std::string path = [] {
    const std::string p = testing::tmp_path("cli_tiny.art");
    save_artifact(testing::tiny_artifact(), p);
    return p;
  }();
  return path;
}

const char* kSynth = R"({
  "dims": {"d_prod": 2, "d_ads": 0, "d_cons": 1, "J": 9, "n": 500},
  "theta": {"beta": [-0.5, 0.3], "eta": [0.3], "eta0": 3.0, "alpha0": -3.5},
  "seed": 5,
  "units": {"prod_mean": [100, 2], "prod_sd": [20, 0.5], "cons_mean": [40], "cons_sd": [10]}
})";

TEST(Cli, ConfigErrorsExitTwo) {
  const std::string bad_json = write_file("bad.json", "{not json");
  EXPECT_EQ(run({"pretrain", "--config", bad_json, "--out", testing::tmp_path("x.art")}).code, 2);
  const std::string inverted = write_file("inverted.json", R"({"prior": {"J": {"min": 30, "max": 10}}})");
  const CliRun r = run({"pretrain", "--config", inverted, "--out", testing::tmp_path("x.art")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("exceeds"), std::string::npos);
  const std::string unknown = write_file("unknown.json", R"({"exampels": 5})");
  EXPECT_EQ(run({"pretrain", "--config", unknown, "--out", testing::tmp_path("x.art")}).code, 2);
  EXPECT_EQ(run({"estimate"}).code, 2);
  EXPECT_EQ(run({"no-such-command"}).code, 2);
}

TEST(Cli, GenSynthThenEstimateWithBootstrap) {
  const std::string cfg = write_file("synth.json", kSynth);
  const std::string csv = testing::tmp_path("synth.csv");
  ASSERT_EQ(run({"gen-synth", "--config", cfg, "--out", csv}).code, 0);
  const CliRun r = run({"estimate", csv, "--artifact", artifact_path(), "--bootstrap", "4", "--seed", "3"});
  ASSERT_EQ(r.code, 0) << r.err;
  const nlohmann::json j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j.at("splits"), 1);
  EXPECT_EQ(j.at("bootstrap").at("replicates"), 4);
  EXPECT_EQ(j.at("theta_hat").at("beta").size(), 2u);
  const CliRun again = run({"estimate", csv, "--artifact", artifact_path(), "--bootstrap", "4", "--seed", "3"});
  nlohmann::json a = j, b = nlohmann::json::parse(again.out);
  a.erase("seconds");
  b.erase("seconds");
  EXPECT_EQ(a, b);
}

TEST(Cli, CorruptArtifactExitsTwo) {
  std::string bytes = read_file(artifact_path());
  bytes[bytes.size() / 2] ^= 1;
  const std::string bad = testing::tmp_path("corrupt.art");
  std::ofstream(bad, std::ios::binary) << bytes;
  const std::string cfg = write_file("synth2.json", kSynth);
  const std::string csv = testing::tmp_path("synth2.csv");
  ASSERT_EQ(run({"gen-synth", "--config", cfg, "--out", csv}).code, 0);
  EXPECT_EQ(run({"estimate", csv, "--artifact", bad}).code, 2);
  EXPECT_EQ(run({"inspect-artifact", bad}).code, 2);
}

TEST(Cli, BadPanelExitsTwo) {
  const std::string csv = write_file("bad_panel.csv", "consumer_id,product_id,price,y_search,y_buy\n");
  const CliRun r = run({"estimate", csv, "--artifact", artifact_path()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("line 1"), std::string::npos);
}

TEST(Cli, InspectPrintsMetadata) {
  const CliRun r = run({"inspect-artifact", artifact_path()});
  ASSERT_EQ(r.code, 0);
  const nlohmann::json j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j.at("layout").at("total_length"), testing::tiny_artifact().layout.total_length());
}

TEST(Cli, McStudyIsReproducible) {
  const std::string cfg = write_file("mc.json", R"({
    "dims": {"d_prod": 2, "d_ads": 0, "d_cons": 0, "J": 9, "n": 400},
    "theta": {"beta": [-0.5, 0.3], "eta0": 3.0, "alpha0": -3.5},
    "reps": 2,
    "seed": 4
  })");
  auto strip_seconds = [](const std::string& csv) {
    std::istringstream in(csv);
    std::string line, out;
    while (std::getline(in, line)) out += line.substr(0, line.rfind(',')) + "\n";
    return out;
  };
  const std::string a = testing::tmp_path("mc_a.csv"), b = testing::tmp_path("mc_b.csv");
  ASSERT_EQ(run({"mc-study", "--config", cfg, "--artifact", artifact_path(), "--out", a}).code, 0);
  ASSERT_EQ(run({"mc-study", "--config", cfg, "--artifact", artifact_path(), "--out", b}).code, 0);
  EXPECT_EQ(strip_seconds(read_file(a)), strip_seconds(read_file(b)));
  EXPECT_NE(read_file(a).find("nne,beta1"), std::string::npos);
}

}  // namespace
}  // namespace search_nne
