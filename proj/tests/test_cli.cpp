#include <pointfix/report_io.hpp>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <cstdlib>
#include <filesystem>
#include <map>

namespace fs = std::filesystem;
using pointfix::parse_csv;
using pointfix::read_text;
using pointfix::write_text;

namespace {

struct Result {
  int status = 0;
  std::string out;
};

class Cli : public ::testing::Test {
 protected:
  fs::path root;

  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    root = fs::temp_directory_path() / ("pointfix_cli_" + std::string(info->name()));
    fs::remove_all(root);
    fs::create_directories(root);
    write_text((root / "tiny.json").string(), tiny_config().dump(2));
  }
  void TearDown() override { fs::remove_all(root); }

  static nlohmann::json tiny_config() {
    return {{"record_timing", false},
            {"data",
             {{"generator", {{"height", 16}, {"width", 32}, {"objects_max", 2}, {"size_min", 3}, {"size_max", 6}}},
              {"source_sequences", 2},
              {"source_length", 2},
              {"target_sequences", 3},
              {"target_length", 3},
              {"target_environments", 2}}},
            {"pretrain", {{"steps", 2}, {"batch_size", 2}, {"crop_height", 16}, {"crop_width", 32}}},
            {"train", {{"iterations", 4}, {"batch_size", 2}, {"crop_height", 16}, {"crop_width", 32}}},
            {"eval", {{"protocols", {"short", "mid"}}}}};
  }

  // Runs the CLI with the run and data directories inside the test root.
  Result run(const std::string& args, const std::string& data = "data") const {
    const fs::path log = root / "stdout.txt";
    const std::string cmd = std::string(POINTFIX_CLI_PATH) + " " + args + " --runs-dir " + (root / "runs").string() +
                            " --data-dir " + (root / data).string() + " > " + log.string() + " 2>&1";
    Result r;
    r.status = std::system(cmd.c_str());
    r.out = fs::exists(log) ? read_text(log.string()) : "";
    return r;
  }
  std::string cfg() const { return "--config " + (root / "tiny.json").string(); }
  fs::path run_dir(const std::string& name) const { return root / "runs" / name; }
};

std::map<std::string, std::string> tree(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = read_text(e.path().string());
  return files;
}

}  // namespace

TEST_F(Cli, GenerateWritesManifestAndIsReproducible) {
  const auto a = run("generate " + cfg());
  ASSERT_EQ(a.status, 0) << a.out;
  const auto manifest = nlohmann::json::parse(read_text((root / "data" / "manifest.json").string()));
  EXPECT_EQ(manifest["sequences"].size(), 5u);
  const auto first = tree(root / "data");
  std::size_t pngs = 0;
  for (const auto& [name, bytes] : first) pngs += fs::path(name).extension() == ".png";
  EXPECT_EQ(pngs, 3u * (2 * 2 + 3 * 3));

  const auto again = run("generate " + cfg());
  ASSERT_EQ(again.status, 0);
  EXPECT_NE(again.out.find("up to date"), std::string::npos) << again.out;

  const auto forced = run("generate --force " + cfg());
  ASSERT_EQ(forced.status, 0) << forced.out;
  EXPECT_EQ(tree(root / "data"), first);
}

TEST_F(Cli, GenerateRefusesConfigMismatchWithoutForce) {
  ASSERT_EQ(run("generate " + cfg()).status, 0);
  const auto bad = run("generate " + cfg() + " --seed 9");
  EXPECT_NE(bad.status, 0);
  EXPECT_NE(bad.out.find("--force"), std::string::npos) << bad.out;
  EXPECT_EQ(run("generate --force " + cfg() + " --seed 9").status, 0);
}

TEST_F(Cli, TrainWritesOneLogRowPerIteration) {
  const auto t = run("train --name r " + cfg());
  ASSERT_EQ(t.status, 0) << t.out;
  const fs::path r = run_dir("r");
  const auto log = parse_csv(read_text((r / "logs" / "train.csv").string()));
  EXPECT_EQ(log.numbers("iter"), (std::vector<double>{0, 1, 2, 3}));
  EXPECT_EQ(log.numbers("seconds"), (std::vector<double>{0, 0, 0, 0}));
  EXPECT_TRUE(fs::exists(r / "checkpoints" / "final.pfx"));
  EXPECT_TRUE(fs::exists(r / "checkpoints" / "pretrain.pfx"));
  EXPECT_TRUE(fs::exists(r / "config.json"));
}

TEST_F(Cli, ResumeContinuesWithIdenticalLosses) {
  ASSERT_EQ(run("train --name full " + cfg()).status, 0);
  ASSERT_EQ(run("train --name part " + cfg() + " --iterations 2").status, 0);
  const auto res = run("train --name part --resume --iterations 4");
  ASSERT_EQ(res.status, 0) << res.out;
  EXPECT_NE(res.out.find("resuming at iteration 2"), std::string::npos) << res.out;
  EXPECT_EQ(read_text((run_dir("part") / "logs" / "train.csv").string()),
            read_text((run_dir("full") / "logs" / "train.csv").string()));
  // A changed training config must not resume silently.
  EXPECT_NE(run("train --name part --resume --set train.alpha=0.5").status, 0);
}

TEST_F(Cli, EvaluateIsDeterministicAndWritesTables) {
  ASSERT_EQ(run("train --name e " + cfg()).status, 0);
  ASSERT_EQ(run("evaluate --name e").status, 0);
  const fs::path reports = run_dir("e") / "reports";
  const auto first = tree(reports);
  const auto second = run("evaluate --name e");
  ASSERT_EQ(second.status, 0) << second.out;
  EXPECT_EQ(tree(reports), first);

  const auto shrt = parse_csv(read_text((reports / "short.csv").string()));
  ASSERT_EQ(shrt.rows.size(), 3u);
  EXPECT_EQ(shrt.rows[0][0], "none");
  EXPECT_EQ(shrt.header.size(), 1 + 2 * 3 + 2u);
  const auto mid = parse_csv(read_text((reports / "mid.csv").string()));
  EXPECT_TRUE(mid.has_column("env0_d1_all") && mid.has_column("env1_d1_all"));
  EXPECT_FALSE(fs::exists(reports / "long.csv"));
  const auto trace = parse_csv(read_text((reports / "trace_short_full_tgt0.csv").string()));
  EXPECT_EQ(trace.rows.size(), 3u);
}

TEST_F(Cli, PlotDrawsOneCurvePerCsv) {
  const fs::path a = root / "a.csv", b = root / "b.csv", empty = root / "empty.csv";
  write_text(a.string(), "frame,d1_all\n0,10\n1,8\n2,7\n");
  write_text(b.string(), "frame,d1_all\n0,12\n1,12\n");
  write_text(empty.string(), "frame,d1_all\n");
  const fs::path svg = root / "out.svg";
  ASSERT_EQ(run("plot " + a.string() + " " + b.string() + " -o " + svg.string()).status, 0);
  const std::string s = read_text(svg.string());
  std::size_t n = 0;
  for (auto p = s.find("<polyline"); p != std::string::npos; p = s.find("<polyline", p + 1)) ++n;
  EXPECT_EQ(n, 2u);
  EXPECT_NE(run("plot " + empty.string() + " -o " + svg.string()).status, 0);
  EXPECT_NE(run("plot --name nothing_here").status, 0);
  EXPECT_NE(run("plot " + a.string() + " --y nope -o " + svg.string()).status, 0);
}

TEST_F(Cli, FlagsOverrideSetOverridesConfigFile) {
  const auto r = run("generate --name p " + cfg() + " --set seed=5 --seed 7");
  ASSERT_EQ(r.status, 0) << r.out;
  const std::string sets = " --set seed=5 train.iterations=1 pretrain.steps=3";
  ASSERT_EQ(run("train --name p " + cfg() + sets + " --seed 7 --iterations 2").status, 0);
  const auto stored = nlohmann::json::parse(read_text((run_dir("p") / "config.json").string()));
  EXPECT_EQ(stored["seed"], 7);
  EXPECT_EQ(stored["train"]["iterations"], 2);
  EXPECT_EQ(stored["data"]["target_length"], 3);
  EXPECT_EQ(stored["pretrain"]["steps"], 3);
  EXPECT_EQ(stored["pretrain"]["batch_size"], 2);
}

TEST_F(Cli, ErrorsExitNonZero) {
  EXPECT_NE(run("train " + cfg() + " --set train.no_such_key=1").status, 0);
  EXPECT_NE(run("evaluate --name missing " + cfg()).status, 0);
  EXPECT_NE(run("frobnicate").status, 0);
  EXPECT_NE(run("generate --set broken").status, 0);
}
