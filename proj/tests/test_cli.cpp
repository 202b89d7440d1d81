#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <map>

#include <json.hpp>

#include "poigraph/io.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
namespace io = poigraph::io;

namespace {

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

Result run(const fs::path& dir, const std::string& args) {
  const auto out = dir / "stdout.txt", err = dir / "stderr.txt";
  const std::string cmd = std::string(POIGRAPH_CLI_PATH) + " " + args + " > '" + out.string() + "' 2> '" +
                          err.string() + "'";
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = io::read_text(out);
  r.err = io::read_text(err);
  fs::remove(out);
  fs::remove(err);
  return r;
}

constexpr const char* kConfig = R"([run]
seed = 7

[paths]
data_dir = data
build_dir = built
output_dir = out

[synthetic]
n_brands = 40
n_states = 2
n_categories = 5
months = 27
sparsity_target = 0.3

[train]
max_epochs = 2
batch_edges = 32

[model]
hidden = 8
depth = 2
)";

fs::path write_config(const fs::path& dir, const std::string& text = kConfig, const std::string& name = "run.ini") {
  fs::create_directories(dir);
  io::write_text(dir / name, text);
  return dir / name;
}

std::string cfg_arg(const fs::path& p) { return "--config '" + p.string() + "'"; }

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = io::read_text(e.path());
  return files;
}

std::size_t line_count(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

// generate + build + train in a fresh directory
fs::path trained(const test::TempDir& t) {
  const auto cfg = write_config(t.path);
  EXPECT_EQ(run(t.path, "generate " + cfg_arg(cfg)).code, 0);
  EXPECT_EQ(run(t.path, "build " + cfg_arg(cfg)).code, 0);
  const auto r = run(t.path, "train " + cfg_arg(cfg));
  EXPECT_EQ(r.code, 0) << r.err;
  return cfg;
}

}  // namespace

TEST(Cli, GenerateIsDeterministicApartFromTimestamp) {
  test::TempDir a, b;
  ASSERT_EQ(run(a.path, "generate " + cfg_arg(write_config(a.path))).code, 0);
  ASSERT_EQ(run(b.path, "generate " + cfg_arg(write_config(b.path))).code, 0);
  auto fa = snapshot(a.path / "data"), fb = snapshot(b.path / "data");
  ASSERT_EQ(fa.size(), 7u);
  auto ma = nlohmann::json::parse(fa.at("manifest.json")), mb = nlohmann::json::parse(fb.at("manifest.json"));
  EXPECT_TRUE(ma.contains("created_at"));
  ma.erase("created_at");
  mb.erase("created_at");
  EXPECT_EQ(ma, mb);
  fa.erase("manifest.json");
  fb.erase("manifest.json");
  EXPECT_EQ(fa, fb);
}

TEST(Cli, GenerateRefusesNonEmptyDirectoryWithoutForce) {
  test::TempDir t;
  const auto cfg = write_config(t.path);
  ASSERT_EQ(run(t.path, "generate " + cfg_arg(cfg)).code, 0);
  const auto again = run(t.path, "generate " + cfg_arg(cfg));
  EXPECT_EQ(again.code, 2);
  EXPECT_NE(again.err.find("--force"), std::string::npos);
  const auto before = io::read_text(t.path / "data" / "covisits.csv");
  EXPECT_EQ(run(t.path, "generate --seed 8 --force " + cfg_arg(cfg)).code, 0);
  EXPECT_NE(io::read_text(t.path / "data" / "covisits.csv"), before);
}

TEST(Cli, MissingSyntheticSectionIsConfigError) {
  test::TempDir t;
  const auto cfg = write_config(t.path, "[run]\nseed = 1\n");
  const auto r = run(t.path, "generate " + cfg_arg(cfg));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("synthetic"), std::string::npos);
}

TEST(Cli, BuildIsDeterministicAndWritesOneGraphPerState) {
  test::TempDir t;
  const auto cfg = write_config(t.path);
  ASSERT_EQ(run(t.path, "generate " + cfg_arg(cfg)).code, 0);
  ASSERT_EQ(run(t.path, "build " + cfg_arg(cfg)).code, 0);
  const auto first = snapshot(t.path / "built");
  ASSERT_EQ(run(t.path, "build " + cfg_arg(cfg)).code, 0);
  EXPECT_EQ(snapshot(t.path / "built"), first);
  EXPECT_EQ(first.size(), 3u);  // two graphs + features.json

  std::string one = kConfig;
  one.replace(one.find("n_states = 2"), 12, "n_states = 1");
  test::TempDir u;
  const auto cfg1 = write_config(u.path, one);
  ASSERT_EQ(run(u.path, "generate " + cfg_arg(cfg1)).code, 0);
  ASSERT_EQ(run(u.path, "build " + cfg_arg(cfg1)).code, 0);
  EXPECT_EQ(std::distance(fs::directory_iterator(u.path / "built" / "graphs"), fs::directory_iterator{}), 1);
}

TEST(Cli, BuildWithoutDataIsDataError) {
  test::TempDir t;
  EXPECT_EQ(run(t.path, "build " + cfg_arg(write_config(t.path))).code, 2);
  EXPECT_EQ(run(t.path, "train " + cfg_arg(write_config(t.path))).code, 2);
}

TEST(Cli, DryRunTrainsNothing) {
  test::TempDir t;
  const auto cfg = write_config(t.path);
  ASSERT_EQ(run(t.path, "generate " + cfg_arg(cfg)).code, 0);
  ASSERT_EQ(run(t.path, "build " + cfg_arg(cfg)).code, 0);
  const auto r = run(t.path, "train --dry-run " + cfg_arg(cfg));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(nlohmann::json::parse(r.out).at("dry_run").get<bool>());
  EXPECT_FALSE(fs::exists(t.path / "out" / "model.ckpt"));
}

TEST(Cli, TrainWritesCheckpointsLogAndSummary) {
  test::TempDir t;
  trained(t);
  EXPECT_TRUE(fs::exists(t.path / "out" / "model.ckpt"));
  EXPECT_TRUE(fs::exists(t.path / "out" / "last.ckpt"));
  EXPECT_FALSE(fs::exists(t.path / "out" / ".poigraph.lock"));
  const auto log = io::read_text(t.path / "out" / "train_log.jsonl");
  EXPECT_EQ(line_count(log), 2u);
  EXPECT_TRUE(nlohmann::json::parse(log.substr(0, log.find('\n'))).contains("val_mae"));
}

TEST(Cli, ResumeRefusesMismatchedVocabulary) {
  test::TempDir t;
  const auto cfg = trained(t);
  std::string other = kConfig;
  other.replace(other.find("n_categories = 5"), 16, "n_categories = 4");
  other.replace(other.find("data_dir = data"), 15, "data_dir = data2");
  other.replace(other.find("build_dir = built"), 17, "build_dir = built2");
  const auto cfg2 = write_config(t.path, other, "other.ini");
  ASSERT_EQ(run(t.path, "generate " + cfg_arg(cfg2)).code, 0);
  ASSERT_EQ(run(t.path, "build " + cfg_arg(cfg2)).code, 0);
  const auto r = run(t.path, "train --resume '" + (t.path / "out" / "last.ckpt").string() + "' " + cfg_arg(cfg2));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("vocab"), std::string::npos);
  // same vocabulary resumes and extends the log
  const auto ok = run(t.path, "train --resume '" + (t.path / "out" / "last.ckpt").string() + "' " + cfg_arg(cfg));
  EXPECT_EQ(ok.code, 0) << ok.err;
  EXPECT_EQ(line_count(io::read_text(t.path / "out" / "train_log.jsonl")), 4u);
}

TEST(Cli, EvalTwiceIsIdentical) {
  test::TempDir t;
  const auto cfg = trained(t);
  const auto a = run(t.path, "eval " + cfg_arg(cfg));
  ASSERT_EQ(a.code, 0) << a.err;
  const auto report = io::read_text(t.path / "out" / "report.json");
  const auto b = run(t.path, "eval " + cfg_arg(cfg));
  EXPECT_EQ(a.out, b.out);
  EXPECT_EQ(io::read_text(t.path / "out" / "report.json"), report);
  for (const char* k : {"mae", "rmse", "mse", "r2", "ndcg10", "mrr", "n_edges", "n_queries", "seed", "config_hash"})
    EXPECT_TRUE(nlohmann::json::parse(report).contains(k)) << k;
}

TEST(Cli, EvalRunsAndBaseline) {
  test::TempDir t;
  const auto cfg = trained(t);
  const auto r = run(t.path, "eval --runs 5 " + cfg_arg(cfg));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto metrics = io::read_text(t.path / "out" / "metrics.csv");
  EXPECT_EQ(line_count(metrics), 6u);
  const auto sig = io::read_text(t.path / "out" / "significance.csv");
  EXPECT_EQ(sig.substr(0, sig.find('\n')),
            "metric,ours_mean,ours_std,baseline_mean,baseline_std,improvement_pct,t,p,cohens_d");
  EXPECT_EQ(nlohmann::json::parse(r.out).at("reports").size(), 5u);
  EXPECT_EQ(nlohmann::json::parse(r.out).at("significance").size(), 5u);

  ASSERT_EQ(run(t.path, "eval --baseline gravity " + cfg_arg(cfg)).code, 0);
  EXPECT_TRUE(fs::exists(t.path / "out" / "gravity_report.json"));
  EXPECT_EQ(run(t.path, "eval --baseline linear " + cfg_arg(cfg)).code, 1);
}

TEST(Cli, EvalRejectsForeignCheckpoint) {
  test::TempDir t;
  const auto cfg = trained(t);
  io::write_text(t.path / "bogus.ckpt", "not a checkpoint");
  EXPECT_EQ(run(t.path, "eval --checkpoint '" + (t.path / "bogus.ckpt").string() + "' " + cfg_arg(cfg)).code, 2);
}

TEST(Cli, PredictContract) {
  test::TempDir t;
  const auto cfg = trained(t);
  const std::string truth_text = io::read_text(t.path / "data" / "truth_brands.csv");
  const auto truth = io::split_lines(truth_text);
  ASSERT_GT(truth.size(), 3u);
  // truth_brands.csv: brand,state,naics6,mass
  std::map<std::string, std::vector<std::string>> by_state;
  for (std::size_t i = 1; i < truth.size(); ++i) {
    const auto f = io::split_fields(truth[i]);
    if (f.size() >= 2) by_state[std::string(f[1])].emplace_back(f[0]);
  }
  const auto& [state, names] = *by_state.begin();
  ASSERT_GE(names.size(), 2u);
  const std::string row = names[0] + "," + names[1] + "," + state + ",2020-03\n";

  io::write_text(t.path / "empty.csv", "");
  auto r = run(t.path, "predict --pairs '" + (t.path / "empty.csv").string() + "' --output '" + (t.path / "p0.csv").string() + "' " + cfg_arg(cfg));
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(io::read_text(t.path / "p0.csv"), "brand_a,brand_b,state,month,predicted\n");

  io::write_text(t.path / "dup.csv", "brand_a,brand_b,state,month\n" + row + row);
  r = run(t.path, "predict --pairs '" + (t.path / "dup.csv").string() + "' --output '" + (t.path / "p1.csv").string() +
                      "' " + cfg_arg(cfg));
  EXPECT_EQ(r.code, 0) << r.err;
  const std::string p1_text = io::read_text(t.path / "p1.csv");
  const auto p1 = io::split_lines(p1_text);
  ASSERT_EQ(p1.size(), 3u);
  EXPECT_EQ(p1[1], p1[2]);

  io::write_text(t.path / "bad.csv", row + "Nobody Inc," + names[0] + "," + state + ",2020-03\n" + row);
  r = run(t.path, "predict --clamp --pairs '" + (t.path / "bad.csv").string() + "' --output '" +
                      (t.path / "p2.csv").string() + "' " + cfg_arg(cfg));
  EXPECT_EQ(r.code, 4);
  EXPECT_EQ(line_count(io::read_text(t.path / "p2.csv")), 3u);
  const auto errs = io::read_text(t.path / "p2.csv.errors.csv");
  EXPECT_NE(errs.find("unknown brand"), std::string::npos);
  const std::string p2_text = io::read_text(t.path / "p2.csv");
  const auto p2 = io::split_lines(p2_text);
  for (std::size_t i = 1; i < 3; ++i) EXPECT_GE(std::stod(std::string(io::split_fields(p2[i])[4])), 0.0);
}

TEST(Cli, AblateOrderAndIdentity) {
  test::TempDir t;
  const auto cfg = trained(t);
  ASSERT_EQ(run(t.path, "eval " + cfg_arg(cfg)).code, 0);
  const std::string metrics_text = io::read_text(t.path / "out" / "metrics.csv");
  const auto metrics = io::split_lines(metrics_text);

  auto r = run(t.path, "ablate --variant no_naics,full " + cfg_arg(cfg));
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string rows_text = io::read_text(t.path / "out" / "ablation.csv");
  const auto rows = io::split_lines(rows_text);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_TRUE(rows[1].starts_with("no_naics,"));
  EXPECT_TRUE(rows[2].starts_with("full,"));
  // full row equals train + eval under the same seed
  EXPECT_EQ(rows[2], metrics[1]);

  fs::remove(t.path / "out" / "ablation.csv");
  r = run(t.path, "ablate --variant full,bogus " + cfg_arg(cfg));
  EXPECT_EQ(r.code, 1);
  EXPECT_FALSE(fs::exists(t.path / "out" / "ablation.csv"));
}

TEST(Cli, ExitCodes) {
  test::TempDir t;
  EXPECT_EQ(run(t.path, "frobnicate").code, 1);
  EXPECT_EQ(run(t.path, "train").code, 1);
  EXPECT_EQ(run(t.path, "train --config '" + (t.path / "nope.ini").string() + "'").code, 1);
  const auto bad = write_config(t.path, "[run]\nseed = 1\n[train]\nepochs = 3\n", "bad.ini");
  const auto r = run(t.path, "train " + cfg_arg(bad));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("train.epochs"), std::string::npos);
}

TEST(Cli, HeldLockRefusesSecondWriter) {
  test::TempDir t;
  const auto cfg = write_config(t.path);
  fs::create_directories(t.path / "data");
  io::write_text(t.path / "data" / ".poigraph.lock", "");
  const auto r = run(t.path, "generate --force " + cfg_arg(cfg));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("locked"), std::string::npos);
}
