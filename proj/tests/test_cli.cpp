// SPDX-License-Identifier: Apache-2.0

#include <fstream>
#include <sstream>

#include "eclip/checkpoint.hpp"
#include "eclip/cli.hpp"
#include "eclip/gradcheck.hpp"
#include "eclip/synthdata.hpp"
#include "support.hpp"

namespace eclip {
namespace {

using nlohmann::json;

struct Run {
  int code;
  std::string out, err;
};

Run cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream out(p);
  out << s;
}

// One tiny dataset and one fully trained checkpoint shared by the suite.
class CliFixture : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new test::TempDir;
    write_text(*dir_ / "gen.json", json(test::tiny_gen()).dump());
    write_text(*dir_ / "train.json", json(test::tiny_train()).dump());
    const auto g = cli({"gen-data", "--out", data_dir().string(), "--products", "10", "--seed", "3", "--config",
                        (*dir_ / "gen.json").string()});
    ASSERT_EQ(g.code, cli::kExitOk) << g.err;
    const auto p = cli({"pretrain", "--data", manifest(), "--config", config(), "--out", ckpt()});
    ASSERT_EQ(p.code, cli::kExitOk) << p.err;
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }

  static std::filesystem::path data_dir() { return *dir_ / "data"; }
  static std::string manifest() { return (data_dir() / kManifestName).string(); }
  static std::string config() { return (*dir_ / "train.json").string(); }
  static std::string ckpt() { return (*dir_ / "model.ckpt").string(); }
  static std::string path(const std::string& name) { return (*dir_ / name).string(); }

  static test::TempDir* dir_;
};

test::TempDir* CliFixture::dir_ = nullptr;

TEST_F(CliFixture, GenDataWritesManifestAndGuardsDirectories) {
  EXPECT_EQ(load_manifest(manifest()).size(), 10u);
  const auto again = cli({"gen-data", "--out", data_dir().string()});
  EXPECT_EQ(again.code, cli::kExitInput);
  EXPECT_NE(again.err.find("--force"), std::string::npos);

  write_text(path("plain_file"), "x");
  EXPECT_EQ(cli({"gen-data", "--out", path("plain_file")}).code, cli::kExitInput);
  EXPECT_EQ(cli({"gen-data", "--out", path("g0"), "--products", "0"}).code, cli::kExitInput);

  const auto forced = cli({"gen-data", "--out", path("g1"), "--products", "2", "--sources", "2"});
  ASSERT_EQ(forced.code, cli::kExitOk) << forced.err;
  EXPECT_NE(forced.err.find("eclip gen-data resolved config:"), std::string::npos);
  EXPECT_EQ(load_manifest(path("g1") + "/" + kManifestName).num_sources(0), 2u);
}

TEST_F(CliFixture, PretrainWritesCheckpointAndCsv) {
  const auto st = load_checkpoint(ckpt());
  EXPECT_EQ(st.progress.stage, 3);  // both stages done
  EXPECT_TRUE(st.progress.momentum_ready);
  std::ifstream csv(ckpt() + ".loss.csv");
  std::string header;
  std::getline(csv, header);
  EXPECT_EQ(header, "step,itc,inter,itm,intra,reg,total,tau");
  std::size_t rows = 0;
  for (std::string line; std::getline(csv, line);) ++rows;
  EXPECT_EQ(rows, st.progress.global_step);
}

TEST_F(CliFixture, PretrainEchoesResolvedConfigAndAppliesOverrides) {
  const auto r = cli({"pretrain", "--data", manifest(), "--config", config(), "--out", path("o.ckpt"), "--stage", "1",
                      "--batch-size", "2", "--weights", "1,0,0,0,0", "--max-steps", "1"});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  const auto pos = r.err.find("eclip pretrain resolved config: ");
  ASSERT_NE(pos, std::string::npos);
  const auto line = r.err.substr(pos + 32, r.err.find('\n', pos) - pos - 32);
  const auto echoed = json::parse(line);
  EXPECT_EQ(echoed.at("train").at("batch_size"), 2);
  EXPECT_EQ(load_checkpoint(path("o.ckpt")).config.batch_size, 2u);
}

TEST_F(CliFixture, PretrainRejectsBadInput) {
  EXPECT_EQ(cli({"pretrain", "--data", manifest(), "--out", path("x.ckpt"), "--bogus"}).code, cli::kExitInput);
  EXPECT_EQ(cli({"pretrain", "--data", manifest(), "--out", path("x.ckpt"), "--stage", "3"}).code, cli::kExitInput);
  EXPECT_EQ(cli({"pretrain", "--data", path("missing.jsonl"), "--out", path("x.ckpt")}).code, cli::kExitInput);
  EXPECT_EQ(cli({"pretrain", "--data", manifest(), "--config", config(), "--out", path("x.ckpt"), "--weights", "1,2"})
                .code,
            cli::kExitInput);
  write_text(path("typo.json"), R"({"batch_sise": 4})");
  EXPECT_EQ(cli({"pretrain", "--data", manifest(), "--config", path("typo.json"), "--out", path("x.ckpt")}).code,
            cli::kExitInput);
  // Stage 2 alone needs a stage-1 checkpoint.
  EXPECT_EQ(cli({"pretrain", "--data", manifest(), "--config", config(), "--out", path("x.ckpt"), "--stage", "2"}).code,
            cli::kExitInput);
}

TEST_F(CliFixture, DivergenceExitsWithNumericalCodeAndDumps) {
  const auto r = cli({"pretrain", "--data", manifest(), "--config", config(), "--out", path("nan.ckpt"), "--lr-encoder",
                      "1e300", "--lr-rest", "1e300"});
  EXPECT_EQ(r.code, cli::kExitNumerical) << r.err;
  EXPECT_TRUE(std::filesystem::exists(path("nan.ckpt.failure.json")));
  EXPECT_FALSE(std::filesystem::exists(path("nan.ckpt")));
  const auto dump = json::parse(slurp(path("nan.ckpt.failure.json")));
  EXPECT_TRUE(dump.is_object());
}

TEST_F(CliFixture, ResumeMatchesUninterruptedRun) {
  const auto base = std::vector<std::string>{"pretrain", "--data", manifest(), "--config", config()};
  auto first = base;
  first.insert(first.end(), {"--out", path("half.ckpt"), "--max-steps", "5"});
  ASSERT_EQ(cli(first).code, cli::kExitOk);
  auto second = base;
  second.insert(second.end(), {"--resume", path("half.ckpt"), "--out", path("resumed.ckpt")});
  const auto r = cli(second);
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  EXPECT_EQ(slurp(path("resumed.ckpt")), slurp(ckpt()));

  auto changed = base;
  changed.insert(changed.end(), {"--resume", path("half.ckpt"), "--out", path("r2.ckpt"), "--batch-size", "2"});
  EXPECT_EQ(cli(changed).code, cli::kExitInput);
}

TEST_F(CliFixture, EvalTasksWriteReports) {
  for (const std::string task : {"classify", "itc-retrieval", "product-retrieval", "grounding"}) {
    const auto report = path(task + ".json");
    const auto r = cli({"eval", "--task", task, "--ckpt", ckpt(), "--data", manifest(), "--report", report});
    ASSERT_EQ(r.code, cli::kExitOk) << task << ": " << r.err;
    const auto j = json::parse(slurp(report));
    EXPECT_TRUE(j.contains("metrics")) << task;
    EXPECT_EQ(j.at("checkpoint").at("path"), ckpt());
  }
  for (const std::string mode : {"random", "text", "ema"}) {
    const auto r = cli({"eval", "--task", "product-retrieval", "--ckpt", ckpt(), "--data", manifest(), "--report",
                        path("pr.json"), "--neg-mode", mode, "--match-rule", "category", "--ks", "1,3"});
    ASSERT_EQ(r.code, cli::kExitOk) << mode << ": " << r.err;
    const auto m = json::parse(slurp(path("pr.json"))).at("metrics");
    EXPECT_LE(m.at("recall@1").get<double>(), m.at("recall@3").get<double>());
  }
}

TEST_F(CliFixture, EvalRejectsBadInput) {
  const auto base = std::vector<std::string>{"eval", "--ckpt", ckpt(), "--data", manifest(), "--report", path("r.json")};
  auto bad_task = base;
  bad_task.insert(bad_task.end(), {"--task", "segment"});
  EXPECT_EQ(cli(bad_task).code, cli::kExitInput);
  auto bad_mode = base;
  bad_mode.insert(bad_mode.end(), {"--task", "classify", "--neg-mode", "gauss"});
  EXPECT_EQ(cli(bad_mode).code, cli::kExitInput);
  auto bad_ks = base;
  bad_ks.insert(bad_ks.end(), {"--task", "classify", "--ks", "1,x"});
  EXPECT_EQ(cli(bad_ks).code, cli::kExitInput);
  ASSERT_EQ(cli({"pretrain", "--data", manifest(), "--config", config(), "--out", path("s1.ckpt"), "--stage", "1"}).code,
            cli::kExitOk);
  EXPECT_EQ(cli({"eval", "--task", "classify", "--ckpt", path("s1.ckpt"), "--data", manifest(), "--report",
                 path("r.json")})
                .code,
            cli::kExitInput);
  EXPECT_EQ(cli({"eval", "--task", "classify", "--ckpt", path("none.ckpt"), "--data", manifest(), "--report",
                 path("r.json")})
                .code,
            cli::kExitInput);
}

TEST_F(CliFixture, GroundWithTextAndImagePrompts) {
  write_text(path("props.json"), "[[0,0,4,4],[4,4,16,16],[0,0,16,16]]");
  const auto image = (data_dir() / "p0_s0.etns").string();
  const auto r = cli({"ground", "--ckpt", ckpt(), "--image", image, "--text", "1,30", "--proposals", path("props.json"),
                      "--out-map", path("map.pgm"), "--map-tensor", path("map.etns")});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  const auto j = json::parse(r.out);
  EXPECT_EQ(j.at("prompt"), "text");
  EXPECT_EQ(j.at("ranked").size(), 3u);
  EXPECT_EQ(j.at("map").at("height"), 16);
  EXPECT_EQ(slurp(path("map.pgm")).substr(0, 2), "P5");

  const auto q = cli({"ground", "--ckpt", ckpt(), "--image", image, "--query-image", (data_dir() / "p0_s1.etns").string(),
                      "--proposals", path("props.json"), "--out-map", path("map2.pgm"), "--out", path("g.json")});
  ASSERT_EQ(q.code, cli::kExitOk) << q.err;
  EXPECT_EQ(json::parse(slurp(path("g.json"))).at("prompt"), "image");
}

TEST_F(CliFixture, GroundRejectsBadInput) {
  const auto image = (data_dir() / "p0_s0.etns").string();
  write_text(path("props.json"), "[[0,0,4,4]]");
  EXPECT_EQ(cli({"ground", "--ckpt", ckpt(), "--image", image, "--text", "1", "--proposals", path("nope.json"),
                 "--out-map", path("m.pgm")})
                .code,
            cli::kExitInput);
  // Exactly one prompt kind.
  EXPECT_EQ(cli({"ground", "--ckpt", ckpt(), "--image", image, "--proposals", path("props.json"), "--out-map",
                 path("m.pgm")})
                .code,
            cli::kExitInput);
  EXPECT_EQ(cli({"ground", "--ckpt", ckpt(), "--image", image, "--text", "1,abc", "--proposals", path("props.json"),
                 "--out-map", path("m.pgm")})
                .code,
            cli::kExitInput);
  write_text(path("flat.json"), "[[1,1,1,3]]");
  EXPECT_EQ(cli({"ground", "--ckpt", ckpt(), "--image", image, "--text", "1", "--proposals", path("flat.json"),
                 "--out-map", path("m.pgm")})
                .code,
            cli::kExitInput);
}

TEST(CliGradcheck, PassesOnSmallRun) {
  const auto r = cli({"gradcheck", "--seeds", "2", "--encoder-seeds", "1", "--directions", "1"});
  EXPECT_EQ(r.code, cli::kExitOk) << r.out << r.err;
  EXPECT_NE(r.out.find("gradcheck passed"), std::string::npos);
  EXPECT_EQ(cli({"gradcheck", "--tol", "0"}).code, cli::kExitInput);
}

TEST(CliGradcheck, InjectedFaultFails) {
  GradcheckOptions opt;
  opt.seeds = 2;
  opt.encoder_seeds = 1;
  opt.directions = 1;
  opt.model = test::tiny_model();
  opt.fault = 1e-2;
  const auto report = run_gradcheck(opt);
  EXPECT_FALSE(report.passed(opt.tol));
  opt.fault = 0.0;
  EXPECT_TRUE(run_gradcheck(opt).passed(opt.tol));
}

TEST(CliMisc, HelpAndMissingSubcommand) {
  EXPECT_EQ(cli({"--help"}).code, cli::kExitOk);
  EXPECT_EQ(cli({}).code, cli::kExitInput);
  EXPECT_EQ(cli({"train"}).code, cli::kExitInput);
}

}  // namespace
}  // namespace eclip
