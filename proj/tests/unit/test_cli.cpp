#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "json.hpp"
#include "support.hpp"

namespace fs = std::filesystem;

namespace punr {
namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result punr(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string header(const fs::path& csv) {
  std::ifstream in(csv);
  std::string line;
  std::getline(in, line);
  return line;
}

std::size_t line_count(const std::string& text) {
  return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = testing::temp_dir("cli");
    std::ofstream(root_ / "tiny.cfg") << "# small model and corpus\n"
                                         "hidden_dim=16\nn_layers=1\nn_heads=2\nffn_dim=32\n"
                                         "max_behaviors=4\nmax_title_len=6\nmax_seq_len=32\n"
                                         "batch_size=2\ntotal_steps=4\n"
                                         "n_topics=3\nn_news=60\nn_users=24\nvocab_size=40\n"
                                         "titles_per_user=3\ngeneral_lines=30\n";
    Result r = punr({"synth-data", "--config", cfg(), "--out", (root_ / "data").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    r = punr({"pretrain-decoder", "--config", cfg(), "--data", train(), "--out",
              (root_ / "dec").string()});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  static void TearDownTestSuite() { fs::remove_all(root_); }

  static std::string cfg() { return (root_ / "tiny.cfg").string(); }
  static std::string train() { return (root_ / "data" / "train").string(); }
  static std::string dev() { return (root_ / "data" / "dev").string(); }
  static std::string dec_ckpt() { return (root_ / "dec" / "decoder_init.ckpt").string(); }
  static std::string dir(const std::string& name) { return (root_ / name).string(); }

  static fs::path root_;
};

fs::path CliTest::root_;

TEST_F(CliTest, SynthDataLayout) {
  for (const char* f : {"train/news.tsv", "train/behaviors.tsv", "dev/news.tsv",
                        "dev/behaviors.tsv", "general.txt", "topics.tsv", "manifest.json"})
    EXPECT_TRUE(fs::exists(root_ / "data" / f)) << f;
  EXPECT_EQ(line_count(slurp(root_ / "data" / "general.txt")), 30u);
}

TEST_F(CliTest, ManifestDescribesRun) {
  auto m = nlohmann::json::parse(slurp(root_ / "dec" / "manifest.json"));
  EXPECT_EQ(m.at("command"), "pretrain-decoder");
  EXPECT_EQ(m.at("config").at("hidden_dim"), "16");
  EXPECT_TRUE(m.contains("seed"));
  EXPECT_TRUE(m.contains("version"));
  EXPECT_TRUE(m.contains("started_at"));
  EXPECT_FALSE(m.at("inputs").empty());
  EXPECT_EQ(m.at("outputs").size(), 2u);
}

TEST_F(CliTest, FullPipelineAndDeterministicEvaluate) {
  Result r = punr({"pretrain", "--config", cfg(), "--data", train(), "--init", dec_ckpt(), "--out",
                   dir("pt")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(header(root_ / "pt" / "pretrain_log.csv"), "step,lr,loss,mlm,dec");
  r = punr({"finetune", "--config", cfg(), "--data", train(), "--checkpoint",
            dir("pt") + "/pretrain.ckpt", "--out", dir("ft")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(header(root_ / "ft" / "finetune_log.csv"), "step,lr,loss");
  const std::string ckpt = dir("ft") + "/finetune.ckpt";
  Result a = punr({"evaluate", "--checkpoint", ckpt, "--data", dev()});
  Result b = punr({"evaluate", "--checkpoint", ckpt, "--data", dev()});
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(a.out, b.out);
  auto js = nlohmann::json::parse(a.out);
  for (const char* k : {"auc", "mrr", "ndcg5", "ndcg10", "n_impressions", "n_excluded"})
    EXPECT_TRUE(js.contains(k)) << k;
  Result c = punr({"evaluate", "--checkpoint", ckpt, "--data", dev(), "--out", dir("ev"),
                   "--per-impression", "--threads=3"});
  ASSERT_EQ(c.code, 0) << c.err;
  EXPECT_EQ(c.out, a.out);
  EXPECT_EQ(slurp(root_ / "ev" / "metrics.json"), a.out);
  EXPECT_EQ(header(root_ / "ev" / "per_impression.csv"), "impression_id,auc,mrr,ndcg5,ndcg10");
}

TEST_F(CliTest, RerunsGiveIdenticalLogs) {
  for (const char* name : {"rep1", "rep2"}) {
    Result r = punr({"pretrain", "--config", cfg(), "--data", train(), "--init", dec_ckpt(),
                     "--out", dir(name)});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  EXPECT_EQ(slurp(root_ / "rep1" / "pretrain_log.csv"), slurp(root_ / "rep2" / "pretrain_log.csv"));
  EXPECT_EQ(slurp(root_ / "rep1" / "pretrain.ckpt"), slurp(root_ / "rep2" / "pretrain.ckpt"));
}

TEST_F(CliTest, DecOnlyLogHasNoMlmColumn) {
  Result r = punr({"pretrain", "--config", cfg(), "--data", train(), "--init", dec_ckpt(),
                   "--tasks=dec", "--out", dir("deconly")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(header(root_ / "deconly" / "pretrain_log.csv"), "step,lr,loss,dec");
}

TEST_F(CliTest, AblationTogglesRun) {
  Result r = punr({"pretrain", "--config", cfg(), "--data", train(), "--decoder-init=random",
                   "--pooling=attention", "--tasks", "mlm", "--dump-masks=3", "--out", dir("abl")});
  ASSERT_EQ(r.code, 0) << r.err;
  std::ifstream plans(root_ / "abl" / "mask_plans.jsonl");
  std::set<std::size_t> sequences;
  for (std::string line; std::getline(plans, line);) {
    auto js = nlohmann::json::parse(line);
    EXPECT_TRUE(js.contains("position") && js.contains("original") && js.contains("source"));
    sequences.insert(js.at("sequence").get<std::size_t>());
  }
  EXPECT_EQ(sequences, (std::set<std::size_t>{0, 1, 2}));
  r = punr({"finetune", "--config", cfg(), "--data", train(), "--checkpoint",
            dir("abl") + "/pretrain.ckpt", "--siamese=false", "--out", dir("abl_ft")});
  ASSERT_EQ(r.code, 0) << r.err;
  r = punr({"evaluate", "--checkpoint", dir("abl_ft") + "/finetune.ckpt", "--data", dev()});
  ASSERT_EQ(r.code, 0) << r.err;
}

TEST_F(CliTest, SweepProducesFourRowsAndReportMerges) {
  Result r = punr({"sweep", "--config", cfg(), "--data", train(), "--eval-data", dev(), "--init",
                   dec_ckpt(), "--axis=alpha", "--total-steps=2", "--out", dir("sweep")});
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string csv = slurp(root_ / "sweep" / "sweep.csv");
  EXPECT_EQ(line_count(csv), 5u);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "axis,ratio,auc,mrr,ndcg5,ndcg10,n_impressions");
  for (const char* v : {"0.15", "0.30", "0.45", "0.60"}) {
    EXPECT_NE(csv.find(std::string("alpha,") + v + ","), std::string::npos) << v;
    EXPECT_TRUE(fs::exists(root_ / "sweep" / (std::string("alpha_") + v) / "metrics.json"));
  }
  r = punr({"report", dir("sweep"), dir("sweep"), "--out", dir("report")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(line_count(slurp(root_ / "report" / "merged.csv")), 9u);
  EXPECT_TRUE(fs::exists(root_ / "report" / "table.tsv"));
}

void expect_error(const Result& r, const std::string& needle) {
  EXPECT_NE(r.code, 0);
  ASSERT_EQ(line_count(r.err), 1u) << r.err;
  auto js = nlohmann::json::parse(r.err);
  EXPECT_TRUE(js.contains("error"));
  EXPECT_NE(js.at("message").get<std::string>().find(needle), std::string::npos) << r.err;
}

TEST_F(CliTest, MissingCheckpointIsNamed) {
  const std::string missing = dir("nowhere") + "/model.ckpt";
  expect_error(punr({"finetune", "--config", cfg(), "--data", train(), "--checkpoint", missing,
                     "--out", dir("x1")}),
               missing);
  expect_error(punr({"evaluate", "--checkpoint", missing, "--data", dev()}), missing);
  EXPECT_FALSE(fs::exists(root_ / "x1" / "manifest.json"));
}

TEST_F(CliTest, MissingPrerequisitesAreErrors) {
  expect_error(punr({"finetune", "--config", cfg(), "--data", train(), "--out", dir("x2")}),
               "--checkpoint");
  expect_error(punr({"pretrain", "--config", cfg(), "--data", train(), "--out", dir("x3")}),
               "--init");
  expect_error(punr({"evaluate", "--checkpoint", dec_ckpt(), "--data", dir("nodata")}), "nodata");
}

TEST_F(CliTest, ConflictingFlagsRejectedBeforeWork) {
  expect_error(punr({"pretrain", "--config", cfg(), "--data", train(), "--init", dec_ckpt(),
                     "--decoder-init=random", "--out", dir("c1")}),
               "conflicts");
  EXPECT_FALSE(fs::exists(root_ / "c1"));
  expect_error(punr({"pretrain", "--config", cfg(), "--data", train(), "--init", dec_ckpt(),
                     "--alpha=0.3", "--alpha=0.4", "--out", dir("c2")}),
               "conflicting");
  expect_error(punr({"finetune", "--config", cfg(), "--data", train(), "--checkpoint", dec_ckpt(),
                     "--from-scratch", "--out", dir("c3")}),
               "conflicts");
  expect_error(punr({"sweep", "--config", cfg(), "--data", train(), "--eval-data", dev(), "--init",
                     dec_ckpt(), "--axis=beta", "--beta=0.3", "--out", dir("c4")}),
               "conflicts");
  expect_error(punr({"pretrain", "--config", cfg(), "--data", train(), "--init", dec_ckpt(),
                     "--hidden-dim=32", "--out", dir("c5")}),
               "hidden_dim");
}

TEST_F(CliTest, UnknownKeysRejected) {
  expect_error(punr({"evaluate", "--checkpoint", dec_ckpt(), "--data", dev(), "--learnin-rate=1"}),
               "learnin_rate");
  std::ofstream(root_ / "bad.cfg") << "hidden_dim=16\nwidth=3\n";
  expect_error(punr({"synth-data", "--config", dir("bad.cfg"), "--out", dir("c6")}), "width");
}

TEST_F(CliTest, UsageErrorsExitTwo) {
  Result r = punr({"launch"});
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(line_count(r.err), 1u);
  r = punr({});
  EXPECT_EQ(r.code, 2);
}

TEST_F(CliTest, EnvironmentSeedOverridesConfig) {
  ::setenv("PUNR_SEED", "777", 1);
  Result r = punr({"synth-data", "--config", cfg(), "--seed=1", "--out", dir("envseed")});
  ::unsetenv("PUNR_SEED");
  ASSERT_EQ(r.code, 0) << r.err;
  auto m = nlohmann::json::parse(slurp(root_ / "envseed" / "manifest.json"));
  EXPECT_EQ(m.at("config").at("seed"), "777");
  Result s = punr({"synth-data", "--config", cfg(), "--seed=777", "--out", dir("argseed")});
  ASSERT_EQ(s.code, 0);
  EXPECT_EQ(slurp(root_ / "envseed" / "train" / "behaviors.tsv"),
            slurp(root_ / "argseed" / "train" / "behaviors.tsv"));
}

TEST_F(CliTest, BuildVocabWritesDumps) {
  Result r = punr({"build-vocab", "--config", cfg(), "--data", train(), "--out", dir("vocab")});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"vocab.txt", "vocab.jsonl", "catalog.jsonl", "impressions.jsonl"})
    EXPECT_TRUE(fs::exists(root_ / "vocab" / f)) << f;
  std::ifstream in(root_ / "vocab" / "catalog.jsonl");
  std::string line;
  std::getline(in, line);
  auto js = nlohmann::json::parse(line);
  EXPECT_TRUE(js.contains("news_id"));
  // An explicit vocabulary feeds decoder pre-training from a plain corpus.
  r = punr({"pretrain-decoder", "--config", cfg(), "--vocab", dir("vocab") + "/vocab.txt",
            "--corpus", (root_ / "data" / "general.txt").string(), "--out", dir("dec2")});
  ASSERT_EQ(r.code, 0) << r.err;
}

}  // namespace
}  // namespace punr
