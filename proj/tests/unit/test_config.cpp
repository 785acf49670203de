#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "punr/config.hpp"
#include "punr/error.hpp"
#include "support.hpp"

namespace punr {
namespace {

ConfigMap parse(const std::string& text) {
  std::istringstream in(text);
  return ConfigMap::parse(in);
}

TEST(ConfigMap, ParsesKeyValueLinesWithComments) {
  ConfigMap c = parse("# header\nhidden-dim = 32\n\n  n_layers=3 # trailing\nlearning_rate=1e-3\n");
  EXPECT_EQ(c.get_size("hidden_dim", 0), 32u);
  EXPECT_EQ(c.get_size("n-layers", 0), 3u);
  EXPECT_DOUBLE_EQ(c.get_double("learning_rate", 0.0), 1e-3);
  EXPECT_EQ(c.entries().size(), 3u);
}

TEST(ConfigMap, MissingKeysFallBack) {
  ConfigMap c;
  EXPECT_EQ(c.get("pooling", "cls"), "cls");
  EXPECT_EQ(c.get_size("batch_size", 7), 7u);
  EXPECT_TRUE(c.get_bool("siamese", true));
}

TEST(ConfigMap, LaterValuesOverride) {
  ConfigMap c = parse("seed=1\nseed=2\n");
  EXPECT_EQ(c.get_u64("seed", 0), 2u);
  ConfigMap o;
  o.set("seed", "9");
  o.set("alpha", "0.45");
  c.merge(o);
  EXPECT_EQ(c.get_u64("seed", 0), 9u);
  EXPECT_EQ(c.get_double("alpha", 0.0), 0.45);
}

TEST(ConfigMap, MalformedLinesNameTheLine) {
  try {
    parse("seed=1\nnot a pair\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  EXPECT_THROW(parse("=3\n"), ParseError);
}

TEST(ConfigMap, BadValuesAreConfigErrors) {
  ConfigMap c = parse("batch_size=four\nlr=0.1x\nneg=-3\nsiamese=maybe\n");
  EXPECT_THROW(c.get_size("batch_size", 1), ConfigError);
  EXPECT_THROW(c.get_double("lr", 1.0), ConfigError);
  EXPECT_THROW(c.get_size("neg", 1), ConfigError);
  EXPECT_THROW(c.get_bool("siamese", true), ConfigError);
}

TEST(ConfigMap, UnknownKeyNamed) {
  ConfigMap c = parse("hidden_dim=8\nhiden_dim=9\n");
  try {
    c.require_known(model_config_keys());
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("hiden_dim"), std::string::npos);
  }
}

TEST(ConfigMap, WriteThenParseRoundTrips) {
  ConfigMap c = parse("b=2\na=1\npooling=attention\n");
  std::ostringstream os;
  c.write(os);
  EXPECT_EQ(os.str(), "a=1\nb=2\npooling=attention\n");
  EXPECT_EQ(parse(os.str()).entries(), c.entries());
}

TEST(ConfigMap, LoadFromFile) {
  auto dir = testing::temp_dir("config");
  std::ofstream(dir / "c.cfg") << "n_heads=2\n";
  EXPECT_EQ(ConfigMap::load(dir / "c.cfg").get_size("n_heads", 0), 2u);
  EXPECT_THROW(ConfigMap::load(dir / "missing.cfg"), IoError);
  std::filesystem::remove_all(dir);
}

TEST(ConfigBuild, ModelConfigFromKeys) {
  ConfigMap c = parse("hidden_dim=32\nn_heads=4\nffn_dim=64\npooling=average\nmax_behaviors=7\n"
                      "max_title_len=9\nmax_seq_len=40\n");
  ModelConfig m = model_config_from(c, 100);
  EXPECT_EQ(m.vocab_size, 100u);
  EXPECT_EQ(m.hidden_dim, 32u);
  EXPECT_EQ(m.pooling, Pooling::average);
  EXPECT_EQ(m.max_segments, 8u);
  EXPECT_EQ(m.max_seq_len, 40u);
  SequenceLimits l = sequence_limits_from(c);
  EXPECT_EQ(l.max_behaviors, 7u);
  EXPECT_EQ(l.max_title_len, 9u);
  EXPECT_EQ(l.max_seq_len, 40u);
}

TEST(ConfigBuild, PositionTableCoversNewsSequences) {
  ConfigMap c = parse("max_title_len=30\nmax_seq_len=16\n");
  EXPECT_GE(model_config_from(c, 50).max_seq_len, 31u);
}

TEST(ConfigBuild, TrainConfigDefaults) {
  TrainConfig t = train_config_from(ConfigMap{}, Stage::pretrain);
  EXPECT_EQ(t.stage, Stage::pretrain);
  EXPECT_EQ(t.warmup_ratio, 0.1);
  EXPECT_EQ(t.masking.alpha, 0.3);
  EXPECT_EQ(t.masking.beta, 0.3);
  EXPECT_EQ(t.negatives, 4u);
  EXPECT_TRUE(t.siamese);
  EXPECT_TRUE(t.tasks.mlm && t.tasks.dec);
}

TEST(ConfigBuild, TrainConfigFromKeys) {
  ConfigMap c = parse("alpha=0.45\nbeta=0.6\ntasks=mlm\nsiamese=false\nnegatives=2\n"
                      "total_steps=33\nbatch_size=5\nwarmup_ratio=0\n");
  TrainConfig t = train_config_from(c, Stage::finetune);
  EXPECT_EQ(t.masking.alpha, 0.45);
  EXPECT_EQ(t.masking.beta, 0.6);
  EXPECT_FALSE(t.tasks.dec);
  EXPECT_FALSE(t.siamese);
  EXPECT_EQ(t.negatives, 2u);
  EXPECT_EQ(t.total_steps, 33u);
  EXPECT_EQ(t.batch_size, 5u);
  EXPECT_EQ(t.warmup_ratio, 0.0);
}

TEST(ConfigBuild, SynthConfigFromKeys) {
  ConfigMap c = parse("n_topics=3\nn_users=12\ntopic_purity=1.0\nseed=77\n");
  SynthConfig s = synth_config_from(c);
  EXPECT_EQ(s.n_topics, 3u);
  EXPECT_EQ(s.n_users, 12u);
  EXPECT_EQ(s.topic_purity, 1.0);
  EXPECT_EQ(s.seed, 77u);
}

TEST(ConfigBuild, InvalidValuesRejectedOnUse) {
  EXPECT_THROW(model_config_from(parse("pooling=max\n"), 50), ConfigError);
  EXPECT_THROW(train_config_from(parse("tasks=everything\n"), Stage::pretrain), ConfigError);
}

}  // namespace
}  // namespace punr
