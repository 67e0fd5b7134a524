#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli/commands.hpp"
#include "cli/run_config.hpp"
#include "teller/motion_latent.hpp"
#include "teller/pipeline.hpp"

namespace fs = std::filesystem;
using teller::cli::RunConfig;
using teller::cli::UsageError;

namespace {

struct Run {
  int code = -1;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "teller");
  std::ostringstream out, err;
  Run r;
  r.code = teller::cli::run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("teller_cli_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
                                        "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string p(const std::string& name) const { return (dir_ / name).string(); }

  // Small corpus + codec + AR model for generate tests.
  void train_small_stack() {
    ASSERT_EQ(cli({"synth", "--out", p("c"), "--clips", "10", "--seed", "3"}).code, 0);
    ASSERT_EQ(cli({"train", "rvq", "--corpus", p("c"), "--out", p("r"), "--epochs", "5"}).code, 0);
    ASSERT_EQ(cli({"train", "ar", "--corpus", p("c"), "--codec", p("r/codec.trvq"), "--out", p("a"), "--epochs",
                   "1", "--set", "ar.d_model=16", "--set", "ar.heads=2", "--set", "ar.layers=1"})
                  .code,
              0);
    write_tone(p("one.wav"), 1.0);
  }

  static void write_tone(const std::string& path, double seconds) {
    teller::audio::PcmAudio pcm;
    pcm.sample_rate_hz = 16000;
    for (int i = 0; i < static_cast<int>(seconds * 16000); ++i) {
      pcm.samples.push_back(0.2 * std::sin(i * 0.1) + 0.1 * std::sin(i * 0.013));
    }
    teller::audio::write_wav(path, pcm);
  }

  fs::path dir_;
};

}  // namespace

TEST(RunConfigTest, DefaultsFileFlagsPrecedence) {
  RunConfig cfg;
  EXPECT_EQ(cfg.get_int("synth.clips"), 500);
  cfg.parse_text("synth.clips = 12  # comment\nsynth.bands=3\n");
  EXPECT_EQ(cfg.get_int("synth.clips"), 12);
  cfg.set_assignment("synth.clips=13");
  EXPECT_EQ(cfg.get_int("synth.clips"), 13);
  EXPECT_EQ(cfg.get_int("synth.bands"), 3);
}

TEST(RunConfigTest, RejectsUnknownKeysAndBadValues) {
  RunConfig cfg;
  EXPECT_THROW(cfg.set("no.such", "1"), UsageError);
  EXPECT_THROW(cfg.set("synth.clips", "ten"), UsageError);
  EXPECT_THROW(cfg.set("ar.alibi", "maybe"), UsageError);
  EXPECT_THROW(cfg.set("sweep.tokens", "8,,16"), UsageError);
  EXPECT_THROW(cfg.parse_text("synth.clips 3\n"), UsageError);
}

TEST(RunConfigTest, SerializeRoundTripsAndHashTracksContent) {
  RunConfig a;
  a.set("rvq.stages", "2");
  a.set("synth.noise_std", "0.125");
  RunConfig b;
  b.parse_text(a.serialize());
  EXPECT_EQ(a.serialize(), b.serialize());
  EXPECT_EQ(a.hash(), b.hash());
  b.set("rvq.stages", "3");
  EXPECT_NE(a.hash(), b.hash());
  EXPECT_EQ(a.hash().size(), 16u);
}

TEST(RunConfigTest, Fnv1aReferenceValues) {
  EXPECT_EQ(teller::cli::fnv1a64(""), 0xcbf29ce484222325ull);
  EXPECT_EQ(teller::cli::fnv1a64("a"), 0xaf63dc4c8601ec8cull);
}

TEST(RunConfigTest, TypedViewsFollowKeys) {
  RunConfig cfg;
  cfg.set("rvq.slots", "4");
  cfg.set("rvq.stages", "2");
  const auto q = cfg.rvq();
  EXPECT_EQ(q.tokens_per_window(), 8);
  const auto a = cfg.ar(q, 32, false);
  EXPECT_EQ(a.tokens_per_chunk, 8);
  EXPECT_EQ(a.vocab, q.codebook_size);
  EXPECT_FALSE(a.dual_head);
}

TEST_F(CliTest, SynthIsReproducibleAndValidatesClips) {
  auto r1 = cli({"synth", "--out", p("a"), "--clips", "4", "--seed", "7"});
  ASSERT_EQ(r1.code, 0) << r1.err;
  ASSERT_EQ(cli({"synth", "--out", p("b"), "--clips", "4", "--seed", "7"}).code, 0);
  for (const auto& e : fs::directory_iterator(p("a"))) {
    EXPECT_EQ(slurp(e.path()), slurp(fs::path(p("b")) / e.path().filename())) << e.path();
  }
  EXPECT_NE(r1.out.find("manifest.jsonl"), std::string::npos);
  // stdout carries only paths
  std::istringstream lines(r1.out);
  for (std::string line; std::getline(lines, line);) EXPECT_TRUE(fs::exists(line)) << line;
  EXPECT_EQ(cli({"synth", "--out", p("z"), "--clips", "0"}).code, 2);
  EXPECT_EQ(cli({"synth", "--out", p("z"), "--set", "bad.key=1"}).code, 2);
  EXPECT_EQ(cli({"synth"}).code, 2);
  EXPECT_EQ(cli({"frobnicate"}).code, 2);
}

TEST_F(CliTest, ResolvedConfigReloads) {
  ASSERT_EQ(cli({"synth", "--out", p("a"), "--clips", "2", "--bands", "3"}).code, 0);
  RunConfig cfg;
  cfg.load_file(p("a/resolved_config.txt"));
  EXPECT_EQ(cfg.get_int("synth.bands"), 3);
  EXPECT_EQ(cfg.get_int("synth.clips"), 2);
  // config file < flags
  ASSERT_EQ(cli({"synth", "--out", p("b"), "--config", p("a/resolved_config.txt"), "--clips", "3"}).code, 0);
  RunConfig b;
  b.load_file(p("b/resolved_config.txt"));
  EXPECT_EQ(b.get_int("synth.clips"), 3);
  EXPECT_EQ(b.get_int("synth.bands"), 3);
}

TEST_F(CliTest, TrainRvqWritesDecreasingLoss) {
  ASSERT_EQ(cli({"synth", "--out", p("c"), "--clips", "10"}).code, 0);
  auto r = cli({"train", "rvq", "--corpus", p("c"), "--out", p("r"), "--stages", "4", "--epochs", "15"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(p("r/codec.trvq")));
  std::ifstream csv(p("r/rvq_loss.csv"));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "epoch,loss,lr");
  std::vector<double> losses;
  while (std::getline(csv, line)) losses.push_back(std::stod(line.substr(line.find(',') + 1)));
  ASSERT_EQ(losses.size(), 15u);
  EXPECT_LT(losses.back(), 0.5 * losses.front());
}

TEST_F(CliTest, MissingCorpusIsAnError) {
  EXPECT_EQ(cli({"train", "rvq", "--corpus", p("none"), "--out", p("r")}).code, 1);
  EXPECT_EQ(cli({"train", "rvq", "--out", p("r")}).code, 2);
}

TEST_F(CliTest, GenerateEmits25FramesAndIsSeedDeterministic) {
  train_small_stack();
  const std::vector<std::string> base = {"generate", "--audio", p("one.wav"), "--codec", p("r/codec.trvq"),
                                         "--ar", p("a/ar.tarm")};
  auto with = [&](std::vector<std::string> extra) {
    auto a = base;
    a.insert(a.end(), extra.begin(), extra.end());
    return cli(a);
  };
  ASSERT_EQ(with({"--out", p("g1"), "--topk", "15", "--seed", "1"}).code, 0);
  ASSERT_EQ(with({"--out", p("g2"), "--topk", "15", "--seed", "1", "--threaded", "false"}).code, 0);
  ASSERT_EQ(with({"--out", p("g3"), "--topk", "15", "--seed", "2"}).code, 0);
  ASSERT_EQ(with({"--out", p("k1"), "--topk", "1"}).code, 0);
  ASSERT_EQ(with({"--out", p("k2"), "--topk", "1", "--seed", "9"}).code, 0);

  const auto clip = teller::motion::read_motion_file(p("g1/motion.tmlt"));
  EXPECT_EQ(clip.frames.size(), 25u);
  EXPECT_EQ(clip.frame_rate_hz, 25.0);
  EXPECT_EQ(slurp(p("g1/motion.tmlt")), slurp(p("g2/motion.tmlt")));
  EXPECT_NE(slurp(p("g1/motion.tmlt")), slurp(p("g3/motion.tmlt")));
  EXPECT_EQ(slurp(p("k1/motion.tmlt")), slurp(p("k2/motion.tmlt")));
  const auto trace = teller::pipeline::import_trace(p("g1/trace.csv"));
  EXPECT_EQ(trace.chunks(), 5);
}

TEST_F(CliTest, GenerateOptionalOutputs) {
  train_small_stack();
  ASSERT_EQ(cli({"train", "etm", "--out", p("e"), "--epochs", "1", "--samples", "2"}).code, 0);
  auto r = cli({"generate", "--audio", p("one.wav"), "--codec", p("r/codec.trvq"), "--ar", p("a/ar.tarm"), "--etm",
                p("e/etm.tetm"), "--out", p("g"), "--dump-refined", "--decode-trace"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(p("g/refined.tfvl")));
  const auto jsonl = slurp(p("g/decode_trace.jsonl"));
  EXPECT_EQ(std::count(jsonl.begin(), jsonl.end(), '\n'), 5 * 32);
  EXPECT_EQ(cli({"generate", "--audio", p("one.wav"), "--codec", p("r/codec.trvq"), "--ar", p("a/ar.tarm"), "--out",
                 p("h"), "--dump-refined"})
                .code,
            2);
}

TEST_F(CliTest, BenchSimulateReferenceBudget) {
  auto r = cli({"bench", "--simulate", "--budget", "reference", "--out", p("b")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(p("b/report.json")),
            "{\n  \"fps\": 25.0,\n  \"realtime_factor\": 0.92,\n  \"max_chunk_latency_ms\": 184.0,\n  \"verdict\": true\n}\n");
  EXPECT_TRUE(fs::exists(p("b/latency.svg")));
  EXPECT_EQ(cli({"bench", "--simulate", "--chunks", "0", "--out", p("x")}).code, 2);
  EXPECT_EQ(cli({"bench", "--out", p("x")}).code, 2);
  EXPECT_EQ(cli({"bench", "--simulate", "--budget", p("missing.json"), "--out", p("x")}).code, 2);
}

TEST_F(CliTest, BenchMeasureAndTraceExport) {
  auto r = cli({"bench", "--measure", "--chunks", "3", "--out", p("m"), "--set", "ar.d_model=16", "--set",
                "ar.heads=2"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto trace = teller::pipeline::import_trace(p("m/trace.csv"));
  EXPECT_EQ(trace.chunks(), 3);
  auto t = cli({"trace-export", "--trace", p("m/trace.csv"), "--out", p("t")});
  ASSERT_EQ(t.code, 0) << t.err;
  EXPECT_EQ(slurp(p("t/trace.csv")), slurp(p("m/trace.csv")));
  EXPECT_TRUE(fs::exists(p("t/latency.svg")));
}

TEST_F(CliTest, SweepSingleRowCarriesConfigHash) {
  auto r = cli({"sweep", "--out", p("s"), "--clips", "10", "--epochs", "2", "--tokens", "16"});
  ASSERT_EQ(r.code, 0) << r.err;
  std::ifstream csv(p("s/sweep.csv"));
  std::string header, row, extra;
  std::getline(csv, header);
  std::getline(csv, row);
  EXPECT_EQ(header, "frames,tokens,val_loss,train_loss,config_hash");
  EXPECT_FALSE(std::getline(csv, extra));
  EXPECT_EQ(row.substr(0, 5), "4,16,");
  RunConfig cfg;
  cfg.load_file(p("s/resolved_config.txt"));
  cfg.set("rvq.stages", "2");
  EXPECT_EQ(row.substr(row.rfind(',') + 1), cfg.hash());
  EXPECT_EQ(cli({"sweep", "--out", p("s2"), "--tokens", "12"}).code, 2);
}
