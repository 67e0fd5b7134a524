// Acceptance runner: one PASS/FAIL line per criterion. Tolerances and time
// limits are pinned below.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <random>
#include <set>
#include <sstream>

#include "cli/commands.hpp"
#include "teller/experiments.hpp"
#include "teller/pipeline.hpp"

namespace fs = std::filesystem;
using namespace teller;

namespace {

// ---- pinned tolerances ----
constexpr double kC1Tolerance = 0.0;
constexpr double kC1MaxSeconds = 1.0;
constexpr int kC2Frames = 25;
constexpr int kC3Latents = 1000;
constexpr double kC3MaxSeconds = 10.0;
constexpr double kC4MaxSeconds = 15 * 60.0;
constexpr double kC5CeFactor = 0.4;  // x ln K
constexpr double kC5MinPearson = 0.8;
constexpr double kC5MaxSeconds = 30 * 60.0;
constexpr int kC6Seeds = 50;
constexpr double kC6MaxGapRatio = 0.5;
constexpr double kC7MaxRelError = 1e-4;
constexpr double kC7MaxSeconds = 60.0;
constexpr double kC10Closeness = 0.1;  // x CE bound

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "teller");
  std::ostringstream out, err;
  const int code = cli::run_cli(args, out, err);
  if (code != 0) std::cerr << "teller " << args[1] << " failed: " << err.str();
  return code;
}

void write_pcm(const fs::path& p, std::vector<double> samples) {
  audio::write_wav(p.string(), {std::move(samples), 16000});
}

// Trained codec + dual-head model shared by criteria 5, 6, 9 and 10.
struct Stack {
  exp::ArExperimentConfig cfg;
  std::vector<exp::ClipData> clips;
  rvq::RVQCodec codec;
  ar::ARModel dual;
  exp::ArExperimentResult result;
  double codec_seconds = 0.0;
  fs::path codec_path, ar_path;
};

class Runner {
 public:
  explicit Runner(fs::path out) : out_(std::move(out)) { fs::create_directories(out_); }

  Stack& stack() {
    if (stack_) return *stack_;
    Stack s;
    s.cfg = exp::ArExperimentConfig::standard();
    const auto t0 = std::chrono::steady_clock::now();
    s.clips = exp::make_clips(s.cfg.synth, s.cfg.clips, s.cfg.frontend);
    s.codec = exp::train_codec(exp::split(s.clips, false), s.cfg.codec, s.cfg.codec_train, mix_seed(s.cfg.seed, 1));
    s.codec_seconds = seconds_since(t0);
    s.result = exp::run_ar_experiment(s.cfg, s.clips, s.codec, &s.dual, [](const std::string& m) {
      if (m.find("/") != std::string::npos && (m.find("0/") != std::string::npos)) std::cerr << m << "\n";
    });
    fs::create_directories(out_ / "models");
    s.codec_path = out_ / "models" / "codec.trvq";
    s.ar_path = out_ / "models" / "ar.tarm";
    s.codec.save(s.codec_path.string());
    s.dual.save(s.ar_path.string());
    stack_ = std::move(s);
    return *stack_;
  }

  static double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }

  // 1. Simulated schedule with the reference budgets.
  Outcome c1() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto r = pipeline::simulate_schedule(pipeline::StageBudget::reference(), 5);
    const double secs = seconds_since(t0);
    const bool ok = std::abs(r.per_chunk_ms - 184.0) <= kC1Tolerance && r.per_chunk_ms <= 200.0 &&
                    std::abs(r.fps - 25.0) <= kC1Tolerance && std::abs(r.realtime_factor - 0.92) <= kC1Tolerance &&
                    r.verdict && r.frames == 25 && secs < kC1MaxSeconds;
    return {ok, "per_chunk_ms=" + fmt(r.per_chunk_ms, 15) + " fps=" + fmt(r.fps, 15) +
                    " realtime_factor=" + fmt(r.realtime_factor, 15) + " verdict=" + (r.verdict ? "true" : "false") +
                    " (tolerance 0, limit 1 s)"};
  }

  // 2. cmd_generate on 1 s inputs emits 25 frames.
  Outcome c2() {
    const auto dir = out_ / "c2";
    fs::create_directories(dir);
    auto qc = rvq::RVQConfig::for_tokens(32);
    qc.latent_dim = 4;
    qc.codebook_size = 16;
    qc.hidden_mult = 1;
    rvq::RVQCodec::random(qc, 1).save((dir / "codec.trvq").string());
    ar::ARConfig ac;
    ac.vocab = 16;
    ac.d_model = 16;
    ac.layers = 1;
    ac.heads = 2;
    ac.audio_dim = 32;
    ar::ARModel::random(ac, 2).save((dir / "ar.tarm").string());

    std::mt19937_64 rng(3);
    std::normal_distribution<double> nd(0.0, 0.1);
    std::vector<double> noise(16000), silence(16000, 0.0);
    for (auto& v : noise) v = nd(rng);
    synth::SynthConfig sc;
    std::vector<double> tone = synth::generate_clip(sc, 4).audio;
    std::vector<int> counts;
    int idx = 0;
    bool ok = true;
    for (const auto* pcm : {&tone, &noise, &silence}) {
      const auto wav = dir / ("in" + std::to_string(idx) + ".wav");
      write_pcm(wav, *pcm);
      const auto o = dir / ("out" + std::to_string(idx++));
      ok = ok && cli({"generate", "--audio", wav.string(), "--codec", (dir / "codec.trvq").string(), "--ar",
                      (dir / "ar.tarm").string(), "--out", o.string(), "--seed", "1"}) == 0;
      const auto clip = motion::read_motion_file((o / "motion.tmlt").string());
      counts.push_back(static_cast<int>(clip.frames.size()));
      ok = ok && clip.frames.size() == static_cast<std::size_t>(kC2Frames) && clip.frame_rate_hz == 25.0;
    }
    std::string d = "frames per 1 s input (tone, noise, silence) =";
    for (int c : counts) d += " " + std::to_string(c);
    return {ok, d + " (expected exactly 25)"};
  }

  // 3. Quantizer vs exhaustive per-stage nearest-neighbour search.
  Outcome c3() {
    const auto t0 = std::chrono::steady_clock::now();
    rvq::RVQConfig cfg;
    cfg.slots = 1;
    cfg.residual_stages = 2;
    cfg.codebook_size = 8;
    cfg.latent_dim = 6;
    const auto codec = rvq::RVQCodec::random(cfg, 11);
    std::mt19937_64 rng(12);
    std::normal_distribution<double> nd;
    long agree = 0, total = 0;
    for (int n = 0; n < kC3Latents; ++n) {
      Matrix z(1, cfg.latent_dim);
      for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = nd(rng);
      const auto q = codec.quantize(z);
      RowVector residual = z.row(0);
      for (int s = 0; s < cfg.residual_stages; ++s) {
        const Matrix& book = codec.codebook(s).value;
        int best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (int k = 0; k < book.rows(); ++k) {
          double dist = 0.0;
          for (int j = 0; j < book.cols(); ++j) {
            const double diff = residual(j) - book(k, j);
            dist += diff * diff;
          }
          if (dist < best_d) {
            best_d = dist;
            best = k;
          }
        }
        ++total;
        if (q.tokens[static_cast<std::size_t>(s)] == best) ++agree;
        residual -= book.row(best);
      }
    }
    const double secs = seconds_since(t0);
    return {agree == total && secs < kC3MaxSeconds,
            std::to_string(agree) + "/" + std::to_string(total) + " stage decisions agree on " +
                std::to_string(kC3Latents) + " latents, K=8 S=2, " + fmt(secs, 3) + " s (limit 10 s)"};
  }

  // 4. Held-out reconstruction is non-increasing in tokens per window.
  Outcome c4() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto cfg = exp::ArExperimentConfig::sweep_standard();
    const auto clips = exp::make_clips(cfg.synth, cfg.clips, cfg.frontend);
    const auto rows = exp::rvq_sweep(clips, cfg.codec, {8, 16, 32, 64}, cfg.codec_train, 1);
    const double secs = seconds_since(t0);
    bool mono = true;
    std::string d = "val_loss by tokens:";
    std::ofstream csv(out_ / "sweep.csv");
    csv << "frames,tokens,val_loss,train_loss\n";
    for (std::size_t i = 0; i < rows.size(); ++i) {
      d += " " + std::to_string(rows[i].tokens) + "->" + fmt(rows[i].val_loss);
      csv << rows[i].frames << ',' << rows[i].tokens << ',' << rows[i].val_loss << ',' << rows[i].train_loss << '\n';
      if (i > 0 && rows[i].val_loss > rows[i - 1].val_loss) mono = false;
    }
    return {mono && secs < kC4MaxSeconds, d + ", " + fmt(secs, 3) + " s (limit 900 s)"};
  }

  // 5. AR training efficacy on the noise-free corpus.
  Outcome c5() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto& s = stack();
    const double secs = seconds_since(t0);
    const double bound = kC5CeFactor * std::log(static_cast<double>(s.cfg.ar.vocab));
    const auto& r = s.result;
    const bool ok = r.final_train_ce < bound && r.val_pearson >= kC5MinPearson && secs < kC5MaxSeconds;
    return {ok, "train CE/token=" + fmt(r.final_train_ce) + " (bound " + fmt(bound) + "), held-out CE=" +
                    fmt(r.val_ce) + ", held-out greedy Pearson=" + fmt(r.val_pearson) + " (min 0.8, codec ceiling " +
                    fmt(r.codec_ceiling_pearson) + "), " + std::to_string(s.clips.size()) + " clips, " +
                    fmt(secs, 4) + " s (limit 1800 s)"};
  }

  // 6. (a) incremental == full re-forward decode; (b) regulariser halves the gap.
  Outcome c6() {
    const auto& s = stack();
    const auto val = exp::split(s.clips, true);
    int equal = 0;
    for (int seed = 0; seed < kC6Seeds; ++seed) {
      ar::SamplerConfig sp;
      sp.k = 15;
      sp.seed = static_cast<std::uint64_t>(seed);
      const auto& clip = val[static_cast<std::size_t>(seed) % val.size()];
      ar::DecodeState state(s.dual, sp);
      ar::ReferenceDecoder ref(s.dual, sp);
      bool same = true;
      for (const auto& emb : clip.audio) {
        if (s.dual.decode_chunk(state, emb) != ref.decode_chunk(emb)) same = false;
      }
      if (same) ++equal;
    }
    const auto reg = exp::regularizer_experiment(1);
    const bool ok = equal == kC6Seeds && reg.ratio() <= kC6MaxGapRatio;
    return {ok, "(a) " + std::to_string(equal) + "/" + std::to_string(kC6Seeds) +
                    " seeds token-identical (top-15, 5 chunks, cache trimmed to window); (b) held-out gap " +
                    fmt(reg.gap_with) + " with vs " + fmt(reg.gap_without) + " without, ratio " + fmt(reg.ratio()) +
                    " (max 0.5)"};
  }

  // 7. Finite-difference gradient checks.
  Outcome c7() {
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(21);
    std::normal_distribution<double> nd(0.0, 0.3);

    rvq::RVQConfig qc;
    qc.slots = 2;
    qc.residual_stages = 2;
    qc.latent_dim = 3;
    qc.codebook_size = 8;
    qc.hidden_mult = 1;
    auto codec = rvq::RVQCodec::random(qc, 22);
    std::vector<motion::MotionWindow> ws(2);
    for (auto& w : ws) {
      for (int f = 0; f < 4; ++f) {
        std::array<double, motion::kLatentSize> v{};
        for (auto& x : v) x = nd(rng);
        w.frames.push_back(motion::MotionLatent::from_flat(v));
      }
    }
    const auto vq = rvq::vq_gradcheck(codec, ws);

    double ar_err = 0.0;
    for (bool dual : {true, false}) {
      ar::ARConfig ac;
      ac.vocab = 4;
      ac.d_model = 8;
      ac.layers = 1;
      ac.heads = 2;
      ac.ffn_mult = 2;
      ac.audio_dim = 6;
      ac.audio_positions = 3;
      ac.tokens_per_chunk = 4;
      ac.window = 7;
      ac.dual_head = dual;
      auto model = ar::ARModel::random(ac, 23);
      std::vector<ar::SequenceLayout> data;
      std::uniform_int_distribution<int> tok(0, ac.vocab - 1);
      for (int n = 0; n < 2; ++n) {
        std::vector<audio::AudioEmbedding> emb(2);
        std::vector<Token> toks;
        for (auto& e : emb) {
          e.values.resize(ac.audio_positions, ac.audio_dim);
          for (Eigen::Index i = 0; i < e.values.size(); ++i) e.values.data()[i] = nd(rng);
          for (int t = 0; t < ac.tokens_per_chunk; ++t) toks.push_back(static_cast<Token>(tok(rng)));
        }
        data.push_back(ar::build_sequence(ac, emb, toks));
      }
      ar_err = std::max(ar_err, ar::ar_gradcheck(model, data).max_rel_error);
    }

    etm::ETMConfig ec;
    ec.channels = 8;
    ec.heads = 2;
    ec.patch = 2;
    ec.zero_init_output = false;
    auto refiner = etm::ETMModel::random(ec, 24);
    etm::EtmSynthConfig es;
    es.height = es.width = 4;
    const auto edata = etm::make_etm_corpus(es, 2, 25);
    const auto et = etm::etm_gradcheck(refiner, edata);
    const double secs = seconds_since(t0);
    const bool ok = vq.max_rel_error < kC7MaxRelError && ar_err < kC7MaxRelError &&
                    et.max_rel_error < kC7MaxRelError && secs < kC7MaxSeconds;
    return {ok, "max rel error L_vq=" + fmt(vq.max_rel_error, 3) + " L_ar=" + fmt(ar_err, 3) +
                    " L_ETM=" + fmt(et.max_rel_error, 3) + " (limit 1e-4), " + fmt(secs, 3) + " s (limit 60 s)"};
  }

  // 8. ETM loss locality and zero-init identity.
  Outcome c8() {
    std::mt19937_64 rng(31);
    std::normal_distribution<double> nd;
    std::uniform_real_distribution<double> pos(4.0, 28.0);
    const int side = 32;
    std::vector<etm::LandmarkSet> frames;
    for (int t = 0; t < etm::kSequenceFrames; ++t) {
      etm::LandmarkSet lm;
      for (int id : etm::default_landmark_indices()) lm[id] = {pos(rng), pos(rng)};
      frames.push_back(lm);
    }
    const auto mask = etm::build_region_mask(frames, {side, side}, etm::kSequenceFrames,
                                             {etm::default_landmark_indices()}, 0.1);
    auto random_volume = [&](int t, int c) {
      auto v = etm::FeatureVolume::zeros(1, t, side, side, c);
      for (Eigen::Index i = 0; i < v.values.size(); ++i) v.values.data()[i] = nd(rng);
      return v;
    };
    const auto gt = random_volume(10, 1);
    auto pred = random_volume(10, 1);
    const double base = etm::etm_loss(pred, gt, mask);
    long perturbed = 0, changed = 0;
    // Whole-region perturbation, then single-entry perturbations.
    auto all = pred;
    for (int t = 0; t < 10; ++t) {
      for (int y = 0; y < side; ++y) {
        for (int x = 0; x < side; ++x) {
          if (t >= etm::kContextFrames && mask.at(t, y, x)) continue;
          all.at(0, t, y, x, 0) += 1e3 * nd(rng);
          auto one = pred;
          one.at(0, t, y, x, 0) += 1e6;
          ++perturbed;
          if (etm::etm_loss(one, gt, mask) != base) ++changed;
        }
      }
    }
    if (etm::etm_loss(all, gt, mask) != base) ++changed;
    // A perturbation inside the region must register.
    bool inside_moves = false;
    for (int y = 0; y < side && !inside_moves; ++y) {
      for (int x = 0; x < side && !inside_moves; ++x) {
        if (!mask.at(7, y, x)) continue;
        auto one = pred;
        one.at(0, 7, y, x, 0) += 1.0;
        inside_moves = etm::etm_loss(one, gt, mask) != base;
      }
    }

    etm::ETMConfig ec;
    const auto model = etm::ETMModel::random(ec, 32);
    long identity_bad = 0;
    for (int n = 0; n < 3; ++n) {
      auto x = etm::FeatureVolume::zeros(2, 10, 4, 4, ec.channels);
      for (Eigen::Index i = 0; i < x.values.size(); ++i) x.values.data()[i] = nd(rng);
      const auto y = model.refine(x);
      const Matrix diff = y.values - x.values;
      identity_bad += (diff.array() != 0.0).count();
      const auto pixels = random_volume(10, 1);
      identity_bad += (model.predict(pixels).values.array() != pixels.values.array()).count();
    }
    const bool ok = changed == 0 && inside_moves && identity_bad == 0;
    return {ok, std::to_string(perturbed) + " outside entries perturbed, " + std::to_string(changed) +
                    " loss changes (must be 0); inside entry moves loss: " + (inside_moves ? "yes" : "no") +
                    "; zero-init refine(x)-x nonzero entries: " + std::to_string(identity_bad)};
  }

  // 9. Streaming determinism and causality through cmd_generate.
  Outcome c9() {
    const auto& s = stack();
    const auto dir = out_ / "c9";
    fs::create_directories(dir);
    synth::SynthConfig sc = s.cfg.synth;
    sc.clip_seconds = 2.0;
    const auto full = synth::generate_clip(sc, 9001).audio;
    write_pcm(dir / "full.wav", full);
    write_pcm(dir / "cut6.wav", std::vector<double>(full.begin(), full.begin() + 6 * 3200));
    write_pcm(dir / "cut13.wav", std::vector<double>(full.begin(), full.begin() + 13 * 1600));  // 6.5 chunks
    auto gen = [&](const std::string& in, const std::string& out, bool threaded) {
      return cli({"generate", "--audio", (dir / in).string(), "--codec", s.codec_path.string(), "--ar",
                  s.ar_path.string(), "--out", (dir / out).string(), "--topk", "15", "--seed", "5", "--decode-trace",
                  "--threaded", threaded ? "true" : "false"});
    };
    bool ok = gen("full.wav", "a", true) == 0 && gen("full.wav", "b", true) == 0 &&
              gen("full.wav", "c", false) == 0 && gen("cut6.wav", "d", true) == 0 && gen("cut13.wav", "e", true) == 0;
    if (!ok) return {false, "generate failed"};
    const bool runs_equal = slurp(dir / "a/motion.tmlt") == slurp(dir / "b/motion.tmlt") &&
                            slurp(dir / "a/motion.tmlt") == slurp(dir / "c/motion.tmlt") &&
                            slurp(dir / "a/decode_trace.jsonl") == slurp(dir / "b/decode_trace.jsonl");
    // Frame payload after the 16-byte header; 300 bytes per frame.
    const std::string fa = slurp(dir / "a/motion.tmlt").substr(16);
    const std::string fd = slurp(dir / "d/motion.tmlt").substr(16);
    const std::string fe = slurp(dir / "e/motion.tmlt").substr(16);
    const std::size_t six_chunks = 6 * 5 * 300;
    const bool prefix6 = fd.size() == six_chunks && fa.compare(0, six_chunks, fd) == 0;
    const bool prefix_partial = fe.size() == 7 * 5 * 300 && fa.compare(0, six_chunks, fe, 0, six_chunks) == 0;
    const std::string ta = slurp(dir / "a/decode_trace.jsonl");
    const std::string td = slurp(dir / "d/decode_trace.jsonl");
    const bool trace_prefix = ta.compare(0, td.size(), td) == 0;
    ok = runs_equal && prefix6 && prefix_partial && trace_prefix;
    return {ok, std::string("repeat runs byte-identical (threaded and sequential): ") + (runs_equal ? "yes" : "no") +
                    "; 6-chunk truncation is a byte prefix: " + (prefix6 ? "yes" : "no") +
                    "; 6.5-chunk truncation keeps the 6 complete chunks: " + (prefix_partial ? "yes" : "no") +
                    "; decode trace prefix: " + (trace_prefix ? "yes" : "no")};
  }

  // 10. Single- vs dual-head harness.
  Outcome c10() {
    auto& s = stack();
    auto cfg = s.cfg;
    cfg.ar.dual_head = false;
    const auto single = exp::run_ar_experiment(cfg, s.clips, s.codec);
    const auto& dual = s.result;
    const double bound = kC5CeFactor * std::log(static_cast<double>(s.cfg.ar.vocab));
    std::ofstream csv(out_ / "heads_comparison.csv");
    csv << "mode,train_ce,val_ce,val_pearson,ce_bound,seconds\n";
    csv.precision(17);
    csv << "dual," << dual.final_train_ce << ',' << dual.val_ce << ',' << dual.val_pearson << ',' << bound << ','
        << dual.seconds << '\n';
    csv << "single," << single.final_train_ce << ',' << single.val_ce << ',' << single.val_pearson << ',' << bound
        << ',' << single.seconds << '\n';
    const double diff = std::abs(single.final_train_ce - dual.final_train_ce);
    const bool ok = single.final_train_ce < bound && dual.final_train_ce < bound && diff <= kC10Closeness * bound;
    return {ok, "CE/token dual=" + fmt(dual.final_train_ce) + " single=" + fmt(single.final_train_ce) +
                    " (bound " + fmt(bound) + ", |diff|=" + fmt(diff) + " <= " + fmt(kC10Closeness * bound) +
                    "), Pearson dual=" + fmt(dual.val_pearson) + " single=" + fmt(single.val_pearson) +
                    ", time dual=" + fmt(dual.seconds, 3) + " s single=" + fmt(single.seconds, 3) + " s; CSV " +
                    (out_ / "heads_comparison.csv").string()};
  }

 private:
  fs::path out_;
  std::optional<Stack> stack_;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"teller acceptance criteria"};
  std::string out = "acceptance_out";
  std::vector<int> only;
  app.add_option("--out", out, "artifact directory");
  app.add_option("--only", only, "criteria to run (default all)")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  static const char* const kNames[] = {"",
                                       "real-time arithmetic",
                                       "frame-rate identity",
                                       "RVQ oracle equivalence",
                                       "RVQ tradeoff trend",
                                       "AR training efficacy",
                                       "dual-head contract",
                                       "gradient checks",
                                       "ETM locality",
                                       "streaming determinism and causality",
                                       "single vs multi-head ablation"};
  Runner runner(out);
  const std::vector<std::function<Outcome()>> criteria = {
      [&] { return runner.c1(); }, [&] { return runner.c2(); }, [&] { return runner.c3(); },
      [&] { return runner.c4(); }, [&] { return runner.c5(); }, [&] { return runner.c6(); },
      [&] { return runner.c7(); }, [&] { return runner.c8(); }, [&] { return runner.c9(); },
      [&] { return runner.c10(); }};
  const std::set<int> selected(only.begin(), only.end());
  nlohmann::ordered_json summary = nlohmann::ordered_json::array();
  int failures = 0;
  for (int c = 1; c <= 10; ++c) {
    if (!selected.empty() && !selected.count(c)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[static_cast<std::size_t>(c - 1)]();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = Runner::seconds_since(t0);
    if (!o.pass) ++failures;
    std::cout << "criterion " << c << " " << (o.pass ? "PASS" : "FAIL") << ": " << kNames[c] << ": " << o.detail
              << " [" << fmt(secs, 3) << " s]" << std::endl;
    summary.push_back({{"criterion", c}, {"name", kNames[c]}, {"pass", o.pass}, {"detail", o.detail}, {"seconds", secs}});
  }
  std::ofstream(fs::path(out) / "acceptance.json") << summary.dump(2) << "\n";
  return failures == 0 ? 0 : 1;
}
