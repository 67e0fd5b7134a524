#include "commands.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <tuple>

#include "run_config.hpp"
#include "svg.hpp"
#include "teller/binary_io.hpp"

namespace teller::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

struct Options {
  std::string config_file;
  std::vector<std::string> sets;
  std::string out;
  std::string corpus, codec, ar, etm, audio, trace, budget = "reference";
  bool simulate = false, measure = false, dump_refined = false, decode_trace = false;
  // Named flags that map onto config keys.
  std::map<std::string, std::string> flag_values;
  std::vector<std::tuple<const CLI::App*, CLI::Option*, std::string, std::string>> flag_keys;  // owner, option, key, slot
};

struct Context {
  RunConfig cfg;
  const Options& opt;
  std::ostream& out;
  std::ostream& err;
  std::vector<std::string> written;

  fs::path out_dir() const { return fs::path(opt.out); }

  std::string path(const std::string& name) const { return (out_dir() / name).string(); }

  void emit(const std::string& p) {
    written.push_back(p);
    out << p << "\n";
  }

  void write_text(const std::string& name, const std::string& text) {
    const auto p = path(name);
    std::ofstream f(p, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + p);
    f << text;
    if (!f) throw std::runtime_error("write failed: " + p);
    emit(p);
  }

  // Resolved-config echo: re-loadable with --config.
  void echo_config() {
    fs::create_directories(out_dir());
    write_text("resolved_config.txt", "# config hash " + cfg.hash() + "\n" + cfg.serialize());
    err << "config hash " << cfg.hash() << "\n";
  }

  void progress(const std::string& msg) const { err << msg << "\n"; }
};

void add_common(CLI::App* sub, Options& o, bool needs_out = true) {
  sub->add_option("--config", o.config_file, "key = value config file")->check(CLI::ExistingFile);
  sub->add_option("--set", o.sets, "override one config key (key=value)");
  auto* out = sub->add_option("--out", o.out, "output directory");
  if (needs_out) out->required();
}

void add_key_flag(CLI::App* sub, Options& o, const std::string& flag, const std::string& key,
                  const std::string& help) {
  const std::string slot = flag + "|" + key;
  auto* opt = sub->add_option(flag, o.flag_values[slot], help);
  o.flag_keys.emplace_back(sub, opt, key, slot);
}

void apply_config(RunConfig& cfg, const Options& o, const CLI::App* sub) {
  if (!o.config_file.empty()) cfg.load_file(o.config_file);
  for (const auto& s : o.sets) cfg.set_assignment(s);
  for (const auto& [owner, opt, key, slot] : o.flag_keys) {
    if (owner != sub || opt->count() == 0) continue;
    cfg.set(key, o.flag_values.at(slot));
  }
}

std::string json_number_or_null(double v) { return std::isfinite(v) ? format_double(v) : "null"; }

json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

void write_history(Context& ctx, const std::string& name, const std::vector<train::EpochRecord>& h) {
  const auto p = ctx.path(name);
  train::write_history_csv(p, h);
  ctx.emit(p);
}

exp::Progress progress_fn(Context& ctx) {
  return [&ctx](const std::string& s) { ctx.progress(s); };
}

// ---- synth ----

void cmd_synth(Context& ctx) {
  const int n = ctx.cfg.clips();
  if (n < 1) throw UsageError("--clips must be at least 1");
  ctx.echo_config();
  const auto corpus = synth::write_corpus(ctx.cfg.synth(), n, ctx.opt.out);
  ctx.emit(corpus.path("manifest.jsonl"));
  ctx.emit(corpus.path("corpus.json"));
}

synth::Corpus open_corpus(const std::string& dir) {
  if (dir.empty()) throw UsageError("--corpus is required");
  if (!fs::exists(fs::path(dir) / "manifest.jsonl")) throw std::runtime_error("no corpus at " + dir);
  return synth::read_corpus(dir);
}

// ---- train ----

void cmd_train_rvq(Context& ctx) {
  const auto corpus = open_corpus(ctx.opt.corpus);
  ctx.echo_config();
  const auto clips = exp::load_clips(corpus, ctx.cfg.frontend());
  const auto train_w = exp::all_windows(exp::split(clips, false));
  const auto val_w = exp::all_windows(exp::split(clips, true));
  auto tc = ctx.cfg.train("rvq_train");
  auto codec = rvq::RVQCodec::random(ctx.cfg.rvq(), tc.seed);
  rvq::RvqTrainOptions opts;
  opts.hooks.after_epoch = [&](int e) {
    if ((e + 1) % 10 == 0 || e + 1 == tc.epochs) ctx.progress("rvq epoch " + std::to_string(e + 1));
  };
  const auto fit = rvq::train_codebooks(codec, train_w, tc, opts);
  const auto model_path = ctx.path("codec.trvq");
  codec.save(model_path);
  ctx.emit(model_path);
  write_history(ctx, "rvq_loss.csv", fit.history);
  json j;
  j["tokens_per_window"] = codec.config().tokens_per_window();
  j["train_recon"] = num(rvq::reconstruction_error(codec, train_w));
  j["val_recon"] = val_w.empty() ? json(nullptr) : num(rvq::reconstruction_error(codec, val_w));
  j["config_hash"] = ctx.cfg.hash();
  ctx.write_text("rvq_eval.json", j.dump(2) + "\n");
  std::vector<double> x, y;
  for (const auto& h : fit.history) {
    x.push_back(h.epoch);
    y.push_back(h.loss);
  }
  ctx.write_text("rvq_loss.svg", line_svg(x, y, "RVQ training loss", "epoch", "loss"));
}

void cmd_train_ar(Context& ctx) {
  const auto corpus = open_corpus(ctx.opt.corpus);
  if (ctx.opt.codec.empty()) throw UsageError("--codec is required");
  const auto& mode = ctx.cfg.get("ar.mode");
  std::vector<bool> modes;
  if (mode == "dual") {
    modes = {true};
  } else if (mode == "single") {
    modes = {false};
  } else if (mode == "both") {
    modes = {true, false};
  } else {
    throw UsageError("--heads must be dual, single or both");
  }
  ctx.echo_config();
  const auto codec = rvq::RVQCodec::load(ctx.opt.codec);
  const auto clips = exp::load_clips(corpus, ctx.cfg.frontend());
  const double bound = 0.4 * std::log(static_cast<double>(codec.config().codebook_size));

  std::string csv = "mode,train_ce,val_ce,val_pearson,ce_bound,mean_abs_gap,seconds,config_hash\n";
  for (bool dual : modes) {
    const std::string tag = dual ? "dual" : "single";
    const std::string stem = dual ? "ar" : "ar_single";
    const auto ecfg = ctx.cfg.experiment(codec.config(), dual);
    ar::ARModel model;
    const auto res = exp::run_ar_experiment(ecfg, clips, codec, &model, progress_fn(ctx));
    const auto model_path = ctx.path(stem + ".tarm");
    model.save(model_path);
    ctx.emit(model_path);
    write_history(ctx, stem + "_loss.csv", res.ar_history);
    json j;
    j["mode"] = tag;
    j["train_ce"] = num(res.final_train_ce);
    j["val_ce"] = num(res.val_ce);
    j["ce_bound"] = bound;
    j["val_pearson"] = num(res.val_pearson);
    j["codec_ceiling_pearson"] = num(res.codec_ceiling_pearson);
    j["mean_abs_gap"] = num(res.mean_abs_gap);
    j["seconds"] = res.seconds;
    j["config_hash"] = ctx.cfg.hash();
    ctx.write_text(stem + "_eval.json", j.dump(2) + "\n");
    csv += tag + "," + json_number_or_null(res.final_train_ce) + "," + json_number_or_null(res.val_ce) + "," +
           json_number_or_null(res.val_pearson) + "," + format_double(bound) + "," +
           json_number_or_null(res.mean_abs_gap) + "," + format_double(res.seconds) + "," + ctx.cfg.hash() + "\n";
  }
  ctx.write_text("heads_comparison.csv", csv);
}

void cmd_train_etm(Context& ctx) {
  ctx.echo_config();
  const int n = static_cast<int>(ctx.cfg.get_int("etm_synth.samples"));
  if (n < 1) throw UsageError("etm_synth.samples must be at least 1");
  auto tc = ctx.cfg.train("etm_train");
  const auto data = etm::make_etm_corpus(ctx.cfg.etm_synth(), n, mix_seed(tc.seed, 1));
  auto model = etm::ETMModel::random(ctx.cfg.etm(), mix_seed(tc.seed, 2));
  etm::EtmTrainOptions opts;
  opts.warn = [&](const std::string& w) { ctx.progress("warning: " + w); };
  opts.hooks.after_epoch = [&](int e) {
    if ((e + 1) % 10 == 0 || e + 1 == tc.epochs) ctx.progress("etm epoch " + std::to_string(e + 1));
  };
  const auto res = etm::train_etm(model, data, tc, opts);
  const auto model_path = ctx.path("etm.tetm");
  model.save(model_path);
  ctx.emit(model_path);
  write_history(ctx, "etm_loss.csv", res.fit.history);
  json j;
  j["initial_loss"] = num(res.initial_loss);
  j["final_loss"] = num(res.final_loss);
  j["skipped"] = res.skipped;
  j["config_hash"] = ctx.cfg.hash();
  ctx.write_text("etm_eval.json", j.dump(2) + "\n");
}

// ---- generate ----

// Refined frames: "TFVL", u16 version 1, u16 reserved, u32 b/t/h/w/c, f32 values.
std::string encode_volume(const etm::FeatureVolume& v) {
  std::ostringstream ss;
  io::Writer w(ss);
  w.magic("TFVL");
  w.u16(1);
  w.u16(0);
  for (int d : {v.b, v.t, v.h, v.w, v.c}) w.u32(static_cast<std::uint32_t>(d));
  w.f32_block(v.values);
  return ss.str();
}

void cmd_generate(Context& ctx) {
  if (ctx.opt.audio.empty() || ctx.opt.codec.empty() || ctx.opt.ar.empty()) {
    throw UsageError("generate needs --audio, --codec and --ar");
  }
  if (ctx.opt.dump_refined && ctx.opt.etm.empty()) throw UsageError("--dump-refined needs --etm");
  ctx.echo_config();
  const auto pcm = audio::read_wav(ctx.opt.audio);
  const auto codec = rvq::RVQCodec::load(ctx.opt.codec);
  const auto model = ar::ARModel::load(ctx.opt.ar);
  std::optional<etm::ETMModel> refiner;
  if (!ctx.opt.etm.empty()) refiner = etm::ETMModel::load(ctx.opt.etm);

  auto frontend = ctx.cfg.frontend();
  if (frontend.bins != model.config().audio_dim) {
    ctx.progress("frontend.bins set to " + std::to_string(model.config().audio_dim) + " to match the AR model");
    frontend.bins = model.config().audio_dim;
  }
  auto pcfg = ctx.cfg.pipeline(frontend);
  pcfg.keep_decode_trace = ctx.opt.decode_trace;
  pipeline::StreamingModels models{&codec, &model, refiner ? &*refiner : nullptr};
  pipeline::BufferSource source(pcm.samples, pcm.sample_rate_hz);
  const auto res = pipeline::run_streaming(source, models, pcfg);

  fs::create_directories(ctx.out_dir());
  const auto motion_path = ctx.path("motion.tmlt");
  motion::write_motion_file(motion_path, res.motion);
  ctx.emit(motion_path);
  const auto trace_path = ctx.path("trace.csv");
  pipeline::export_trace(res.trace, trace_path);
  ctx.emit(trace_path);
  if (ctx.opt.decode_trace) ctx.write_text("decode_trace.jsonl", ar::trace_to_jsonl(res.decode_trace));
  if (ctx.opt.dump_refined && !res.refined.empty()) {
    auto all = res.refined.front();
    for (std::size_t k = 1; k < res.refined.size(); ++k) all = etm::concat_frames(all, res.refined[k]);
    ctx.write_text("refined.tfvl", encode_volume(all));
  }
  ctx.progress(std::to_string(res.motion.frames.size()) + " frames, " + std::to_string(res.tokens.size()) +
               " tokens");
}

// ---- bench ----

std::vector<std::vector<double>> budget_stages(const pipeline::StageBudget& b, int chunks) {
  const double ar_ms = b.stage1_total_ms - b.motion_decoder_ms;
  return std::vector<std::vector<double>>(
      static_cast<std::size_t>(chunks), {b.audio_encoder_ms, ar_ms, b.motion_decoder_ms, 0.0, b.stage2_total_ms});
}

pipeline::StageBudget load_budget(const std::string& spec) {
  if (spec == "reference") return pipeline::StageBudget::reference();
  std::ifstream in(spec);
  if (!in) throw UsageError("--budget must be 'reference' or a JSON file");
  const auto j = nlohmann::json::parse(in);
  pipeline::StageBudget b;
  b.audio_encoder_ms = j.at("audio_encoder_ms");
  b.stage1_total_ms = j.at("stage1_total_ms");
  b.ar_per_16_tokens_ms = j.at("ar_per_16_tokens_ms");
  b.motion_decoder_ms = j.at("motion_decoder_ms");
  b.stage2_total_ms = j.at("stage2_total_ms");
  b.vae_ms = j.at("vae_ms");
  b.etm_ms = j.at("etm_ms");
  return b;
}

void cmd_bench(Context& ctx) {
  if (ctx.opt.simulate == ctx.opt.measure) throw UsageError("bench needs exactly one of --simulate or --measure");
  const int chunks = static_cast<int>(ctx.cfg.get_int("bench.chunks"));
  if (chunks < 1) throw UsageError("--chunks must be at least 1");
  const auto& mode_name = ctx.cfg.get("bench.mode");
  pipeline::ScheduleMode mode;
  if (mode_name == "sequential") {
    mode = pipeline::ScheduleMode::kSequential;
  } else if (mode_name == "pipelined") {
    mode = pipeline::ScheduleMode::kPipelined;
  } else {
    throw UsageError("--mode must be sequential or pipelined");
  }
  ctx.echo_config();

  if (ctx.opt.simulate) {
    const auto budget = load_budget(ctx.opt.budget);
    const auto report = pipeline::simulate_schedule(budget, chunks, mode);
    ctx.write_text("report.json", pipeline::report_to_json(report));
    ctx.write_text("latency.svg", latency_svg(budget_stages(budget, chunks), pipeline::kChunkMs,
                                              "simulated per-chunk latency"));
    return;
  }

  // Measured run: trained models when given, otherwise seeded toy models.
  const std::uint64_t seed = ctx.cfg.get_uint("sampler.seed");
  auto frontend = ctx.cfg.frontend();
  const auto codec = ctx.opt.codec.empty() ? rvq::RVQCodec::random(ctx.cfg.rvq(), mix_seed(seed, 11))
                                           : rvq::RVQCodec::load(ctx.opt.codec);
  const auto model = ctx.opt.ar.empty()
                         ? ar::ARModel::random(ctx.cfg.ar(codec.config(), frontend.bins, true), mix_seed(seed, 12))
                         : ar::ARModel::load(ctx.opt.ar);
  if (ctx.opt.codec.empty() || ctx.opt.ar.empty()) ctx.err << "note: timing untrained toy models\n";
  frontend.bins = model.config().audio_dim;
  const auto refiner = ctx.opt.etm.empty() ? etm::ETMModel::random(ctx.cfg.etm(), mix_seed(seed, 13))
                                           : etm::ETMModel::load(ctx.opt.etm);
  std::vector<double> samples;
  int rate = 16000;
  if (!ctx.opt.audio.empty()) {
    const auto pcm = audio::read_wav(ctx.opt.audio);
    samples = pcm.samples;
    rate = pcm.sample_rate_hz;
  } else {
    auto sc = ctx.cfg.synth();
    sc.clip_seconds = chunks * pipeline::kChunkMs / 1000.0;
    const auto clip = synth::generate_clip(sc, mix_seed(seed, 14));
    samples = clip.audio;
    rate = clip.sample_rate_hz;
  }
  auto pcfg = ctx.cfg.pipeline(frontend);
  pcfg.threaded = mode == pipeline::ScheduleMode::kPipelined;
  pipeline::StreamingModels models{&codec, &model, &refiner};
  pipeline::BufferSource source(samples, rate);
  const auto res = pipeline::run_streaming(source, models, pcfg);
  const auto report = pipeline::measured_report(res.trace);
  ctx.write_text("report.json", pipeline::report_to_json(report));
  const auto trace_path = ctx.path("trace.csv");
  pipeline::export_trace(res.trace, trace_path);
  ctx.emit(trace_path);
  ctx.write_text("latency.svg", latency_svg(stage_matrix(res.trace), pipeline::kChunkMs, "measured per-chunk latency"));
}

// ---- sweep ----

void cmd_sweep(Context& ctx) {
  const auto tokens = ctx.cfg.get_int_list("sweep.tokens");
  const auto base = ctx.cfg.rvq();
  for (int t : tokens) {
    if (t < base.slots || t % base.slots != 0) {
      throw UsageError("sweep tokens must be positive multiples of rvq.slots (" + std::to_string(base.slots) + ")");
    }
  }
  ctx.echo_config();
  std::vector<exp::ClipData> clips;
  if (!ctx.opt.corpus.empty()) {
    clips = exp::load_clips(open_corpus(ctx.opt.corpus), ctx.cfg.frontend());
  } else {
    const int n = ctx.cfg.clips();
    if (n < 2) throw UsageError("synth.clips must be at least 2 for an in-memory sweep");
    clips = exp::make_clips(ctx.cfg.synth(), n, ctx.cfg.frontend());
  }
  const auto tc = ctx.cfg.train("rvq_train");
  const auto rows = exp::rvq_sweep(clips, base, tokens, tc, tc.seed, progress_fn(ctx));
  std::string csv = "frames,tokens,val_loss,train_loss,config_hash\n";
  std::vector<double> x, y;
  for (const auto& r : rows) {
    RunConfig row_cfg = ctx.cfg;
    row_cfg.set("rvq.stages", std::to_string(r.tokens / base.slots));
    row_cfg.set("sweep.tokens", std::to_string(r.tokens));
    csv += std::to_string(r.frames) + "," + std::to_string(r.tokens) + "," + format_double(r.val_loss) + "," +
           format_double(r.train_loss) + "," + row_cfg.hash() + "\n";
    x.push_back(r.tokens);
    y.push_back(r.val_loss);
  }
  ctx.write_text("sweep.csv", csv);
  ctx.write_text("sweep.svg", line_svg(x, y, "held-out reconstruction vs tokens per window", "tokens", "loss"));
}

// ---- trace-export ----

void cmd_trace_export(Context& ctx) {
  if (ctx.opt.trace.empty()) throw UsageError("--trace is required");
  const auto trace = pipeline::import_trace(ctx.opt.trace);
  trace.validate();
  fs::create_directories(ctx.out_dir());
  ctx.write_text("trace.csv", pipeline::trace_to_csv(trace));
  ctx.write_text("report.json", pipeline::report_to_json(pipeline::measured_report(trace)));
  ctx.write_text("latency.svg", latency_svg(stage_matrix(trace), pipeline::kChunkMs, "per-chunk latency"));
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"teller: audio-driven motion token stack"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");
  Options o;

  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic corpus");
  add_common(synth_cmd, o);
  add_key_flag(synth_cmd, o, "--clips", "synth.clips", "number of clips");
  add_key_flag(synth_cmd, o, "--seed", "synth.seed", "master seed");
  add_key_flag(synth_cmd, o, "--bands", "synth.bands", "tone bands");

  auto* train_cmd = app.add_subcommand("train", "train one stage");
  train_cmd->require_subcommand(1);
  auto* train_rvq = train_cmd->add_subcommand("rvq", "train the motion tokenizer");
  add_common(train_rvq, o);
  train_rvq->add_option("--corpus", o.corpus, "corpus directory")->required();
  add_key_flag(train_rvq, o, "--stages", "rvq.stages", "residual stages per slot");
  add_key_flag(train_rvq, o, "--epochs", "rvq_train.epochs", "epochs");
  add_key_flag(train_rvq, o, "--seed", "rvq_train.seed", "seed");
  auto* train_ar = train_cmd->add_subcommand("ar", "train the token transformer");
  add_common(train_ar, o);
  train_ar->add_option("--corpus", o.corpus, "corpus directory")->required();
  train_ar->add_option("--codec", o.codec, "trained TRVQ codec")->required();
  add_key_flag(train_ar, o, "--heads", "ar.mode", "dual | single | both");
  add_key_flag(train_ar, o, "--epochs", "ar_train.epochs", "epochs");
  add_key_flag(train_ar, o, "--seed", "ar_train.seed", "seed");
  auto* train_etm = train_cmd->add_subcommand("etm", "train the temporal refiner on synthetic frames");
  add_common(train_etm, o);
  add_key_flag(train_etm, o, "--samples", "etm_synth.samples", "training sequences");
  add_key_flag(train_etm, o, "--epochs", "etm_train.epochs", "epochs");
  add_key_flag(train_etm, o, "--seed", "etm_train.seed", "seed");

  auto* gen = app.add_subcommand("generate", "stream a WAV file through the trained models");
  add_common(gen, o);
  gen->add_option("--audio", o.audio, "input WAV")->required();
  gen->add_option("--codec", o.codec, "TRVQ codec")->required();
  gen->add_option("--ar", o.ar, "TARM model")->required();
  gen->add_option("--etm", o.etm, "TETM refiner (optional)");
  gen->add_flag("--dump-refined", o.dump_refined, "write refined frames (needs --etm)");
  gen->add_flag("--decode-trace", o.decode_trace, "write per-token decode trace JSONL");
  add_key_flag(gen, o, "--topk", "sampler.k", "top-k (1 = greedy)");
  add_key_flag(gen, o, "--temperature", "sampler.temperature", "sampling temperature");
  add_key_flag(gen, o, "--seed", "sampler.seed", "sampling seed");
  add_key_flag(gen, o, "--threaded", "pipeline.threaded", "true | false");

  auto* bench = app.add_subcommand("bench", "latency budget simulation or measurement");
  add_common(bench, o);
  bench->add_flag("--simulate", o.simulate, "simulate from a stage budget");
  bench->add_flag("--measure", o.measure, "measure a streaming run");
  bench->add_option("--budget", o.budget, "'reference' or a budget JSON file");
  bench->add_option("--codec", o.codec, "TRVQ codec (default: toy)");
  bench->add_option("--ar", o.ar, "TARM model (default: toy)");
  bench->add_option("--etm", o.etm, "TETM refiner (default: toy)");
  bench->add_option("--audio", o.audio, "input WAV (default: synthetic)");
  add_key_flag(bench, o, "--chunks", "bench.chunks", "chunks to schedule");
  add_key_flag(bench, o, "--mode", "bench.mode", "sequential | pipelined");
  add_key_flag(bench, o, "--seed", "sampler.seed", "seed");

  auto* sweep = app.add_subcommand("sweep", "tokens-per-window sweep of the tokenizer");
  add_common(sweep, o);
  sweep->add_option("--corpus", o.corpus, "corpus directory (default: generated in memory)");
  add_key_flag(sweep, o, "--tokens", "sweep.tokens", "comma-separated tokens per window");
  add_key_flag(sweep, o, "--clips", "synth.clips", "in-memory corpus size");
  add_key_flag(sweep, o, "--bands", "synth.bands", "in-memory corpus bands");
  add_key_flag(sweep, o, "--epochs", "rvq_train.epochs", "epochs per run");
  add_key_flag(sweep, o, "--seed", "rvq_train.seed", "seed");

  auto* trace_cmd = app.add_subcommand("trace-export", "re-export a trace CSV with a report and chart");
  add_common(trace_cmd, o);
  trace_cmd->add_option("--trace", o.trace, "trace CSV")->required();

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    return 2;
  }

  try {
    CLI::App* leaf = nullptr;
    if (synth_cmd->parsed()) leaf = synth_cmd;
    for (auto* s : {train_rvq, train_ar, train_etm, gen, bench, sweep, trace_cmd}) {
      if (s->parsed()) leaf = s;
    }
    if (!leaf) throw UsageError("no command given");
    Context ctx{RunConfig{}, o, out, err, {}};
    apply_config(ctx.cfg, o, leaf);
    if (leaf == synth_cmd) cmd_synth(ctx);
    else if (leaf == train_rvq) cmd_train_rvq(ctx);
    else if (leaf == train_ar) cmd_train_ar(ctx);
    else if (leaf == train_etm) cmd_train_etm(ctx);
    else if (leaf == gen) cmd_generate(ctx);
    else if (leaf == bench) cmd_bench(ctx);
    else if (leaf == sweep) cmd_sweep(ctx);
    else cmd_trace_export(ctx);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace teller::cli
