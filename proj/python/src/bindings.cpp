#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "cli/commands.hpp"
#include "teller/experiments.hpp"
#include "teller/pipeline.hpp"

namespace py = pybind11;
using namespace teller;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Matrix frames_to_matrix(const std::vector<motion::MotionLatent>& frames) {
  Matrix m(static_cast<Eigen::Index>(frames.size()), motion::kLatentSize);
  for (std::size_t f = 0; f < frames.size(); ++f) {
    for (int k = 0; k < motion::kLatentSize; ++k) m(static_cast<Eigen::Index>(f), k) = frames[f].flat()[static_cast<std::size_t>(k)];
  }
  return m;
}

std::vector<motion::MotionLatent> matrix_to_frames(const Matrix& m) {
  if (m.cols() != motion::kLatentSize) throw ValidationError("expected frames x 75");
  std::vector<motion::MotionLatent> out;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    out.push_back(motion::MotionLatent::from_flat(std::span<const double>(m.row(r).data(), motion::kLatentSize)));
  }
  return out;
}

std::vector<motion::MotionWindow> to_windows(const Matrix& frames, int window_frames) {
  const auto f = matrix_to_frames(frames);
  return motion::split_windows(f, window_frames, 20.0);
}

Array volume_to_array(const etm::FeatureVolume& v) {
  Array a({v.b, v.t, v.h, v.w, v.c});
  std::copy(v.values.data(), v.values.data() + v.values.size(), a.mutable_data());
  return a;
}

etm::FeatureVolume array_to_volume(const Array& a) {
  if (a.ndim() != 5) throw ValidationError("expected a (b, t, h, w, c) array");
  auto v = etm::FeatureVolume::zeros(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)),
                                     static_cast<int>(a.shape(2)), static_cast<int>(a.shape(3)),
                                     static_cast<int>(a.shape(4)));
  std::copy(a.data(), a.data() + a.size(), v.values.data());
  return v;
}

py::dict report_dict(const pipeline::ThroughputReport& r) {
  py::dict d;
  d["fps"] = r.fps;
  d["realtime_factor"] = r.realtime_factor;
  d["max_chunk_latency_ms"] = r.max_chunk_latency_ms;
  d["verdict"] = r.verdict;
  d["chunks"] = r.chunks;
  d["frames"] = r.frames;
  d["per_chunk_ms"] = r.per_chunk_ms;
  return d;
}

std::vector<audio::AudioEmbedding> embed_audio(const std::vector<double>& samples, int rate, int bins) {
  audio::FrontendConfig fc;
  fc.bins = bins;
  std::vector<audio::AudioEmbedding> out;
  for (const auto& c : audio::chunk_stream(samples, rate)) out.push_back(audio::embed_chunk(c, fc));
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Audio-driven motion token stack: tokenizer, token transformer, temporal refiner, streaming budget.";

  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_IOError);

  // ---- motion ----
  m.def("read_motion", [](const std::string& path) {
    const auto clip = motion::read_motion_file(path);
    return py::make_tuple(frames_to_matrix(clip.frames), clip.frame_rate_hz);
  }, py::arg("path"), "Read a TMLT file; returns (frames x 75 array, frame rate).");
  m.def("write_motion", [](const std::string& path, const Matrix& frames, double rate) {
    motion::write_motion_file(path, {matrix_to_frames(frames), rate});
  }, py::arg("path"), py::arg("frames"), py::arg("frame_rate_hz") = 25.0);
  m.def("interpolate_4_to_5", [](const Matrix& frames) {
    motion::MotionWindow w{matrix_to_frames(frames), 20.0};
    return frames_to_matrix(motion::interpolate_4_to_5(w).frames);
  }, py::arg("frames"));

  // ---- audio ----
  m.def("embed_audio", [](const std::vector<double>& samples, int rate, int bins) {
    std::vector<Matrix> out;
    for (const auto& e : embed_audio(samples, rate, bins)) out.push_back(e.values);
    return out;
  }, py::arg("samples"), py::arg("sample_rate_hz") = 16000, py::arg("bins") = 64,
     "Chunk into 200 ms pieces and return one (10 x bins) log-mel matrix per chunk.");
  m.def("read_wav", [](const std::string& path) {
    auto pcm = audio::read_wav(path);
    return py::make_tuple(pcm.samples, pcm.sample_rate_hz);
  });
  m.def("write_wav", [](const std::string& path, const std::vector<double>& samples, int rate) {
    audio::write_wav(path, {samples, rate});
  }, py::arg("path"), py::arg("samples"), py::arg("sample_rate_hz") = 16000);

  // ---- rvq ----
  py::class_<rvq::RVQConfig>(m, "RVQConfig")
      .def(py::init<>())
      .def_static("for_tokens", &rvq::RVQConfig::for_tokens, py::arg("tokens_per_window"), py::arg("slots") = 8)
      .def_readwrite("window_frames", &rvq::RVQConfig::window_frames)
      .def_readwrite("slots", &rvq::RVQConfig::slots)
      .def_readwrite("residual_stages", &rvq::RVQConfig::residual_stages)
      .def_readwrite("latent_dim", &rvq::RVQConfig::latent_dim)
      .def_readwrite("codebook_size", &rvq::RVQConfig::codebook_size)
      .def_readwrite("hidden_mult", &rvq::RVQConfig::hidden_mult)
      .def_readwrite("commitment_weight", &rvq::RVQConfig::commitment_weight)
      .def_readwrite("ema_decay", &rvq::RVQConfig::ema_decay)
      .def_property_readonly("tokens_per_window", &rvq::RVQConfig::tokens_per_window);

  py::class_<rvq::RVQCodec>(m, "RVQCodec")
      .def_static("random", &rvq::RVQCodec::random, py::arg("config"), py::arg("seed") = 0)
      .def_static("load", &rvq::RVQCodec::load)
      .def("save", &rvq::RVQCodec::save)
      .def_property_readonly("config", &rvq::RVQCodec::config)
      .def("codebook", [](const rvq::RVQCodec& c, int s) { return c.codebook(s).value; })
      .def("encode", [](const rvq::RVQCodec& c, const Matrix& frames) {
        return c.encode({matrix_to_frames(frames), 20.0});
      }, "Encode one window (window_frames x 75) to slots x latent_dim.")
      .def("quantize", [](const rvq::RVQCodec& c, const Matrix& z) {
        auto q = c.quantize(z);
        return py::make_tuple(q.tokens, q.z_hat);
      })
      .def("dequantize", [](const rvq::RVQCodec& c, const std::vector<Token>& t) { return c.dequantize(t); })
      .def("decode", [](const rvq::RVQCodec& c, const Matrix& z_hat) { return frames_to_matrix(c.decode(z_hat).frames); })
      .def("tokenize", [](const rvq::RVQCodec& c, const Matrix& frames) {
        return c.tokenize(to_windows(frames, c.config().window_frames)).tokens;
      }, "Tokens for every complete window of a (frames x 75) array.")
      .def("detokenize", [](const rvq::RVQCodec& c, const std::vector<Token>& tokens) {
        rvq::TokenSequence seq{tokens, static_cast<int>(tokens.size()) / c.config().tokens_per_window()};
        std::vector<motion::MotionLatent> frames;
        for (const auto& w : c.detokenize(seq)) frames.insert(frames.end(), w.frames.begin(), w.frames.end());
        return frames_to_matrix(frames);
      })
      .def("reconstruction_error", [](const rvq::RVQCodec& c, const Matrix& frames) {
        return rvq::reconstruction_error(c, to_windows(frames, c.config().window_frames));
      });

  // ---- ar ----
  py::class_<ar::ARConfig>(m, "ARConfig")
      .def(py::init<>())
      .def_readwrite("vocab", &ar::ARConfig::vocab)
      .def_readwrite("d_model", &ar::ARConfig::d_model)
      .def_readwrite("layers", &ar::ARConfig::layers)
      .def_readwrite("heads", &ar::ARConfig::heads)
      .def_readwrite("ffn_mult", &ar::ARConfig::ffn_mult)
      .def_readwrite("audio_dim", &ar::ARConfig::audio_dim)
      .def_readwrite("audio_positions", &ar::ARConfig::audio_positions)
      .def_readwrite("tokens_per_chunk", &ar::ARConfig::tokens_per_chunk)
      .def_readwrite("dual_head", &ar::ARConfig::dual_head)
      .def_readwrite("window", &ar::ARConfig::window)
      .def_readwrite("alibi", &ar::ARConfig::alibi)
      .def_readwrite("reg_weight", &ar::ARConfig::reg_weight);

  py::class_<ar::ARModel>(m, "ARModel")
      .def_static("random", &ar::ARModel::random, py::arg("config"), py::arg("seed") = 0, py::arg("zero_heads") = false)
      .def_static("load", &ar::ARModel::load)
      .def("save", &ar::ARModel::save)
      .def_property_readonly("config", &ar::ARModel::config)
      .def("generate", [](const ar::ARModel& model, const std::vector<Matrix>& audio, int k, double temperature,
                          std::uint64_t seed) {
        ar::SamplerConfig sp;
        sp.k = k;
        sp.temperature = temperature;
        sp.seed = seed;
        ar::DecodeState state(model, sp);
        std::vector<Token> out;
        for (std::size_t c = 0; c < audio.size(); ++c) {
          const auto toks = model.decode_chunk(state, {audio[c], static_cast<int>(c)});
          out.insert(out.end(), toks.begin(), toks.end());
        }
        return out;
      }, py::arg("audio"), py::arg("k") = 15, py::arg("temperature") = 1.0, py::arg("seed") = 0,
         "Incremental decode of one token block per audio chunk embedding.")
      .def("loss", [](const ar::ARModel& model, const std::vector<Matrix>& audio, const std::vector<Token>& tokens) {
        std::vector<audio::AudioEmbedding> emb;
        for (std::size_t c = 0; c < audio.size(); ++c) emb.push_back({audio[c], static_cast<int>(c)});
        const std::vector<ar::SequenceLayout> data{ar::build_sequence(model.config(), emb, tokens)};
        const auto l = model.evaluate(data);
        py::dict d;
        d["head0"] = l.head0;
        d["head1"] = l.head1;
        d["reg"] = l.reg;
        d["total"] = l.total;
        d["per_token_ce"] = l.per_token_ce();
        d["mean_abs_gap"] = l.mean_abs_gap;
        return d;
      }, py::arg("audio"), py::arg("tokens"));

  // ---- etm ----
  py::class_<etm::ETMConfig>(m, "ETMConfig")
      .def(py::init<>())
      .def_readwrite("channels", &etm::ETMConfig::channels)
      .def_readwrite("heads", &etm::ETMConfig::heads)
      .def_readwrite("patch", &etm::ETMConfig::patch)
      .def_readwrite("pixel_channels", &etm::ETMConfig::pixel_channels)
      .def_readwrite("time_embedding", &etm::ETMConfig::time_embedding)
      .def_readwrite("zero_init_output", &etm::ETMConfig::zero_init_output);

  py::class_<etm::ETMModel>(m, "ETMModel")
      .def_static("random", &etm::ETMModel::random, py::arg("config"), py::arg("seed") = 0)
      .def_static("load", &etm::ETMModel::load)
      .def("save", &etm::ETMModel::save)
      .def("refine", [](const etm::ETMModel& e, const Array& x) { return volume_to_array(e.refine(array_to_volume(x))); },
           "Refine a (b, t, h, w, channels) feature volume.")
      .def("predict", [](const etm::ETMModel& e, const Array& x) { return volume_to_array(e.predict(array_to_volume(x))); },
           "Pixels (b, t, H, W, C) through codec, refiner and back.");

  m.def("region_mask", [](const std::vector<std::map<int, std::pair<double, double>>>& frames, int height, int width,
                          int t, double margin) {
    std::vector<etm::LandmarkSet> sets;
    for (const auto& f : frames) {
      etm::LandmarkSet s;
      for (const auto& [id, p] : f) s[id] = {p.first, p.second};
      sets.push_back(s);
    }
    const auto mask = etm::build_region_mask(sets, {height, width}, t, std::vector<std::vector<int>>{etm::default_landmark_indices()}, margin);
    py::array_t<std::uint8_t> a({mask.t, mask.h, mask.w});
    std::copy(mask.values.begin(), mask.values.end(), a.mutable_data());
    return a;
  }, py::arg("landmarks"), py::arg("height"), py::arg("width"), py::arg("t") = 10, py::arg("margin") = 0.1,
     "Union-of-boxes mask over landmarks 93, 323, 152; landmarks are {id: (x, y)} per frame.");
  m.def("etm_loss", [](const Array& pred, const Array& gt, const py::array_t<std::uint8_t>& mask) {
    if (mask.ndim() != 3) throw ValidationError("mask must be (t, h, w)");
    etm::RegionMask rm;
    rm.t = static_cast<int>(mask.shape(0));
    rm.h = static_cast<int>(mask.shape(1));
    rm.w = static_cast<int>(mask.shape(2));
    rm.values.assign(mask.data(), mask.data() + mask.size());
    return etm::etm_loss(array_to_volume(pred), array_to_volume(gt), rm);
  }, py::arg("pred"), py::arg("gt"), py::arg("mask"));

  // ---- pipeline ----
  m.def("simulate_schedule", [](int chunks, const std::string& mode, const std::optional<py::dict>& budget) {
    auto b = pipeline::StageBudget::reference();
    if (budget) {
      const auto& d = *budget;
      auto get = [&](const char* k, double& v) {
        if (d.contains(k)) v = d[k].cast<double>();
      };
      get("audio_encoder_ms", b.audio_encoder_ms);
      get("stage1_total_ms", b.stage1_total_ms);
      get("ar_per_16_tokens_ms", b.ar_per_16_tokens_ms);
      get("motion_decoder_ms", b.motion_decoder_ms);
      get("stage2_total_ms", b.stage2_total_ms);
      get("vae_ms", b.vae_ms);
      get("etm_ms", b.etm_ms);
    }
    if (mode != "sequential" && mode != "pipelined") throw ValidationError("mode must be sequential or pipelined");
    const auto sm = mode == "sequential" ? pipeline::ScheduleMode::kSequential : pipeline::ScheduleMode::kPipelined;
    return report_dict(pipeline::simulate_schedule(b, chunks, sm));
  }, py::arg("chunks") = 5, py::arg("mode") = "sequential", py::arg("budget") = py::none(),
     "Throughput report for a stage budget (defaults: the reference budget).");
  m.def("report_json", [](double fps, double rtf, double max_ms, bool verdict) {
    pipeline::ThroughputReport r;
    r.fps = fps;
    r.realtime_factor = rtf;
    r.max_chunk_latency_ms = max_ms;
    r.verdict = verdict;
    return pipeline::report_to_json(r);
  });
  m.def("stream", [](const std::vector<double>& samples, int rate, const rvq::RVQCodec& codec,
                     const ar::ARModel& model, const etm::ETMModel* refiner, int k, std::uint64_t seed,
                     bool threaded) {
    pipeline::PipelineConfig cfg;
    cfg.sampler.k = k;
    cfg.sampler.seed = seed;
    cfg.frontend.bins = model.config().audio_dim;
    cfg.threaded = threaded;
    pipeline::BufferSource src(samples, rate);
    const auto res = pipeline::run_streaming(src, {&codec, &model, refiner}, cfg);
    py::dict d;
    d["tokens"] = res.tokens;
    d["motion"] = frames_to_matrix(res.motion.frames);
    d["trace_csv"] = pipeline::trace_to_csv(res.trace);
    d["report"] = report_dict(pipeline::measured_report(res.trace));
    return d;
  }, py::arg("samples"), py::arg("sample_rate_hz"), py::arg("codec"), py::arg("ar"), py::arg("etm") = nullptr,
     py::arg("k") = 15, py::arg("seed") = 0, py::arg("threaded") = true,
     "Run the streaming pipeline; motion is 25 Hz, five frames per chunk.");

  // ---- synth / experiments ----
  m.def("write_corpus", [](const std::string& dir, int clips, std::uint64_t seed, int bands) {
    synth::SynthConfig c;
    c.seed = seed;
    c.bands = bands;
    synth::write_corpus(c, clips, dir);
    return dir + "/manifest.jsonl";
  }, py::arg("dir"), py::arg("clips"), py::arg("seed") = 0, py::arg("bands") = 4);
  m.def("generate_clip", [](std::uint64_t seed, int bands, double seconds) {
    synth::SynthConfig c;
    c.bands = bands;
    c.clip_seconds = seconds;
    const auto clip = synth::generate_clip(c, seed);
    py::dict d;
    d["audio"] = clip.audio;
    d["sample_rate_hz"] = clip.sample_rate_hz;
    d["motion"] = frames_to_matrix(clip.motion.frames);
    d["coupled"] = clip.coupled;
    d["envelopes"] = clip.envelopes;
    return d;
  }, py::arg("seed") = 0, py::arg("bands") = 4, py::arg("seconds") = 1.0);
  m.def("mean_pearson", &exp::mean_pearson);
  m.def("regularizer_experiment", [](std::uint64_t seed, int epochs) {
    const auto r = exp::regularizer_experiment(seed, epochs);
    return py::make_tuple(r.gap_without, r.gap_with);
  }, py::arg("seed") = 1, py::arg("epochs") = 30);

  // ---- command line ----
  m.def("run_cli", [](const std::vector<std::string>& args) {
    std::vector<std::string> full{"teller"};
    full.insert(full.end(), args.begin(), args.end());
    std::ostringstream out, err;
    int code;
    {
      py::gil_scoped_release release;
      code = cli::run_cli(full, out, err);
    }
    return py::make_tuple(code, out.str(), err.str());
  }, py::arg("args"), "Run a teller subcommand in-process; returns (exit code, stdout, stderr).");
}
