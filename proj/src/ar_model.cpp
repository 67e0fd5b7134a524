#include "teller/ar_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "teller/binary_io.hpp"

namespace teller::ar {

namespace {

constexpr std::uint16_t kModelVersion = 1;

Matrix normal(Eigen::Index rows, Eigen::Index cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, stddev);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
  return m;
}

std::string layer_name(int l, const char* leaf) { return "l" + std::to_string(l) + "." + leaf; }

RowVector gelu_row(const RowVector& x) {
  return x.unaryExpr([](double v) { return ad::gelu_value(v); });
}

RowVector norm_row(const RowVector& x, const Parameter& g, const Parameter& b) {
  Matrix out;
  ad::layer_norm_rows(x, g.value, b.value, out);
  return out.row(0);
}

}  // namespace

void ARConfig::validate() const {
  if (vocab <= 0 || d_model <= 0 || layers <= 0 || heads <= 0 || ffn_mult <= 0 || audio_dim <= 0 ||
      audio_positions <= 0 || tokens_per_chunk <= 0) {
    throw ValidationError("ar: dimensions must be positive");
  }
  if (d_model % heads != 0) throw ValidationError("ar: d_model must be divisible by heads");
  if (dual_head && tokens_per_chunk % 2 != 0) throw ValidationError("ar: dual-head mode needs an even token count");
  if (window < 0) throw ValidationError("ar: window must be non-negative");
  if (!(reg_weight >= 0.0)) throw ValidationError("ar: reg_weight must be non-negative");
}

std::vector<TokenPair> SequenceLayout::pairs() const {
  std::vector<TokenPair> out;
  if (dual_head) {
    for (std::size_t i = 0; i + 1 < tokens.size(); i += 2) out.push_back({tokens[i], tokens[i + 1]});
  } else {
    for (Token t : tokens) out.push_back({t, 0});
  }
  return out;
}

SequenceLayout build_sequence(const ARConfig& cfg, std::span<const audio::AudioEmbedding> audio,
                              std::span<const Token> tokens) {
  cfg.validate();
  if (tokens.size() != audio.size() * static_cast<std::size_t>(cfg.tokens_per_chunk)) {
    throw ValidationError("build_sequence: expected " + std::to_string(cfg.tokens_per_chunk) +
                          " tokens per audio chunk, got " + std::to_string(tokens.size()) + " for " +
                          std::to_string(audio.size()) + " chunks");
  }
  SequenceLayout l;
  l.chunks = static_cast<int>(audio.size());
  l.audio_positions = cfg.audio_positions;
  l.motion_positions = cfg.motion_positions();
  l.dual_head = cfg.dual_head;
  l.audio.resize(static_cast<Eigen::Index>(audio.size()) * cfg.audio_positions, cfg.audio_dim);
  for (std::size_t c = 0; c < audio.size(); ++c) {
    if (audio[c].values.rows() != cfg.audio_positions || audio[c].values.cols() != cfg.audio_dim) {
      throw ValidationError("build_sequence: audio embedding has the wrong shape");
    }
    l.audio.middleRows(static_cast<Eigen::Index>(c) * cfg.audio_positions, cfg.audio_positions) = audio[c].values;
  }
  for (Token t : tokens) {
    if (t < 0 || t >= cfg.vocab) throw ValidationError("build_sequence: token out of range");
  }
  l.tokens.assign(tokens.begin(), tokens.end());
  return l;
}

double ArLoss::per_token_ce() const {
  return tokens == 0 ? 0.0 : (head0 + head1) / tokens;
}

namespace {

double row_ce(const RowVector& logits, Token label) { return -ad::log_softmax(logits)(label); }

}  // namespace

ArLoss ar_loss(const Logits& logits, std::span<const TokenPair> labels, double reg_weight) {
  if (logits.head0.rows() != static_cast<Eigen::Index>(labels.size()) ||
      logits.head1.rows() != logits.head0.rows() || logits.head1.cols() != logits.head0.cols()) {
    throw ValidationError("ar_loss: logits and labels disagree in shape");
  }
  ArLoss out;
  out.positions = static_cast<int>(labels.size());
  for (std::size_t j = 0; j < labels.size(); ++j) {
    const auto r = static_cast<Eigen::Index>(j);
    if (labels[j].first < 0 || labels[j].first >= logits.head0.cols() || labels[j].second < 0 ||
        labels[j].second >= logits.head1.cols()) {
      throw ValidationError("ar_loss: label out of range");
    }
    const double a = row_ce(logits.head0.row(r), labels[j].first);
    const double b = row_ce(logits.head1.row(r), labels[j].second);
    out.head0 += a;
    out.head1 += b;
    out.reg += (a - b) * (a - b);
    out.mean_abs_gap += std::abs(a - b);
  }
  out.total = out.head0 + out.head1 + reg_weight * out.reg;
  out.tokens = 2 * out.positions;
  if (out.positions > 0) out.mean_abs_gap /= out.positions;
  return out;
}

ArLoss single_head_loss(const Matrix& logits, std::span<const Token> labels) {
  if (logits.rows() != static_cast<Eigen::Index>(labels.size())) {
    throw ValidationError("single_head_loss: logits and labels disagree in shape");
  }
  ArLoss out;
  out.positions = static_cast<int>(labels.size());
  for (std::size_t j = 0; j < labels.size(); ++j) {
    if (labels[j] < 0 || labels[j] >= logits.cols()) throw ValidationError("single_head_loss: label out of range");
    out.head0 += row_ce(logits.row(static_cast<Eigen::Index>(j)), labels[j]);
  }
  out.total = out.head0;
  out.tokens = out.positions;
  return out;
}

// ---------------------------------------------------------------------------
// Sampling

void SamplerConfig::validate(int vocab) const {
  if (k <= 0 || k > vocab) throw ValidationError("sampler: k must be in [1, K]");
  if (!(temperature > 0.0)) throw ValidationError("sampler: temperature must be positive");
}

Token sample_top_k(const RowVector& logits, const SamplerConfig& sampler, std::mt19937_64& rng, int* rank) {
  const auto vocab = static_cast<int>(logits.size());
  sampler.validate(vocab);
  std::vector<int> order(static_cast<std::size_t>(vocab));
  std::iota(order.begin(), order.end(), 0);
  auto better = [&](int a, int b) { return logits(a) > logits(b) || (logits(a) == logits(b) && a < b); };
  std::partial_sort(order.begin(), order.begin() + sampler.k, order.end(), better);
  int pick = 0;
  if (sampler.k > 1) {
    const double top = logits(order[0]) / sampler.temperature;
    std::vector<double> w(static_cast<std::size_t>(sampler.k));
    double total = 0.0;
    for (int i = 0; i < sampler.k; ++i) {
      w[static_cast<std::size_t>(i)] = std::exp(logits(order[static_cast<std::size_t>(i)]) / sampler.temperature - top);
      total += w[static_cast<std::size_t>(i)];
    }
    const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng) * total;
    double acc = 0.0;
    pick = sampler.k - 1;
    for (int i = 0; i < sampler.k; ++i) {
      acc += w[static_cast<std::size_t>(i)];
      if (u < acc) {
        pick = i;
        break;
      }
    }
  }
  if (rank) *rank = pick;
  return order[static_cast<std::size_t>(pick)];
}

std::string trace_to_jsonl(std::span<const DecodeTraceEntry> trace) {
  std::string out;
  for (const auto& e : trace) {
    nlohmann::ordered_json j;
    j["chunk_index"] = e.chunk_index;
    j["pair_index"] = e.pair_index;
    j["head"] = e.head;
    j["chosen_token"] = e.chosen_token;
    j["logit_rank"] = e.logit_rank;
    out += j.dump();
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model

ARModel::ARModel(const ARConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const int d = cfg_.d_model, k = cfg_.vocab, f = cfg_.ffn_mult * d;
  auto add = [&](std::string name, Eigen::Index r, Eigen::Index c) {
    params_.push_back({std::move(name), Matrix::Zero(r, c)});
  };
  add("tok_emb", k, d);
  add("audio_w", cfg_.audio_dim, d);
  add("audio_b", 1, d);
  add("pair_bias", cfg_.dual_head ? 2 : 1, d);
  if (cfg_.dual_head) {
    add("comb_w", 2 * d, d);
    add("comb_b", 1, d);
  }
  add("pos_emb", cfg_.positions_per_chunk(), d);
  for (int l = 0; l < cfg_.layers; ++l) {
    add(layer_name(l, "ln1_g"), 1, d);
    add(layer_name(l, "ln1_b"), 1, d);
    add(layer_name(l, "wq"), d, d);
    add(layer_name(l, "wk"), d, d);
    add(layer_name(l, "wv"), d, d);
    add(layer_name(l, "wo"), d, d);
    add(layer_name(l, "bo"), 1, d);
    add(layer_name(l, "ln2_g"), 1, d);
    add(layer_name(l, "ln2_b"), 1, d);
    add(layer_name(l, "ff_w1"), d, f);
    add(layer_name(l, "ff_b1"), 1, f);
    add(layer_name(l, "ff_w2"), f, d);
    add(layer_name(l, "ff_b2"), 1, d);
  }
  add("lnf_g", 1, d);
  add("lnf_b", 1, d);
  add("head0_w", d, k);
  add("head0_b", 1, k);
  if (cfg_.dual_head) {
    add("head1_w", d, k);
    add("head1_b", 1, k);
  }
  audio_mean_ = RowVector::Zero(cfg_.audio_dim);
  audio_inv_std_ = RowVector::Ones(cfg_.audio_dim);
}

ARModel ARModel::random(const ARConfig& cfg, std::uint64_t seed, bool zero_heads) {
  ARModel m(cfg);
  std::mt19937_64 rng(mix_seed(seed, 2));
  const double residual_scale = 1.0 / std::sqrt(2.0 * cfg.layers);
  for (auto& p : m.params_) {
    const std::string& n = p.name;
    const auto leaf = n.substr(n.find('.') == std::string::npos ? 0 : n.find('.') + 1);
    if (leaf.ends_with("_g")) {
      p.value.setOnes();
    } else if (leaf.ends_with("_b") || leaf == "bo") {
      p.value.setZero();
    } else if (n == "tok_emb" || n == "pos_emb" || n == "pair_bias") {
      p.value = normal(p.value.rows(), p.value.cols(), 0.5, rng);
    } else if (n.starts_with("head")) {
      p.value = zero_heads ? Matrix::Zero(p.value.rows(), p.value.cols())
                           : normal(p.value.rows(), p.value.cols(), 0.5 / std::sqrt(p.value.rows()), rng);
    } else {
      double s = 1.0 / std::sqrt(static_cast<double>(p.value.rows()));
      if (leaf == "wo" || leaf == "ff_w2") s *= residual_scale;
      p.value = normal(p.value.rows(), p.value.cols(), s, rng);
    }
  }
  return m;
}

ParamRefs ARModel::params() {
  ParamRefs r;
  for (auto& p : params_) r.push_back(&p);
  return r;
}

ConstParamRefs ARModel::params() const {
  ConstParamRefs r;
  for (const auto& p : params_) r.push_back(&p);
  return r;
}

const Parameter& ARModel::param(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return p;
  }
  throw ValidationError("ar: no parameter named " + name);
}

Parameter& ARModel::param(const std::string& name) {
  return const_cast<Parameter&>(static_cast<const ARModel*>(this)->param(name));
}

std::vector<double> ARModel::slopes() const {
  if (!cfg_.alibi) return {};
  std::vector<double> s(static_cast<std::size_t>(cfg_.heads));
  for (int h = 0; h < cfg_.heads; ++h) s[static_cast<std::size_t>(h)] = std::pow(2.0, -8.0 * (h + 1) / cfg_.heads);
  return s;
}

void ARModel::set_audio_normalizer(const RowVector& mean, const RowVector& inv_std) {
  if (mean.size() != cfg_.audio_dim || inv_std.size() != cfg_.audio_dim) {
    throw ValidationError("ar: normaliser width must equal audio_dim");
  }
  audio_mean_ = mean;
  audio_inv_std_ = inv_std;
}

void ARModel::fit_audio_normalizer(std::span<const SequenceLayout> data) {
  RowVector sum = RowVector::Zero(cfg_.audio_dim);
  RowVector sq = RowVector::Zero(cfg_.audio_dim);
  double n = 0.0;
  for (const auto& l : data) {
    sum += l.audio.colwise().sum();
    sq += l.audio.array().square().matrix().colwise().sum();
    n += static_cast<double>(l.audio.rows());
  }
  if (n == 0.0) throw ValidationError("ar: no audio rows to fit the normaliser");
  const RowVector mean = sum / n;
  const RowVector var = (sq / n).array() - mean.array().square();
  set_audio_normalizer(mean, (var.array().max(1e-6)).rsqrt().matrix());
}

std::vector<ARModel::Input> ARModel::layout_inputs(const SequenceLayout& l, int audio_offset) const {
  std::vector<Input> in;
  const int a = l.audio_positions;
  const int per = cfg_.tokens_per_chunk;
  for (int c = 0; c < l.chunks; ++c) {
    for (int r = 0; r < a; ++r) in.push_back({audio_offset + c * a + r, 0, 0, r});
    for (int j = 0; j < l.motion_positions; ++j) {
      Input x;
      x.rel = a + j;
      if (cfg_.dual_head) {
        x.t0 = l.tokens[static_cast<std::size_t>(c * per + 2 * j)];
        x.t1 = l.tokens[static_cast<std::size_t>(c * per + 2 * j + 1)];
      } else {
        x.t0 = l.tokens[static_cast<std::size_t>(c * per + j)];
      }
      in.push_back(x);
    }
  }
  return in;
}

ad::Var ARModel::embed_inputs(ad::Tape& tape, const Matrix& audio, const std::vector<Input>& inputs,
                              Gradients* grads) const {
  auto P = [&](const char* name) { return tape.param(param(name), grads); };
  std::vector<ad::Var> parts;
  std::vector<std::pair<int, int>> picks;
  std::vector<int> rel;
  std::vector<int> t0, t1;
  int audio_part = -1, motion_part = -1;
  if (audio.rows() > 0) {
    const Matrix normed = ((audio.rowwise() - audio_mean_).array().rowwise() * audio_inv_std_.array()).matrix();
    parts.push_back(ad::linear(tape.constant(normed), P("audio_w"), P("audio_b")));
    audio_part = 0;
  }
  for (const auto& in : inputs) {
    if (in.audio_row < 0) {
      t0.push_back(in.t0);
      t1.push_back(in.t1);
    }
  }
  if (!t0.empty()) {
    ad::Var pb = P("pair_bias");
    ad::Var e0 = ad::add_row(ad::gather_rows(P("tok_emb"), t0), ad::gather_rows(pb, {0}));
    if (cfg_.dual_head) {
      ad::Var e1 = ad::add_row(ad::gather_rows(P("tok_emb"), t1), ad::gather_rows(pb, {1}));
      parts.push_back(ad::linear(ad::concat_cols(e0, e1), P("comb_w"), P("comb_b")));
    } else {
      parts.push_back(e0);
    }
    motion_part = static_cast<int>(parts.size()) - 1;
  }
  int m = 0;
  for (const auto& in : inputs) {
    picks.emplace_back(in.audio_row >= 0 ? audio_part : motion_part, in.audio_row >= 0 ? in.audio_row : m++);
    rel.push_back(in.rel);
  }
  ad::Var x = ad::stack_rows(parts, picks);
  return ad::add(x, ad::gather_rows(P("pos_emb"), rel));
}

ad::Var ARModel::blocks(ad::Tape& tape, ad::Var x, int group_len, Gradients* grads) const {
  auto P = [&](const std::string& name) { return tape.param(param(name), grads); };
  ad::AttentionSpec spec;
  spec.heads = cfg_.heads;
  spec.group_len = group_len;
  spec.causal = true;
  spec.window = cfg_.window;
  spec.alibi_slopes = slopes();
  for (int l = 0; l < cfg_.layers; ++l) {
    ad::Var h = ad::layer_norm(x, P(layer_name(l, "ln1_g")), P(layer_name(l, "ln1_b")));
    ad::Var q = ad::matmul(h, P(layer_name(l, "wq")));
    ad::Var k = ad::matmul(h, P(layer_name(l, "wk")));
    ad::Var v = ad::matmul(h, P(layer_name(l, "wv")));
    ad::Var att = ad::attention(q, k, v, spec);
    x = ad::add(x, ad::linear(att, P(layer_name(l, "wo")), P(layer_name(l, "bo"))));
    ad::Var h2 = ad::layer_norm(x, P(layer_name(l, "ln2_g")), P(layer_name(l, "ln2_b")));
    ad::Var ff = ad::gelu(ad::linear(h2, P(layer_name(l, "ff_w1")), P(layer_name(l, "ff_b1"))));
    x = ad::add(x, ad::linear(ff, P(layer_name(l, "ff_w2")), P(layer_name(l, "ff_b2"))));
  }
  return ad::layer_norm(x, P("lnf_g"), P("lnf_b"));
}

TapeForward ARModel::forward_on_tape(ad::Tape& tape, std::span<const SequenceLayout> batch,
                                     Gradients* grads) const {
  if (batch.empty()) throw ValidationError("ar forward: empty batch");
  const int n = batch.front().positions();
  int audio_rows = 0;
  for (const auto& l : batch) {
    if (l.positions() != n) throw ValidationError("ar forward: batch layouts differ in length");
    if (l.dual_head != cfg_.dual_head || l.audio_positions != cfg_.audio_positions ||
        l.motion_positions != cfg_.motion_positions() || l.audio.cols() != cfg_.audio_dim) {
      throw ValidationError("ar forward: layout does not match the model configuration");
    }
    audio_rows += static_cast<int>(l.audio.rows());
  }
  if (n == 0) throw ValidationError("ar forward: empty layout");
  Matrix audio(audio_rows, cfg_.audio_dim);
  std::vector<Input> inputs;
  std::vector<int> pred_rows;
  std::vector<Token> labels0, labels1;
  int offset = 0;
  for (std::size_t s = 0; s < batch.size(); ++s) {
    const auto& l = batch[s];
    audio.middleRows(offset, l.audio.rows()) = l.audio;
    const auto in = layout_inputs(l, offset);
    inputs.insert(inputs.end(), in.begin(), in.end());
    offset += static_cast<int>(l.audio.rows());
    const int ppc = cfg_.positions_per_chunk();
    for (int c = 0; c < l.chunks; ++c) {
      for (int j = 0; j < l.motion_positions; ++j) {
        pred_rows.push_back(static_cast<int>(s) * n + c * ppc + cfg_.audio_positions + j - 1);
      }
    }
  }
  ad::Var x = embed_inputs(tape, audio, inputs, grads);
  TapeForward out;
  out.hidden = blocks(tape, x, batch.size() > 1 ? n : 0, grads);
  ad::Var sel = ad::gather_rows(out.hidden, pred_rows);
  out.logits0 = ad::linear(sel, tape.param(param("head0_w"), grads), tape.param(param("head0_b"), grads));
  if (cfg_.dual_head) {
    out.logits1 = ad::linear(sel, tape.param(param("head1_w"), grads), tape.param(param("head1_b"), grads));
  }
  return out;
}

Logits ARModel::forward(const SequenceLayout& layout) const {
  Logits out;
  if (layout.chunks == 0) {
    out.head0.resize(0, cfg_.vocab);
    if (cfg_.dual_head) out.head1.resize(0, cfg_.vocab);
    return out;
  }
  ad::Tape tape;
  const TapeForward f = forward_on_tape(tape, std::span<const SequenceLayout>(&layout, 1), nullptr);
  out.head0 = tape.value(f.logits0);
  if (cfg_.dual_head) out.head1 = tape.value(f.logits1);
  return out;
}

ad::Var ARModel::loss_on_tape(ad::Tape& tape, std::span<const SequenceLayout> batch, Gradients* grads,
                              ArLoss* parts) const {
  const TapeForward f = forward_on_tape(tape, batch, grads);
  std::vector<Token> l0, l1;
  for (const auto& l : batch) {
    for (const auto& p : l.pairs()) {
      l0.push_back(p.first);
      l1.push_back(p.second);
    }
  }
  const double denom = static_cast<double>(l0.size());
  ad::Var ce0 = ad::cross_entropy_rows(f.logits0, l0);
  ad::Var total;
  if (cfg_.dual_head) {
    ad::Var ce1 = ad::cross_entropy_rows(f.logits1, l1);
    ad::Var gap = ad::sub(ce0, ce1);
    total = ad::add(ad::add(ad::sum(ce0), ad::sum(ce1)), ad::scale(ad::sum_squares(gap), cfg_.reg_weight));
    if (parts) {
      const Matrix& a = tape.value(ce0);
      const Matrix& b = tape.value(ce1);
      parts->head0 = a.sum();
      parts->head1 = b.sum();
      parts->reg = (a - b).squaredNorm();
      parts->mean_abs_gap = (a - b).cwiseAbs().sum() / denom;
    }
  } else {
    total = ad::sum(ce0);
    if (parts) parts->head0 = tape.value(ce0).sum();
  }
  if (parts) {
    parts->positions = static_cast<int>(l0.size());
    parts->tokens = parts->positions * (cfg_.dual_head ? 2 : 1);
    parts->total = tape.value(total)(0, 0);
  }
  return ad::scale(total, 1.0 / denom);
}

ArLoss ARModel::evaluate(std::span<const SequenceLayout> data) const {
  std::vector<ArLoss> per(data.size());
  train::parallel_for(data.size(), [&](std::size_t i) {
    if (data[i].chunks == 0) return;
    ad::Tape tape;
    loss_on_tape(tape, data.subspan(i, 1), nullptr, &per[i]);
  });
  ArLoss out;
  double gap = 0.0;
  for (const auto& p : per) {
    out.head0 += p.head0;
    out.head1 += p.head1;
    out.reg += p.reg;
    out.total += p.total;
    out.positions += p.positions;
    out.tokens += p.tokens;
    gap += p.mean_abs_gap * p.positions;
  }
  if (out.positions > 0) out.mean_abs_gap = gap / out.positions;
  return out;
}

// ---------------------------------------------------------------------------
// Incremental decoding

DecodeState::DecodeState(const ARModel& model, const SamplerConfig& sampler)
    : sampler_(sampler), rng_(sampler.seed) {
  sampler.validate(model.config().vocab);
  keys_.resize(static_cast<std::size_t>(model.config().layers));
  values_.resize(static_cast<std::size_t>(model.config().layers));
}

RowVector ARModel::embed_row(const Input& in, const Matrix& audio) const {
  RowVector x;
  if (in.audio_row >= 0) {
    const RowVector normed = ((audio.row(in.audio_row) - audio_mean_).array() * audio_inv_std_.array()).matrix();
    x = normed * param("audio_w").value + param("audio_b").value;
  } else {
    const Matrix& emb = param("tok_emb").value;
    const Matrix& pb = param("pair_bias").value;
    const RowVector e0 = emb.row(in.t0) + pb.row(0);
    if (cfg_.dual_head) {
      RowVector cat(2 * cfg_.d_model);
      cat << e0, emb.row(in.t1) + pb.row(1);
      x = cat * param("comb_w").value + param("comb_b").value;
    } else {
      x = e0;
    }
  }
  return x + param("pos_emb").value.row(in.rel);
}

RowVector ARModel::head_logits(const RowVector& hidden, int head) const {
  const std::string w = head == 0 ? "head0_w" : "head1_w";
  const std::string b = head == 0 ? "head0_b" : "head1_b";
  return hidden * param(w).value + param(b).value;
}

RowVector ARModel::incremental(DecodeState& state, const RowVector& input) const {
  const int d = cfg_.d_model;
  const int dh = d / cfg_.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto sl = slopes();
  RowVector x = input;
  for (int l = 0; l < cfg_.layers; ++l) {
    const RowVector h = norm_row(x, param(layer_name(l, "ln1_g")), param(layer_name(l, "ln1_b")));
    const RowVector q = h * param(layer_name(l, "wq")).value;
    auto& keys = state.keys_[static_cast<std::size_t>(l)];
    auto& vals = state.values_[static_cast<std::size_t>(l)];
    keys.push_back(h * param(layer_name(l, "wk")).value);
    vals.push_back(h * param(layer_name(l, "wv")).value);
    if (cfg_.window > 0 && static_cast<int>(keys.size()) > cfg_.window) {
      keys.pop_front();
      vals.pop_front();
    }
    const auto span = static_cast<Eigen::Index>(keys.size());
    RowVector att = RowVector::Zero(d);
    RowVector scores(span);
    for (int hd = 0; hd < cfg_.heads; ++hd) {
      const double slope = sl.empty() ? 0.0 : sl[static_cast<std::size_t>(hd)];
      double mx = -std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j < span; ++j) {
        const double dist = static_cast<double>(span - 1 - j);
        scores(j) = q.segment(hd * dh, dh).dot(keys[static_cast<std::size_t>(j)].segment(hd * dh, dh)) * scale -
                    slope * dist;
        mx = std::max(mx, scores(j));
      }
      double total = 0.0;
      for (Eigen::Index j = 0; j < span; ++j) {
        scores(j) = std::exp(scores(j) - mx);
        total += scores(j);
      }
      for (Eigen::Index j = 0; j < span; ++j) {
        att.segment(hd * dh, dh) += (scores(j) / total) * vals[static_cast<std::size_t>(j)].segment(hd * dh, dh);
      }
    }
    x += att * param(layer_name(l, "wo")).value + param(layer_name(l, "bo")).value;
    const RowVector h2 = norm_row(x, param(layer_name(l, "ln2_g")), param(layer_name(l, "ln2_b")));
    const RowVector ff = gelu_row(h2 * param(layer_name(l, "ff_w1")).value + param(layer_name(l, "ff_b1")).value);
    x += ff * param(layer_name(l, "ff_w2")).value + param(layer_name(l, "ff_b2")).value;
  }
  ++state.position_;
  return norm_row(x, param("lnf_g"), param("lnf_b"));
}

std::vector<Token> ARModel::decode_chunk(DecodeState& state, const audio::AudioEmbedding& audio,
                                         std::vector<DecodeTraceEntry>* trace,
                                         std::vector<RowVector>* logits) const {
  if (audio.values.rows() != cfg_.audio_positions || audio.values.cols() != cfg_.audio_dim) {
    throw ValidationError("decode_chunk: audio embedding has the wrong shape");
  }
  RowVector hidden;
  for (int r = 0; r < cfg_.audio_positions; ++r) {
    hidden = incremental(state, embed_row({r, 0, 0, r}, audio.values));
  }
  std::vector<Token> tokens;
  const int heads = cfg_.dual_head ? 2 : 1;
  for (int j = 0; j < cfg_.motion_positions(); ++j) {
    Token picked[2] = {0, 0};
    for (int h = 0; h < heads; ++h) {
      const RowVector lg = head_logits(hidden, h);
      int rank = 0;
      picked[h] = sample_top_k(lg, state.sampler_, state.rng_, &rank);
      tokens.push_back(picked[h]);
      if (trace) trace->push_back({state.chunks_, j, h, picked[h], rank});
      if (logits) logits->push_back(lg);
    }
    hidden = incremental(state, embed_row({-1, picked[0], picked[1], cfg_.audio_positions + j}, audio.values));
  }
  ++state.chunks_;
  return tokens;
}

ReferenceDecoder::ReferenceDecoder(const ARModel& model, const SamplerConfig& sampler)
    : model_(model), sampler_(sampler), rng_(sampler.seed) {
  sampler.validate(model.config().vocab);
  audio_.resize(0, model.config().audio_dim);
}

std::vector<Token> ReferenceDecoder::decode_chunk(const audio::AudioEmbedding& audio,
                                                  std::vector<RowVector>* logits) {
  const ARConfig& cfg = model_.config();
  Matrix grown(audio_.rows() + audio.values.rows(), cfg.audio_dim);
  grown << audio_, audio.values;
  audio_ = std::move(grown);
  const int heads = cfg.dual_head ? 2 : 1;
  std::vector<Token> fresh;
  for (int j = 0; j < cfg.motion_positions(); ++j) {
    // Whole history: finished chunks, this chunk's audio, pairs so far.
    std::vector<ARModel::Input> inputs;
    for (int c = 0; c <= chunks_; ++c) {
      for (int r = 0; r < cfg.audio_positions; ++r) inputs.push_back({c * cfg.audio_positions + r, 0, 0, r});
      const int done = c < chunks_ ? cfg.motion_positions() : j;
      for (int m = 0; m < done; ++m) {
        const std::size_t base = static_cast<std::size_t>(c) * cfg.tokens_per_chunk;
        ARModel::Input in;
        in.rel = cfg.audio_positions + m;
        if (cfg.dual_head) {
          in.t0 = tokens_[base + 2 * static_cast<std::size_t>(m)];
          in.t1 = tokens_[base + 2 * static_cast<std::size_t>(m) + 1];
        } else {
          in.t0 = tokens_[base + static_cast<std::size_t>(m)];
        }
        inputs.push_back(in);
      }
    }
    ad::Tape tape;
    ad::Var x = model_.embed_inputs(tape, audio_, inputs, nullptr);
    const Matrix& hidden = tape.value(model_.blocks(tape, x, 0, nullptr));
    const RowVector last = hidden.row(hidden.rows() - 1);
    for (int h = 0; h < heads; ++h) {
      const RowVector lg = model_.head_logits(last, h);
      if (logits) logits->push_back(lg);
      const Token t = sample_top_k(lg, sampler_, rng_);
      tokens_.push_back(t);
      fresh.push_back(t);
    }
  }
  ++chunks_;
  return fresh;
}

// ---------------------------------------------------------------------------
// Files

std::string ARModel::encode_bytes() const {
  std::ostringstream os(std::ios::binary);
  io::Writer w(os);
  w.magic("TARM");
  w.u16(kModelVersion);
  w.u16(static_cast<std::uint16_t>((cfg_.dual_head ? 1 : 0) | (cfg_.alibi ? 2 : 0)));
  for (int v : {cfg_.vocab, cfg_.d_model, cfg_.layers, cfg_.heads, cfg_.ffn_mult, cfg_.audio_dim,
                cfg_.audio_positions, cfg_.tokens_per_chunk, cfg_.window}) {
    w.u32(static_cast<std::uint32_t>(v));
  }
  w.f32(static_cast<float>(cfg_.reg_weight));
  w.f32_block(audio_mean_);
  w.f32_block(audio_inv_std_);
  for (const auto& p : params_) w.f32_block(p.value);
  return os.str();
}

ARModel ARModel::decode_bytes(const std::string& bytes) {
  std::istringstream is(bytes, std::ios::binary);
  io::Reader r(is);
  r.expect_magic("TARM");
  if (r.u16() != kModelVersion) throw FormatError("TARM: unsupported version");
  const std::uint16_t flags = r.u16();
  ARConfig c;
  c.dual_head = (flags & 1) != 0;
  c.alibi = (flags & 2) != 0;
  int* fields[] = {&c.vocab, &c.d_model, &c.layers, &c.heads, &c.ffn_mult, &c.audio_dim,
                   &c.audio_positions, &c.tokens_per_chunk, &c.window};
  for (int* f : fields) *f = static_cast<int>(r.u32());
  c.reg_weight = r.f32();
  try {
    c.validate();
  } catch (const ValidationError& e) {
    throw FormatError(std::string("TARM: ") + e.what());
  }
  ARModel m(c);
  m.audio_mean_ = r.f32_block(1, c.audio_dim);
  m.audio_inv_std_ = r.f32_block(1, c.audio_dim);
  for (auto& p : m.params_) p.value = r.f32_block(p.value.rows(), p.value.cols());
  if (!r.at_end()) throw FormatError("TARM: trailing bytes");
  return m;
}

void ARModel::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  const std::string b = encode_bytes();
  out.write(b.data(), static_cast<std::streamsize>(b.size()));
}

ARModel ARModel::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_bytes(ss.str());
}

// ---------------------------------------------------------------------------

train::FitResult train_ar(ARModel& model, std::span<const SequenceLayout> data, const train::TrainConfig& cfg,
                          const train::FitHooks& hooks) {
  if (data.empty()) throw ValidationError("train_ar: dataset is empty");
  auto loss = [&](std::span<const std::size_t> batch, Gradients& grads) {
    // Group equal-length layouts so each group shares one tape.
    std::map<int, std::vector<SequenceLayout>> groups;
    for (std::size_t i : batch) groups[data[i].positions()].push_back(data[i]);
    double total = 0.0;
    for (auto& [len, items] : groups) {
      const double weight = static_cast<double>(items.size()) / static_cast<double>(batch.size());
      Gradients part(grads.params());
      ad::Tape tape;
      ad::Var l = model.loss_on_tape(tape, items, &part);
      tape.backward(l);
      part.scale(weight);
      grads.add(part);
      total += weight * tape.value(l)(0, 0);
    }
    return total;
  };
  return train::fit(model.params(), data.size(), loss, cfg, hooks);
}

GradCheckReport ar_gradcheck(ARModel& model, std::span<const SequenceLayout> data, double step) {
  ParamRefs params = model.params();
  Gradients grads(const_refs(params));
  {
    ad::Tape tape;
    ad::Var l = model.loss_on_tape(tape, data, &grads);
    tape.backward(l);
  }
  auto loss = [&]() {
    ad::Tape tape;
    return tape.value(model.loss_on_tape(tape, data, nullptr))(0, 0);
  };
  return check_gradients(params, loss, grads, step);
}

}  // namespace teller::ar
