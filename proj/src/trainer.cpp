#include "teller/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <mutex>
#include <numbers>
#include <random>
#include <sstream>
#include <thread>

#include "teller/binary_io.hpp"

namespace teller::train {

void TrainConfig::validate() const {
  // lr_start == lr_end == 0 is accepted as a frozen run.
  const bool frozen = lr_start == 0.0 && lr_end == 0.0;
  if (!frozen && (!(lr_end > 0.0) || !(lr_start >= lr_end))) {
    throw ValidationError("learning rates must satisfy lr_start >= lr_end > 0");
  }
  if (epochs < 1) throw ValidationError("epochs must be >= 1");
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
    throw ValidationError("optimizer betas must lie in [0, 1)");
  }
  if (weight_decay < 0.0 || grad_clip < 0.0) {
    throw ValidationError("weight_decay and grad_clip must be non-negative");
  }
}

double cosine_lr(long step, long total_steps, const TrainConfig& cfg) {
  if (total_steps <= 0 || step < 0 || step > total_steps) {
    throw ValidationError("cosine_lr: step " + std::to_string(step) + " outside [0, " +
                          std::to_string(total_steps) + "]");
  }
  const double progress = static_cast<double>(step) / static_cast<double>(total_steps);
  return cfg.lr_end + (cfg.lr_start - cfg.lr_end) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

// ---------------------------------------------------------------------------

Optimizer::Optimizer(ParamRefs params, const TrainConfig& cfg)
    : params_(std::move(params)), cfg_(cfg) {
  for (const Parameter* p : params_) {
    m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
  }
}

void Optimizer::restore(long steps, std::vector<Matrix> m, std::vector<Matrix> v) {
  if (m.size() != params_.size() || v.size() != params_.size()) {
    throw ValidationError("optimizer state does not match parameter list");
  }
  t_ = steps;
  m_ = std::move(m);
  v_ = std::move(v);
}

void Optimizer::step(const Gradients& grads, double lr) {
  ++t_;
  double clip_scale = 1.0;
  if (cfg_.grad_clip > 0.0) {
    const double norm = std::sqrt(grads.squared_norm());
    if (norm > cfg_.grad_clip) clip_scale = cfg_.grad_clip / norm;
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Matrix& p = params_[i]->value;
    const Matrix g = grads[i] * clip_scale;
    if (cfg_.optimizer == OptimizerKind::kAdam) {
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
      const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
      const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
      if (cfg_.weight_decay > 0.0) p *= 1.0 - lr * cfg_.weight_decay;
      p.array() -= lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + cfg_.epsilon);
    } else {
      m_[i] = cfg_.momentum * m_[i] + g;
      if (cfg_.weight_decay > 0.0) p *= 1.0 - lr * cfg_.weight_decay;
      p -= lr * m_[i];
    }
  }
}

// ---------------------------------------------------------------------------

namespace {

std::string describe_failure(long step, double lr,
                             const std::vector<std::pair<std::string, double>>& norms) {
  std::ostringstream os;
  os << "non-finite loss or gradient at step " << step << " (lr=" << lr << ")";
  if (!norms.empty()) {
    os << "; grad norms:";
    for (const auto& [name, n] : norms) os << ' ' << name << '=' << n;
  }
  return os.str();
}

constexpr std::uint16_t kCheckpointVersion = 1;

}  // namespace

TrainingError::TrainingError(long step, double lr,
                             std::vector<std::pair<std::string, double>> grad_norms)
    : std::runtime_error(describe_failure(step, lr, grad_norms)),
      step_(step),
      lr_(lr),
      grad_norms_(std::move(grad_norms)) {}

void Checkpoint::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  io::Writer w(out);
  w.magic("TCKP");
  w.u16(kCheckpointVersion);
  w.u16(0);
  w.u32(static_cast<std::uint32_t>(next_epoch));
  w.u64(static_cast<std::uint64_t>(steps));
  w.u32(static_cast<std::uint32_t>(params.size()));
  auto block = [&w](const Matrix& m) {
    w.u32(static_cast<std::uint32_t>(m.rows()));
    w.u32(static_cast<std::uint32_t>(m.cols()));
    w.f64_block(m);
  };
  for (const auto& m : params) block(m);
  for (const auto& m : first_moment) block(m);
  for (const auto& m : second_moment) block(m);
  w.u32(static_cast<std::uint32_t>(history.size()));
  for (const auto& h : history) {
    w.u32(static_cast<std::uint32_t>(h.epoch));
    w.f64(h.loss);
    w.f64(h.lr);
  }
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  io::Reader r(in);
  r.expect_magic("TCKP");
  if (r.u16() != kCheckpointVersion) throw FormatError("unsupported checkpoint version");
  r.u16();
  Checkpoint c;
  c.next_epoch = static_cast<int>(r.u32());
  c.steps = static_cast<long>(r.u64());
  const std::uint32_t n = r.u32();
  auto block = [&r]() {
    const auto rows = r.u32();
    const auto cols = r.u32();
    return r.f64_block(rows, cols);
  };
  for (std::uint32_t i = 0; i < n; ++i) c.params.push_back(block());
  for (std::uint32_t i = 0; i < n; ++i) c.first_moment.push_back(block());
  for (std::uint32_t i = 0; i < n; ++i) c.second_moment.push_back(block());
  const std::uint32_t hn = r.u32();
  for (std::uint32_t i = 0; i < hn; ++i) {
    EpochRecord e;
    e.epoch = static_cast<int>(r.u32());
    e.loss = r.f64();
    e.lr = r.f64();
    c.history.push_back(e);
  }
  return c;
}

std::function<double(long, long)> two_phase_schedule(const TrainConfig& cfg, double phase1_fraction,
                                                     double lr2_start, double lr2_end) {
  if (!(phase1_fraction > 0.0 && phase1_fraction < 1.0)) throw ValidationError("two_phase_schedule: fraction must be in (0, 1)");
  if (!(lr2_start >= lr2_end && lr2_end >= 0.0)) throw ValidationError("two_phase_schedule: need lr2_start >= lr2_end >= 0");
  TrainConfig first = cfg;
  TrainConfig second = cfg;
  second.lr_start = lr2_start;
  second.lr_end = lr2_end;
  return [first, second, phase1_fraction](long step, long total) {
    const long split = std::max(1L, static_cast<long>(std::llround(phase1_fraction * static_cast<double>(total))));
    if (step <= split) return cosine_lr(step, split, first);
    return cosine_lr(step - split, std::max(1L, total - split), second);
  };
}

FitResult fit(ParamRefs params, std::size_t dataset_size, const BatchLoss& loss,
              const TrainConfig& cfg, const FitHooks& hooks, const Checkpoint* resume) {
  cfg.validate();
  if (dataset_size == 0) throw ValidationError("fit: dataset is empty");

  const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);
  const long steps_per_epoch = static_cast<long>((dataset_size + batch - 1) / batch);
  const long total_steps = steps_per_epoch * cfg.epochs;

  Optimizer opt(params, cfg);
  Gradients grads(const_refs(params));
  FitResult result;
  int first_epoch = 0;
  long step = 0;
  if (resume) {
    if (resume->params.size() != params.size()) {
      throw ValidationError("checkpoint does not match parameter list");
    }
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = resume->params[i];
    opt.restore(resume->steps, resume->first_moment, resume->second_moment);
    first_epoch = resume->next_epoch;
    step = resume->steps;
    result.history = resume->history;
  }

  std::vector<std::size_t> order(dataset_size);
  for (int epoch = first_epoch; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < dataset_size; ++i) order[i] = i;
    std::mt19937_64 rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);

    double epoch_loss = 0.0;
    double lr = cfg.lr_start;
    for (std::size_t start = 0; start < dataset_size; start += batch) {
      const std::size_t len = std::min(batch, dataset_size - start);
      std::span<const std::size_t> idx(order.data() + start, len);
      lr = cfg.schedule ? cfg.schedule(step, total_steps) : cosine_lr(step, total_steps, cfg);
      grads.zero();
      const double batch_loss = loss(idx, grads);
      if (!std::isfinite(batch_loss) || !grads.all_finite()) {
        std::vector<std::pair<std::string, double>> norms;
        for (std::size_t i = 0; i < grads.size(); ++i) {
          norms.emplace_back(params[i]->name, grads[i].norm());
        }
        throw TrainingError(step, lr, std::move(norms));
      }
      opt.step(grads, lr);
      if (hooks.after_step) hooks.after_step(step, idx);
      epoch_loss += batch_loss * static_cast<double>(len);
      ++step;
    }
    result.history.push_back({epoch, epoch_loss / static_cast<double>(dataset_size), lr});
    if (hooks.after_epoch) hooks.after_epoch(epoch);
    if (!cfg.checkpoint_path.empty()) {
      Checkpoint c;
      c.next_epoch = epoch + 1;
      c.steps = step;
      for (const Parameter* p : params) c.params.push_back(p->value);
      c.first_moment = opt.first_moment();
      c.second_moment = opt.second_moment();
      c.history = result.history;
      c.save(cfg.checkpoint_path);
    }
  }
  result.steps = step;
  return result;
}

// ---------------------------------------------------------------------------

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(worker_threads()), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(failure_mu);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

double accumulate_ordered(std::size_t n, const ConstParamRefs& params,
                          const std::function<double(std::size_t, Gradients&)>& item,
                          Gradients& out) {
  std::vector<Gradients> per_item;
  per_item.reserve(n);
  for (std::size_t i = 0; i < n; ++i) per_item.emplace_back(params);
  std::vector<double> losses(n, 0.0);
  parallel_for(n, [&](std::size_t i) { losses[i] = item(i, per_item[i]); });
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    out.add(per_item[i]);
    total += losses[i];
  }
  return total;
}

void write_history_csv(const std::string& path, const std::vector<EpochRecord>& history) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "epoch,loss,lr\n";
  out.precision(17);
  for (const auto& h : history) out << h.epoch << ',' << h.loss << ',' << h.lr << '\n';
}

}  // namespace teller::train
