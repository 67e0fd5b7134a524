#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "teller/common.hpp"

namespace teller::train {

enum class OptimizerKind { kAdam, kSgdMomentum };

struct TrainConfig {
  double lr_start = 1e-4;
  double lr_end = 1e-6;
  int epochs = 1;
  int batch_size = 32;
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double momentum = 0.9;
  // Decoupled (AdamW-style) decay; applied as p -= lr * decay * p.
  double weight_decay = 0.0;
  // Global-norm clip; 0 disables.
  double grad_clip = 0.0;
  // Written after every epoch when non-empty.
  std::string checkpoint_path;
  // Replaces cosine_lr when set: lr for (step, total_steps).
  std::function<double(long, long)> schedule;

  void validate() const;
};

// lr_end + (lr_start - lr_end) * (1 + cos(pi * step / total_steps)) / 2
double cosine_lr(long step, long total_steps, const TrainConfig& cfg);

// Cosine over the first `phase1_fraction` of the steps with cfg's range, then
// a second cosine from lr2_start to lr2_end (a fine-tuning phase). Unused by
// the shipped commands.
std::function<double(long, long)> two_phase_schedule(const TrainConfig& cfg, double phase1_fraction,
                                                     double lr2_start, double lr2_end);

class Optimizer {
 public:
  Optimizer(ParamRefs params, const TrainConfig& cfg);

  void step(const Gradients& grads, double lr);

  long steps_taken() const { return t_; }
  const std::vector<Matrix>& first_moment() const { return m_; }
  const std::vector<Matrix>& second_moment() const { return v_; }
  void restore(long steps, std::vector<Matrix> m, std::vector<Matrix> v);

 private:
  ParamRefs params_;
  TrainConfig cfg_;
  long t_ = 0;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
};

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  double lr = 0.0;
};

struct FitResult {
  std::vector<EpochRecord> history;
  long steps = 0;
};

// Raised when the loss or gradients become non-finite.
class TrainingError : public std::runtime_error {
 public:
  TrainingError(long step, double lr, std::vector<std::pair<std::string, double>> grad_norms);
  long step() const { return step_; }
  double lr() const { return lr_; }
  const std::vector<std::pair<std::string, double>>& grad_norms() const { return grad_norms_; }

 private:
  long step_;
  double lr_;
  std::vector<std::pair<std::string, double>> grad_norms_;
};

// Mean loss over `batch`; must write the gradient of that mean into `grads`
// (which arrives zeroed).
using BatchLoss = std::function<double(std::span<const std::size_t> batch, Gradients& grads)>;

struct FitHooks {
  // Called after each optimizer step with the global step index.
  std::function<void(long step, std::span<const std::size_t> batch)> after_step;
  std::function<void(int epoch)> after_epoch;
};

// Full-precision resume state written by fit() when checkpoint_path is set.
struct Checkpoint {
  int next_epoch = 0;
  long steps = 0;
  std::vector<Matrix> params;
  std::vector<Matrix> first_moment;
  std::vector<Matrix> second_moment;
  std::vector<EpochRecord> history;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);
};

FitResult fit(ParamRefs params, std::size_t dataset_size, const BatchLoss& loss,
              const TrainConfig& cfg, const FitHooks& hooks = {},
              const Checkpoint* resume = nullptr);

// Evaluates `item` for every index (on worker threads when available) and
// sums the per-item gradients in index order, so the reduction does not
// depend on the thread count. Returns the summed item losses.
double accumulate_ordered(std::size_t n, const ConstParamRefs& params,
                          const std::function<double(std::size_t, Gradients&)>& item,
                          Gradients& out);

// Runs fn(i) for i in [0, n) across worker threads. Order of execution is
// unspecified; fn must only touch state owned by index i.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

void write_history_csv(const std::string& path, const std::vector<EpochRecord>& history);

}  // namespace teller::train
