#include "teller/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>

#include <gtest/gtest.h>

namespace teller::train {
namespace {

TrainConfig reference_schedule() {
  TrainConfig cfg;
  cfg.lr_start = 1e-4;
  cfg.lr_end = 1e-6;
  return cfg;
}

TEST(CosineLrTest, EndpointsAndMidpoint) {
  const TrainConfig cfg = reference_schedule();
  EXPECT_DOUBLE_EQ(cosine_lr(0, 100, cfg), 1e-4);
  EXPECT_DOUBLE_EQ(cosine_lr(100, 100, cfg), 1e-6);
  EXPECT_NEAR(cosine_lr(50, 100, cfg), 5.05e-5, 1e-18);
}

TEST(CosineLrTest, MonotoneNonIncreasing) {
  const TrainConfig cfg = reference_schedule();
  double prev = cosine_lr(0, 997, cfg);
  for (long s = 1; s <= 997; ++s) {
    const double lr = cosine_lr(s, 997, cfg);
    EXPECT_LE(lr, prev);
    prev = lr;
  }
}

TEST(CosineLrTest, OutOfRangeStepThrows) {
  const TrainConfig cfg = reference_schedule();
  EXPECT_THROW(cosine_lr(-1, 10, cfg), ValidationError);
  EXPECT_THROW(cosine_lr(11, 10, cfg), ValidationError);
}

// A one-parameter model whose per-sample loss is (theta - target_i)^2.
struct Quadratic {
  Parameter theta{"theta", Matrix::Zero(1, 1)};
  std::vector<double> targets;

  BatchLoss loss() {
    return [this](std::span<const std::size_t> batch, Gradients& g) {
      double total = 0.0;
      for (std::size_t i : batch) {
        const double d = theta.value(0, 0) - targets[i];
        total += d * d;
        g[0](0, 0) += 2.0 * d / static_cast<double>(batch.size());
      }
      return total / static_cast<double>(batch.size());
    };
  }
};

TrainConfig quadratic_config() {
  TrainConfig cfg;
  cfg.lr_start = 0.1;
  cfg.lr_end = 1e-3;
  cfg.epochs = 200;
  cfg.batch_size = 4;
  cfg.seed = 11;
  return cfg;
}

TEST(FitTest, ConvexQuadraticConverges) {
  Quadratic q;
  q.targets = std::vector<double>(8, 3.0);
  fit({&q.theta}, q.targets.size(), q.loss(), quadratic_config());
  EXPECT_NEAR(q.theta.value(0, 0), 3.0, 1e-3);
}

TEST(FitTest, SameSeedSameHistory) {
  Quadratic a, b;
  a.targets = b.targets = {1.0, 2.0, 4.0, 8.0, -3.0, 0.5};
  auto cfg = quadratic_config();
  cfg.epochs = 20;
  const auto ha = fit({&a.theta}, a.targets.size(), a.loss(), cfg).history;
  const auto hb = fit({&b.theta}, b.targets.size(), b.loss(), cfg).history;
  ASSERT_EQ(ha.size(), hb.size());
  for (std::size_t i = 0; i < ha.size(); ++i) EXPECT_EQ(ha[i].loss, hb[i].loss);
  EXPECT_EQ(a.theta.value(0, 0), b.theta.value(0, 0));
}

TEST(FitTest, NanAbortsWithStep) {
  Quadratic q;
  q.targets = std::vector<double>(8, 1.0);
  long calls = 0;
  BatchLoss base = q.loss();
  BatchLoss faulty = [&](std::span<const std::size_t> batch, Gradients& g) {
    const double l = base(batch, g);
    return calls++ == 7 ? std::numeric_limits<double>::quiet_NaN() : l;
  };
  try {
    fit({&q.theta}, q.targets.size(), faulty, quadratic_config());
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_EQ(e.step(), 7);
    EXPECT_NE(std::string(e.what()).find("step 7"), std::string::npos);
    ASSERT_EQ(e.grad_norms().size(), 1u);
    EXPECT_EQ(e.grad_norms()[0].first, "theta");
  }
}

TEST(FitTest, ZeroLearningRateLeavesParamsUnchanged) {
  Quadratic q;
  q.targets = {5.0, 6.0};
  q.theta.value(0, 0) = 0.123456789;
  auto cfg = quadratic_config();
  cfg.lr_start = 0.0;
  cfg.lr_end = 0.0;
  cfg.epochs = 3;
  fit({&q.theta}, q.targets.size(), q.loss(), cfg);
  EXPECT_EQ(q.theta.value(0, 0), 0.123456789);
}

TEST(FitTest, CheckpointResumeMatchesUninterruptedRun) {
  const auto path = (std::filesystem::temp_directory_path() / "teller_fit_resume.tckp").string();
  auto cfg = quadratic_config();
  cfg.epochs = 6;
  Quadratic full;
  full.targets = {1.0, -2.0, 0.5, 3.0, 7.0};
  const auto whole = fit({&full.theta}, full.targets.size(), full.loss(), cfg);

  // Interrupt a run right after the epoch-3 checkpoint has been written.
  Quadratic first;
  first.targets = full.targets;
  auto partial = cfg;
  partial.checkpoint_path = path;
  struct Stop {};
  int epochs_done = 0;
  FitHooks stopper;
  stopper.after_epoch = [&](int) { ++epochs_done; };
  stopper.after_step = [&](long, std::span<const std::size_t>) {
    if (epochs_done == 3) throw Stop{};
  };
  try {
    fit({&first.theta}, first.targets.size(), first.loss(), partial, stopper);
  } catch (const Stop&) {
  }
  const Checkpoint ckpt = Checkpoint::load(path);
  ASSERT_EQ(ckpt.next_epoch, 3);

  Quadratic resumed;
  resumed.targets = full.targets;
  const auto tail = fit({&resumed.theta}, resumed.targets.size(), resumed.loss(), cfg, {}, &ckpt);
  EXPECT_EQ(resumed.theta.value(0, 0), full.theta.value(0, 0));
  ASSERT_EQ(tail.history.size(), whole.history.size());
  for (std::size_t i = 0; i < whole.history.size(); ++i) {
    EXPECT_EQ(tail.history[i].loss, whole.history[i].loss);
  }
  std::remove(path.c_str());
}

TEST(FitTest, EmptyDatasetRejected) {
  Quadratic q;
  EXPECT_THROW(fit({&q.theta}, 0, q.loss(), quadratic_config()), ValidationError);
}

TEST(AccumulateOrderedTest, IndependentOfThreadCount) {
  Parameter p{"p", Matrix::Zero(1, 3)};
  ConstParamRefs ps{&p};
  auto item = [](std::size_t i, Gradients& g) {
    g[0].setConstant(1.0 / static_cast<double>(i + 3));
    return 0.1 * static_cast<double>(i);
  };
  Gradients a(ps);
  const double la = accumulate_ordered(17, ps, item, a);
  Gradients b(ps);
  double lb = 0.0;
  for (std::size_t i = 0; i < 17; ++i) {
    Gradients one(ps);
    lb += item(i, one);
    b.add(one);
  }
  EXPECT_EQ(la, lb);
  EXPECT_EQ(a[0], b[0]);
}

}  // namespace
}  // namespace teller::train

namespace teller::train {
namespace {

TEST(TwoPhaseScheduleTest, SecondCosineAfterSplit) {
  TrainConfig cfg;
  const auto s = two_phase_schedule(cfg, 0.5, 1e-5, 1e-6);
  EXPECT_DOUBLE_EQ(s(0, 100), 1e-4);
  EXPECT_DOUBLE_EQ(s(50, 100), 1e-6);
  EXPECT_DOUBLE_EQ(s(51, 100), cosine_lr(1, 50, TrainConfig{1e-5, 1e-6}));
  EXPECT_DOUBLE_EQ(s(100, 100), 1e-6);
  EXPECT_THROW(two_phase_schedule(cfg, 1.5, 1e-5, 1e-6), ValidationError);
}

}  // namespace
}  // namespace teller::train
