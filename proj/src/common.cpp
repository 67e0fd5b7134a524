#include "teller/common.hpp"

#include <cmath>
#include <cstdlib>
#include <thread>

namespace teller {

Gradients::Gradients(const ConstParamRefs& params) : params_(params) {
  grads_.reserve(params.size());
  for (const Parameter* p : params) {
    grads_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
  }
}

Matrix* Gradients::sink_for(const Parameter* p) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i] == p) return &grads_[i];
  }
  return nullptr;
}

void Gradients::zero() {
  for (auto& g : grads_) g.setZero();
}

void Gradients::add(const Gradients& other) {
  if (other.grads_.size() != grads_.size()) {
    throw ValidationError("gradient buffers have different layouts");
  }
  for (std::size_t i = 0; i < grads_.size(); ++i) grads_[i] += other.grads_[i];
}

void Gradients::scale(double factor) {
  for (auto& g : grads_) g *= factor;
}

double Gradients::squared_norm() const {
  double total = 0.0;
  for (const auto& g : grads_) total += g.squaredNorm();
  return total;
}

bool Gradients::all_finite() const {
  for (const auto& g : grads_) {
    if (!teller::all_finite(g)) return false;
  }
  return true;
}

std::size_t parameter_count(const ConstParamRefs& params) {
  std::size_t n = 0;
  for (const Parameter* p : params) n += static_cast<std::size_t>(p->value.size());
  return n;
}

bool all_finite(const Matrix& m) { return m.allFinite(); }

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer over seed + golden-ratio-spaced stream offset.
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

int worker_threads() {
  int hw = static_cast<int>(std::thread::hardware_concurrency());
  if (hw <= 0) hw = 1;
  if (const char* env = std::getenv("TELLER_THREADS")) {
    char* end = nullptr;
    long cap = std::strtol(env, &end, 10);
    if (end != env && cap >= 1) return static_cast<int>(std::min<long>(cap, hw));
  }
  return hw;
}

}  // namespace teller
