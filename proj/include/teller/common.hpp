#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace teller {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

using Token = std::int32_t;

// Thrown when caller-supplied data violates a documented precondition.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Thrown when a file or stream does not match its container layout.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A named, trainable tensor. Models own these by value.
struct Parameter {
  std::string name;
  Matrix value;
};

using ParamRefs = std::vector<Parameter*>;
using ConstParamRefs = std::vector<const Parameter*>;

// Gradient buffers aligned index-for-index with a parameter list.
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(const ConstParamRefs& params);

  // Returns the buffer for `p`, or nullptr when `p` is not tracked.
  Matrix* sink_for(const Parameter* p);

  void zero();
  void add(const Gradients& other);
  void scale(double factor);
  double squared_norm() const;
  bool all_finite() const;

  std::size_t size() const { return grads_.size(); }
  Matrix& operator[](std::size_t i) { return grads_[i]; }
  const Matrix& operator[](std::size_t i) const { return grads_[i]; }
  const ConstParamRefs& params() const { return params_; }

 private:
  ConstParamRefs params_;
  std::vector<Matrix> grads_;
};

inline ConstParamRefs const_refs(const ParamRefs& refs) {
  return ConstParamRefs(refs.begin(), refs.end());
}

std::size_t parameter_count(const ConstParamRefs& params);

bool all_finite(const Matrix& m);

// Deterministic 64-bit mixer used to derive child seeds from a master seed.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

// Number of worker threads allowed; honours TELLER_THREADS when set.
int worker_threads();

}  // namespace teller
