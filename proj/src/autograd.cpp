#include "teller/autograd.hpp"

#include <cmath>
#include <limits>
#include <memory>

namespace teller::ad {

namespace {

constexpr double kSqrt2OverPi = 0.7978845608028654;
constexpr double kGeluCoeff = 0.044715;

void check_same_tape(Var a, Var b) {
  if (a.tape == nullptr || a.tape != b.tape) {
    throw ValidationError("autograd: operands belong to different tapes");
  }
}

}  // namespace

double gelu_value(double x) {
  const double inner = kSqrt2OverPi * (x + kGeluCoeff * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(inner));
}

double gelu_derivative(double x) {
  const double inner = kSqrt2OverPi * (x + kGeluCoeff * x * x * x);
  const double t = std::tanh(inner);
  const double d_inner = kSqrt2OverPi * (1.0 + 3.0 * kGeluCoeff * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner;
}

void layer_norm_rows(const Matrix& x, const Matrix& gain, const Matrix& bias, Matrix& out,
                     double eps) {
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  out.resize(n, d);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double mean = x.row(r).sum() / static_cast<double>(d);
    const double var = (x.row(r).array() - mean).square().sum() / static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    out.row(r) = (((x.row(r).array() - mean) * inv) * gain.row(0).array() + bias.row(0).array())
                     .matrix();
  }
}

RowVector log_softmax(const RowVector& logits) {
  const double m = logits.maxCoeff();
  const double lse = m + std::log((logits.array() - m).exp().sum());
  return (logits.array() - lse).matrix();
}

// ---------------------------------------------------------------------------
// Tape

Var Tape::push(Matrix value, bool needs_grad, std::function<void(Tape&, int)> backward) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  if (needs_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant(Matrix value) { return push(std::move(value), false, nullptr); }

Var Tape::variable(Matrix value) { return push(std::move(value), true, nullptr); }

Var Tape::param(const Parameter& p, Gradients* grads) {
  Node n;
  n.ref = &p.value;
  n.sink = grads ? grads->sink_for(&p) : nullptr;
  n.needs_grad = n.sink != nullptr;
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

const Matrix& Tape::value(Var v) const { return node(v.id).val(); }

Matrix Tape::grad(Var v) const {
  const Node& n = node(v.id);
  if (n.grad.size() == 0) return Matrix::Zero(n.val().rows(), n.val().cols());
  return n.grad;
}

Matrix& Tape::grad_buffer(int id) {
  Node& n = node(id);
  if (n.grad.size() == 0) n.grad = Matrix::Zero(n.val().rows(), n.val().cols());
  return n.grad;
}

void Tape::backward(Var scalar) {
  if (scalar.tape != this) throw ValidationError("autograd: backward on foreign var");
  const Matrix& v = value(scalar);
  if (v.rows() != 1 || v.cols() != 1) {
    throw ValidationError("autograd: backward target must be 1x1");
  }
  for (auto& n : nodes_) n.grad.resize(0, 0);
  grad_buffer(scalar.id)(0, 0) = 1.0;
  for (int i = scalar.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.needs_grad || n.grad.size() == 0) continue;
    if (n.backward) n.backward(*this, i);
    if (n.sink) *n.sink += nodes_[static_cast<std::size_t>(i)].grad;
  }
}

// ---------------------------------------------------------------------------
// Ops

Var matmul(Var a, Var b) {
  check_same_tape(a, b);
  Tape& t = *a.tape;
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  if (av.cols() != bv.rows()) throw ValidationError("matmul: inner dimensions differ");
  Matrix out = av * bv;
  return t.push(std::move(out), t.needs(a) || t.needs(b), [a, b](Tape& tp, int self) {
    const Matrix& g = tp.node(self).grad;
    if (tp.needs(a)) tp.grad_buffer(a.id).noalias() += g * tp.value(b).transpose();
    if (tp.needs(b)) tp.grad_buffer(b.id).noalias() += tp.value(a).transpose() * g;
  });
}

Var linear(Var x, Var w, Var b) {
  check_same_tape(x, w);
  check_same_tape(x, b);
  Tape& t = *x.tape;
  const Matrix& xv = t.value(x);
  const Matrix& wv = t.value(w);
  const Matrix& bv = t.value(b);
  if (xv.cols() != wv.rows() || bv.rows() != 1 || bv.cols() != wv.cols()) {
    throw ValidationError("linear: shape mismatch");
  }
  Matrix out = xv * wv;
  out.rowwise() += bv.row(0);
  const bool needs = t.needs(x) || t.needs(w) || t.needs(b);
  return t.push(std::move(out), needs, [x, w, b](Tape& tp, int self) {
    const Matrix& g = tp.node(self).grad;
    if (tp.needs(x)) tp.grad_buffer(x.id).noalias() += g * tp.value(w).transpose();
    if (tp.needs(w)) tp.grad_buffer(w.id).noalias() += tp.value(x).transpose() * g;
    if (tp.needs(b)) tp.grad_buffer(b.id) += g.colwise().sum();
  });
}

Var add(Var a, Var b) {
  check_same_tape(a, b);
  Tape& t = *a.tape;
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  if (av.rows() != bv.rows() || av.cols() != bv.cols()) throw ValidationError("add: shape mismatch");
  Matrix out = av + bv;
  return t.push(std::move(out), t.needs(a) || t.needs(b), [a, b](Tape& tp, int self) {
    const Matrix& g = tp.node(self).grad;
    if (tp.needs(a)) tp.grad_buffer(a.id) += g;
    if (tp.needs(b)) tp.grad_buffer(b.id) += g;
  });
}

Var sub(Var a, Var b) {
  check_same_tape(a, b);
  Tape& t = *a.tape;
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  if (av.rows() != bv.rows() || av.cols() != bv.cols()) throw ValidationError("sub: shape mismatch");
  Matrix out = av - bv;
  return t.push(std::move(out), t.needs(a) || t.needs(b), [a, b](Tape& tp, int self) {
    const Matrix& g = tp.node(self).grad;
    if (tp.needs(a)) tp.grad_buffer(a.id) += g;
    if (tp.needs(b)) tp.grad_buffer(b.id) -= g;
  });
}

Var add_row(Var a, Var row) {
  check_same_tape(a, row);
  Tape& t = *a.tape;
  const Matrix& av = t.value(a);
  const Matrix& rv = t.value(row);
  if (rv.rows() != 1 || rv.cols() != av.cols()) throw ValidationError("add_row: shape mismatch");
  Matrix out = av;
  out.rowwise() += rv.row(0);
  return t.push(std::move(out), t.needs(a) || t.needs(row), [a, row](Tape& tp, int self) {
    const Matrix& g = tp.node(self).grad;
    if (tp.needs(a)) tp.grad_buffer(a.id) += g;
    if (tp.needs(row)) tp.grad_buffer(row.id) += g.colwise().sum();
  });
}

Var scale(Var a, double factor) {
  Tape& t = *a.tape;
  Matrix out = t.value(a) * factor;
  return t.push(std::move(out), t.needs(a), [a, factor](Tape& tp, int self) {
    tp.grad_buffer(a.id) += tp.node(self).grad * factor;
  });
}

Var hadamard(Var a, const Matrix& mask) {
  Tape& t = *a.tape;
  const Matrix& av = t.value(a);
  if (av.rows() != mask.rows() || av.cols() != mask.cols()) {
    throw ValidationError("hadamard: shape mismatch");
  }
  Matrix out = av.cwiseProduct(mask);
  auto m = std::make_shared<Matrix>(mask);
  return t.push(std::move(out), t.needs(a), [a, m](Tape& tp, int self) {
    tp.grad_buffer(a.id) += tp.node(self).grad.cwiseProduct(*m);
  });
}

Var gelu(Var a) {
  Tape& t = *a.tape;
  Matrix out = t.value(a).unaryExpr([](double x) { return gelu_value(x); });
  return t.push(std::move(out), t.needs(a), [a](Tape& tp, int self) {
    const Matrix& g = tp.node(self).grad;
    tp.grad_buffer(a.id) +=
        g.cwiseProduct(tp.value(a).unaryExpr([](double x) { return gelu_derivative(x); }));
  });
}

Var tanh(Var a) {
  Tape& t = *a.tape;
  Matrix out = t.value(a).array().tanh().matrix();
  return t.push(std::move(out), t.needs(a), [a](Tape& tp, int self) {
    const Matrix& y = tp.node(self).value;
    const Matrix& g = tp.node(self).grad;
    tp.grad_buffer(a.id) += (g.array() * (1.0 - y.array().square())).matrix();
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  check_same_tape(x, gain);
  check_same_tape(x, bias);
  Tape& t = *x.tape;
  const Matrix& xv = t.value(x);
  const Eigen::Index n = xv.rows();
  const Eigen::Index d = xv.cols();
  auto xhat = std::make_shared<Matrix>(n, d);
  auto inv_std = std::make_shared<Eigen::VectorXd>(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double mean = xv.row(r).sum() / static_cast<double>(d);
    const double var = (xv.row(r).array() - mean).square().sum() / static_cast<double>(d);
    (*inv_std)(r) = 1.0 / std::sqrt(var + eps);
    xhat->row(r) = ((xv.row(r).array() - mean) * (*inv_std)(r)).matrix();
  }
  const Matrix& gv = t.value(gain);
  const Matrix& bv = t.value(bias);
  Matrix out(n, d);
  for (Eigen::Index r = 0; r < n; ++r) {
    out.row(r) = (xhat->row(r).array() * gv.row(0).array() + bv.row(0).array()).matrix();
  }
  const bool needs = t.needs(x) || t.needs(gain) || t.needs(bias);
  return t.push(std::move(out), needs, [x, gain, bias, xhat, inv_std](Tape& tp, int self) {
    const Matrix& g = tp.node(self).grad;
    const Matrix& gv = tp.value(gain);
    if (tp.needs(gain)) tp.grad_buffer(gain.id) += g.cwiseProduct(*xhat).colwise().sum();
    if (tp.needs(bias)) tp.grad_buffer(bias.id) += g.colwise().sum();
    if (tp.needs(x)) {
      Matrix& gx = tp.grad_buffer(x.id);
      const double dn = static_cast<double>(g.cols());
      for (Eigen::Index r = 0; r < g.rows(); ++r) {
        RowVector dxhat = (g.row(r).array() * gv.row(0).array()).matrix();
        const double s1 = dxhat.sum();
        const double s2 = dxhat.dot(xhat->row(r));
        gx.row(r) += ((dxhat.array() * dn - s1 - xhat->row(r).array() * s2) *
                      ((*inv_std)(r) / dn))
                         .matrix();
      }
    }
  });
}

Var attention(Var q, Var k, Var v, const AttentionSpec& spec) {
  check_same_tape(q, k);
  check_same_tape(q, v);
  Tape& t = *q.tape;
  const Matrix& qv = t.value(q);
  const Matrix& kv = t.value(k);
  const Matrix& vv = t.value(v);
  const Eigen::Index n = qv.rows();
  if (kv.rows() != n || vv.rows() != n || kv.cols() != qv.cols()) {
    throw ValidationError("attention: q/k/v shape mismatch");
  }
  const int heads = spec.heads;
  if (heads <= 0 || qv.cols() % heads != 0 || vv.cols() % heads != 0) {
    throw ValidationError("attention: width not divisible by head count");
  }
  if (!spec.alibi_slopes.empty() && static_cast<int>(spec.alibi_slopes.size()) != heads) {
    throw ValidationError("attention: need one recency slope per head");
  }
  const Eigen::Index group = spec.group_len > 0 ? spec.group_len : n;
  if (n > 0 && n % group != 0) throw ValidationError("attention: rows not divisible by group");
  const Eigen::Index groups = n == 0 ? 0 : n / group;
  const Eigen::Index dh = qv.cols() / heads;
  const Eigen::Index dvh = vv.cols() / heads;
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(dh));

  auto probs = std::make_shared<std::vector<Matrix>>();
  probs->reserve(static_cast<std::size_t>(groups * heads));
  Matrix out = Matrix::Zero(n, vv.cols());
  const double neg_inf = -std::numeric_limits<double>::infinity();
  for (Eigen::Index gi = 0; gi < groups; ++gi) {
    const Eigen::Index s = gi * group;
    for (int h = 0; h < heads; ++h) {
      Matrix scores = (qv.block(s, h * dh, group, dh) * kv.block(s, h * dh, group, dh).transpose()) *
                      scale_factor;
      const double slope = spec.alibi_slopes.empty() ? 0.0 : spec.alibi_slopes[h];
      for (Eigen::Index i = 0; i < group; ++i) {
        double row_max = neg_inf;
        for (Eigen::Index j = 0; j < group; ++j) {
          const bool blocked = (spec.causal && j > i) || (spec.window > 0 && i - j >= spec.window);
          if (blocked) {
            scores(i, j) = neg_inf;
          } else {
            scores(i, j) -= slope * static_cast<double>(i - j);
            row_max = std::max(row_max, scores(i, j));
          }
        }
        double total = 0.0;
        for (Eigen::Index j = 0; j < group; ++j) {
          const double e = scores(i, j) == neg_inf ? 0.0 : std::exp(scores(i, j) - row_max);
          scores(i, j) = e;
          total += e;
        }
        scores.row(i) /= total;
      }
      out.block(s, h * dvh, group, dvh).noalias() = scores * vv.block(s, h * dvh, group, dvh);
      probs->push_back(std::move(scores));
    }
  }

  const bool needs = t.needs(q) || t.needs(k) || t.needs(v);
  return t.push(std::move(out), needs,
                [q, k, v, probs, heads, group, groups, dh, dvh, scale_factor](Tape& tp, int self) {
                  const Matrix& g = tp.node(self).grad;
                  const Matrix& qv = tp.value(q);
                  const Matrix& kv = tp.value(k);
                  const Matrix& vv = tp.value(v);
                  Matrix* gq = tp.needs(q) ? &tp.grad_buffer(q.id) : nullptr;
                  Matrix* gk = tp.needs(k) ? &tp.grad_buffer(k.id) : nullptr;
                  Matrix* gv = tp.needs(v) ? &tp.grad_buffer(v.id) : nullptr;
                  for (Eigen::Index gi = 0; gi < groups; ++gi) {
                    const Eigen::Index s = gi * group;
                    for (int h = 0; h < heads; ++h) {
                      const Matrix& p = (*probs)[static_cast<std::size_t>(gi * heads + h)];
                      const auto dout = g.block(s, h * dvh, group, dvh);
                      if (gv) gv->block(s, h * dvh, group, dvh).noalias() += p.transpose() * dout;
                      if (!gq && !gk) continue;
                      Matrix dp = dout * vv.block(s, h * dvh, group, dvh).transpose();
                      Eigen::VectorXd row_dot = dp.cwiseProduct(p).rowwise().sum();
                      Matrix ds = p.cwiseProduct(dp.colwise() - row_dot) * scale_factor;
                      if (gq) gq->block(s, h * dh, group, dh).noalias() += ds * kv.block(s, h * dh, group, dh);
                      if (gk) {
                        gk->block(s, h * dh, group, dh).noalias() +=
                            ds.transpose() * qv.block(s, h * dh, group, dh);
                      }
                    }
                  }
                });
}

Var gather_rows(Var table, const std::vector<int>& ids) {
  Tape& t = *table.tape;
  const Matrix& tv = t.value(table);
  Matrix out(static_cast<Eigen::Index>(ids.size()), tv.cols());
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || ids[r] >= tv.rows()) throw ValidationError("gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(r)) = tv.row(ids[r]);
  }
  auto idx = std::make_shared<std::vector<int>>(ids);
  return t.push(std::move(out), t.needs(table), [table, idx](Tape& tp, int self) {
    const Matrix& g = tp.node(self).grad;
    Matrix& gt = tp.grad_buffer(table.id);
    for (std::size_t r = 0; r < idx->size(); ++r) gt.row((*idx)[r]) += g.row(static_cast<Eigen::Index>(r));
  });
}

Var concat_cols(Var a, Var b) {
  check_same_tape(a, b);
  Tape& t = *a.tape;
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  if (av.rows() != bv.rows()) throw ValidationError("concat_cols: row mismatch");
  Matrix out(av.rows(), av.cols() + bv.cols());
  out << av, bv;
  const Eigen::Index ac = av.cols();
  return t.push(std::move(out), t.needs(a) || t.needs(b), [a, b, ac](Tape& tp, int self) {
    const Matrix& g = tp.node(self).grad;
    if (tp.needs(a)) tp.grad_buffer(a.id) += g.leftCols(ac);
    if (tp.needs(b)) tp.grad_buffer(b.id) += g.rightCols(g.cols() - ac);
  });
}

Var stack_rows(const std::vector<Var>& parts, const std::vector<std::pair<int, int>>& picks) {
  if (parts.empty()) throw ValidationError("stack_rows: no parts");
  Tape& t = *parts.front().tape;
  const Eigen::Index cols = t.value(parts.front()).cols();
  bool needs = false;
  for (const Var& p : parts) {
    if (p.tape != &t || t.value(p).cols() != cols) throw ValidationError("stack_rows: incompatible parts");
    needs = needs || t.needs(p);
  }
  Matrix out(static_cast<Eigen::Index>(picks.size()), cols);
  for (std::size_t r = 0; r < picks.size(); ++r) {
    const auto [part, row] = picks[r];
    const Matrix& src = t.value(parts.at(static_cast<std::size_t>(part)));
    if (row < 0 || row >= src.rows()) throw ValidationError("stack_rows: row out of range");
    out.row(static_cast<Eigen::Index>(r)) = src.row(row);
  }
  auto ps = std::make_shared<std::vector<Var>>(parts);
  auto pk = std::make_shared<std::vector<std::pair<int, int>>>(picks);
  return t.push(std::move(out), needs, [ps, pk](Tape& tp, int self) {
    const Matrix& g = tp.node(self).grad;
    for (std::size_t r = 0; r < pk->size(); ++r) {
      const auto [part, row] = (*pk)[r];
      const Var src = (*ps)[static_cast<std::size_t>(part)];
      if (tp.needs(src)) tp.grad_buffer(src.id).row(row) += g.row(static_cast<Eigen::Index>(r));
    }
  });
}

Var cross_entropy_rows(Var logits, const std::vector<Token>& labels) {
  Tape& t = *logits.tape;
  const Matrix& z = t.value(logits);
  if (static_cast<std::size_t>(z.rows()) != labels.size()) {
    throw ValidationError("cross_entropy_rows: one label per row required");
  }
  auto softmax = std::make_shared<Matrix>(z.rows(), z.cols());
  Matrix out(z.rows(), 1);
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    const Token y = labels[static_cast<std::size_t>(r)];
    if (y < 0 || y >= z.cols()) throw ValidationError("cross_entropy_rows: label out of range");
    RowVector lp = log_softmax(z.row(r));
    out(r, 0) = -lp(y);
    softmax->row(r) = lp.array().exp().matrix();
  }
  auto lab = std::make_shared<std::vector<Token>>(labels);
  return t.push(std::move(out), t.needs(logits), [logits, softmax, lab](Tape& tp, int self) {
    const Matrix& g = tp.node(self).grad;
    Matrix& gz = tp.grad_buffer(logits.id);
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      RowVector d = softmax->row(r);
      d((*lab)[static_cast<std::size_t>(r)]) -= 1.0;
      gz.row(r) += d * g(r, 0);
    }
  });
}

Var square(Var a) {
  Tape& t = *a.tape;
  Matrix out = t.value(a).array().square().matrix();
  return t.push(std::move(out), t.needs(a), [a](Tape& tp, int self) {
    tp.grad_buffer(a.id) += (tp.node(self).grad.array() * 2.0 * tp.value(a).array()).matrix();
  });
}

Var sum(Var a) {
  Tape& t = *a.tape;
  Matrix out(1, 1);
  out(0, 0) = t.value(a).sum();
  return t.push(std::move(out), t.needs(a), [a](Tape& tp, int self) {
    tp.grad_buffer(a.id).array() += tp.node(self).grad(0, 0);
  });
}

Var sum_squares(Var a) {
  Tape& t = *a.tape;
  Matrix out(1, 1);
  out(0, 0) = t.value(a).squaredNorm();
  return t.push(std::move(out), t.needs(a), [a](Tape& tp, int self) {
    tp.grad_buffer(a.id) += tp.value(a) * (2.0 * tp.node(self).grad(0, 0));
  });
}

Var reshape(Var a, Eigen::Index rows, Eigen::Index cols) {
  Tape& t = *a.tape;
  const Matrix& av = t.value(a);
  if (rows * cols != av.size()) throw ValidationError("reshape: element count mismatch");
  Matrix out = Eigen::Map<const Matrix>(av.data(), rows, cols);
  const Eigen::Index r0 = av.rows(), c0 = av.cols();
  return t.push(std::move(out), t.needs(a), [a, r0, c0](Tape& tp, int self) {
    const Matrix& g = tp.node(self).grad;
    tp.grad_buffer(a.id) += Eigen::Map<const Matrix>(g.data(), r0, c0);
  });
}

Var stop_gradient(Var a) {
  Tape& t = *a.tape;
  return t.push(t.value(a), false, nullptr);
}

}  // namespace teller::ad
