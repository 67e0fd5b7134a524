#include "teller/autograd.hpp"

#include <random>

#include <gtest/gtest.h>

#include "teller/gradcheck.hpp"

namespace teller {
namespace {

Parameter random_param(const std::string& name, int rows, int cols, std::mt19937_64& rng,
                       double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  Parameter p{name, Matrix(rows, cols)};
  for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = nd(rng);
  return p;
}

// Builds a scalar from the params using `body`, runs backward, and checks
// every entry against central differences.
double max_rel_error(const ParamRefs& params,
                     const std::function<ad::Var(ad::Tape&, Gradients*)>& body) {
  Gradients grads(const_refs(params));
  {
    ad::Tape tape;
    ad::Var out = body(tape, &grads);
    tape.backward(out);
  }
  auto loss = [&]() {
    ad::Tape tape;
    return tape.value(body(tape, nullptr))(0, 0);
  };
  return check_gradients(params, loss, grads).max_rel_error;
}

TEST(AutogradTest, LinearGeluLayerNormChain) {
  std::mt19937_64 rng(1);
  Parameter x = random_param("x", 5, 4, rng);
  Parameter w = random_param("w", 4, 6, rng, 0.5);
  Parameter b = random_param("b", 1, 6, rng, 0.1);
  Parameter g = random_param("g", 1, 6, rng);
  Parameter beta = random_param("beta", 1, 6, rng);
  ParamRefs ps{&x, &w, &b, &g, &beta};
  const double err = max_rel_error(ps, [&](ad::Tape& t, Gradients* gr) {
    auto h = ad::linear(t.param(x, gr), t.param(w, gr), t.param(b, gr));
    h = ad::gelu(h);
    h = ad::layer_norm(h, t.param(g, gr), t.param(beta, gr));
    return ad::sum(ad::square(ad::tanh(h)));
  });
  EXPECT_LT(err, 1e-6);
}

TEST(AutogradTest, CausalAlibiAttention) {
  std::mt19937_64 rng(2);
  Parameter q = random_param("q", 6, 4, rng);
  Parameter k = random_param("k", 6, 4, rng);
  Parameter v = random_param("v", 6, 4, rng);
  ParamRefs ps{&q, &k, &v};
  ad::AttentionSpec spec;
  spec.heads = 2;
  spec.causal = true;
  spec.window = 4;
  spec.alibi_slopes = {0.5, 0.25};
  const double err = max_rel_error(ps, [&](ad::Tape& t, Gradients* gr) {
    auto o = ad::attention(t.param(q, gr), t.param(k, gr), t.param(v, gr), spec);
    return ad::sum_squares(o);
  });
  EXPECT_LT(err, 1e-6);
}

TEST(AutogradTest, GroupedAttentionStaysInsideGroups) {
  std::mt19937_64 rng(3);
  Parameter q = random_param("q", 6, 2, rng);
  Parameter k = random_param("k", 6, 2, rng);
  Parameter v = random_param("v", 6, 2, rng);
  ad::AttentionSpec spec;
  spec.group_len = 3;
  ad::Tape t;
  auto o = ad::attention(t.param(q, nullptr), t.param(k, nullptr), t.param(v, nullptr), spec);
  Matrix first = t.value(o);
  v.value.row(5).setConstant(100.0);
  ad::Tape t2;
  auto o2 = ad::attention(t2.param(q, nullptr), t2.param(k, nullptr), t2.param(v, nullptr), spec);
  EXPECT_EQ(first.topRows(3), t2.value(o2).topRows(3));
  EXPECT_NE(first.bottomRows(3), t2.value(o2).bottomRows(3));
}

TEST(AutogradTest, GatherStackConcatCrossEntropy) {
  std::mt19937_64 rng(4);
  Parameter table = random_param("table", 5, 3, rng);
  Parameter other = random_param("other", 2, 3, rng);
  Parameter w = random_param("w", 6, 4, rng);
  ParamRefs ps{&table, &other, &w};
  const std::vector<Token> labels{1, 3, 0, 2};
  const double err = max_rel_error(ps, [&](ad::Tape& t, Gradients* gr) {
    auto e = ad::gather_rows(t.param(table, gr), {4, 0, 4, 2});
    auto s = ad::stack_rows({e, t.param(other, gr)}, {{0, 1}, {1, 0}, {0, 3}, {1, 1}});
    auto c = ad::concat_cols(e, s);
    auto logits = ad::matmul(c, t.param(w, gr));
    auto ce = ad::cross_entropy_rows(logits, labels);
    auto ce2 = ad::cross_entropy_rows(ad::scale(logits, -0.5), labels);
    auto gap = ad::sub(ce, ce2);
    return ad::add(ad::sum(ce), ad::sum(ad::square(gap)));
  });
  EXPECT_LT(err, 1e-6);
}

TEST(AutogradTest, StopGradientBlocksFlow) {
  Parameter a{"a", Matrix::Constant(2, 2, 3.0)};
  ParamRefs ps{&a};
  Gradients grads(const_refs(ps));
  ad::Tape t;
  auto x = t.param(a, &grads);
  auto y = ad::add(ad::sum_squares(ad::stop_gradient(x)), ad::sum(ad::hadamard(x, Matrix::Constant(2, 2, 2.0))));
  t.backward(y);
  EXPECT_TRUE((grads[0].array() == 2.0).all());
}

TEST(AutogradTest, VariableLeafExposesGradient) {
  ad::Tape t;
  auto x = t.variable(Matrix::Constant(1, 3, 2.0));
  t.backward(ad::sum_squares(x));
  EXPECT_TRUE((t.grad(x).array() == 4.0).all());
}

TEST(AutogradTest, ShapeMismatchThrows) {
  ad::Tape t;
  auto a = t.constant(Matrix::Zero(2, 3));
  auto b = t.constant(Matrix::Zero(2, 3));
  EXPECT_THROW(ad::matmul(a, b), ValidationError);
  EXPECT_THROW(t.backward(a), ValidationError);
}

}  // namespace
}  // namespace teller
