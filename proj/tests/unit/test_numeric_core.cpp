#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <limits>

#include "punr/error.hpp"
#include "punr/grad_check.hpp"
#include "punr/ops.hpp"
#include "support.hpp"

using namespace punr;
using punr::testing::random_tensor;

namespace {

Shape random_shape(Rng& rng) { return {1 + rng.below(4), 1 + rng.below(4)}; }

// sum(op(x) * w) with a fixed random w, so every output element has a generic weight.
Tensor weighted(const Tensor& y, std::uint64_t seed) {
  Rng rng(seed);
  Tensor w = random_tensor(y.shape(), rng, 1.0, false, "w");
  return ops::sum(ops::mul(y, w));
}

void expect_grad_ok(const std::function<Tensor()>& fn, std::vector<Tensor> inputs,
                    double tol = 1e-4) {
  GradCheckResult r = grad_check(fn, std::move(inputs), 1e-5, tol);
  EXPECT_TRUE(r.passed) << "max rel error " << r.max_rel_error << " at " << r.worst_tensor << "["
                        << r.worst_index << "]";
}

constexpr int kCases = 100;

}  // namespace

TEST(Softmax, SymmetricPairIsHalfHalf) {
  Tensor y = ops::softmax(Tensor::from({1, 2}, {0.0, 0.0}), 1);
  EXPECT_DOUBLE_EQ(y.at(0), 0.5);
  EXPECT_DOUBLE_EQ(y.at(1), 0.5);
}

TEST(CrossEntropy, UniformLogitsGiveLogV) {
  for (std::size_t v : {2u, 7u, 50u}) {
    Tensor logits = Tensor::zeros({3, v});
    std::vector<int> targets{0, 1, 1};
    EXPECT_NEAR(ops::cross_entropy(logits, targets).item(), std::log(double(v)), 1e-12);
  }
}

TEST(CrossEntropy, IgnoredRowsDoNotCount) {
  Tensor logits = Tensor::from({2, 2}, {5.0, 0.0, 0.0, 0.0});
  std::vector<int> targets{ops::kIgnoreIndex, 1};
  EXPECT_NEAR(ops::cross_entropy(logits, targets).item(), std::log(2.0), 1e-12);
  std::vector<int> none{ops::kIgnoreIndex, ops::kIgnoreIndex};
  EXPECT_EQ(ops::cross_entropy(logits, none).item(), 0.0);
}

TEST(LayerNorm, OneTwoThree) {
  Tensor y = ops::layer_norm(Tensor::from({1, 3}, {1.0, 2.0, 3.0}), 1, 1e-300);
  // mean 2, population variance 2/3
  const double s = std::sqrt(2.0 / 3.0);
  EXPECT_NEAR(y.at(0), -1.0 / s, 1e-12);
  EXPECT_NEAR(y.at(1), 0.0, 1e-12);
  EXPECT_NEAR(y.at(2), 1.0 / s, 1e-12);
  EXPECT_NEAR(y.at(0), -1.2247, 1e-4);
}

TEST(Backward, SumGivesOnes) {
  Tensor x = Tensor::from({3}, {1.0, -2.0, 5.0}, true);
  backward(ops::sum(x));
  ASSERT_TRUE(x.has_grad());
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, SquareAtThree) {
  Tensor x = Tensor::from({1}, {3.0}, true);
  backward(ops::mul(x, x));
  EXPECT_EQ(x.grad()[0], 6.0);
}

TEST(Backward, NonScalarLossRejected) {
  Tensor x = Tensor::from({2}, {1.0, 2.0}, true);
  EXPECT_THROW(backward(ops::scale(x, 2.0)), ShapeError);
}

TEST(Backward, SharedSubexpressionAccumulates) {
  Tensor x = Tensor::from({1}, {2.0}, true);
  Tensor y = ops::mul(x, x);
  backward(ops::add(y, y));  // 2x^2
  EXPECT_EQ(x.grad()[0], 8.0);
}

TEST(Backward, NoGradGuardRecordsNothing) {
  Tensor x = Tensor::from({1}, {2.0}, true);
  Tensor y;
  {
    NoGradGuard guard;
    y = ops::mul(x, x);
  }
  EXPECT_TRUE(y.is_leaf());
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(grad_enabled());
}

TEST(GradCheck, LinearFunctionIsExact) {
  Rng rng(1);
  Tensor x = random_tensor({3, 4}, rng);
  GradCheckResult r = grad_check([&] { return weighted(ops::scale(x, 3.0), 9); }, {x}, 1e-3, 1e-10);
  EXPECT_LT(r.max_rel_error, 1e-10);
}

TEST(GradCheck, GeluAtHalf) {
  Tensor x = Tensor::from({1}, {0.5}, true, "x");
  GradCheckResult r = grad_check([&] { return ops::sum(ops::gelu(x)); }, {x}, 1e-5, 1e-6);
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(GradCheck, SoftmaxCrossEntropyComposite) {
  Rng rng(2);
  Tensor x = random_tensor({4, 6}, rng);
  std::vector<int> t{0, 5, 2, 3};
  GradCheckResult r = grad_check(
      [&] {
        Tensor p = ops::softmax(x, 1);
        return ops::cross_entropy(ops::scale(p, 4.0), t);
      },
      {x}, 1e-5, 1e-6);
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(GradCheck, DetectsWrongGradient) {
  // A tensor that feeds the loss only through a detached copy has analytic grad 0.
  Tensor x = Tensor::from({1}, {1.5}, true, "x");
  GradCheckResult r = grad_check(
      [&] {
        Tensor d = Tensor::from({1}, {x.at(0)});
        return ops::add(ops::mul(d, d), ops::scale(x, 0.0));
      },
      {x}, 1e-5, 1e-4);
  EXPECT_FALSE(r.passed);
  EXPECT_EQ(r.worst_tensor, "x");
}

// ---- property: every differentiable op passes grad_check on random shapes ----

class OpGradProperty : public ::testing::Test {
 protected:
  Rng rng{20240601};
};

TEST_F(OpGradProperty, Matmul) {
  for (int c = 0; c < kCases; ++c) {
    const std::size_t m = 1 + rng.below(4), k = 1 + rng.below(4), n = 1 + rng.below(4);
    Tensor a = random_tensor({m, k}, rng, 1.0, true, "a"), b = random_tensor({k, n}, rng, 1.0, true, "b");
    expect_grad_ok([&] { return weighted(ops::matmul(a, b), c); }, {a, b});
  }
}

TEST_F(OpGradProperty, MatmulNt) {
  for (int c = 0; c < kCases; ++c) {
    const std::size_t m = 1 + rng.below(4), k = 1 + rng.below(4), n = 1 + rng.below(4);
    Tensor a = random_tensor({m, k}, rng, 1.0, true, "a"), b = random_tensor({n, k}, rng, 1.0, true, "b");
    expect_grad_ok([&] { return weighted(ops::matmul_nt(a, b), c); }, {a, b});
  }
}

TEST_F(OpGradProperty, Transpose) {
  for (int c = 0; c < kCases; ++c) {
    Tensor a = random_tensor(random_shape(rng), rng);
    expect_grad_ok([&] { return weighted(ops::transpose(a), c); }, {a});
  }
}

TEST_F(OpGradProperty, AddSubMulSameShape) {
  for (int c = 0; c < kCases; ++c) {
    const Shape s = random_shape(rng);
    Tensor a = random_tensor(s, rng, 1.0, true, "a"), b = random_tensor(s, rng, 1.0, true, "b");
    expect_grad_ok([&] { return weighted(ops::add(a, b), c); }, {a, b});
    expect_grad_ok([&] { return weighted(ops::sub(a, b), c); }, {a, b});
    expect_grad_ok([&] { return weighted(ops::mul(a, b), c); }, {a, b});
  }
}

TEST_F(OpGradProperty, RowBroadcastAdd) {
  for (int c = 0; c < kCases; ++c) {
    const Shape s = random_shape(rng);
    Tensor a = random_tensor(s, rng, 1.0, true, "a");
    Tensor b = random_tensor(c % 2 ? Shape{s[1]} : Shape{1, s[1]}, rng, 1.0, true, "bias");
    expect_grad_ok([&] { return weighted(ops::add(a, b), c); }, {a, b});
    expect_grad_ok([&] { return weighted(ops::mul(a, b), c); }, {a, b});
  }
}

TEST_F(OpGradProperty, ScaleSumMean) {
  for (int c = 0; c < kCases; ++c) {
    Tensor a = random_tensor(random_shape(rng), rng);
    const double f = rng.normal(0.0, 2.0);
    expect_grad_ok([&] { return weighted(ops::scale(a, f), c); }, {a});
    expect_grad_ok([&] { return ops::scale(ops::sum(ops::mul(a, a)), 0.5); }, {a});
    expect_grad_ok([&] { return ops::mean(ops::mul(a, a)); }, {a});
  }
}

TEST_F(OpGradProperty, SoftmaxBothAxes) {
  for (int c = 0; c < kCases; ++c) {
    Tensor a = random_tensor(random_shape(rng), rng, 2.0);
    expect_grad_ok([&] { return weighted(ops::softmax(a, c % 2), c); }, {a});
  }
}

TEST_F(OpGradProperty, LayerNorm) {
  for (int c = 0; c < kCases; ++c) {
    // Width 2 normalizes to +-1 whatever the input, leaving a zero gradient.
    Shape s{1 + rng.below(4), 3 + rng.below(4)};
    Tensor a = random_tensor(s, rng);
    expect_grad_ok([&] { return weighted(ops::layer_norm(a, 1, 1e-12), c); }, {a});
  }
}

TEST_F(OpGradProperty, GeluTanh) {
  for (int c = 0; c < kCases; ++c) {
    Tensor a = random_tensor(random_shape(rng), rng, 1.5);
    expect_grad_ok([&] { return weighted(ops::gelu(a), c); }, {a});
    expect_grad_ok([&] { return weighted(ops::tanh(a), c); }, {a});
  }
}

TEST_F(OpGradProperty, EmbeddingGather) {
  for (int c = 0; c < kCases; ++c) {
    const std::size_t rows = 1 + rng.below(5), d = 1 + rng.below(4);
    Tensor table = random_tensor({rows, d}, rng, 1.0, true, "table");
    std::vector<int> idx(1 + rng.below(6));
    for (auto& i : idx) i = static_cast<int>(rng.below(rows));
    expect_grad_ok([&] { return weighted(ops::embedding_gather(table, idx), c); }, {table});
  }
}

TEST_F(OpGradProperty, ConcatSlice) {
  for (int c = 0; c < kCases; ++c) {
    const std::size_t axis = c % 2;
    Shape sa = random_shape(rng), sb = random_shape(rng);
    sb[1 - axis] = sa[1 - axis];
    Tensor a = random_tensor(sa, rng, 1.0, true, "a"), b = random_tensor(sb, rng, 1.0, true, "b");
    expect_grad_ok([&] { return weighted(ops::concat({a, b, a}, axis), c); }, {a, b});
    const std::size_t len = sa[axis];
    const std::size_t begin = rng.below(len), end = begin + 1 + rng.below(len - begin);
    expect_grad_ok([&] { return weighted(ops::slice(a, axis, begin, end), c); }, {a});
  }
}

TEST_F(OpGradProperty, MaskedFill) {
  for (int c = 0; c < kCases; ++c) {
    Tensor a = random_tensor(random_shape(rng), rng);
    std::vector<bool> mask(a.size());
    for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = rng.bernoulli(0.4);
    expect_grad_ok([&] { return weighted(ops::softmax(ops::masked_fill(a, mask, -1e9), 1), c); }, {a});
  }
}

TEST_F(OpGradProperty, Dropout) {
  for (int c = 0; c < kCases; ++c) {
    Tensor a = random_tensor(random_shape(rng), rng);
    expect_grad_ok(
        [&] {
          Rng local(c);
          return weighted(ops::dropout(a, 0.3, local), c);
        },
        {a});
  }
}

TEST_F(OpGradProperty, CrossEntropy) {
  for (int c = 0; c < kCases; ++c) {
    const std::size_t n = 1 + rng.below(4), v = 2 + rng.below(5);
    Tensor logits = random_tensor({n, v}, rng, 2.0);
    std::vector<int> t(n);
    for (auto& x : t) x = rng.bernoulli(0.2) ? ops::kIgnoreIndex : static_cast<int>(rng.below(v));
    t[0] = static_cast<int>(rng.below(v));
    expect_grad_ok([&] { return ops::cross_entropy(logits, t); }, {logits});
  }
}

// ---- forward invariants ----

TEST(SoftmaxProperty, RowsSumToOne) {
  Rng rng(5);
  for (int c = 0; c < 200; ++c) {
    Tensor a = random_tensor({1 + rng.below(5), 1 + rng.below(9)}, rng, 5.0, false);
    for (std::size_t axis : {0u, 1u}) {
      Tensor p = ops::softmax(a, axis);
      const std::size_t rows = a.dim(0), cols = a.dim(1);
      const std::size_t outer = axis == 1 ? rows : cols, len = axis == 1 ? cols : rows;
      for (std::size_t o = 0; o < outer; ++o) {
        double s = 0;
        for (std::size_t i = 0; i < len; ++i) s += axis == 1 ? p.at(o, i) : p.at(i, o);
        EXPECT_NEAR(s, 1.0, 1e-12);
      }
    }
  }
}

TEST(LayerNormProperty, ZeroMeanUnitVariance) {
  Rng rng(6);
  for (int c = 0; c < 200; ++c) {
    const std::size_t rows = 1 + rng.below(4), cols = 2 + rng.below(30);
    Tensor a = random_tensor({rows, cols}, rng, 3.0, false);
    Tensor y = ops::layer_norm(a, 1, 1e-12);
    for (std::size_t r = 0; r < rows; ++r) {
      double mean = 0, var = 0;
      for (std::size_t i = 0; i < cols; ++i) mean += y.at(r, i);
      mean /= double(cols);
      for (std::size_t i = 0; i < cols; ++i) var += (y.at(r, i) - mean) * (y.at(r, i) - mean);
      var /= double(cols);
      EXPECT_LT(std::abs(mean), 1e-10);
      EXPECT_NEAR(var, 1.0, 1e-8);
    }
  }
}

TEST(Ops, MaskedFillZeroesGradient) {
  Tensor a = Tensor::from({1, 3}, {1.0, 2.0, 3.0}, true);
  Tensor y = ops::masked_fill(a, {false, true, false}, -1e9);
  EXPECT_EQ(y.at(1), -1e9);
  backward(ops::sum(y));
  EXPECT_EQ(a.grad()[0], 1.0);
  EXPECT_EQ(a.grad()[1], 0.0);
}

TEST(Ops, ShapeMismatchNamesBothShapes) {
  Tensor a = Tensor::zeros({2, 3}), b = Tensor::zeros({4, 5});
  try {
    ops::matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4x5]"), std::string::npos) << msg;
  }
  EXPECT_THROW(ops::add(a, b), ShapeError);
}

TEST(Ops, NonFiniteResultThrows) {
  Tensor a = Tensor::from({1, 2}, {1e300, 1.0});
  EXPECT_THROW(ops::scale(a, 1e300), NumericError);
  Tensor n = Tensor::from({1, 1}, {std::numeric_limits<double>::quiet_NaN()});
  EXPECT_THROW(ops::add(n, n), NumericError);
}

TEST(Ops, EmbeddingOutOfRangeNamesTable) {
  Tensor t = Tensor::zeros({3, 2});
  std::vector<int> idx{0, 3};
  try {
    ops::embedding_gather(t, idx, "segment_embedding");
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("segment_embedding"), std::string::npos);
  }
}

TEST(Ops, DropoutIdentityAtZeroAndScaledOtherwise) {
  Rng rng(3);
  Tensor a = random_tensor({4, 50}, rng, 1.0, false);
  Rng r0(1);
  Tensor same = ops::dropout(a, 0.0, r0);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(same.at(i), a.at(i));
  Rng r1(1);
  Tensor d = ops::dropout(a, 0.5, r1);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_TRUE(d.at(i) == 0.0 || d.at(i) == 2.0 * a.at(i));
  }
}

TEST(Ops, Deterministic) {
  auto run = [] {
    Rng rng(77);
    Tensor a = random_tensor({5, 7}, rng), b = random_tensor({7, 3}, rng);
    Tensor y = ops::softmax(ops::gelu(ops::matmul(a, b)), 1);
    backward(weighted(ops::layer_norm(y, 1, 1e-12), 4));
    std::vector<double> out(a.grad().begin(), a.grad().end());
    out.insert(out.end(), y.values().begin(), y.values().end());
    return out;
  };
  EXPECT_EQ(run(), run());
}

TEST(Tensor, CloneAndDetachAreIndependent) {
  Tensor a = Tensor::from({2}, {1.0, 2.0}, true, "p");
  Tensor c = a.clone();
  c.mutable_values()[0] = 9.0;
  EXPECT_EQ(a.at(0), 1.0);
  EXPECT_EQ(c.name(), "p");
  EXPECT_TRUE(c.requires_grad());
  EXPECT_FALSE(a.detach().requires_grad());
  EXPECT_FALSE(c.same_storage(a));
}

TEST(Tensor, FromRejectsWrongCount) {
  EXPECT_THROW(Tensor::from({2, 2}, {1.0}), ShapeError);
}
