#include <gtest/gtest.h>

#include <random>

#include "reference.hpp"
#include "trasend/ops.hpp"
#include "trasend/tensor.hpp"

using namespace trasend;

namespace {

using T = Tensor<double>;

T random_tensor(std::vector<int64_t> shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  T t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = u(rng);
  return t;
}

// Runs a single op forward on fresh leaves.
template <typename F>
T run(F&& f) {
  GradTape<double> tape;
  Var out = f(tape);
  return tape.val(out);
}

}  // namespace

TEST(Elementwise, Definitions) {
  auto y = run([](GradTape<double>& t) {
    return activation(t, t.leaf(T::vec({-1.0, 0.0, 2.5})), Act::relu);
  });
  EXPECT_DOUBLE_EQ(y[0], 0.0);
  EXPECT_DOUBLE_EQ(y[1], 0.0);
  EXPECT_DOUBLE_EQ(y[2], 2.5);

  auto th = run([](GradTape<double>& t) { return activation(t, t.leaf(T::vec({0.0})), Act::tanh); });
  EXPECT_DOUBLE_EQ(th[0], 0.0);

  auto sg = run([](GradTape<double>& t) { return activation(t, t.leaf(T::vec({0.0})), Act::sigmoid); });
  EXPECT_DOUBLE_EQ(sg[0], 0.5);
}

TEST(Dense, IdentityAndBias) {
  auto y = run([](GradTape<double>& t) {
    Var x = t.leaf(T::matrix({{1, 0}, {0, 1}}));
    Var w = t.leaf(T::matrix({{1, 0}, {0, 1}}));
    Var b = t.leaf(T::vec({0, 0}));
    return dense(t, x, w, b);
  });
  EXPECT_DOUBLE_EQ(y.at({0, 0}), 1.0);
  EXPECT_DOUBLE_EQ(y.at({0, 1}), 0.0);
  EXPECT_DOUBLE_EQ(y.at({1, 1}), 1.0);

  auto z = run([](GradTape<double>& t) {
    Var x = t.leaf(T::matrix({{1, 2}}));
    Var w = t.leaf(T::matrix({{1}, {1}}));
    Var b = t.leaf(T::vec({3}));
    return dense(t, x, w, b);
  });
  EXPECT_DOUBLE_EQ(z[0], 6.0);
}

TEST(Dense, MatchesTripleLoopOracle) {
  std::mt19937_64 rng(7);
  T a = random_tensor({3, 4}, rng);
  T b = random_tensor({4, 2}, rng);
  auto expected = reference::matmul(a.buffer(), b.buffer(), 3, 4, 2);
  auto y = run([&](GradTape<double>& t) { return matmul(t, t.leaf(a), t.leaf(b)); });
  ASSERT_EQ(y.numel(), 6);
  for (int64_t i = 0; i < 6; ++i) EXPECT_NEAR(y[i], expected[static_cast<size_t>(i)], 1e-12);
}

TEST(Dense, ShapeMismatchNamesBothShapes) {
  GradTape<double> t;
  Var x = t.leaf(T::zeros({2, 3}));
  Var w = t.leaf(T::zeros({4, 2}));
  try {
    matmul(t, x, w);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("[2, 3]"), std::string::npos);
    EXPECT_NE(msg.find("[4, 2]"), std::string::npos);
  }
}

TEST(Conv2d, OutputWidthArithmetic) {
  // width 60, kernel 18, stride 6, valid: (60-18)/6+1 = 8
  std::mt19937_64 rng(3);
  T x = random_tensor({1, 1, 60, 1}, rng);
  T w = random_tensor({1, 18, 1, 1}, rng);
  auto y = run([&](GradTape<double>& t) { return conv2d(t, t.leaf(x), t.leaf(w), 1, 6, Padding::valid); });
  EXPECT_EQ(y.shape(), (std::vector<int64_t>{1, 1, 8, 1}));
}

TEST(Conv2d, ValidWidthLawOverTriples) {
  std::mt19937_64 rng(11);
  const int64_t widths[] = {10, 17, 23, 60};
  const int64_t kernels[] = {1, 3, 5, 9};
  const int64_t strides[] = {1, 2, 3};
  for (int64_t W : widths) {
    for (int64_t k : kernels) {
      for (int64_t s : strides) {
        if (k > W) continue;
        T x = random_tensor({1, 1, W, 1}, rng);
        T w = random_tensor({1, k, 1, 1}, rng);
        auto y = run([&](GradTape<double>& t) {
          return conv2d(t, t.leaf(x), t.leaf(w), 1, s, Padding::valid);
        });
        EXPECT_EQ(y.dim(2), (W - k) / s + 1) << "W=" << W << " k=" << k << " s=" << s;
      }
    }
  }
}

TEST(Conv2d, OnePixelAllOnesKernelIsIdentity) {
  std::mt19937_64 rng(5);
  T x = random_tensor({2, 3, 4, 1}, rng);
  T w = T::ones({1, 1, 1, 1});
  auto y = run([&](GradTape<double>& t) { return conv2d(t, t.leaf(x), t.leaf(w), 1, 1, Padding::valid); });
  ASSERT_TRUE(y.same_shape(x));
  for (int64_t i = 0; i < x.numel(); ++i) EXPECT_DOUBLE_EQ(y[i], x[i]);
}

TEST(Conv2d, MatchesNestedLoopOracle) {
  std::mt19937_64 rng(13);
  T x = random_tensor({1, 20, 60, 1}, rng);
  T w = random_tensor({1, 18, 1, 4}, rng);
  auto y = run([&](GradTape<double>& t) { return conv2d(t, t.leaf(x), t.leaf(w), 1, 6, Padding::valid); });
  auto expected = reference::conv2d_valid(x.buffer(), 1, 20, 60, 1, w.buffer(), 1, 18, 4, 1, 6);
  ASSERT_EQ(static_cast<size_t>(y.numel()), expected.size());
  for (int64_t i = 0; i < y.numel(); ++i) EXPECT_NEAR(y[i], expected[static_cast<size_t>(i)], 1e-12);
}

TEST(Conv2d, KernelLargerThanInputIsError) {
  GradTape<double> t;
  Var x = t.leaf(T::zeros({1, 1, 5, 1}));
  Var w = t.leaf(T::zeros({1, 6, 1, 1}));
  EXPECT_THROW(conv2d(t, x, w, 1, 1, Padding::valid), ShapeError);
}

TEST(Conv2d, SamePaddingPreservesSizeAtStrideOne) {
  std::mt19937_64 rng(17);
  for (int64_t k : {2, 3, 4, 8}) {
    T x = random_tensor({1, 2, 6, 3}, rng);
    T w = random_tensor({2, k, 3, 5}, rng);
    auto y = run([&](GradTape<double>& t) { return conv2d(t, t.leaf(x), t.leaf(w), 1, 1, Padding::same); });
    EXPECT_EQ(y.dim(1), 2);
    EXPECT_EQ(y.dim(2), 6);
    EXPECT_EQ(y.dim(3), 5);
  }
}

TEST(Softmax, UniformFromEqualLogits) {
  auto y = run([](GradTape<double>& t) { return softmax(t, t.leaf(T::vec({0, 0, 0})), -1); });
  for (int64_t i = 0; i < 3; ++i) EXPECT_NEAR(y[i], 1.0 / 3.0, 1e-15);
}

TEST(Softmax, SaturatesWithoutOverflow) {
  auto y = run([](GradTape<double>& t) { return softmax(t, t.leaf(T::vec({1000, 0})), -1); });
  EXPECT_TRUE(y.all_finite());
  EXPECT_NEAR(y[0], 1.0, 1e-12);
  EXPECT_NEAR(y[1], 0.0, 1e-12);
}

TEST(Softmax, MatchesExtendedPrecisionOracle) {
  std::mt19937_64 rng(23);
  T x = random_tensor({5}, rng, -3.0, 3.0);
  auto expected = reference::softmax(x.buffer());
  auto y = run([&](GradTape<double>& t) { return softmax(t, t.leaf(x), -1); });
  for (int64_t i = 0; i < 5; ++i) EXPECT_NEAR(y[i], expected[static_cast<size_t>(i)], 1e-14);
}

TEST(Softmax, SlicesSumToOneAndNonNegative) {
  std::mt19937_64 rng(29);
  for (int axis = 0; axis < 3; ++axis) {
    T x = random_tensor({3, 4, 5}, rng, -6.0, 6.0);
    auto y = run([&](GradTape<double>& t) { return softmax(t, t.leaf(x), axis); });
    auto lines = detail::axis_lines(x.shape(), axis);
    for (int64_t o = 0; o < lines.outer; ++o) {
      for (int64_t in = 0; in < lines.inner; ++in) {
        double sum = 0;
        for (int64_t l = 0; l < lines.len; ++l) {
          double v = y[(o * lines.len + l) * lines.inner + in];
          EXPECT_GE(v, 0.0);
          sum += v;
        }
        EXPECT_NEAR(sum, 1.0, 1e-6);
      }
    }
  }
}

TEST(LayerNorm, ConstantVectorGoesToZero) {
  auto y = run([](GradTape<double>& t) {
    Var x = t.leaf(T::full({4}, 3.25));
    return layer_norm(t, x, t.leaf(T::ones({4})), t.leaf(T::zeros({4})), -1, 1e-5);
  });
  for (int64_t i = 0; i < 4; ++i) EXPECT_NEAR(y[i], 0.0, 1e-12);
}

TEST(LayerNorm, AlreadyStandardizedPassesThrough) {
  auto y = run([](GradTape<double>& t) {
    Var x = t.leaf(T::vec({-1, 1}));
    return layer_norm(t, x, t.leaf(T::ones({2})), t.leaf(T::zeros({2})), -1, 1e-12);
  });
  EXPECT_NEAR(y[0], -1.0, 1e-6);
  EXPECT_NEAR(y[1], 1.0, 1e-6);
}

TEST(LayerNorm, RecomputedMomentsAreStandard) {
  std::mt19937_64 rng(31);
  T x = random_tensor({32}, rng, -5.0, 5.0);
  auto y = run([&](GradTape<double>& t) {
    return layer_norm(t, t.leaf(x), t.leaf(T::ones({32})), t.leaf(T::zeros({32})), -1, 1e-10);
  });
  double mean = 0;
  for (int64_t i = 0; i < 32; ++i) mean += y[i];
  mean /= 32;
  double var = 0;
  for (int64_t i = 0; i < 32; ++i) var += (y[i] - mean) * (y[i] - mean);
  var /= 32;
  EXPECT_LT(std::abs(mean), 1e-10);
  EXPECT_NEAR(var, 1.0, 1e-6);
}

TEST(BatchNorm, IdenticalRowsGiveZeros) {
  GradTape<double> t;
  T mean, var;
  BatchNormStats<double> stats{&mean, &var};
  Var x = t.leaf(T::matrix({{2, -1}, {2, -1}, {2, -1}}));
  Var y = batch_norm(t, x, t.leaf(T::ones({2})), t.leaf(T::zeros({2})), stats, RunMode::train, 0.1,
                     1e-5);
  for (int64_t i = 0; i < 6; ++i) EXPECT_NEAR(t.val(y)[i], 0.0, 1e-2);  // eps-regularized zero
}

TEST(BatchNorm, TwoPointStandardization) {
  GradTape<double> t;
  T mean, var;
  BatchNormStats<double> stats{&mean, &var};
  Var x = t.leaf(T::matrix({{0}, {2}}));
  Var y = batch_norm(t, x, t.leaf(T::ones({1})), t.leaf(T::zeros({1})), stats, RunMode::train, 0.1,
                     1e-12);
  EXPECT_NEAR(t.val(y)[0], -1.0, 1e-9);
  EXPECT_NEAR(t.val(y)[1], 1.0, 1e-9);
}

TEST(BatchNorm, EvalMatchesHandFormulaAndIsIdempotent) {
  T mean = T::vec({1.0, -2.0});
  T var = T::vec({4.0, 0.25});
  T scale_t = T::vec({1.5, 2.0});
  T shift_t = T::vec({0.5, -1.0});
  std::mt19937_64 rng(37);
  T x = random_tensor({4, 2}, rng);
  const double eps = 1e-5;
  auto eval_once = [&]() {
    GradTape<double> t;
    BatchNormStats<double> stats{&mean, &var};
    Var y = batch_norm(t, t.leaf(x), t.leaf(scale_t), t.leaf(shift_t), stats, RunMode::eval, 0.1, eps);
    return t.val(y);
  };
  T y1 = eval_once();
  T y2 = eval_once();  // frozen stats: deterministic and stats untouched
  for (int64_t r = 0; r < 4; ++r) {
    for (int64_t c = 0; c < 2; ++c) {
      double expect = (x.at({r, c}) - mean[c]) / std::sqrt(var[c] + eps) * scale_t[c] + shift_t[c];
      EXPECT_NEAR(y1.at({r, c}), expect, 1e-12);
      EXPECT_DOUBLE_EQ(y1.at({r, c}), y2.at({r, c}));
    }
  }
  EXPECT_DOUBLE_EQ(mean[0], 1.0);
  EXPECT_DOUBLE_EQ(var[1], 0.25);
}

TEST(BatchNorm, EvalWithEmptyStatsIsStateError) {
  GradTape<double> t;
  T mean, var;
  BatchNormStats<double> stats{&mean, &var};
  Var x = t.leaf(T::zeros({2, 2}));
  EXPECT_THROW(
      batch_norm(t, x, t.leaf(T::ones({2})), t.leaf(T::zeros({2})), stats, RunMode::eval, 0.1, 1e-5),
      StateError);
}

TEST(Dropout, EvalModeIsIdentity) {
  std::mt19937_64 rng(41);
  T x = random_tensor({10}, rng);
  GradTape<double> t;
  std::mt19937_64 noise(1);
  Var y = dropout(t, t.leaf(x), 0.7, RunMode::eval, noise);
  for (int64_t i = 0; i < 10; ++i) EXPECT_DOUBLE_EQ(t.val(y)[i], x[i]);
}

TEST(Dropout, ZeroProbabilityIsIdentityInTrainMode) {
  std::mt19937_64 rng(43);
  T x = random_tensor({10}, rng);
  GradTape<double> t;
  std::mt19937_64 noise(1);
  Var y = dropout(t, t.leaf(x), 0.0, RunMode::train, noise);
  for (int64_t i = 0; i < 10; ++i) EXPECT_DOUBLE_EQ(t.val(y)[i], x[i]);
}

TEST(Dropout, InvertedScalingPreservesMean) {
  GradTape<double> t;
  std::mt19937_64 noise(99);
  Var x = t.leaf(T::ones({100000}));
  Var y = dropout(t, x, 0.5, RunMode::train, noise);
  double mean = 0;
  for (int64_t i = 0; i < 100000; ++i) mean += t.val(y)[i];
  mean /= 100000;
  EXPECT_NEAR(mean, 1.0, 0.02);
}

TEST(Dropout, ProbabilityOneIsError) {
  GradTape<double> t;
  Var x = t.leaf(T::ones({3}));
  std::mt19937_64 noise(1);
  EXPECT_THROW(dropout(t, x, 1.0, RunMode::train, noise), ConfigError);
}

TEST(GruCell, ZeroEverythingIsFixedPoint) {
  GradTape<double> t;
  GruCellVars<double> w;
  auto zeros = [&](std::vector<int64_t> s) { return t.leaf(T::zeros(std::move(s))); };
  w.wz = zeros({3, 2}); w.uz = zeros({2, 2}); w.bz = zeros({2});
  w.wr = zeros({3, 2}); w.ur = zeros({2, 2}); w.br = zeros({2});
  w.wh = zeros({3, 2}); w.uh = zeros({2, 2}); w.bh = zeros({2});
  Var h = gru_cell(t, zeros({1, 3}), zeros({1, 2}), w);
  EXPECT_DOUBLE_EQ(t.val(h)[0], 0.0);
  EXPECT_DOUBLE_EQ(t.val(h)[1], 0.0);
}

TEST(GruCell, ZeroWeightsHalveTheState) {
  // z = sigmoid(0) = 0.5 and htilde = 0, so h' = 0.5 h.
  GradTape<double> t;
  GruCellVars<double> w;
  auto zeros = [&](std::vector<int64_t> s) { return t.leaf(T::zeros(std::move(s))); };
  w.wz = zeros({3, 2}); w.uz = zeros({2, 2}); w.bz = zeros({2});
  w.wr = zeros({3, 2}); w.ur = zeros({2, 2}); w.br = zeros({2});
  w.wh = zeros({3, 2}); w.uh = zeros({2, 2}); w.bh = zeros({2});
  Var x = t.leaf(T::matrix({{0.3, -0.7, 2.0}}));
  Var h0 = t.leaf(T::matrix({{0.8, -0.4}}));
  Var h1 = gru_cell(t, x, h0, w);
  EXPECT_NEAR(t.val(h1)[0], 0.4, 1e-12);
  EXPECT_NEAR(t.val(h1)[1], -0.2, 1e-12);
}

TEST(GruCell, MatchesScalarGateEquations) {
  std::mt19937_64 rng(47);
  const int64_t dx = 3, dh = 2;
  auto rnd = [&](int64_t n) {
    std::uniform_real_distribution<double> u(-0.8, 0.8);
    std::vector<double> v(static_cast<size_t>(n));
    for (auto& e : v) e = u(rng);
    return v;
  };
  reference::GruScalarWeights rw;
  rw.wz = rnd(dx * dh); rw.uz = rnd(dh * dh); rw.bz = rnd(dh);
  rw.wr = rnd(dx * dh); rw.ur = rnd(dh * dh); rw.br = rnd(dh);
  rw.wh = rnd(dx * dh); rw.uh = rnd(dh * dh); rw.bh = rnd(dh);
  std::vector<double> x = rnd(dx), h = rnd(dh);

  GradTape<double> t;
  GruCellVars<double> w;
  w.wz = t.leaf(T({dx, dh}, rw.wz)); w.uz = t.leaf(T({dh, dh}, rw.uz)); w.bz = t.leaf(T({dh}, rw.bz));
  w.wr = t.leaf(T({dx, dh}, rw.wr)); w.ur = t.leaf(T({dh, dh}, rw.ur)); w.br = t.leaf(T({dh}, rw.br));
  w.wh = t.leaf(T({dx, dh}, rw.wh)); w.uh = t.leaf(T({dh, dh}, rw.uh)); w.bh = t.leaf(T({dh}, rw.bh));
  Var out = gru_cell(t, t.leaf(T({1, dx}, x)), t.leaf(T({1, dh}, h)), w);

  std::vector<double> expected = reference::gru_scalar_step(x, h, rw, dx, dh);
  for (int64_t i = 0; i < dh; ++i) EXPECT_NEAR(t.val(out)[i], expected[static_cast<size_t>(i)], 1e-12);
}

TEST(Attention, EqualScoresAverageValues) {
  GradTape<double> t;
  Var q = t.leaf(T::matrix({{0.0}}));
  Var k = t.leaf(T::matrix({{0.0}, {0.0}}));
  Var v = t.leaf(T::matrix({{1.0}, {3.0}}));
  Var y = scaled_dot_attention(t, q, k, v);
  EXPECT_NEAR(t.val(y)[0], 2.0, 1e-12);
}

TEST(Attention, SaturatedScoresPickOneValue) {
  GradTape<double> t;
  Var q = t.leaf(T::matrix({{10.0}}));
  Var k = t.leaf(T::matrix({{10.0}, {-10.0}}));
  Var v = t.leaf(T::matrix({{5.0}, {-5.0}}));
  Var y = scaled_dot_attention(t, q, k, v);
  EXPECT_NEAR(t.val(y)[0], 5.0, 1e-7);
}

TEST(Attention, MatchesExplicitLoopOracle) {
  std::mt19937_64 rng(53);
  T q = random_tensor({3, 4}, rng);
  T k = random_tensor({3, 4}, rng);
  T v = random_tensor({3, 4}, rng);
  GradTape<double> t;
  Var y = scaled_dot_attention(t, t.leaf(q), t.leaf(k), t.leaf(v));

  // Direct evaluation of the formula.
  for (int64_t i = 0; i < 3; ++i) {
    std::vector<double> scores(3);
    for (int64_t j = 0; j < 3; ++j) {
      double dot = 0;
      for (int64_t d = 0; d < 4; ++d) dot += q.at({i, d}) * k.at({j, d});
      scores[static_cast<size_t>(j)] = dot / std::sqrt(4.0);
    }
    auto w = reference::softmax(scores);
    for (int64_t d = 0; d < 4; ++d) {
      double expect = 0;
      for (int64_t j = 0; j < 3; ++j) expect += w[static_cast<size_t>(j)] * v.at({j, d});
      EXPECT_NEAR(t.val(y).at({i, d}), expect, 1e-12);
    }
  }
}
