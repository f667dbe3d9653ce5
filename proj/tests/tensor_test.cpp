//
// Project ChemCL - Copyright 2026 ChemCL Developers.
// SPDX-License-Identifier: Apache-2.0
//

#include "chemcl/tensor.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "chemcl/optim.hpp"
#include "chemcl/random.hpp"

namespace chemcl {
namespace {

// Central finite differences, independent of the reverse pass. Rebuilds the
// whole forward expression at every probe point.
double finite_diff(const std::function<double(const std::vector<double> &)> &f,
                   std::vector<double> x, std::size_t i, double h = 1e-5) {
  double orig = x[i];
  x[i] = orig + h;
  double fp = f(x);
  x[i] = orig - h;
  double fm = f(x);
  return (fp - fm) / (2.0 * h);
}

// Analytic gradient of f at x via the recorded reverse pass.
std::vector<double> analytic_grad(
    const std::function<Tensor(const Tensor &)> &expr,
    const std::vector<double> &x) {
  Tensor p = Tensor::parameter({static_cast<int>(x.size())}, x);
  Tensor loss = expr(p);
  backward(loss);
  auto g = p.grad();
  return {g.begin(), g.end()};
}

void check_grad(const std::function<Tensor(const Tensor &)> &expr,
                const std::vector<double> &x, double tol = 1e-4) {
  std::vector<double> grad = analytic_grad(expr, x);
  auto scalar_f = [&](const std::vector<double> &v) {
    NoGradGuard ng;
    Tensor p = Tensor::from({static_cast<int>(v.size())}, v);
    return expr(p).value();
  };
  for (std::size_t i = 0; i < x.size(); ++i) {
    double fd = finite_diff(scalar_f, x, i);
    double denom = std::max({std::fabs(fd), std::fabs(grad[i]), 1e-8});
    EXPECT_LT(std::fabs(fd - grad[i]) / denom, tol)
        << "component " << i << ": analytic " << grad[i] << " vs fd " << fd;
  }
}

// Random vector bounded away from zero so kinks (relu, abs, max ties) do not
// poison the finite-difference probe.
std::vector<double> random_vec(Rng &rng, std::size_t n, double lo = 0.15,
                               double hi = 1.5) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) {
    double mag = rng.uniform(lo, hi);
    v[i] = rng.uniform() < 0.5 ? -mag : mag;
  }
  return v;
}

TEST(TensorOps, SoftmaxOfEqualLogitsIsUniform) {
  Tensor t = Tensor::from({2}, {0.0, 0.0});
  Tensor p = softmax_over(t);
  EXPECT_DOUBLE_EQ(p.at(0), 0.5);
  EXPECT_DOUBLE_EQ(p.at(1), 0.5);
}

TEST(TensorOps, SoftmaxRowsSumToOne) {
  Rng rng(7);
  std::vector<double> vals(12);
  for (auto &v : vals) v = rng.uniform(-3.0, 3.0);
  Tensor t = Tensor::from({3, 4}, vals);
  Tensor p = softmax_over(t, 1);
  for (int r = 0; r < 3; ++r) {
    double s = 0.0;
    for (int c = 0; c < 4; ++c) {
      double x = p.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
      EXPECT_GE(x, 0.0);
      s += x;
    }
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
  Tensor pc = softmax_over(t, 0);
  for (int c = 0; c < 4; ++c) {
    double s = 0.0;
    for (int r = 0; r < 3; ++r)
      s += pc.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(TensorOps, LeakyReluSlope) {
  Tensor t = Tensor::from({2}, {-1.0, 2.0});
  Tensor y = leaky_relu(t, 0.2);
  EXPECT_DOUBLE_EQ(y.at(0), -0.2);
  EXPECT_DOUBLE_EQ(y.at(1), 2.0);
}

TEST(TensorOps, CosineOfSelfIsOne) {
  Rng rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<double> v = random_vec(rng, 6);
    Tensor t = Tensor::from({6}, v);
    EXPECT_NEAR(cosine_similarity(t, t).value(), 1.0, 1e-12);
  }
}

TEST(TensorOps, ShapeMismatchNamesBothShapes) {
  Tensor a = Tensor::from({2}, {1.0, 2.0});
  Tensor b = Tensor::from({3}, {1.0, 2.0, 3.0});
  try {
    add(a, b);
    FAIL() << "expected shape_mismatch";
  } catch (const Error &e) {
    EXPECT_EQ(e.code(), errc::shape_mismatch);
    EXPECT_NE(std::string(e.what()).find("[2]"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("[3]"), std::string::npos);
  }
}

TEST(Backward, SumGivesOnes) {
  Tensor w = Tensor::parameter({3}, {1.0, -2.0, 0.5});
  backward(sum(w));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(w.grad()[i], 1.0);
}

TEST(Backward, HadamardProductRule) {
  Tensor a = Tensor::parameter({3}, {1.0, 2.0, 3.0});
  Tensor b = Tensor::from({3}, {4.0, 5.0, 6.0});
  backward(sum(hadamard(a, b)));
  for (std::size_t i = 0; i < 3; ++i)
    EXPECT_DOUBLE_EQ(a.grad()[i], b.at(i));
}

TEST(Backward, SecondBackwardWithoutReforwardThrows) {
  Tensor w = Tensor::parameter({2}, {1.0, 2.0});
  Tensor loss = sum(hadamard(w, w));
  backward(loss);
  EXPECT_THROW(backward(loss), Error);
  try {
    backward(loss);
  } catch (const Error &e) {
    EXPECT_EQ(e.code(), errc::detached_loss);
  }
}

TEST(Backward, NonScalarLossThrows) {
  Tensor w = Tensor::parameter({2}, {1.0, 2.0});
  Tensor y = hadamard(w, w);
  try {
    backward(y);
    FAIL() << "expected non_scalar_loss";
  } catch (const Error &e) {
    EXPECT_EQ(e.code(), errc::non_scalar_loss);
  }
}

TEST(Backward, SharedSubexpressionAccumulates) {
  // loss = sum(w*w) + sum(w)  =>  grad = 2w + 1
  Tensor w = Tensor::parameter({3}, {1.0, -1.0, 2.0});
  Tensor loss = add(sum(hadamard(w, w)), sum(w));
  backward(loss);
  for (std::size_t i = 0; i < 3; ++i)
    EXPECT_NEAR(w.grad()[i], 2.0 * w.at(i) + 1.0, 1e-12);
}

TEST(Backward, NoGradGuardSuppressesRecording) {
  Tensor w = Tensor::parameter({2}, {1.0, 2.0});
  NoGradGuard ng;
  Tensor loss = sum(hadamard(w, w));
  EXPECT_FALSE(loss.requires_grad());
}

TEST(GradCheck, ElementwiseOps) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    std::size_t n = 2 + rng.index(5);
    std::vector<double> x = random_vec(rng, n);
    check_grad([](const Tensor &p) { return sum(leaky_relu(p, 0.2)); }, x);
    check_grad([](const Tensor &p) { return sum(sigmoid(p)); }, x);
    check_grad([](const Tensor &p) { return sum(tanh(p)); }, x);
    check_grad([](const Tensor &p) { return sum(exp(p)); }, x);
    check_grad([](const Tensor &p) { return mean(hadamard(p, p)); }, x);
    check_grad([](const Tensor &p) { return sum(abs(p)); }, x);
    check_grad([](const Tensor &p) { return sum(negate(p)); }, x);
    check_grad([](const Tensor &p) { return sum(scale(p, 2.5)); }, x);
    // log needs positive input
    std::vector<double> pos(n);
    for (auto &v : pos) v = rng.uniform(0.2, 2.0);
    check_grad([](const Tensor &p) { return sum(log(p)); }, pos);
  }
}

TEST(GradCheck, SoftmaxMaxConcatReductions) {
  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    std::size_t n = 3 + rng.index(4);
    std::vector<double> x = random_vec(rng, n);
    check_grad(
        [](const Tensor &p) {
          Tensor s = softmax_over(p);
          return sum(hadamard(s, s));
        },
        x);
    check_grad([](const Tensor &p) { return max(p); }, x);
    check_grad(
        [](const Tensor &p) {
          return sum(concat({p, scale(p, 0.5)}));
        },
        x);
    // rank-2 paths: reshape + matmul + transpose + max_over_rows
    std::vector<double> m = random_vec(rng, 6);
    check_grad(
        [](const Tensor &p) {
          Tensor mat = reshape(p, {2, 3});
          return sum(max_over_rows(mat));
        },
        m);
    check_grad(
        [](const Tensor &p) {
          Tensor mat = reshape(p, {2, 3});
          Tensor v = Tensor::from({3}, {0.3, -0.7, 1.1});
          return sum(matmul(mat, v));
        },
        m);
    check_grad(
        [](const Tensor &p) {
          Tensor mat = reshape(p, {2, 3});
          Tensor other = Tensor::from({2, 2}, {0.5, -1.0, 0.25, 0.75});
          return sum(matmul(other, mat));
        },
        m);
    check_grad(
        [](const Tensor &p) {
          Tensor mat = transpose(reshape(p, {2, 3}));
          Tensor v = Tensor::from({2}, {1.2, -0.4});
          return sum(matmul(mat, v));
        },
        m);
  }
}

TEST(GradCheck, CosineAndDot) {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    std::size_t n = 2 + rng.index(5);
    std::vector<double> x = random_vec(rng, n);
    std::vector<double> other = random_vec(rng, n);
    Tensor b = Tensor::from({static_cast<int>(n)}, other);
    check_grad(
        [&b](const Tensor &p) { return cosine_similarity(p, b); }, x);
    check_grad([&b](const Tensor &p) { return matmul(p, b); }, x);
  }
}

TEST(GradCheck, ThreeLayerComposite) {
  Rng rng(19);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> x = random_vec(rng, 4);
    std::vector<double> w1 = random_vec(rng, 12);
    std::vector<double> w2 = random_vec(rng, 9);
    Tensor input = Tensor::from({4}, x);
    auto net = [&](const Tensor &p1, const Tensor &p2) {
      Tensor h1 = tanh(matmul(reshape(p1, {3, 4}), input));
      Tensor h2 = sigmoid(matmul(reshape(p2, {3, 3}), h1));
      return sum(hadamard(h2, h2));
    };
    // check gradient wrt first layer
    Tensor p2c = Tensor::from({9}, w2);
    check_grad([&](const Tensor &p1) { return net(p1, p2c); }, w1);
    // and wrt second layer
    Tensor p1c = Tensor::from({12}, w1);
    check_grad([&](const Tensor &p2) { return net(p1c, p2); }, w2);
  }
}

TEST(GradCheck, SoftmaxScalarsMatchesTensorSoftmax) {
  Rng rng(23);
  for (int trial = 0; trial < 10; ++trial) {
    std::size_t n = 2 + rng.index(4);
    std::vector<double> x = random_vec(rng, n, 0.05, 2.0);
    Tensor p = Tensor::from({static_cast<int>(n)}, x);
    Tensor dense = softmax_over(p);
    // scalar-list route
    std::vector<Tensor> logits;
    for (std::size_t i = 0; i < n; ++i) logits.push_back(Tensor::scalar(x[i]));
    std::vector<Tensor> probs = softmax_scalars(logits);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      EXPECT_NEAR(probs[i].value(), dense.at(i), 1e-12);
      total += probs[i].value();
    }
    EXPECT_NEAR(total, 1.0, 1e-9);
  }
  // gradient path through the scalar-list softmax
  Rng rng2(29);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<double> x = random_vec(rng2, 4, 0.05, 2.0);
    check_grad(
        [](const Tensor &p) {
          std::vector<Tensor> logits;
          for (std::size_t i = 0; i < 4; ++i) {
            Tensor mask = Tensor::zeros({4});
            mask.mutable_values()[i] = 1.0;
            logits.push_back(matmul(p, mask));
          }
          std::vector<Tensor> probs = softmax_scalars(logits);
          Tensor acc = hadamard(probs[0], probs[0]);
          for (std::size_t i = 1; i < 4; ++i)
            acc = add(acc, hadamard(probs[i], probs[i]));
          return acc;
        },
        x);
  }
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  ParameterSet params;
  Tensor w = Tensor::parameter({3}, {1.0, 2.0, 3.0});
  params.add("w", w);
  w.zero_grad();
  adam_step(params, {.lr = 0.1});
  EXPECT_DOUBLE_EQ(w.at(0), 1.0);
  EXPECT_DOUBLE_EQ(w.at(1), 2.0);
  EXPECT_DOUBLE_EQ(w.at(2), 3.0);
}

TEST(Adam, DescendsOnQuadratic) {
  ParameterSet params;
  Tensor x = Tensor::parameter({1}, {1.0});
  params.add("x", x);
  backward(hadamard(x, x));
  adam_step(params, {.lr = 0.1});
  EXPECT_LT(x.at(0), 1.0);
}

TEST(Adam, MissingGradientThrows) {
  ParameterSet params;
  Tensor x = Tensor::parameter({1}, {1.0});
  params.add("x", x);
  try {
    adam_step(params, {});
    FAIL() << "expected missing_gradient";
  } catch (const Error &e) {
    EXPECT_EQ(e.code(), errc::missing_gradient);
  }
}

TEST(Adam, ConvergesOnConvexQuadratic) {
  // f(x) = sum((x - c)^2), minimized at c.
  Rng rng(31);
  std::vector<double> target(4), start(4);
  for (auto &v : target) v = rng.uniform(-1.0, 1.0);
  for (auto &v : start) v = rng.uniform(-2.0, 2.0);
  ParameterSet params;
  Tensor x = Tensor::parameter({4}, start);
  params.add("x", x);
  Tensor c = Tensor::from({4}, target);
  auto loss_value = [&]() {
    NoGradGuard ng;
    Tensor d = sub(x, c);
    return sum(hadamard(d, d)).value();
  };
  double initial = loss_value();
  for (int step = 0; step < 200; ++step) {
    Tensor d = sub(x, c);
    backward(sum(hadamard(d, d)));
    adam_step(params, {.lr = 0.05});
  }
  EXPECT_LT(loss_value(), 1e-3 * initial);
}

}  // namespace
}  // namespace chemcl
