#include "doctest.h"

#include <cmath>

#include "eyedex/errors.hpp"
#include "eyedex/graph.hpp"
#include "eyedex/ops.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace eyedex;
using oracle::check_op_gradient;
using oracle::random_tensor;

namespace {
constexpr double kOpTol = 1e-6;
}

TEST_SUITE("ops") {
  TEST_CASE("conv2d matches the nested-loop reference bit for bit") {
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
      ConvSpec s;
      s.in_channels = 1 + rng() % 4;
      s.out_channels = 1 + rng() % 5;
      s.kernel_h = 1 + rng() % 3;
      s.kernel_w = 1 + rng() % 3;
      s.stride = 1 + rng() % 2;
      s.padding = rng() % 2;
      const std::size_t h = s.kernel_h + rng() % 6 + 1;
      const std::size_t w = s.kernel_w + rng() % 6 + 1;
      if ((h + 2 * s.padding - s.kernel_h) % s.stride != 0 ||
          (w + 2 * s.padding - s.kernel_w) % s.stride != 0) {
        s.stride = 1;
      }
      const Tensor x = random_tensor({1 + rng() % 3, s.in_channels, h, w}, rng);
      const Tensor k = random_tensor({s.out_channels, s.in_channels, s.kernel_h, s.kernel_w}, rng);
      const Tensor b = random_tensor({s.out_channels}, rng);
      CHECK(ops::conv2d(x, k, b, s).bitwise_equal(oracle::naive_conv2d(x, k, b, s)));
    }
  }

  TEST_CASE("conv2d rejects inconsistent shapes") {
    ConvSpec s{3, 2};
    CHECK_THROWS_AS(ops::conv2d(Tensor({1, 2, 4, 4}, DType::f64), Tensor({2, 3, 3, 3}, DType::f64),
                                Tensor({2}, DType::f64), s),
                    DimensionError);
    ConvSpec bad{1, 1, 3, 3, 2, 0};
    CHECK_THROWS_AS(bad.out_h(6), DimensionError);
  }

  TEST_CASE("conv2d gradients") {
    Rng rng(3);
    for (const ConvSpec& s : {ConvSpec{2, 3, 3, 3, 1, 1}, ConvSpec{2, 2, 3, 3, 2, 0},
                              ConvSpec{1, 2, 1, 1, 1, 0}}) {
      const std::size_t h = s.stride == 2 ? 7 : 5;
      const auto r = check_op_gradient(
          [&](Graph& g, const std::vector<Var>& in) { return g.conv2d(in[0], in[1], in[2], s); },
          {random_tensor({2, s.in_channels, h, h}, rng),
           random_tensor({s.out_channels, s.in_channels, s.kernel_h, s.kernel_w}, rng),
           random_tensor({s.out_channels}, rng)});
      CHECK(r.max_rel_error < kOpTol);
    }
  }

  TEST_CASE("maxpool picks the first maximum and routes gradients to it") {
    const Tensor x = Tensor::from_values({1, 1, 2, 4}, {1, 5, 2, 2, 5, 3, 2, 2}, DType::f64);
    const auto r = ops::maxpool2d(x);
    CHECK(r.output.to_vector() == std::vector<double>{5, 2});
    CHECK(r.argmax == std::vector<std::uint32_t>{1, 2});
    const Tensor g = ops::maxpool2d_backward(x.shape(), r.argmax,
                                             Tensor::from_values({1, 1, 1, 2}, {1, 1}, DType::f64));
    CHECK(g.to_vector() == std::vector<double>{0, 1, 1, 0, 0, 0, 0, 0});
    CHECK_THROWS_AS(ops::maxpool2d(Tensor({1, 1, 3, 4}, DType::f64)), DimensionError);
  }

  TEST_CASE("pooling, dense, activations gradients") {
    Rng rng(5);
    auto r = check_op_gradient([](Graph& g, const std::vector<Var>& in) { return g.maxpool2d(in[0]); },
                               {random_tensor({2, 3, 4, 6}, rng)});
    CHECK(r.max_rel_error < kOpTol);
    r = check_op_gradient(
        [](Graph& g, const std::vector<Var>& in) { return g.global_avg_pool(in[0]); },
        {random_tensor({2, 3, 4, 5}, rng)});
    CHECK(r.max_rel_error < kOpTol);
    r = check_op_gradient(
        [](Graph& g, const std::vector<Var>& in) { return g.dense(in[0], in[1], in[2]); },
        {random_tensor({3, 4}, rng), random_tensor({4, 5}, rng), random_tensor({5}, rng)});
    CHECK(r.max_rel_error < kOpTol);
    r = check_op_gradient([](Graph& g, const std::vector<Var>& in) { return g.relu(in[0]); },
                          {oracle::away_from_zero({4, 5}, rng)});
    CHECK(r.max_rel_error < kOpTol);
    r = check_op_gradient([](Graph& g, const std::vector<Var>& in) { return g.softmax(in[0]); },
                          {random_tensor({3, 6}, rng, -3.0, 3.0)});
    CHECK(r.max_rel_error < kOpTol);
  }

  TEST_CASE("elementwise and reduction gradients") {
    Rng rng(9);
    auto r = check_op_gradient(
        [](Graph& g, const std::vector<Var>& in) { return g.add(in[0], in[1]); },
        {random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)});
    CHECK(r.max_rel_error < kOpTol);
    r = check_op_gradient(
        [](Graph& g, const std::vector<Var>& in) { return g.mul(in[0], in[1]); },
        {random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)});
    CHECK(r.max_rel_error < kOpTol);
    r = check_op_gradient([](Graph& g, const std::vector<Var>& in) { return g.sum(in[0]); },
                          {random_tensor({4}, rng)});
    CHECK(r.max_rel_error < kOpTol);
    r = check_op_gradient([](Graph& g, const std::vector<Var>& in) { return g.pick(in[0], 4); },
                          {random_tensor({2, 3}, rng)});
    CHECK(r.max_rel_error < kOpTol);
  }

  TEST_CASE("batchnorm gradients in train and eval mode") {
    Rng rng(13);
    for (Mode mode : {Mode::train, Mode::eval}) {
      for (const Shape& shape : {Shape{4, 3}, Shape{2, 3, 2, 2}}) {
        ops::BatchNormState base{random_tensor({3}, rng), random_tensor({3}, rng, 0.5, 1.5)};
        const auto r = check_op_gradient(
            [&](Graph& g, const std::vector<Var>& in) {
              ops::BatchNormState st = base;
              return g.batchnorm(in[0], in[1], in[2], st, mode);
            },
            {random_tensor(shape, rng, -2.0, 2.0), random_tensor({3}, rng, 0.5, 1.5),
             random_tensor({3}, rng)});
        CHECK(r.max_rel_error < kOpTol);
      }
    }
  }

  TEST_CASE("batchnorm running statistics") {
    const Tensor x = Tensor::from_values({4, 1}, {1, 2, 3, 6}, DType::f64);
    ops::BatchNormState st{Tensor::from_values({1}, {0}, DType::f64),
                           Tensor::from_values({1}, {1}, DType::f64)};
    const Tensor gamma = Tensor::full({1}, 1.0, DType::f64);
    const Tensor beta = Tensor::zeros({1}, DType::f64);
    ops::batchnorm(x, gamma, beta, st, Mode::train);
    // batch mean 3, biased variance 3.5
    CHECK(st.running_mean.item() == doctest::Approx(0.03).epsilon(1e-15));
    CHECK(st.running_var.item() == doctest::Approx(0.99 + 0.035).epsilon(1e-15));
    const auto eval = ops::batchnorm(x, gamma, beta, st, Mode::eval);
    CHECK(eval.output.at(0) ==
          doctest::Approx((1.0 - 0.03) / std::sqrt(st.running_var.item() + 1e-3)));
    st.epsilon = 0.0;
    CHECK_THROWS_AS(ops::batchnorm(x, gamma, beta, st, Mode::eval), ConfigError);
  }

  TEST_CASE("dropout") {
    Rng rng(1);
    const Tensor x = Tensor::full({200, 50}, 1.0, DType::f64);
    CHECK(ops::dropout(x, 0.3, Mode::eval, rng).output.bitwise_equal(x));
    CHECK(ops::dropout(x, 0.0, Mode::train, rng).output.bitwise_equal(x));
    const auto r = ops::dropout(x, 0.3, Mode::train, rng);
    double mean = 0.0;
    std::size_t zeros = 0;
    for (double v : r.output.to_vector()) {
      mean += v;
      zeros += v == 0.0;
      CHECK((v == 0.0 || std::abs(v - 1.0 / 0.7) < 1e-12));
    }
    mean /= 10000.0;
    // Inverted dropout keeps the expectation; 10k draws give std ~0.0065.
    CHECK(mean == doctest::Approx(1.0).epsilon(0.03));
    CHECK(static_cast<double>(zeros) / 10000.0 == doctest::Approx(0.3).epsilon(0.05));
    CHECK_THROWS_AS(ops::dropout(x, 1.0, Mode::train, rng), ConfigError);
    CHECK_THROWS_AS(ops::dropout(x, -0.1, Mode::train, rng), ConfigError);

    const auto gc = check_op_gradient(
        [](Graph& g, const std::vector<Var>& in) {
          Rng fixed(42);
          return g.dropout(in[0], 0.5, Mode::train, fixed);
        },
        {random_tensor({4, 6}, rng)});
    CHECK(gc.max_rel_error < kOpTol);
  }

  TEST_CASE("softmax is stable for large logits") {
    const Tensor p = ops::softmax(Tensor::from_values({1, 3}, {1000, 1000, -1000}, DType::f64));
    CHECK(p.at(0) == doctest::Approx(0.5));
    CHECK(p.at(2) == 0.0);
    CHECK(p.all_finite());
  }

  TEST_CASE("bilinear resize") {
    Rng rng(2);
    const Tensor grid = random_tensor({2, 3, 4}, rng);
    const Tensor up = ops::resize_bilinear(grid, 7, 10, ops::ResizeAlign::corners);
    // Corner alignment hits every source node exactly when (out-1)/(in-1) is integral.
    for (std::size_t c = 0; c < 2; ++c) {
      for (std::size_t y = 0; y < 3; ++y) {
        for (std::size_t x = 0; x < 4; ++x) {
          CHECK(up.at((c * 7 + 3 * y) * 10 + 3 * x) == grid.at((c * 3 + y) * 4 + x));
        }
      }
    }
    const Tensor flat = Tensor::full({1, 5, 3}, 0.37, DType::f64);
    for (auto align : {ops::ResizeAlign::corners, ops::ResizeAlign::half_pixel}) {
      for (double v : ops::resize_bilinear(flat, 11, 8, align).to_vector()) {
        CHECK(v == 0.37);
      }
    }
  }
}

TEST_SUITE("graph") {
  TEST_CASE("backward preconditions") {
    Graph g;
    const Var a = g.leaf(Tensor::from_values({2}, {1, 2}, DType::f64), true);
    CHECK_THROWS_AS(g.backward(a), GraphError);  // not a scalar
    const Var c = g.leaf(Tensor::scalar(1.0, DType::f64), false);
    CHECK_THROWS_AS(g.backward(c), GraphError);  // no gradient path
    Graph other;
    const Var o = other.leaf(Tensor::scalar(1.0, DType::f64), true);
    CHECK_THROWS_AS(g.backward(o), GraphError);
  }

  TEST_CASE("gradients accumulate over shared uses and reset between passes") {
    Graph g;
    const Var a = g.leaf(Tensor::from_values({2}, {1, 2}, DType::f64), true);
    const Var s = g.sum(g.add(g.mul(a, a), a));  // d/da = 2a + 1
    g.backward(s);
    CHECK(g.grad(a).to_vector() == std::vector<double>{3, 5});
    g.backward(s);
    CHECK(g.grad(a).to_vector() == std::vector<double>{3, 5});
  }
}
