#include "doctest.h"

#include <cmath>

#include "eyedex/data.hpp"
#include "eyedex/errors.hpp"
#include "eyedex/losses.hpp"
#include "e2e_grad.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace eyedex;

namespace {

Tensor onehot(const std::vector<std::size_t>& labels, std::size_t k) {
  std::vector<double> v(labels.size() * k, 0.0);
  for (std::size_t b = 0; b < labels.size(); ++b) {
    v[b * k + labels[b]] = 1.0;
  }
  return Tensor::from_values({labels.size(), k}, v, DType::f64);
}

Tensor random_probs(std::size_t b, std::size_t k, Rng& rng) {
  return ops::softmax(oracle::random_tensor({b, k}, rng, -3.0, 3.0));
}

std::vector<std::size_t> random_labels(std::size_t b, std::size_t k, Rng& rng) {
  std::vector<std::size_t> out(b);
  for (auto& v : out) {
    v = rng() % k;
  }
  return out;
}

Tensor ones(std::size_t b) { return Tensor::full({b}, 1.0, DType::f64); }

}  // namespace

TEST_SUITE("losses") {
  TEST_CASE("cross-entropy closed forms") {
    const Tensor uniform = Tensor::full({4, 10}, 0.1, DType::f64);
    const Tensor y = onehot({0, 3, 9, 5}, 10);
    CHECK(std::abs(categorical_crossentropy(uniform, y, ones(4)) - std::log(10.0)) < 1e-9);
    CHECK(categorical_crossentropy(y, y, ones(4)) <= 1e-11);

    // per-sample losses 1 and 3 with weights [3, 1]
    const double p1 = std::exp(-1.0);
    const double p3 = std::exp(-3.0);
    const Tensor probs =
        Tensor::from_values({2, 2}, {p1, 1.0 - p1, 1.0 - p3, p3}, DType::f64);
    const Tensor w = Tensor::from_values({2}, {3, 1}, DType::f64);
    CHECK(categorical_crossentropy(probs, onehot({0, 1}, 2), w) == doctest::Approx(1.5).epsilon(1e-14));
    CHECK_THROWS_AS(categorical_crossentropy(probs, onehot({0, 1}, 2), Tensor::zeros({2}, DType::f64)),
                    ConfigError);
  }

  TEST_CASE("focal loss") {
    const Tensor probs = Tensor::from_values({1, 2}, {0.9, 0.1}, DType::f64);
    const double expected = 0.01 * -std::log(0.9);
    CHECK(focal_loss(probs, onehot({0}, 2), 2.0, 1.0, ones(1)) ==
          doctest::Approx(expected).epsilon(1e-14));
    CHECK(std::abs(expected - 1.0536e-3) < 1e-7);
    CHECK_THROWS_AS(focal_loss(probs, onehot({0}, 2), -1.0, 1.0, ones(1)), ConfigError);
  }

  TEST_CASE("focal with gamma 0 and alpha 1 is cross-entropy") {
    Rng rng(17);
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t b = 1 + rng() % 16;
      const std::size_t k = 2 + rng() % 9;
      const Tensor p = random_probs(b, k, rng);
      const Tensor y = onehot(random_labels(b, k, rng), k);
      const Tensor w = oracle::random_tensor({b}, rng, 0.1, 3.0);
      CHECK(std::abs(focal_loss(p, y, 0.0, 1.0, w) - categorical_crossentropy(p, y, w)) <= 1e-12);
    }
  }

  TEST_CASE("loss gradients") {
    Rng rng(23);
    for (const LossSpec& spec : {LossSpec{LossKind::ce, 0.0, 1.0}, LossSpec{LossKind::focal, 2.0, 1.0},
                                 LossSpec{LossKind::focal, 1.5, 0.25}}) {
      const Tensor y = onehot(random_labels(5, 4, rng), 4);
      const Tensor w = oracle::random_tensor({5}, rng, 0.5, 2.0);
      const auto r = oracle::check_op_gradient(
          [&](Graph& g, const std::vector<Var>& in) { return data_loss(g, in[0], y, w, spec); },
          {oracle::random_tensor({5, 4}, rng, 0.05, 0.95)});
      CHECK(r.max_rel_error < 1e-6);
    }
  }

  TEST_CASE("l2 penalty covers flagged dense weights only") {
    ModelSpec spec{Variant::vgg_nano, 2, 32, {}, {}};
    Model m(spec, {DenseLayer{2, 2, false, true}, DenseLayer{2, 2, false, false}, SoftmaxLayer{}},
            DType::f64);
    m.set_param("0.dense.weight", Tensor::from_values({2, 2}, {1, 2, 3, 4}, DType::f64));
    m.set_param("1.dense.weight", Tensor::from_values({2, 2}, {5, 5, 5, 5}, DType::f64));
    CHECK(l2_penalty(m, 0.1) == doctest::Approx(3.0).epsilon(1e-15));
    CHECK(l2_penalty(m, 0.0) == 0.0);
    m.set_param("0.dense.bias", Tensor::from_values({2}, {7, 8}, DType::f64));
    CHECK(l2_penalty(m, 0.1) == doctest::Approx(3.0).epsilon(1e-15));
    CHECK_THROWS_AS(l2_penalty(m, -1.0), ConfigError);
  }

  TEST_CASE("class weights from the dataset table") {
    std::vector<std::size_t> counts;
    std::vector<std::string> names;
    std::size_t total = 0;
    for (const auto& c : oracle::table_one()) {
      counts.push_back(c.count);
      names.push_back(c.name);
      total += c.count;
    }
    CHECK(total == 21577);
    const auto w = class_weights(counts, names);
    for (std::size_t c = 0; c < counts.size(); ++c) {
      CHECK(w[c] == doctest::Approx(21577.0 / (10.0 * static_cast<double>(counts[c]))).epsilon(1e-15));
    }
    CHECK(std::abs(w[3] - 18.132) < 1e-3);  // Pterygium
    CHECK(std::abs(w[8] - 0.43563496870583485) < 1e-12);  // Diabetic Retinopathy
    CHECK(std::abs(w[0] - 0.5831621621621622) < 1e-12);  // Healthy
    counts[2] = 0;
    try {
      class_weights(counts, names);
      FAIL("expected an error");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("Retinal Detachment") != std::string::npos);
    }
    const auto uniform = class_weights({200, 200, 200});
    for (double v : uniform) {
      CHECK(v == 1.0);
    }
  }
}

TEST_SUITE("model") {
  TEST_CASE("end-to-end gradient of vgg_nano") {
    CHECK(oracle::vgg_nano_end_to_end_error() < 1e-5);
  }
}
