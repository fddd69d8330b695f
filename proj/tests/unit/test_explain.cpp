#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "eyedex/errors.hpp"
#include "eyedex/explain.hpp"
#include "eyedex/graph.hpp"
#include "oracles.hpp"

using namespace eyedex;

namespace {

Model nano(std::uint64_t seed = 3) {
  HeadConfig head;
  head.dense_units = 16;
  return build_vgg(Variant::vgg_nano, 3, head, 32, DType::f64, seed);
}

Tensor sample_image(std::uint64_t seed) {
  Rng rng(seed);
  return oracle::random_tensor({3, 32, 32}, rng, 0.0, 1.0);
}

// Target logit of vgg_nano evaluated from the output of "2.conv" onwards.
double tail_score(const Model& m, const Tensor& features, std::size_t target) {
  Tensor x = ops::maxpool2d(features).output;
  x = ops::global_avg_pool(x);
  ops::BatchNormState state{m.param("5.batchnorm.running_mean"), m.param("5.batchnorm.running_var"),
                            0.01, 1e-3};
  x = ops::batchnorm(x, m.param("5.batchnorm.gamma"), m.param("5.batchnorm.beta"), state,
                     Mode::eval, false)
          .output;
  x = ops::relu(ops::dense(x, m.param("6.dense.weight"), m.param("6.dense.bias")));
  x = ops::dense(x, m.param("8.dense.weight"), m.param("8.dense.bias"));
  return x.at(target);
}

}  // namespace

TEST_SUITE("explain") {
  TEST_CASE("heatmap shape and range") {
    const Model m = nano();
    const Heatmap hm = gradcam(m, sample_image(1), 0);
    CHECK(hm.height == 32);
    CHECK(hm.width == 32);
    CHECK(hm.source_layer == "2.conv");
    CHECK(hm.values.size() == 32 * 32);
    for (double v : hm.values) {
      CHECK((v >= 0.0 && v <= 1.0));
    }
    CHECK_THROWS_AS(gradcam(m, sample_image(1), 3), ConfigError);
    CHECK(gradcam(m, sample_image(1), 0, std::string("0.conv")).grid_h == 32);
  }

  TEST_CASE("channel weights match finite differences of the target score") {
    const Model m = nano();
    const Tensor img = sample_image(2);
    for (std::size_t target = 0; target < 3; ++target) {
      const Heatmap hm = gradcam(m, img, target);
      Graph g;
      Model view = m;
      ForwardOptions o;
      o.capture_layer = "2.conv";
      const auto pass = view.forward(g, img.reshape({1, 3, 32, 32}), o);
      const Tensor a = g.value(*pass.captured);
      const std::size_t c = a.dim(1), hw = a.dim(2) * a.dim(3);
      REQUIRE(hm.channel_weights.size() == c);

      // Shifting a whole channel by h moves the score by h * sum of its gradient.
      const auto base = a.to_vector();
      std::vector<double> numeric(c);
      const double h = 1e-5;
      for (std::size_t k = 0; k < c; ++k) {
        auto plus = base, minus = base;
        for (std::size_t i = 0; i < hw; ++i) {
          plus[k * hw + i] += h;
          minus[k * hw + i] -= h;
        }
        const double fp = tail_score(m, Tensor::from_values(a.shape(), plus, DType::f64), target);
        const double fm = tail_score(m, Tensor::from_values(a.shape(), minus, DType::f64), target);
        numeric[k] = (fp - fm) / (2.0 * h) / static_cast<double>(hw);
      }
      CHECK(oracle::max_relative_error(hm.channel_weights, numeric) < 1e-5);

      for (std::size_t i = 0; i < hw; ++i) {
        double cam = 0.0;
        for (std::size_t k = 0; k < c; ++k) {
          cam += hm.channel_weights[k] * base[k * hw + i];
        }
        CHECK(std::abs(cam - hm.raw_cam[i]) < 1e-12);
      }
    }
  }

  TEST_CASE("normalization removes the scale of the final layer") {
    const Model m = nano(4);
    const Tensor img = sample_image(3);
    Model scaled = m;
    scaled.set_param("8.dense.weight", ops::scale(m.param("8.dense.weight"), 7.0));
    scaled.set_param("8.dense.bias", ops::scale(m.param("8.dense.bias"), 7.0));
    for (std::size_t t = 0; t < 3; ++t) {
      const Heatmap a = gradcam(m, img, t);
      const Heatmap b = gradcam(scaled, img, t);
      for (std::size_t i = 0; i < a.values.size(); ++i) {
        CHECK(std::abs(a.values[i] - b.values[i]) <= 1e-6);
      }
    }
  }

  TEST_CASE("grid nodes are reproduced exactly after upsampling") {
    const Model m = nano(5);
    const Heatmap hm = gradcam(m, sample_image(4), 1, std::string("0.conv"));
    REQUIRE(hm.grid_h == 32);
    double peak = 0.0;
    for (double v : hm.raw_cam) {
      peak = std::max(peak, v);
    }
    if (peak > 0.0) {
      for (std::size_t i = 0; i < hm.raw_cam.size(); ++i) {
        CHECK(hm.values[i] == std::max(hm.raw_cam[i], 0.0) / peak);
      }
    }
    const Heatmap coarse = gradcam(m, sample_image(4), 1);
    REQUIRE(coarse.grid_h == 16);
    // corners of the coarse grid land on the image corners
    const double cmax = coarse.raw_max;
    if (cmax > 0.0) {
      CHECK(coarse.at(0, 0) == std::max(coarse.raw_cam[0], 0.0) / cmax);
      CHECK(coarse.at(31, 31) == std::max(coarse.raw_cam.back(), 0.0) / cmax);
    }
  }

  TEST_CASE("degenerate inputs give a finite all-zero map") {
    const Model m = nano();
    const Tensor zeros = Tensor::zeros({3, 32, 32}, DType::f64);
    for (std::size_t t = 0; t < 3; ++t) {
      const Heatmap hm = gradcam(m, zeros, t);
      for (double v : hm.values) {
        CHECK(std::isfinite(v));
        CHECK((v >= 0.0 && v <= 1.0));
      }
    }
    OcclusionOptions o;
    o.fill = 0.25;
    const Heatmap occ = occlusion_map(m, Tensor::full({3, 32, 32}, 0.25, DType::f64), 0, o);
    CHECK(std::all_of(occ.values.begin(), occ.values.end(), [](double v) { return v == 0.0; }));
    CHECK(occ.source_layer == "occlusion");
  }

  TEST_CASE("occlusion map") {
    const Model m = nano();
    OcclusionOptions o;
    o.patch = 8;
    o.stride = 5;  // forces the extra flush-edge position
    const Heatmap hm = occlusion_map(m, sample_image(6), 2, o);
    CHECK(hm.values.size() == 32 * 32);
    CHECK(*std::max_element(hm.values.begin(), hm.values.end()) == 1.0);
    CHECK(*std::min_element(hm.values.begin(), hm.values.end()) == 0.0);
    o.patch = 40;
    CHECK_THROWS_AS(occlusion_map(m, sample_image(6), 2, o), ConfigError);
  }

  TEST_CASE("overlay and colormap") {
    const auto& cmap = heatmap_colormap();
    REQUIRE(cmap.size() == 256);
    CHECK(cmap[0] == std::array<std::uint8_t, 3>{0, 0, 255});
    CHECK(cmap[255] == std::array<std::uint8_t, 3>{255, 0, 0});
    CHECK(cmap[128][1] > 250);

    const Tensor img = sample_image(7);
    Heatmap hm;
    hm.height = 32;
    hm.width = 32;
    hm.values.assign(32 * 32, 0.0);
    const Image gray = overlay(img, hm, 0.0);
    const auto v = img.to_vector();
    for (std::size_t i = 0; i < 32 * 32; ++i) {
      const double lum = 0.299 * v[i] + 0.587 * v[1024 + i] + 0.114 * v[2048 + i];
      const auto expected = static_cast<int>(std::lround(lum * 255.0));
      CHECK(std::abs(static_cast<int>(gray.pixels[i * 3]) - expected) <= 1);
      CHECK(gray.pixels[i * 3] == gray.pixels[i * 3 + 2]);
    }
    const Image tinted = overlay(img, hm, 0.4);
    for (std::size_t i = 0; i < 32 * 32; ++i) {
      CHECK(tinted.pixels[i * 3 + 2] >= gray.pixels[i * 3 + 2]);
    }
    CHECK(encode_png(tinted) == encode_png(overlay(img, hm, 0.4)));
    CHECK_THROWS_AS(overlay(img, hm, 1.5), ConfigError);
  }

  TEST_CASE("sidecar and csv") {
    const Heatmap hm = gradcam(nano(), sample_image(8), 1);
    const auto j = heatmap_sidecar(hm, "Healthy");
    CHECK(j.at("target_class") == 1);
    CHECK(j.at("class_name") == "Healthy");
    CHECK(j.at("layer") == "2.conv");
    const std::string csv = heatmap_csv(hm);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 32);
  }

  TEST_CASE("spearman agrees with rank counting") {
    Rng rng(12);
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t n = 2 + rng() % 40;
      std::vector<double> a(n), b(n);
      for (std::size_t i = 0; i < n; ++i) {
        a[i] = static_cast<double>(rng() % 6);  // plenty of ties
        b[i] = rng() % 2 == 0 ? a[i] : static_cast<double>(rng() % 6);
      }
      CHECK(std::abs(spearman(a, b) - oracle::spearman_by_counting(a, b)) < 1e-12);
    }
    CHECK(spearman({1, 2, 3}, {3, 2, 1}) == doctest::Approx(-1.0));
    CHECK(spearman({1, 1, 1}, {1, 2, 3}) == 0.0);
  }
}
