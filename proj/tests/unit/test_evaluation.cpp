#include "doctest.h"

#include <algorithm>
#include <numeric>
#include <sstream>

#include "eyedex/errors.hpp"
#include "eyedex/evaluation.hpp"
#include "eyedex/tensor.hpp"
#include "oracles.hpp"

using namespace eyedex;

TEST_SUITE("evaluation") {
  TEST_CASE("worked example") {
    const auto cm = confusion_matrix({0, 1, 1, 2}, {0, 1, 2, 2}, 3, {"a", "b", "c"});
    CHECK(cm.at(2, 1) == 1);
    CHECK(cm.trace() == 3);
    const ClassReport r = classification_report(cm);
    CHECK(r.accuracy == 0.75);
    CHECK(r.classes[1].precision == 0.5);
    CHECK(r.classes[1].recall == 1.0);
    CHECK(r.classes[2].precision == 1.0);
    CHECK(r.classes[2].recall == 0.5);
    CHECK(r.classes[1].f1 == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(r.macro_avg.f1 == doctest::Approx(7.0 / 9.0).epsilon(1e-15));
    CHECK(r.weighted_avg.recall == r.accuracy);
    CHECK(r.total_support == 4);
  }

  TEST_CASE("agrees with counting from scratch") {
    Rng rng(31);
    for (int trial = 0; trial < 200; ++trial) {
      const std::size_t k = 2 + rng() % 9;
      const std::size_t n = 1 + rng() % 300;
      std::vector<std::size_t> preds(n), labels(n);
      for (std::size_t i = 0; i < n; ++i) {
        labels[i] = rng() % k;
        // bias towards correct predictions so most classes are populated
        preds[i] = rng() % 3 == 0 ? rng() % k : labels[i];
      }
      const ClassReport r = classification_report(confusion_matrix(preds, labels, k));
      const oracle::NaiveReport o = oracle::naive_report(preds, labels, k);
      CHECK(r.accuracy == doctest::Approx(o.accuracy).epsilon(1e-12));
      for (std::size_t c = 0; c < k; ++c) {
        CHECK(std::abs(r.classes[c].precision - o.precision[c]) < 1e-12);
        CHECK(std::abs(r.classes[c].recall - o.recall[c]) < 1e-12);
        CHECK(std::abs(r.classes[c].f1 - o.f1[c]) < 1e-12);
        CHECK(r.classes[c].support == o.support[c]);
      }
      CHECK(std::abs(r.macro_avg.f1 - o.macro_f1) < 1e-12);
      CHECK(std::abs(r.weighted_avg.precision - o.weighted_p) < 1e-12);
      CHECK(std::abs(r.weighted_avg.f1 - o.weighted_f1) < 1e-12);
      CHECK(r.weighted_avg.recall == r.accuracy);
    }
  }

  TEST_CASE("macro average of the published per-class F1 scores") {
    CHECK(std::abs(macro_average(oracle::table_three_f1()) - 0.936) < 1e-12);
  }

  TEST_CASE("relabeling classes permutes the report") {
    Rng rng(5);
    const std::size_t k = 5, n = 120;
    std::vector<std::size_t> preds(n), labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      labels[i] = rng() % k;
      preds[i] = rng() % 2 == 0 ? labels[i] : rng() % k;
    }
    const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
    std::vector<std::size_t> pp(n), pl(n);
    for (std::size_t i = 0; i < n; ++i) {
      pp[i] = perm[preds[i]];
      pl[i] = perm[labels[i]];
    }
    const auto a = classification_report(confusion_matrix(preds, labels, k));
    const auto b = classification_report(confusion_matrix(pp, pl, k));
    for (std::size_t c = 0; c < k; ++c) {
      CHECK(a.classes[c].f1 == b.classes[perm[c]].f1);
    }
    CHECK(std::abs(a.macro_avg.f1 - b.macro_avg.f1) < 1e-15);
    CHECK(a.accuracy == b.accuracy);
  }

  TEST_CASE("zero denominators are flagged and reported as 0") {
    const auto r = classification_report(confusion_matrix({0, 0}, {0, 0}, 2));
    CHECK(r.classes[1].precision == 0.0);
    CHECK(r.classes[1].precision_undefined);
    CHECK(r.classes[1].recall_undefined);
    CHECK(report_to_json(r).at("classes")[1].at("zero_division").size() == 3);
    CHECK_THROWS_AS(classification_report(confusion_matrix({}, {}, 2)), ConfigError);
    CHECK_THROWS_AS(confusion_matrix({0, 3}, {0, 1}, 3), DimensionError);
    CHECK_THROWS_AS(confusion_matrix({0}, {0, 1}, 3), DimensionError);
  }

  TEST_CASE("rendering") {
    const auto cm = confusion_matrix({0, 1, 2, 2, 1}, {0, 1, 2, 1, 1}, 3,
                                     {"Myopia", "Glaucoma", "Healthy"});
    const ClassReport r = classification_report(cm);
    const std::string text = render_report(r, ReportFormat::text);
    CHECK(text.find("Class") == 0);
    const auto g = text.find("Glaucoma"), h = text.find("Healthy"), m = text.find("Myopia");
    CHECK(g < h);
    CHECK(h < m);
    CHECK(text.find("Accuracy") > m);
    CHECK(text.find("Macro Avg") != std::string::npos);
    CHECK(text.find("Weighted Avg") != std::string::npos);

    const ClassReport back = report_from_json(report_to_json(r));
    CHECK(render_report(back, ReportFormat::text) == text);
    CHECK(report_to_json(back) == report_to_json(r));

    const std::string csv = render_report(r, ReportFormat::csv);
    CHECK(csv.rfind("class,precision,recall,f1,support\n", 0) == 0);
    CHECK(csv.find("Glaucoma,1.00,0.67,0.80,3") != std::string::npos);

    const std::string grid = render_confusion_csv(cm);
    CHECK(grid.rfind("true\\pred,Myopia,Glaucoma,Healthy\n", 0) == 0);

    CHECK(parse_report_format("json") == ReportFormat::json);
    CHECK_THROWS_AS(parse_report_format("xml"), ConfigError);
  }
}
