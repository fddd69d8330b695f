#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

namespace eyedex {

/// K x K counts; rows are true classes, columns predicted classes.
struct ConfusionMatrix {
  std::size_t num_classes = 0;
  std::vector<std::uint64_t> cells;  // row-major
  std::vector<std::string> class_names;

  std::uint64_t at(std::size_t truth, std::size_t pred) const {
    return cells.at(truth * num_classes + pred);
  }
  std::uint64_t total() const;
  std::uint64_t trace() const;
};

// Class names default to "class_k" when `class_names` is empty.
ConfusionMatrix confusion_matrix(const std::vector<std::size_t>& preds,
                                 const std::vector<std::size_t>& labels, std::size_t num_classes,
                                 std::vector<std::string> class_names = {});

struct ClassMetrics {
  std::string name;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::uint64_t support = 0;
  // Set when the corresponding ratio was 0/0 and reported as 0.
  bool precision_undefined = false;
  bool recall_undefined = false;
  bool f1_undefined = false;
};

struct AverageMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::uint64_t support = 0;
};

struct ClassReport {
  std::vector<ClassMetrics> classes;  // in class-index order
  double accuracy = 0.0;
  AverageMetrics macro_avg;
  AverageMetrics weighted_avg;
  std::uint64_t total_support = 0;
};

ClassReport classification_report(const ConfusionMatrix& cm);

// Unweighted mean of per-class values.
double macro_average(const std::vector<double>& values);

enum class ReportFormat { text, json, csv };
ReportFormat parse_report_format(const std::string& name);

// Text and CSV list classes alphabetically by name and round to two
// decimals; JSON keeps full precision.
std::string render_report(const ClassReport& report, ReportFormat format);
nlohmann::json report_to_json(const ClassReport& report);
ClassReport report_from_json(const nlohmann::json& j);

// CSV grid with a header row of predicted class names.
std::string render_confusion_csv(const ConfusionMatrix& cm);

}  // namespace eyedex
