#include "eyedex/evaluation.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "eyedex/errors.hpp"

namespace eyedex {

using json = nlohmann::json;

std::uint64_t ConfusionMatrix::total() const {
  return std::accumulate(cells.begin(), cells.end(), std::uint64_t{0});
}

std::uint64_t ConfusionMatrix::trace() const {
  std::uint64_t t = 0;
  for (std::size_t k = 0; k < num_classes; ++k) {
    t += at(k, k);
  }
  return t;
}

ConfusionMatrix confusion_matrix(const std::vector<std::size_t>& preds,
                                 const std::vector<std::size_t>& labels, std::size_t num_classes,
                                 std::vector<std::string> class_names) {
  if (num_classes == 0) {
    throw ConfigError("confusion matrix needs at least one class");
  }
  if (preds.size() != labels.size()) {
    throw DimensionError("got " + std::to_string(preds.size()) + " predictions for " +
                         std::to_string(labels.size()) + " labels");
  }
  if (class_names.empty()) {
    for (std::size_t k = 0; k < num_classes; ++k) {
      class_names.push_back("class_" + std::to_string(k));
    }
  } else if (class_names.size() != num_classes) {
    throw ConfigError("expected " + std::to_string(num_classes) + " class names, got " +
                      std::to_string(class_names.size()));
  }
  ConfusionMatrix cm{num_classes, std::vector<std::uint64_t>(num_classes * num_classes, 0),
                     std::move(class_names)};
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] >= num_classes || labels[i] >= num_classes) {
      throw DimensionError("class index out of range at position " + std::to_string(i) +
                           " (K=" + std::to_string(num_classes) + ")");
    }
    ++cm.cells[labels[i] * num_classes + preds[i]];
  }
  return cm;
}

namespace {

double ratio(std::uint64_t num, std::uint64_t den, bool& undefined) {
  if (den == 0) {
    undefined = true;
    return 0.0;
  }
  return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

ClassReport classification_report(const ConfusionMatrix& cm) {
  const std::size_t k = cm.num_classes;
  if (cm.cells.size() != k * k || cm.class_names.size() != k) {
    throw DimensionError("malformed confusion matrix");
  }
  const std::uint64_t total = cm.total();
  if (total == 0) {
    throw ConfigError("classification report needs at least one sample");
  }
  ClassReport r;
  r.total_support = total;
  r.accuracy = static_cast<double>(cm.trace()) / static_cast<double>(total);
  for (std::size_t c = 0; c < k; ++c) {
    std::uint64_t predicted = 0;
    std::uint64_t actual = 0;
    for (std::size_t j = 0; j < k; ++j) {
      predicted += cm.at(j, c);
      actual += cm.at(c, j);
    }
    const std::uint64_t tp = cm.at(c, c);
    ClassMetrics m;
    m.name = cm.class_names[c];
    m.support = actual;
    m.precision = ratio(tp, predicted, m.precision_undefined);
    m.recall = ratio(tp, actual, m.recall_undefined);
    if (m.precision + m.recall > 0.0) {
      m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
    } else {
      m.f1_undefined = true;
    }
    r.classes.push_back(m);
  }
  std::vector<double> p, rc, f;
  for (const auto& m : r.classes) {
    p.push_back(m.precision);
    rc.push_back(m.recall);
    f.push_back(m.f1);
    const double w = static_cast<double>(m.support);
    r.weighted_avg.precision += w * m.precision;
    r.weighted_avg.f1 += w * m.f1;
  }
  r.macro_avg = {macro_average(p), macro_average(rc), macro_average(f), total};
  const double n = static_cast<double>(total);
  r.weighted_avg.precision /= n;
  // Support-weighted recall reduces to trace / total; computing it that way
  // keeps it exactly equal to accuracy.
  r.weighted_avg.recall = r.accuracy;
  r.weighted_avg.f1 /= n;
  r.weighted_avg.support = total;
  return r;
}

double macro_average(const std::vector<double>& values) {
  if (values.empty()) {
    throw ConfigError("macro average of an empty list");
  }
  double s = 0.0;
  for (double v : values) {
    s += v;
  }
  return s / static_cast<double>(values.size());
}

ReportFormat parse_report_format(const std::string& name) {
  if (name == "text") {
    return ReportFormat::text;
  }
  if (name == "json") {
    return ReportFormat::json;
  }
  if (name == "csv") {
    return ReportFormat::csv;
  }
  throw ConfigError("unknown report format '" + name + "' (expected text, json or csv)");
}

namespace {

std::string fixed2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::vector<const ClassMetrics*> alphabetical(const ClassReport& r) {
  std::vector<const ClassMetrics*> rows;
  for (const auto& m : r.classes) {
    rows.push_back(&m);
  }
  std::stable_sort(rows.begin(), rows.end(),
                   [](const ClassMetrics* a, const ClassMetrics* b) { return a->name < b->name; });
  return rows;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) {
    return s;
  }
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') {
      out += '"';
    }
    out += c;
  }
  return out + "\"";
}

std::string render_text(const ClassReport& r) {
  std::size_t width = std::string("Weighted Avg").size();
  for (const auto& m : r.classes) {
    width = std::max(width, m.name.size());
  }
  std::ostringstream out;
  char line[512];
  auto row = [&](const std::string& name, const std::string& p, const std::string& rc,
                 const std::string& f, const std::string& s) {
    std::snprintf(line, sizeof line, "%-*s  %9s  %9s  %9s  %9s\n", static_cast<int>(width),
                  name.c_str(), p.c_str(), rc.c_str(), f.c_str(), s.c_str());
    out << line;
  };
  row("Class", "Precision", "Recall", "F1-Score", "Support");
  for (const auto* m : alphabetical(r)) {
    row(m->name, fixed2(m->precision), fixed2(m->recall), fixed2(m->f1),
        std::to_string(m->support));
  }
  out << '\n';
  row("Accuracy", "", "", fixed2(r.accuracy), std::to_string(r.total_support));
  row("Macro Avg", fixed2(r.macro_avg.precision), fixed2(r.macro_avg.recall),
      fixed2(r.macro_avg.f1), std::to_string(r.macro_avg.support));
  row("Weighted Avg", fixed2(r.weighted_avg.precision), fixed2(r.weighted_avg.recall),
      fixed2(r.weighted_avg.f1), std::to_string(r.weighted_avg.support));
  return out.str();
}

std::string render_csv(const ClassReport& r) {
  std::ostringstream out;
  out << "class,precision,recall,f1,support\n";
  auto row = [&](const std::string& name, const std::string& p, const std::string& rc,
                 const std::string& f, std::uint64_t s) {
    out << csv_field(name) << ',' << p << ',' << rc << ',' << f << ',' << s << '\n';
  };
  for (const auto* m : alphabetical(r)) {
    row(m->name, fixed2(m->precision), fixed2(m->recall), fixed2(m->f1), m->support);
  }
  row("Accuracy", "", "", fixed2(r.accuracy), r.total_support);
  row("Macro Avg", fixed2(r.macro_avg.precision), fixed2(r.macro_avg.recall),
      fixed2(r.macro_avg.f1), r.macro_avg.support);
  row("Weighted Avg", fixed2(r.weighted_avg.precision), fixed2(r.weighted_avg.recall),
      fixed2(r.weighted_avg.f1), r.weighted_avg.support);
  return out.str();
}

json average_json(const AverageMetrics& a) {
  return {{"precision", a.precision}, {"recall", a.recall}, {"f1", a.f1}, {"support", a.support}};
}

AverageMetrics average_from_json(const json& j) {
  return {j.at("precision").get<double>(), j.at("recall").get<double>(), j.at("f1").get<double>(),
          j.at("support").get<std::uint64_t>()};
}

}  // namespace

json report_to_json(const ClassReport& r) {
  json classes = json::array();
  for (const auto& m : r.classes) {
    json c = {{"name", m.name},
              {"precision", m.precision},
              {"recall", m.recall},
              {"f1", m.f1},
              {"support", m.support}};
    json undefined = json::array();
    if (m.precision_undefined) {
      undefined.push_back("precision");
    }
    if (m.recall_undefined) {
      undefined.push_back("recall");
    }
    if (m.f1_undefined) {
      undefined.push_back("f1");
    }
    if (!undefined.empty()) {
      c["zero_division"] = undefined;
    }
    classes.push_back(c);
  }
  return {{"classes", classes},
          {"accuracy", r.accuracy},
          {"macro_avg", average_json(r.macro_avg)},
          {"weighted_avg", average_json(r.weighted_avg)},
          {"total_support", r.total_support}};
}

ClassReport report_from_json(const json& j) {
  try {
    ClassReport r;
    for (const auto& c : j.at("classes")) {
      ClassMetrics m;
      m.name = c.at("name").get<std::string>();
      m.precision = c.at("precision").get<double>();
      m.recall = c.at("recall").get<double>();
      m.f1 = c.at("f1").get<double>();
      m.support = c.at("support").get<std::uint64_t>();
      if (c.contains("zero_division")) {
        for (const auto& what : c.at("zero_division")) {
          const auto s = what.get<std::string>();
          m.precision_undefined |= s == "precision";
          m.recall_undefined |= s == "recall";
          m.f1_undefined |= s == "f1";
        }
      }
      r.classes.push_back(m);
    }
    r.accuracy = j.at("accuracy").get<double>();
    r.macro_avg = average_from_json(j.at("macro_avg"));
    r.weighted_avg = average_from_json(j.at("weighted_avg"));
    r.total_support = j.at("total_support").get<std::uint64_t>();
    return r;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed report JSON: ") + e.what());
  }
}

std::string render_report(const ClassReport& report, ReportFormat format) {
  switch (format) {
    case ReportFormat::text:
      return render_text(report);
    case ReportFormat::csv:
      return render_csv(report);
    case ReportFormat::json:
      break;
  }
  return report_to_json(report).dump(2) + "\n";
}

std::string render_confusion_csv(const ConfusionMatrix& cm) {
  std::ostringstream out;
  out << "true\\pred";
  for (const auto& name : cm.class_names) {
    out << ',' << csv_field(name);
  }
  out << '\n';
  for (std::size_t t = 0; t < cm.num_classes; ++t) {
    out << csv_field(cm.class_names[t]);
    for (std::size_t p = 0; p < cm.num_classes; ++p) {
      out << ',' << cm.at(t, p);
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace eyedex
