#include "fedfusion/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "fedfusion/data.hpp"

namespace fedfusion {

void ConfusionMatrix::add(std::size_t truth, std::size_t predicted) {
  if (truth >= k_ || predicted >= k_) {
    throw std::out_of_range("label (" + std::to_string(truth) + ", " + std::to_string(predicted) + ") outside [0," +
                            std::to_string(k_) + ")");
  }
  ++counts_[truth * k_ + predicted];
}

std::size_t ConfusionMatrix::total() const { return std::accumulate(counts_.begin(), counts_.end(), std::size_t{0}); }

std::size_t ConfusionMatrix::trace() const {
  std::size_t t = 0;
  for (std::size_t i = 0; i < k_; ++i) t += at(i, i);
  return t;
}

double ConfusionMatrix::accuracy() const {
  const std::size_t n = total();
  return n ? static_cast<double>(trace()) / static_cast<double>(n) : 0.0;
}

ConfusionMatrix confusion_matrix(std::span<const std::size_t> truth, std::span<const std::size_t> predicted,
                                 std::size_t k) {
  if (truth.size() != predicted.size()) throw std::invalid_argument("label lists differ in length");
  ConfusionMatrix cm(k);
  for (std::size_t i = 0; i < truth.size(); ++i) cm.add(truth[i], predicted[i]);
  return cm;
}

RocCurve roc_curve(std::span<const double> scores, std::span<const bool> positive) {
  if (scores.size() != positive.size()) throw std::invalid_argument("scores and labels differ in length");
  const auto n_pos = static_cast<std::size_t>(std::count(positive.begin(), positive.end(), true));
  const std::size_t n_neg = positive.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) throw std::invalid_argument("ROC needs at least one positive and one negative sample");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  RocCurve curve;
  curve.points.push_back({0.0, 0.0});
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double threshold = scores[order[i]];
    for (; i < order.size() && scores[order[i]] == threshold; ++i) (positive[order[i]] ? tp : fp)++;
    curve.points.push_back({static_cast<double>(fp) / static_cast<double>(n_neg),
                            static_cast<double>(tp) / static_cast<double>(n_pos)});
  }
  for (std::size_t i = 1; i < curve.points.size(); ++i) {
    const RocPoint& a = curve.points[i - 1];
    const RocPoint& b = curve.points[i];
    curve.auc += (b.fpr - a.fpr) * (a.tpr + b.tpr) / 2.0;
  }
  return curve;
}

RocCurve roc_auc_ovr(const std::vector<std::vector<double>>& scores, std::span<const std::size_t> labels,
                     std::size_t c) {
  if (scores.size() != labels.size()) throw std::invalid_argument("scores and labels differ in length");
  std::vector<double> s(scores.size());
  std::vector<char> pos(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    s[i] = scores[i].at(c);
    pos[i] = labels[i] == c;
  }
  auto flags = std::make_unique<bool[]>(pos.size());
  for (std::size_t i = 0; i < pos.size(); ++i) flags[i] = pos[i];
  RocCurve curve = roc_curve(s, std::span<const bool>(flags.get(), pos.size()));
  curve.positive_class = c;
  return curve;
}

double macro_auc(const std::vector<std::vector<double>>& scores, std::span<const std::size_t> labels, std::size_t k) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t c = 0; c < k; ++c) {
    const auto pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), c));
    if (pos == 0 || pos == labels.size()) continue;
    sum += roc_auc_ovr(scores, labels, c).auc;
    ++n;
  }
  if (n == 0) throw std::invalid_argument("macro AUC needs at least one class with positives and negatives");
  return sum / static_cast<double>(n);
}

// ---------------------------------------------------------------- reports

namespace {

std::string fixed2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string exact(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

double parse_double(const std::string& s, std::size_t line_no) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw std::invalid_argument("line " + std::to_string(line_no) + ": not a number: '" + s + "'");
  }
  return v;
}

void check_field(const std::string& s) {
  if (s.find_first_of(",\n\r") != std::string::npos) throw std::invalid_argument("CSV field contains a separator: " + s);
}

}  // namespace

std::string comparison_csv(const std::vector<ComparisonRow>& rows) {
  if (rows.empty()) throw std::invalid_argument("comparison report needs at least one row");
  std::string out = std::string(kComparisonHeader) + "\n";
  for (const auto& r : rows) {
    check_field(r.classifier);
    if (r.training_time_s < 0 || r.testing_time_s < 0) throw std::invalid_argument("negative time for " + r.classifier);
    if (!(r.accuracy_percent >= 0 && r.accuracy_percent <= 100)) {
      throw std::invalid_argument("accuracy outside [0,100] for " + r.classifier);
    }
    out += r.classifier + "," + fixed2(r.training_time_s) + "," + fixed2(r.testing_time_s) + "," +
           fixed2(r.accuracy_percent) + "\n";
  }
  return out;
}

std::vector<ComparisonRow> parse_comparison_csv(const std::string& text) {
  const auto lines = split_lines(text);
  if (lines.empty() || lines[0] != kComparisonHeader) throw std::invalid_argument("missing comparison header");
  std::vector<ComparisonRow> rows;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto f = split_fields(lines[i]);
    if (f.size() != 4) throw std::invalid_argument("line " + std::to_string(i + 1) + ": expected 4 fields");
    rows.push_back({f[0], parse_double(f[1], i + 1), parse_double(f[2], i + 1), parse_double(f[3], i + 1)});
  }
  return rows;
}

void write_comparison_report(const std::vector<ComparisonRow>& rows, const std::filesystem::path& path) {
  write_text_file(path, comparison_csv(rows));
}

std::string training_curves_csv(const TrainingHistory& history) {
  std::string out = "epoch,train_acc,val_acc,train_loss,val_loss\n";
  for (const auto& e : history.epochs) {
    out += std::to_string(e.epoch) + "," + exact(e.train_accuracy) + "," + exact(e.validation_accuracy) + "," +
           exact(e.train_loss) + "," + exact(e.validation_loss) + "\n";
  }
  return out;
}

ClassifierMetrics compute_metrics(std::string classifier, const std::vector<std::vector<double>>& scores,
                                  std::span<const std::size_t> labels, std::size_t k) {
  ClassifierMetrics m;
  m.classifier = std::move(classifier);
  std::vector<std::size_t> pred;
  for (const auto& s : scores) pred.push_back(argmax(s));
  m.confusion = confusion_matrix(labels, pred, k);
  m.accuracy = m.confusion.accuracy();
  for (std::size_t c = 0; c < k; ++c) {
    const auto pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), c));
    if (pos == 0 || pos == labels.size()) continue;
    m.roc.push_back(roc_auc_ovr(scores, labels, c));
  }
  if (!m.roc.empty()) {
    double s = 0.0;
    for (const auto& r : m.roc) s += r.auc;
    m.macro_auc = s / static_cast<double>(m.roc.size());
  }
  return m;
}

namespace {

std::string class_key(std::size_t c) {
  return c < kNumClasses ? std::string(kClassNames[c]) : "class" + std::to_string(c);
}

}  // namespace

std::vector<MetricRecord> metric_records(const ClassifierMetrics& m) {
  std::vector<MetricRecord> r;
  r.push_back({m.classifier, "accuracy", "", m.accuracy});
  r.push_back({m.classifier, "training_time_s", "", m.training_time_s});
  r.push_back({m.classifier, "testing_time_s", "", m.testing_time_s});
  for (const auto& roc : m.roc) r.push_back({m.classifier, "auc", class_key(roc.positive_class), roc.auc});
  if (!m.roc.empty()) r.push_back({m.classifier, "macro_auc", "", m.macro_auc});
  for (std::size_t i = 0; i < m.confusion.classes(); ++i) {
    for (std::size_t j = 0; j < m.confusion.classes(); ++j) {
      r.push_back({m.classifier, "confusion", std::to_string(i) + ":" + std::to_string(j),
                   static_cast<double>(m.confusion.at(i, j))});
    }
  }
  return r;
}

std::string metrics_csv(const std::vector<MetricRecord>& records) {
  std::string out = "classifier,metric,key,value\n";
  for (const auto& r : records) {
    check_field(r.classifier);
    check_field(r.key);
    out += r.classifier + "," + r.metric + "," + r.key + "," + exact(r.value) + "\n";
  }
  return out;
}

std::vector<MetricRecord> parse_metrics_csv(const std::string& text) {
  const auto lines = split_lines(text);
  if (lines.empty() || lines[0] != "classifier,metric,key,value") throw std::invalid_argument("missing metrics header");
  std::vector<MetricRecord> out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto f = split_fields(lines[i]);
    if (f.size() != 4) throw std::invalid_argument("line " + std::to_string(i + 1) + ": expected 4 fields");
    out.push_back({f[0], f[1], f[2], parse_double(f[3], i + 1)});
  }
  return out;
}

std::string roc_csv(const ClassifierMetrics& m) {
  std::string out = "classifier,class,fpr,tpr\n";
  for (const auto& roc : m.roc) {
    for (const auto& p : roc.points) {
      out += m.classifier + "," + class_key(roc.positive_class) + "," + exact(p.fpr) + "," + exact(p.tpr) + "\n";
    }
  }
  return out;
}

std::vector<ComparisonRow> comparison_rows(const std::vector<MetricRecord>& records) {
  std::vector<std::string> order;
  std::map<std::string, std::map<std::string, double>> by;
  for (const auto& r : records) {
    if (!by.count(r.classifier)) order.push_back(r.classifier);
    if (r.key.empty()) by[r.classifier][r.metric] = r.value;
    else by[r.classifier];
  }
  if (order.empty()) throw std::invalid_argument("no metrics to report");
  double individual_training = 0.0;
  for (const auto& name : order) {
    if (name.rfind("Fusion", 0) != 0) individual_training += by[name].count("training_time_s") ? by[name]["training_time_s"] : 0.0;
  }
  std::vector<ComparisonRow> rows;
  for (const auto& name : order) {
    auto& m = by[name];
    if (!m.count("accuracy")) throw std::invalid_argument("no accuracy recorded for " + name);
    ComparisonRow row{name, m.count("training_time_s") ? m["training_time_s"] : 0.0,
                      m.count("testing_time_s") ? m["testing_time_s"] : 0.0, 100.0 * m["accuracy"]};
    if (name.rfind("Fusion", 0) == 0 && row.training_time_s == 0.0) row.training_time_s = individual_training;
    rows.push_back(row);
  }
  return rows;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f << text;
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace fedfusion
