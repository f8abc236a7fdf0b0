#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "fedfusion/train.hpp"

namespace fedfusion {

// Rows are true classes, columns predicted classes.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t k) : k_(k), counts_(k * k, 0) {}

  std::size_t classes() const { return k_; }
  std::size_t at(std::size_t truth, std::size_t predicted) const { return counts_.at(truth * k_ + predicted); }
  void add(std::size_t truth, std::size_t predicted);
  std::size_t total() const;
  std::size_t trace() const;
  double accuracy() const;

 private:
  std::size_t k_;
  std::vector<std::size_t> counts_;
};

ConfusionMatrix confusion_matrix(std::span<const std::size_t> truth, std::span<const std::size_t> predicted,
                                 std::size_t k);

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
};

struct RocCurve {
  std::size_t positive_class = 0;
  std::vector<RocPoint> points;  // from (0,0) to (1,1)
  double auc = 0.0;
};

// Threshold sweep over the sorted unique scores; trapezoidal area. Tied scores
// move both rates in one step, which counts ties as half.
RocCurve roc_curve(std::span<const double> scores, std::span<const bool> positive);
// One-vs-rest for class c using column c of the per-sample score vectors.
RocCurve roc_auc_ovr(const std::vector<std::vector<double>>& scores, std::span<const std::size_t> labels,
                     std::size_t c);
// Mean one-vs-rest AUC over classes that have both positives and negatives.
double macro_auc(const std::vector<std::vector<double>>& scores, std::span<const std::size_t> labels, std::size_t k);

// ---- reports ----

struct ComparisonRow {
  std::string classifier;
  double training_time_s = 0.0;
  double testing_time_s = 0.0;
  double accuracy_percent = 0.0;

  bool operator==(const ComparisonRow&) const = default;
};

inline constexpr const char* kComparisonHeader = "Classifier,Training Time (s),Testing Time (s),Accuracy (%)";

std::string comparison_csv(const std::vector<ComparisonRow>& rows);
std::vector<ComparisonRow> parse_comparison_csv(const std::string& text);
void write_comparison_report(const std::vector<ComparisonRow>& rows, const std::filesystem::path& path);

std::string training_curves_csv(const TrainingHistory& history);

// Long format: classifier,metric,key,value
struct MetricRecord {
  std::string classifier;
  std::string metric;
  std::string key;
  double value = 0.0;
};

struct ClassifierMetrics {
  std::string classifier;
  double accuracy = 0.0;
  double training_time_s = 0.0;
  double testing_time_s = 0.0;
  ConfusionMatrix confusion{0};
  std::vector<RocCurve> roc;
  double macro_auc = 0.0;
};

ClassifierMetrics compute_metrics(std::string classifier, const std::vector<std::vector<double>>& scores,
                                  std::span<const std::size_t> labels, std::size_t k);

std::vector<MetricRecord> metric_records(const ClassifierMetrics& m);
std::string metrics_csv(const std::vector<MetricRecord>& records);
std::vector<MetricRecord> parse_metrics_csv(const std::string& text);
// classifier,class,fpr,tpr
std::string roc_csv(const ClassifierMetrics& m);

// Builds the comparison table from metric records: one row per classifier in
// first-seen order. Fusion rows without their own training time are charged the
// sum of the individual models' training times.
std::vector<ComparisonRow> comparison_rows(const std::vector<MetricRecord>& records);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace fedfusion
