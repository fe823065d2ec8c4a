#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace ppnet {

struct IoUReport {
  std::vector<std::optional<double>> per_class;  // nullopt: class never observed or predicted
  double miou = 0.0;
  std::size_t included = 0;
};

/// Rows are ground truth, columns predictions.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t num_classes, std::optional<int> ignore_index = 0);

  /// Adds one count per point whose label is not the ignore id.
  void update(std::span<const int> predictions, std::span<const int> labels);
  void merge(const ConfusionMatrix& other);

  std::uint64_t at(std::size_t truth, std::size_t predicted) const { return counts_[truth * classes_ + predicted]; }
  std::uint64_t total() const;
  std::size_t num_classes() const { return classes_; }
  std::optional<int> ignore_index() const { return ignore_; }

  std::uint64_t true_positives(std::size_t c) const;
  std::uint64_t false_positives(std::size_t c) const;
  std::uint64_t false_negatives(std::size_t c) const;

  /// IoU_c = TP/(TP+FP+FN). Classes with a zero denominator and the ignore
  /// class are left out of the mean. Throws on an empty matrix.
  IoUReport miou() const;

 private:
  std::size_t classes_;
  std::optional<int> ignore_;
  std::vector<std::uint64_t> counts_;
};

void write_report_csv(std::ostream& os, const IoUReport& report, std::span<const std::string> class_names);
void write_report_table(std::ostream& os, const IoUReport& report, std::span<const std::string> class_names);

}  // namespace ppnet
