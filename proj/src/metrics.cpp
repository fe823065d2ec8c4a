#include "ppnet/metrics.hpp"

#include <iomanip>
#include <numeric>

#include "ppnet/error.hpp"

namespace ppnet {

ConfusionMatrix::ConfusionMatrix(std::size_t num_classes, std::optional<int> ignore_index)
    : classes_(num_classes), ignore_(ignore_index), counts_(num_classes * num_classes, 0) {
  if (num_classes == 0) fail(ErrorKind::Argument, "confusion matrix needs at least one class");
}

void ConfusionMatrix::update(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size()) fail(ErrorKind::Argument, "confusion update: prediction/label count mismatch");
  const int n = static_cast<int>(classes_);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (ignore_ && labels[i] == *ignore_) continue;
    if (labels[i] < 0 || labels[i] >= n || predictions[i] < 0 || predictions[i] >= n)
      fail(ErrorKind::Argument, "confusion update: class id out of range at point " + std::to_string(i));
    ++counts_[static_cast<std::size_t>(labels[i]) * classes_ + static_cast<std::size_t>(predictions[i])];
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.classes_ != classes_) fail(ErrorKind::Argument, "confusion merge: class count mismatch");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::uint64_t ConfusionMatrix::total() const { return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0}); }

std::uint64_t ConfusionMatrix::true_positives(std::size_t c) const { return at(c, c); }

std::uint64_t ConfusionMatrix::false_positives(std::size_t c) const {
  std::uint64_t s = 0;
  for (std::size_t t = 0; t < classes_; ++t) s += t == c ? 0 : at(t, c);
  return s;
}

std::uint64_t ConfusionMatrix::false_negatives(std::size_t c) const {
  std::uint64_t s = 0;
  for (std::size_t p = 0; p < classes_; ++p) s += p == c ? 0 : at(c, p);
  return s;
}

IoUReport ConfusionMatrix::miou() const {
  if (total() == 0) fail(ErrorKind::EmptyInput, "mIoU of an empty confusion matrix");
  IoUReport r;
  r.per_class.resize(classes_);
  double sum = 0.0;
  for (std::size_t c = 0; c < classes_; ++c) {
    if (ignore_ && static_cast<int>(c) == *ignore_) continue;
    const std::uint64_t tp = true_positives(c);
    const std::uint64_t denom = tp + false_positives(c) + false_negatives(c);
    if (denom == 0) continue;
    const double iou = static_cast<double>(tp) / static_cast<double>(denom);
    r.per_class[c] = iou;
    sum += iou;
    ++r.included;
  }
  r.miou = r.included ? sum / static_cast<double>(r.included) : 0.0;
  return r;
}

namespace {

std::string class_name(std::span<const std::string> names, std::size_t c) {
  return c < names.size() ? names[c] : "class_" + std::to_string(c);
}

}  // namespace

void write_report_csv(std::ostream& os, const IoUReport& report, std::span<const std::string> class_names) {
  os << "class_id,class_name,iou\n";
  for (std::size_t c = 0; c < report.per_class.size(); ++c) {
    if (!report.per_class[c]) continue;
    os << c << ',' << class_name(class_names, c) << ',' << std::setprecision(6) << *report.per_class[c] << '\n';
  }
  os << "mean,miou," << std::setprecision(6) << report.miou << '\n';
}

void write_report_table(std::ostream& os, const IoUReport& report, std::span<const std::string> class_names) {
  os << std::left << std::setw(20) << "class" << "IoU\n";
  for (std::size_t c = 0; c < report.per_class.size(); ++c) {
    if (!report.per_class[c]) continue;
    os << std::left << std::setw(20) << class_name(class_names, c) << std::fixed << std::setprecision(2)
       << 100.0 * *report.per_class[c] << '\n';
  }
  os << std::left << std::setw(20) << "mIoU" << std::fixed << std::setprecision(2) << 100.0 * report.miou << '\n';
  os.unsetf(std::ios::fixed);
}

}  // namespace ppnet
