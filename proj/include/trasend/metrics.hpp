#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "trasend/common.hpp"

namespace trasend {

/// C x C count matrix, rows = true class, columns = predicted class.
struct ConfusionMatrix {
  int num_classes = 0;
  std::vector<int64_t> counts;

  explicit ConfusionMatrix(int C = 0) : num_classes(C), counts(static_cast<size_t>(C) * C, 0) {}

  int64_t& at(int truth, int pred) {
    return counts[static_cast<size_t>(truth) * num_classes + pred];
  }
  int64_t at(int truth, int pred) const {
    return counts[static_cast<size_t>(truth) * num_classes + pred];
  }

  void add(int truth, int pred) {
    if (truth < 0 || truth >= num_classes || pred < 0 || pred >= num_classes) {
      throw ContractError("confusion: label out of range [0, " + std::to_string(num_classes) + ")");
    }
    ++at(truth, pred);
  }

  int64_t row_sum(int truth) const {
    int64_t s = 0;
    for (int p = 0; p < num_classes; ++p) s += at(truth, p);
    return s;
  }
};

inline ConfusionMatrix confusion_matrix(const std::vector<int>& pred, const std::vector<int>& truth,
                                        int C) {
  if (pred.size() != truth.size()) throw ContractError("confusion: pred/truth length mismatch");
  ConfusionMatrix m(C);
  for (size_t i = 0; i < pred.size(); ++i) m.add(truth[i], pred[i]);
  return m;
}

// Unweighted mean of per-class F1 over all C classes. Per class,
// precision/recall/F1 are 0 whenever their denominator is 0, so classes
// absent from both predictions and truth contribute 0.
inline double macro_f1(const std::vector<int>& pred, const std::vector<int>& truth, int C) {
  ConfusionMatrix m = confusion_matrix(pred, truth, C);
  double sum = 0;
  for (int c = 0; c < C; ++c) {
    int64_t tp = m.at(c, c);
    int64_t fp = 0, fn = 0;
    for (int o = 0; o < C; ++o) {
      if (o == c) continue;
      fp += m.at(o, c);
      fn += m.at(c, o);
    }
    double p = (tp + fp) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    double r = (tp + fn) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    double f1 = (p + r) > 0 ? 2.0 * p * r / (p + r) : 0.0;
    sum += f1;
  }
  return sum / static_cast<double>(C);
}

}  // namespace trasend
