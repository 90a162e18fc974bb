#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "json.hpp"
#include "milkt/matrix.hpp"

namespace milkt {

struct ClassMetrics {
  std::size_t support = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::optional<double> auc;  // one-vs-rest
};

struct EvalResult {
  std::optional<double> auc;  // absent when undefined (single-class labels)
  double f1 = 0.0;
  double accuracy = 0.0;
  std::size_t n_samples = 0;
  std::vector<ClassMetrics> per_class;
};

/// Mann-Whitney statistic: (concordant pairs + 0.5 ties) / (P * N).
/// nullopt when either class is missing.
std::optional<double> binary_auc(std::span<const double> scores, std::span<const int> labels);

/// Binary: class 1 iff p1 >= threshold. Otherwise argmax, lowest index on ties.
std::size_t classify(std::span<const double> probs, double threshold = 0.5);

/// Accuracy; F1 of class 1 (binary) or macro F1; AUC on p1 (binary) or macro
/// one-vs-rest over classes present in `labels`.
EvalResult evaluate(std::span<const Matrix> preds, std::span<const std::size_t> labels);

nlohmann::json to_json(const EvalResult& r);

}  // namespace milkt
