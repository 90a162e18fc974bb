#include "milkt/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <string>

namespace milkt {

std::optional<double> binary_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    throw ShapeError("binary_auc: " + std::to_string(scores.size()) + " scores vs " +
                     std::to_string(labels.size()) + " labels");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Walk tie groups in increasing score; each positive beats every negative
  // strictly below it and ties with the negatives in its own group.
  double concordant = 0.0;
  std::size_t neg_below = 0;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    std::size_t pos_here = 0;
    std::size_t neg_here = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] == 1 ? pos_here : neg_here) += 1;
      ++j;
    }
    concordant += static_cast<double>(pos_here) *
                  (static_cast<double>(neg_below) + 0.5 * static_cast<double>(neg_here));
    neg_below += neg_here;
    positives += pos_here;
    i = j;
  }
  const std::size_t negatives = neg_below;
  if (positives == 0 || negatives == 0) return std::nullopt;
  return concordant / (static_cast<double>(positives) * static_cast<double>(negatives));
}

std::size_t classify(std::span<const double> probs, double threshold) {
  if (probs.size() == 2) return probs[1] >= threshold ? 1 : 0;
  std::size_t best = 0;
  for (std::size_t c = 1; c < probs.size(); ++c) {
    if (probs[c] > probs[best]) best = c;
  }
  return best;
}

EvalResult evaluate(std::span<const Matrix> preds, std::span<const std::size_t> labels) {
  if (preds.size() != labels.size()) {
    throw ShapeError("evaluate: " + std::to_string(preds.size()) + " predictions vs " +
                     std::to_string(labels.size()) + " labels");
  }
  if (preds.empty()) throw ShapeError("evaluate: no samples");
  const std::size_t c = preds.front().cols();
  for (const auto& p : preds) {
    if (p.rows() != 1 || p.cols() != c) {
      throw ShapeError("evaluate: inconsistent prediction shape " + p.shape_str());
    }
  }
  for (std::size_t y : labels) {
    if (y >= c) throw ShapeError("evaluate: label " + std::to_string(y) + " out of range");
  }

  EvalResult r;
  r.n_samples = preds.size();
  r.per_class.resize(c);
  std::vector<std::size_t> tp(c, 0), fp(c, 0), fn(c, 0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const std::size_t yhat = classify(preds[i].data());
    const std::size_t y = labels[i];
    r.per_class[y].support += 1;
    if (yhat == y) {
      ++correct;
      ++tp[y];
    } else {
      ++fp[yhat];
      ++fn[y];
    }
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(preds.size());

  std::vector<double> scores(preds.size());
  std::vector<int> onehot(preds.size());
  for (std::size_t k = 0; k < c; ++k) {
    auto& m = r.per_class[k];
    const double t = static_cast<double>(tp[k]);
    m.precision = tp[k] + fp[k] ? t / static_cast<double>(tp[k] + fp[k]) : 0.0;
    m.recall = tp[k] + fn[k] ? t / static_cast<double>(tp[k] + fn[k]) : 0.0;
    const std::size_t denom = 2 * tp[k] + fp[k] + fn[k];
    m.f1 = denom ? 2.0 * t / static_cast<double>(denom) : 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      scores[i] = preds[i](0, k);
      onehot[i] = labels[i] == k ? 1 : 0;
    }
    m.auc = binary_auc(scores, onehot);
  }

  if (c == 2) {
    r.f1 = r.per_class[1].f1;
    r.auc = r.per_class[1].auc;
  } else {
    double f1 = 0.0;
    for (const auto& m : r.per_class) f1 += m.f1;
    r.f1 = f1 / static_cast<double>(c);
    double auc = 0.0;
    std::size_t counted = 0;
    for (const auto& m : r.per_class) {
      if (m.support > 0 && m.auc) {
        auc += *m.auc;
        ++counted;
      }
    }
    if (counted > 0) r.auc = auc / static_cast<double>(counted);
  }
  return r;
}

nlohmann::json to_json(const EvalResult& r) {
  using nlohmann::json;
  json per = json::array();
  for (std::size_t k = 0; k < r.per_class.size(); ++k) {
    const auto& m = r.per_class[k];
    per.push_back({{"class", k},
                   {"support", m.support},
                   {"precision", m.precision},
                   {"recall", m.recall},
                   {"f1", m.f1},
                   {"auc", m.auc ? json(*m.auc) : json(nullptr)}});
  }
  return {{"auc", r.auc ? json(*r.auc) : json(nullptr)},
          {"f1", r.f1},
          {"accuracy", r.accuracy},
          {"n_samples", r.n_samples},
          {"per_class", per}};
}

}  // namespace milkt
