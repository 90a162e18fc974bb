#include <cmath>
#include <random>

#include "doctest.h"
#include "milkt/metrics.hpp"

using namespace milkt;

namespace {

// O(P*N) pair enumeration.
std::optional<double> brute_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0.0;
  std::size_t pos = 0, neg = 0;
  for (int v : y) (v == 1 ? pos : neg)++;
  if (pos == 0 || neg == 0) return std::nullopt;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] == 1 && y[j] == 0) wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
  return wins / (static_cast<double>(pos) * static_cast<double>(neg));
}

Matrix row(std::initializer_list<double> v) { return Matrix{v}; }

}  // namespace

TEST_CASE("binary_auc examples") {
  CHECK(*binary_auc(std::vector<double>{0.9, 0.1}, std::vector<int>{1, 0}) == 1.0);
  CHECK(*binary_auc(std::vector<double>{0.5, 0.5}, std::vector<int>{1, 0}) == 0.5);
  CHECK_FALSE(binary_auc(std::vector<double>{0.3, 0.4}, std::vector<int>{1, 1}).has_value());
}

TEST_CASE("binary_auc equals brute force on random sets with ties") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 1000; ++trial) {
    std::uniform_int_distribution<std::size_t> len(2, 200);
    const std::size_t n = len(rng);
    // Coarse score grid forces many ties.
    std::uniform_int_distribution<int> level(0, trial % 2 == 0 ? 5 : 1000);
    std::bernoulli_distribution coin(0.4);
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = level(rng) / 10.0;
      y[i] = coin(rng) ? 1 : 0;
    }
    const auto fast = binary_auc(s, y);
    const auto slow = brute_auc(s, y);
    REQUIRE(fast.has_value() == slow.has_value());
    if (fast) CHECK(*fast == *slow);
  }
}

TEST_CASE("classify") {
  CHECK(classify(std::vector<double>{0.3, 0.7}) == 1);
  CHECK(classify(std::vector<double>{0.5, 0.5}) == 1);
  CHECK(classify(std::vector<double>{0.6, 0.4}) == 0);
  CHECK(classify(std::vector<double>{0.2, 0.5, 0.3}) == 1);
  CHECK(classify(std::vector<double>{0.4, 0.4, 0.2}) == 0);
}

TEST_CASE("evaluate") {
  const std::vector<Matrix> perfect{row({0.9, 0.1}), row({0.2, 0.8}), row({0.7, 0.3})};
  const std::vector<std::size_t> perfect_y{0, 1, 0};
  const EvalResult p = evaluate(perfect, perfect_y);
  CHECK(*p.auc == 1.0);
  CHECK(p.f1 == 1.0);
  CHECK(p.accuracy == 1.0);
  CHECK(p.n_samples == 3);

  const std::vector<Matrix> preds{row({0.4, 0.6}), row({0.6, 0.4}), row({0.3, 0.7})};
  const std::vector<std::size_t> y{1, 1, 0};
  const EvalResult r = evaluate(preds, y);
  CHECK(r.accuracy == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(r.f1 == doctest::Approx(0.5).epsilon(1e-15));

  const std::vector<std::size_t> one_class{1, 1, 1};
  CHECK_FALSE(evaluate(preds, one_class).auc.has_value());
  CHECK(to_json(evaluate(preds, one_class))["auc"].is_null());
}

TEST_CASE("macro metrics equal per-class brute-force counting") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 30, c = 3;
    std::vector<Matrix> preds;
    std::vector<std::size_t> y(n);
    std::uniform_int_distribution<std::size_t> cls(0, c - 1);
    std::uniform_int_distribution<int> q(1, 6);
    for (std::size_t i = 0; i < n; ++i) {
      Matrix p(1, c);
      double z = 0.0;
      for (std::size_t k = 0; k < c; ++k) z += (p[k] = q(rng));
      for (std::size_t k = 0; k < c; ++k) p[k] /= z;
      preds.push_back(p);
      y[i] = cls(rng);
    }
    const EvalResult r = evaluate(preds, y);

    double f1_sum = 0.0, auc_sum = 0.0;
    std::size_t correct = 0, auc_classes = 0;
    for (std::size_t i = 0; i < n; ++i) correct += classify(preds[i].data()) == y[i];
    for (std::size_t k = 0; k < c; ++k) {
      std::size_t tp = 0, fp = 0, fn = 0;
      std::vector<double> s;
      std::vector<int> yk;
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t pred = classify(preds[i].data());
        tp += pred == k && y[i] == k;
        fp += pred == k && y[i] != k;
        fn += pred != k && y[i] == k;
        s.push_back(preds[i][k]);
        yk.push_back(y[i] == k ? 1 : 0);
      }
      const double prec = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
      const double rec = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
      const double f1 = prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
      CHECK(r.per_class[k].precision == doctest::Approx(prec).epsilon(1e-15));
      CHECK(r.per_class[k].recall == doctest::Approx(rec).epsilon(1e-15));
      CHECK(r.per_class[k].f1 == doctest::Approx(f1).epsilon(1e-15));
      f1_sum += f1;
      if (auto a = brute_auc(s, yk)) {
        CHECK(*r.per_class[k].auc == *a);
        auc_sum += *a;
        ++auc_classes;
      }
    }
    CHECK(r.accuracy == doctest::Approx(static_cast<double>(correct) / n).epsilon(1e-15));
    CHECK(r.f1 == doctest::Approx(f1_sum / c).epsilon(1e-15));
    REQUIRE(r.auc.has_value());
    CHECK(*r.auc == doctest::Approx(auc_sum / static_cast<double>(auc_classes)).epsilon(1e-15));
  }
}
