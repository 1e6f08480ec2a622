#include <cmath>
#include <random>

#include "aptmcl/classifier.hpp"
#include "aptmcl/errors.hpp"
#include "doctest.h"

using namespace aptmcl;

namespace {

struct Blobs {
  Matrix x;
  std::vector<int> y;
};

Blobs blobs(std::uint64_t seed, int n, double gap, double malicious_share = 0.2) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Blobs b{Matrix(n, 3), {}};
  for (int i = 0; i < n; ++i) {
    const int y = unit(rng) < malicious_share ? kMalicious : kBenign;
    b.y.push_back(y);
    for (int k = 0; k < 3; ++k) b.x(i, k) = normal(rng) + (y == kMalicious ? gap : 0.0);
  }
  return b;
}

double accuracy(const ConfidenceClassifier& c, const Blobs& b) {
  const auto p = c.predict_rows(b.x);
  int ok = 0;
  for (std::size_t i = 0; i < p.size(); ++i) ok += (p[i] > 0.5 ? kMalicious : kBenign) == b.y[i];
  return static_cast<double>(ok) / static_cast<double>(p.size());
}

}  // namespace

TEST_CASE("bagged trees fit separable classes") {
  const auto b = blobs(1, 300, 6.0);
  BaggedTreeClassifier c;
  c.fit(b.x, b.y);
  CHECK(c.trained());
  CHECK(accuracy(c, b) >= 0.95);
  for (double p : c.predict_rows(b.x)) {
    CHECK(p >= 0.0);
    CHECK(p <= 1.0);
  }
  const auto& oob = c.oob_probabilities();
  REQUIRE(oob.size() == 300);
  int with_oob = 0;
  for (double p : oob) {
    if (std::isnan(p)) continue;
    ++with_oob;
    CHECK(p >= 0.0);
    CHECK(p <= 1.0);
  }
  // a row misses a bootstrap sample with probability ~ 1/e, so 50 trees leave almost none uncovered
  CHECK(with_oob >= 295);
}

TEST_CASE("bagged trees are deterministic and round-trip") {
  const auto b = blobs(2, 200, 1.5);
  BaggedTreeClassifier a({20, 5, true, 9}), c({20, 5, true, 9});
  a.fit(b.x, b.y);
  c.fit(b.x, b.y);
  CHECK(a.predict_rows(b.x) == c.predict_rows(b.x));
  CHECK(a.oob_probabilities().size() == c.oob_probabilities().size());
  const auto back = BaggedTreeClassifier::from_json(a.to_json());
  CHECK(back.predict_rows(b.x) == a.predict_rows(b.x));
  const auto generic = classifier_from_json(a.to_json());
  CHECK(generic->predict_rows(b.x) == a.predict_rows(b.x));
  CHECK(a.clone()->predict_rows(b.x) == a.predict_rows(b.x));
}

TEST_CASE("class weighting lifts the minority class") {
  const auto b = blobs(3, 400, 1.0, 0.05);
  BaggedTreeClassifier weighted({30, 3, true, 1}), plain({30, 3, false, 1});
  weighted.fit(b.x, b.y);
  plain.fit(b.x, b.y);
  double w = 0.0, p = 0.0;
  const auto pw = weighted.predict_rows(b.x), pp = plain.predict_rows(b.x);
  for (std::size_t i = 0; i < b.y.size(); ++i) {
    if (b.y[i] == kMalicious) {
      w += pw[i];
      p += pp[i];
    }
  }
  CHECK(w > p);
}

TEST_CASE("classifier errors") {
  BaggedTreeClassifier c;
  const std::vector<double> row = {0, 0, 0};
  CHECK_THROWS_AS(c.malicious_probability(row), StateError);
  const Matrix x = Matrix::Random(10, 3);
  const std::vector<int> one_class(10, kBenign);
  CHECK_THROWS_AS(c.fit(x, one_class), ClassStarvationError);
  LogisticClassifier l;
  CHECK_THROWS_AS(l.fit(x, one_class), ClassStarvationError);
  CHECK_THROWS_AS(l.malicious_probability(row), StateError);
  const auto b = blobs(4, 50, 3.0);
  c.fit(b.x, b.y);
  const std::vector<double> wide = {0, 0, 0, 0};
  CHECK_THROWS_AS(c.malicious_probability(wide), DimensionError);
}

TEST_CASE("logistic regression separates and round-trips") {
  const auto b = blobs(5, 300, 5.0);
  LogisticClassifier l;
  l.fit(b.x, b.y);
  CHECK(accuracy(l, b) == 1.0);
  const auto back = LogisticClassifier::from_json(l.to_json());
  CHECK(back.predict_rows(b.x) == l.predict_rows(b.x));
  CHECK(back.bias() == l.bias());
  // the informative direction gets positive weight
  CHECK(l.weights().sum() > 0.0);
}
