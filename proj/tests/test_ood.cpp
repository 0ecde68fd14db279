#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "nda/dataset.hpp"
#include "nda/model.hpp"
#include "nda/ood.hpp"
#include "nda/rng.hpp"

using namespace nda;

namespace {

/// O(n^2) pairwise Mann-Whitney oracle, independent of the sweep code.
double auroc_brute_force(const std::vector<double>& pos, const std::vector<double>& neg) {
  double wins = 0.0;
  for (double p : pos)
    for (double q : neg) {
      if (p > q)
        wins += 1.0;
      else if (p == q)
        wins += 0.5;
    }
  return wins / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

std::vector<double> random_scores(std::size_t n, Rng& rng, bool quantize) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> s(n);
  for (double& v : s) v = quantize ? std::round(u(rng) * 20.0) / 20.0 : u(rng);
  return s;
}

ScoredPrediction pred(double confidence, bool correct) {
  ScoredPrediction p;
  p.confidence = confidence;
  p.predicted = 0;
  p.label = correct ? 0 : 1;
  p.in_distribution = true;
  return p;
}

}  // namespace

TEST_CASE("auroc") {
  SECTION("perfect separation scores 1") {
    CHECK(auroc({0.9, 0.9, 0.9}, {0.1, 0.1}) == 1.0);
  }

  SECTION("identical constant scores score one half") {
    CHECK(auroc({0.5, 0.5}, {0.5, 0.5, 0.5}) == 0.5);
  }

  SECTION("hand-enumerated 2x2 case") {
    // pairs: (0.9,0.7) win, (0.9,0.2) win, (0.6,0.7) loss, (0.6,0.2) win
    CHECK(auroc({0.9, 0.6}, {0.7, 0.2}) == Catch::Approx(0.75).margin(1e-15));
  }

  SECTION("agrees with the O(n^2) oracle on random instances with ties") {
    Rng rng(2024);
    std::uniform_int_distribution<std::size_t> size(1, 200);
    for (int trial = 0; trial < 50; ++trial) {
      const bool quantize = trial % 2 == 0;  // quantized scores force ties
      auto in = random_scores(size(rng), rng, quantize);
      auto out = random_scores(size(rng), rng, quantize);
      CHECK(std::fabs(auroc(in, out) - auroc_brute_force(in, out)) <= 1e-12);
    }
  }

  SECTION("complementarity with the symmetric tie rule") {
    Rng rng(77);
    for (int trial = 0; trial < 10; ++trial) {
      auto a = random_scores(50, rng, true);
      auto b = random_scores(70, rng, true);
      CHECK(std::fabs(auroc(a, b) + auroc(b, a) - 1.0) <= 1e-12);
    }
  }

  SECTION("invariant under strictly increasing transforms") {
    Rng rng(88);
    auto in = random_scores(60, rng, false);
    auto out = random_scores(40, rng, false);
    auto in_t = in;
    auto out_t = out;
    auto mono = [](double v) { return std::exp(3.0 * v) - 0.5; };
    for (double& v : in_t) v = mono(v);
    for (double& v : out_t) v = mono(v);
    CHECK(std::fabs(auroc(in, out) - auroc(in_t, out_t)) <= 1e-12);
  }

  SECTION("empty input is rejected") {
    CHECK_THROWS_AS(auroc({}, {0.1}), ContractError);
    CHECK_THROWS_AS(auroc({0.1}, {}), ContractError);
  }
}

TEST_CASE("aupr") {
  SECTION("perfect separation scores 1") {
    CHECK(aupr({0.9, 0.8}, {0.2, 0.1}) == Catch::Approx(1.0).margin(1e-15));
  }

  SECTION("one positive tied with one negative: worst-case ordering") {
    // single threshold 0.9 admits both: recall 0 -> 1 at precision 1/2
    CHECK(aupr({0.9}, {0.9}) == Catch::Approx(0.5).margin(1e-15));
  }

  SECTION("hand-enumerated sweep with interleaved scores") {
    // positives {0.9, 0.5}, negatives {0.7}
    // t=0.9: tp=1 fp=0 -> r=0.5, p=1    -> area += 0.5
    // t=0.7: tp=1 fp=1 -> r=0.5 (no change)
    // t=0.5: tp=2 fp=1 -> r=1.0, p=2/3  -> area += 0.5 * 2/3
    CHECK(aupr({0.9, 0.5}, {0.7}) == Catch::Approx(0.5 + 0.5 * 2.0 / 3.0).margin(1e-15));
  }
}

TEST_CASE("fpr_at_95_tpr") {
  SECTION("perfect separation scores 0") {
    CHECK(fpr_at_95_tpr({0.9, 0.8, 0.85}, {0.2, 0.1}) == 0.0);
  }

  SECTION("boundary honors TPR >= 0.95, not > 0.95") {
    // 20 in-scores, threshold at the 19th highest gives exactly 0.95
    std::vector<double> in;
    for (int i = 0; i < 20; ++i) in.push_back(1.0 - 0.01 * static_cast<double>(i));
    // out-scores: 10 of them at the 19th in-score, the rest below
    std::vector<double> out(10, in[18]);
    for (int i = 0; i < 10; ++i) out.push_back(0.01);
    const double fpr = fpr_at_95_tpr(in, out);
    CHECK(fpr == Catch::Approx(0.5).margin(1e-15));  // the 10 tied negatives are admitted
  }

  SECTION("matched distributions give roughly 0.95") {
    Rng rng(99);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<double> in(4000), out(4000);
    for (double& v : in) v = gauss(rng);
    for (double& v : out) v = gauss(rng);
    CHECK(fpr_at_95_tpr(in, out) == Catch::Approx(0.95).margin(0.02));
  }
}

TEST_CASE("ece") {
  SECTION("confident and correct is perfectly calibrated") {
    std::vector<ScoredPrediction> preds = {pred(1.0, true), pred(1.0, true)};
    CHECK(ece(preds, 15) == 0.0);
  }

  SECTION("confident and wrong maximizes the error") {
    std::vector<ScoredPrediction> preds = {pred(1.0, false), pred(1.0, false)};
    CHECK(ece(preds, 15) == 1.0);
  }

  SECTION("two-sample hand binning") {
    std::vector<ScoredPrediction> preds = {pred(0.8, true), pred(0.6, false)};
    CHECK(ece(preds, 10) == Catch::Approx(0.4).margin(1e-12));
  }

  SECTION("one bin reduces to |accuracy - mean confidence|") {
    Rng rng(111);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<ScoredPrediction> preds;
    double conf_sum = 0.0;
    int correct = 0;
    for (int i = 0; i < 57; ++i) {
      const double c = u(rng);
      const bool ok = u(rng) < 0.6;
      preds.push_back(pred(c, ok));
      conf_sum += c;
      correct += ok ? 1 : 0;
    }
    const double expected =
        std::fabs(static_cast<double>(correct) / 57.0 - conf_sum / 57.0);
    CHECK(std::fabs(ece(preds, 1) - expected) <= 1e-12);
  }

  SECTION("contract violations") {
    CHECK_THROWS_AS(ece({}, 10), ContractError);
    CHECK_THROWS_AS(ece({pred(0.5, true)}, 0), ContractError);
  }
}

TEST_CASE("matched in/out families are indistinguishable") {
  // two independent draws of the same blob family through a fixed model
  // cannot be separated by confidence: auroc ~ 0.5
  BlobSpec spec;
  spec.num_classes = 3;
  spec.dim = 4;
  spec.per_class = 200;
  spec.spread = 2.0;
  spec.sigma = 0.8;
  spec.seed = 77;
  Dataset in_set = gen_blobs(spec);
  Dataset out_set = gen_ood_set(spec, 0.0);  // same centroids, fresh samples
  Model m = Model::build(4, {8}, 6, 3, 5);
  OodMetrics metrics = ood_report(m, in_set, out_set, 15);
  CHECK(metrics.auroc == Catch::Approx(0.5).margin(0.05));
  CHECK(metrics.auroc >= 0.0);
  CHECK(metrics.aupr <= 1.0);
  CHECK(metrics.fpr_at_95_tpr >= 0.0);
  CHECK(metrics.fpr_at_95_tpr <= 1.0);
  CHECK(metrics.ece >= 0.0);
  CHECK(metrics.ece <= 1.0);
}

TEST_CASE("reliability table") {
  std::vector<ScoredPrediction> preds = {pred(0.95, true), pred(0.92, false), pred(0.3, false)};
  auto table = reliability_table(preds, 10);
  REQUIRE(table.size() == 10);
  CHECK(table[9].count == 2);
  CHECK(table[9].accuracy == Catch::Approx(0.5));
  CHECK(table[9].confidence == Catch::Approx(0.935));
  CHECK(table[3].count == 1);
  std::size_t total = 0;
  for (const auto& b : table) total += b.count;
  CHECK(total == preds.size());
}
