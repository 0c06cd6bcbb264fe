#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mtdbn/eval_metrics.hpp"
#include "mtdbn/task_heads.hpp"
#include "test_util.hpp"

using namespace mtdbn;

TEST_CASE("head_score is the affine map") {
  SUBCASE("zero weights return the bias") {
    TaskHead head = TaskHead::make(HeadKind::kMulticlass, "t", 4, {"a", "b"});
    head.bias << 0.3, -0.7;
    const Vector score = head_score(head, Vector::Ones(4));
    CHECK(score(0) == doctest::Approx(0.3));
    CHECK(score(1) == doctest::Approx(-0.7));
  }
  SUBCASE("identity weights echo the features") {
    TaskHead head = TaskHead::make(HeadKind::kMulticlass, "t", 3, {"a", "b", "c"});
    head.V = Matrix::Identity(3, 3);
    Vector f(3);
    f << 0.2, 0.5, 0.9;
    const Vector score = head_score(head, f);
    for (int i = 0; i < 3; ++i) CHECK(score(i) == doctest::Approx(f(i)));
  }
  SUBCASE("hand arithmetic") {
    TaskHead head = TaskHead::make(HeadKind::kRegression, "t", 2);
    head.bias << 1.0;
    head.V << 2.0, 3.0;
    Vector f(2);
    f << 0.5, 0.5;
    CHECK(head_score(head, f)(0) == doctest::Approx(3.5));
  }
  SUBCASE("width mismatch throws") {
    TaskHead head = TaskHead::make(HeadKind::kRegression, "t", 2);
    CHECK_THROWS_AS(head_score(head, Vector::Ones(3)), std::invalid_argument);
  }
}

TEST_CASE("unstructured losses") {
  SUBCASE("regression") {
    CHECK(loss_regression(3.0, 3.0) == doctest::Approx(0.0));
    CHECK(loss_regression(1.0, 0.0) == doctest::Approx(0.5));
    CHECK(loss_regression(2.0, -1.0) == doctest::Approx(4.5));
  }
  SUBCASE("logistic") {
    CHECK(loss_logistic(1.0, 0.0) == doctest::Approx(std::log(2.0)));
    CHECK(loss_logistic(1.0, 50.0) < 1e-20);
    CHECK(loss_logistic(-1.0, 1.0) ==
          doctest::Approx(std::log(1.0 + std::exp(1.0))).epsilon(1e-12));
    CHECK(std::isfinite(loss_logistic(-1.0, 700.0)));
  }
  SUBCASE("poisson") {
    CHECK(loss_poisson_full(0.0, 0.0) == doctest::Approx(1.0));
    CHECK(loss_poisson_trainable(1.0, 0.0) == doctest::Approx(1.0));
    CHECK(loss_poisson_trainable(3.0, 1.0) ==
          doctest::Approx(-3.0 + std::exp(1.0)).epsilon(1e-12));
  }
  SUBCASE("poisson trainable part is minimized at g = log y") {
    for (double y : {1.0, 3.0, 7.0}) {
      const double g_star = std::log(y);
      const double eps = 1e-6;
      const double derivative = (loss_poisson_trainable(y, g_star + eps) -
                                 loss_poisson_trainable(y, g_star - eps)) /
                                (2.0 * eps);
      CHECK(std::abs(derivative) < 1e-6);
      CHECK(loss_poisson_trainable(y, g_star) <
            loss_poisson_trainable(y, g_star + 0.3));
      CHECK(loss_poisson_trainable(y, g_star) <
            loss_poisson_trainable(y, g_star - 0.3));
      // the full value is bounded below by its analytic minimum over g
      const double floor = loss_poisson_full(y, g_star);
      for (double g : {-1.0, 0.0, 0.5, 2.0}) {
        CHECK(loss_poisson_full(y, g) >= floor - 1e-12);
      }
    }
  }
}

TEST_CASE("structured probabilities") {
  TaskHead head = TaskHead::make(HeadKind::kMulticlass, "t", 2,
                                 {"a", "b", "c", "d"});
  SUBCASE("uniform scores over four candidates") {
    Vector f = Vector::Zero(2);
    CHECK(structured_prob(head, f, 1, {0, 1, 2, 3}) == doctest::Approx(0.25));
  }
  SUBCASE("singleton candidate set is deterministic") {
    Vector f = Vector::Zero(2);
    CHECK(structured_prob(head, f, 2, {2}) == doctest::Approx(1.0));
  }
  SUBCASE("two-label softmax is the sigmoid of the difference") {
    Vector scores(2);
    scores << 1.0, 0.0;
    CHECK(structured_prob_from_scores(scores, 0, {0, 1}) ==
          doctest::Approx(sigmoid(1.0)).epsilon(1e-12));
  }
  SUBCASE("softmax sums to one over the candidate set") {
    Rng rng(8);
    const Vector scores = testutil::random_vector(4, rng, 2.0);
    const std::vector<int> pool = {0, 2, 3};
    double total = 0.0;
    for (int l : pool) total += structured_prob_from_scores(scores, l, pool);
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("label outside pool throws") {
    Vector scores = Vector::Zero(4);
    CHECK_THROWS_AS(structured_prob_from_scores(scores, 1, {0, 2}),
                    std::invalid_argument);
  }
}

TEST_CASE("candidate sets per structured kind") {
  SUBCASE("multiclass uses the whole universe once") {
    const auto sets = candidate_sets(HeadKind::kMulticlass,
                                     TaskTarget::multiclass(1), 3);
    REQUIRE(sets.size() == 1);
    CHECK(sets[0].first == 1);
    CHECK(sets[0].second == std::vector<int>{0, 1, 2});
  }
  SUBCASE("full ranking shrinks the pool") {
    const auto sets = candidate_sets(HeadKind::kRanking,
                                     TaskTarget::ranking({0, 1, 2}), 3);
    REQUIRE(sets.size() == 3);
    CHECK(sets[0].second == std::vector<int>{0, 1, 2});
    CHECK(sets[1].first == 1);
    CHECK(sets[1].second == std::vector<int>{1, 2});
    CHECK(sets[2].second == std::vector<int>{2});
  }
  SUBCASE("partial ranking stops at the last ranked label") {
    const auto sets = candidate_sets(HeadKind::kRanking,
                                     TaskTarget::ranking({2}), 4);
    REQUIRE(sets.size() == 1);
    CHECK(sets[0].first == 2);
    CHECK(sets[0].second.size() == 4);
  }
  SUBCASE("multilabel keeps the whole universe for every label") {
    const auto sets = candidate_sets(HeadKind::kMultilabel,
                                     TaskTarget::multilabel({0, 2}), 3);
    REQUIRE(sets.size() == 2);
    CHECK(sets[0].first == 0);
    CHECK(sets[0].second == std::vector<int>{0, 1, 2});
    CHECK(sets[1].first == 2);
    CHECK(sets[1].second == std::vector<int>{0, 1, 2});
  }
  SUBCASE("duplicate ranking labels throw") {
    CHECK_THROWS_AS(candidate_sets(HeadKind::kRanking,
                                   TaskTarget::ranking({1, 1}), 3),
                    std::invalid_argument);
  }
}

TEST_CASE("structured losses") {
  SUBCASE("two equal-scored classes cost log 2") {
    TaskHead head = TaskHead::make(HeadKind::kMulticlass, "t", 2, {"a", "b"});
    CHECK(loss_structured(head, Vector::Zero(2), TaskTarget::multiclass(0)) ==
          doctest::Approx(std::log(2.0)));
  }
  SUBCASE("uniform full ranking of three labels costs log 6") {
    TaskHead head = TaskHead::make(HeadKind::kRanking, "t", 2, {"a", "b", "c"});
    CHECK(loss_structured(head, Vector::Zero(2),
                          TaskTarget::ranking({0, 1, 2})) ==
          doctest::Approx(std::log(6.0)).epsilon(1e-12));
  }
}

// Sequential-softmax normalization: the ranking probabilities of all
// complete orderings must sum to one.
TEST_CASE("ranking loss normalizes over all orderings") {
  Rng rng(44);
  for (int labels = 3; labels <= 5; ++labels) {
    std::vector<std::string> names;
    for (int l = 0; l < labels; ++l) names.push_back("l" + std::to_string(l));
    TaskHead head = TaskHead::make(HeadKind::kRanking, "t", 3, names);
    head.V = testutil::random_matrix(labels, 3, rng);
    head.bias = testutil::random_vector(labels, rng);
    const Vector f = testutil::random_vector(3, rng);

    std::vector<int> order(static_cast<std::size_t>(labels));
    std::iota(order.begin(), order.end(), 0);
    double total = 0.0;
    do {
      total += std::exp(-loss_structured(head, f, TaskTarget::ranking(order)));
    } while (std::next_permutation(order.begin(), order.end()));
    CHECK(std::abs(total - 1.0) < 1e-9);
  }
}

TEST_CASE("multiclass decision is shift invariant") {
  Rng rng(17);
  TaskHead head = TaskHead::make(HeadKind::kMulticlass, "t", 4,
                                 {"a", "b", "c"});
  head.V = testutil::random_matrix(3, 4, rng);
  head.bias = testutil::random_vector(3, rng);
  const Vector f = testutil::random_vector(4, rng);

  const Vector scores = head_score(head, f);
  TaskHead shifted = head;
  shifted.bias.array() += 11.5;
  const Vector shifted_scores = head_score(shifted, f);
  for (int l = 0; l < 3; ++l) {
    CHECK(std::abs(structured_prob_from_scores(scores, l, {0, 1, 2}) -
                   structured_prob_from_scores(shifted_scores, l, {0, 1, 2})) <
          1e-12);
  }
  CHECK(predict(head, f).class_index == predict(shifted, f).class_index);
}

// dLoss/dscores against central differences for every head kind
TEST_CASE("score gradients match finite differences") {
  Rng rng(555);
  struct Case {
    TaskHead head;
    TaskTarget target;
  };
  std::vector<Case> cases;
  cases.push_back({TaskHead::make(HeadKind::kRegression, "r", 2),
                   TaskTarget::regression(0.7)});
  cases.push_back({TaskHead::make(HeadKind::kLogistic, "l", 2),
                   TaskTarget::logistic(-1)});
  cases.push_back({TaskHead::make(HeadKind::kPoisson, "p", 2),
                   TaskTarget::poisson(4)});
  cases.push_back({TaskHead::make(HeadKind::kMulticlass, "m", 2, {"a", "b", "c"}),
                   TaskTarget::multiclass(2)});
  cases.push_back({TaskHead::make(HeadKind::kRanking, "k", 2,
                                  {"a", "b", "c", "d"}),
                   TaskTarget::ranking({2, 0})});
  cases.push_back({TaskHead::make(HeadKind::kMultilabel, "s", 2, {"a", "b", "c"}),
                   TaskTarget::multilabel({0, 2})});

  const double eps = 1e-6;
  for (auto& c : cases) {
    Vector scores = testutil::random_vector(c.head.output_dim(), rng);
    const Vector grad = head_loss_score_grad(c.head, scores, c.target);
    for (int i = 0; i < scores.size(); ++i) {
      const double saved = scores(i);
      scores(i) = saved + eps;
      const double up = head_loss_from_scores(c.head, scores, c.target);
      scores(i) = saved - eps;
      const double down = head_loss_from_scores(c.head, scores, c.target);
      scores(i) = saved;
      const double numeric = (up - down) / (2.0 * eps);
      CHECK(std::abs(grad(i) - numeric) /
                std::max({std::abs(grad(i)), std::abs(numeric), 1e-8}) <
            1e-6);
    }
  }
}

namespace {

// independent macro-F1 used by the calibration oracle below
double oracle_macro_f1(const Matrix& probs,
                       const std::vector<std::vector<int>>& truth, double tau) {
  const int labels = static_cast<int>(probs.cols());
  double total = 0.0;
  for (int l = 0; l < labels; ++l) {
    long tp = 0, fp = 0, fn = 0;
    for (Eigen::Index r = 0; r < probs.rows(); ++r) {
      const bool pred = probs(r, l) >= tau;
      const bool is_true =
          std::find(truth[static_cast<std::size_t>(r)].begin(),
                    truth[static_cast<std::size_t>(r)].end(),
                    l) != truth[static_cast<std::size_t>(r)].end();
      if (pred && is_true) ++tp;
      if (pred && !is_true) ++fp;
      if (!pred && is_true) ++fn;
    }
    const double p = tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
    const double r2 = tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
    total += p + r2 > 0 ? 2.0 * p * r2 / (p + r2) : 0.0;
  }
  return total / labels;
}

}  // namespace

TEST_CASE("threshold calibration") {
  SUBCASE("separable probabilities reach perfect F1") {
    Matrix probs(4, 2);
    probs << 0.95, 0.05, 0.92, 0.08, 0.06, 0.94, 0.03, 0.97;
    const std::vector<std::vector<int>> truth = {{0}, {0}, {1}, {1}};
    const double tau = calibrate_threshold_probs(probs, truth, 2);
    CHECK(oracle_macro_f1(probs, truth, tau) == doctest::Approx(1.0));
    CHECK(tau > 0.08);   // above every negative
    CHECK(tau <= 0.92);  // keeps every positive
  }
  SUBCASE("single instance selects exactly its positive label") {
    Matrix probs(1, 3);
    probs << 0.2, 0.7, 0.1;
    const std::vector<std::vector<int>> truth = {{1}};
    const double tau = calibrate_threshold_probs(probs, truth, 3);
    CHECK(tau > 0.2);
    CHECK(tau <= 0.7);
    std::vector<int> selected;
    for (int l = 0; l < 3; ++l) {
      if (probs(0, l) >= tau) selected.push_back(l);
    }
    CHECK(selected == std::vector<int>{1});
    // the positive label itself is perfectly predicted
    CHECK(multilabel_metrics({selected}, truth, 3).per_label_f1[1] ==
          doctest::Approx(1.0));
  }
  SUBCASE("no positives anywhere is a calibration error") {
    Matrix probs = Matrix::Constant(3, 2, 0.5);
    const std::vector<std::vector<int>> truth = {{}, {}, {}};
    CHECK_THROWS_AS(calibrate_threshold_probs(probs, truth, 2), DataError);
  }
  SUBCASE("random calibration set attains the grid maximum") {
    Rng rng(321);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    Matrix probs(20, 5);
    std::vector<std::vector<int>> truth(20);
    for (int r = 0; r < 20; ++r) {
      double sum = 0.0;
      for (int l = 0; l < 5; ++l) {
        probs(r, l) = uni(rng);
        sum += probs(r, l);
      }
      probs.row(r) /= sum;
      for (int l = 0; l < 5; ++l) {
        if (uni(rng) < 0.3) truth[static_cast<std::size_t>(r)].push_back(l);
      }
    }
    truth[0].push_back(2);  // guarantee at least one positive
    std::sort(truth[0].begin(), truth[0].end());
    truth[0].erase(std::unique(truth[0].begin(), truth[0].end()), truth[0].end());

    const double tau = calibrate_threshold_probs(probs, truth, 5);
    const double chosen = oracle_macro_f1(probs, truth, tau);

    // exhaustive scan over the same grid the contract names
    std::vector<double> grid(probs.data(), probs.data() + probs.size());
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
    const std::size_t distinct = grid.size();
    for (std::size_t i = 0; i + 1 < distinct; ++i) {
      grid.push_back(0.5 * (grid[i] + grid[i + 1]));
    }
    for (double g : grid) {
      CHECK(chosen >= oracle_macro_f1(probs, truth, g) - 1e-12);
    }
  }
}

TEST_CASE("calibrate_threshold stores the threshold on the head") {
  Rng rng(91);
  TaskHead head = TaskHead::make(HeadKind::kMultilabel, "concepts", 3,
                                 {"a", "b"});
  head.V = testutil::random_matrix(2, 3, rng);
  head.bias = testutil::random_vector(2, rng);
  Matrix features = testutil::random_matrix(10, 3, rng);
  std::vector<TaskTarget> targets;
  for (int i = 0; i < 10; ++i) {
    targets.push_back(TaskTarget::multilabel({i % 2}));
  }
  CHECK_FALSE(head.threshold.has_value());
  const double tau = calibrate_threshold(head, features, targets);
  REQUIRE(head.threshold.has_value());
  CHECK(*head.threshold == tau);
  CHECK(tau > 0.0);
  CHECK(tau <= 1.0);
}

TEST_CASE("predictions per kind") {
  SUBCASE("multiclass argmax") {
    TaskHead head = TaskHead::make(HeadKind::kMulticlass, "t", 3,
                                   {"a", "b", "c"});
    head.bias << 3.0, 1.0, 2.0;
    CHECK(predict(head, Vector::Zero(3)).class_index == 0);
  }
  SUBCASE("ranking ties break by declaration order") {
    TaskHead head = TaskHead::make(HeadKind::kRanking, "t", 3,
                                   {"a", "b", "c"});
    const Prediction pred = predict(head, Vector::Zero(3));
    CHECK(pred.labels == std::vector<int>{0, 1, 2});
  }
  SUBCASE("ranking orders by descending score") {
    TaskHead head = TaskHead::make(HeadKind::kRanking, "t", 3,
                                   {"a", "b", "c"});
    head.bias << 0.5, 2.0, 1.0;
    const Prediction pred = predict(head, Vector::Zero(3));
    CHECK(pred.labels == std::vector<int>{1, 2, 0});
  }
  SUBCASE("multilabel thresholds the softmax probabilities") {
    TaskHead head = TaskHead::make(HeadKind::kMultilabel, "t", 2,
                                   {"a", "b", "c"});
    head.bias << std::log(8.0), std::log(3.0), std::log(9.0);
    head.threshold = 0.2;  // probabilities are (0.4, 0.15, 0.45)
    const Prediction pred = predict(head, Vector::Zero(2));
    CHECK(pred.labels == std::vector<int>{0, 2});
  }
  SUBCASE("multilabel without calibration throws") {
    TaskHead head = TaskHead::make(HeadKind::kMultilabel, "t", 2, {"a", "b"});
    CHECK_THROWS_AS(predict(head, Vector::Zero(2)), std::invalid_argument);
  }
  SUBCASE("logistic carries sign and probability") {
    TaskHead head = TaskHead::make(HeadKind::kLogistic, "t", 2);
    head.bias << 1.0;
    const Prediction pred = predict(head, Vector::Zero(2));
    CHECK(pred.sign == 1);
    CHECK(pred.probability == doctest::Approx(sigmoid(1.0)));
    head.bias << -1.0;
    CHECK(predict(head, Vector::Zero(2)).sign == -1);
  }
  SUBCASE("poisson exposes the rate") {
    TaskHead head = TaskHead::make(HeadKind::kPoisson, "t", 2);
    head.bias << 1.5;
    const Prediction pred = predict(head, Vector::Zero(2));
    CHECK(pred.value == doctest::Approx(1.5));
    CHECK(pred.rate == doctest::Approx(std::exp(1.5)));
  }
}

TEST_CASE("head construction invariants") {
  CHECK_THROWS_AS(TaskHead::make(HeadKind::kMulticlass, "t", 3, {"only"}),
                  std::invalid_argument);
  CHECK_THROWS_AS(TaskHead::make(HeadKind::kRegression, "t", 3, {"a", "b"}),
                  std::invalid_argument);
  CHECK_THROWS_AS(TaskTarget::logistic(0), std::invalid_argument);
  CHECK_THROWS_AS(TaskTarget::poisson(-1), std::invalid_argument);
}
