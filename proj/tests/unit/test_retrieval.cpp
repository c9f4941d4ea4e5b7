// Copyright 2026 The FreqAdapter Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fqa/errors.hpp"
#include "fqa/gradcheck.hpp"
#include "fqa/random.hpp"
#include "fqa/retrieval.hpp"
#include "oracles.hpp"

using namespace fqa;

TEST(Contrastive, SinglePairIsZero) {
  EXPECT_NEAR(contrastive_loss(Tensor::matrix({{1, 2, 3}}), Tensor::matrix({{-1, 0, 4}}), 0.07), 0.0, 1e-15);
}

TEST(Contrastive, IdentityFeaturesAtSmallTemperature) {
  const Tensor eye = Tensor::matrix({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
  EXPECT_LT(contrastive_loss(eye, eye, 0.01), 1e-12);
}

TEST(Contrastive, HandExampleAtUnitTemperature) {
  const Tensor v = Tensor::matrix({{1, 0}, {0, 1}});
  const Tensor t = Tensor::matrix({{1, 1}, {0, 1}});
  // logits [[1/sqrt2, 0], [1/sqrt2, 1]]
  const double a = 1.0 / std::sqrt(2.0);
  const double row0 = -std::log(std::exp(a) / (std::exp(a) + 1.0));
  const double row1 = -std::log(std::exp(1.0) / (std::exp(a) + std::exp(1.0)));
  const double col0 = -std::log(std::exp(a) / (2.0 * std::exp(a)));
  const double col1 = -std::log(std::exp(1.0) / (1.0 + std::exp(1.0)));
  EXPECT_NEAR(contrastive_loss(v, t, 1.0), (row0 + row1 + col0 + col1) / 4.0, 1e-14);
}

TEST(Contrastive, MatchesSoftmaxOracle) {
  std::mt19937_64 g(3);
  for (int trial = 0; trial < 10; ++trial) {
    const auto v = oracle::random_mat(g, 6, 5), t = oracle::random_mat(g, 6, 5);
    EXPECT_NEAR(contrastive_loss(oracle::tensor(v), oracle::tensor(t), 0.5), oracle::contrastive(v, t, 0.5), 1e-12);
  }
}

TEST(Contrastive, ConstantFeaturesGiveLogB) {
  const Tensor c = Tensor::full({5, 3}, 2.0);
  EXPECT_NEAR(contrastive_loss(c, c, 0.07), std::log(5.0), 1e-12);
}

TEST(Contrastive, Errors) {
  EXPECT_THROW(contrastive_loss(Tensor::matrix({{0, 0}, {1, 0}}), Tensor::matrix({{1, 0}, {0, 1}}), 0.07), ValueError);
  EXPECT_THROW(contrastive_loss(Tensor({2, 3}), Tensor({3, 3}), 0.07), DimensionError);
}

TEST(Contrastive, GradientMatchesFiniteDifference) {
  Rng rng(11);
  const Tensor t = rng.normal_tensor({4, 3}, 1.0);
  const auto r = finite_difference_check(
      [&](Tape& tape, const Var& x) { return contrastive_loss(x, tape.constant(t), 0.3); },
      rng.normal_tensor({4, 3}, 1.0), 1e-5);
  EXPECT_LT(r.max_relative_error, 1e-6);
}

TEST(TopK, FullSetIsMean) {
  const Tensor texts = Tensor::matrix({{1, 0}, {0, 1}, {1, 1}});
  EXPECT_EQ(topk_select(Tensor::vector({3, 1}), texts, 3), Tensor::vector({2.0 / 3.0, 2.0 / 3.0}));
}

TEST(TopK, ExactMatchWins) {
  const Tensor texts = Tensor::matrix({{1, 0}, {0.2, 0.7}, {-1, 0}});
  EXPECT_EQ(topk_select(Tensor::vector({0.2, 0.7}), texts, 1), Tensor::vector({0.2, 0.7}));
}

TEST(TopK, HandExample) {
  // cosines with (1, 0): 1, 0, 1/sqrt2
  const Tensor texts = Tensor::matrix({{2, 0}, {0, 1}, {1, 1}});
  const Tensor r = topk_select(Tensor::vector({1, 0}), texts, 2);
  EXPECT_DOUBLE_EQ(r[0], 1.5);
  EXPECT_DOUBLE_EQ(r[1], 0.5);
}

TEST(TopK, TiesGoToLowerIndex) {
  const Tensor texts = Tensor::matrix({{0, 1}, {1, 0}, {2, 0}, {3, 0}});
  EXPECT_EQ(topk_select(Tensor::vector({1, 0}), texts, 2), Tensor::vector({1.5, 0}));
}

TEST(TopK, Errors) {
  const Tensor texts = Tensor::matrix({{1, 0}, {0, 1}});
  EXPECT_THROW(topk_select(Tensor::vector({1, 0}), texts, 3), ConfigError);
  EXPECT_THROW(topk_select(Tensor::vector({1, 0}), texts, 0), ConfigError);
  EXPECT_THROW(topk_select(Tensor::vector({1, 0, 0}), texts, 1), DimensionError);
}

TEST(Recall, OrthogonalFeaturesArePerfect) {
  const Tensor eye = Tensor::matrix({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
  const auto m = evaluate_retrieval(eye, eye, {{0}, {1}, {2}});
  for (double v : {m.i2t.r1, m.i2t.r5, m.i2t.r10, m.t2i.r1, m.t2i.r5, m.t2i.r10}) EXPECT_EQ(v, 100.0);
}

TEST(Recall, HandMatrixMatchesBruteForce) {
  const oracle::Mat s{{0.9, 0.1, 0.3, 0.8, 0.0, 0.2},
                      {0.5, 0.6, 0.7, 0.1, 0.2, 0.4},
                      {0.3, 0.2, 0.1, 0.0, 0.95, 0.5}};
  const std::vector<std::vector<std::size_t>> groups{{0, 1}, {2, 3}, {4, 5}};
  const auto m = evaluate_retrieval_scores(oracle::tensor(s), groups);
  const auto o = oracle::brute_force_recall(s, groups);
  // image 0: top is caption 0 (own). image 1: top is caption 2 (own). image 2: caption 4 (own).
  EXPECT_EQ(m.i2t.r1, 100.0);
  EXPECT_NEAR(m.i2t.r1, o.i2t[0], 1e-12);
  // caption 3 scores highest against image 0, caption 1 against image 1.
  EXPECT_NEAR(m.t2i.r1, 100.0 * 4.0 / 6.0, 1e-12);
  EXPECT_NEAR(m.t2i.r1, o.t2i[0], 1e-12);
  EXPECT_NEAR(m.t2i.r5, o.t2i[1], 1e-12);
}

TEST(Recall, AllEqualScoresAreDeterministic) {
  const oracle::Mat s(4, oracle::Vec(4, 0.5));
  const std::vector<std::vector<std::size_t>> groups{{0}, {1}, {2}, {3}};
  const auto a = evaluate_retrieval_scores(oracle::tensor(s), groups);
  const auto b = evaluate_retrieval_scores(oracle::tensor(s), groups);
  const auto o = oracle::brute_force_recall(s, groups);
  EXPECT_EQ(a.i2t.r1, b.i2t.r1);
  EXPECT_NEAR(a.i2t.r1, o.i2t[0], 1e-12);
  EXPECT_NEAR(a.t2i.r1, o.t2i[0], 1e-12);
}

TEST(Recall, RandomScoresMatchBruteForceAndAreMonotone) {
  std::mt19937_64 g(5);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t b = 12;
    std::vector<std::vector<std::size_t>> groups(b);
    for (std::size_t c = 0; c < 2 * b; ++c) groups[c % b].push_back(c);
    const auto s = oracle::random_mat(g, b, 2 * b);
    const auto m = evaluate_retrieval_scores(oracle::tensor(s), groups);
    const auto o = oracle::brute_force_recall(s, groups);
    EXPECT_NEAR(m.i2t.r1, o.i2t[0], 1e-9);
    EXPECT_NEAR(m.i2t.r5, o.i2t[1], 1e-9);
    EXPECT_NEAR(m.i2t.r10, o.i2t[2], 1e-9);
    EXPECT_NEAR(m.t2i.r1, o.t2i[0], 1e-9);
    EXPECT_NEAR(m.t2i.r5, o.t2i[1], 1e-9);
    EXPECT_NEAR(m.t2i.r10, o.t2i[2], 1e-9);
    EXPECT_LE(m.i2t.r1, m.i2t.r5);
    EXPECT_LE(m.i2t.r5, m.i2t.r10);
    EXPECT_LE(m.t2i.r1, m.t2i.r5);
    EXPECT_LE(m.t2i.r5, m.t2i.r10);
  }
}

TEST(Recall, Errors) {
  const Tensor eye = Tensor::matrix({{1, 0}, {0, 1}});
  EXPECT_THROW(evaluate_retrieval(eye, eye, {{0}, {}}), ConfigError);
  EXPECT_THROW(evaluate_retrieval(eye, eye, {{0}}), ConfigError);
}

TEST(Normalize, RowsAndZeroRows) {
  const Tensor r = normalize_rows(Tensor::matrix({{3, 4}, {0, 0}}));
  EXPECT_EQ(r, Tensor::matrix({{0.6, 0.8}, {0, 0}}));
}
