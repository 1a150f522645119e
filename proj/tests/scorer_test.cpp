#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "cbcs/rng.hpp"
#include "cbcs/scorer.hpp"
#include "cbcs/tensor_io.hpp"
#include "oracles.hpp"

using namespace cbcs;

namespace {

EmbeddingMatrix random_unit(Rng& rng, std::size_t rows, std::size_t cols) {
  std::vector<float> data(rows * cols);
  for (auto& v : data) v = static_cast<float>(rng.normal());
  return EmbeddingMatrix(rows, cols, std::move(data)).normalized_copy();
}

oracle::Rows to_rows(const EmbeddingMatrix& m) {
  oracle::Rows out;
  for (std::size_t r = 0; r < m.rows(); ++r) out.emplace_back(m.row(r).begin(), m.row(r).end());
  return out;
}

oracle::Rows to_rows(const Matrix<double>& m) {
  oracle::Rows out;
  for (std::size_t r = 0; r < m.rows(); ++r) out.emplace_back(m.row(r).begin(), m.row(r).end());
  return out;
}

// Two classes in 2-D: class 0 near (1, 0.1), class 1 near (0.1, 1).
struct Toy {
  SimilarityMatrix x;
  LabelVector y;
};

Toy separable_toy(std::size_t per_class, std::uint64_t seed) {
  Rng rng(seed);
  Toy t{SimilarityMatrix(2 * per_class, 2), LabelVector{{}, 2}};
  for (std::size_t i = 0; i < 2 * per_class; ++i) {
    const bool first = i < per_class;
    t.x(i, 0) = (first ? 1.0 : 0.1) + 0.05 * rng.normal();
    t.x(i, 1) = (first ? 0.1 : 1.0) + 0.05 * rng.normal();
    t.y.labels.push_back(first ? 0 : 1);
  }
  return t;
}

}  // namespace

TEST(ConceptSimilarity, OrthonormalBasis) {
  const auto visual = EmbeddingMatrix::from_rows({{1, 0, 0}, {0, 1, 0}}, true);
  const auto concepts = EmbeddingMatrix::from_rows({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}, true);
  const auto s = concept_similarity(visual, concepts);
  EXPECT_EQ(s, SimilarityMatrix(2, 3, {1, 0, 0, 0, 1, 0}));
}

TEST(ConceptSimilarity, IdenticalUnitRowsGiveOne) {
  Rng rng(3);
  const auto v = random_unit(rng, 1, 16);
  EXPECT_NEAR(concept_similarity(v, v)(0, 0), 1.0, 1e-6);
}

TEST(ConceptSimilarity, MatchesBruteForceDotProducts) {
  const auto visual = EmbeddingMatrix::from_rows({{1, 2}});
  const auto concepts = EmbeddingMatrix::from_rows({{3, 4}, {-1, 0}});
  const auto expected = oracle::dot_all(to_rows(visual), to_rows(concepts));
  ASSERT_EQ(expected, (oracle::Rows{{11, -1}}));
  const auto s = concept_similarity(visual, concepts, false);
  EXPECT_EQ(s(0, 0), 11.0);
  EXPECT_EQ(s(0, 1), -1.0);

  Rng rng(17);
  const auto a = random_unit(rng, 9, 12);
  const auto b = random_unit(rng, 7, 12);
  const auto want = oracle::dot_all(to_rows(a), to_rows(b));
  const auto got = concept_similarity(a, b);
  for (std::size_t i = 0; i < 9; ++i)
    for (std::size_t j = 0; j < 7; ++j) EXPECT_NEAR(got(i, j), want[i][j], 1e-12);
}

TEST(ConceptSimilarity, Errors) {
  const auto a = EmbeddingMatrix::from_rows({{1, 0}}, true);
  const auto b = EmbeddingMatrix::from_rows({{1, 0, 0}}, true);
  EXPECT_THROW(concept_similarity(a, b), Error);
  const auto raw = EmbeddingMatrix::from_rows({{3, 4}});
  try {
    concept_similarity(raw, a);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NotNormalized);
  }
  EXPECT_NO_THROW(concept_similarity(raw, a, false));
}

TEST(PseudoLabels, ExactPromptMatch) {
  const auto prompts = EmbeddingMatrix::from_rows({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}, true);
  const auto visual = EmbeddingMatrix::from_rows({{0, 0, 1}}, true);
  const auto labels = zero_shot_pseudo_labels(visual, prompts);
  EXPECT_EQ(labels.labels, (std::vector<std::uint32_t>{2}));
  EXPECT_EQ(labels.num_classes, 3u);
}

TEST(PseudoLabels, TiesGoToSmallestClass) {
  const auto prompts = EmbeddingMatrix::from_rows({{0, 1}, {1, 0}, {1, 0}});
  const auto visual = EmbeddingMatrix::from_rows({{1, 0}, {1, 1}});
  EXPECT_EQ(zero_shot_pseudo_labels(visual, prompts).labels, (std::vector<std::uint32_t>{1, 0}));
}

TEST(PseudoLabels, MatchesExhaustiveArgmaxAndIsScaleInvariant) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const auto visual = random_unit(rng, 5, 8);
    const auto prompts = random_unit(rng, 3, 8);
    const auto want = oracle::argmax_rows(oracle::dot_all(to_rows(visual), to_rows(prompts)));
    const auto got = zero_shot_pseudo_labels(visual, prompts);
    ASSERT_EQ(got.labels, want);

    std::vector<float> scaled(visual.data().begin(), visual.data().end());
    for (std::size_t r = 0; r < 5; ++r) {
      const float c = static_cast<float>(0.01 + 100.0 * rng.uniform01());
      for (std::size_t k = 0; k < 8; ++k) scaled[r * 8 + k] *= c;
    }
    ASSERT_EQ(zero_shot_pseudo_labels(EmbeddingMatrix(5, 8, scaled), prompts).labels, want);
  }
  EXPECT_THROW(zero_shot_pseudo_labels(random_unit(rng, 2, 4), random_unit(rng, 2, 5)), Error);
}

TEST(Trainer, Defaults) {
  const TrainerConfig cfg;
  EXPECT_EQ(cfg.learning_rate, 1e-3);
  EXPECT_EQ(cfg.momentum, 0.9);
  EXPECT_EQ(cfg.weight_decay, 5e-4);
  EXPECT_EQ(cfg.epochs, 100u);
  EXPECT_EQ(cfg.batch_size, 256u);
  EXPECT_EQ(cfg.likelihood, Likelihood::Softmax);
}

TEST(Trainer, ZeroWeightsGiveZeroMarginsAndAum) {
  Rng rng(8);
  SimilarityMatrix sim(12, 6);
  for (double& v : sim.data()) v = rng.normal();
  LabelVector y{{0, 1, 2, 3, 0, 1, 2, 3, 0, 1, 2, 3}, 4};
  TrainerConfig cfg;
  cfg.epochs = 1;
  cfg.learning_rate = 0.0;
  const auto r = train_bottleneck(sim, y, cfg);
  EXPECT_DOUBLE_EQ(r.initial_loss, std::log(4.0));
  for (double m : r.trajectory.margins.data()) EXPECT_EQ(m, 0.0);
  for (double a : compute_aum(r.trajectory)) EXPECT_EQ(a, 0.0);
  for (double w : r.layer.weights.data()) EXPECT_EQ(w, 0.0);
}

TEST(Trainer, SeparableToyMatchesFullBatchOracle) {
  const auto toy = separable_toy(20, 1);
  TrainerConfig cfg;
  cfg.epochs = 50;
  const auto r = train_bottleneck(toy.x, toy.y, cfg);
  EXPECT_LT(r.epoch_loss.back(), r.initial_loss);
  std::size_t positive = 0;
  for (std::size_t i = 0; i < toy.x.rows(); ++i) positive += r.trajectory.margins(i, cfg.epochs - 1) > 0.0;
  EXPECT_GE(static_cast<double>(positive) / static_cast<double>(toy.x.rows()), 0.95);

  const auto x = to_rows(toy.x);
  const auto w_oracle = oracle::full_batch_gd(x, toy.y.labels, 2, 0.5, 200);
  const double oracle_acc = oracle::accuracy(x, toy.y.labels, w_oracle);
  const double trained_acc = oracle::accuracy(x, toy.y.labels, to_rows(r.layer.weights));
  EXPECT_EQ(oracle_acc, 1.0);
  EXPECT_EQ(trained_acc, oracle_acc);
}

TEST(Trainer, GradientMatchesFiniteDifferences) {
  Rng rng(21);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t n = 1 + rng.uniform_index(32);
    const std::size_t classes = 2 + rng.uniform_index(4);
    const std::size_t concepts = 1 + rng.uniform_index(20);
    SimilarityMatrix sim(n, concepts);
    for (double& v : sim.data()) v = rng.normal();
    LabelVector y{std::vector<std::uint32_t>(n), static_cast<std::uint32_t>(classes)};
    for (auto& l : y.labels) l = static_cast<std::uint32_t>(rng.uniform_index(classes));
    Matrix<double> w(classes, concepts);
    for (double& v : w.data()) v = 0.5 * rng.normal();

    const auto analytic = cross_entropy_gradient(sim, y, w);
    const auto numeric = oracle::finite_difference_gradient(to_rows(sim), y.labels, to_rows(w));
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      for (std::size_t j = 0; j < concepts; ++j) {
        diff += std::pow(analytic(c, j) - numeric[c][j], 2);
        na += std::pow(analytic(c, j), 2);
        nn += std::pow(numeric[c][j], 2);
      }
    }
    ASSERT_LT(std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), 1e-12}), 1e-4);
  }
}

TEST(Trainer, SoftmaxRowsAndMarginBounds) {
  Rng rng(4);
  SimilarityMatrix sim(40, 10);
  for (double& v : sim.data()) v = rng.normal();
  LabelVector y{std::vector<std::uint32_t>(40), 5};
  for (auto& l : y.labels) l = static_cast<std::uint32_t>(rng.uniform_index(5));
  TrainerConfig cfg;
  cfg.learning_rate = 0.5;
  cfg.epochs = 20;
  cfg.batch_size = 8;
  const auto r = train_bottleneck(sim, y, cfg);
  for (double m : r.trajectory.margins.data()) {
    EXPECT_GE(m, -1.0);
    EXPECT_LE(m, 1.0);
  }
  std::vector<double> h(5);
  for (std::size_t i = 0; i < 40; ++i) {
    compute_logits(sim.row(i), r.layer.weights, h);
    softmax_inplace(h);
    EXPECT_NEAR(std::accumulate(h.begin(), h.end(), 0.0), 1.0, 1e-6);
  }
}

TEST(Trainer, LogitModeUsesRawLogits) {
  const auto toy = separable_toy(10, 2);
  TrainerConfig cfg;
  cfg.epochs = 3;
  cfg.learning_rate = 1.0;
  cfg.likelihood = Likelihood::Logit;
  cfg.keep_snapshots = true;
  const auto r = train_bottleneck(toy.x, toy.y, cfg);
  for (std::size_t t = 0; t < 3; ++t) {
    const auto& w = r.snapshots[t];
    for (std::size_t i = 0; i < toy.x.rows(); ++i) {
      const double z0 = w(0, 0) * toy.x(i, 0) + w(0, 1) * toy.x(i, 1);
      const double z1 = w(1, 0) * toy.x(i, 0) + w(1, 1) * toy.x(i, 1);
      const double want = toy.y.labels[i] == 0 ? z0 - z1 : z1 - z0;
      EXPECT_NEAR(r.trajectory.margins(i, t), want, 1e-12);
    }
  }
}

TEST(Trainer, SnapshotReplayReproducesAum) {
  Rng rng(12);
  SimilarityMatrix sim(30, 6);
  for (double& v : sim.data()) v = rng.normal();
  LabelVector y{std::vector<std::uint32_t>(30), 3};
  for (auto& l : y.labels) l = static_cast<std::uint32_t>(rng.uniform_index(3));
  TrainerConfig cfg;
  cfg.epochs = 15;
  cfg.batch_size = 7;
  cfg.learning_rate = 0.2;
  cfg.keep_snapshots = true;
  const auto r = train_bottleneck(sim, y, cfg);
  ASSERT_EQ(r.snapshots.size(), 15u);
  const auto aum = compute_aum(r.trajectory);
  const auto x = to_rows(sim);
  for (std::size_t i = 0; i < 30; ++i) {
    double sum = 0.0;
    for (const auto& snap : r.snapshots) sum += oracle::softmax_margin(x[i], y.labels[i], to_rows(snap));
    EXPECT_NEAR(sum / 15.0, aum[i], 1e-6);
  }
}

TEST(Trainer, DeterministicForFixedSeed) {
  Rng rng(6);
  SimilarityMatrix sim(50, 8);
  for (double& v : sim.data()) v = rng.normal();
  LabelVector y{std::vector<std::uint32_t>(50), 4};
  for (auto& l : y.labels) l = static_cast<std::uint32_t>(rng.uniform_index(4));
  TrainerConfig cfg;
  cfg.epochs = 10;
  cfg.batch_size = 16;
  cfg.seed = 77;
  const auto a = train_bottleneck(sim, y, cfg);
  const auto b = train_bottleneck(sim, y, cfg);
  EXPECT_EQ(a.layer.weights, b.layer.weights);
  EXPECT_EQ(a.trajectory.margins, b.trajectory.margins);
  cfg.seed = 78;
  const auto c = train_bottleneck(sim, y, cfg);
  EXPECT_NE(a.layer.weights, c.layer.weights);
}

TEST(Trainer, Errors) {
  SimilarityMatrix empty(0, 3);
  try {
    train_bottleneck(empty, LabelVector{{}, 2}, TrainerConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyDataset);
  }

  SimilarityMatrix big(2, 1, {1e200, -1e200});
  TrainerConfig cfg;
  cfg.learning_rate = 1e200;
  try {
    train_bottleneck(big, LabelVector{{0, 1}, 2}, cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonFiniteLoss);
    EXPECT_NE(std::string(e.what()).find("epoch 1"), std::string::npos);
  }

  SimilarityMatrix sim(2, 1, {1, 2});
  EXPECT_THROW(train_bottleneck(sim, LabelVector{{0}, 2}, TrainerConfig{}), Error);
}

TEST(Aum, MeanOfMargins) {
  const std::vector<double> constant(17, 0.3);
  EXPECT_NEAR(compute_aum(constant), 0.3, 1e-15);
  EXPECT_EQ(compute_aum(std::vector<double>{-0.7}), -0.7);
  const std::vector<double> ramp{0.2, 0.4, 0.6};
  EXPECT_NEAR(compute_aum(ramp), (0.2 + 0.4 + 0.6) / 3.0, 1e-15);
  EXPECT_NEAR(compute_aum(ramp), 0.4, 1e-15);
  EXPECT_THROW(compute_aum(std::vector<double>{}), Error);
  EXPECT_THROW(compute_aum(MarginTrajectory{Matrix<double>(3, 0)}), Error);
}

TEST(ScoreDataset, LabeledModeTable) {
  Rng rng(10);
  const auto visual = random_unit(rng, 10, 8);
  const auto concepts = random_unit(rng, 6, 8);
  LabelVector y{{0, 1, 2, 0, 1, 2, 0, 1, 2, 0}, 3};
  ScoreOptions o;
  o.keep_margins = true;
  o.trainer.epochs = 7;
  const auto r = score_dataset(visual, concepts, y, o);
  ASSERT_EQ(r.table.size(), 10u);
  for (const auto& e : r.table.entries) {
    ASSERT_TRUE(e.margins.has_value());
    ASSERT_EQ(e.margins->size(), 7u);
    double sum = 0.0;
    for (double m : *e.margins) sum += m;
    EXPECT_EQ(e.aum, sum / 7.0);
    EXPECT_FALSE(e.pseudo_label.has_value());
    EXPECT_EQ(e.label, y.labels[e.index]);
  }
  EXPECT_NO_THROW(r.table.validate(10));
  EXPECT_EQ(encode_score_table(score_dataset(visual, concepts, y, o).table), encode_score_table(r.table));
}

TEST(ScoreDataset, LabelFreeModeScoresAgainstPseudoLabels) {
  Rng rng(13);
  const auto visual = random_unit(rng, 20, 8);
  const auto concepts = random_unit(rng, 6, 8);
  const auto prompts = random_unit(rng, 3, 8);
  ScoreOptions o;
  o.trainer.epochs = 5;
  const auto lf = score_dataset_label_free(visual, concepts, prompts, o);
  ASSERT_TRUE(lf.pseudo_labels.has_value());
  const auto labeled = score_dataset(visual, concepts, *lf.pseudo_labels, o);
  for (std::size_t i = 0; i < 20; ++i) {
    const auto& e = lf.table.entries[i];
    ASSERT_TRUE(e.pseudo_label.has_value());
    EXPECT_EQ(*e.pseudo_label, lf.pseudo_labels->labels[i]);
    EXPECT_EQ(e.aum, labeled.table.entries[i].aum);
  }
}
