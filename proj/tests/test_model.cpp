#include <gtest/gtest.h>

#include <atomic>
#include <cmath>
#include <thread>
#include <random>

#include "ccbm/model.hpp"
#include "test_util.hpp"

using namespace ccbm;
using namespace ccbm::testing;

namespace {

ModelConfig tiny(std::size_t n_u = 2, std::size_t heads = 1) {
  ModelConfig c;
  c.d = 5;
  c.d_k = 4;
  c.d_u = 4;
  c.n_k = 3;
  c.n_u = n_u;
  c.n_c = 3;
  c.heads = heads;
  return c;
}

}  // namespace

TEST(ModelConfig, Validation) {
  ModelConfig c = tiny();
  EXPECT_NO_THROW(c.validate());
  c.d_u = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c.n_u = 0;
  EXPECT_NO_THROW(c.validate());
  c = tiny();
  c.d = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny(2, 3);
  EXPECT_THROW(c.validate(), ConfigError);  // 3 does not divide 4
  c = tiny(2, 2);
  EXPECT_NO_THROW(c.validate());
}

TEST(ModelConfig, SkinconShapeDecisionWidth) {
  ModelConfig c;
  c.d = 8;
  c.d_k = 4;
  c.d_u = 4;
  c.n_k = 22;
  c.n_c = 3;
  c.n_u = c.n_c;
  EXPECT_EQ(c.decision_width(), 25u);
  const auto p = init_params(c, 1);
  EXPECT_EQ(p.decision.weight.rows(), 25u);
}

TEST(InitParams, DeterministicPerSeed) {
  EXPECT_EQ(init_params(tiny(), 3), init_params(tiny(), 3));
  EXPECT_FALSE(init_params(tiny(), 3) == init_params(tiny(), 4));
}

TEST(InitParams, NoUnknownBranch) {
  const auto p = init_params(tiny(0), 1);
  EXPECT_TRUE(p.unknown_adapters.empty());
  EXPECT_TRUE(p.unknown_embeddings.empty());
  EXPECT_TRUE(p.unknown_aggregators.weight.empty());
  EXPECT_EQ(p.decision.weight.rows(), 3u);
}

TEST(InitParams, FanInBoundAndUnitEmbeddings) {
  ModelConfig c = tiny();
  c.d = 4;
  const auto p = init_params(c, 9);
  for (const auto& a : p.known_adapters) {
    for (double v : a.weight.data()) EXPECT_LE(std::abs(v), 0.5);
    for (double v : a.bias.data()) EXPECT_EQ(v, 0.0);
  }
  for (std::size_t j = 0; j < p.unknown_embeddings.rows(); ++j) EXPECT_NEAR(norm(p.unknown_embeddings.row(j)), 1.0, 1e-12);
  EXPECT_NO_THROW(check_shapes(p, c));
}

TEST(InitParams, InvalidConfigThrows) {
  ModelConfig c = tiny();
  c.n_k = 0;
  EXPECT_THROW(init_params(c, 1), ConfigError);
}

TEST(EncodeKnownQueries, ZeroWeightsGiveBias) {
  auto p = init_params(tiny(0), 1);
  std::mt19937_64 gen(1);
  for (auto& a : p.known_adapters) {
    a.weight.fill(0.0);
    a.bias = random_matrix(gen, 1, 4);
  }
  const Matrix q = encode_known_queries(Vector{1, 2, 3, 4, 5}, p);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(q(i, j), p.known_adapters[i].bias(0, j));
}

TEST(EncodeKnownQueries, Derm7ptShape) {
  ModelConfig c = tiny(0);
  c.n_k = 7;
  const auto p = init_params(c, 1);
  const Matrix q = encode_known_queries(Vector(5, 0.5), p);
  EXPECT_EQ(q.rows(), 7u);
  EXPECT_EQ(q.cols(), 4u);
}

TEST(EncodeKnownQueries, MatchesPerRowOracle) {
  ModelConfig c = tiny(0);
  c.d = 5;
  c.d_k = 3;
  c.n_k = 2;
  auto p = init_params(c, 2);
  std::mt19937_64 gen(7);
  randomize(p, gen);
  const Vector x = random_vector(gen, 5);
  const Matrix q = encode_known_queries(x, p);
  EXPECT_LE(max_abs_diff(q, oracle::adapters_apply(x, p.known_adapters)), 1e-12);
  EXPECT_THROW(encode_known_queries(Vector(4, 0.0), p), DimensionError);
}

TEST(CrossAttention, ZeroQueryIsUniform) {
  std::mt19937_64 gen(3);
  const Matrix k = random_matrix(gen, 4, 3);
  const auto r = cross_attention(Matrix(2, 3), k, k);
  for (double v : r.attention.data()) EXPECT_NEAR(v, 0.25, 1e-15);
  for (std::size_t t = 0; t < 3; ++t) {
    double mean = 0.0;
    for (std::size_t j = 0; j < 4; ++j) mean += k(j, t) / 4.0;
    EXPECT_NEAR(r.weighted(0, t), mean, 1e-15);
  }
}

TEST(CrossAttention, SingleKey) {
  const Matrix q{{0.3, -2.0}};
  const Matrix k{{1.5, 0.25}};
  const auto r = cross_attention(q, k, k);
  EXPECT_EQ(r.attention(0, 0), 1.0);
  EXPECT_EQ(r.weighted, k);
}

TEST(CrossAttention, HandEvaluated) {
  const Matrix q{{1, 0}};
  const Matrix k{{1, 0}, {0, 1}};
  const auto r = cross_attention(q, k, k);
  const double e = std::exp(1.0 / std::sqrt(2.0));
  EXPECT_NEAR(r.attention(0, 0), e / (e + 1.0), 1e-15);
  EXPECT_NEAR(r.attention(0, 1), 1.0 / (e + 1.0), 1e-15);
  EXPECT_NEAR(r.weighted(0, 0), e / (e + 1.0), 1e-15);
  EXPECT_NEAR(r.weighted(0, 1), 1.0 / (e + 1.0), 1e-15);
  EXPECT_THROW(cross_attention(Matrix(1, 3), k, k), DimensionError);
}

TEST(CrossAttention, RowShiftInvariance) {
  // Translating every key along q adds the same constant to each logit.
  std::mt19937_64 gen(5);
  const Matrix q = random_matrix(gen, 1, 3);
  Matrix k = random_matrix(gen, 4, 3);
  const auto base = cross_attention(q, k, k);
  Matrix k2 = k;
  for (std::size_t j = 0; j < 4; ++j)
    for (std::size_t t = 0; t < 3; ++t) k2(j, t) += 0.7 * q(0, t);  // adds 0.7|q|^2/sqrt(3) to every logit
  const auto shifted = cross_attention(q, k2, k);
  for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(base.attention(0, j), shifted.attention(0, j), 1e-14);
}

TEST(KnownScores, ConstantHead) {
  auto p = init_params(tiny(0), 1);
  p.known_aggregators.weight.fill(0.0);
  p.known_aggregators.bias = Matrix{{0.5}, {-1.0}, {2.0}};
  std::mt19937_64 gen(1);
  const auto bank = random_bank(gen, 3, 4);
  const Vector s = known_concept_scores(random_vector(gen, 5), p, bank);
  EXPECT_EQ(s, (Vector{0.5, -1.0, 2.0}));
}

TEST(KnownScores, Derm7ptLength) {
  ModelConfig c = tiny(0);
  c.n_k = 7;
  const auto p = init_params(c, 1);
  std::mt19937_64 gen(1);
  EXPECT_EQ(known_concept_scores(random_vector(gen, 5), p, random_bank(gen, 7, 4)).size(), 7u);
}

TEST(KnownScores, MatchesCompositionOracle) {
  auto p = init_params(tiny(0), 1);
  std::mt19937_64 gen(21);
  randomize(p, gen);
  const auto bank = random_bank(gen, 3, 4);
  const Vector x = random_vector(gen, 5);
  EXPECT_LE(max_abs_diff(known_concept_scores(x, p, bank), oracle::forward(x, p, bank).S), 1e-9);
}

TEST(UnknownScores, SingleUnknownAttendsFully) {
  auto p = init_params(tiny(1), 1);
  std::mt19937_64 gen(2);
  randomize(p, gen);
  const Vector x = random_vector(gen, 5);
  const Vector l = unknown_concept_scores(x, p);
  ASSERT_EQ(l.size(), 1u);
  const double expect = dot(p.unknown_embeddings.row(0), p.unknown_aggregators.weight.row(0)) +
                        p.unknown_aggregators.bias(0, 0);
  EXPECT_NEAR(l[0], expect, 1e-14);
  const auto t = diagnose(x, p, random_bank(gen, 3, 4));
  EXPECT_EQ(t.unknown_attention(0, 0), 1.0);
}

TEST(UnknownScores, ConstantHeadAndEmptyBranch) {
  auto p = init_params(tiny(2), 1);
  p.unknown_aggregators.weight.fill(0.0);
  p.unknown_aggregators.bias = Matrix{{0.25}, {-3.0}};
  EXPECT_EQ(unknown_concept_scores(Vector(5, 1.0), p), (Vector{0.25, -3.0}));
  EXPECT_TRUE(unknown_concept_scores(Vector(5, 1.0), init_params(tiny(0), 1)).empty());
}

TEST(UnknownScores, MatchesCompositionOracle) {
  auto p = init_params(tiny(2), 1);
  std::mt19937_64 gen(22);
  randomize(p, gen);
  const Vector x = random_vector(gen, 5);
  const auto bank = random_bank(gen, 3, 4);
  EXPECT_LE(max_abs_diff(unknown_concept_scores(x, p), oracle::forward(x, p, bank).L), 1e-9);
}

TEST(Diagnose, ZeroDecisionWeightsGiveUniform) {
  auto p = init_params(tiny(), 1);
  p.decision.weight.fill(0.0);
  std::mt19937_64 gen(1);
  const auto t = diagnose(random_vector(gen, 5), p, random_bank(gen, 3, 4));
  for (double v : t.probs) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Diagnose, MatchesFullOracle) {
  std::mt19937_64 gen(23);
  for (std::size_t heads : {1u, 2u}) {
    auto p = init_params(tiny(2, heads), 3);
    randomize(p, gen);
    const auto bank = random_bank(gen, 3, 4);
    const Vector x = random_vector(gen, 5);
    const auto t = diagnose(x, p, bank);
    const auto o = oracle::forward(x, p, bank);
    EXPECT_LE(max_abs_diff(t.logits, o.logits), 1e-9) << "heads=" << heads;
    EXPECT_LE(max_abs_diff(t.probs, o.probs), 1e-9);
    EXPECT_LE(max_abs_diff(t.known_attention, o.known_attention), 1e-9);
    EXPECT_LE(max_abs_diff(t.unknown_attention, o.unknown_attention), 1e-9);
  }
}

TEST(Diagnose, ProbabilitiesAndAttentionNormalised) {
  std::mt19937_64 gen(24);
  for (int trial = 0; trial < 50; ++trial) {
    auto p = init_params(tiny(2, trial % 2 ? 2 : 1), trial);
    randomize(p, gen, 3.0);
    const auto t = diagnose(random_vector(gen, 5, -5, 5), p, random_bank(gen, 3, 4));
    double s = 0.0;
    for (double v : t.probs) {
      EXPECT_GE(v, 0.0);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
    for (const Matrix* a : {&t.known_attention, &t.unknown_attention}) {
      for (std::size_t r = 0; r < a->rows(); ++r) {
        double rs = 0.0;
        for (double v : a->row(r)) rs += v;
        EXPECT_NEAR(rs, 1.0, 1e-12);
      }
    }
  }
}

TEST(Diagnose, EmptyUnknownBranchIsIdentity) {
  // With n_u = 0 the logits are exactly the decision layer over S.
  auto p = init_params(tiny(0), 4);
  std::mt19937_64 gen(25);
  randomize(p, gen);
  const auto bank = random_bank(gen, 3, 4);
  const Vector x = random_vector(gen, 5);
  const auto t = diagnose(x, p, bank);
  EXPECT_TRUE(t.unknown_scores.empty());
  EXPECT_EQ(t.logits, decision_logits(p, t.known_scores));
  EXPECT_EQ(t.probs, softmax(t.logits));
}

TEST(Diagnose, LogitShiftKeepsArgmax) {
  auto p = init_params(tiny(), 4);
  std::mt19937_64 gen(26);
  randomize(p, gen);
  const auto bank = random_bank(gen, 3, 4);
  const Vector x = random_vector(gen, 5);
  const auto t = diagnose(x, p, bank);
  for (double& b : p.decision.bias.data()) b += 5.0;
  const auto t2 = diagnose(x, p, bank);
  EXPECT_EQ(t.predicted(), t2.predicted());
  for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(t.probs[c], t2.probs[c], 1e-12);
}

TEST(Diagnose, DimensionErrors) {
  const auto p = init_params(tiny(), 1);
  std::mt19937_64 gen(1);
  EXPECT_THROW(diagnose(Vector(4, 0.0), p, random_bank(gen, 3, 4)), DimensionError);
  EXPECT_THROW(diagnose(Vector(5, 0.0), p, random_bank(gen, 2, 4)), DimensionError);
}

TEST(Diagnose, ConcurrentCallersAgree) {
  auto p = init_params(tiny(), 4);
  std::mt19937_64 gen(27);
  const auto bank = random_bank(gen, 3, 4);
  const Vector x = random_vector(gen, 5);
  const auto ref = diagnose(x, p, bank);
  std::vector<std::thread> threads;
  std::atomic<int> mismatches{0};
  for (int t = 0; t < 4; ++t) {
    threads.emplace_back([&] {
      for (int i = 0; i < 50; ++i)
        if (diagnose(x, p, bank).probs != ref.probs) ++mismatches;
    });
  }
  for (auto& t : threads) t.join();
  EXPECT_EQ(mismatches.load(), 0);
}

// ---------------------------------------------------------------------------

class Explain : public ::testing::Test {
 protected:
  void SetUp() override {
    params = init_params(tiny(2), 5);
    randomize(params, gen);
    bank = random_bank(gen, 3, 4);
    x = random_vector(gen, 5);
  }
  std::mt19937_64 gen{31};
  CcbmParams params;
  ConceptBank bank;
  Vector x;
  std::vector<std::string> classes{"a", "b", "c"};
};

TEST_F(Explain, ContributionsMatchDirectLoop) {
  const auto r = explain(x, params, bank, ConceptTask::classification, classes, bank.names, 1);
  const auto t = diagnose(x, params, bank);
  const Vector s = t.concept_vector();
  ASSERT_EQ(r.contributions.size(), 5u);
  EXPECT_EQ(r.predicted, t.predicted());
  EXPECT_EQ(r.true_label, 1u);
  for (const auto& c : r.contributions) {
    std::size_t j = 0;
    if (c.unknown) {
      j = 3 + static_cast<std::size_t>(std::stoi(c.name.substr(8)));
    } else {
      j = static_cast<std::size_t>(std::find(bank.names.begin(), bank.names.end(), c.name) - bank.names.begin());
    }
    EXPECT_NEAR(c.contribution, params.decision.weight(j, r.predicted) * s[j], 1e-12);
    EXPECT_NEAR(c.display_score, c.unknown ? s[j] : sigmoid(s[j]), 1e-15);
  }
  for (std::size_t i = 1; i < r.contributions.size(); ++i)
    EXPECT_GE(std::abs(r.contributions[i - 1].contribution), std::abs(r.contributions[i].contribution));
}

TEST_F(Explain, ContributionsSumToLogitMinusBias) {
  const auto r = explain(x, params, bank, ConceptTask::classification, classes, bank.names);
  double sum = 0.0;
  for (const auto& c : r.contributions) sum += c.contribution;
  EXPECT_NEAR(sum, r.logits[r.predicted] - r.bias, 1e-9);
}

TEST_F(Explain, ZeroWeightColumnGivesZeroContributions) {
  const auto t = diagnose(x, params, bank);
  for (std::size_t j = 0; j < params.decision.weight.rows(); ++j) params.decision.weight(j, t.predicted()) = 0.0;
  // Keep the same predicted class by making its bias dominant.
  params.decision.bias(0, t.predicted()) = 1e3;
  const auto r = explain(x, params, bank, ConceptTask::classification, classes, bank.names);
  for (const auto& c : r.contributions) EXPECT_EQ(c.contribution, 0.0);
}

TEST_F(Explain, DoublingAScoreDoublesItsContribution) {
  const auto t = diagnose(x, params, bank);
  ForwardTrace t2 = t;
  t2.known_scores[1] *= 2.0;
  const auto r1 = explain_trace(t, params, ConceptTask::classification, classes, bank.names);
  const auto r2 = explain_trace(t2, params, ConceptTask::classification, classes, bank.names);
  auto find = [&](const ExplanationReport& r) -> double {
    for (const auto& c : r.contributions)
      if (c.name == bank.names[1]) return c.contribution;
    return NAN;
  };
  EXPECT_NEAR(find(r2), 2.0 * find(r1), 1e-15);
}

TEST_F(Explain, RegressionDisplayIsRaw) {
  const auto r = explain(x, params, bank, ConceptTask::regression, classes, bank.names);
  for (const auto& c : r.contributions) EXPECT_EQ(c.display_score, c.score);
}
