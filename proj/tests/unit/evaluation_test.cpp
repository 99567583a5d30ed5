#include <gtest/gtest.h>

#include "insectup/evaluation.hpp"
#include "insectup/stub_backend.hpp"
#include "support/fixtures.hpp"

namespace insectup {
namespace {

std::vector<double> one_hot(const Taxonomy& t, const std::string& id) {
  std::vector<double> v(t.species().size(), 0.0);
  auto ids = t.species_ids();
  v[std::find(ids.begin(), ids.end(), id) - ids.begin()] = 1.0;
  return v;
}

std::vector<LabeledImage> labeled(const Taxonomy& t, std::size_t n, testing::Rng& rng) {
  auto ids = t.species_ids();
  std::vector<LabeledImage> items;
  for (std::size_t i = 0; i < n; ++i) {
    items.push_back({testing::solid_image(4, 4, 1, 1, 1), "item" + std::to_string(i),
                     ids[testing::uniform(rng, 0, ids.size() - 1)]});
  }
  return items;
}

TEST(Evaluation, TruthOracleScoresPerfectly) {
  auto t = Taxonomy::load(testing::spipoll_scale_rows());
  testing::Rng rng(1);
  auto items = labeled(t, 50, rng);
  StubBackend stub(t, {});
  for (const auto& it : items) stub.set(it.content_digest, one_hot(t, it.species_id));
  for (std::size_t k : {1u, 3u, 5u}) EXPECT_EQ(evaluate_topk(stub, items, t, k), 1.0);
}

TEST(Evaluation, ConstructedFixtureHits84Of100) {
  auto t = Taxonomy::load(testing::spipoll_scale_rows());
  testing::Rng rng(2);
  auto items = labeled(t, 100, rng);
  auto ids = t.species_ids();
  StubBackend stub(t, {});
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& truth = items[i].species_id;
    std::string wrong = truth == ids[0] ? ids[1] : ids[0];
    stub.set(items[i].content_digest, one_hot(t, i < 84 ? truth : wrong));
  }
  EXPECT_EQ(evaluate_topk(stub, items, t, 1), 0.84);
  auto report = evaluate(stub, items, t, RankThresholds{}, 3);
  EXPECT_EQ(report.topk[0], 0.84);
  EXPECT_EQ(report.items, 100u);
}

TEST(Evaluation, FixedWrongAnswerScoresZero) {
  auto t = Taxonomy::load(testing::spipoll_scale_rows());
  testing::Rng rng(3);
  auto items = labeled(t, 40, rng);
  for (auto& it : items) it.species_id = "s001";
  StubBackend stub(t, {}, one_hot(t, "s000"));
  EXPECT_EQ(evaluate_topk(stub, items, t, 1), 0.0);
  EXPECT_EQ(evaluate_topk(stub, items, t, 2), 1.0);  // s001 ranks right after s000 on ties
}

TEST(Evaluation, EmptySetAndBadLabelsAreErrors) {
  auto t = Taxonomy::load(testing::three_species_rows());
  StubBackend stub(t, {}, std::vector<double>{1, 0, 0});
  std::vector<LabeledImage> none;
  try {
    evaluate_topk(stub, none, t, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyDataset);
  }
  std::vector<LabeledImage> genus{{testing::solid_image(2, 2, 0, 0, 0), "x", "G1"}};
  EXPECT_THROW(evaluate_topk(stub, genus, t, 1), Error);
}

TEST(Evaluation, HierarchicalAccuracyNeverTrailsTop1WhenTopSpeciesHoldsMajority) {
  testing::Rng rng(8);
  for (int iter = 0; iter < 60; ++iter) {
    auto t = Taxonomy::load(testing::random_taxonomy_rows(rng, 50));
    auto items = labeled(t, 30, rng);
    StubBackend stub(t, {});
    for (const auto& it : items) {
      auto v = testing::random_simplex(rng, t.species().size());
      auto top = std::max_element(v.begin(), v.end()) - v.begin();
      for (auto& x : v) x *= 0.5;
      v[top] += 0.5;
      stub.set(it.content_digest, v);
    }
    std::uniform_real_distribution<double> u(0.05, 1.0);
    RankThresholds tau{u(rng), u(rng), u(rng), u(rng)};
    auto r = evaluate(stub, items, t, tau, 1);
    EXPECT_GE(r.hierarchical_accuracy, r.topk[0]);
    std::size_t chosen = 0;
    for (const auto& tally : r.per_rank) chosen += tally.chosen;
    EXPECT_EQ(chosen, items.size());
  }
}

// The inequality above is an aggregate observation, not a per-item law: when
// the top species sits outside the heaviest genus, the greedy answer misses it.
TEST(Evaluation, TopSpeciesOutsideDominantGenusIsMissedHierarchically) {
  auto t = Taxonomy::load(testing::three_species_rows());  // G1={s1,s2}, G2={s3}
  std::vector<LabeledImage> items{{testing::solid_image(2, 2, 0, 0, 0), "d", "s3"}};
  StubBackend stub(t, {{"d", {0.3, 0.3, 0.4}}});
  auto r = evaluate(stub, items, t, RankThresholds::uniform(0.5), 1);
  EXPECT_EQ(r.topk[0], 1.0);
  EXPECT_EQ(r.hierarchical_accuracy, 0.0);
}

TEST(Evaluation, MajorityTopSpeciesAlwaysLiesOnTheGreedyPath) {
  testing::Rng rng(31);
  for (int iter = 0; iter < 300; ++iter) {
    auto t = Taxonomy::load(testing::random_taxonomy_rows(rng, 40));
    auto v = testing::random_simplex(rng, t.species().size());
    auto top = std::max_element(v.begin(), v.end()) - v.begin();
    for (auto& x : v) x *= 0.4;
    v[top] += 0.6;  // top species now holds at least 0.6
    auto p = ProbabilityVector::from_ordered(t, v);
    std::uniform_real_distribution<double> u(0.05, 1.0);
    auto r = classify_hierarchical(rollup(p, t), t, {u(rng), u(rng), u(rng), u(rng)});
    EXPECT_TRUE(t.is_ancestor_or_self(r.chosen, t.species_ids()[top]));
  }
}

}  // namespace
}  // namespace insectup
