#include <gtest/gtest.h>

#include <cmath>

#include "insectup/classifier.hpp"
#include "insectup/stub_backend.hpp"
#include "support/fixtures.hpp"

namespace insectup {
namespace {

ProbabilityVector pv(std::initializer_list<std::pair<const std::string, double>> init) {
  return ProbabilityVector{std::map<std::string, double>(init)};
}

class ThreeSpecies : public ::testing::Test {
 protected:
  std::vector<TaxonRow> rows = testing::three_species_rows();
  Taxonomy t = Taxonomy::load(rows);
  ProbabilityVector p = pv({{"s1", 0.4}, {"s2", 0.35}, {"s3", 0.25}});
};

TEST_F(ThreeSpecies, RollupSumsLeafMass) {
  auto m = rollup(p, t);
  // expected values come from the brute-force leaf scan
  auto oracle = testing::brute_rollup(testing::RawTree(rows), p.entries);
  EXPECT_NEAR(oracle["G1"], 0.75, 1e-15);
  EXPECT_NEAR(oracle["G2"], 0.25, 1e-15);
  EXPECT_NEAR(oracle["F"], 1.0, 1e-15);
  for (const auto& [id, v] : oracle) EXPECT_NEAR(m.at(t, id), v, 1e-12) << id;
  EXPECT_NEAR(m.at(t, "ROOT"), 1.0, 1e-12);
}

TEST_F(ThreeSpecies, FallsBackToGenusWhenSpeciesIsUnsure) {
  auto r = classify_hierarchical(rollup(p, t), t, RankThresholds::uniform(0.7));
  EXPECT_EQ(r.chosen, "G1");
  EXPECT_EQ(r.chosen_rank, Rank::Genus);
  EXPECT_NEAR(r.confidence, 0.75, 1e-12);
  ASSERT_EQ(r.path.size(), 4u);
  EXPECT_EQ(r.path[0].taxon_id, "ROOT");
  EXPECT_EQ(r.path[3].taxon_id, "G1");
}

TEST_F(ThreeSpecies, LowThresholdReachesSpecies) {
  auto r = classify_hierarchical(rollup(p, t), t, RankThresholds::uniform(0.3));
  EXPECT_EQ(r.chosen, "s1");
  EXPECT_EQ(r.chosen_rank, Rank::Species);
  EXPECT_DOUBLE_EQ(r.confidence, 0.4);
}

TEST(Classifier, SingleSpeciesGenusPassesMassThrough) {
  auto rows = testing::numbered({testing::row("O", "ROOT", "order"), testing::row("F", "O", "family"),
                                 testing::row("G", "F", "genus"), testing::row("H", "F", "genus"),
                                 testing::row("a", "G", "species"), testing::row("b", "H", "species"),
                                 testing::row("c", "H", "species")});
  auto t = Taxonomy::load(rows);
  auto m = rollup(pv({{"a", 0.3}, {"b", 0.3}, {"c", 0.4}}), t);
  EXPECT_DOUBLE_EQ(m.at(t, "G"), 0.3);
}

TEST(Classifier, NoConfidentOrderMeansRoot) {
  auto rows = testing::numbered(
      {testing::row("O1", "ROOT", "order"), testing::row("O2", "ROOT", "order"),
       testing::row("F1", "O1", "family"), testing::row("F2", "O2", "family"),
       testing::row("G1", "F1", "genus"), testing::row("G2", "F2", "genus"),
       testing::row("a", "G1", "species"), testing::row("b", "G2", "species")});
  auto t = Taxonomy::load(rows);
  auto r = classify_hierarchical(rollup(pv({{"a", 0.5}, {"b", 0.5}}), t), t, RankThresholds{});
  EXPECT_EQ(r.chosen, "ROOT");
  EXPECT_EQ(r.chosen_rank, Rank::Root);
  EXPECT_DOUBLE_EQ(r.confidence, 1.0);
  EXPECT_EQ(r.path.size(), 1u);
}

TEST(Classifier, TiesGoToTheSmallerTaxonId) {
  auto t = Taxonomy::load(testing::three_species_rows());
  auto r = classify_hierarchical(rollup(pv({{"s1", 0.5}, {"s2", 0.5}, {"s3", 0.0}}), t), t,
                                 RankThresholds::uniform(0.5));
  EXPECT_EQ(r.chosen, "s1");
}

TEST(Classifier, RollupRejectsForeignKeys) {
  auto t = Taxonomy::load(testing::three_species_rows());
  EXPECT_THROW(rollup(pv({{"s1", 0.5}, {"s2", 0.5}}), t), Error);
  try {
    rollup(pv({{"s1", 0.5}, {"s2", 0.25}, {"zz", 0.25}}), t);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::KeyMismatch);
  }
  try {
    validate(pv({{"s1", 0.5}, {"s2", 0.25}, {"s3", 0.5}}), t);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidProbabilities);
  }
}

TEST(Classifier, ConservationAndMonotonicityFuzz) {
  testing::Rng rng(1234);
  for (int iter = 0; iter < 200; ++iter) {
    auto rows = testing::random_taxonomy_rows(rng, 403);
    auto t = Taxonomy::load(rows);
    auto p = ProbabilityVector::from_ordered(t, testing::random_simplex(rng, t.species().size()));
    auto m = rollup(p, t);
    EXPECT_NEAR(m.at(Taxonomy::kRoot), 1.0, 1e-6);
    for (Taxonomy::Index i = 0; i < t.size(); ++i) {
      if (t.children(i).empty()) {
        EXPECT_EQ(m.at(i), p[t.id(i)]);
        continue;
      }
      double s = 0;
      for (auto c : t.children(i)) {
        s += m.at(c);
        EXPECT_GE(m.at(i), m.at(c));
      }
      EXPECT_NEAR(m.at(i), s, 1e-9);
    }
  }
}

TEST(Classifier, GreedyMatchesPathEnumeration) {
  testing::Rng rng(99);
  for (int iter = 0; iter < 500; ++iter) {
    auto rows = testing::random_taxonomy_rows(rng, 12);
    auto t = Taxonomy::load(rows);
    testing::RawTree raw(rows);
    // coarse dyadic grid so ties and exact-threshold hits actually occur
    auto p = ProbabilityVector::from_ordered(t, testing::dyadic_simplex(rng, t.species().size(), 16));
    RankThresholds tau{0.0625 * static_cast<double>(testing::uniform(rng, 1, 16)),
                       0.0625 * static_cast<double>(testing::uniform(rng, 1, 16)),
                       0.0625 * static_cast<double>(testing::uniform(rng, 1, 16)),
                       0.0625 * static_cast<double>(testing::uniform(rng, 1, 16))};
    auto got = classify_hierarchical(rollup(p, t), t, tau);
    auto conf = testing::brute_rollup(raw, p.entries);
    auto want = testing::brute_greedy(raw, conf, [&](Rank r) { return tau.at(r); });
    ASSERT_EQ(got.chosen, want.chosen) << "iteration " << iter;
    ASSERT_EQ(got.path.size(), want.path.size());
    for (std::size_t i = 0; i < want.path.size(); ++i) {
      EXPECT_EQ(got.path[i].taxon_id, want.path[i]);
      EXPECT_EQ(got.path[i].confidence, conf[want.path[i]]);
      if (i) EXPECT_LE(got.path[i].confidence, got.path[i - 1].confidence);
    }
    EXPECT_EQ(got.confidence, conf[want.chosen]);
    if (!got.is_root()) EXPECT_GE(got.confidence, tau.at(got.chosen_rank));
  }
}

TEST(Classifier, LoweringThresholdsNeverMakesTheAnswerShallower) {
  testing::Rng rng(7);
  for (int iter = 0; iter < 300; ++iter) {
    auto t = Taxonomy::load(testing::random_taxonomy_rows(rng, 40));
    auto m = rollup(ProbabilityVector::from_ordered(t, testing::random_simplex(rng, t.species().size())), t);
    std::uniform_real_distribution<double> u(0.01, 1.0);
    RankThresholds hi{u(rng), u(rng), u(rng), u(rng)};
    RankThresholds lo{hi.species * u(rng), hi.genus * u(rng), hi.family * u(rng), hi.order * u(rng)};
    auto a = classify_hierarchical(m, t, hi);
    auto b = classify_hierarchical(m, t, lo);
    EXPECT_GE(ordinal(b.chosen_rank), ordinal(a.chosen_rank));
    EXPECT_TRUE(t.is_ancestor_or_self(a.chosen, b.chosen));
  }
}

TEST(Classifier, OrderPreservingRelabelPermutesTheResult) {
  testing::Rng rng(21);
  for (int iter = 0; iter < 100; ++iter) {
    auto rows = testing::random_taxonomy_rows(rng, 30);
    auto relabeled = rows;
    auto rename = [](const std::string& id) { return id == "ROOT" ? id : "x_" + id; };
    for (auto& r : relabeled) {
      r.taxon_id = rename(r.taxon_id);
      r.parent_id = rename(r.parent_id);
    }
    auto t = Taxonomy::load(rows);
    auto t2 = Taxonomy::load(relabeled);
    auto values = testing::dyadic_simplex(rng, t.species().size(), 8);
    auto a = classify_hierarchical(rollup(ProbabilityVector::from_ordered(t, values), t), t,
                                   RankThresholds::uniform(0.5));
    auto b = classify_hierarchical(rollup(ProbabilityVector::from_ordered(t2, values), t2), t2,
                                   RankThresholds::uniform(0.5));
    EXPECT_EQ(rename(a.chosen), b.chosen);
    EXPECT_EQ(a.confidence, b.confidence);
  }
}

// Reference bilinear resize written directly from the sampling definition.
Image reference_resize(const Image& src, int w, int h) {
  Image out(w, h);
  for (int y = 0; y < h; ++y) {
    double sy = std::clamp((y + 0.5) * src.height / h - 0.5, 0.0, src.height - 1.0);
    int y0 = static_cast<int>(sy), y1 = std::min(y0 + 1, src.height - 1);
    double fy = sy - y0;
    for (int x = 0; x < w; ++x) {
      double sx = std::clamp((x + 0.5) * src.width / w - 0.5, 0.0, src.width - 1.0);
      int x0 = static_cast<int>(sx), x1 = std::min(x0 + 1, src.width - 1);
      double fx = sx - x0;
      for (int c = 0; c < 3; ++c) {
        double v = (1 - fy) * ((1 - fx) * src.at(x0, y0, c) + fx * src.at(x1, y0, c)) +
                   fy * ((1 - fx) * src.at(x0, y1, c) + fx * src.at(x1, y1, c));
        out.at(x, y, c) = static_cast<std::uint8_t>(std::lround(v));
      }
    }
  }
  return out;
}

TEST(Preprocess, LandscapeIsCroppedAroundTheCenter) {
  auto w = center_square(640, 480);
  EXPECT_EQ(w.x, 80);
  EXPECT_EQ(w.y, 0);
  EXPECT_EQ(w.side, 480);
  testing::Rng rng(3);
  auto img = testing::noise_image(rng, 640, 480);
  auto out = preprocess(img);
  ASSERT_EQ(out.width, 224);
  ASSERT_EQ(out.height, 224);
  Image cropped(480, 480);
  for (int y = 0; y < 480; ++y)
    for (int x = 0; x < 480; ++x)
      for (int c = 0; c < 3; ++c) cropped.at(x, y, c) = img.at(x + 80, y, c);
  auto ref = reference_resize(cropped, 224, 224);
  int worst = 0;
  for (std::size_t i = 0; i < ref.pixels.size(); ++i) {
    worst = std::max(worst, std::abs(int(ref.pixels[i]) - int(out.pixels[i])));
  }
  EXPECT_LE(worst, 1);  // rounding at exact .5 may differ by one level
}

TEST(Preprocess, ModelSizedInputIsUntouched) {
  testing::Rng rng(4);
  auto img = testing::noise_image(rng, 224, 224);
  EXPECT_EQ(preprocess(img), img);
  EXPECT_EQ(preprocess(preprocess(img)), preprocess(img));
}

TEST(Preprocess, OddRemainderRoundsOffsetDown) {
  auto w = center_square(225, 224);
  EXPECT_EQ(w.x, 0);
  EXPECT_EQ(w.side, 224);
  testing::Rng rng(5);
  auto img = testing::noise_image(rng, 225, 224);
  auto out = preprocess(img);
  for (int y = 0; y < 224; ++y)
    for (int x = 0; x < 224; ++x)
      for (int c = 0; c < 3; ++c) ASSERT_EQ(out.at(x, y, c), img.at(x, y, c));
}

TEST(Preprocess, EmptyImageIsAnError) {
  try {
    preprocess(Image{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyImage);
  }
}

TEST(ClassifyImage, OneHotStubPicksTheSpecies) {
  auto t = Taxonomy::load(testing::three_species_rows());
  StubBackend stub(t, {{"d1", {1.0, 0.0, 0.0}}});
  auto out = classify_image(testing::solid_image(10, 10, 1, 2, 3), "d1", stub, t, RankThresholds{});
  EXPECT_EQ(out.result.chosen, "s1");
  EXPECT_DOUBLE_EQ(out.result.confidence, 1.0);
  EXPECT_EQ(out.probabilities["s1"], 1.0);
}

TEST(ClassifyImage, UniformOverTheFullFixtureStaysAtRoot) {
  auto t = Taxonomy::load(testing::spipoll_scale_rows());
  std::vector<double> uniform(403, 1.0 / 403);
  StubBackend stub(t, {}, uniform);
  auto out = classify_image(testing::solid_image(8, 8, 0, 0, 0), "any", stub, t, RankThresholds{});
  // oracle: node mass = leaf count / 403; the largest order holds 103 leaves
  std::size_t biggest = 0;
  for (auto o : t.children(Taxonomy::kRoot)) biggest = std::max(biggest, t.leaves_under(o).size());
  EXPECT_EQ(biggest, 103u);
  EXPECT_LT(103.0 / 403.0, 0.7);
  EXPECT_EQ(out.result.chosen, "ROOT");
}

TEST(ClassifyImage, ComposesPriorStages) {
  auto t = Taxonomy::load(testing::three_species_rows());
  StubBackend stub(t, {{"d", {0.4, 0.35, 0.25}}});
  auto out = classify_image(testing::solid_image(3, 5, 9, 9, 9), "d", stub, t,
                            RankThresholds::uniform(0.7));
  EXPECT_EQ(out.result.chosen, "G1");
  EXPECT_NEAR(out.result.confidence, 0.75, 1e-12);
}

TEST(ClassifyImage, MissingFixtureEntryIsBackendUnavailable) {
  auto t = Taxonomy::load(testing::three_species_rows());
  StubBackend stub(t, {});
  try {
    classify_image(testing::solid_image(3, 3, 0, 0, 0), "nope", stub, t, RankThresholds{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::BackendUnavailable);
  }
}

}  // namespace
}  // namespace insectup
