#include <gtest/gtest.h>

#include <cmath>

#include "insectup/screening.hpp"
#include "insectup/stub_backend.hpp"
#include "support/fixtures.hpp"

namespace insectup {
namespace {

std::optional<HashMatch> linear_scan(PerceptualHash h,
                                     const std::vector<std::pair<PerceptualHash, std::string>>& all,
                                     int d_max) {
  std::optional<HashMatch> best;
  for (const auto& [stored, id] : all) {  // insertion order: first hit wins ties
    int d = std::popcount(h.bits ^ stored.bits);
    if (d <= d_max && (!best || d < best->distance)) best = HashMatch{id, d};
  }
  return best;
}

PerceptualHash flip_bits(PerceptualHash h, testing::Rng& rng, int count) {
  std::set<int> chosen;
  while (static_cast<int>(chosen.size()) < count) chosen.insert(static_cast<int>(rng() % 64));
  for (int b : chosen) h.bits ^= 1ull << b;
  return h;
}

TEST(PerceptualHash, ConstantImageHashesToZero) {
  EXPECT_EQ(perceptual_hash(testing::solid_image(37, 23, 120, 50, 200)).bits, 0u);
  EXPECT_EQ(perceptual_hash(testing::solid_image(1, 1, 255, 255, 255)).hex(), "0000000000000000");
}

TEST(PerceptualHash, DeterministicOnCopies) {
  testing::Rng rng(1);
  auto img = testing::noise_image(rng, 64, 48);
  auto copy = img;
  EXPECT_EQ(perceptual_hash(img), perceptual_hash(copy));
}

TEST(PerceptualHash, UniformBrightnessShiftCancels) {
  // rising ramp hashes to all zeros, its mirror image to all ones
  auto img = testing::gradient_image(90, 80, 200);
  Image mirrored(img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) mirrored.at(x, y, c) = img.at(img.width - 1 - x, y, c);
  for (const auto* base : {&img, &mirrored}) {
    auto shifted = *base;
    for (auto& p : shifted.pixels) p = static_cast<std::uint8_t>(p + 10);
    EXPECT_EQ(hamming(perceptual_hash(*base), perceptual_hash(shifted)), 0);
  }
  EXPECT_EQ(perceptual_hash(mirrored).bits, ~0ull);
  EXPECT_EQ(perceptual_hash(img).bits, 0ull);
}

TEST(PerceptualHash, HexRoundTrip) {
  testing::Rng rng(2);
  for (int i = 0; i < 100; ++i) {
    PerceptualHash h{rng()};
    EXPECT_EQ(PerceptualHash::from_hex(h.hex()), h);
  }
  EXPECT_THROW(PerceptualHash::from_hex("xyz"), Error);
}

TEST(PerceptualHash, BitLayoutFollowsRasterOrder) {
  // Only the first row has a falling edge between columns 0 and 1 of the grid.
  Image img = testing::solid_image(9, 8, 0, 0, 0);
  img.at(0, 0, 0) = img.at(0, 0, 1) = img.at(0, 0, 2) = 255;
  auto h = perceptual_hash(img);
  EXPECT_TRUE(h.bit(0));
  EXPECT_EQ(std::popcount(h.bits), 1);
  EXPECT_EQ(h.hex(), "8000000000000000");
}

TEST(Hamming, IsAMetric) {
  testing::Rng rng(3);
  for (int i = 0; i < 2000; ++i) {
    PerceptualHash a{rng()}, b{rng()}, c{rng()};
    EXPECT_EQ(hamming(a, b), hamming(b, a));
    EXPECT_EQ(hamming(a, a), 0);
    if (a != b) EXPECT_GT(hamming(a, b), 0);
    EXPECT_LE(hamming(a, c), hamming(a, b) + hamming(b, c));
  }
}

TEST(DuplicateCheck, ExactAndBoundaryCases) {
  HashIndex index;
  testing::Rng rng(4);
  PerceptualHash h{rng()};
  index.insert(h, "o1");
  EXPECT_EQ(duplicate_check(h, index, 8), (HashMatch{"o1", 0}));
  EXPECT_EQ(duplicate_check(flip_bits(h, rng, 8), index, 8)->distance, 8);
  EXPECT_EQ(duplicate_check(flip_bits(h, rng, 9), index, 8), std::nullopt);
}

TEST(DuplicateCheck, TiesGoToTheEarliestEntry) {
  HashIndex index;
  index.insert({0b0001}, "first");
  index.insert({0b0010}, "second");
  EXPECT_EQ(duplicate_check({0}, index, 8)->observation_id, "first");
}

TEST(DuplicateCheck, AgreesWithLinearScanOnFuzzedIndexes) {
  testing::Rng rng(5);
  for (int round = 0; round < 20; ++round) {
    HashIndex index;
    std::vector<std::pair<PerceptualHash, std::string>> all;
    std::vector<PerceptualHash> seeds;
    for (int i = 0; i < 1000; ++i) {
      PerceptualHash h{rng()};
      // cluster some entries so near matches and ties exist
      if (!seeds.empty() && rng() % 3 == 0) {
        h = flip_bits(seeds[rng() % seeds.size()], rng, static_cast<int>(rng() % 10));
      } else {
        seeds.push_back(h);
      }
      auto id = "o" + std::to_string(i);
      index.insert(h, id);
      all.emplace_back(h, id);
    }
    for (int q = 0; q < 300; ++q) {
      PerceptualHash probe = flip_bits(all[rng() % all.size()].first, rng, static_cast<int>(rng() % 14));
      if (q % 5 == 0) probe = PerceptualHash{rng()};
      for (int d_max : {0, 4, 8, 12}) {
        ASSERT_EQ(duplicate_check(probe, index, d_max), linear_scan(probe, all, d_max));
      }
    }
  }
}

TEST(DuplicateCheck, ErasedEntriesNoLongerMatch) {
  HashIndex index;
  index.insert({42}, "a");
  index.erase("a");
  EXPECT_EQ(duplicate_check({42}, index, 8), std::nullopt);
  EXPECT_EQ(index.size(), 0u);
}

TEST(Blocklist, ParsesHashesAndComments) {
  auto hashes = parse_blocklist("# known web images\n00000000000000ff\n\n  ffffffffffffffff  # stock photo\n");
  ASSERT_EQ(hashes.size(), 2u);
  EXPECT_EQ(hashes[0].bits, 0xffu);
  EXPECT_EQ(hashes[1].bits, ~0ull);
  EXPECT_THROW(parse_blocklist("123\n"), Error);
}

class Gate : public ::testing::Test {
 protected:
  Taxonomy t = Taxonomy::load(testing::spipoll_scale_rows());
  ProbabilityVector from(std::vector<double> v) { return ProbabilityVector::from_ordered(t, v); }
};

TEST_F(Gate, OneHotIsAccepted) {
  std::vector<double> v(403, 0.0);
  v[7] = 1.0;
  auto g = insect_presence_gate(from(v), 0.05);
  EXPECT_TRUE(g.accept);
  EXPECT_EQ(g.entropy, 0.0);
  EXPECT_EQ(g.max_prob, 1.0);
}

TEST_F(Gate, UniformIsFlagged) {
  auto g = insect_presence_gate(from(std::vector<double>(403, 1.0 / 403)), 0.05);
  EXPECT_FALSE(g.accept);
  EXPECT_NEAR(g.max_prob, 0.00248, 1e-5);
  EXPECT_NEAR(g.entropy, std::log(403.0), 1e-9);  // closed form for the uniform distribution
  EXPECT_GT(g.entropy, 0.9 * std::log(403.0));
}

TEST_F(Gate, ConfidentTopSpeciesIsAcceptedWhateverTheEntropy) {
  std::vector<double> v(403, 0.9 / 402);
  v[0] = 0.10;
  auto g = insect_presence_gate(from(v), 0.05);
  EXPECT_GT(g.entropy, 0.9 * std::log(403.0));
  EXPECT_TRUE(g.accept);
}

TEST_F(Gate, ScreenOrdersDuplicateBeforeGate) {
  HashIndex index;
  ScreeningConfig cfg;
  testing::Rng rng(6);
  auto img = testing::noise_image(rng, 40, 40);
  std::vector<double> hot(403, 0.0);
  hot[0] = 1.0;
  auto first = screen(img, from(hot), index, cfg, "o1");
  EXPECT_EQ(first.status, ScreeningStatus::Accepted);
  EXPECT_EQ(index.size(), 1u);

  auto uniform = from(std::vector<double>(403, 1.0 / 403));
  auto dup = screen(img, uniform, index, cfg, "o2");
  EXPECT_EQ(dup.status, ScreeningStatus::FlaggedDuplicate);
  EXPECT_EQ(dup.matched_observation_id, "o1");

  auto other = testing::noise_image(rng, 40, 40);
  auto no_insect = screen(other, uniform, index, cfg, "o3");
  EXPECT_EQ(no_insect.status, ScreeningStatus::FlaggedNoInsect);
  EXPECT_EQ(index.size(), 1u);  // flagged images never become anchors
  EXPECT_EQ(duplicate_check(perceptual_hash(other), index, 8), std::nullopt);
}

TEST_F(Gate, ScreenIsDeterministic) {
  testing::Rng rng(9);
  auto img = testing::noise_image(rng, 33, 21);
  auto p = from(testing::random_simplex(rng, 403));
  HashIndex a, b;
  EXPECT_EQ(screen(img, p, a, {}, "x"), screen(img, p, b, {}, "x"));
}

}  // namespace
}  // namespace insectup
