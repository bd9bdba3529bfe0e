#include "kbvqa/textrank.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "test_support.hpp"

using namespace kbvqa;
using namespace kbvqa::textrank;
using kbvqa::test::TableEmbedder;

namespace {

EmbeddingVector vec(std::vector<double> v) { return EmbeddingVector(std::move(v)); }

// Unit vector in the (e0, e_axis) plane with cosine `c` against e0.
std::vector<double> at_cosine(double c, std::size_t axis, std::size_t dim = 8) {
  std::vector<double> v(dim, 0.0);
  v[0] = c;
  v[axis] = std::sqrt(1.0 - c * c);
  return v;
}

std::vector<double> e0(std::size_t dim = 8) {
  std::vector<double> v(dim, 0.0);
  v[0] = 1.0;
  return v;
}

}  // namespace

TEST(Cosine, HandComputedValue) {
  const double expected = 32.0 / (std::sqrt(14.0) * std::sqrt(77.0));
  EXPECT_NEAR(cosine(vec({1, 2, 3, 0}), vec({4, 5, 6, 0})), expected, 1e-9);
  EXPECT_NEAR(expected, 0.9746318461970762, 1e-12);
}

TEST(Cosine, SelfOrthogonalAndZero) {
  EXPECT_DOUBLE_EQ(cosine(vec({0.3, -2, 5}), vec({0.3, -2, 5})), 1.0);
  EXPECT_EQ(cosine(vec({1, 0, 0}), vec({0, 1, 0})), 0.0);
  EXPECT_EQ(cosine(vec({0, 0, 0}), vec({1, 2, 3})), 0.0);
}

TEST(Cosine, DimensionMismatchThrows) {
  EXPECT_THROW(cosine(vec({1, 2}), vec({1, 2, 3})), std::invalid_argument);
}

TEST(Cosine, SymmetricScaleInvariantBounded) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> scale(0.01, 100.0);
  for (int i = 0; i < 500; ++i) {
    std::vector<double> a(16), b(16);
    for (auto& x : a) x = n(rng);
    for (auto& x : b) x = n(rng);
    const double c = cosine(vec(a), vec(b));
    ASSERT_LE(std::abs(c), 1.0);
    ASSERT_EQ(c, cosine(vec(b), vec(a)));
    const double s = scale(rng);
    std::vector<double> sa = a;
    for (auto& x : sa) x *= s;
    ASSERT_NEAR(cosine(vec(sa), vec(b)), c, 1e-12);
  }
}

TEST(NormalizeTokens, LowercasesAndStripsPunctuation) {
  EXPECT_EQ(normalize_tokens("What's  the DOG doing?"), (std::vector<std::string>{"whats", "the", "dog", "doing"}));
  EXPECT_TRUE(normalize_tokens("").empty());
}

TEST(NgramCandidates, DogDoingExample) {
  const auto c = ngram_candidates("What is the dog doing?", 2);
  auto has = [&](const std::string& p) { return std::find(c.begin(), c.end(), p) != c.end(); };
  EXPECT_TRUE(has("dog"));
  EXPECT_TRUE(has("dog doing"));
  EXPECT_FALSE(has("the"));
  EXPECT_FALSE(has("is the"));
}

TEST(NgramCandidates, TrivialCases) {
  EXPECT_TRUE(ngram_candidates("", 2).empty());
  EXPECT_EQ(ngram_candidates("elephants?", 2), (std::vector<std::string>{"elephants"}));
  EXPECT_THROW(ngram_candidates("dog", 0), std::invalid_argument);
}

TEST(NgramCandidates, DeduplicatesKeepingFirst) {
  const auto c = ngram_candidates("dog dog cat", 1);
  EXPECT_EQ(c, (std::vector<std::string>{"dog", "cat"}));
}

TEST(NgramCandidates, ContiguousAndBounded) {
  const std::vector<std::string> questions = {
      "Which number birthday is probably being celebrated?", "What is the man by the bags awaiting?",
      "How many animal trunks are visible in this picture?", "Why might someone keep this white substance near cupcakes?"};
  for (const auto& q : questions) {
    const auto tokens = normalize_tokens(q);
    std::string joined;
    for (const auto& t : tokens) joined += " " + t;
    joined += " ";
    for (int n = 1; n <= 3; ++n) {
      const auto c = ngram_candidates(q, n);
      EXPECT_LE(c.size(), static_cast<std::size_t>(n) * tokens.size());
      for (const auto& p : c) EXPECT_NE(joined.find(" " + p + " "), std::string::npos) << p;
    }
  }
}

TEST(StopWords, ParseSkipsCommentsAndBlanks) {
  const auto sw = StopWords::parse("# comment\nthe\n\n  a  \n");
  EXPECT_TRUE(sw.contains("the"));
  EXPECT_TRUE(sw.contains("a"));
  EXPECT_FALSE(sw.contains("# comment"));
  EXPECT_EQ(sw.size(), 2u);
  EXPECT_TRUE(StopWords::builtin().contains("which"));
  EXPECT_FALSE(StopWords::builtin().contains("birthday"));
}

TEST(ExtractKeywords, StrictlyAboveThreshold) {
  const StopWords none;
  const std::string q = "alpha beta gamma";
  TableEmbedder emb({{q, e0()},
                     {"alpha", at_cosine(0.9, 1)},
                     {"beta", at_cosine(0.41, 2)},
                     {"gamma", {2, 0, 0, 4, 2, 1, 0, 0}}},  // norm 5: cosine exactly 0.4
                    8);
  const auto kw = extract_keywords(q, emb, 0.4, 1, none);
  ASSERT_EQ(kw.size(), 2u);
  EXPECT_EQ(kw[0].phrase, "alpha");
  EXPECT_EQ(kw[1].phrase, "beta");
  EXPECT_GT(kw[1].score, 0.4);
  EXPECT_EQ(emb.calls(), 1);
}

TEST(ExtractKeywords, FallbackIsArgmax) {
  const StopWords none;
  const std::string q = "alpha beta gamma";
  TableEmbedder emb({{q, e0()},
                     {"alpha", at_cosine(0.1, 1)},
                     {"beta", at_cosine(0.3, 2)},
                     {"gamma", at_cosine(0.3, 3)}},
                    8);
  const auto kw = extract_keywords(q, emb, 0.4, 1, none);
  ASSERT_EQ(kw.size(), 1u);
  EXPECT_EQ(kw[0].phrase, "beta");  // first of the tied best
}

TEST(ExtractKeywords, NoCandidatesNoCall) {
  TableEmbedder emb({}, 8);
  EXPECT_TRUE(extract_keywords("", emb, 0.4, 2).empty());
  EXPECT_TRUE(extract_keywords("what is the", emb, 0.4, 2).empty());
  EXPECT_EQ(emb.calls(), 0);
}

TEST(ExtractKeywords, SortedAndAboveThresholdOnRandomFixtures) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const StopWords none;
  const std::vector<std::string> words = {"a1", "b2", "c3", "d4", "e5", "f6"};
  for (int trial = 0; trial < 200; ++trial) {
    std::string q;
    std::map<std::string, std::vector<double>> table;
    std::vector<double> scores;
    for (std::size_t i = 0; i < words.size(); ++i) {
      q += (i ? " " : "") + words[i];
      const double c = u(rng);
      scores.push_back(c);
      table[words[i]] = at_cosine(c, i + 1);
    }
    table[q] = e0();
    TableEmbedder emb(table, 8);
    const auto kw = extract_keywords(q, emb, 0.4, 1, none);
    ASSERT_FALSE(kw.empty());
    const bool any_pass = std::any_of(scores.begin(), scores.end(), [](double s) { return s > 0.4; });
    if (any_pass) {
      for (const auto& k : kw) ASSERT_GT(k.score, 0.4);
    } else {
      ASSERT_EQ(kw.size(), 1u);
      ASSERT_NEAR(kw[0].score, *std::max_element(scores.begin(), scores.end()), 1e-12);
    }
    for (std::size_t i = 1; i < kw.size(); ++i) ASSERT_GE(kw[i - 1].score, kw[i].score);
  }
}

TEST(GroundingPrompt, Format) {
  EXPECT_EQ(build_grounding_prompt(std::vector<Keyword>{{"number birthday", 0.8}}), "number birthday .");
  EXPECT_EQ(build_grounding_prompt(std::vector<Keyword>{{"white substance", 0.7}, {"cupcakes", 0.6}}),
            "white substance . cupcakes .");
  EXPECT_EQ(build_grounding_prompt({}), "");
}

namespace {

struct RankFixture {
  std::vector<Caption> captions;
  std::map<std::string, std::vector<double>> table;
  std::vector<double> scores;
};

// Scores drawn from a small grid so ties are frequent.
RankFixture make_rank_fixture(std::mt19937_64& rng, std::size_t n) {
  std::uniform_int_distribution<int> grid(-4, 4);
  RankFixture f;
  f.table["query"] = e0(n + 2);
  for (std::size_t i = 0; i < n; ++i) {
    const double c = grid(rng) / 4.0;
    const std::string text = "caption " + std::to_string(i);
    f.captions.push_back({text, "gen", static_cast<int>(i % 3), std::nullopt});
    f.table[text] = at_cosine(c, i + 1, n + 2);
    f.scores.push_back(c);
  }
  return f;
}

}  // namespace

TEST(RankCaptions, SpecExample) {
  const std::vector<double> s = {0.2, 0.9, 0.5, 0.9};
  std::map<std::string, std::vector<double>> table{{"query", e0()}};
  std::vector<Caption> caps;
  for (std::size_t i = 0; i < s.size(); ++i) {
    caps.push_back({"c" + std::to_string(i), "gen", std::nullopt, std::nullopt});
    table["c" + std::to_string(i)] = at_cosine(s[i], i + 1);
  }
  TableEmbedder emb(table, 8);
  const auto top = rank_captions("query", caps, emb, 3);
  ASSERT_EQ(top.size(), 3u);
  EXPECT_EQ(top[0].text, "c1");
  EXPECT_EQ(top[1].text, "c3");
  EXPECT_EQ(top[2].text, "c2");
  EXPECT_NEAR(*top[0].score, 0.9, 1e-12);
}

TEST(RankCaptions, KZeroAndClamp) {
  std::mt19937_64 rng(1);
  auto f = make_rank_fixture(rng, 3);
  TableEmbedder emb(f.table, 5);
  EXPECT_TRUE(rank_captions("query", f.captions, emb, 0).empty());
  EXPECT_EQ(emb.calls(), 0);
  EXPECT_EQ(rank_captions("query", f.captions, emb, 5).size(), 3u);
}

TEST(RankCaptions, MatchesStableArgsortOracle) {
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int> size(0, 12), kdist(0, 14);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto f = make_rank_fixture(rng, static_cast<std::size_t>(size(rng)));
    const auto k = static_cast<std::size_t>(kdist(rng));
    TableEmbedder emb(f.table, f.captions.size() + 2);
    const auto got = rank_captions("query", f.captions, emb, k);
    const auto want = kbvqa::test::ref_top_k(f.scores, k);
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      ASSERT_EQ(got[i].text, f.captions[want[i]].text) << "trial " << trial;
      ASSERT_TRUE(got[i].score.has_value());
      ASSERT_NEAR(*got[i].score, f.scores[want[i]], 1e-12);
      if (i > 0) ASSERT_GE(*got[i - 1].score, *got[i].score);
    }
  }
}
