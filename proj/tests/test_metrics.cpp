// Caption metrics: corpus BLEU and CIDEr-D, cross-checked against frozen
// hand-derived values and an independent brute-force scorer.

#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "rfnet/metrics.hpp"
#include "rfnet/random.hpp"

using namespace rfnet;

namespace {

TokenSeq toks(const std::string& s) {
  TokenSeq out;
  std::string cur;
  for (char c : s) {
    if (c == ' ') {
      if (!cur.empty()) out.push_back(cur), cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// BLEU
// ---------------------------------------------------------------------------

TEST(Bleu, IdentityIsOne) {
  TokenSeq c = toks("a red circle sits left");
  auto b = bleu_sentence(c, {c});
  for (double v : b) EXPECT_NEAR(v, 1.0, 1e-12);
}

TEST(Bleu, ClippedUnigramPrecision) {
  // Degenerate candidate: clipped count of "the" is 2, candidate length 7,
  // and the candidate is longer than the reference so BP = 1.
  auto b = bleu_sentence(toks("the the the the the the the"),
                         {toks("the cat is on the mat")});
  EXPECT_NEAR(b[0], 2.0 / 7.0, 1e-12);
  EXPECT_NEAR(b[1], 0.0, 1e-12);  // no matching bigram
}

TEST(Bleu, BrevityPenaltyAndMissingOrders) {
  // "the cat" vs a 6-token reference: perfect 1/2-gram precision, BP=e^{1-3}.
  auto b = bleu_sentence(toks("the cat"), {toks("the cat is on the mat")});
  EXPECT_NEAR(b[0], std::exp(-2.0), 1e-12);
  EXPECT_NEAR(b[1], std::exp(-2.0), 1e-12);
  EXPECT_DOUBLE_EQ(b[2], 0.0);  // candidate has no trigram
  EXPECT_DOUBLE_EQ(b[3], 0.0);
}

TEST(Bleu, PerfectPrefixCandidate) {
  // All precisions 1, reference one token longer: BLEU-k = exp(1 - 5/4).
  auto b = bleu_sentence(toks("a b c d"), {toks("a b c d e")});
  for (double v : b) EXPECT_NEAR(v, std::exp(1.0 - 5.0 / 4.0), 1e-12);
}

TEST(Bleu, ClosestRefLengthTieGoesShorter) {
  // Candidate length 5; references of lengths 4 and 6 are equally close, so
  // the effective reference length is 4 and BP = 1.
  TokenSeq cand = toks("a b c d e");
  RefSet refs = {toks("a b c d"), toks("a b c d x y")};
  auto b1 = bleu_corpus({cand}, {refs});
  RefSet rev = {refs[1], refs[0]};
  auto b2 = bleu_corpus({cand}, {rev});
  EXPECT_NEAR(b1[0], 4.0 / 5.0, 1e-12);  // p1 = 4/5 and BP = 1 (r = 4, not 6)
  EXPECT_DOUBLE_EQ(b1[0], b2[0]);  // order of refs must not matter

  // With only the longer reference the BP kicks in.
  auto b3 = bleu_sentence(cand, {toks("a b c d x y")});
  EXPECT_NEAR(b3[0], std::exp(1.0 - 6.0 / 5.0) * (4.0 / 5.0), 1e-12);
}

TEST(Bleu, CorpusPoolingNotAveraging) {
  // Pooled counts: p1 = (2+1)/4, p2 = (1+0)/2 -> BLEU-2 = sqrt(3/8).
  std::vector<TokenSeq> cands = {toks("a b"), toks("c d")};
  std::vector<RefSet> refs = {{toks("a b")}, {toks("c x")}};
  auto b = bleu_corpus(cands, refs);
  EXPECT_NEAR(b[0], 0.75, 1e-12);
  EXPECT_NEAR(b[1], std::sqrt(3.0 / 8.0), 1e-12);
}

TEST(Bleu, Errors) {
  EXPECT_THROW(bleu_corpus({}, {}), ValueError);
  EXPECT_THROW(bleu_corpus({toks("a")}, {{}}), ValueError);
  EXPECT_THROW(bleu_corpus({toks("a"), toks("b")}, {{toks("a")}}), ValueError);
}

// ---------------------------------------------------------------------------
// CIDEr-D: frozen cases
// ---------------------------------------------------------------------------

namespace {

// Five images with globally disjoint vocabularies; every n-gram has df=1.
std::vector<RefSet> disjoint_corpus() {
  std::vector<RefSet> corpus;
  const char* caps[5] = {"a b c d e", "f g h i j", "k l m n o", "p q r s t",
                         "u v w x y"};
  for (const char* c : caps) corpus.push_back({toks(c)});
  return corpus;
}

}  // namespace

TEST(Cider, IdentityIsTen) {
  auto corpus = disjoint_corpus();
  CiderD scorer(corpus);
  for (const auto& refs : corpus)
    EXPECT_NEAR(scorer.score(refs[0], refs), 10.0, 1e-9);
}

TEST(Cider, DisjointCandidateIsZero) {
  auto corpus = disjoint_corpus();
  CiderD scorer(corpus);
  EXPECT_DOUBLE_EQ(scorer.score(toks("z z z z z"), corpus[0]), 0.0);
}

TEST(Cider, IdfValues) {
  // "a" appears in 1 of 5 images; a gram present everywhere has idf 0.
  std::vector<RefSet> corpus = disjoint_corpus();
  for (auto& refs : corpus) refs[0].push_back("shared");
  CiderD scorer(corpus);
  EXPECT_NEAR(scorer.idf("a"), std::log(5.0), 1e-12);
  EXPECT_NEAR(scorer.idf("shared"), 0.0, 1e-12);
  EXPECT_NEAR(scorer.idf("absent"), std::log(5.0), 1e-12);  // df clamped to 1
}

TEST(Cider, LengthPenaltyGaussian) {
  // Candidate = reference plus trailing repeats of an out-of-corpus token:
  // unigram cosine shrinks and every order gets the Gaussian damp.
  auto corpus = disjoint_corpus();
  CiderD scorer(corpus);
  TokenSeq cand = toks("a b c d e z z z");
  double got = scorer.score(cand, corpus[0]);
  double lo = scorer.score(toks("a b c d e"), corpus[0]);
  EXPECT_LT(got, lo);
  EXPECT_GT(got, 0.0);
}

TEST(Cider, EmptyCandidateScoresZero) {
  auto corpus = disjoint_corpus();
  CiderD scorer(corpus);
  EXPECT_DOUBLE_EQ(scorer.score({}, corpus[0]), 0.0);
}

// The brute-force oracle (deliberately different implementation: vector-keyed
// ordered maps, df recomputed by scanning the corpus per query) lives in
// oracles.hpp so other suites can cross-check against it too.

TEST(Cider, MatchesBruteForceOracleOnRandomCorpora) {
  Rng rng(777);
  const char* words[8] = {"a", "b", "c", "d", "e", "f", "g", "h"};
  for (int corpus_i = 0; corpus_i < 20; ++corpus_i) {
    std::size_t n_images = 3 + rng.uniform_int(5);
    std::vector<RefSet> corpus;
    for (std::size_t i = 0; i < n_images; ++i) {
      RefSet refs;
      std::size_t n_refs = 2 + rng.uniform_int(2);
      for (std::size_t r = 0; r < n_refs; ++r) {
        TokenSeq t;
        std::size_t len = 1 + rng.uniform_int(9);
        for (std::size_t k = 0; k < len; ++k) t.push_back(words[rng.uniform_int(8)]);
        refs.push_back(t);
      }
      corpus.push_back(refs);
    }
    CiderD scorer(corpus);
    for (std::size_t i = 0; i < n_images; ++i) {
      TokenSeq cand;
      std::size_t len = rng.uniform_int(10);  // includes empty candidates
      for (std::size_t k = 0; k < len; ++k) cand.push_back(words[rng.uniform_int(8)]);
      double got = scorer.score(cand, corpus[i]);
      double want = oracle::cider_d(corpus, cand, corpus[i]);
      EXPECT_NEAR(got, want, 1e-9) << "corpus " << corpus_i << " image " << i;
    }
  }
}

TEST(Cider, CorpusMeanAndErrors) {
  auto corpus = disjoint_corpus();
  CiderD scorer(corpus);
  std::vector<TokenSeq> cands = {corpus[0][0], toks("z z z z")};
  std::vector<RefSet> refs = {corpus[0], corpus[1]};
  double m = scorer.score_corpus(cands, refs);
  EXPECT_NEAR(m, (10.0 + 0.0) / 2.0, 1e-9);
  EXPECT_THROW(CiderD({}), ValueError);
  EXPECT_THROW(scorer.score(toks("a"), {}), ValueError);
  EXPECT_THROW(scorer.score_corpus({}, {}), ValueError);
}
