#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "rfnet/common.hpp"

namespace rfnet {

using TokenSeq = std::vector<std::string>;
using RefSet = std::vector<TokenSeq>;

namespace detail {

// n-grams as joined strings; '\x1f' cannot appear in normalized tokens, so
// keys of different lengths never collide.
inline std::string ngram_key(const TokenSeq& toks, std::size_t start, std::size_t n) {
  std::string key = toks[start];
  for (std::size_t i = 1; i < n; ++i) {
    key.push_back('\x1f');
    key += toks[start + i];
  }
  return key;
}

inline std::unordered_map<std::string, std::uint64_t> ngram_counts(const TokenSeq& toks,
                                                                   std::size_t n) {
  std::unordered_map<std::string, std::uint64_t> counts;
  if (toks.size() >= n)
    for (std::size_t i = 0; i + n <= toks.size(); ++i) ++counts[ngram_key(toks, i, n)];
  return counts;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Corpus-level BLEU-1..4: clipped modified n-gram precision pooled over all
// candidates, geometric mean over orders, brevity penalty from the closest
// reference length (length ties resolve to the shorter reference). No
// smoothing: a zero pooled precision at any order zeroes that BLEU.
// ---------------------------------------------------------------------------

inline std::array<double, 4> bleu_corpus(const std::vector<TokenSeq>& cands,
                                         const std::vector<RefSet>& refs) {
  if (cands.size() != refs.size())
    throw ValueError("bleu_corpus: " + std::to_string(cands.size()) + " candidates vs " +
                     std::to_string(refs.size()) + " reference sets");
  if (cands.empty()) throw ValueError("bleu_corpus: empty corpus");

  std::array<std::uint64_t, 4> clipped{}, total{};
  std::uint64_t cand_len = 0, eff_ref_len = 0;

  for (std::size_t i = 0; i < cands.size(); ++i) {
    const TokenSeq& c = cands[i];
    if (refs[i].empty()) throw ValueError("bleu_corpus: empty reference set");
    cand_len += c.size();

    // Closest reference length; ties go to the shorter reference.
    std::size_t best = refs[i][0].size();
    for (const auto& r : refs[i]) {
      auto dist = [&](std::size_t L) {
        return L > c.size() ? L - c.size() : c.size() - L;
      };
      if (dist(r.size()) < dist(best) || (dist(r.size()) == dist(best) && r.size() < best))
        best = r.size();
    }
    eff_ref_len += best;

    for (std::size_t n = 1; n <= 4; ++n) {
      auto cc = detail::ngram_counts(c, n);
      std::unordered_map<std::string, std::uint64_t> max_ref;
      for (const auto& r : refs[i])
        for (const auto& [g, cnt] : detail::ngram_counts(r, n)) {
          auto& m = max_ref[g];
          if (cnt > m) m = cnt;
        }
      for (const auto& [g, cnt] : cc) {
        total[n - 1] += cnt;
        auto it = max_ref.find(g);
        if (it != max_ref.end()) clipped[n - 1] += std::min(cnt, it->second);
      }
    }
  }

  double bp = 1.0;
  if (cand_len == 0)
    bp = 0.0;
  else if (cand_len < eff_ref_len)
    bp = std::exp(1.0 - static_cast<double>(eff_ref_len) / static_cast<double>(cand_len));

  std::array<double, 4> out{};
  for (std::size_t k = 1; k <= 4; ++k) {
    double log_sum = 0.0;
    bool zero = false;
    for (std::size_t n = 1; n <= k; ++n) {
      if (total[n - 1] == 0 || clipped[n - 1] == 0) {
        zero = true;
        break;
      }
      log_sum += std::log(static_cast<double>(clipped[n - 1]) /
                          static_cast<double>(total[n - 1]));
    }
    out[k - 1] = zero ? 0.0 : bp * std::exp(log_sum / static_cast<double>(k));
  }
  return out;
}

// Single-pair convenience wrapper.
inline std::array<double, 4> bleu_sentence(const TokenSeq& cand, const RefSet& refs) {
  return bleu_corpus({cand}, {refs});
}

// ---------------------------------------------------------------------------
// CIDEr-D. Document frequencies come from the reference corpus handed to the
// constructor: df(g) = number of images whose reference set contains g at
// least once; idf(g) = log(N) - log(max(1, df(g))). A candidate/reference
// pair is scored per n-gram order as the clipped tf-idf similarity
//   min(h, r)·r / (|h|·|r|)
// damped by a Gaussian length penalty exp(-(len_c - len_r)^2 / (2 sigma^2)),
// then averaged over orders 1..4 and over the references, and scaled by 10.
// ---------------------------------------------------------------------------

class CiderD {
 public:
  explicit CiderD(const std::vector<RefSet>& corpus_refs, double sigma = 6.0)
      : sigma_(sigma), log_n_(std::log(static_cast<double>(corpus_refs.size()))) {
    if (corpus_refs.empty()) throw ValueError("CiderD: empty reference corpus");
    for (const auto& refs : corpus_refs) {
      std::unordered_map<std::string, bool> seen;
      for (const auto& r : refs)
        for (std::size_t n = 1; n <= 4; ++n)
          for (const auto& [g, cnt] : detail::ngram_counts(r, n)) seen[g] = true;
      for (const auto& [g, _] : seen) ++df_[g];
    }
  }

  double idf(const std::string& gram) const {
    auto it = df_.find(gram);
    double df = it == df_.end() ? 0.0 : static_cast<double>(it->second);
    return log_n_ - std::log(std::max(1.0, df));
  }

  // Score one candidate against its reference set.
  double score(const TokenSeq& cand, const RefSet& refs) const {
    if (refs.empty()) throw ValueError("CiderD::score: empty reference set");
    Vec hv = vectorize(cand);
    double total = 0.0;
    for (const auto& r : refs) total += sim(hv, vectorize(r), cand.size(), r.size());
    return 10.0 * total / static_cast<double>(refs.size());
  }

  // Mean score over a corpus of candidates.
  double score_corpus(const std::vector<TokenSeq>& cands,
                      const std::vector<RefSet>& refs) const {
    if (cands.size() != refs.size() || cands.empty())
      throw ValueError("CiderD::score_corpus: size mismatch or empty");
    double s = 0.0;
    for (std::size_t i = 0; i < cands.size(); ++i) s += score(cands[i], refs[i]);
    return s / static_cast<double>(cands.size());
  }

 private:
  struct Vec {
    std::array<std::unordered_map<std::string, double>, 4> w;  // tf·idf per order
    std::array<double, 4> norm{};                              // L2 norms
  };

  Vec vectorize(const TokenSeq& toks) const {
    Vec v;
    for (std::size_t n = 1; n <= 4; ++n) {
      double sq = 0.0;
      for (const auto& [g, cnt] : detail::ngram_counts(toks, n)) {
        double x = static_cast<double>(cnt) * idf(g);
        v.w[n - 1][g] = x;
        sq += x * x;
      }
      v.norm[n - 1] = std::sqrt(sq);
    }
    return v;
  }

  double sim(const Vec& h, const Vec& r, std::size_t len_h, std::size_t len_r) const {
    double delta = static_cast<double>(len_h) - static_cast<double>(len_r);
    double penalty = std::exp(-(delta * delta) / (2.0 * sigma_ * sigma_));
    double acc = 0.0;
    for (std::size_t n = 0; n < 4; ++n) {
      double val = 0.0;
      for (const auto& [g, hw] : h.w[n]) {
        auto it = r.w[n].find(g);
        if (it != r.w[n].end()) val += std::min(hw, it->second) * it->second;
      }
      if (h.norm[n] != 0.0 && r.norm[n] != 0.0) val /= h.norm[n] * r.norm[n];
      acc += val * penalty;
    }
    return acc / 4.0;
  }

  std::unordered_map<std::string, std::uint64_t> df_;
  double sigma_;
  double log_n_;
};

}  // namespace rfnet
