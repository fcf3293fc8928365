#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include "rfnet/cells.hpp"
#include "rfnet/common.hpp"
#include "rfnet/corpus.hpp"
#include "rfnet/metrics.hpp"
#include "rfnet/random.hpp"
#include "rfnet/rfnet.hpp"
#include "rfnet/tensor.hpp"
#include "rfnet/vocab.hpp"

namespace rfnet {

// Decoding output. `tokens` holds the emitted ids with the start/end markers
// stripped; `log_prob` is the total log-probability of the emitted tokens,
// including the end marker's when the decode terminated by emitting it.
struct DecodeResult {
  std::vector<std::size_t> tokens;
  double log_prob = 0.0;
  bool ended = false;
};

// Per-step argmax with ties broken toward the lowest id; stops at the end
// marker or after max_len steps.
inline DecodeResult greedy_decode(RFNetModel& model, const std::vector<Tensor>& views,
                                  std::size_t max_len) {
  if (max_len == 0) throw ValueError("greedy_decode: max_len must be at least 1");
  Tape tape;
  tape.set_recording(false);
  Rng rng(0);  // evaluation mode draws nothing
  FusionResult fusion = model.run_fusion(tape, views, /*training=*/false, rng);
  LstmState st = fusion.dec_init;
  std::size_t prev = RFNetModel::kStartId;
  DecodeResult out;
  for (std::size_t t = 0; t < max_len; ++t) {
    auto step = model.decoder_step(tape, st, fusion.dec_annotations, prev,
                                   /*training=*/false, rng);
    Tensor ls = log_softmax(tape, step.logits);
    std::size_t best = 0;
    for (std::size_t v = 1; v < ls.size(); ++v)
      if (ls.at(v) > ls.at(best)) best = v;
    out.log_prob += ls.at(best);
    st = step.state;
    if (best == RFNetModel::kEndId) {
      out.ended = true;
      break;
    }
    out.tokens.push_back(best);
    prev = best;
  }
  return out;
}

// One partial or finished decode inside the beam. The log-probability can
// only decrease as tokens append, and a finished hypothesis is never expanded
// again.
template <typename State>
struct BeamHypothesis {
  std::vector<std::size_t> tokens;
  double log_prob = 0.0;
  State state{};
  bool finished = false;
};

// Length-unnormalized beam search over an abstract step function
//   step(state, prev_token) -> pair<State, vector<double> of log-probs>,
// generic so tests can drive it with hand-built distributions. Each step
// ranks every expansion of every live hypothesis by total log-probability
// (ties: live index, then token id) and keeps the best beam_k. Hypotheses
// that emit end_id retire to the finished pool with that step's
// log-probability included; live hypotheses that survive to max_len join the
// pool as they are. The pool is returned sorted by total log-probability,
// ties broken by token-id lexicographic order.
template <typename State, typename StepFn>
std::vector<BeamHypothesis<State>> beam_search_core(const State& init, StepFn&& step,
                                                    std::size_t beam_k,
                                                    std::size_t max_len,
                                                    std::size_t start_id,
                                                    std::size_t end_id) {
  if (beam_k == 0) throw ValueError("beam_search: beam_k must be at least 1");
  if (max_len == 0) throw ValueError("beam_search: max_len must be at least 1");
  using Hyp = BeamHypothesis<State>;
  std::vector<Hyp> live = {Hyp{{}, 0.0, init, false}};
  std::vector<Hyp> finished;

  struct Candidate {
    double log_prob;
    std::size_t live_index;
    std::size_t token;
  };

  for (std::size_t t = 0; t < max_len && !live.empty(); ++t) {
    std::vector<State> next_states(live.size());
    std::vector<Candidate> cands;
    for (std::size_t i = 0; i < live.size(); ++i) {
      std::size_t prev = live[i].tokens.empty() ? start_id : live[i].tokens.back();
      auto [state, lp] = step(live[i].state, prev);
      next_states[i] = std::move(state);
      for (std::size_t v = 0; v < lp.size(); ++v)
        cands.push_back({live[i].log_prob + lp[v], i, v});
    }
    std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
      if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
      if (a.live_index != b.live_index) return a.live_index < b.live_index;
      return a.token < b.token;
    });
    if (cands.size() > beam_k) cands.resize(beam_k);

    std::vector<Hyp> next_live;
    for (const Candidate& c : cands) {
      Hyp h = live[c.live_index];
      h.log_prob = c.log_prob;
      h.state = next_states[c.live_index];
      if (c.token == end_id) {
        h.finished = true;
        finished.push_back(std::move(h));
      } else {
        h.tokens.push_back(c.token);
        next_live.push_back(std::move(h));
      }
    }
    live = std::move(next_live);
  }
  // Hypotheses cut off by max_len compete with their accumulated score.
  for (Hyp& h : live) finished.push_back(std::move(h));
  std::sort(finished.begin(), finished.end(), [](const Hyp& a, const Hyp& b) {
    if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
    return std::lexicographical_compare(a.tokens.begin(), a.tokens.end(),
                                        b.tokens.begin(), b.tokens.end());
  });
  return finished;
}

// Beam search over the model's decoder. Returns the ranked hypothesis list;
// the front entry is the top caption.
inline std::vector<DecodeResult> beam_search(RFNetModel& model,
                                             const std::vector<Tensor>& views,
                                             std::size_t beam_k, std::size_t max_len) {
  Tape tape;
  tape.set_recording(false);
  Rng rng(0);
  FusionResult fusion = model.run_fusion(tape, views, /*training=*/false, rng);
  auto step = [&](const LstmState& st,
                  std::size_t prev) -> std::pair<LstmState, std::vector<double>> {
    auto s = model.decoder_step(tape, st, fusion.dec_annotations, prev,
                                /*training=*/false, rng);
    Tensor ls = log_softmax(tape, s.logits);
    return {s.state, ls.values()};
  };
  auto pool = beam_search_core<LstmState>(fusion.dec_init, step, beam_k, max_len,
                                          RFNetModel::kStartId, RFNetModel::kEndId);
  std::vector<DecodeResult> out;
  out.reserve(pool.size());
  for (auto& h : pool) out.push_back({std::move(h.tokens), h.log_prob, h.finished});
  return out;
}

// Multinomial decode at temperature 1 for policy-gradient training. Runs on
// the caller's recording tape (the caller also ran the fusion pass on it, in
// training mode), and returns the recorded sum of the sampled tokens'
// log-probabilities — including the end marker's when one terminates the
// sample — so a scalar loss built on it backpropagates into the model.
struct SampleDecode {
  std::vector<std::size_t> tokens;
  Tensor sum_log_prob;  // scalar on the tape
  bool ended = false;
};

inline SampleDecode sample_decode(RFNetModel& model, Tape& tape,
                                  const FusionResult& fusion, std::size_t max_len,
                                  Rng& rng) {
  if (max_len == 0) throw ValueError("sample_decode: max_len must be at least 1");
  LstmState st = fusion.dec_init;
  std::size_t prev = RFNetModel::kStartId;
  SampleDecode out;
  bool first = true;
  for (std::size_t t = 0; t < max_len; ++t) {
    auto step = model.decoder_step(tape, st, fusion.dec_annotations, prev,
                                   /*training=*/true, rng);
    Tensor ls = log_softmax(tape, step.logits);
    std::vector<double> probs(ls.size());
    for (std::size_t v = 0; v < ls.size(); ++v) probs[v] = std::exp(ls.at(v));
    std::size_t tok = rng.categorical(probs);
    Tensor lp = pick(tape, ls, tok);
    out.sum_log_prob = first ? lp : add(tape, out.sum_log_prob, lp);
    first = false;
    st = step.state;
    if (tok == RFNetModel::kEndId) {
      out.ended = true;
      break;
    }
    out.tokens.push_back(tok);
    prev = tok;
  }
  return out;
}

// --- split evaluation --------------------------------------------------------

// Decodes one caption per scene (greedy for beam_k <= 1, else the beam's top
// hypothesis) and maps ids back to token strings.
inline std::vector<std::vector<std::string>> decode_split(
    RFNetModel& model, const Vocabulary& vocab, const std::vector<Scene>& scenes,
    std::size_t beam_k, std::size_t max_len) {
  std::vector<std::vector<std::string>> out;
  out.reserve(scenes.size());
  for (const Scene& s : scenes) {
    std::vector<std::size_t> ids =
        beam_k <= 1 ? greedy_decode(model, s.views, max_len).tokens
                    : beam_search(model, s.views, beam_k, max_len).front().tokens;
    out.push_back(vocab.decode(ids));
  }
  return out;
}

struct EvalReport {
  std::array<double, 4> bleu{};  // corpus BLEU-1..4
  double cider = 0.0;
  std::size_t examples = 0;
};

// Corpus metrics of the model's decodes against each scene's reference
// captions. The document-frequency table comes from the caller (conventionally
// built over the training references).
inline EvalReport evaluate_split(RFNetModel& model, const Vocabulary& vocab,
                                 const std::vector<Scene>& scenes, const CiderD& cider,
                                 std::size_t beam_k, std::size_t max_len) {
  if (scenes.empty()) throw ValueError("evaluate_split: empty scene list");
  auto cands = decode_split(model, vocab, scenes, beam_k, max_len);
  std::vector<RefSet> refs;
  refs.reserve(scenes.size());
  for (const Scene& s : scenes) refs.push_back(s.captions);
  EvalReport r;
  r.bleu = bleu_corpus(cands, refs);
  r.cider = cider.score_corpus(cands, refs);
  r.examples = scenes.size();
  return r;
}

}  // namespace rfnet
