#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "rfnet/common.hpp"
#include "rfnet/corpus.hpp"
#include "rfnet/inference.hpp"
#include "rfnet/metrics.hpp"
#include "rfnet/optim.hpp"
#include "rfnet/random.hpp"
#include "rfnet/rfnet.hpp"
#include "rfnet/vocab.hpp"

namespace rfnet {

struct TrainConfig {
  double lr_xe = 5e-4;            // base cross-entropy learning rate
  double lr_decay = 0.8;          // multiplicative decay factor
  std::size_t lr_decay_every = 3; // epochs between decays
  double lr_rl = 5e-5;            // fixed fine-tuning learning rate
  std::size_t batch_size = 10;
  std::size_t max_epochs = 25;
  std::size_t patience = 10;      // epochs without val improvement (XE)
  std::size_t rl_patience = 5;    // same, for fine-tuning
  double clip_norm = 5.0;         // global-norm clip; <= 0 disables
  std::uint64_t seed = 1;
  std::size_t eval_max_len = 16;  // decode cap for validation scoring
  bool use_scheduled_sampling = true;
  bool include_disc = true;       // false removes the discriminative branch

  void validate() const {
    if (lr_xe <= 0 || lr_rl <= 0) throw ConfigError("learning rates must be positive");
    if (lr_decay <= 0 || lr_decay > 1) throw ConfigError("lr_decay must be in (0,1]");
    if (lr_decay_every == 0) throw ConfigError("lr_decay_every must be positive");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (patience == 0 || rl_patience == 0) throw ConfigError("patience must be at least 1");
    if (max_epochs == 0) throw ConfigError("max_epochs must be positive");
    if (eval_max_len == 0) throw ConfigError("eval_max_len must be positive");
  }
};

// Probability of feeding the model's own sample instead of the gold token.
// min(0.25, epoch/100); pure and non-decreasing.
inline double ss_probability(std::size_t epoch) {
  return std::min(0.25, static_cast<double>(epoch) / 100.0);
}

// Base rate decayed by a factor every few epochs. The decay is applied as an
// iterated product (not a pow call) so the values land exactly on the decimal
// sequence 5e-4, 4e-4, 3.2e-4, ... that repeated multiplication produces.
inline double lr_at(std::size_t epoch, const TrainConfig& cfg) {
  double lr = cfg.lr_xe;
  for (std::size_t i = 0; i < epoch / cfg.lr_decay_every; ++i) lr *= cfg.lr_decay;
  return lr;
}

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double ss_prob = 0.0;
  double train_loss = 0.0;
  double val_cider = 0.0;
  double seconds = 0.0;
};

using TrainingLog = std::vector<EpochRecord>;

inline std::string log_header() { return "epoch\tlr\tss_prob\ttrain_loss\tval_cider\tseconds"; }

inline std::string log_line(const EpochRecord& r) {
  std::ostringstream ss;
  ss.precision(12);
  ss << r.epoch << '\t' << r.lr << '\t' << r.ss_prob << '\t' << r.train_loss << '\t'
     << r.val_cider << '\t' << r.seconds;
  return ss.str();
}

// Complete in-memory training state: parameters, optimizer moments, rng
// position. `epoch` counts completed epochs, so resuming passes it straight
// back as start_epoch.
struct Snapshot {
  std::vector<std::vector<double>> params;
  std::vector<std::vector<double>> m, v;
  std::uint64_t adam_step = 0;
  std::uint64_t rng_seed = 0, rng_counter = 0;
  std::uint64_t epoch = 0;
  double val_cider = 0.0;
  bool valid = false;
};

inline Snapshot take_snapshot(const RFNetModel& model, const Adam& adam, const Rng& rng,
                              std::uint64_t completed_epochs, double val_cider) {
  Snapshot s;
  const auto& ps = adam.params();
  Adam& a = const_cast<Adam&>(adam);  // moment accessors are non-const
  for (std::size_t i = 0; i < ps.size(); ++i) {
    s.params.push_back(ps[i].values());
    s.m.push_back(a.moment1(i));
    s.v.push_back(a.moment2(i));
  }
  (void)model;
  s.adam_step = adam.step_count();
  s.rng_seed = rng.seed();
  s.rng_counter = rng.counter();
  s.epoch = completed_epochs;
  s.val_cider = val_cider;
  s.valid = true;
  return s;
}

inline void restore_snapshot(const Snapshot& s, RFNetModel& model, Adam& adam, Rng& rng) {
  if (!s.valid) throw ValueError("restore_snapshot: empty snapshot");
  auto ps = model.params();
  if (ps.size() != s.params.size())
    throw ValueError("restore_snapshot: parameter count mismatch");
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (ps[i].size() != s.params[i].size())
      throw ValueError("restore_snapshot: parameter size mismatch");
    for (std::size_t k = 0; k < ps[i].size(); ++k) ps[i].at(k) = s.params[i][k];
    adam.moment1(i) = s.m[i];
    adam.moment2(i) = s.v[i];
  }
  adam.set_step_count(s.adam_step);
  rng = Rng(s.rng_seed, s.rng_counter);
}

// Indices into the frequent-word set whose word occurs in the caption — the
// positive labels for the discriminative margin loss.
inline std::vector<std::size_t> disc_positives(const std::vector<std::size_t>& caption_ids,
                                               const std::vector<std::size_t>& freq_ids) {
  std::vector<std::size_t> pos;
  for (std::size_t i = 0; i < freq_ids.size(); ++i)
    if (std::find(caption_ids.begin(), caption_ids.end(), freq_ids[i]) !=
        caption_ids.end())
      pos.push_back(i);
  return pos;
}

struct TrainResult {
  TrainingLog log;
  Snapshot best;  // highest validation score seen
  Snapshot last;  // state at loop exit
};

// Optional per-batch observer (epoch index, batch index, per-example loss).
using BatchObserver = std::function<void(std::size_t, std::size_t, const LossResult&)>;

namespace detail {

inline double elapsed_seconds(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline std::vector<RefSet> split_refs(const std::vector<Scene>& scenes) {
  std::vector<RefSet> refs;
  refs.reserve(scenes.size());
  for (const auto& s : scenes) refs.push_back(s.captions);
  return refs;
}

inline double val_greedy_cider(RFNetModel& model, const Vocabulary& vocab,
                               const std::vector<Scene>& val, const CiderD& cider,
                               const std::vector<RefSet>& val_refs, std::size_t max_len) {
  auto cands = decode_split(model, vocab, val, /*beam_k=*/1, max_len);
  return cider.score_corpus(cands, val_refs);
}

}  // namespace detail

// Cross-entropy training: epochs of shuffled mini-batches, per-batch Adam
// step at the scheduled rate, greedy validation scoring after each epoch,
// early stopping on the validation score. Returns the log plus best and last
// states; the model is left at the last state. start_epoch continues the
// schedule of a resumed run.
inline TrainResult train_xe(RFNetModel& model, Adam& adam, Rng& rng, const Dataset& ds,
                            const Vocabulary& vocab, const TrainConfig& cfg,
                            std::size_t start_epoch = 0,
                            const BatchObserver& on_batch = nullptr) {
  cfg.validate();
  if (ds.train.empty()) throw ValueError("train_xe: empty training split");
  if (ds.val.empty()) throw ValueError("train_xe: empty validation split");

  auto freq_ids = vocab.frequent_word_set(model.config().freq_words);
  struct Example {
    std::size_t scene;
    std::vector<std::size_t> ids;
    std::vector<std::size_t> positives;
  };
  std::vector<Example> examples;
  for (std::size_t i = 0; i < ds.train.size(); ++i)
    for (const auto& cap : ds.train[i].captions) {
      Example ex;
      ex.scene = i;
      ex.ids = vocab.encode(cap);
      ex.positives = disc_positives(ex.ids, freq_ids);
      examples.push_back(std::move(ex));
    }

  CiderD cider(detail::split_refs(ds.train));
  auto val_refs = detail::split_refs(ds.val);

  TrainResult res;
  double best = -1e300;
  std::size_t since_best = 0;
  std::size_t last_epoch = start_epoch;
  double last_val = 0.0;

  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0u);

  for (std::size_t epoch = start_epoch; epoch < cfg.max_epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    double lr = lr_at(epoch, cfg);
    double ss = cfg.use_scheduled_sampling ? ss_probability(epoch) : 0.0;
    rng.shuffle(order);

    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t lo = 0, batch = 0; lo < order.size(); lo += cfg.batch_size, ++batch) {
      std::size_t hi = std::min(lo + cfg.batch_size, order.size());
      model.zero_grad();
      for (std::size_t k = lo; k < hi; ++k) {
        const Example& ex = examples[order[k]];
        Tape tape;
        LossOptions opt;
        opt.ss_prob = ss;
        opt.training = true;
        opt.include_disc = cfg.include_disc;
        opt.positives = ex.positives;
        LossResult lres = model.loss(tape, ds.train[ex.scene].views, ex.ids, opt, rng);
        double value = lres.total.at(0);
        if (!std::isfinite(value))
          throw ValueError("non-finite loss at epoch " + std::to_string(epoch) +
                           " batch " + std::to_string(batch));
        loss_sum += value;
        ++seen;
        if (on_batch) on_batch(epoch, batch, lres);
        Tensor scaled = scale(tape, lres.total, 1.0 / static_cast<double>(hi - lo));
        tape.backward(scaled);
      }
      auto params = model.params();
      if (cfg.clip_norm > 0) clip_global_norm(params, cfg.clip_norm);
      adam.step(lr);
    }

    double val = detail::val_greedy_cider(model, vocab, ds.val, cider, val_refs,
                                          cfg.eval_max_len);
    res.log.push_back({epoch, lr, ss, loss_sum / static_cast<double>(seen), val,
                       detail::elapsed_seconds(t0)});
    last_epoch = epoch + 1;
    last_val = val;

    if (val > best) {
      best = val;
      since_best = 0;
      res.best = take_snapshot(model, adam, rng, epoch + 1, val);
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  res.last = take_snapshot(model, adam, rng, last_epoch, last_val);
  return res;
}

// Self-critical fine-tuning. Per scene: draw one multinomial sample (training
// mode, so dropout is live) and a greedy baseline (evaluation mode); the
// reward is the consensus-score difference sample minus baseline, and the
// surrogate loss is -reward times the sample's summed log-probability. No
// scheduled sampling, label smoothing, or discriminative supervision; the
// learning rate stays fixed. max_updates > 0 caps the number of optimizer
// steps (for bounded experiments); 0 means epochs/patience decide.
inline TrainResult finetune_rl(RFNetModel& model, Adam& adam, Rng& rng, const Dataset& ds,
                               const Vocabulary& vocab, const TrainConfig& cfg,
                               std::size_t max_updates = 0) {
  cfg.validate();
  if (ds.train.empty()) throw ValueError("finetune_rl: empty training split");
  if (ds.val.empty()) throw ValueError("finetune_rl: empty validation split");

  CiderD cider(detail::split_refs(ds.train));
  auto val_refs = detail::split_refs(ds.val);
  std::size_t max_len = model.config().max_len;

  TrainResult res;
  double best = -1e300;
  std::size_t since_best = 0, updates = 0;
  std::size_t last_epoch = 0;
  double last_val = 0.0;

  std::vector<std::size_t> order(ds.train.size());
  std::iota(order.begin(), order.end(), 0u);

  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t seen = 0;
    bool budget_spent = false;

    for (std::size_t lo = 0, batch = 0; lo < order.size(); lo += cfg.batch_size, ++batch) {
      std::size_t hi = std::min(lo + cfg.batch_size, order.size());
      model.zero_grad();
      for (std::size_t k = lo; k < hi; ++k) {
        const Scene& scene = ds.train[order[k]];
        Tape tape;
        FusionResult fusion = model.run_fusion(tape, scene.views, /*training=*/true, rng);
        SampleDecode sample = sample_decode(model, tape, fusion, max_len, rng);
        DecodeResult baseline = greedy_decode(model, scene.views, max_len);
        double r = cider.score(vocab.decode(sample.tokens), scene.captions) -
                   cider.score(vocab.decode(baseline.tokens), scene.captions);
        double sum_lp = sample.sum_log_prob.at(0);
        if (!std::isfinite(r) || !std::isfinite(sum_lp))
          throw ValueError("non-finite objective at epoch " + std::to_string(epoch) +
                           " batch " + std::to_string(batch));
        loss_sum += -r * sum_lp;
        ++seen;
        // A sample that ties its baseline contributes nothing.
        if (r != 0.0) {
          Tensor scaled =
              scale(tape, sample.sum_log_prob, -r / static_cast<double>(hi - lo));
          tape.backward(scaled);
        }
      }
      auto params = model.params();
      if (cfg.clip_norm > 0) clip_global_norm(params, cfg.clip_norm);
      adam.step(cfg.lr_rl);
      ++updates;
      if (max_updates > 0 && updates >= max_updates) {
        budget_spent = true;
        break;
      }
    }

    double val = detail::val_greedy_cider(model, vocab, ds.val, cider, val_refs,
                                          cfg.eval_max_len);
    res.log.push_back({epoch, cfg.lr_rl, 0.0, loss_sum / static_cast<double>(seen), val,
                       detail::elapsed_seconds(t0)});
    last_epoch = epoch + 1;
    last_val = val;

    if (val > best) {
      best = val;
      since_best = 0;
      res.best = take_snapshot(model, adam, rng, epoch + 1, val);
    } else if (++since_best >= cfg.rl_patience) {
      break;
    }
    if (budget_spent) break;
  }
  res.last = take_snapshot(model, adam, rng, last_epoch, last_val);
  return res;
}

}  // namespace rfnet
