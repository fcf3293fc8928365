#pragma once

#include <cstddef>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "rfnet/cells.hpp"
#include "rfnet/random.hpp"
#include "rfnet/tensor.hpp"

namespace rfnet {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

// Which part of the fusion pipeline to run.
//   kFull          : stage I -> stage II -> decoder
//   kNoStage1      : joint projection of the global vectors seeds stage II,
//                    which then attends the raw annotation sets
//   kNoStage2      : decoder reads the stage-I thought-vector sets directly
//   kNoInteraction : stage I runs, but each component sees only its own
//                    previous hidden state (no cross-component input)
enum class Ablation { kFull, kNoStage1, kNoStage2, kNoInteraction };

inline const char* ablation_name(Ablation a) {
  switch (a) {
    case Ablation::kFull: return "full";
    case Ablation::kNoStage1: return "no-stage-i";
    case Ablation::kNoStage2: return "no-stage-ii";
    case Ablation::kNoInteraction: return "no-interaction";
  }
  return "?";
}

inline Ablation ablation_from_name(const std::string& s) {
  for (Ablation a : {Ablation::kFull, Ablation::kNoStage1, Ablation::kNoStage2,
                     Ablation::kNoInteraction})
    if (s == ablation_name(a)) return a;
  throw ConfigError("unknown ablation '" + s + "'");
}

struct ModelConfig {
  std::size_t hidden = 64;                // LSTM width s
  std::size_t embed = 64;                 // word embedding width
  std::size_t att = 64;                   // attention MLP width
  std::size_t t1 = 2;                     // stage-I steps
  std::size_t t2 = 2;                     // stage-II steps
  std::size_t vocab = 0;                  // vocabulary size (incl. reserved)
  std::vector<std::size_t> view_dims;     // annotation dim per view; M = size()
  std::size_t freq_words = 32;            // rows of the discriminative head
  std::size_t max_len = 16;               // decode length cap (tokens)
  double dropout = 0.3;
  double lambda = 10.0;                   // discriminative loss weight
  double lsr_eps = 0.1;                   // label smoothing
  Ablation ablation = Ablation::kFull;

  std::size_t views() const { return view_dims.size(); }

  void validate() const {
    if (hidden == 0 || embed == 0 || att == 0)
      throw ConfigError("model dims must be positive");
    if (t1 == 0 || t2 == 0) throw ConfigError("fusion step counts must be positive");
    if (vocab < 4) throw ConfigError("vocabulary smaller than the reserved id block");
    if (view_dims.empty()) throw ConfigError("at least one view required");
    for (std::size_t d : view_dims)
      if (d == 0) throw ConfigError("view dims must be positive");
    if (freq_words == 0) throw ConfigError("freq_words must be positive");
    if (max_len == 0) throw ConfigError("max_len must be positive");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout outside [0,1)");
    if (lsr_eps < 0.0 || lsr_eps > 1.0) throw ConfigError("lsr_eps outside [0,1]");
  }
};

// Structural counts used by sizing checks and reports.
struct ModelCensus {
  std::size_t lstm_units = 0;
  std::size_t attention_models = 0;
  std::size_t parameters = 0;  // scalar count over all tensors
};

// ---------------------------------------------------------------------------
// Outputs of the fusion pass consumed by the decoder and the losses.
// ---------------------------------------------------------------------------

struct FusionResult {
  std::vector<std::vector<Tensor>> B;  // [m][t] stage-I thought vectors
  std::vector<Tensor> C;               // [t] stage-II thought vectors
  LstmState dec_init;                  // decoder initial state
  std::vector<Tensor> dec_annotations; // matrices the decoder attends
};

struct LossOptions {
  double ss_prob = 0.0;     // scheduled-sampling probability
  bool training = true;     // enables dropout + sampling draws
  bool include_disc = true; // compute the discriminative branch at all
  std::vector<std::size_t> positives;  // frequent-word rows present in caption
};

struct LossResult {
  Tensor total;                // scalar on the tape
  Tensor xe;                   // scalar on the tape (per-token mean)
  std::vector<Tensor> logits;  // one (V) tensor per decoded step
};

// ---------------------------------------------------------------------------
// The model: parameter registry plus the forward passes.
// ---------------------------------------------------------------------------

class RFNetModel {
 public:
  RFNetModel(ModelConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
    cfg_.validate();
    build();
    for (auto& [name, t] : named_) {
      init_uniform(t, rng, -0.1, 0.1);
      t.set_requires_grad(true);
      t.set_name(name);
    }
  }

  const ModelConfig& config() const { return cfg_; }

  const std::vector<std::pair<std::string, Tensor>>& named_params() const {
    return named_;
  }

  std::vector<Tensor> params() const {
    std::vector<Tensor> out;
    out.reserve(named_.size());
    for (const auto& [n, t] : named_) out.push_back(t);
    return out;
  }

  void zero_grad() {
    for (auto& [n, t] : named_) t.zero_grad();
  }

  ModelCensus census() const {
    ModelCensus c;
    for (const auto& ls : lstm1_) c.lstm_units += ls.size();
    c.lstm_units += lstm2_.size() + 1;  // + decoder
    for (const auto& as : attn1_) c.attention_models += as.size();
    for (const auto& as : attn2_) c.attention_models += as.size();
    c.attention_models += attn_dec_.size();
    for (const auto& [n, t] : named_) c.parameters += t.size();
    return c;
  }

  // -------------------------------------------------------------------------
  // Fusion. `views` holds one (k_m x d_m) annotation matrix per view; the
  // global vector of a view is the mean of its annotation rows.
  // -------------------------------------------------------------------------
  FusionResult run_fusion(Tape& tape, const std::vector<Tensor>& views, bool training,
                          Rng& rng) const {
    const std::size_t M = cfg_.views();
    if (views.size() != M)
      throw ShapeError("run_fusion: got " + std::to_string(views.size()) +
                       " views, model expects " + std::to_string(M));
    for (std::size_t m = 0; m < M; ++m)
      if (views[m].ndim() != 2 || views[m].cols() != cfg_.view_dims[m])
        throw ShapeError("run_fusion: view " + std::to_string(m) + " has shape " +
                         shape_str(views[m].shape()) + ", expected (* x " +
                         std::to_string(cfg_.view_dims[m]) + ")");

    FusionResult out;
    LstmState joint;  // running stage-II (or decoder) seed

    if (cfg_.ablation == Ablation::kNoStage1) {
      // Joint projection of the concatenated global vectors.
      std::vector<Tensor> globals;
      for (std::size_t m = 0; m < M; ++m) globals.push_back(mean_rows(tape, views[m]));
      Tensor seed = matmul(tape, Winit_, concat(tape, globals));
      joint = {seed, seed};
    } else {
      // Stage I: M review components, untied per step, synchronous update.
      std::vector<LstmState> st(M);
      for (std::size_t m = 0; m < M; ++m) {
        Tensor h0 = matmul(tape, W0_[m], mean_rows(tape, views[m]));
        st[m] = {h0, h0};
      }
      out.B.assign(M, {});
      for (std::size_t t = 0; t < cfg_.t1; ++t) {
        std::vector<Tensor> dropped(M);
        for (std::size_t m = 0; m < M; ++m)
          dropped[m] = dropout(tape, st[m].h, cfg_.dropout, training, rng);
        Tensor shared_in;
        if (cfg_.ablation != Ablation::kNoInteraction)
          shared_in = M == 1 ? dropped[0] : concat(tape, dropped);
        std::vector<LstmState> next(M);
        for (std::size_t m = 0; m < M; ++m) {
          Tensor x = cfg_.ablation == Ablation::kNoInteraction ? dropped[m] : shared_in;
          AttendResult att = attend(tape, attn1_[m][t], views[m], dropped[m]);
          next[m] = lstm_step(tape, lstm1_[m][t], {dropped[m], st[m].c}, x, att.z);
          out.B[m].push_back(next[m].h);
        }
        st = std::move(next);  // snapshot semantics: all reads used step t-1
      }
      // Stage-II seed: mean of the stage-I final states.
      Tensor hsum = st[0].h, csum = st[0].c;
      for (std::size_t m = 1; m < M; ++m) {
        hsum = add(tape, hsum, st[m].h);
        csum = add(tape, csum, st[m].c);
      }
      double inv = 1.0 / static_cast<double>(M);
      joint = {scale(tape, hsum, inv), scale(tape, csum, inv)};
    }

    if (cfg_.ablation == Ablation::kNoStage2) {
      out.dec_init = joint;
      for (std::size_t m = 0; m < cfg_.views(); ++m)
        out.dec_annotations.push_back(stack_rows(tape, out.B[m]));
      return out;
    }

    // Stage II: one LSTM per step with no external input; per step, one
    // attention read per set, concatenated into the context.
    std::vector<Tensor> sets;  // what stage II attends
    if (cfg_.ablation == Ablation::kNoStage1) {
      sets = views;
    } else {
      for (std::size_t m = 0; m < M; ++m) sets.push_back(stack_rows(tape, out.B[m]));
    }
    LstmState st = joint;
    for (std::size_t t = 0; t < cfg_.t2; ++t) {
      Tensor hd = dropout(tape, st.h, cfg_.dropout, training, rng);
      std::vector<Tensor> reads;
      for (std::size_t m = 0; m < M; ++m)
        reads.push_back(attend(tape, attn2_[t][m], sets[m], hd).z);
      Tensor ztilde = M == 1 ? reads[0] : concat(tape, reads);
      st = lstm_step(tape, lstm2_[t], {hd, st.c}, Tensor(), ztilde);
      out.C.push_back(st.h);
    }
    out.dec_init = st;
    out.dec_annotations.push_back(stack_rows(tape, out.C));
    return out;
  }

  // -------------------------------------------------------------------------
  // One decoder step: embed the token, attend each annotation set with the
  // previous hidden state, run the LSTM, project to logits.
  // -------------------------------------------------------------------------
  struct DecoderStep {
    LstmState state;
    Tensor logits;
  };

  DecoderStep decoder_step(Tape& tape, const LstmState& prev,
                           const std::vector<Tensor>& annotations, std::size_t token,
                           bool training, Rng& rng) const {
    if (annotations.size() != attn_dec_.size())
      throw ShapeError("decoder_step: " + std::to_string(annotations.size()) +
                       " annotation sets, expected " + std::to_string(attn_dec_.size()));
    Tensor x = gather_row(tape, E_, token);
    Tensor hd = dropout(tape, prev.h, cfg_.dropout, training, rng);
    std::vector<Tensor> reads;
    for (std::size_t j = 0; j < attn_dec_.size(); ++j)
      reads.push_back(attend(tape, attn_dec_[j], annotations[j], hd).z);
    Tensor z = reads.size() == 1 ? reads[0] : concat(tape, reads);
    LstmState st = lstm_step(tape, lstm_dec_, {hd, prev.c}, x, z);
    Tensor hdrop = dropout(tape, st.h, cfg_.dropout, training, rng);
    Tensor logits = add(tape, matmul(tape, Wout_, hdrop), bout_);
    return {st, logits};
  }

  // -------------------------------------------------------------------------
  // Teacher-forced decode with scheduled sampling. `caption` is the token-id
  // sequence without the start/end markers; the loss is the per-token mean of
  // label-smoothed cross entropy over caption tokens plus the end marker.
  // -------------------------------------------------------------------------
  struct DecodeTrainResult {
    Tensor xe;                   // scalar per-token mean
    std::vector<Tensor> logits;  // per step
  };

  DecodeTrainResult decode_train(Tape& tape, const FusionResult& fusion,
                                 const std::vector<std::size_t>& caption,
                                 const LossOptions& opt, Rng& rng) const {
    if (caption.empty()) throw ValueError("decode_train: empty caption");
    for (std::size_t id : caption)
      if (id >= cfg_.vocab)
        throw ValueError("decode_train: token id " + std::to_string(id) +
                         " out of range");
    DecodeTrainResult out;
    LstmState st = fusion.dec_init;
    std::size_t prev_token = kStartId;
    Tensor loss_sum;
    const std::size_t steps = caption.size() + 1;  // + end marker
    for (std::size_t j = 0; j < steps; ++j) {
      DecoderStep step =
          decoder_step(tape, st, fusion.dec_annotations, prev_token, opt.training, rng);
      st = step.state;
      std::size_t target = j < caption.size() ? caption[j] : kEndId;
      Tensor ce = cross_entropy_smoothed(tape, step.logits, target, cfg_.lsr_eps);
      loss_sum = j == 0 ? ce : add(tape, loss_sum, ce);
      out.logits.push_back(step.logits);
      if (j + 1 < steps) {
        prev_token = caption[j];
        if (opt.training && opt.ss_prob > 0.0 && rng.bernoulli(opt.ss_prob)) {
          // Feed a sample from the model's own distribution instead of gold.
          Tape off;
          off.set_recording(false);
          Tensor probs = softmax(off, step.logits);
          prev_token = rng.categorical(probs.values());
        }
      }
    }
    out.xe = scale(tape, loss_sum, 1.0 / static_cast<double>(steps));
    return out;
  }

  // -------------------------------------------------------------------------
  // Discriminative supervision: score every frequent word against a set of
  // thought vectors (columns of V), take the per-word max over the set, and
  // apply a multi-label margin against the words present in the caption.
  // -------------------------------------------------------------------------
  Tensor disc_set_loss(Tape& tape, const std::vector<Tensor>& set,
                       const std::vector<std::size_t>& positives) const {
    Tensor V = stack_cols(tape, set);              // (s x T)
    Tensor scores = matmul(tape, Wdisc_, V);       // (freq x T)
    Tensor best = row_max(tape, scores);           // (freq)
    return multilabel_margin(tape, best, positives);
  }

  // Total training loss: xe + lambda/(M+1) * sum of per-set margins. The
  // normalizer always uses M+1 (the full-variant set count) so the weight is
  // comparable across ablations.
  LossResult loss(Tape& tape, const std::vector<Tensor>& views,
                  const std::vector<std::size_t>& caption, const LossOptions& opt,
                  Rng& rng) const {
    FusionResult fusion = run_fusion(tape, views, opt.training, rng);
    DecodeTrainResult dec = decode_train(tape, fusion, caption, opt, rng);
    LossResult out;
    out.xe = dec.xe;
    out.logits = std::move(dec.logits);
    if (opt.include_disc) {
      Tensor disc_sum;
      bool first = true;
      for (const auto& bm : fusion.B) {
        Tensor l = disc_set_loss(tape, bm, opt.positives);
        disc_sum = first ? l : add(tape, disc_sum, l);
        first = false;
      }
      if (!fusion.C.empty()) {
        Tensor l = disc_set_loss(tape, fusion.C, opt.positives);
        disc_sum = first ? l : add(tape, disc_sum, l);
        first = false;
      }
      double w = cfg_.lambda / static_cast<double>(cfg_.views() + 1);
      out.total = add(tape, out.xe, scale(tape, disc_sum, w));
    } else {
      out.total = out.xe;
    }
    return out;
  }

  static constexpr std::size_t kStartId = 1;
  static constexpr std::size_t kEndId = 2;

  // Mean of the annotation rows: the view's global feature vector.
  static Tensor mean_rows(Tape& tape, const Tensor& A) {
    Tensor w(Shape{A.rows()}, 1.0 / static_cast<double>(A.rows()));
    return wsum_rows(tape, A, w);
  }

 private:
  void build() {
    const std::size_t M = cfg_.views(), s = cfg_.hidden;
    const bool stage1 = cfg_.ablation != Ablation::kNoStage1;
    const bool stage2 = cfg_.ablation != Ablation::kNoStage2;

    if (stage1) {
      std::size_t x_width =
          cfg_.ablation == Ablation::kNoInteraction ? s : M * s;
      W0_.resize(M);
      lstm1_.resize(M);
      attn1_.resize(M);
      for (std::size_t m = 0; m < M; ++m) {
        W0_[m] = reg("stage1.view" + std::to_string(m) + ".init_proj",
                     Tensor(Shape{s, cfg_.view_dims[m]}));
        for (std::size_t t = 0; t < cfg_.t1; ++t) {
          std::string base =
              "stage1.view" + std::to_string(m) + ".step" + std::to_string(t);
          lstm1_[m].push_back(reg_lstm(base + ".lstm",
                                       LstmParams::create(s, x_width, cfg_.view_dims[m])));
          attn1_[m].push_back(reg_attn(
              base + ".attn", AttentionParams::create(cfg_.att, cfg_.view_dims[m], s)));
        }
      }
    } else {
      std::size_t total = std::accumulate(cfg_.view_dims.begin(), cfg_.view_dims.end(),
                                          std::size_t{0});
      Winit_ = reg("init_proj.joint", Tensor(Shape{s, total}));
    }

    if (stage2) {
      attn2_.resize(cfg_.t2);
      std::size_t ctx = 0;
      for (std::size_t t = 0; t < cfg_.t2; ++t) {
        ctx = 0;
        for (std::size_t m = 0; m < M; ++m) {
          std::size_t d = stage1 ? s : cfg_.view_dims[m];
          attn2_[t].push_back(
              reg_attn("stage2.step" + std::to_string(t) + ".view" + std::to_string(m) +
                           ".attn",
                       AttentionParams::create(cfg_.att, d, s)));
          ctx += d;
        }
        lstm2_.push_back(
            reg_lstm("stage2.step" + std::to_string(t) + ".lstm",
                     LstmParams::create(s, 0, ctx)));
      }
    }

    E_ = reg("decoder.embed", Tensor(Shape{cfg_.vocab, cfg_.embed}));
    std::size_t dec_sets = stage2 ? 1 : M;
    for (std::size_t j = 0; j < dec_sets; ++j)
      attn_dec_.push_back(reg_attn("decoder.attn" + std::to_string(j),
                                   AttentionParams::create(cfg_.att, s, s)));
    lstm_dec_ = reg_lstm("decoder.lstm",
                         LstmParams::create(s, cfg_.embed, dec_sets * s));
    Wout_ = reg("decoder.out.W", Tensor(Shape{cfg_.vocab, s}));
    bout_ = reg("decoder.out.b", Tensor(Shape{cfg_.vocab}));
    Wdisc_ = reg("disc.W", Tensor(Shape{cfg_.freq_words, s}));
  }

  Tensor reg(const std::string& name, Tensor t) {
    named_.emplace_back(name, t);
    return t;
  }

  LstmParams reg_lstm(const std::string& base, LstmParams p) {
    reg(base + ".W", p.W);
    reg(base + ".bias", p.bias);
    return p;
  }

  AttentionParams reg_attn(const std::string& base, AttentionParams p) {
    reg(base + ".Wa", p.Wa);
    reg(base + ".Wh", p.Wh);
    reg(base + ".b", p.b);
    reg(base + ".v", p.v);
    return p;
  }

  ModelConfig cfg_;
  std::vector<std::pair<std::string, Tensor>> named_;

  std::vector<Tensor> W0_;                        // per view (stage I init)
  std::vector<std::vector<LstmParams>> lstm1_;    // [m][t]
  std::vector<std::vector<AttentionParams>> attn1_;
  Tensor Winit_;                                  // no-stage-I joint projection
  std::vector<LstmParams> lstm2_;                 // [t]
  std::vector<std::vector<AttentionParams>> attn2_;  // [t][m]
  Tensor E_;
  std::vector<AttentionParams> attn_dec_;
  LstmParams lstm_dec_;
  Tensor Wout_, bout_, Wdisc_;
};

}  // namespace rfnet
