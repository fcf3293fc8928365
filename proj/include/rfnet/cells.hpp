#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "rfnet/tensor.hpp"

namespace rfnet {

// ---------------------------------------------------------------------------
// Soft attention with an MLP scorer:
//   e_i   = v · tanh(Wa·a_i + Wh·q + b)
//   alpha = softmax(e)
//   z     = sum_i alpha_i · a_i
// Annotations arrive as the rows of A (k x d); q is the query vector.
// ---------------------------------------------------------------------------

struct AttentionParams {
  Tensor Wa;  // (att x d)
  Tensor Wh;  // (att x q)
  Tensor b;   // (att)
  Tensor v;   // (att)

  static AttentionParams create(std::size_t att, std::size_t d, std::size_t q) {
    AttentionParams p;
    p.Wa = Tensor(Shape{att, d});
    p.Wh = Tensor(Shape{att, q});
    p.b = Tensor(Shape{att});
    p.v = Tensor(Shape{att});
    return p;
  }

  std::vector<Tensor> all() const { return {Wa, Wh, b, v}; }
};

struct AttendResult {
  Tensor z;      // (d) context vector
  Tensor alpha;  // (k) attention weights
};

inline AttendResult attend(Tape& tape, const AttentionParams& p, const Tensor& A,
                           const Tensor& query) {
  detail::require(A.ndim() == 2, "attend", "annotations must be 2-D, got " +
                                               shape_str(A.shape()));
  detail::require(A.cols() == p.Wa.cols(), "attend",
                  "annotation dim " + std::to_string(A.cols()) + " vs Wa " +
                      shape_str(p.Wa.shape()));
  detail::require(query.ndim() == 1 && query.size() == p.Wh.cols(), "attend",
                  "query " + shape_str(query.shape()) + " vs Wh " +
                      shape_str(p.Wh.shape()));
  Tensor proj = matmul_nt(tape, A, p.Wa);                    // (k x att)
  Tensor qb = add(tape, matmul(tape, p.Wh, query), p.b);     // (att)
  Tensor pre = tanh(tape, add_rowvec(tape, proj, qb));       // (k x att)
  Tensor e = matmul(tape, pre, p.v);                         // (k)
  Tensor alpha = softmax(tape, e);
  Tensor z = wsum_rows(tape, A, alpha);
  return {z, alpha};
}

// ---------------------------------------------------------------------------
// LSTM step. One fused transform produces the four gate pre-activations in
// the fixed block order (i, f, o, g):
//   [i; f; o; g] = W · concat(x, h_prev, z) + bias
//   c = sigmoid(f) ⊙ c_prev + sigmoid(i) ⊙ tanh(g)
//   h = sigmoid(o) ⊙ tanh(c)
// x may be an invalid (default-constructed) Tensor for cells with no external
// input; the transform then consumes concat(h_prev, z) only.
// ---------------------------------------------------------------------------

struct LstmParams {
  Tensor W;     // (4s x (x_width + s + ctx_width))
  Tensor bias;  // (4s)
  std::size_t hidden = 0;
  std::size_t x_width = 0;
  std::size_t ctx_width = 0;

  static LstmParams create(std::size_t hidden, std::size_t x_width,
                           std::size_t ctx_width) {
    LstmParams p;
    p.hidden = hidden;
    p.x_width = x_width;
    p.ctx_width = ctx_width;
    p.W = Tensor(Shape{4 * hidden, x_width + hidden + ctx_width});
    p.bias = Tensor(Shape{4 * hidden});
    return p;
  }

  std::vector<Tensor> all() const { return {W, bias}; }
};

struct LstmState {
  Tensor h;
  Tensor c;
};

inline LstmState lstm_step(Tape& tape, const LstmParams& p, const LstmState& prev,
                           const Tensor& x, const Tensor& z) {
  std::size_t s = p.hidden;
  std::size_t xw = x.valid() ? x.size() : 0;
  detail::require(xw == p.x_width, "lstm_step",
                  "input width " + std::to_string(xw) + " vs expected " +
                      std::to_string(p.x_width));
  detail::require(prev.h.valid() && prev.h.size() == s, "lstm_step",
                  "hidden state size mismatch");
  detail::require(prev.c.valid() && prev.c.size() == s, "lstm_step",
                  "cell state size mismatch");
  detail::require(z.valid() && z.size() == p.ctx_width, "lstm_step",
                  "context width " + std::to_string(z.size()) + " vs expected " +
                      std::to_string(p.ctx_width));

  std::vector<Tensor> parts;
  if (xw > 0) parts.push_back(x);
  parts.push_back(prev.h);
  if (p.ctx_width > 0) parts.push_back(z);
  Tensor t_in = parts.size() == 1 ? parts[0] : concat(tape, parts);
  Tensor pre = add(tape, matmul(tape, p.W, t_in), p.bias);  // (4s)

  Tensor i = sigmoid(tape, slice(tape, pre, 0, s));
  Tensor f = sigmoid(tape, slice(tape, pre, s, s));
  Tensor o = sigmoid(tape, slice(tape, pre, 2 * s, s));
  Tensor g = tanh(tape, slice(tape, pre, 3 * s, s));

  Tensor c = add(tape, mul(tape, f, prev.c), mul(tape, i, g));
  Tensor h = mul(tape, o, tanh(tape, c));
  return {h, c};
}

// Attention-then-LSTM composition: the context is attended with the previous
// hidden state as query, then consumed by the LSTM transform.
struct AttentiveStepResult {
  LstmState state;
  Tensor z;
  Tensor alpha;
};

inline AttentiveStepResult attentive_lstm_step(Tape& tape, const AttentionParams& ap,
                                               const LstmParams& lp,
                                               const LstmState& prev, const Tensor& x,
                                               const Tensor& A) {
  AttendResult att = attend(tape, ap, A, prev.h);
  LstmState next = lstm_step(tape, lp, prev, x, att.z);
  return {next, att.z, att.alpha};
}

}  // namespace rfnet
