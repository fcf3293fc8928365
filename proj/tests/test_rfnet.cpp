// Fusion model: structure census, forward shapes, ablation wiring, loss
// relations, and end-to-end gradient checks.

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "rfnet/gradcheck.hpp"
#include "rfnet/rfnet.hpp"

using namespace rfnet;

namespace {

ModelConfig tiny_config(Ablation ab = Ablation::kFull) {
  ModelConfig cfg;
  cfg.hidden = 4;
  cfg.embed = 5;
  cfg.att = 3;
  cfg.t1 = 2;
  cfg.t2 = 2;
  cfg.vocab = 8;
  cfg.view_dims = {3, 4};
  cfg.freq_words = 5;
  cfg.dropout = 0.0;
  cfg.lambda = 10.0;
  cfg.lsr_eps = 0.1;
  cfg.ablation = ab;
  return cfg;
}

std::vector<Tensor> random_views(const ModelConfig& cfg, Rng& rng,
                                 std::size_t rows = 2) {
  std::vector<Tensor> views;
  for (std::size_t d : cfg.view_dims) {
    Tensor A(Shape{rows, d});
    init_uniform(A, rng, -1, 1);
    views.push_back(A);
  }
  return views;
}

Tensor find_param(const RFNetModel& m, const std::string& name) {
  for (const auto& [n, t] : m.named_params())
    if (n == name) return t;
  throw std::runtime_error("param not found: " + name);
}

}  // namespace

// ---------------------------------------------------------------------------
// Census
// ---------------------------------------------------------------------------

TEST(Census, MatchesClosedFormsAcrossVariants) {
  Rng rng(70);
  for (int trial = 0; trial < 10; ++trial) {
    std::size_t M = 1 + rng.uniform_int(4);
    std::size_t T1 = 1 + rng.uniform_int(3), T2 = 1 + rng.uniform_int(3);
    ModelConfig cfg = tiny_config();
    cfg.view_dims.assign(M, 3);
    cfg.t1 = T1;
    cfg.t2 = T2;

    for (Ablation ab : {Ablation::kFull, Ablation::kNoInteraction}) {
      cfg.ablation = ab;
      Rng r(1);
      RFNetModel m(cfg, r);
      ModelCensus c = m.census();
      EXPECT_EQ(c.lstm_units, M * T1 + T2 + 1);
      EXPECT_EQ(c.attention_models, M * T1 + M * T2 + 1);
    }
    cfg.ablation = Ablation::kNoStage1;
    {
      Rng r(1);
      ModelCensus c = RFNetModel(cfg, r).census();
      EXPECT_EQ(c.lstm_units, T2 + 1);
      EXPECT_EQ(c.attention_models, M * T2 + 1);
    }
    cfg.ablation = Ablation::kNoStage2;
    {
      Rng r(1);
      ModelCensus c = RFNetModel(cfg, r).census();
      EXPECT_EQ(c.lstm_units, M * T1 + 1);
      EXPECT_EQ(c.attention_models, M * T1 + M);
    }
  }
}

TEST(Census, ParameterCountMatchesManualSum) {
  Rng rng(71);
  RFNetModel m(tiny_config(), rng);
  std::size_t total = 0;
  for (const auto& [n, t] : m.named_params()) total += t.size();
  EXPECT_EQ(m.census().parameters, total);
  EXPECT_GT(total, 0u);
}

// ---------------------------------------------------------------------------
// Forward shapes and wiring
// ---------------------------------------------------------------------------

TEST(Fusion, FullVariantShapes) {
  ModelConfig cfg = tiny_config();
  Rng rng(72);
  RFNetModel m(cfg, rng);
  std::vector<Tensor> views = random_views(cfg, rng);
  Tape tape;
  tape.set_recording(false);
  FusionResult f = m.run_fusion(tape, views, false, rng);
  ASSERT_EQ(f.B.size(), 2u);
  for (const auto& bm : f.B) {
    ASSERT_EQ(bm.size(), cfg.t1);
    for (const auto& h : bm) EXPECT_EQ(h.size(), cfg.hidden);
  }
  ASSERT_EQ(f.C.size(), cfg.t2);
  EXPECT_EQ(f.dec_init.h.size(), cfg.hidden);
  EXPECT_EQ(f.dec_init.c.size(), cfg.hidden);
  ASSERT_EQ(f.dec_annotations.size(), 1u);
  EXPECT_EQ(f.dec_annotations[0].shape(), (Shape{cfg.t2, cfg.hidden}));
}

TEST(Fusion, AblationShapes) {
  Rng rng(73);
  {
    ModelConfig cfg = tiny_config(Ablation::kNoStage1);
    RFNetModel m(cfg, rng);
    std::vector<Tensor> views = random_views(cfg, rng);
    Tape t;
    t.set_recording(false);
    FusionResult f = m.run_fusion(t, views, false, rng);
    EXPECT_TRUE(f.B.empty());
    ASSERT_EQ(f.C.size(), cfg.t2);
    // Stage II consumed the raw annotation sets: its LSTM context is sum(d_m).
    Tensor w = find_param(m, "stage2.step0.lstm.W");
    EXPECT_EQ(w.cols(), cfg.hidden + 3 + 4);
    EXPECT_EQ(find_param(m, "init_proj.joint").shape(), (Shape{cfg.hidden, 7u}));
  }
  {
    ModelConfig cfg = tiny_config(Ablation::kNoStage2);
    RFNetModel m(cfg, rng);
    std::vector<Tensor> views = random_views(cfg, rng);
    Tape t;
    t.set_recording(false);
    FusionResult f = m.run_fusion(t, views, false, rng);
    EXPECT_TRUE(f.C.empty());
    ASSERT_EQ(f.dec_annotations.size(), 2u);
    for (const auto& ann : f.dec_annotations)
      EXPECT_EQ(ann.shape(), (Shape{cfg.t1, cfg.hidden}));
    // Decoder context concatenates one read per stage-I set.
    Tensor w = find_param(m, "decoder.lstm.W");
    EXPECT_EQ(w.cols(), cfg.embed + cfg.hidden + 2 * cfg.hidden);
  }
}

TEST(Fusion, StageTwoLstmHasNoExternalInput) {
  ModelConfig cfg = tiny_config();
  Rng rng(74);
  RFNetModel m(cfg, rng);
  Tensor w = find_param(m, "stage2.step0.lstm.W");
  // columns = 0 (x) + s (hidden) + M*s (context)
  EXPECT_EQ(w.cols(), cfg.hidden + 2 * cfg.hidden);
  EXPECT_EQ(w.rows(), 4 * cfg.hidden);
}

TEST(Fusion, RejectsWrongViewCountOrDim) {
  ModelConfig cfg = tiny_config();
  Rng rng(75);
  RFNetModel m(cfg, rng);
  std::vector<Tensor> views = random_views(cfg, rng);
  Tape t;
  EXPECT_THROW(m.run_fusion(t, {views[0]}, false, rng), ShapeError);
  std::vector<Tensor> bad = {views[1], views[0]};
  EXPECT_THROW(m.run_fusion(t, bad, false, rng), ShapeError);
}

// ---------------------------------------------------------------------------
// Determinism and M=1 equivalence
// ---------------------------------------------------------------------------

TEST(Model, DeterministicInitAndLoss) {
  ModelConfig cfg = tiny_config();
  auto run = [&]() {
    Rng rng(99);
    RFNetModel m(cfg, rng);
    std::vector<Tensor> views = random_views(cfg, rng);
    LossOptions opt;
    opt.positives = {0, 2};
    Tape tape;
    return m.loss(tape, views, {4, 5, 6}, opt, rng).total.at(0);
  };
  EXPECT_DOUBLE_EQ(run(), run());
}

TEST(Model, SingleViewFullEqualsNoInteraction) {
  ModelConfig cfg = tiny_config();
  cfg.view_dims = {3};
  auto run = [&](Ablation ab) {
    cfg.ablation = ab;
    Rng rng(55);
    RFNetModel m(cfg, rng);
    std::vector<Tensor> views = random_views(cfg, rng);
    LossOptions opt;
    opt.positives = {1};
    Tape tape;
    return m.loss(tape, views, {4, 6}, opt, rng).total.at(0);
  };
  EXPECT_DOUBLE_EQ(run(Ablation::kFull), run(Ablation::kNoInteraction));
}

// ---------------------------------------------------------------------------
// View-permutation symmetry: swapping the two views and permuting the
// per-view parameter blocks accordingly must leave the loss unchanged (up to
// floating-point reassociation).
// ---------------------------------------------------------------------------

namespace {

void copy_cols(Tensor dst, std::size_t dst_off, const Tensor& src, std::size_t src_off,
               std::size_t width) {
  ASSERT_EQ(dst.rows(), src.rows());
  for (std::size_t r = 0; r < dst.rows(); ++r)
    for (std::size_t c = 0; c < width; ++c)
      dst.at(r * dst.cols() + dst_off + c) = src.at(r * src.cols() + src_off + c);
}

void copy_all(Tensor dst, const Tensor& src) {
  ASSERT_EQ(dst.size(), src.size());
  for (std::size_t i = 0; i < src.size(); ++i) dst.at(i) = src.at(i);
}

}  // namespace

TEST(Model, ViewPermutationSymmetry) {
  ModelConfig cfg_a = tiny_config();  // view dims {3, 4}
  ModelConfig cfg_b = cfg_a;
  cfg_b.view_dims = {4, 3};
  Rng ra(123), rb(456);
  RFNetModel a(cfg_a, ra);
  RFNetModel b(cfg_b, rb);
  const std::size_t s = cfg_a.hidden;

  // Per-view blocks swap wholesale...
  for (std::size_t m = 0; m < 2; ++m) {
    std::string am = std::to_string(m), bm = std::to_string(1 - m);
    copy_all(find_param(b, "stage1.view" + bm + ".init_proj"),
             find_param(a, "stage1.view" + am + ".init_proj"));
    for (std::size_t t = 0; t < cfg_a.t1; ++t) {
      std::string at = "stage1.view" + am + ".step" + std::to_string(t);
      std::string bt = "stage1.view" + bm + ".step" + std::to_string(t);
      for (const char* leaf : {".attn.Wa", ".attn.Wh", ".attn.b", ".attn.v"})
        copy_all(find_param(b, bt + leaf), find_param(a, at + leaf));
      copy_all(find_param(b, bt + ".lstm.bias"), find_param(a, at + ".lstm.bias"));
      // ...except the fused-input weight: its x-block columns follow the
      // concat order of the components, which the permutation reverses.
      Tensor wa = find_param(a, at + ".lstm.W");
      Tensor wb = find_param(b, bt + ".lstm.W");
      copy_cols(wb, 0, wa, s, s);      // component 0 of b = component 1 of a
      copy_cols(wb, s, wa, 0, s);      // component 1 of b = component 0 of a
      copy_cols(wb, 2 * s, wa, 2 * s, wa.cols() - 2 * s);  // h and context
    }
    for (std::size_t t = 0; t < cfg_a.t2; ++t) {
      std::string at = "stage2.step" + std::to_string(t) + ".view" + am + ".attn";
      std::string bt = "stage2.step" + std::to_string(t) + ".view" + bm + ".attn";
      for (const char* leaf : {".Wa", ".Wh", ".b", ".v"})
        copy_all(find_param(b, bt + leaf), find_param(a, at + leaf));
    }
  }
  // Stage-II transform: hidden block stays, the two context reads swap.
  for (std::size_t t = 0; t < cfg_a.t2; ++t) {
    std::string name = "stage2.step" + std::to_string(t) + ".lstm";
    Tensor wa = find_param(a, name + ".W");
    Tensor wb = find_param(b, name + ".W");
    copy_cols(wb, 0, wa, 0, s);
    copy_cols(wb, s, wa, 2 * s, s);
    copy_cols(wb, 2 * s, wa, s, s);
    copy_all(find_param(b, name + ".bias"), find_param(a, name + ".bias"));
  }
  // Shared trunk copies verbatim.
  for (const char* n :
       {"decoder.embed", "decoder.attn0.Wa", "decoder.attn0.Wh", "decoder.attn0.b",
        "decoder.attn0.v", "decoder.lstm.W", "decoder.lstm.bias", "decoder.out.W",
        "decoder.out.b", "disc.W"})
    copy_all(find_param(b, n), find_param(a, n));

  Rng rv(9);
  std::vector<Tensor> views = random_views(cfg_a, rv, 3);
  std::vector<Tensor> swapped = {views[1], views[0]};
  LossOptions opt;
  opt.positives = {0, 3};
  Rng r1(0), r2(0);
  Tape ta, tb;
  double la = a.loss(ta, views, {4, 5, 6, 7}, opt, r1).total.at(0);
  double lb = b.loss(tb, swapped, {4, 5, 6, 7}, opt, r2).total.at(0);
  EXPECT_NEAR(la, lb, 1e-9 * std::max(1.0, std::abs(la)));
}

// ---------------------------------------------------------------------------
// Discriminative supervision
// ---------------------------------------------------------------------------

TEST(Disc, HandComputedSetLoss) {
  ModelConfig cfg = tiny_config();
  cfg.hidden = 2;
  cfg.freq_words = 2;
  Rng rng(77);
  RFNetModel m(cfg, rng);
  Tensor wd = find_param(m, "disc.W");
  // Wdisc = [[2,0],[0,3]]; V columns (1,0) and (0,1) -> scores [[2,0],[0,3]]
  // row_max = (2,3); positives {0}: hinge = max(0, 1-(2-3)) = 2.
  wd.at(0) = 2;
  wd.at(1) = 0;
  wd.at(2) = 0;
  wd.at(3) = 3;
  Tape t;
  t.set_recording(false);
  std::vector<Tensor> set = {Tensor(Shape{2}, {1.0, 0.0}), Tensor(Shape{2}, {0.0, 1.0})};
  EXPECT_DOUBLE_EQ(m.disc_set_loss(t, set, {0}).at(0), 2.0);
  EXPECT_DOUBLE_EQ(m.disc_set_loss(t, set, {1}).at(0), 0.0);  // 1-(3-2) = 0
}

TEST(Loss, TotalAtLeastXeAndLambdaZeroExact) {
  Rng rng(78);
  for (Ablation ab : {Ablation::kFull, Ablation::kNoStage1, Ablation::kNoStage2,
                      Ablation::kNoInteraction}) {
    ModelConfig cfg = tiny_config(ab);
    RFNetModel m(cfg, rng);
    std::vector<Tensor> views = random_views(cfg, rng);
    LossOptions opt;
    opt.positives = {0, 2};
    {
      Tape t;
      LossResult r = m.loss(t, views, {4, 5}, opt, rng);
      EXPECT_GE(r.total.at(0) + 1e-12, r.xe.at(0)) << ablation_name(ab);
    }
    ModelConfig zero = cfg;
    zero.lambda = 0.0;
    Rng r2(79);
    RFNetModel mz(zero, r2);
    Tape t;
    LossResult r = mz.loss(t, views, {4, 5}, opt, rng);
    EXPECT_DOUBLE_EQ(r.total.at(0), r.xe.at(0)) << ablation_name(ab);
  }
}

TEST(Loss, DiscBranchToggleBitwiseIdenticalAtLambdaZero) {
  ModelConfig cfg = tiny_config();
  cfg.lambda = 0.0;
  Rng rng(80);
  RFNetModel m(cfg, rng);
  std::vector<Tensor> views = random_views(cfg, rng);
  LossOptions with, without;
  with.positives = without.positives = {1, 3};
  without.include_disc = false;

  auto grads = [&](const LossOptions& opt) {
    m.zero_grad();
    Rng r(0);
    Tape t;
    LossResult res = m.loss(t, views, {4, 5, 6}, opt, r);
    t.backward(res.total);
    std::vector<double> g;
    for (const auto& [n, p] : m.named_params())
      if (p.has_grad())
        g.insert(g.end(), p.grad(), p.grad() + p.size());
      else
        g.insert(g.end(), p.size(), 0.0);
    g.push_back(res.total.at(0));
    return g;
  };
  std::vector<double> g1 = grads(with), g2 = grads(without);
  ASSERT_EQ(g1.size(), g2.size());
  for (std::size_t i = 0; i < g1.size(); ++i) EXPECT_DOUBLE_EQ(g1[i], g2[i]);
}

// ---------------------------------------------------------------------------
// End-to-end gradient check over every parameter.
// ---------------------------------------------------------------------------

TEST(ModelFd, EndToEndGradientsUnderTolerance) {
  ModelConfig cfg = tiny_config();
  Rng rng(81);
  RFNetModel m(cfg, rng);
  std::vector<Tensor> views = random_views(cfg, rng);
  std::vector<std::size_t> caption = {4, 5, 6};
  LossOptions opt;
  opt.positives = {1, 3};

  Rng r0(0);
  Tape tape;
  m.zero_grad();
  LossResult res = m.loss(tape, views, caption, opt, r0);
  tape.backward(res.total);

  auto f = [&]() {
    Rng r(0);
    Tape t;
    t.set_recording(false);
    return m.loss(t, views, caption, opt, r).total.at(0);
  };
  std::vector<Tensor> params = m.params();
  FdReport rep = finite_difference_check(params, f, 1e-4);
  EXPECT_LT(rep.max_err, 1e-5) << "worst at " << rep.where << " analytic "
                               << rep.analytic << " numeric " << rep.numeric;
}

TEST(ModelFd, AblationGradientsUnderTolerance) {
  for (Ablation ab :
       {Ablation::kNoStage1, Ablation::kNoStage2, Ablation::kNoInteraction}) {
    ModelConfig cfg = tiny_config(ab);
    cfg.t1 = 1;
    cfg.t2 = 1;
    Rng rng(82);
    RFNetModel m(cfg, rng);
    std::vector<Tensor> views = random_views(cfg, rng);
    std::vector<std::size_t> caption = {4, 6};
    LossOptions opt;
    opt.positives = {2};

    Rng r0(0);
    Tape tape;
    m.zero_grad();
    LossResult res = m.loss(tape, views, caption, opt, r0);
    tape.backward(res.total);
    auto f = [&]() {
      Rng r(0);
      Tape t;
      t.set_recording(false);
      return m.loss(t, views, caption, opt, r).total.at(0);
    };
    std::vector<Tensor> params = m.params();
    FdReport rep = finite_difference_check(params, f, 1e-4);
    EXPECT_LT(rep.max_err, 1e-5) << ablation_name(ab) << " worst at " << rep.where;
  }
}

// Scheduled sampling consumes randomness only when active, so configurations
// with ss_prob = 0 are bitwise comparable across runs.
TEST(Model, ScheduledSamplingRngDiscipline) {
  ModelConfig cfg = tiny_config();
  Rng rng(83);
  RFNetModel m(cfg, rng);
  std::vector<Tensor> views = random_views(cfg, rng);
  LossOptions opt;
  opt.positives = {0};
  Rng r(7);
  std::uint64_t before = r.counter();
  Tape t;
  m.loss(t, views, {4, 5, 6}, opt, r);
  EXPECT_EQ(r.counter(), before);  // dropout 0, ss 0: zero draws

  opt.ss_prob = 1.0;  // every continuation samples: bernoulli + categorical
  Tape t2;
  m.loss(t2, views, {4, 5, 6}, opt, r);
  EXPECT_EQ(r.counter(), before + 3 * 2);  // 3 continuations, 2 draws each
}
