#include <gtest/gtest.h>

#include <cmath>

#include "lbi/lbi.hpp"
#include "support.hpp"

namespace lbi {
namespace {

VerifyInstance instance(std::uint64_t seed, const LbiConfig& cfg) {
  VerifyInstanceSpec spec;
  spec.seed = seed;
  return make_verify_instance(spec, cfg);
}

TEST(Lookahead, EqualsValidationLossAfterOneIteration) {
  LbiConfig cfg;
  const VerifyInstance inst = instance(1, cfg);
  const LbiState next = lbi_iteration(inst.state, inst.bundle, cfg);
  EXPECT_EQ(lookahead_val_loss(inst.state, inst.bundle, cfg), next.trace.back().val_loss);
  EXPECT_EQ(lookahead_val_loss(inst.state, inst.bundle, cfg), batch_loss(next.fine, inst.bundle.val));
}

TEST(Lookahead, DoesNotMutateTheState) {
  LbiConfig cfg;
  const VerifyInstance inst = instance(2, cfg);
  const LbiState copy = inst.state;
  fd_val_loss_wrt_ignore(inst.state, inst.bundle, cfg, IgnoreWhich::B, 3, 1e-4);
  EXPECT_EQ(copy, inst.state);
}

TEST(Oracle, PassesOnDefaultConfigBothModes) {
  for (IgnoreMode mode : {IgnoreMode::clamp, IgnoreMode::sigmoid}) {
    for (std::size_t hidden : {0u, 4u}) {
      LbiConfig cfg;
      cfg.ignore_mode = mode;
      cfg.hidden = hidden;
      for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const VerifyInstance inst = instance(seed, cfg);
        const FdReport r = verify_hypergrads(inst.state, inst.bundle, cfg);
        EXPECT_TRUE(r.passed()) << to_text(r);
        EXPECT_EQ(r.entries.size(), 12u);
        EXPECT_LT(r.max_rel_error, 1e-4);
      }
    }
  }
}

TEST(Oracle, BasicModeChecksOnlyA) {
  LbiConfig cfg;
  cfg.mode = Mode::basic;
  const VerifyInstance inst = instance(4, cfg);
  const FdReport r = verify_hypergrads(inst.state, inst.bundle, cfg);
  EXPECT_EQ(r.entries.size(), 6u);
  EXPECT_TRUE(r.passed()) << to_text(r);
  EXPECT_THROW(fd_val_loss_wrt_ignore(inst.state, inst.bundle, cfg, IgnoreWhich::B, 0, 1e-4), ContractViolation);
}

TEST(Oracle, DetectsASignFlip) {
  LbiConfig cfg;
  const VerifyInstance inst = instance(5, cfg);
  AnalyticHypergrads broken;
  broken.a = [](const LbiState& s, const ModelParams& pn, const ModelParams& fn, const DatasetBundle& b,
                const LbiConfig& c) {
    auto g = hypergrad_A(s, pn, fn, b, c);
    for (double& v : g) v = -v;
    return g;
  };
  const FdReport r = verify_hypergrads(inst.state, inst.bundle, cfg, 1e-4, broken);
  EXPECT_FALSE(r.passed());
  for (const FdEntry& e : r.entries) EXPECT_EQ(e.flagged, e.which == IgnoreWhich::A && e.analytic != 0.0);
}

TEST(Oracle, DetectsAMissingChainFactorInSigmoidMode) {
  LbiConfig cfg;
  cfg.ignore_mode = IgnoreMode::sigmoid;
  const VerifyInstance inst = instance(6, cfg);
  AnalyticHypergrads broken;
  broken.b = [](const LbiState& s, const ModelParams& fn, const DatasetBundle& b, const LbiConfig& c) {
    auto g = hypergrad_B(s, fn, b, c);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] /= s.B.chain(i);
    return g;
  };
  const FdReport r = verify_hypergrads(inst.state, inst.bundle, cfg, 1e-4, broken);
  EXPECT_FALSE(r.passed());
  EXPECT_EQ(r.flagged_count(), 6u);
}

TEST(Oracle, DetectsADroppedHeadTerm) {
  // hypergrad_B without the head contribution: the common shortcut of
  // differentiating through W' only.
  LbiConfig cfg;
  const VerifyInstance inst = instance(7, cfg);
  AnalyticHypergrads broken;
  broken.b = [](const LbiState& s, const ModelParams& fn, const DatasetBundle& b, const LbiConfig& c) {
    LbiConfig no_head = c;
    no_head.lr.H = 0.0;
    return hypergrad_B(s, fn, b, no_head);
  };
  const FdReport r = verify_hypergrads(inst.state, inst.bundle, cfg, 1e-4, broken);
  EXPECT_FALSE(r.passed());
}

TEST(Oracle, ReplayPrecisionSetsTheRoundOffFloor) {
  // At the default rates the A hypergradient is about 1e-8; the double
  // central difference carries relative noise near 1e-4, long double about
  // 1e-7, and the 113-bit replay is limited by truncation alone.
  LbiConfig cfg;
  const VerifyInstance inst = instance(0, cfg);
  auto worst = [&](OraclePrecision p) {
    return verify_hypergrads(inst.state, inst.bundle, cfg, 1e-4, {}, 1e-4, p).max_rel_error;
  };
  const double quad = worst(OraclePrecision::quad);
  const double ext = worst(OraclePrecision::extended);
  const double dbl = worst(OraclePrecision::double_precision);
  EXPECT_LT(quad, 1e-6);
  EXPECT_LT(quad, ext);
  EXPECT_LT(ext, dbl);
}

TEST(Oracle, CentralDifferenceErrorIsSecondOrder) {
  // hidden = 4 gives a curved lookahead, so truncation dominates the error.
  LbiConfig cfg;
  cfg.hidden = 4;
  cfg.ignore_mode = IgnoreMode::sigmoid;
  cfg.lr = {0.2, 0.2, 0.2, 0.2, 0.05, 0.05};
  cfg.lambda = 0.5;
  const VerifyInstance inst = instance(3, cfg);
  const ModelParams pn = pretrain_step(inst.state, inst.bundle, cfg);
  const ModelParams fn = finetune_step(inst.state, pn, inst.bundle, cfg);
  const double exact = hypergrad_B(inst.state, fn, inst.bundle, cfg)[2];
  const double e1 = std::abs(fd_val_loss_wrt_ignore(inst.state, inst.bundle, cfg, IgnoreWhich::B, 2, 0.1) - exact);
  const double e2 = std::abs(fd_val_loss_wrt_ignore(inst.state, inst.bundle, cfg, IgnoreWhich::B, 2, 0.05) - exact);
  EXPECT_NEAR(e1 / e2, 4.0, 0.5);
}

TEST(Oracle, LambdaZeroGivesZeroADifference) {
  LbiConfig cfg;
  cfg.lambda = 0.0;
  const VerifyInstance inst = instance(2, cfg);
  for (std::size_t i = 0; i < 6; ++i)
    EXPECT_NEAR(fd_val_loss_wrt_ignore(inst.state, inst.bundle, cfg, IgnoreWhich::A, i, 1e-4), 0.0, 1e-9);
}

TEST(Oracle, DetectsADroppedProximityTerm) {
  LbiConfig cfg;
  const VerifyInstance inst = instance(9, cfg);
  AnalyticHypergrads broken;
  broken.a = [](const LbiState& s, const ModelParams&, const ModelParams&, const DatasetBundle&,
                const LbiConfig&) { return std::vector<double>(s.A.size(), 0.0); };
  const FdReport r = verify_hypergrads(inst.state, inst.bundle, cfg, 1e-4, broken);
  std::size_t flagged_a = 0;
  for (const FdEntry& e : r.entries) flagged_a += e.which == IgnoreWhich::A && e.flagged ? 1 : 0;
  EXPECT_EQ(flagged_a, 6u);
}

TEST(Oracle, SingleExampleInstance) {
  LbiConfig cfg;
  VerifyInstanceSpec spec;
  spec.M = 1;
  const VerifyInstance inst = make_verify_instance(spec, cfg);
  const FdReport r = verify_hypergrads(inst.state, inst.bundle, cfg);
  EXPECT_EQ(r.entries.size(), 2u);  // one A and one B component
  EXPECT_TRUE(r.passed()) << to_text(r);
}

TEST(Oracle, ReportSerialisation) {
  LbiConfig cfg;
  const VerifyInstance inst = instance(1, cfg);
  const FdReport r = verify_hypergrads(inst.state, inst.bundle, cfg);
  const nlohmann::json j = to_json(r);
  EXPECT_EQ(j["entries"].size(), r.entries.size());
  EXPECT_EQ(j["passed"].get<bool>(), r.passed());
  EXPECT_EQ(j["oracle_precision"], "quad");
  const std::string text = to_text(r);
  EXPECT_NE(text.find("max rel err"), std::string::npos);
  EXPECT_NE(text.find("flagged 0/12"), std::string::npos);
}

TEST(Oracle, RejectsNonDeskScaleAndBadArguments) {
  LbiConfig cfg;
  VerifyInstanceSpec spec;
  spec.M = 17;
  const VerifyInstance big = make_verify_instance(spec, cfg);
  EXPECT_THROW(verify_hypergrads(big.state, big.bundle, cfg), ContractViolation);
  const VerifyInstance inst = instance(1, cfg);
  EXPECT_THROW(fd_val_loss_wrt_ignore(inst.state, inst.bundle, cfg, IgnoreWhich::A, 6, 1e-4), ContractViolation);
  EXPECT_THROW(fd_val_loss_wrt_ignore(inst.state, inst.bundle, cfg, IgnoreWhich::A, 0, 0.0), ContractViolation);
  EXPECT_THROW(parse_oracle_precision("octuple"), ConfigError);
  EXPECT_EQ(parse_oracle_precision("quad"), OraclePrecision::quad);
  EXPECT_EQ(parse_oracle_precision("double"), OraclePrecision::double_precision);
}

TEST(Oracle, InstanceScoresAreInteriorAndDeterministic) {
  LbiConfig cfg;
  const VerifyInstance a = instance(3, cfg), b = instance(3, cfg);
  EXPECT_EQ(a.state, b.state);
  for (double r : a.state.A.raw) {
    EXPECT_GT(r, 0.0);
    EXPECT_LT(r, 1.0);
  }
}

TEST(Oracle, FrozenSetHasZeroNumericDerivative) {
  LbiConfig cfg;
  VerifyInstance inst = instance(2, cfg);
  inst.state.A.frozen = true;
  EXPECT_EQ(fd_val_loss_wrt_ignore(inst.state, inst.bundle, cfg, IgnoreWhich::A, 1, 1e-4), 0.0);
  EXPECT_TRUE(verify_hypergrads(inst.state, inst.bundle, cfg).passed());
}

}  // namespace
}  // namespace lbi
