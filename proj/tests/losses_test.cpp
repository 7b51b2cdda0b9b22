#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "nacl/error.hpp"
#include "nacl/losses.hpp"
#include "nacl/ops.hpp"
#include "test_util.hpp"

using namespace nacl;
using nacl::testing::manual_batch;
using nacl::testing::random_batch;

namespace {

const Encoder kIdentity = Encoder::pass_through(2);
const EstimatorConfig kG0{EstimatorKind::kG0, 1.0, 0.0, 0.0};

// -log(sum e^{s+} / (sum e^{s+} + K * G)) evaluated from scalars.
double oracle_term(const std::vector<double>& pos, double k_times_g) {
  double num = 0.0;
  for (double s : pos) num += std::exp(s);
  return -std::log(num / (num + k_times_g));
}

// x = [1, 0], x+ = [1, 0], x- = [0, 1]: s+ = 1, s- = 0.
ContrastiveBatch unit_batch(std::vector<double> negative) {
  return manual_batch(Tensor::matrix(3, 2, {1, 0, 1, 0, negative[0], negative[1]}), {0}, {{1}},
                      {{2}});
}

// MIXNCA example with M = 2: one negative, one fresh negative, partner [0, 1].
ContrastiveBatch mix_batch() {
  return manual_batch(Tensor::matrix(4, 2, {1, 0, 1, 0, 0, 1, 0, 1}), {0}, {{1, 1}}, {{2}}, {},
                      {{3}}, {{2}});
}

std::vector<std::vector<std::size_t>> shuffled_negatives(const ContrastiveBatch& b,
                                                         std::mt19937_64& rng) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t a = 0; a < b.anchors; ++a) {
    const auto first = b.negative_index.begin() +
                       static_cast<std::ptrdiff_t>(a * b.negatives_per_anchor);
    std::vector<std::size_t> set(first, first + static_cast<std::ptrdiff_t>(b.negatives_per_anchor));
    std::shuffle(set.begin(), set.end(), rng);
    out.push_back(set);
  }
  return out;
}

}  // namespace

TEST(ContrastiveLoss, StipulatedEmbeddings) {
  const double expected = oracle_term({1.0}, 1.0);
  EXPECT_NEAR(expected, 0.313262, 1e-6);
  EXPECT_NEAR(contrastive_loss(kIdentity, unit_batch({0, 1}), kG0).item(), expected, 1e-15);
}

TEST(ContrastiveLoss, SymmetricCaseIsLogTwo) {
  EXPECT_NEAR(contrastive_loss(kIdentity, unit_batch({1, 0}), kG0).item(), std::log(2.0), 1e-15);
}

TEST(ContrastiveLoss, InvariantUnderNegativePermutation) {
  std::mt19937_64 rng(7);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Encoder enc = Encoder::init(nacl::testing::small_encoder(seed));
    ContrastiveBatch b = random_batch(seed, 4, 1, false);
    const double before = contrastive_loss(enc, b, kG0).item();
    const auto sets = shuffled_negatives(b, rng);
    b.negative_index.clear();
    for (const auto& s : sets) b.negative_index.insert(b.negative_index.end(), s.begin(), s.end());
    EXPECT_NEAR(contrastive_loss(enc, b, kG0).item(), before, 1e-12);
  }
}

TEST(ContrastiveLoss, RejectsMultiplePositives) {
  EXPECT_THROW(contrastive_loss(kIdentity, mix_batch(), kG0), ValueError);
}

TEST(ContrastiveLoss, DebiasedEstimatorsNeedDebiasPositives) {
  const EstimatorConfig g1{EstimatorKind::kG1, 1.0, 0.1, 1.0};
  EXPECT_THROW(contrastive_loss(kIdentity, unit_batch({0, 1}), g1), ValueError);
}

TEST(NcaLoss, TwoPositivesOneNegative) {
  const auto b = manual_batch(Tensor::matrix(4, 2, {1, 0, 1, 0, 1, 0, 1, 0}), {0}, {{1, 2}},
                              {{3}});
  EXPECT_NEAR(nca_loss(kIdentity, b, kG0, 2).item(), std::log(1.5), 1e-15);
  EXPECT_NEAR(std::log(1.5), 0.405465, 1e-6);
}

TEST(NcaLoss, SinglePositiveIsContrastiveLoss) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Encoder enc = Encoder::init(nacl::testing::small_encoder(seed));
    const auto b = random_batch(seed, 5, 1, false);
    EXPECT_EQ(nca_loss(enc, b, kG0, 1).item(), contrastive_loss(enc, b, kG0).item());
  }
}

TEST(NcaLoss, DuplicatePositiveLowersLoss) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Encoder enc = Encoder::init(nacl::testing::small_encoder(seed));
    const auto b = random_batch(seed, 4, 1, false);
    ContrastiveBatch dup = b;
    dup.positives_per_anchor = 2;
    dup.positive_index.clear();
    for (auto p : b.positive_index) dup.positive_index.insert(dup.positive_index.end(), {p, p});
    EXPECT_LT(nca_loss(enc, dup, kG0, 2).item(), nca_loss(enc, b, kG0, 1).item());
  }
}

TEST(NcaLoss, MCannotExceedBatchPositives) {
  EXPECT_THROW(nca_loss(kIdentity, unit_batch({0, 1}), kG0, 2), ValueError);
}

TEST(MixNcaLoss, HandEvaluatedExample) {
  const double r = 1.0 / std::sqrt(2.0);
  const double mixed_sim = r;  // [1, 0] . normalize([0.5, 0.5])
  const double omega = std::exp(mixed_sim) / (std::exp(mixed_sim) + 1.0);
  EXPECT_NEAR(omega, 0.669762, 1e-6);
  const double expected =
      oracle_term({1.0}, 1.0) + 0.5 * -std::log(omega) + 0.5 * -std::log(1.0 - omega);
  EXPECT_NEAR(expected, 1.067649, 1e-6);
  EXPECT_NEAR(mixnca_omegas(kIdentity, mix_batch(), kG0, 2, 0.5).item(), omega, 1e-15);
  EXPECT_NEAR(mixnca_loss(kIdentity, mix_batch(), kG0, 2, 0.5).item(), expected, 1e-14);
}

TEST(MixNcaLoss, SinglePositiveIsContrastiveLoss) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Encoder enc = Encoder::init(nacl::testing::small_encoder(seed));
    const auto b = random_batch(seed, 5, 1, true);
    EXPECT_EQ(mixnca_loss(enc, b, kG0, 1, 0.7).item(), contrastive_loss(enc, b, kG0).item());
  }
}

TEST(MixNcaLoss, LambdaOneScoresThePositiveAgainstFreshNegatives) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Encoder enc = Encoder::init(nacl::testing::small_encoder(seed));
    const auto b = random_batch(seed, 4, 2, true);
    const auto base = b.with_positives(1);
    ContrastiveBatch fresh = base;
    fresh.negative_index = b.fresh_negative_index[0];
    const double expected =
        contrastive_loss(enc, base, kG0).item() + contrastive_loss(enc, fresh, kG0).item();
    EXPECT_NEAR(mixnca_loss(enc, b, kG0, 2, 1.0).item(), expected, 1e-12);
  }
}

TEST(MixNcaLoss, OmegasStayInsideTheOpenUnitInterval) {
  const EstimatorConfig g2{EstimatorKind::kG2, 1.0, 0.01, 1.0};
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Encoder enc = Encoder::init(nacl::testing::small_encoder(seed));
    const auto b = random_batch(seed, 4, 3, true);
    const Tensor omega = mixnca_omegas(enc, b, g2, 3, 0.5);
    ASSERT_EQ(omega.shape(), (Shape{4, 2}));
    for (double w : omega.data()) {
      EXPECT_GT(w, 0.0);
      EXPECT_LT(w, 1.0);
    }
    EXPECT_TRUE(std::isfinite(mixnca_loss(enc, b, g2, 3, 0.5).item()));
  }
}

TEST(MixNcaLoss, RejectsBadLambdaAndMissingFreshSets) {
  EXPECT_THROW(mixnca_loss(kIdentity, mix_batch(), kG0, 2, 0.0), ValueError);
  EXPECT_THROW(mixnca_loss(kIdentity, mix_batch(), kG0, 2, 1.5), ValueError);
  const auto b = manual_batch(Tensor::matrix(3, 2, {1, 0, 1, 0, 0, 1}), {0}, {{1, 1}}, {{2}});
  EXPECT_THROW(mixnca_loss(kIdentity, b, kG0, 2, 0.5), ValueError);
}

TEST(AdversarialWeight, MatchesStandardLossExamples) {
  EXPECT_NEAR(adversarial_weight(kIdentity, unit_batch({0, 1}), kG0).item(), 0.313262, 1e-6);
  EXPECT_NEAR(adversarial_weight(kIdentity, unit_batch({1, 0}), kG0).item(), std::log(2.0),
              1e-15);
  const double expected = std::log(1.0 + std::exp(-2.0));
  EXPECT_NEAR(expected, 0.126928, 1e-6);
  EXPECT_NEAR(adversarial_weight(kIdentity, unit_batch({-1, 0}), kG0).item(), expected, 1e-15);
}

TEST(AdversarialWeight, EqualsPerAnchorLossAndIsDetached) {
  const EstimatorConfig g2{EstimatorKind::kG2, 1.0, 0.01, 1.0};
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Encoder enc = Encoder::init(nacl::testing::small_encoder(seed));
    const auto b = random_batch(seed, 4, 1, false);
    Tape tape;
    const Encoder tracked = enc.track(tape);
    const Tensor w = adversarial_weight(tracked, b, g2);
    EXPECT_FALSE(w.tracked());
    EXPECT_LE(max_abs_diff(w, per_anchor_loss(enc, b, g2)), 1e-12);
  }
}

TEST(RobustLoss, ZeroStrengthAttackIsTheStandardLoss) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Encoder enc = Encoder::init(nacl::testing::small_encoder(seed));
    const auto b = random_batch(seed, 4, 1, false);
    const Tensor adv = b.positive_inputs();
    const Tensor adv2 = reshape(adv, {b.anchors, b.input_dim()});
    EXPECT_NEAR(robust_loss(enc, b, adv2, kG0, Weighting::kConstantOne).item(),
                contrastive_loss(enc, b, kG0).item(), 1e-14);
  }
}

TEST(RobustLoss, WeightedProductExample) {
  // s+ = 1, s- = 0 for the weight; the adversarial positive [0, 1] has s = 0.
  const auto b = unit_batch({0, 1});
  const Tensor adv = Tensor::matrix({{0, 1}});
  const double expected = std::log(2.0) * oracle_term({1.0}, 1.0);
  EXPECT_NEAR(expected, 0.217137, 1e-6);
  EXPECT_NEAR(robust_loss(kIdentity, b, adv, kG0, Weighting::kAdversarialHat).item(), expected,
              1e-15);
  EXPECT_NEAR(robust_loss(kIdentity, b, adv, kG0, Weighting::kConstantOne).item(),
              std::log(2.0), 1e-15);
}

TEST(RobustLoss, WeightContributesNoGradient) {
  const EstimatorConfig g2{EstimatorKind::kG2, 1.0, 0.01, 1.0};
  const Encoder enc = Encoder::init(nacl::testing::small_encoder(3));
  const auto b = random_batch(3, 4, 1, false);
  const Tensor adv = contrastive_adv_positive(enc, b, g2, AttackConfig::fgsm(0.05));
  const Tensor w = adversarial_weight(enc, b, g2);
  Tape t1, t2;
  const Encoder e1 = enc.track(t1), e2 = enc.track(t2);
  const auto g_hat = t1.backward(robust_loss(e1, b, adv, g2, Weighting::kAdversarialHat));
  const auto g_fixed =
      t2.backward(robust_loss(e2, b, adv, g2, Weighting::kConstantOne, std::optional<Tensor>(w)));
  for (std::size_t k = 0; k < enc.parameters().size(); ++k) {
    EXPECT_TRUE(bitwise_equal(g_hat.grad(e1.parameters()[k]), g_fixed.grad(e2.parameters()[k])));
  }
}

TEST(IntNaClLoss, AlphaZeroIsNaClAndNeverAttacks) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Encoder enc = Encoder::init(nacl::testing::small_encoder(seed));
    const auto b = random_batch(seed, 4, 3, true);
    LossConfig c = preset("intnacl_fig1");
    c.positives = 3;
    c.alpha = 0.0;
    std::size_t attacks = 0;
    EXPECT_EQ(intnacl_loss(enc, b, c, {std::nullopt, std::nullopt, &attacks}).item(),
              mixnca_loss(enc, b, c.g1, 3, 0.5).item());
    c.family = LossFamily::kNca;
    EXPECT_EQ(intnacl_loss(enc, b, c, {std::nullopt, std::nullopt, &attacks}).item(),
              nca_loss(enc, b, c.g1, 3).item());
    EXPECT_EQ(attacks, 0u);
    c.alpha = 1.0;
    intnacl_loss(enc, b, c, {std::nullopt, std::nullopt, &attacks});
    EXPECT_EQ(attacks, 1u);
  }
}

TEST(IntNaClLoss, SumOfComponentExamples) {
  LossConfig c;
  c.family = LossFamily::kMixNca;
  c.g1 = kG0;
  c.g2 = kG0;
  c.positives = 2;
  c.lambda = 0.5;
  c.alpha = 1.0;
  c.weighting = Weighting::kAdversarialHat;
  IntNaClOptions opts;
  opts.adv_inputs = Tensor::matrix({{0, 1}});
  const double omega = std::exp(1.0 / std::sqrt(2.0)) / (std::exp(1.0 / std::sqrt(2.0)) + 1.0);
  const double mix = oracle_term({1.0}, 1.0) - 0.5 * std::log(omega) - 0.5 * std::log(1 - omega);
  const double robust = std::log(2.0) * oracle_term({1.0}, 1.0);
  EXPECT_NEAR(mix + robust, 1.284785, 1e-6);
  EXPECT_NEAR(intnacl_loss(kIdentity, mix_batch(), c, opts).item(), mix + robust, 1e-14);
}

TEST(IntNaClLoss, SinglePositiveIsIntCl) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Encoder enc = Encoder::init(nacl::testing::small_encoder(seed));
    const auto b = random_batch(seed, 4, 1, false);
    LossConfig nacl = preset("intnacl_fig1");
    nacl.positives = 1;
    EXPECT_EQ(intnacl_loss(enc, b, nacl).item(), intnacl_loss(enc, b, preset("intcl_fig1")).item());
  }
}

TEST(Presets, MatchTheSpecialCaseTable) {
  const auto simclr = preset("simclr");
  EXPECT_EQ(simclr.g1.kind, EstimatorKind::kG0);
  EXPECT_EQ(simclr.positives, 1u);
  EXPECT_EQ(simclr.alpha, 0.0);
  EXPECT_EQ(preset("debiased").g1.kind, EstimatorKind::kG1);
  EXPECT_EQ(preset("debiased_hardneg").g1.kind, EstimatorKind::kG2);
  const auto adv = preset("adv");
  EXPECT_EQ(adv.alpha, 1.0);
  EXPECT_EQ(adv.g2.kind, EstimatorKind::kG0);
  EXPECT_EQ(adv.weighting, Weighting::kConstantOne);
  const auto intcl = preset("intcl_fig1");
  EXPECT_EQ(intcl.g1.kind, EstimatorKind::kG2);
  EXPECT_EQ(intcl.g2.kind, EstimatorKind::kG2);
  EXPECT_EQ(intcl.weighting, Weighting::kAdversarialHat);
  EXPECT_EQ(intcl.positives, 1u);
  const auto fig1 = preset("intnacl_fig1");
  EXPECT_EQ(fig1.family, LossFamily::kMixNca);
  EXPECT_EQ(fig1.positives, 5u);
  EXPECT_EQ(fig1.lambda, 0.5);
  EXPECT_EQ(fig1.alpha, 1.0);
  EXPECT_EQ(fig1.g1.tau_plus, 0.01);
  EXPECT_EQ(fig1.g1.beta, 1.0);
  for (const auto& name : preset_names()) EXPECT_NO_THROW(preset(name).validate());
}

TEST(Presets, UnknownNameListsValidOnes) {
  try {
    preset("moco");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("intnacl_fig1"), std::string::npos);
  }
}

TEST(Presets, SimclrIsTheContrastiveLoss) {
  const Encoder enc = Encoder::init(nacl::testing::small_encoder(1));
  const auto b = random_batch(1, 6, 1, false);
  EXPECT_EQ(intnacl_loss(enc, b, preset("simclr")).item(),
            contrastive_loss(enc, b, EstimatorConfig{}).item());
}

TEST(LossConfigJson, RoundTrips) {
  LossConfig c = preset("intnacl_fig1");
  c.attack.domain_bounds = DomainBounds{-2.0, 2.0};
  c.attack_anchor = true;
  const nlohmann::json j = c;
  EXPECT_EQ(j.get<LossConfig>(), c);
  EXPECT_THROW(nlohmann::json({{"family", "triplet"}}).get<LossConfig>(), ConfigError);
}

TEST(LossConfig, Validation) {
  LossConfig c;
  c.lambda = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = LossConfig{};
  c.positives = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = LossConfig{};
  c.alpha = -1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Gradients, LossesMatchFiniteDifferences) {
  for (const auto& name : preset_names()) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      const Encoder enc = Encoder::init(nacl::testing::small_encoder(seed));
      LossConfig c = preset(name);
      c.positives = std::min<std::size_t>(c.positives, 3);
      const auto b = random_batch(seed, 3, c.positives, c.family == LossFamily::kMixNca);
      IntNaClOptions opts;
      if (c.alpha > 0.0) {
        c.attack = AttackConfig::fgsm(0.05);
        opts.adv_inputs = contrastive_adv_positive(enc, b, c.g2, c.attack);
        opts.fixed_weights = adversarial_weight(enc, b, c.g2);
        if (c.weighting == Weighting::kConstantOne) opts.fixed_weights.reset();
      }
      const double we = nacl::testing::weight_gradient_error(
          enc, [&](const Encoder& e) { return intnacl_loss(e, b, c, opts); });
      const double ie = nacl::testing::input_gradient_error(
          b, [&](const ContrastiveBatch& bb) { return intnacl_loss(enc, bb, c, opts); });
      EXPECT_LE(we, 1e-5) << name << " seed " << seed;
      EXPECT_LE(ie, 1e-5) << name << " seed " << seed;
    }
  }
}
