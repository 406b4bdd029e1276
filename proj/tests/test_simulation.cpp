#include <gtest/gtest.h>

#include <cmath>

#include "dtameta/error.hpp"
#include "dtameta/numeric.hpp"
#include "dtameta/selection.hpp"
#include "dtameta/simulation.hpp"
#include "dtameta/sroc.hpp"
#include "test_support.hpp"

using namespace dtameta;

namespace {

SimConfig config(int m, std::uint64_t seed, ArmSizeLaw arms = ArmSizeLaw::uniform(50, 300)) {
  SimConfig c;
  c.params = {1.8, 1.2, 0.8, 0.9, -0.4};
  c.n_studies = m;
  c.arms = arms;
  c.seed = seed;
  return c;
}

}  // namespace

TEST(Simulation, Deterministic) {
  const auto a = simulate_population(config(200, 9));
  const auto b = simulate_population(config(200, 9));
  EXPECT_EQ(to_csv(a.table), to_csv(b.table));
  EXPECT_EQ(a.true_se, b.true_se);
  const auto c = simulate_population(config(200, 10));
  EXPECT_NE(to_csv(a.table), to_csv(c.table));
}

TEST(Simulation, PrefixStable) {
  // keyed streams: the first studies do not depend on how many are drawn
  const auto a = simulate_population(config(50, 9));
  const auto b = simulate_population(config(80, 9));
  for (int i = 0; i < 50; ++i) {
    EXPECT_EQ(a.table.studies[i].tp, b.table.studies[i].tp);
    EXPECT_EQ(a.table.studies[i].tn, b.table.studies[i].tn);
  }
}

TEST(Simulation, LawOfLargeNumbers) {
  auto cfg = config(100000, 3, ArmSizeLaw::fixed(200));
  const auto pop = simulate_population(cfg);
  double sum = 0, sum2 = 0;
  for (double se : pop.true_se) {
    const double l = logit(se);
    sum += l;
    sum2 += l * l;
  }
  const double n = pop.true_se.size();
  const double mean = sum / n;
  const double sd = std::sqrt(sum2 / n - mean * mean);
  EXPECT_NEAR(mean, cfg.params.mu1, 3 * sd / std::sqrt(n));
  EXPECT_NEAR(sd, cfg.params.tau1, 0.01);
  // Observed logits carry a binomial small-sample bias, so their mean is compared with its exact
  // expectation given each study's latent sensitivity and specificity.
  const auto s = prepare_sample(pop.table);
  const int arm = 200;
  auto zero_or_full = [&](double q) {
    return std::exp(log_binomial_coefficient(arm, 0) + arm * std::log1p(-q)) +
           std::exp(log_binomial_coefficient(arm, arm) + arm * std::log(q));
  };
  double obs = 0, obs2 = 0, expected = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    obs += s.points[i].y1;
    obs2 += s.points[i].y1 * s.points[i].y1;
    const double q = pop.true_se[i];
    const double other_zero = zero_or_full(pop.true_sp[i]);
    double e = 0.0;
    for (int k = 0; k <= arm; ++k) {
      const double pmf = std::exp(log_binomial_coefficient(arm, k) + k * std::log(q) + (arm - k) * std::log1p(-q));
      const double corrected = std::log((k + 0.5) / (arm - k + 0.5));
      if (k == 0 || k == arm) {
        e += pmf * corrected;
      } else {
        e += pmf * ((1 - other_zero) * std::log(static_cast<double>(k) / (arm - k)) + other_zero * corrected);
      }
    }
    expected += e;
  }
  const double om = obs / n;
  EXPECT_NEAR(om, expected / n, 3 * std::sqrt(obs2 / n - om * om) / std::sqrt(n));
  for (const auto& st : pop.table.studies) {
    ASSERT_EQ(st.n_diseased(), 200);
    ASSERT_EQ(st.n_healthy(), 200);
  }
}

TEST(Simulation, NoHeterogeneity) {
  auto cfg = config(30, 4);
  cfg.params.tau1 = 0.0;
  cfg.params.tau2 = 0.0;
  const auto pop = simulate_population(cfg);
  for (std::size_t i = 1; i < pop.true_se.size(); ++i) {
    EXPECT_EQ(pop.true_se[i], pop.true_se[0]);
    EXPECT_EQ(pop.true_sp[i], pop.true_sp[0]);
  }
  EXPECT_NEAR(pop.true_se[0], expit(1.8), 1e-15);
}

TEST(Simulation, ArmLaws) {
  const auto u = arm_size_law_from_string("uniform:10:20");
  EXPECT_EQ(u.kind, ArmSizeKind::uniform);
  auto cfg = config(500, 5, u);
  for (const auto& st : simulate_population(cfg).table.studies) {
    EXPECT_GE(st.n_diseased(), 10);
    EXPECT_LE(st.n_diseased(), 20);
  }
  EXPECT_EQ(arm_size_law_from_string("fixed:7").a, 7.0);
  EXPECT_EQ(arm_size_law_from_string("lognormal:4:0.9").kind, ArmSizeKind::lognormal);
  EXPECT_THROW(arm_size_law_from_string("poisson:3"), Error);
}

TEST(ApplySelection, Extremes) {
  const auto pop = simulate_population(config(300, 6));
  const auto m = SelectionMechanism::preset(MechanismMode::sensitivity, SelectionForm::step);
  const auto all = apply_selection(pop.table, m, 1.0, CorrectionStrategy::zero_studies_only, 1);
  EXPECT_EQ(all.empirical_p, 1.0);
  EXPECT_EQ(all.published.size(), 300u);

  const auto sig = apply_selection(pop.table, m, 0.0, CorrectionStrategy::zero_studies_only, 1);
  const auto s = prepare_sample(pop.table);
  std::size_t j = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const bool significant = t_statistic(s.points[i], m) >= m.cutoff;
    const bool kept = j < sig.kept.size() && sig.kept[j] == i;
    EXPECT_EQ(significant, kept);
    if (kept) ++j;
  }
  EXPECT_EQ(j, sig.kept.size());
}

TEST(ApplySelection, EmpiricalRateMatchesExactBinomialRate) {
  auto cfg = config(100000, 7, ArmSizeLaw::fixed(400));
  cfg.params.mu1 = 0.3;
  const auto pop = simulate_population(cfg);
  const auto m = SelectionMechanism::preset(MechanismMode::sensitivity, SelectionForm::step);
  const double beta = 0.3;
  const auto out = apply_selection(pop.table, m, beta, CorrectionStrategy::zero_studies_only, 11);

  // P(t >= u) summed over the binomial law of tp given the latent sensitivity
  const int arm = 400;
  auto significant = [&](double tp, double fn) { return std::log(tp / fn) / std::sqrt(1 / tp + 1 / fn) >= m.cutoff; };
  double expected = 0.0;
  for (std::size_t i = 0; i < pop.true_se.size(); ++i) {
    const double q = pop.true_se[i];
    const double r = pop.true_sp[i];
    const double other_zero = std::pow(r, arm) + std::pow(1 - r, arm);
    double sig = 0.0;
    for (int k = 0; k <= arm; ++k) {
      const double pmf = std::exp(log_binomial_coefficient(arm, k) + k * std::log(q) + (arm - k) * std::log1p(-q));
      if (pmf < 1e-300) continue;
      const bool corrected = significant(k + 0.5, arm - k + 0.5);
      if (k == 0 || k == arm) {
        sig += pmf * corrected;
      } else {
        sig += pmf * ((1 - other_zero) * significant(k, arm - k) + other_zero * corrected);
      }
    }
    expected += beta + (1 - beta) * sig;
  }
  expected /= pop.true_se.size();
  EXPECT_NEAR(out.empirical_p, expected, 3 * std::sqrt(expected * (1 - expected) / pop.true_se.size()));
}

TEST(ApplySelection, EmpiricalRateNearNormalModelRate) {
  // The model probability treats the observed within-study variance as fixed; with binomial
  // counts of 400 per arm this is accurate to within a percentage point.
  auto cfg = config(100000, 7, ArmSizeLaw::fixed(400));
  cfg.params.mu1 = 0.3;
  const auto pop = simulate_population(cfg);
  const auto m = SelectionMechanism::preset(MechanismMode::sensitivity, SelectionForm::step);
  const double beta = 0.3;
  const auto out = apply_selection(pop.table, m, beta, CorrectionStrategy::zero_studies_only, 11);
  const auto s = prepare_sample(pop.table);
  double expected = 0.0;
  for (const auto& p : s.points) expected += study_publish_prob(cfg.params, p.s1sq, p.s2sq, m, beta);
  expected /= s.size();
  EXPECT_NEAR(out.empirical_p, expected, 0.01);
}

TEST(ApplySelection, BetaForTargetRate) {
  auto cfg = config(2000, 8, ArmSizeLaw::uniform(100, 500));
  cfg.params.mu1 = 0.3;
  const auto pop = simulate_population(cfg);
  const auto m = SelectionMechanism::preset(MechanismMode::sensitivity, SelectionForm::step);
  const double beta = beta_for_publication_rate(pop.table, m, 0.6);
  const auto out = apply_selection(pop.table, m, beta, CorrectionStrategy::zero_studies_only, 3);
  EXPECT_NEAR(out.empirical_p, 0.6, 4 * std::sqrt(0.24 / 2000));
  EXPECT_THROW(beta_for_publication_rate(pop.table, m, 0.01), Error);
}

TEST(Simulation, TruthJson) {
  const auto j = truth_json(config(10, 1));
  EXPECT_NEAR(j["sauc"]["sroc"].get<double>(), sauc_value({1.8, 1.2, 0.8, 0.9, -0.4}, CurveKind::sroc), 1e-15);
  EXPECT_EQ(j["n_studies"], 10);
}
