#include <gtest/gtest.h>

#include <boost/math/distributions/normal.hpp>
#include <cmath>
#include <random>
#include <sstream>

#include "dtameta/error.hpp"
#include "dtameta/numeric.hpp"
#include "dtameta/reitsma.hpp"
#include "dtameta/selection.hpp"
#include "test_support.hpp"

using namespace dtameta;
using dtameta::testing::bvn_logpdf;
using dtameta::testing::synthetic_table;

namespace {

const boost::math::normal_distribution<double> kStdNormal;

double phi_cdf(double z) { return boost::math::cdf(kStdNormal, z); }

struct Moments {
  double mean;  // of t
  double sd;
};

// Distribution of t = (c.y)/d under y ~ N(mu, Sigma + diag(s^2)) with the observed d.
Moments t_moments(const BivariateParams& p, const LogitPoint& pt, double c1, double c2) {
  const double d = std::sqrt(c1 * c1 * pt.s1sq + c2 * c2 * pt.s2sq);
  const double var = c1 * c1 * (p.tau1 * p.tau1 + pt.s1sq) + 2 * c1 * c2 * p.rho * p.tau1 * p.tau2 +
                     c2 * c2 * (p.tau2 * p.tau2 + pt.s2sq);
  return {(c1 * p.mu1 + c2 * p.mu2) / d, std::sqrt(var) / d};
}

double oracle_step_nll(const BivariateParams& p, const BivariateSample& s, const SelectionMechanism& m,
                       double beta) {
  double nll = 0.0;
  for (const auto& pt : s.points) {
    const auto mo = t_moments(p, pt, m.c1, m.c2);
    const double q = 1 - phi_cdf((m.cutoff - mo.mean) / mo.sd);
    const double t = (m.c1 * pt.y1 + m.c2 * pt.y2) / std::sqrt(m.c1 * m.c1 * pt.s1sq + m.c2 * m.c2 * pt.s2sq);
    const double a = t >= m.cutoff ? 1.0 : beta;
    nll -= bvn_logpdf(pt.y1, pt.y2, p.mu1, p.mu2, p.tau1 * p.tau1 + pt.s1sq, p.tau2 * p.tau2 + pt.s2sq,
                      p.rho * p.tau1 * p.tau2) +
           std::log(a) - std::log(beta + (1 - beta) * q);
  }
  return nll;
}

// Probit publication probability by Gauss-Hermite integration over t.
double probit_publish_prob(const Moments& mo, double alpha, double slope) {
  const int n = 80;
  static std::vector<double> x, w;
  if (x.empty()) {
    // nodes of the probabilists' rule via a fine midpoint grid; adequate at this smoothness
    const int k = 20000;
    for (int i = 0; i < k; ++i) {
      const double z = -10 + 20.0 * (i + 0.5) / k;
      x.push_back(z);
      w.push_back(std::exp(-0.5 * z * z) / std::sqrt(2 * M_PI) * 20.0 / k);
    }
  }
  (void)n;
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) total += w[i] * phi_cdf(alpha + slope * (mo.mean + mo.sd * x[i]));
  return total;
}

double error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return static_cast<double>(e.code());
  }
  return -1.0;
}

BivariateSample cov_sample() { return prepare_sample(synthetic_table(30, 41)); }

}  // namespace

TEST(TStatistic, Examples) {
  const double r = 1 / std::sqrt(2.0);
  EXPECT_NEAR(t_statistic(2.0, 1.0, 0.25, 0.25, r, r), 3 / std::sqrt(2.0) / 0.5, 1e-12);
  EXPECT_NEAR(t_statistic(2.0, 1.0, 0.25, 0.25, r, r), 4.2426, 1e-4);
  EXPECT_NEAR(t_statistic(1.3, -7.0, 0.09, 0.5, 1.0, 0.0), 1.3 / 0.3, 1e-12);
  for (double lambda : {0.1, 2.0, 37.0}) {
    EXPECT_NEAR(t_statistic(1.3, 0.4, 0.09, 0.5, 0.6 * lambda, 0.8 * lambda),
                t_statistic(1.3, 0.4, 0.09, 0.5, 0.6, 0.8), 1e-12);
  }
  EXPECT_EQ(error_of([] { t_statistic(1.0, 1.0, 0.1, 0.1, 0.0, 0.0); }), static_cast<double>(ErrorCode::degenerate));
}

TEST(Mechanism, PresetsAndParsing) {
  const auto se = SelectionMechanism::preset(MechanismMode::sensitivity);
  EXPECT_EQ(se.c1, 1.0);
  EXPECT_EQ(se.c2, 0.0);
  const auto sp = mechanism_from_string("sp");
  EXPECT_EQ(sp.c1, 0.0);
  EXPECT_EQ(sp.c2, 1.0);
  const auto c = SelectionMechanism::custom(3.0, 4.0);
  EXPECT_NEAR(c.c1, 0.6, 1e-15);
  EXPECT_NEAR(c.c2, 0.8, 1e-15);
  EXPECT_EQ(mechanism_from_string("custom:3:4").c2, c.c2);
  EXPECT_EQ(mechanism_from_string("est").mode, MechanismMode::estimated);
  EXPECT_EQ(mechanism_from_string("lndor", SelectionForm::step).form, SelectionForm::step);
  EXPECT_NE(error_of([] { SelectionMechanism::custom(-1.0, 1.0); }), -1.0);
}

TEST(PublishProbability, Limits) {
  const BivariateParams p{1.0, 0.5, 0.6, 0.7, -0.3};
  auto m = SelectionMechanism::preset(MechanismMode::ln_dor, SelectionForm::step);
  EXPECT_EQ(study_publish_prob(p, 0.2, 0.3, m, 1.0), 1.0);
  m.cutoff = -1e9;
  EXPECT_NEAR(study_publish_prob(p, 0.2, 0.3, m, 0.0), 1.0, 1e-15);
}

TEST(PublishProbability, MonteCarlo) {
  const BivariateParams p{1.0, 0.5, 0.6, 0.7, -0.3};
  const auto m = SelectionMechanism::preset(MechanismMode::ln_dor, SelectionForm::step);
  const double s1sq = 0.2, s2sq = 0.3, beta = 0.3;
  const double analytic = study_publish_prob(p, s1sq, s2sq, m, beta);
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> z;
  std::uniform_real_distribution<double> u;
  const double v11 = p.tau1 * p.tau1 + s1sq, v22 = p.tau2 * p.tau2 + s2sq, v12 = p.rho * p.tau1 * p.tau2;
  const double l11 = std::sqrt(v11), l21 = v12 / l11, l22 = std::sqrt(v22 - l21 * l21);
  const int n = 1000000;
  int kept = 0;
  for (int i = 0; i < n; ++i) {
    const double a = z(rng), b = z(rng);
    const double y1 = p.mu1 + l11 * a, y2 = p.mu2 + l21 * a + l22 * b;
    const bool coin = u(rng) < beta;
    if (t_statistic(y1, y2, s1sq, s2sq, m.c1, m.c2) >= m.cutoff || coin) ++kept;
  }
  const double rate = static_cast<double>(kept) / n;
  EXPECT_NEAR(rate, analytic, 3 * std::sqrt(analytic * (1 - analytic) / n));
}

TEST(SolveBeta, ClosedFormHalf) {
  // P(t >= u) = 1/2 for every study: the mean of t sits on the cutoff.
  const auto m = SelectionMechanism::preset(MechanismMode::sensitivity, SelectionForm::step);
  BivariateSample s;
  for (int i = 0; i < 10; ++i) {
    s.ids.push_back("s" + std::to_string(i));
    s.points.push_back({0.1 * i, 0.0, 0.25, 0.25});
  }
  const BivariateParams p{1.645 * 0.5, 0.0, 1e-9, 1.0, 0.0};
  EXPECT_NEAR(significance_probability(p, 0.25, 0.25, 1.0, 0.0, 1.645), 0.5, 1e-9);
  EXPECT_NEAR(solve_beta(p, s, m, 0.75), 0.5, 1e-8);
  EXPECT_EQ(solve_beta(p, s, m, 1.0), 1.0);
}

TEST(SolveBeta, ConstraintWhenEverythingSignificant) {
  const auto m = SelectionMechanism::preset(MechanismMode::sensitivity, SelectionForm::step);
  const auto s = cov_sample();
  const BivariateParams p{12.0, 1.0, 0.1, 0.5, 0.0};
  EXPECT_EQ(error_of([&] { solve_beta(p, s, m, 0.8); }), static_cast<double>(ErrorCode::constraint));
}

TEST(SolveBeta, NondecreasingInP) {
  const auto s = cov_sample();
  const auto m = SelectionMechanism::preset(MechanismMode::sensitivity, SelectionForm::step);
  const BivariateParams p{0.2, 0.6, 0.8, 0.9, -0.4};
  double prev = -1.0;
  for (double pp = 0.5; pp <= 1.0 + 1e-12; pp += 0.05) {
    const double b = solve_beta(p, s, m, std::min(pp, 1.0));
    EXPECT_GE(b, prev - 1e-12);
    prev = b;
    double sum = 0.0;
    for (const auto& pt : s.points) sum += 1 / study_publish_prob(p, pt.s1sq, pt.s2sq, m, b);
    EXPECT_NEAR(sum, s.size() / std::min(pp, 1.0), 1e-6 * sum);
  }
}

TEST(SolveProbit, ConstraintHolds) {
  const auto s = cov_sample();
  const auto m = SelectionMechanism::preset(MechanismMode::ln_dor);
  const BivariateParams p{1.5, 1.0, 0.8, 0.9, -0.4};
  EXPECT_TRUE(std::isinf(solve_probit_intercept(p, s, m, 0.7, 1.0)));
  for (double slope : {0.0, 0.5, 1.7}) {
    for (double pp : {0.9, 0.6, 0.3}) {
      const double a = solve_probit_intercept(p, s, m, slope, pp);
      double sum = 0.0;
      for (const auto& pt : s.points) sum += 1 / probit_publish_prob(t_moments(p, pt, m.c1, m.c2), a, slope);
      EXPECT_NEAR(sum, s.size() / pp, 1e-5 * sum) << slope << " " << pp;
    }
  }
}

TEST(ConditionalNll, ReducesExactlyAtPOne) {
  const auto s = cov_sample();
  const BivariateParams p{1.5, 1.0, 0.8, 0.9, -0.4};
  for (auto form : {SelectionForm::step, SelectionForm::probit}) {
    for (auto mode : {MechanismMode::ln_dor, MechanismMode::sensitivity, MechanismMode::specificity}) {
      EXPECT_EQ(conditional_nll(p, s, SelectionMechanism::preset(mode, form), 1.0), reitsma_nll(p, s));
    }
  }
}

TEST(ConditionalNll, StepMatchesOracle) {
  const auto s = cov_sample();
  const auto m = SelectionMechanism::custom(0.8, 0.2, SelectionForm::step);
  const BivariateParams p{0.2, 0.6, 0.8, 0.9, -0.4};
  const auto terms = conditional_terms(p, s, m, 0.7);
  EXPECT_NEAR(terms.nll, oracle_step_nll(p, s, m, terms.beta), 1e-9 * std::abs(terms.nll));
}

TEST(ConditionalNll, ProbitMatchesOracle) {
  const auto s = cov_sample();
  const auto m = SelectionMechanism::preset(MechanismMode::sensitivity);
  const BivariateParams p{1.2, 1.1, 0.7, 0.9, -0.2};
  const double slope = 0.8;
  const auto terms = conditional_terms(p, s, m, 0.6, slope);
  double nll = 0.0;
  for (const auto& pt : s.points) {
    const double t = pt.y1 / std::sqrt(pt.s1sq);
    nll -= bvn_logpdf(pt.y1, pt.y2, p.mu1, p.mu2, p.tau1 * p.tau1 + pt.s1sq, p.tau2 * p.tau2 + pt.s2sq,
                      p.rho * p.tau1 * p.tau2) +
           std::log(phi_cdf(terms.alpha + slope * t)) -
           std::log(probit_publish_prob(t_moments(p, pt, m.c1, m.c2), terms.alpha, slope));
  }
  EXPECT_NEAR(terms.nll, nll, 1e-6 * std::abs(nll));
}

TEST(ImpliedUnpublished, Counts) {
  EXPECT_EQ(implied_unpublished(69, 1.0), 0);
  EXPECT_EQ(implied_unpublished(69, 0.8), 17);
  EXPECT_EQ(implied_unpublished(69, 0.6), 46);
  EXPECT_EQ(implied_unpublished(69, 0.4), 103);
  EXPECT_EQ(implied_unpublished(10, 0.5), 10);
}

TEST(FitSensitivity, ReducesToMaximumLikelihoodAtPOne) {
  const auto s = cov_sample();
  const auto ml = fit_reitsma(s);
  for (auto form : {SelectionForm::step, SelectionForm::probit}) {
    for (auto mode : {MechanismMode::estimated, MechanismMode::ln_dor}) {
      const auto f = fit_sensitivity(s, SelectionMechanism::preset(mode, form), 1.0);
      EXPECT_NEAR(f.params.mu1, ml.params.mu1, 1e-4);
      EXPECT_NEAR(f.params.mu2, ml.params.mu2, 1e-4);
      EXPECT_NEAR(f.params.tau1, ml.params.tau1, 1e-4);
      EXPECT_NEAR(f.params.tau2, ml.params.tau2, 1e-4);
      EXPECT_NEAR(f.params.rho, ml.params.rho, 1e-4);
      EXPECT_EQ(f.n_unpublished, 0);
      EXPECT_TRUE(f.converged);
    }
  }
}

TEST(FitSensitivity, ContrastScaleInvariance) {
  const auto s = cov_sample();
  const auto a = fit_sensitivity(s, SelectionMechanism::preset(MechanismMode::ln_dor), 0.7);
  const auto b = fit_sensitivity(s, SelectionMechanism::custom(5.0, 5.0), 0.7);
  EXPECT_NEAR(a.params.mu1, b.params.mu1, 1e-6);
  EXPECT_NEAR(a.params.rho, b.params.rho, 1e-6);
  EXPECT_NEAR(a.cond_loglik, b.cond_loglik, 1e-8);
}

TEST(FitSensitivity, MechanismSymmetryUnderArmSwap) {
  const auto t = synthetic_table(30, 42);
  for (auto form : {SelectionForm::probit, SelectionForm::step}) {
    const auto a = fit_sensitivity(prepare_sample(t), SelectionMechanism::preset(MechanismMode::sensitivity, form), 0.7);
    const auto b =
        fit_sensitivity(prepare_sample(swap_arms(t)), SelectionMechanism::preset(MechanismMode::specificity, form), 0.7);
    EXPECT_NEAR(a.params.mu1, b.params.mu2, 1e-4);
    EXPECT_NEAR(a.params.mu2, b.params.mu1, 1e-4);
    EXPECT_NEAR(a.params.tau1, b.params.tau2, 1e-4);
    EXPECT_NEAR(a.params.rho, b.params.rho, 1e-4);
    EXPECT_NEAR(a.cond_loglik, b.cond_loglik, 1e-6);
  }
}

TEST(FitSensitivity, SelectionLowersSensitivityEstimate) {
  const auto s = cov_sample();
  const auto ml = fit_reitsma(s);
  const auto f = fit_sensitivity(s, SelectionMechanism::preset(MechanismMode::sensitivity), 0.5);
  EXPECT_LT(f.params.mu1, ml.params.mu1);
  EXPECT_EQ(f.n_unpublished, 30);
  EXPECT_GE(f.beta, 0.0);
  EXPECT_LE(f.beta, kMaxProbitSlope);
}

TEST(FitSensitivity, Preconditions) {
  const auto s = cov_sample();
  const auto m = SelectionMechanism::preset(MechanismMode::ln_dor);
  EXPECT_NE(error_of([&] { fit_sensitivity(s, m, 0.0); }), -1.0);
  EXPECT_NE(error_of([&] { fit_sensitivity(s, m, 1.5); }), -1.0);
  BivariateSample one;
  one.ids = {s.ids[0]};
  one.points = {s.points[0]};
  EXPECT_EQ(error_of([&] { fit_sensitivity(one, m, 0.8); }), static_cast<double>(ErrorCode::nofit));
}

TEST(FitSensitivity, PermutationInvariance) {
  const auto s = cov_sample();
  BivariateSample r;
  r.ids.assign(s.ids.rbegin(), s.ids.rend());
  r.points.assign(s.points.rbegin(), s.points.rend());
  const auto m = SelectionMechanism::preset(MechanismMode::estimated);
  const auto a = fit_sensitivity(s, m, 0.6);
  const auto b = fit_sensitivity(r, m, 0.6);
  EXPECT_EQ(a.params.mu1, b.params.mu1);
  EXPECT_EQ(a.c1, b.c1);
  EXPECT_EQ(a.sauc.value, b.sauc.value);
}

class GridTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    sample_ = new BivariateSample(cov_sample());
    std::vector<SelectionMechanism> mechs;
    for (auto mode : {MechanismMode::estimated, MechanismMode::ln_dor, MechanismMode::sensitivity,
                      MechanismMode::specificity}) {
      mechs.push_back(SelectionMechanism::preset(mode));
    }
    grid_ = new SensitivityGrid(sensitivity_grid(*sample_, mechs, default_p_grid()));
  }
  static void TearDownTestSuite() {
    delete grid_;
    delete sample_;
  }
  static BivariateSample* sample_;
  static SensitivityGrid* grid_;
};

BivariateSample* GridTest::sample_ = nullptr;
SensitivityGrid* GridTest::grid_ = nullptr;

TEST_F(GridTest, SixteenCellsWithIdenticalFirstColumn) {
  ASSERT_EQ(grid_->cells.size(), 16u);
  const auto& ref = *grid_->cell(0, 0).fit;
  for (std::size_t m = 0; m < 4; ++m) {
    ASSERT_TRUE(grid_->cell(m, 0).fit.has_value());
    const auto& f = *grid_->cell(m, 0).fit;
    EXPECT_EQ(f.params.mu1, ref.params.mu1);
    EXPECT_EQ(f.params.tau2, ref.params.tau2);
    EXPECT_EQ(f.sauc.value, ref.sauc.value);
    EXPECT_EQ(f.cond_loglik, ref.cond_loglik);
  }
}

TEST_F(GridTest, AllCellsConvergeWithValidIntervals) {
  for (const auto& c : grid_->cells) {
    ASSERT_TRUE(c.fit.has_value()) << c.error_code << " " << c.error_message;
    EXPECT_TRUE(c.fit->converged) << c.mech_idx << " " << c.p;
    EXPECT_LE(c.fit->sauc.lower, c.fit->sauc.value);
    EXPECT_LE(c.fit->sauc.value, c.fit->sauc.upper);
    EXPECT_EQ(c.fit->n_unpublished, implied_unpublished(30, c.p));
  }
}

TEST_F(GridTest, EstimatedMechanismDominates) {
  for (std::size_t k = 0; k < grid_->p_values.size(); ++k) {
    const double est = grid_->cell(0, k).fit->cond_loglik;
    for (std::size_t m = 1; m < 4; ++m) EXPECT_GE(est, grid_->cell(m, k).fit->cond_loglik - 1e-6) << k << " " << m;
  }
}

TEST_F(GridTest, JsonAndCsvAgree) {
  const nlohmann::json j = *grid_;
  const std::string csv = grid_to_csv(*grid_);
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line.rfind("mech_idx,mode,form,c1,c2,u,p,mu1", 0), 0u);
  std::size_t row = 0;
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    const auto& jc = j["cells"][row];
    EXPECT_NEAR(std::stod(f[7]), jc["mu"][0].get<double>(), 1e-12);
    EXPECT_NEAR(std::stod(f[16]), jc["sauc"]["value"].get<double>(), 1e-12);
    ++row;
  }
  EXPECT_EQ(row, 16u);
  EXPECT_EQ(j["cells"].size(), 16u);
  EXPECT_EQ(j["mechanisms"][2]["c1"], 1.0);
}

TEST(Grid, ValidatesPGrid) {
  const auto s = cov_sample();
  const std::vector<SelectionMechanism> m{SelectionMechanism::preset(MechanismMode::ln_dor)};
  EXPECT_NE(error_of([&] { sensitivity_grid(s, m, {0.8, 1.0}); }), -1.0);
  EXPECT_NE(error_of([&] { sensitivity_grid(s, m, {1.0, 0.0}); }), -1.0);
}

TEST(Grid, CancellationMarksCells) {
  const auto s = cov_sample();
  const std::vector<SelectionMechanism> m{SelectionMechanism::preset(MechanismMode::ln_dor)};
  std::stop_source src;
  std::size_t calls = 0;
  const auto g = sensitivity_grid(s, m, default_p_grid(), {}, src.get_token(), [&](std::size_t done, std::size_t) {
    ++calls;
    if (done == 2) src.request_stop();
  });
  EXPECT_TRUE(g.cancelled);
  EXPECT_EQ(calls, 2u);
  EXPECT_TRUE(g.cells[1].fit.has_value());
  EXPECT_EQ(g.cells[2].error_code, "CANCELLED");
  EXPECT_EQ(g.cells[3].error_code, "CANCELLED");
}

TEST(Grid, ExtendedGrid) {
  const auto g = extended_p_grid();
  ASSERT_EQ(g.size(), 10u);
  EXPECT_EQ(g.front(), 1.0);
  EXPECT_NEAR(g.back(), 0.1, 1e-15);
}
