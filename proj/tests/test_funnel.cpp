#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dtameta/error.hpp"
#include "dtameta/funnel.hpp"
#include "test_support.hpp"

using namespace dtameta;
using dtameta::testing::rec;
using dtameta::testing::synthetic_table;
using dtameta::testing::table_of;

TEST(Funnel, EffectiveSampleSize) {
  EXPECT_EQ(effective_sample_size(100, 100), 200.0);
  EXPECT_NEAR(1 / std::sqrt(effective_sample_size(100, 100)), 0.0707, 1e-4);
  EXPECT_NEAR(effective_sample_size(30, 90), 4.0 * 30 * 90 / 120, 1e-12);
}

TEST(Funnel, PointsAndPooledLine) {
  const auto t = synthetic_table(12, 51);
  const auto s = prepare_sample(t);
  const auto f = funnel_data(s, t);
  ASSERT_EQ(f.points.size(), 12u);
  double num = 0, den = 0;
  for (std::size_t i = 0; i < 12; ++i) {
    const auto& pt = s.points[i];
    EXPECT_EQ(f.points[i].id, t.studies[i].id);
    EXPECT_NEAR(f.points[i].ln_dor, pt.y1 + pt.y2, 1e-12);
    EXPECT_NEAR(f.points[i].inv_sqrt_ess,
                1 / std::sqrt(effective_sample_size(t.studies[i].n_diseased(), t.studies[i].n_healthy())), 1e-15);
    const double w = 1 / (pt.s1sq + pt.s2sq);
    num += w * (pt.y1 + pt.y2);
    den += w;
  }
  EXPECT_NEAR(f.pooled, num / den, 1e-12);
}

TEST(Funnel, DuplicateRowsCoincide) {
  const auto t = table_of({rec("a", 20, 5, 4, 30), rec("b", 20, 5, 4, 30)});
  const auto f = funnel_data(prepare_sample(t), t);
  EXPECT_EQ(f.points[0].ln_dor, f.points[1].ln_dor);
  EXPECT_EQ(f.points[0].inv_sqrt_ess, f.points[1].inv_sqrt_ess);
}

TEST(AsymmetryTest, ConstantLnDor) {
  const auto t = table_of({rec("a", 20, 5, 5, 20), rec("b", 40, 10, 10, 40), rec("c", 8, 2, 2, 8),
                           rec("d", 12, 3, 3, 12)});
  const auto r = asymmetry_test(prepare_sample(t), t);
  EXPECT_NEAR(r.slope, 0.0, 1e-12);
  EXPECT_NEAR(r.p_value, 1.0, 1e-12);
  EXPECT_EQ(r.df, 2);
}

TEST(AsymmetryTest, MatchesClosedFormRegression) {
  const auto t = synthetic_table(15, 52);
  const auto s = prepare_sample(t);
  const auto r = asymmetry_test(s, t);
  double sw = 0, sx = 0, sy = 0;
  std::vector<double> x, y, w;
  for (std::size_t i = 0; i < 15; ++i) {
    const double e = effective_sample_size(t.studies[i].n_diseased(), t.studies[i].n_healthy());
    x.push_back(1 / std::sqrt(e));
    y.push_back(s.points[i].y1 + s.points[i].y2);
    w.push_back(e);
    sw += e;
    sx += e * x.back();
    sy += e * y.back();
  }
  const double xb = sx / sw, yb = sy / sw;
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < 15; ++i) {
    sxx += w[i] * (x[i] - xb) * (x[i] - xb);
    sxy += w[i] * (x[i] - xb) * (y[i] - yb);
  }
  const double b = sxy / sxx;
  const double a = yb - b * xb;
  double rss = 0;
  for (std::size_t i = 0; i < 15; ++i) rss += w[i] * std::pow(y[i] - a - b * x[i], 2);
  EXPECT_NEAR(r.slope, b, 1e-9 * std::max(1.0, std::abs(b)));
  EXPECT_NEAR(r.intercept, a, 1e-9 * std::max(1.0, std::abs(a)));
  EXPECT_NEAR(r.se_slope, std::sqrt(rss / 13 / sxx), 1e-9 * r.se_slope);
}

TEST(AsymmetryTest, TooFewStudies) {
  const auto t = table_of({rec("a", 20, 5, 4, 30), rec("b", 10, 5, 4, 30)});
  try {
    asymmetry_test(prepare_sample(t), t);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::small);
  }
  const auto j = funnel_report(prepare_sample(t), t);
  EXPECT_TRUE(j["test"].is_null());
  EXPECT_EQ(j["points"].size(), 2u);
}

TEST(AsymmetryTest, PermutationInvariance) {
  const auto t = synthetic_table(20, 53);
  StudyTable r;
  r.studies.assign(t.studies.rbegin(), t.studies.rend());
  const auto a = asymmetry_test(prepare_sample(t), t);
  const auto b = asymmetry_test(prepare_sample(r), r);
  EXPECT_EQ(a.slope, b.slope);
  EXPECT_EQ(a.p_value, b.p_value);
  EXPECT_EQ(a.se_slope, b.se_slope);
}

TEST(AsymmetryTest, PValueRangeAndCalibration) {
  int rejected = 0;
  const int reps = 1000;
  for (int k = 0; k < reps; ++k) {
    const auto t = synthetic_table(30, 1000 + k, {1.8, 1.2, 0.8, 0.9, -0.4}, ArmSizeLaw::uniform(20, 300));
    const auto r = asymmetry_test(prepare_sample(t), t);
    ASSERT_GE(r.p_value, 0.0);
    ASSERT_LE(r.p_value, 1.0);
    if (r.p_value < 0.05) ++rejected;
  }
  const double rate = static_cast<double>(rejected) / reps;
  EXPECT_GE(rate, 0.02);
  EXPECT_LE(rate, 0.10);
}
