#include "dtameta/simulation.hpp"

#include <boost/random/binomial_distribution.hpp>
#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_01.hpp>
#include <boost/random/uniform_int_distribution.hpp>
#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <string>

#include "dtameta/error.hpp"
#include "dtameta/numeric.hpp"
#include "dtameta/sroc.hpp"

namespace dtameta {
namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double parse_number(std::string_view s) {
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc{} || r.ptr != s.data() + s.size()) {
    throw Error(ErrorCode::options, "bad number '" + std::string(s) + "' in arm size law");
  }
  return v;
}

long long draw_arm(const ArmSizeLaw& law, std::mt19937_64& rng) {
  switch (law.kind) {
    case ArmSizeKind::fixed:
      return std::llround(law.a);
    case ArmSizeKind::uniform: {
      boost::random::uniform_int_distribution<long long> d(std::llround(law.a), std::llround(law.b));
      return d(rng);
    }
    case ArmSizeKind::lognormal: {
      boost::random::normal_distribution<double> d(law.a, law.b);
      return std::max<long long>(1, std::llround(std::exp(d(rng))));
    }
  }
  return 1;
}

void check_config(const SimConfig& cfg) {
  if (cfg.n_studies < 1) throw Error(ErrorCode::options, "n_studies must be positive");
  const auto& p = cfg.params;
  if (!(p.tau1 >= 0.0 && p.tau2 >= 0.0) || !(std::fabs(p.rho) <= 1.0)) {
    throw Error(ErrorCode::options, "tau must be >= 0 and |rho| <= 1");
  }
  const auto& law = cfg.arms;
  switch (law.kind) {
    case ArmSizeKind::fixed:
      if (law.a < 1.0) throw Error(ErrorCode::options, "fixed arm size must be >= 1");
      break;
    case ArmSizeKind::uniform:
      if (law.a < 1.0 || law.b < law.a) throw Error(ErrorCode::options, "uniform arm sizes need 1 <= lo <= hi");
      break;
    case ArmSizeKind::lognormal:
      if (!(law.b >= 0.0)) throw Error(ErrorCode::options, "lognormal sdlog must be >= 0");
      break;
  }
}

}  // namespace

ArmSizeLaw arm_size_law_from_string(std::string_view spec) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const auto colon = spec.find(':', start);
    parts.push_back(spec.substr(start, colon == std::string_view::npos ? std::string_view::npos : colon - start));
    if (colon == std::string_view::npos) break;
    start = colon + 1;
  }
  if (parts[0] == "fixed" && parts.size() == 2) return ArmSizeLaw::fixed(std::llround(parse_number(parts[1])));
  if (parts[0] == "uniform" && parts.size() == 3) {
    return ArmSizeLaw::uniform(std::llround(parse_number(parts[1])), std::llround(parse_number(parts[2])));
  }
  if (parts[0] == "lognormal" && parts.size() == 3) {
    return ArmSizeLaw::lognormal(parse_number(parts[1]), parse_number(parts[2]));
  }
  throw Error(ErrorCode::options, "arm size law must be fixed:N, uniform:LO:HI or lognormal:M:S");
}

std::string to_string(const ArmSizeLaw& law) {
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", v);
    return std::string(buf);
  };
  switch (law.kind) {
    case ArmSizeKind::fixed: return "fixed:" + num(law.a);
    case ArmSizeKind::uniform: return "uniform:" + num(law.a) + ":" + num(law.b);
    case ArmSizeKind::lognormal: return "lognormal:" + num(law.a) + ":" + num(law.b);
  }
  return "fixed";
}

std::mt19937_64 keyed_engine(std::uint64_t seed, std::uint64_t study, RngPurpose purpose) {
  std::uint64_t k = splitmix64(seed);
  k = splitmix64(k ^ study);
  k = splitmix64(k ^ static_cast<std::uint64_t>(purpose));
  return std::mt19937_64(k);
}

SimulatedPopulation simulate_population(const SimConfig& cfg) {
  check_config(cfg);
  const auto& p = cfg.params;
  SimulatedPopulation out;
  out.table.source_name = "simulated";
  const double cross = std::sqrt(std::max(0.0, 1.0 - p.rho * p.rho));
  for (int i = 0; i < cfg.n_studies; ++i) {
    const auto idx = static_cast<std::uint64_t>(i);
    auto latent = keyed_engine(cfg.seed, idx, RngPurpose::latent);
    boost::random::normal_distribution<double> z;
    const double z1 = z(latent);
    const double z2 = z(latent);
    const double se = expit(p.mu1 + p.tau1 * z1);
    const double sp = expit(p.mu2 + p.tau2 * (p.rho * z1 + cross * z2));

    auto arms = keyed_engine(cfg.seed, idx, RngPurpose::arms);
    const long long n1 = draw_arm(cfg.arms, arms);
    const long long n0 = draw_arm(cfg.arms, arms);

    auto counts = keyed_engine(cfg.seed, idx, RngPurpose::counts);
    boost::random::binomial_distribution<long long, double> tp_draw(n1, se);
    boost::random::binomial_distribution<long long, double> tn_draw(n0, sp);
    const long long tp = tp_draw(counts);
    const long long tn = tn_draw(counts);

    out.table.studies.push_back({"sim_" + std::to_string(i + 1), tp, n0 - tn, n1 - tp, tn});
    out.true_se.push_back(se);
    out.true_sp.push_back(sp);
  }
  return out;
}

SelectionOutcome apply_selection(const StudyTable& table, const SelectionMechanism& mech, double beta,
                                 CorrectionStrategy correction, std::uint64_t seed) {
  if (!(beta >= 0.0 && beta <= 1.0)) throw Error(ErrorCode::options, "beta must lie in [0, 1]");
  SelectionOutcome out;
  out.published.source_name = table.source_name;
  if (table.empty()) return out;
  const BivariateSample sample = prepare_sample(table, correction);
  for (std::size_t i = 0; i < table.size(); ++i) {
    bool keep = t_statistic(sample.points[i], mech) >= mech.cutoff;
    if (!keep) {
      auto rng = keyed_engine(seed, i, RngPurpose::selection);
      keep = boost::random::uniform_01<double>()(rng) < beta;
    }
    if (keep) {
      out.kept.push_back(i);
      out.published.studies.push_back(table.studies[i]);
    }
  }
  out.empirical_p = static_cast<double>(out.kept.size()) / static_cast<double>(table.size());
  return out;
}

double beta_for_publication_rate(const StudyTable& table, const SelectionMechanism& mech, double target,
                                 CorrectionStrategy correction) {
  if (!(target > 0.0 && target <= 1.0)) throw Error(ErrorCode::options, "target rate must lie in (0, 1]");
  if (table.empty()) throw Error(ErrorCode::empty, "no studies");
  const BivariateSample sample = prepare_sample(table, correction);
  std::size_t significant = 0;
  for (const auto& pt : sample.points) {
    if (t_statistic(pt, mech) >= mech.cutoff) ++significant;
  }
  const double f = static_cast<double>(significant) / static_cast<double>(table.size());
  if (f > target) {
    throw Error(ErrorCode::constraint, "significant fraction exceeds the target publication rate");
  }
  if (f >= 1.0) return 1.0;
  return (target - f) / (1.0 - f);
}

nlohmann::json truth_json(const SimConfig& cfg) {
  nlohmann::json j;
  j["params"] = cfg.params;
  j["n_studies"] = cfg.n_studies;
  j["arm_size_law"] = to_string(cfg.arms);
  j["seed"] = cfg.seed;
  j["sauc"] = {{"sroc", sauc_value(cfg.params, CurveKind::sroc)},
               {"hsroc", sauc_value(cfg.params, CurveKind::hsroc)}};
  j["sop"] = {expit(cfg.params.mu1), expit(cfg.params.mu2)};
  return j;
}

}  // namespace dtameta
