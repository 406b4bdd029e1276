#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "dtameta/model.hpp"
#include "dtameta/selection.hpp"
#include "dtameta/study_table.hpp"
#include "json.hpp"

namespace dtameta {

enum class ArmSizeKind { fixed, uniform, lognormal };

/// Both arms of every study are drawn independently from this law.
///   fixed      n = a
///   uniform    n ~ U{a, ..., b}
///   lognormal  n = max(1, round(exp(N(a, b^2))))
struct ArmSizeLaw {
  ArmSizeKind kind = ArmSizeKind::fixed;
  double a = 100.0;
  double b = 0.0;

  static ArmSizeLaw fixed(long long n) { return {ArmSizeKind::fixed, static_cast<double>(n), 0.0}; }
  static ArmSizeLaw uniform(long long lo, long long hi) {
    return {ArmSizeKind::uniform, static_cast<double>(lo), static_cast<double>(hi)};
  }
  static ArmSizeLaw lognormal(double meanlog, double sdlog) { return {ArmSizeKind::lognormal, meanlog, sdlog}; }
};

/// Parses "fixed:N", "uniform:LO:HI" or "lognormal:M:S".
ArmSizeLaw arm_size_law_from_string(std::string_view spec);
std::string to_string(const ArmSizeLaw& law);

struct SimConfig {
  BivariateParams params;
  int n_studies = 50;
  ArmSizeLaw arms;
  std::uint64_t seed = 1;
};

enum class RngPurpose : std::uint64_t { latent = 1, arms = 2, counts = 3, selection = 4 };

/// Independent generator for one (seed, study, purpose) triple.
std::mt19937_64 keyed_engine(std::uint64_t seed, std::uint64_t study, RngPurpose purpose);

struct SimulatedPopulation {
  StudyTable table;
  std::vector<double> true_se;
  std::vector<double> true_sp;
};

SimulatedPopulation simulate_population(const SimConfig& cfg);

struct SelectionOutcome {
  StudyTable published;
  double empirical_p = 1.0;
  std::vector<std::size_t> kept;  // indices into the input table
};

/// Keeps significant studies (observed t >= u after correction) and the others with
/// probability beta.
SelectionOutcome apply_selection(const StudyTable& table, const SelectionMechanism& mech, double beta,
                                 CorrectionStrategy correction, std::uint64_t seed);

/// The beta whose expected publication rate on `table` equals `target`. Throws E_CONSTRAINT
/// when the significant fraction already exceeds the target.
double beta_for_publication_rate(const StudyTable& table, const SelectionMechanism& mech, double target,
                                 CorrectionStrategy correction = CorrectionStrategy::zero_studies_only);

/// Generating parameters together with the implied SAUC and SOP.
nlohmann::json truth_json(const SimConfig& cfg);

}  // namespace dtameta
