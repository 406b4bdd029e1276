#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace dtameta {

/// One diagnostic study's 2x2 table.
struct StudyRecord {
  std::string id;
  long long tp = 0;
  long long fp = 0;
  long long fn = 0;
  long long tn = 0;

  long long n_diseased() const { return tp + fn; }
  long long n_healthy() const { return tn + fp; }
};

struct StudyTable {
  std::vector<StudyRecord> studies;
  std::string source_name;

  std::size_t size() const { return studies.size(); }
  bool empty() const { return studies.empty(); }
};

enum class DataFormat { csv, tsv, automatic };

struct ParseResult {
  StudyTable table;
  std::vector<std::string> warnings;
};

/// Parses a delimited text table with TP, FP, FN, TN columns (any order, any case).
/// An id/study/name column, or a non-numeric first column, supplies study labels.
/// Throws Error with E_SCHEMA, E_VALUE, E_EMPTY or E_ARM.
ParseResult parse_dataset(std::string_view raw, DataFormat format = DataFormat::automatic,
                          std::string source_name = {});

/// Checks counts and arms, fills missing ids with "study_k" and makes ids unique.
/// Returns the warnings produced while doing so.
std::vector<std::string> validate_table(StudyTable& table);

/// Canonical CSV rendering: header "id,TP,FP,FN,TN".
std::string to_csv(const StudyTable& table);

enum class CorrectionStrategy { zero_studies_only, all_studies, none };

struct CorrectedRecord {
  std::string id;
  double tp = 0.0;
  double fp = 0.0;
  double fn = 0.0;
  double tn = 0.0;
  bool corrected = false;
};

struct CorrectedTable {
  std::vector<CorrectedRecord> studies;
  CorrectionStrategy strategy = CorrectionStrategy::zero_studies_only;

  std::size_t size() const { return studies.size(); }
};

/// Adds 0.5 to every cell of the affected studies. Under zero_studies_only a study is
/// affected iff it has at least one zero cell.
CorrectedTable continuity_correct(const StudyTable& table,
                                  CorrectionStrategy strategy = CorrectionStrategy::zero_studies_only);

/// Logit sensitivity/specificity of one study and their within-study variances.
struct LogitPoint {
  double y1 = 0.0;
  double y2 = 0.0;
  double s1sq = 0.0;
  double s2sq = 0.0;
};

struct BivariateSample {
  std::vector<std::string> ids;
  std::vector<LogitPoint> points;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

/// Throws E_ZERO when a zero cell survived the correction.
BivariateSample logit_transform(const CorrectedTable& corrected);

/// Correction followed by the logit transform.
BivariateSample prepare_sample(const StudyTable& table,
                               CorrectionStrategy strategy = CorrectionStrategy::zero_studies_only);

/// Copies sorted by the numeric content of each study. Estimators run on this order so their
/// results do not depend on the row order of the input.
BivariateSample canonical_order(const BivariateSample& sample);
StudyTable canonical_order(const StudyTable& table);

/// Exchanges the diseased and healthy arms (tp<->tn, fp<->fn) of every study.
StudyTable swap_arms(const StudyTable& table);

std::string_view to_string(CorrectionStrategy strategy);
CorrectionStrategy correction_from_string(std::string_view name);

void to_json(nlohmann::json& j, const StudyRecord& r);
void to_json(nlohmann::json& j, const StudyTable& t);
void to_json(nlohmann::json& j, const CorrectedTable& t);
void to_json(nlohmann::json& j, const BivariateSample& s);

/// Builds a validated table from JSON rows [{id?, tp, fp, fn, tn}, ...] or {studies:[...]}.
ParseResult table_from_json(const nlohmann::json& j);

}  // namespace dtameta
