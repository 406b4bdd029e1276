#include "dtameta/study_table.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <optional>
#include <set>
#include <sstream>
#include <tuple>
#include <unordered_map>

#include "dtameta/error.hpp"

namespace dtameta {
namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::string unquote(std::string s) {
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return s;
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::vector<std::string> split_lines(std::string_view raw) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start <= raw.size()) {
    std::size_t end = raw.find('\n', start);
    if (end == std::string_view::npos) end = raw.size();
    std::string line(raw.substr(start, end - start));
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
    start = end + 1;
  }
  return lines;
}

// Splits on `delim`, honouring double-quoted fields. delim == ' ' means runs of blanks.
std::vector<std::string> split_fields(const std::string& line, char delim) {
  std::vector<std::string> fields;
  if (delim == ' ') {
    std::istringstream in(line);
    std::string f;
    while (in >> f) fields.push_back(unquote(f));
    return fields;
  }
  std::string current;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (c == '"') {
      if (quoted && i + 1 < line.size() && line[i + 1] == '"') {
        current.push_back('"');
        ++i;
      } else {
        quoted = !quoted;
      }
    } else if (c == delim && !quoted) {
      fields.push_back(trim(current));
      current.clear();
    } else {
      current.push_back(c);
    }
  }
  fields.push_back(trim(current));
  return fields;
}

char detect_delimiter(const std::string& header, DataFormat format) {
  switch (format) {
    case DataFormat::csv: return ',';
    case DataFormat::tsv: return '\t';
    case DataFormat::automatic: break;
  }
  if (header.find('\t') != std::string::npos) return '\t';
  if (header.find(',') != std::string::npos) return ',';
  if (header.find(';') != std::string::npos) return ';';
  return ' ';
}

bool is_numeric(const std::string& s) {
  if (s.empty()) return false;
  double v = 0.0;
  const auto* first = s.data();
  const auto* last = s.data() + s.size();
  if (*first == '+') ++first;
  const auto res = std::from_chars(first, last, v);
  return res.ec == std::errc{} && res.ptr == last;
}

std::optional<long long> parse_count(const std::string& s) {
  if (s.empty()) return std::nullopt;
  const auto* first = s.data();
  const auto* last = s.data() + s.size();
  if (*first == '+') ++first;
  long long n = 0;
  auto res = std::from_chars(first, last, n);
  if (res.ec == std::errc{} && res.ptr == last) return n;
  double v = 0.0;
  res = std::from_chars(first, last, v);
  if (res.ec == std::errc{} && res.ptr == last && std::isfinite(v) && v == std::floor(v) &&
      std::fabs(v) < 9e15) {
    return static_cast<long long>(v);
  }
  return std::nullopt;
}

const std::set<std::string>& id_column_names() {
  static const std::set<std::string> names{"id",     "study", "studies", "name",   "study_id",
                                           "studyid", "author", "label",  "study id"};
  return names;
}

}  // namespace

std::vector<std::string> validate_table(StudyTable& table) {
  std::vector<std::string> warnings;
  if (table.studies.empty()) throw Error(ErrorCode::empty, "no studies");
  std::unordered_map<std::string, int> seen;
  for (std::size_t k = 0; k < table.studies.size(); ++k) {
    auto& r = table.studies[k];
    if (r.tp < 0 || r.fp < 0 || r.fn < 0 || r.tn < 0) {
      throw Error(ErrorCode::value, "negative count in study " + std::to_string(k + 1));
    }
    if (r.n_diseased() < 1 || r.n_healthy() < 1) {
      throw Error(ErrorCode::arm, "study " + std::to_string(k + 1) +
                                      " has an empty diseased or healthy arm");
    }
    if (r.id.empty()) r.id = "study_" + std::to_string(k + 1);
    const int count = ++seen[r.id];
    if (count > 1) {
      const std::string renamed = r.id + "#" + std::to_string(count);
      warnings.push_back("duplicate study id '" + r.id + "' renamed to '" + renamed + "'");
      r.id = renamed;
      ++seen[renamed];
    }
  }
  return warnings;
}

ParseResult parse_dataset(std::string_view raw, DataFormat format, std::string source_name) {
  if (raw.size() >= 3 && static_cast<unsigned char>(raw[0]) == 0xEF &&
      static_cast<unsigned char>(raw[1]) == 0xBB && static_cast<unsigned char>(raw[2]) == 0xBF) {
    raw.remove_prefix(3);
  }
  std::vector<std::string> lines = split_lines(raw);
  std::erase_if(lines, [](const std::string& l) { return trim(l).empty(); });
  if (lines.empty()) throw Error(ErrorCode::empty, "input is empty");

  const char delim = detect_delimiter(lines.front(), format);
  std::vector<std::string> header = split_fields(lines.front(), delim);
  for (auto& h : header) h = lower(trim(unquote(h)));

  std::array<int, 4> count_cols{-1, -1, -1, -1};
  const std::array<std::string, 4> count_names{"tp", "fp", "fn", "tn"};
  int id_col = -1;
  for (int c = 0; c < static_cast<int>(header.size()); ++c) {
    const auto it = std::find(count_names.begin(), count_names.end(), header[c]);
    if (it != count_names.end()) {
      auto& slot = count_cols[it - count_names.begin()];
      if (slot < 0) slot = c;
    } else if (id_col < 0 && id_column_names().count(header[c])) {
      id_col = c;
    }
  }
  std::string missing;
  const std::array<std::string, 4> upper{"TP", "FP", "FN", "TN"};
  for (int k = 0; k < 4; ++k) {
    if (count_cols[k] < 0) missing += (missing.empty() ? "" : ", ") + upper[k];
  }
  if (!missing.empty()) throw Error(ErrorCode::schema, "missing required column(s): " + missing);
  if (lines.size() < 2) throw Error(ErrorCode::empty, "no data rows");

  std::vector<std::vector<std::string>> rows;
  rows.reserve(lines.size() - 1);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    auto fields = split_fields(lines[i], delim);
    if (fields.size() != header.size()) {
      throw Error(ErrorCode::value, "row " + std::to_string(i) + " has " +
                                        std::to_string(fields.size()) + " fields, expected " +
                                        std::to_string(header.size()));
    }
    rows.push_back(std::move(fields));
  }

  // A non-numeric first column doubles as the study label.
  const bool first_is_count =
      std::find(count_cols.begin(), count_cols.end(), 0) != count_cols.end();
  if (id_col < 0 && !first_is_count && !header.empty()) {
    const bool all_text = std::all_of(rows.begin(), rows.end(), [](const auto& r) {
      return r[0].empty() || !is_numeric(r[0]);
    });
    if (all_text) id_col = 0;
  }

  ParseResult result;
  for (int c = 0; c < static_cast<int>(header.size()); ++c) {
    const bool used = c == id_col ||
                      std::find(count_cols.begin(), count_cols.end(), c) != count_cols.end();
    if (!used) result.warnings.push_back("ignored column '" + header[c] + "'");
  }

  result.table.source_name = std::move(source_name);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& fields = rows[i];
    StudyRecord rec;
    if (id_col >= 0) rec.id = unquote(fields[id_col]);
    std::array<long long, 4> counts{};
    for (int k = 0; k < 4; ++k) {
      const auto v = parse_count(fields[count_cols[k]]);
      if (!v) {
        throw Error(ErrorCode::value, "row " + std::to_string(i + 1) + ": '" +
                                          fields[count_cols[k]] + "' is not an integer count");
      }
      if (*v < 0) {
        throw Error(ErrorCode::value, "row " + std::to_string(i + 1) + ": negative count");
      }
      counts[k] = *v;
    }
    rec.tp = counts[0];
    rec.fp = counts[1];
    rec.fn = counts[2];
    rec.tn = counts[3];
    result.table.studies.push_back(std::move(rec));
  }
  auto more = validate_table(result.table);
  result.warnings.insert(result.warnings.end(), more.begin(), more.end());
  return result;
}

std::string to_csv(const StudyTable& table) {
  std::ostringstream out;
  out << "id,TP,FP,FN,TN\n";
  for (const auto& r : table.studies) {
    std::string id = r.id;
    if (id.find_first_of(",\"\n") != std::string::npos) {
      std::string quoted = "\"";
      for (char c : id) {
        if (c == '"') quoted += '"';
        quoted += c;
      }
      id = quoted + "\"";
    }
    out << id << ',' << r.tp << ',' << r.fp << ',' << r.fn << ',' << r.tn << '\n';
  }
  return out.str();
}

CorrectedTable continuity_correct(const StudyTable& table, CorrectionStrategy strategy) {
  CorrectedTable out;
  out.strategy = strategy;
  out.studies.reserve(table.size());
  for (const auto& r : table.studies) {
    if (r.n_diseased() < 1 || r.n_healthy() < 1) {
      throw Error(ErrorCode::arm, "study '" + r.id + "' has an empty arm");
    }
    const bool has_zero = r.tp == 0 || r.fp == 0 || r.fn == 0 || r.tn == 0;
    const bool apply = strategy == CorrectionStrategy::all_studies ||
                       (strategy == CorrectionStrategy::zero_studies_only && has_zero);
    const double add = apply ? 0.5 : 0.0;
    out.studies.push_back({r.id, static_cast<double>(r.tp) + add, static_cast<double>(r.fp) + add,
                           static_cast<double>(r.fn) + add, static_cast<double>(r.tn) + add,
                           apply});
  }
  return out;
}

BivariateSample logit_transform(const CorrectedTable& corrected) {
  BivariateSample s;
  s.ids.reserve(corrected.size());
  s.points.reserve(corrected.size());
  for (const auto& r : corrected.studies) {
    if (!(r.tp > 0.0 && r.fp > 0.0 && r.fn > 0.0 && r.tn > 0.0)) {
      throw Error(ErrorCode::zero, "study '" + r.id + "' has a zero cell; apply a continuity "
                                                      "correction or use the GLMM");
    }
    LogitPoint p;
    p.y1 = std::log(r.tp / r.fn);
    p.y2 = std::log(r.tn / r.fp);
    p.s1sq = 1.0 / r.tp + 1.0 / r.fn;
    p.s2sq = 1.0 / r.tn + 1.0 / r.fp;
    s.ids.push_back(r.id);
    s.points.push_back(p);
  }
  return s;
}

BivariateSample prepare_sample(const StudyTable& table, CorrectionStrategy strategy) {
  return logit_transform(continuity_correct(table, strategy));
}

BivariateSample canonical_order(const BivariateSample& sample) {
  std::vector<std::size_t> idx(sample.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  auto key = [&](std::size_t i) {
    const LogitPoint& p = sample.points[i];
    return std::tuple(p.y1, p.y2, p.s1sq, p.s2sq);
  };
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return key(a) < key(b); });
  BivariateSample out;
  out.ids.reserve(idx.size());
  out.points.reserve(idx.size());
  for (std::size_t i : idx) {
    out.ids.push_back(i < sample.ids.size() ? sample.ids[i] : std::string());
    out.points.push_back(sample.points[i]);
  }
  return out;
}

StudyTable canonical_order(const StudyTable& table) {
  StudyTable out = table;
  std::stable_sort(out.studies.begin(), out.studies.end(), [](const StudyRecord& a, const StudyRecord& b) {
    return std::tuple(a.tp, a.fp, a.fn, a.tn) < std::tuple(b.tp, b.fp, b.fn, b.tn);
  });
  return out;
}

StudyTable swap_arms(const StudyTable& table) {
  StudyTable out = table;
  for (auto& r : out.studies) {
    std::swap(r.tp, r.tn);
    std::swap(r.fp, r.fn);
  }
  return out;
}

std::string_view to_string(CorrectionStrategy strategy) {
  switch (strategy) {
    case CorrectionStrategy::zero_studies_only: return "zero-studies-only";
    case CorrectionStrategy::all_studies: return "all-studies";
    case CorrectionStrategy::none: return "none";
  }
  return "zero-studies-only";
}

CorrectionStrategy correction_from_string(std::string_view name) {
  const std::string n = lower(std::string(name));
  if (n == "zero-studies-only" || n == "zero" || n == "zero_studies_only") {
    return CorrectionStrategy::zero_studies_only;
  }
  if (n == "all-studies" || n == "all" || n == "all_studies") return CorrectionStrategy::all_studies;
  if (n == "none") return CorrectionStrategy::none;
  throw Error(ErrorCode::options, "unknown correction strategy '" + std::string(name) + "'");
}

void to_json(nlohmann::json& j, const StudyRecord& r) {
  j = {{"id", r.id}, {"tp", r.tp}, {"fp", r.fp}, {"fn", r.fn}, {"tn", r.tn}};
}

void to_json(nlohmann::json& j, const StudyTable& t) {
  j = {{"source_name", t.source_name}, {"studies", t.studies}};
}

void to_json(nlohmann::json& j, const CorrectedTable& t) {
  j = nlohmann::json::object();
  j["strategy"] = to_string(t.strategy);
  auto& rows = j["studies"] = nlohmann::json::array();
  for (const auto& r : t.studies) {
    rows.push_back({{"id", r.id},
                    {"tp", r.tp},
                    {"fp", r.fp},
                    {"fn", r.fn},
                    {"tn", r.tn},
                    {"corrected", r.corrected}});
  }
}

void to_json(nlohmann::json& j, const BivariateSample& s) {
  j = nlohmann::json::array();
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto& p = s.points[i];
    j.push_back(
        {{"id", s.ids[i]}, {"y1", p.y1}, {"y2", p.y2}, {"s1sq", p.s1sq}, {"s2sq", p.s2sq}});
  }
}

ParseResult table_from_json(const nlohmann::json& j) {
  const nlohmann::json* rows = &j;
  ParseResult result;
  if (j.is_object()) {
    if (!j.contains("studies")) throw Error(ErrorCode::schema, "expected a 'studies' array");
    rows = &j.at("studies");
    if (j.contains("source_name") && j["source_name"].is_string()) {
      result.table.source_name = j["source_name"].get<std::string>();
    }
  }
  if (!rows->is_array()) throw Error(ErrorCode::schema, "expected an array of study rows");
  if (rows->empty()) throw Error(ErrorCode::empty, "no data rows");
  std::size_t k = 0;
  for (const auto& row : *rows) {
    ++k;
    if (!row.is_object()) throw Error(ErrorCode::schema, "row " + std::to_string(k) + " is not an object");
    StudyRecord rec;
    for (const char* key : {"tp", "fp", "fn", "tn"}) {
      // keys are matched case-insensitively
      const nlohmann::json* value = nullptr;
      for (auto it = row.begin(); it != row.end(); ++it) {
        if (lower(it.key()) == key) value = &it.value();
      }
      if (!value) throw Error(ErrorCode::schema, "row " + std::to_string(k) + " lacks '" + key + "'");
      if (!value->is_number_integer()) {
        const bool integral_float = value->is_number_float() &&
                                    std::floor(value->get<double>()) == value->get<double>();
        if (!integral_float) {
          throw Error(ErrorCode::value, "row " + std::to_string(k) + ": '" + key +
                                            "' is not an integer count");
        }
      }
      const long long v = value->is_number_integer() ? value->get<long long>()
                                                     : static_cast<long long>(value->get<double>());
      if (std::string_view(key) == "tp") rec.tp = v;
      if (std::string_view(key) == "fp") rec.fp = v;
      if (std::string_view(key) == "fn") rec.fn = v;
      if (std::string_view(key) == "tn") rec.tn = v;
    }
    if (row.contains("id") && row["id"].is_string()) rec.id = row["id"].get<std::string>();
    result.table.studies.push_back(std::move(rec));
  }
  result.warnings = validate_table(result.table);
  return result;
}

}  // namespace dtameta
