#include "dtameta/service.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <random>
#include <sstream>

#include "dtameta/descriptives.hpp"
#include "dtameta/error.hpp"
#include "dtameta/funnel.hpp"
#include "dtameta/numeric.hpp"
#include "dtameta/reitsma.hpp"
#include "dtameta/sroc.hpp"
#include "httplib.h"

namespace dtameta {
namespace {

using nlohmann::json;

std::string num(double v) {
  if (!std::isfinite(v)) return {};
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

[[noreturn]] void bad_option(const std::string& message) { throw Error(ErrorCode::options, message); }

double number_option(const json& opts, const char* key, double fallback) {
  if (!opts.contains(key) || opts[key].is_null()) return fallback;
  if (!opts[key].is_number()) bad_option(std::string("'") + key + "' must be a number");
  const double v = opts[key].get<double>();
  if (!std::isfinite(v)) bad_option(std::string("'") + key + "' must be finite");
  return v;
}

std::string string_option(const json& opts, const char* key, const std::string& fallback) {
  if (!opts.contains(key) || opts[key].is_null()) return fallback;
  if (!opts[key].is_string()) bad_option(std::string("'") + key + "' must be a string");
  return opts[key].get<std::string>();
}

SelectionMechanism mechanism_from_json(const json& m, SelectionForm form, double cutoff) {
  if (m.is_string()) return mechanism_from_string(m.get<std::string>(), form, cutoff);
  if (m.is_object()) {
    const SelectionForm f = m.contains("form") ? selection_form_from_string(string_option(m, "form", "")) : form;
    const double u = number_option(m, "u", number_option(m, "cutoff", cutoff));
    if (m.contains("c1") || m.contains("c2")) {
      return SelectionMechanism::custom(number_option(m, "c1", 0.0), number_option(m, "c2", 0.0), f, u);
    }
    return mechanism_from_string(string_option(m, "mode", ""), f, u);
  }
  bad_option("a mechanism must be a name or an object with c1 and c2");
}

std::string metrics_csv(const CorrectedTable& corrected, const BivariateSample& sample,
                        const std::vector<StudyMetrics>& metrics) {
  std::ostringstream out;
  out << "id,TP,FP,FN,TN,y1,y2,s1sq,s2sq,se,se_lo,se_hi,sp,sp_lo,sp_hi,lnDOR,lnDOR_lo,lnDOR_hi,"
         "LRpos,LRpos_lo,LRpos_hi,LRneg,LRneg_lo,LRneg_hi\n";
  for (std::size_t i = 0; i < metrics.size(); ++i) {
    const auto& c = corrected.studies[i];
    const auto& p = sample.points[i];
    const auto& m = metrics[i];
    out << m.id << ',' << num(c.tp) << ',' << num(c.fp) << ',' << num(c.fn) << ',' << num(c.tn) << ','
        << num(p.y1) << ',' << num(p.y2) << ',' << num(p.s1sq) << ',' << num(p.s2sq);
    for (const Interval* v : {&m.se, &m.sp, &m.ln_dor, &m.lr_pos, &m.lr_neg}) {
      out << ',' << num(v->estimate) << ',' << num(v->lower) << ',' << num(v->upper);
    }
    out << '\n';
  }
  return out.str();
}

std::string fit_csv(const json& report) {
  const json& fit = report["fit"];
  const json& s = report["sauc"];
  std::ostringstream out;
  out << "method,mu1,mu2,tau1,tau2,rho,loglik,sauc,sauc_lo,sauc_hi,sop_se,sop_sp,converged\n";
  auto d = [](const json& v) { return v.is_number() ? num(v.get<double>()) : std::string(); };
  out << fit["method"].get<std::string>() << ',' << d(fit["mu"][0]) << ',' << d(fit["mu"][1]) << ','
      << d(fit["tau"][0]) << ',' << d(fit["tau"][1]) << ',' << d(fit["rho"]) << ',' << d(fit["loglik"])
      << ',' << d(s["value"]) << ',' << d(s["lo"]) << ',' << d(s["hi"]) << ',' << d(report["sop_point"][0])
      << ',' << d(report["sop_point"][1]) << ',' << (fit["converged"].get<bool>() ? "true" : "false") << '\n';
  return out.str();
}

std::string funnel_csv(const json& report) {
  std::ostringstream out;
  out << "id,lnDOR,inv_sqrt_ess,ess\n";
  for (const auto& p : report["points"]) {
    out << p["id"].get<std::string>() << ',' << num(p["lnDOR"].get<double>()) << ','
        << num(p["inv_sqrt_ess"].get<double>()) << ',' << num(p["ess"].get<double>()) << '\n';
  }
  return out.str();
}

json error_json(std::string_view code, const std::string& message) {
  return {{"code", code}, {"message", message}};
}

HttpResponse json_response(int status, const json& body) { return {status, "application/json", body.dump()}; }

HttpResponse error_response(int status, std::string_view code, const std::string& message) {
  return json_response(status, error_json(code, message));
}

std::vector<std::string> split_path(std::string_view path) {
  std::vector<std::string> parts;
  std::size_t i = 0;
  while (i < path.size()) {
    while (i < path.size() && path[i] == '/') ++i;
    const std::size_t j = path.find('/', i);
    const std::size_t end = j == std::string_view::npos ? path.size() : j;
    if (end > i) parts.emplace_back(path.substr(i, end - i));
    i = end;
  }
  return parts;
}

bool looks_like_json(std::string_view body, std::string_view content_type) {
  if (content_type.find("json") != std::string_view::npos) return true;
  for (char c : body) {
    if (std::isspace(static_cast<unsigned char>(c))) continue;
    return c == '[' || c == '{';
  }
  return false;
}

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

bool is_terminal(JobState s) { return s == JobState::done || s == JobState::failed || s == JobState::cancelled; }

}  // namespace

std::string_view to_string(JobKind kind) {
  switch (kind) {
    case JobKind::descriptives: return "descriptives";
    case JobKind::reitsma: return "reitsma";
    case JobKind::glmm: return "glmm";
    case JobKind::sa_grid: return "sa_grid";
    case JobKind::funnel: return "funnel";
  }
  return "reitsma";
}

JobKind job_kind_from_string(std::string_view name) {
  for (JobKind k : {JobKind::descriptives, JobKind::reitsma, JobKind::glmm, JobKind::sa_grid, JobKind::funnel}) {
    if (to_string(k) == name) return k;
  }
  throw Error(ErrorCode::options, "unknown analysis kind '" + std::string(name) + "'");
}

std::string_view to_string(JobState state) {
  switch (state) {
    case JobState::queued: return "queued";
    case JobState::running: return "running";
    case JobState::done: return "done";
    case JobState::failed: return "failed";
    case JobState::cancelled: return "cancelled";
  }
  return "queued";
}

AnalysisRequest parse_analysis_request(const json& spec) {
  if (!spec.is_object()) bad_option("analysis spec must be a JSON object");
  json opts = spec;
  if (spec.contains("options")) {
    if (!spec["options"].is_object()) bad_option("'options' must be an object");
    for (const auto& [k, v] : spec["options"].items()) opts[k] = v;
  }
  if (!opts.contains("kind")) bad_option("'kind' is required");

  AnalysisRequest req;
  req.kind = job_kind_from_string(string_option(opts, "kind", ""));
  req.correction = correction_from_string(string_option(opts, "correction", "zero-studies-only"));
  req.alpha = number_option(opts, "alpha", 0.05);
  if (!(req.alpha > 0.0 && req.alpha < 1.0)) bad_option("alpha must lie in (0, 1)");
  req.curve = curve_kind_from_string(string_option(opts, "curve", "sroc"));

  switch (req.kind) {
    case JobKind::descriptives:
      req.scatter = scatter_shape_from_string(string_option(opts, "scatter", "interval"));
      break;
    case JobKind::reitsma:
      req.method = fit_method_from_string(string_option(opts, "method", "ml"));
      if (req.method == FitMethod::glmm) bad_option("use kind 'glmm' for the binomial model");
      break;
    case JobKind::glmm: {
      const double nodes = number_option(opts, "nodes", 7);
      if (nodes != std::floor(nodes) || nodes < 1 || nodes > 41 || static_cast<int>(nodes) % 2 == 0) {
        bad_option("nodes must be an odd integer between 1 and 41");
      }
      req.quadrature.nodes_per_dim = static_cast<int>(nodes);
      if (opts.contains("adaptive")) {
        if (!opts["adaptive"].is_boolean()) bad_option("'adaptive' must be a boolean");
        req.quadrature.adaptive = opts["adaptive"].get<bool>();
      }
      break;
    }
    case JobKind::sa_grid: {
      const SelectionForm form = selection_form_from_string(string_option(opts, "form", std::string(to_string(SelectionMechanism{}.form))));
      const double cutoff = number_option(opts, "cutoff", number_option(opts, "u", kDefaultCutoff));
      json mechs = opts.value("mechanisms", json::array({"est", "lndor", "se", "sp"}));
      if (!mechs.is_array() || mechs.empty()) bad_option("'mechanisms' must be a non-empty array");
      for (const auto& m : mechs) req.mechanisms.push_back(mechanism_from_json(m, form, cutoff));
      json ps = opts.value("p_values", json(default_p_grid()));
      if (!ps.is_array() || ps.empty()) bad_option("'p_values' must be a non-empty array");
      for (const auto& p : ps) {
        if (!p.is_number()) bad_option("p values must be numbers");
        const double v = p.get<double>();
        if (!(v > 0.0 && v <= 1.0)) bad_option("p values must lie in (0, 1]");
        req.p_values.push_back(v);
      }
      std::sort(req.p_values.begin(), req.p_values.end(), std::greater<>());
      if (std::adjacent_find(req.p_values.begin(), req.p_values.end()) != req.p_values.end()) {
        bad_option("p values must be distinct");
      }
      break;
    }
    case JobKind::funnel:
      break;
  }
  return req;
}

json fit_report(const BivariateFit& fit, CurveKind curve, double alpha) {
  json j;
  j["fit"] = fit;
  j["sroc"] = sroc_curve(fit.params, curve);
  j["sauc"] = sauc(fit, curve, {}, alpha);
  j["sop_point"] = {expit(fit.params.mu1), expit(fit.params.mu2)};
  j["sop"] = nullptr;
  if (fit.cov_available) {
    try {
      j["sop"] = sop(fit, alpha);
    } catch (const Error&) {
    }
  }
  return j;
}

AnalysisOutput run_analysis(const StudyTable& table, const AnalysisRequest& req, std::stop_token stop,
                            const GridProgress& progress) {
  AnalysisOutput out;
  switch (req.kind) {
    case JobKind::descriptives: {
      const CorrectedTable corrected = continuity_correct(table, req.correction);
      const BivariateSample sample = logit_transform(corrected);
      const auto metrics = study_metrics(sample, corrected, req.alpha);
      json forest;
      for (ForestMetric m : {ForestMetric::se, ForestMetric::sp, ForestMetric::ln_dor, ForestMetric::lr_pos,
                             ForestMetric::lr_neg}) {
        forest[std::string(to_string(m))] = forest_series(metrics, m);
      }
      out.result = {{"m", table.size()},
                    {"correction", to_string(req.correction)},
                    {"original", table},
                    {"corrected", corrected},
                    {"transformed", sample},
                    {"metrics", metrics},
                    {"scatter", scatter_data(sample, req.scatter, req.alpha)},
                    {"scatter_shape", to_string(req.scatter)},
                    {"forest", forest}};
      out.csv = metrics_csv(corrected, sample, metrics);
      break;
    }
    case JobKind::reitsma: {
      const BivariateSample sample = prepare_sample(table, req.correction);
      out.result = fit_report(fit_reitsma(sample, req.method), req.curve, req.alpha);
      out.csv = fit_csv(out.result);
      break;
    }
    case JobKind::glmm: {
      out.result = fit_report(fit_glmm(table, req.quadrature), req.curve, req.alpha);
      out.csv = fit_csv(out.result);
      break;
    }
    case JobKind::sa_grid: {
      SensitivityOptions opts;
      opts.curve = req.curve;
      opts.ci_alpha = req.alpha;
      const BivariateSample sample = prepare_sample(table, req.correction);
      const SensitivityGrid grid = sensitivity_grid(sample, req.mechanisms, req.p_values, opts, stop, progress);
      out.result = grid;
      out.result["correction"] = to_string(req.correction);
      out.csv = grid_to_csv(grid);
      out.cancelled = grid.cancelled;
      break;
    }
    case JobKind::funnel: {
      const BivariateSample sample = prepare_sample(table, req.correction);
      out.result = funnel_report(sample, table);
      out.csv = funnel_csv(out.result);
      break;
    }
  }
  return out;
}

std::string fnv1a_hex(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

ServiceConfig ServiceConfig::from_env() {
  ServiceConfig cfg;
  if (const char* dir = std::getenv("DATA_DIR"); dir && *dir) cfg.data_dir = dir;
  if (const char* cap = std::getenv("MAX_UPLOAD_BYTES"); cap && *cap) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(cap, &end, 10);
    if (end && *end == '\0' && v > 0) cfg.max_upload_bytes = static_cast<std::size_t>(v);
  }
  return cfg;
}

AnalysisService::AnalysisService(ServiceConfig config) : config_(std::move(config)) {
  job_salt_ = (static_cast<std::uint64_t>(std::random_device{}()) << 32) ^ std::random_device{}();
  load_persisted();
  const unsigned n = std::max(1u, config_.workers);
  for (unsigned i = 0; i < n; ++i) {
    workers_.emplace_back([this](std::stop_token st) { worker_loop(st); });
  }
}

AnalysisService::~AnalysisService() {
  {
    std::lock_guard lock(registry_mutex_);
    for (auto& [id, job] : jobs_) job->stop.request_stop();
  }
  for (auto& w : workers_) w.request_stop();
  queue_cv_.notify_all();
  workers_.clear();
}

void AnalysisService::load_persisted() {
  if (!config_.data_dir) return;
  namespace fs = std::filesystem;
  const fs::path dir = *config_.data_dir / "datasets";
  std::error_code ec;
  fs::create_directories(dir, ec);
  fs::create_directories(*config_.data_dir / "jobs", ec);
  for (const auto& entry : fs::directory_iterator(dir, ec)) {
    if (entry.path().extension() != ".csv") continue;
    std::ifstream in(entry.path(), std::ios::binary);
    std::stringstream buf;
    buf << in.rdbuf();
    try {
      ParseResult parsed = parse_dataset(buf.str(), DataFormat::csv, entry.path().filename().string());
      auto ds = std::make_shared<Dataset>();
      ds->id = "ds_" + fnv1a_hex(to_csv(parsed.table));
      ds->table = std::move(parsed.table);
      ds->warnings = std::move(parsed.warnings);
      datasets_.emplace(ds->id, std::move(ds));
    } catch (const Error&) {
    }
  }
}

HttpResponse AnalysisService::handle(std::string_view method, std::string_view path,
                                     const std::map<std::string, std::string>& query, std::string_view body,
                                     std::string_view content_type) {
  const auto parts = split_path(path);
  auto not_allowed = [] { return error_response(405, "E_METHOD", "method not allowed"); };
  try {
    if (parts.size() == 1 && parts[0] == "health") {
      if (method != "GET") return not_allowed();
      return json_response(200, {{"status", "ok"}});
    }
    if (!parts.empty() && parts[0] == "datasets") {
      if (parts.size() == 1) return method == "POST" ? create_dataset(body, content_type) : not_allowed();
      if (parts.size() == 2) return method == "GET" ? get_dataset(parts[1]) : not_allowed();
      if (parts.size() == 3 && parts[2] == "analyses") {
        return method == "POST" ? create_job(parts[1], body) : not_allowed();
      }
    }
    if (!parts.empty() && parts[0] == "jobs") {
      if (parts.size() == 2) {
        if (method == "GET") return get_job(parts[1]);
        if (method == "DELETE") return cancel_job(parts[1]);
        return not_allowed();
      }
      if (parts.size() == 3 && parts[2] == "export") {
        return method == "GET" ? export_job(parts[1], query) : not_allowed();
      }
    }
    return error_response(404, "E_NOT_FOUND", "no route for " + std::string(path));
  } catch (const std::exception& e) {
    return error_response(500, "E_INTERNAL", e.what());
  }
}

HttpResponse AnalysisService::create_dataset(std::string_view body, std::string_view content_type) {
  if (body.size() > config_.max_upload_bytes) {
    return error_response(413, "E_TOO_LARGE",
                          "upload exceeds " + std::to_string(config_.max_upload_bytes) + " bytes");
  }
  if (std::all_of(body.begin(), body.end(), [](unsigned char c) { return std::isspace(c); })) {
    return error_response(400, "E_EMPTY", "empty upload");
  }
  ParseResult parsed;
  try {
    if (looks_like_json(body, content_type)) {
      json j;
      try {
        j = json::parse(body);
      } catch (const json::exception& e) {
        return error_response(400, "E_VALUE", std::string("malformed JSON: ") + e.what());
      }
      parsed = table_from_json(j);
    } else {
      parsed = parse_dataset(body, DataFormat::automatic, "upload");
    }
  } catch (const Error& e) {
    return error_response(400, code_name(e.code()), e.detail());
  }

  const std::string canonical = to_csv(parsed.table);
  const std::string id = "ds_" + fnv1a_hex(canonical);
  bool existing = false;
  {
    std::lock_guard lock(registry_mutex_);
    if (datasets_.count(id)) {
      existing = true;
    } else {
      auto ds = std::make_shared<Dataset>();
      ds->id = id;
      ds->table = parsed.table;
      ds->warnings = parsed.warnings;
      datasets_.emplace(id, std::move(ds));
    }
  }
  if (!existing && config_.data_dir) {
    std::ofstream out(*config_.data_dir / "datasets" / (id + ".csv"), std::ios::binary);
    out << canonical;
  }
  return json_response(existing ? 200 : 201, {{"id", id},
                                              {"m", parsed.table.size()},
                                              {"warnings", parsed.warnings},
                                              {"existing", existing}});
}

HttpResponse AnalysisService::get_dataset(const std::string& id) {
  const auto ds = find_dataset(id);
  if (!ds) return error_response(404, "E_NOT_FOUND", "unknown dataset '" + id + "'");
  json j = {{"id", ds->id}, {"m", ds->table.size()}, {"warnings", ds->warnings}, {"studies", ds->table}};
  try {
    j["transformed"] = prepare_sample(ds->table);
  } catch (const Error& e) {
    j["transformed"] = nullptr;
    j["transform_error"] = error_json(code_name(e.code()), e.detail());
  }
  return json_response(200, j);
}

HttpResponse AnalysisService::create_job(const std::string& dataset_id, std::string_view body) {
  if (!find_dataset(dataset_id)) return error_response(404, "E_NOT_FOUND", "unknown dataset '" + dataset_id + "'");
  json spec;
  try {
    spec = json::parse(body.empty() ? std::string_view("{}") : body);
  } catch (const json::exception& e) {
    return error_response(400, "E_VALUE", std::string("malformed JSON: ") + e.what());
  }
  AnalysisRequest req;
  try {
    req = parse_analysis_request(spec);
  } catch (const Error& e) {
    return error_response(422, code_name(e.code()), e.detail());
  } catch (const json::exception& e) {
    return error_response(422, "E_OPTIONS", e.what());
  }

  auto job = std::make_shared<Job>();
  job->dataset_id = dataset_id;
  job->request = std::move(req);
  if (job->request.kind == JobKind::sa_grid) {
    job->total = job->request.mechanisms.size() * job->request.p_values.size();
  }
  {
    std::lock_guard lock(registry_mutex_);
    char buf[32];
    std::snprintf(buf, sizeof buf, "job_%016llx", static_cast<unsigned long long>(mix(job_salt_ + ++job_counter_)));
    job->id = buf;
    jobs_.emplace(job->id, job);
    queue_.push_back(job);
  }
  queue_cv_.notify_one();
  return json_response(202, {{"id", job->id},
                             {"kind", to_string(job->request.kind)},
                             {"state", "queued"},
                             {"dataset_id", dataset_id}});
}

json AnalysisService::job_json(Job& job) {
  std::lock_guard lock(job.mutex);
  json j = {{"id", job.id},
            {"kind", to_string(job.request.kind)},
            {"dataset_id", job.dataset_id},
            {"state", to_string(job.state)},
            {"progress", std::to_string(job.done) + "/" + std::to_string(job.total)},
            {"done", job.done},
            {"total", job.total}};
  if (job.state == JobState::done) j["result"] = job.result;
  if (job.state == JobState::failed) j["error"] = job.error;
  if (job.stop.stop_requested()) j["cancel_requested"] = true;
  return j;
}

HttpResponse AnalysisService::get_job(const std::string& id) {
  const auto job = find_job(id);
  if (!job) return error_response(404, "E_NOT_FOUND", "unknown job '" + id + "'");
  return json_response(200, job_json(*job));
}

HttpResponse AnalysisService::cancel_job(const std::string& id) {
  const auto job = find_job(id);
  if (!job) return error_response(404, "E_NOT_FOUND", "unknown job '" + id + "'");
  {
    std::lock_guard lock(job->mutex);
    if (job->state == JobState::queued) {
      job->state = JobState::cancelled;
      job->finished.notify_all();
    } else if (job->state == JobState::running) {
      job->stop.request_stop();
    }
  }
  json j = job_json(*job);
  j.erase("result");
  return json_response(j["state"] == "running" ? 202 : 200, j);
}

HttpResponse AnalysisService::export_job(const std::string& id, const std::map<std::string, std::string>& query) {
  const auto job = find_job(id);
  if (!job) return error_response(404, "E_NOT_FOUND", "unknown job '" + id + "'");
  const auto it = query.find("format");
  const std::string format = it == query.end() ? "json" : it->second;
  if (format != "json" && format != "csv") return error_response(422, "E_OPTIONS", "format must be json or csv");
  std::lock_guard lock(job->mutex);
  if (job->state != JobState::done) {
    json j = error_json("E_NOT_READY", "job is " + std::string(to_string(job->state)));
    j["state"] = to_string(job->state);
    return json_response(409, j);
  }
  if (format == "csv") return {200, "text/csv", job->csv};
  return {200, "application/json", job->result.dump()};
}

std::optional<JobState> AnalysisService::wait(const std::string& job_id, std::chrono::milliseconds timeout) {
  const auto job = find_job(job_id);
  if (!job) return std::nullopt;
  std::unique_lock lock(job->mutex);
  job->finished.wait_for(lock, timeout, [&] { return is_terminal(job->state); });
  return job->state;
}

std::shared_ptr<const AnalysisService::Dataset> AnalysisService::find_dataset(const std::string& id) const {
  std::lock_guard lock(registry_mutex_);
  const auto it = datasets_.find(id);
  return it == datasets_.end() ? nullptr : it->second;
}

std::shared_ptr<AnalysisService::Job> AnalysisService::find_job(const std::string& id) const {
  std::lock_guard lock(registry_mutex_);
  const auto it = jobs_.find(id);
  return it == jobs_.end() ? nullptr : it->second;
}

void AnalysisService::worker_loop(std::stop_token stop) {
  while (!stop.stop_requested()) {
    std::shared_ptr<Job> job;
    {
      std::unique_lock lock(registry_mutex_);
      if (!queue_cv_.wait(lock, stop, [&] { return !queue_.empty(); })) return;
      job = std::move(queue_.front());
      queue_.pop_front();
    }
    {
      std::lock_guard lock(job->mutex);
      if (job->state != JobState::queued) continue;
      job->state = JobState::running;
    }
    execute(job);
  }
}

void AnalysisService::execute(const std::shared_ptr<Job>& job) {
  const auto ds = find_dataset(job->dataset_id);
  AnalysisOutput output;
  json error;
  try {
    output = run_analysis(ds->table, job->request, job->stop.get_token(), [&](std::size_t done, std::size_t total) {
      std::lock_guard lock(job->mutex);
      job->done = done;
      job->total = total;
    });
  } catch (const Error& e) {
    error = error_json(code_name(e.code()), e.detail());
  } catch (const std::exception& e) {
    error = error_json("E_INTERNAL", e.what());
  }

  std::lock_guard lock(job->mutex);
  if (job->stop.stop_requested() || output.cancelled) {
    job->state = JobState::cancelled;
  } else if (!error.is_null()) {
    job->state = JobState::failed;
    job->error = std::move(error);
  } else {
    job->result = std::move(output.result);
    job->csv = std::move(output.csv);
    job->done = job->total;
    job->state = JobState::done;
    if (config_.data_dir) {
      std::ofstream out(*config_.data_dir / "jobs" / (job->id + ".json"), std::ios::binary);
      out << job->result.dump();
    }
  }
  job->finished.notify_all();
}

void AnalysisService::mount(httplib::Server& server) {
  auto route = [this](const httplib::Request& req, httplib::Response& res) {
    std::map<std::string, std::string> query;
    for (const auto& [k, v] : req.params) query.emplace(k, v);
    const HttpResponse r = handle(req.method, req.path, query, req.body, req.get_header_value("Content-Type"));
    res.status = r.status;
    res.set_content(r.body, r.content_type);
    res.set_header("Access-Control-Allow-Origin", "*");
  };
  server.set_payload_max_length(config_.max_upload_bytes + (1u << 20));
  server.Get(".*", route);
  server.Post(".*", route);
  server.Delete(".*", route);
  server.Options(".*", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_header("Access-Control-Allow-Methods", "GET, POST, DELETE, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });
}

}  // namespace dtameta
