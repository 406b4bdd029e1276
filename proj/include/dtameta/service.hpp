#pragma once

#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stop_token>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "dtameta/descriptives.hpp"
#include "dtameta/glmm.hpp"
#include "dtameta/selection.hpp"
#include "dtameta/study_table.hpp"
#include "json.hpp"

namespace httplib {
class Server;
}

namespace dtameta {

enum class JobKind { descriptives, reitsma, glmm, sa_grid, funnel };
enum class JobState { queued, running, done, failed, cancelled };

std::string_view to_string(JobKind kind);
JobKind job_kind_from_string(std::string_view name);
std::string_view to_string(JobState state);

/// A fully validated analysis request.
struct AnalysisRequest {
  JobKind kind = JobKind::reitsma;
  CorrectionStrategy correction = CorrectionStrategy::zero_studies_only;
  double alpha = 0.05;
  CurveKind curve = CurveKind::sroc;
  // descriptives
  ScatterShape scatter = ScatterShape::interval;
  // reitsma
  FitMethod method = FitMethod::ml;
  // glmm
  QuadratureConfig quadrature;
  // sa_grid
  std::vector<SelectionMechanism> mechanisms;
  std::vector<double> p_values;
};

/// Reads {kind, ...options} (options may also sit under "options"). Throws E_OPTIONS.
AnalysisRequest parse_analysis_request(const nlohmann::json& spec);

struct AnalysisOutput {
  nlohmann::json result;
  std::string csv;  // one row per study, fit or grid cell
  bool cancelled = false;
};

/// Runs one analysis on a validated table. Grids honour `stop` between cells.
AnalysisOutput run_analysis(const StudyTable& table, const AnalysisRequest& request,
                            std::stop_token stop = {}, const GridProgress& progress = {});

/// {fit, sroc, sauc, sop} for a fitted bivariate model. `sop` is null without a covariance.
nlohmann::json fit_report(const BivariateFit& fit, CurveKind curve, double alpha);

/// 16 lowercase hex digits of the 64-bit FNV-1a hash.
std::string fnv1a_hex(std::string_view data);

struct ServiceConfig {
  std::size_t max_upload_bytes = 10u << 20;
  std::optional<std::filesystem::path> data_dir;
  unsigned workers = 2;

  /// Reads DATA_DIR and MAX_UPLOAD_BYTES.
  static ServiceConfig from_env();
};

struct HttpResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;

  nlohmann::json json() const { return nlohmann::json::parse(body); }
};

class AnalysisService {
 public:
  explicit AnalysisService(ServiceConfig config = {});
  ~AnalysisService();
  AnalysisService(const AnalysisService&) = delete;
  AnalysisService& operator=(const AnalysisService&) = delete;

  /// Transport-independent router used by the HTTP binding and by tests.
  HttpResponse handle(std::string_view method, std::string_view path,
                      const std::map<std::string, std::string>& query = {}, std::string_view body = {},
                      std::string_view content_type = {});

  /// Registers the routes on an httplib server.
  void mount(httplib::Server& server);

  /// Blocks until the job leaves the queued/running states or the timeout expires.
  std::optional<JobState> wait(const std::string& job_id, std::chrono::milliseconds timeout);

 private:
  struct Dataset {
    std::string id;
    StudyTable table;
    std::vector<std::string> warnings;
  };

  struct Job {
    std::string id;
    std::string dataset_id;
    AnalysisRequest request;
    std::mutex mutex;
    std::condition_variable finished;
    JobState state = JobState::queued;
    std::size_t done = 0;
    std::size_t total = 1;
    nlohmann::json result;
    std::string csv;
    nlohmann::json error;
    std::stop_source stop;
  };

  HttpResponse create_dataset(std::string_view body, std::string_view content_type);
  HttpResponse get_dataset(const std::string& id);
  HttpResponse create_job(const std::string& dataset_id, std::string_view body);
  HttpResponse get_job(const std::string& id);
  HttpResponse cancel_job(const std::string& id);
  HttpResponse export_job(const std::string& id, const std::map<std::string, std::string>& query);

  std::shared_ptr<const Dataset> find_dataset(const std::string& id) const;
  std::shared_ptr<Job> find_job(const std::string& id) const;
  nlohmann::json job_json(Job& job);
  void worker_loop(std::stop_token stop);
  void execute(const std::shared_ptr<Job>& job);
  void load_persisted();

  ServiceConfig config_;
  mutable std::mutex registry_mutex_;
  std::map<std::string, std::shared_ptr<const Dataset>> datasets_;
  std::map<std::string, std::shared_ptr<Job>> jobs_;
  std::deque<std::shared_ptr<Job>> queue_;
  std::condition_variable_any queue_cv_;
  std::uint64_t job_counter_ = 0;
  std::uint64_t job_salt_ = 0;
  std::vector<std::jthread> workers_;
};

}  // namespace dtameta
