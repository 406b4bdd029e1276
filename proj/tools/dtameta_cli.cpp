// Batch front end: summary, fit, sa, funnel, simulate.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dtameta/descriptives.hpp"
#include "dtameta/error.hpp"
#include "dtameta/funnel.hpp"
#include "dtameta/glmm.hpp"
#include "dtameta/reitsma.hpp"
#include "dtameta/selection.hpp"
#include "dtameta/service.hpp"
#include "dtameta/simulation.hpp"
#include "dtameta/sroc.hpp"
#include "json_config.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dtameta;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitFit = 3;

struct Common {
  std::string input;
  std::string out = ".";
  std::string correction = "zero-studies-only";
  double alpha = 0.05;
};

// Only listed for --help; the file is expanded before parsing.
std::string config_path;

void add_common(CLI::App* sub, Common& c, bool needs_input = true) {
  if (needs_input) sub->add_option("--input,-i", c.input, "Study table (CSV/TSV with TP, FP, FN, TN)")->required();
  sub->add_option("--out,-o", c.out, "Output directory")->capture_default_str();
  sub->add_option("--alpha", c.alpha, "Two-sided interval level is 1 - alpha")->capture_default_str();
  sub->add_option("--config", config_path, "JSON file whose keys mirror the long flags");
}

void add_correction(CLI::App* sub, Common& c) {
  sub->add_option("--correction", c.correction, "zero-studies-only | all-studies | none")->capture_default_str();
}

StudyTable load_table(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::empty, "cannot read '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  ParseResult parsed = parse_dataset(buf.str(), DataFormat::automatic, fs::path(path).filename().string());
  for (const auto& w : parsed.warnings) std::cerr << "warning: " << w << '\n';
  return parsed.table;
}

void write_file(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << text;
}

void write_json(const fs::path& path, const json& j) { write_file(path, j.dump(2) + "\n"); }

json run_request(const StudyTable& table, const AnalysisRequest& req, const fs::path& dir,
                 const std::string& json_name, const std::string& csv_name) {
  const AnalysisOutput output = run_analysis(table, req);
  write_json(dir / json_name, output.result);
  if (!csv_name.empty()) write_file(dir / csv_name, output.csv);
  return output.result;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Meta-analysis of diagnostic test accuracy with publication-bias sensitivity analysis"};
  app.name("dtameta");
  app.require_subcommand(1);

  Common common;

  auto* summary = app.add_subcommand("summary", "Per-study descriptives, scatter and forest data");
  add_common(summary, common);
  add_correction(summary, common);
  std::string scatter = "interval";
  summary->add_option("--scatter", scatter, "interval | region")->capture_default_str();

  auto* fit = app.add_subcommand("fit", "Bivariate random-effects fit with SROC, SAUC and SOP");
  add_common(fit, common);
  add_correction(fit, common);
  std::string model = "reitsma";
  std::string method = "ml";
  std::string curve = "sroc";
  int nodes = 7;
  bool non_adaptive = false;
  fit->add_option("--model", model, "reitsma | glmm")->capture_default_str();
  fit->add_option("--method", method, "ml | reml (reitsma only)")->capture_default_str();
  fit->add_option("--curve", curve, "sroc | hsroc")->capture_default_str();
  fit->add_option("--nodes", nodes, "Gauss-Hermite nodes per dimension (glmm, odd)")->capture_default_str();
  fit->add_flag("--non-adaptive", non_adaptive, "Disable adaptive quadrature (glmm)");

  auto* sa = app.add_subcommand("sa", "Publication-bias sensitivity grid");
  add_common(sa, common);
  add_correction(sa, common);
  std::string mechanisms = "est,lndor,se,sp";
  std::vector<double> p_values = default_p_grid();
  std::string form = std::string(to_string(SelectionMechanism{}.form));
  double cutoff = kDefaultCutoff;
  sa->add_option("--mechanisms", mechanisms, "Comma list of est, lndor, se, sp, custom:c1:c2")->capture_default_str();
  sa->add_option("--p", p_values, "Marginal selection probabilities")->delimiter(',');
  sa->add_option("--curve", curve, "sroc | hsroc")->capture_default_str();
  sa->add_option("--form", form, "Selection function: step | probit")->capture_default_str();
  sa->add_option("--cutoff", cutoff, "Significance cutoff u of the t statistic")->capture_default_str();

  auto* funnel = app.add_subcommand("funnel", "Funnel plot data and asymmetry test on lnDOR");
  add_common(funnel, common);
  add_correction(funnel, common);

  auto* simulate = app.add_subcommand("simulate", "Simulate a study population");
  add_common(simulate, common, false);
  SimConfig sim;
  std::string arms = "fixed:100";
  std::string select_mech;
  double select_beta = 1.0;
  simulate->add_option("--mu1", sim.params.mu1, "Mean logit sensitivity")->capture_default_str();
  simulate->add_option("--mu2", sim.params.mu2, "Mean logit specificity")->capture_default_str();
  simulate->add_option("--tau1", sim.params.tau1, "Between-study SD of logit sensitivity")->capture_default_str();
  simulate->add_option("--tau2", sim.params.tau2, "Between-study SD of logit specificity")->capture_default_str();
  simulate->add_option("--rho", sim.params.rho, "Between-study correlation")->capture_default_str();
  simulate->add_option("--studies", sim.n_studies, "Number of studies")->capture_default_str();
  simulate->add_option("--arms", arms, "fixed:N | uniform:LO:HI | lognormal:M:S")->capture_default_str();
  simulate->add_option("--seed", sim.seed, "Random seed")->capture_default_str();
  simulate->add_option("--select", select_mech, "Apply selective publication with this mechanism");
  simulate->add_option("--beta", select_beta, "Publication probability of non-significant studies")
      ->capture_default_str();
  simulate->add_option("--cutoff", cutoff, "Significance cutoff u")->capture_default_str();

  std::vector<std::string> args;
  try {
    args = cli::expand_json_config(std::vector<std::string>(argv + 1, argv + argc));
  } catch (const std::exception& e) {
    std::cerr << "dtameta: E_OPTIONS: " << e.what() << '\n';
    return kExitValidation;
  }
  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  try {
    const fs::path dir = common.out;
    AnalysisRequest req;
    req.alpha = common.alpha;
    req.correction = correction_from_string(common.correction);
    if (!(common.alpha > 0.0 && common.alpha < 1.0)) throw Error(ErrorCode::options, "alpha must lie in (0, 1)");

    if (*summary) {
      req.kind = JobKind::descriptives;
      req.scatter = scatter_shape_from_string(scatter);
      const json result = run_request(load_table(common.input), req, dir, "summary.json", "metrics.csv");
      write_json(dir / "scatter.json", result["scatter"]);
      write_json(dir / "forest.json", result["forest"]);
    } else if (*fit) {
      req.curve = curve_kind_from_string(curve);
      const StudyTable table = load_table(common.input);
      BivariateFit result;
      if (model == "reitsma") {
        req.method = fit_method_from_string(method);
        if (req.method == FitMethod::glmm) throw Error(ErrorCode::options, "use --model glmm");
        result = fit_reitsma(prepare_sample(table, req.correction), req.method);
      } else if (model == "glmm") {
        if (nodes < 1 || nodes % 2 == 0) throw Error(ErrorCode::options, "--nodes must be a positive odd integer");
        req.quadrature.nodes_per_dim = nodes;
        req.quadrature.adaptive = !non_adaptive;
        result = fit_glmm(table, req.quadrature);
      } else {
        throw Error(ErrorCode::options, "--model must be reitsma or glmm");
      }
      const json report = fit_report(result, req.curve, req.alpha);
      write_json(dir / "fit.json", report["fit"]);
      write_json(dir / "sroc.json", report["sroc"]);
      write_json(dir / "sauc.json", report["sauc"]);
      write_json(dir / "sop.json", {{"point", report["sop_point"]}, {"region", report["sop"]}});
      for (const auto& w : result.warnings) std::cerr << "warning: " << w << '\n';
    } else if (*sa) {
      req.kind = JobKind::sa_grid;
      req.curve = curve_kind_from_string(curve);
      const SelectionForm f = selection_form_from_string(form);
      for (const auto& m : split_list(mechanisms)) req.mechanisms.push_back(mechanism_from_string(m, f, cutoff));
      if (req.mechanisms.empty()) throw Error(ErrorCode::options, "no mechanisms given");
      req.p_values = p_values;
      const StudyTable table = load_table(common.input);
      SensitivityOptions opts;
      opts.curve = req.curve;
      opts.ci_alpha = req.alpha;
      const SensitivityGrid grid =
          sensitivity_grid(prepare_sample(table, req.correction), req.mechanisms, req.p_values, opts, {},
                           [](std::size_t done, std::size_t total) {
                             std::cerr << "\rcells " << done << '/' << total << std::flush;
                             if (done == total) std::cerr << '\n';
                           });
      json j = grid;
      j["correction"] = to_string(req.correction);
      write_json(dir / "grid.json", j);
      write_file(dir / "grid.csv", grid_to_csv(grid));
      bool any_ok = false;
      for (const auto& c : grid.cells) {
        if (c.fit) {
          any_ok = true;
        } else {
          std::cerr << "cell " << c.mech_idx << " p=" << c.p << ": " << c.error_code << ": " << c.error_message << '\n';
        }
      }
      if (!any_ok) return kExitFit;
    } else if (*funnel) {
      req.kind = JobKind::funnel;
      run_request(load_table(common.input), req, dir, "funnel.json", "funnel.csv");
    } else if (*simulate) {
      sim.arms = arm_size_law_from_string(arms);
      const SimulatedPopulation pop = simulate_population(sim);
      write_file(dir / "table.csv", to_csv(pop.table));
      json truth = truth_json(sim);
      if (!select_mech.empty()) {
        const SelectionMechanism mech = mechanism_from_string(select_mech, SelectionForm::step, cutoff);
        const SelectionOutcome sel = apply_selection(pop.table, mech, select_beta, req.correction, sim.seed);
        write_file(dir / "published.csv", to_csv(sel.published));
        truth["selection"] = {{"mechanism", mech}, {"beta", select_beta}, {"empirical_p", sel.empirical_p},
                              {"published", sel.kept.size()}};
      }
      write_json(dir / "truth.json", truth);
    }
  } catch (const Error& e) {
    std::cerr << "dtameta: " << e.what() << '\n';
    return is_validation_error(e.code()) ? kExitValidation : kExitFit;
  } catch (const std::exception& e) {
    std::cerr << "dtameta: E_IO: " << e.what() << '\n';
    return kExitFit;
  }
  return 0;
}
