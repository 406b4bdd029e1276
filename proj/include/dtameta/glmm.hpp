#pragma once

#include "dtameta/model.hpp"
#include "dtameta/optimize.hpp"
#include "dtameta/study_table.hpp"

namespace dtameta {

/// Gauss-Hermite settings for the per-study random-effect integrals. Use 15 nodes when
/// any arm has fewer than ten subjects.
struct QuadratureConfig {
  int nodes_per_dim = 7;  // odd, so a node sits on the mode
  bool adaptive = true;   // centre and scale at the per-study mode
  int max_iter_mode = 50;
};

/// Marginal log-likelihood of one study's counts under the binomial-logit-normal model.
double glmm_study_loglik(const BivariateParams& params, const StudyRecord& study,
                         const QuadratureConfig& q);

/// -sum_i log of int Bin(tp_i; n_dis, expit e1) Bin(tn_i; n_hea, expit e2) N2(e; mu, Sigma) de
/// on raw counts. Throws E_MODE or E_SINGULAR.
double glmm_nll(const BivariateParams& params, const StudyTable& table,
                const QuadratureConfig& q = {});

/// Maximum likelihood over the working scale of fit_reitsma. Zero cells enter unmodified.
BivariateFit fit_glmm(const StudyTable& table, const QuadratureConfig& q = {},
                      const OptimOptions& opts = {});

}  // namespace dtameta
