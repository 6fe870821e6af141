#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "trajmsm/data_model.hpp"
#include "trajmsm/error.hpp"
#include "trajmsm/numerics.hpp"
#include "trajmsm/rng.hpp"

namespace trajmsm {

// J-component mixture of Bernoulli sequences; each class's success
// probability is a polynomial of time on the logit scale. Classes are kept in
// canonical order: ascending mean fitted treatment probability over t = 1..K,
// so labels are deterministic across refits and replicates.
struct LcgmModel {
  int J = 0;
  int degree = 1;
  int K = 0;
  Eigen::VectorXd mixing;  // length J, nonnegative, sums to 1
  Eigen::MatrixXd coef;    // J x (degree+1), logit-scale polynomial in t
  double loglik = 0.0;
  bool converged = false;

  int n_params() const { return (J - 1) + J * (degree + 1); }

  // fitted P(A_t = 1 | C = j) for t = 1..K, clamped to (0,1)
  Eigen::MatrixXd probability_table() const {
    Eigen::MatrixXd table(J, K);
    for (int j = 0; j < J; ++j)
      for (int t = 0; t < K; ++t) {
        double eta = 0.0;
        double tp = 1.0;
        for (int k = 0; k <= degree; ++k) {
          eta += coef(j, k) * tp;
          tp *= static_cast<double>(t + 1);
        }
        table(j, t) = clamp_prob(sigmoid(eta));
      }
    return table;
  }
};

struct PosteriorMatrix {
  Eigen::MatrixXd Z;  // n x J, rows sum to 1
};

// P(code | class) under local independence: the product over periods of the
// class's per-period Bernoulli probability.
inline double class_trajectory_prob(const Eigen::VectorXd& class_coef,
                                    const TrajectoryCode& code) {
  double log_prob = 0.0;
  for (int t = 0; t < code.period_count(); ++t) {
    double eta = 0.0;
    double tp = 1.0;
    for (Eigen::Index k = 0; k < class_coef.size(); ++k) {
      eta += class_coef[k] * tp;
      tp *= static_cast<double>(t + 1);
    }
    const double p = clamp_prob(sigmoid(eta));
    log_prob += code.bits[static_cast<std::size_t>(t)] == 1 ? std::log(p)
                                                            : std::log(1.0 - p);
  }
  return std::exp(log_prob);
}

namespace detail {

// per-subject per-class log P(A_i | C = j) via one matrix product:
// sum_t a_it log p_jt + (1-a_it) log(1-p_jt) = (A * S)_ij + c_j
inline Eigen::MatrixXd class_loglik_matrix(const LcgmModel& model,
                                           const Eigen::MatrixXd& treatment) {
  const Eigen::MatrixXd table = model.probability_table();
  Eigen::MatrixXd slope(model.K, model.J);
  Eigen::VectorXd offset(model.J);
  for (int j = 0; j < model.J; ++j) {
    double c = 0.0;
    for (int t = 0; t < model.K; ++t) {
      slope(t, j) = std::log(table(j, t)) - std::log(1.0 - table(j, t));
      c += std::log(1.0 - table(j, t));
    }
    offset[j] = c;
  }
  Eigen::MatrixXd ll = treatment * slope;
  ll.rowwise() += offset.transpose();
  return ll;
}

struct EStepResult {
  PosteriorMatrix posterior;
  double loglik = 0.0;  // observed mixture log-likelihood
};

inline EStepResult e_step_with_loglik(const LcgmModel& model,
                                      const Eigen::MatrixXd& treatment) {
  const Eigen::Index n = treatment.rows();
  Eigen::MatrixXd joint = class_loglik_matrix(model, treatment);
  for (int j = 0; j < model.J; ++j)
    joint.col(j).array() += std::log(std::max(model.mixing[j], kProbClamp));

  EStepResult result;
  result.posterior.Z.resize(n, model.J);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double row_max = joint.row(i).maxCoeff();
    double denom = 0.0;
    for (int j = 0; j < model.J; ++j) denom += std::exp(joint(i, j) - row_max);
    for (int j = 0; j < model.J; ++j)
      result.posterior.Z(i, j) = std::exp(joint(i, j) - row_max) / denom;
    result.loglik += row_max + std::log(denom);
  }
  return result;
}

}  // namespace detail

// Posterior membership probabilities P(C_i = j | A_i) by Bayes' rule with a
// per-row log-sum-exp.
inline PosteriorMatrix e_step(const LcgmModel& model,
                              const Eigen::MatrixXi& treatment) {
  if (treatment.cols() != model.K)
    throw Error(ErrorCode::domain_error, "treatment period count mismatch");
  return detail::e_step_with_loglik(model, treatment.cast<double>()).posterior;
}

inline double mixture_loglik(const LcgmModel& model,
                             const Eigen::MatrixXi& treatment) {
  return detail::e_step_with_loglik(model, treatment.cast<double>()).loglik;
}

struct MStepResult {
  Eigen::VectorXd mixing;
  Eigen::MatrixXd coef;
};

// Maximization step. Mixing proportions are posterior column means; class
// coefficients maximize the responsibility-weighted Bernoulli likelihood of
// the nK stacked observations. Because the stacked design only takes K
// distinct rows, the fit collapses exactly to K grouped observations with
// fractional responses sum_i Z_ij a_it / sum_i Z_ij and weight sum_i Z_ij —
// same score, Hessian, and optimum as the stacked fit.
inline MStepResult m_step(const PosteriorMatrix& posterior,
                          const Eigen::MatrixXi& treatment, int degree,
                          const Eigen::MatrixXd* warm_start = nullptr) {
  const Eigen::Index n = treatment.rows();
  const int K = static_cast<int>(treatment.cols());
  const int J = static_cast<int>(posterior.Z.cols());
  if (posterior.Z.rows() != n)
    throw Error(ErrorCode::domain_error, "posterior/treatment row mismatch");

  MStepResult result;
  result.mixing = posterior.Z.colwise().mean();
  for (int j = 0; j < J; ++j)
    if (result.mixing[j] < 1e-4)
      throw Error(ErrorCode::degenerate_class,
                  "class " + std::to_string(j + 1) + " mixing proportion " +
                      std::to_string(result.mixing[j]) + " fell below 1e-4");

  Eigen::MatrixXd time_design(K, degree + 1);
  for (int t = 0; t < K; ++t) {
    double tp = 1.0;
    for (int k = 0; k <= degree; ++k) {
      time_design(t, k) = tp;
      tp *= static_cast<double>(t + 1);
    }
  }

  const Eigen::MatrixXd success = posterior.Z.transpose() * treatment.cast<double>();
  result.coef.resize(J, degree + 1);
  for (int j = 0; j < J; ++j) {
    const double mass = posterior.Z.col(j).sum();
    Eigen::VectorXd y = success.row(j).transpose() / mass;
    Eigen::VectorXd w = Eigen::VectorXd::Constant(K, mass);
    Eigen::VectorXd start;
    const Eigen::VectorXd* start_ptr = nullptr;
    if (warm_start) {
      start = warm_start->row(j).transpose();
      start_ptr = &start;
    }
    GlmFit fit;
    try {
      fit = fit_logistic(time_design, y, w, 0.0, {}, start_ptr);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::separation) throw;
      fit = fit_logistic(time_design, y, w, 1e-8, {}, start_ptr);
    }
    result.coef.row(j) = fit.coef.transpose();
  }
  return result;
}

// Hard assignment C_i = argmax_j Z_ij, ties toward the smallest class index.
// Labels are 1-based.
inline Eigen::VectorXi assign_groups(const PosteriorMatrix& posterior) {
  const Eigen::Index n = posterior.Z.rows();
  const int J = static_cast<int>(posterior.Z.cols());
  Eigen::VectorXi labels(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    int best = 0;
    for (int j = 1; j < J; ++j)
      if (posterior.Z(i, j) > posterior.Z(i, best)) best = j;
    labels[i] = best + 1;
  }
  return labels;
}

inline double bic(const LcgmModel& model, int n) {
  return -2.0 * model.loglik + model.n_params() * std::log(static_cast<double>(n));
}

struct LcgmFit {
  LcgmModel model;
  PosteriorMatrix posterior;
  std::vector<double> loglik_trace;  // best chain, one entry per EM iteration
  std::vector<std::vector<double>> restart_traces;  // all non-collapsed chains
  int best_restart = -1;
  int collapsed_restarts = 0;
};

// EM fit with random-responsibility restarts. Each restart draws its own RNG
// stream from (seed, restart index) so the selected chain does not depend on
// execution order; ties in the final log-likelihood break toward the lower
// restart index.
inline LcgmFit fit_lcgm(const Eigen::MatrixXi& treatment, int J, int degree,
                        int restarts, std::uint64_t seed,
                        int max_iterations = 500, double rel_tol = 1e-8) {
  const Eigen::Index n = treatment.rows();
  const int K = static_cast<int>(treatment.cols());
  if (J < 1) throw Error(ErrorCode::config_error, "J must be >= 1");
  if (degree < 0) throw Error(ErrorCode::config_error, "degree must be >= 0");
  if (degree + 1 > K)
    throw Error(ErrorCode::config_error,
                "polynomial degree + 1 exceeds period count");
  if (restarts < 1) throw Error(ErrorCode::config_error, "restarts must be >= 1");
  const int n_params = (J - 1) + J * (degree + 1);
  if (n_params >= n)
    throw Error(ErrorCode::config_error,
                "model has " + std::to_string(n_params) +
                    " parameters but only " + std::to_string(n) + " subjects");
  for (Eigen::Index i = 0; i < n; ++i)
    for (int t = 0; t < K; ++t)
      if (treatment(i, t) != 0 && treatment(i, t) != 1)
        throw Error(ErrorCode::domain_error, "treatment entries must be 0 or 1");

  const Eigen::MatrixXd treatment_d = treatment.cast<double>();

  LcgmFit best;
  double best_loglik = -std::numeric_limits<double>::infinity();
  Error last_collapse(ErrorCode::degenerate_class, "no restart survived");

  for (int r = 0; r < restarts; ++r) {
    RngStream rng(derive_seed(seed, 0x4c43474dULL, static_cast<std::uint64_t>(r)));
    PosteriorMatrix posterior;
    posterior.Z.resize(n, J);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto row = rng.dirichlet_unit(J);
      for (int j = 0; j < J; ++j) posterior.Z(i, j) = row[static_cast<std::size_t>(j)];
    }

    LcgmModel model;
    model.J = J;
    model.degree = degree;
    model.K = K;

    std::vector<double> trace;
    bool collapsed = false;
    bool chain_converged = false;
    double previous = -std::numeric_limits<double>::infinity();
    const Eigen::MatrixXd* warm = nullptr;
    for (int iter = 0; iter < max_iterations; ++iter) {
      try {
        MStepResult m = m_step(posterior, treatment, degree, warm);
        model.mixing = std::move(m.mixing);
        model.coef = std::move(m.coef);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::degenerate_class) throw;
        last_collapse = e;
        collapsed = true;
        break;
      }
      warm = &model.coef;
      auto estep = detail::e_step_with_loglik(model, treatment_d);
      posterior = std::move(estep.posterior);
      trace.push_back(estep.loglik);
      if (iter > 0 &&
          std::fabs(estep.loglik - previous) < rel_tol * std::max(1.0, std::fabs(previous))) {
        chain_converged = true;
        previous = estep.loglik;
        break;
      }
      previous = estep.loglik;
    }
    if (collapsed) {
      ++best.collapsed_restarts;
      continue;
    }
    model.loglik = previous;
    model.converged = chain_converged;
    best.restart_traces.push_back(trace);
    if (previous > best_loglik) {
      best_loglik = previous;
      best.model = model;
      best.posterior = posterior;
      best.loglik_trace = std::move(trace);
      best.best_restart = r;
    }
  }

  if (best.best_restart < 0) throw last_collapse;

  // canonical order: ascending mean fitted treatment probability
  const Eigen::MatrixXd table = best.model.probability_table();
  std::vector<int> order(static_cast<std::size_t>(J));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return table.row(a).mean() < table.row(b).mean();
  });
  LcgmModel ordered = best.model;
  PosteriorMatrix ordered_posterior;
  ordered_posterior.Z.resize(n, J);
  for (int j = 0; j < J; ++j) {
    ordered.mixing[j] = best.model.mixing[order[static_cast<std::size_t>(j)]];
    ordered.coef.row(j) = best.model.coef.row(order[static_cast<std::size_t>(j)]);
    ordered_posterior.Z.col(j) = best.posterior.Z.col(order[static_cast<std::size_t>(j)]);
  }
  best.model = std::move(ordered);
  best.posterior = std::move(ordered_posterior);
  return best;
}

}  // namespace trajmsm
