#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "trajmsm/data_model.hpp"
#include "trajmsm/error.hpp"
#include "trajmsm/iptw.hpp"
#include "trajmsm/numerics.hpp"

namespace trajmsm {

enum class MsmMethod { iptw_unstab, iptw_stab, crude, baseline_adj, tvc_adj, iptgw };

inline const char* msm_method_name(MsmMethod m) {
  switch (m) {
    case MsmMethod::iptw_unstab: return "iptw-unstab";
    case MsmMethod::iptw_stab: return "iptw-stab";
    case MsmMethod::crude: return "crude";
    case MsmMethod::baseline_adj: return "baseline_adj";
    case MsmMethod::tvc_adj: return "tvc_adj";
    case MsmMethod::iptgw: return "iptgw";
  }
  return "unknown";
}

inline MsmMethod parse_msm_method(const std::string& s) {
  if (s == "iptw-unstab") return MsmMethod::iptw_unstab;
  if (s == "iptw-stab") return MsmMethod::iptw_stab;
  if (s == "crude") return MsmMethod::crude;
  if (s == "baseline_adj") return MsmMethod::baseline_adj;
  if (s == "tvc_adj") return MsmMethod::tvc_adj;
  if (s == "iptgw") return MsmMethod::iptgw;
  throw Error(ErrorCode::config_error, "unknown MSM method '" + s + "'");
}

// Working-model fit: coefficients with robust (sandwich) covariance treating
// the weights as known, and Wald confidence intervals.
struct MsmFit {
  MsmMethod method = MsmMethod::iptw_stab;
  std::vector<std::string> names;
  Eigen::VectorXd coef;
  Eigen::MatrixXd sandwich;
  Eigen::VectorXd se;
  Eigen::VectorXd ci_low;
  Eigen::VectorXd ci_high;
  bool converged = true;
};

inline std::vector<std::pair<double, double>> confidence_intervals(
    const MsmFit& fit, double level = 0.95) {
  const double z = normal_quantile(0.5 + level / 2.0);
  std::vector<std::pair<double, double>> intervals;
  intervals.reserve(static_cast<std::size_t>(fit.coef.size()));
  for (Eigen::Index j = 0; j < fit.coef.size(); ++j) {
    const double se = std::sqrt(std::max(0.0, fit.sandwich(j, j)));
    intervals.emplace_back(fit.coef[j] - z * se, fit.coef[j] + z * se);
  }
  return intervals;
}

namespace detail {

inline void finalize_intervals(MsmFit& fit, double level = 0.95) {
  fit.se.resize(fit.coef.size());
  for (Eigen::Index j = 0; j < fit.coef.size(); ++j)
    fit.se[j] = std::sqrt(std::max(0.0, fit.sandwich(j, j)));
  const auto ci = confidence_intervals(fit, level);
  fit.ci_low.resize(fit.coef.size());
  fit.ci_high.resize(fit.coef.size());
  for (Eigen::Index j = 0; j < fit.coef.size(); ++j) {
    fit.ci_low[j] = ci[static_cast<std::size_t>(j)].first;
    fit.ci_high[j] = ci[static_cast<std::size_t>(j)].second;
  }
}

inline Eigen::MatrixXd sandwich_from(const Eigen::MatrixXd& bread,
                                     const Eigen::MatrixXd& meat) {
  Eigen::LDLT<Eigen::MatrixXd> ldlt(bread);
  if (ldlt.info() != Eigen::Success)
    throw Error(ErrorCode::rank_deficient, "singular information matrix");
  const Eigen::MatrixXd left = ldlt.solve(meat);
  return ldlt.solve(left.transpose()).transpose();
}

}  // namespace trajmsm::detail

// Design with intercept (unless Cox) plus group dummies (reference = group 1)
// plus optional extra columns; exact duplicate columns are dropped.
struct MsmDesign {
  Eigen::MatrixXd X;
  std::vector<std::string> names;
};

inline MsmDesign build_msm_design(
    const Eigen::VectorXi& labels, int J, bool intercept,
    const Eigen::MatrixXd& extra = Eigen::MatrixXd(),
    const std::vector<std::string>& extra_names = {}) {
  const Eigen::Index n = labels.size();
  for (Eigen::Index i = 0; i < n; ++i)
    if (labels[i] < 1 || labels[i] > J)
      throw Error(ErrorCode::domain_error, "group label out of range");
  detail::PeriodDesign d;
  d.X.resize(n, 0);
  if (intercept) {
    detail::append_column(d, Eigen::VectorXd::Ones(n), "(Intercept)");
  }
  for (int j = 2; j <= J; ++j) {
    Eigen::VectorXd dummy(n);
    for (Eigen::Index i = 0; i < n; ++i) dummy[i] = labels[i] == j ? 1.0 : 0.0;
    detail::append_column(d, dummy, "group" + std::to_string(j));
  }
  for (Eigen::Index c = 0; c < extra.cols(); ++c)
    detail::append_column(d, extra.col(c), extra_names[static_cast<std::size_t>(c)]);
  const auto kept = detail::dedup_columns(d.X);
  const auto masked = detail::apply_mask(d, kept);
  return {masked.X, masked.names};
}

// Weighted least squares working model; the sandwich is B^-1 M B^-T with
// B = sum w x x' and M = sum w^2 (y - x'b)^2 x x', weights treated as known.
inline MsmFit fit_msm_continuous_design(const MsmDesign& design,
                                        const Eigen::VectorXd& y,
                                        const Eigen::VectorXd& w,
                                        MsmMethod method) {
  GlmFit wls = fit_wls(design.X, y, w);
  const Eigen::VectorXd resid = y - design.X * wls.coef;
  Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(design.X.cols(), design.X.cols());
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double s = w[i] * resid[i];
    meat.noalias() += (s * s) * (design.X.row(i).transpose() * design.X.row(i));
  }
  MsmFit fit;
  fit.method = method;
  fit.names = design.names;
  fit.coef = wls.coef;
  fit.sandwich = detail::sandwich_from(wls.info, meat);
  detail::finalize_intervals(fit);
  return fit;
}

inline MsmFit fit_msm_continuous(const Eigen::VectorXi& labels, int J,
                                 const Eigen::VectorXd& y,
                                 const Eigen::VectorXd& w,
                                 MsmMethod method = MsmMethod::iptw_stab) {
  return fit_msm_continuous_design(build_msm_design(labels, J, true), y, w, method);
}

// Weighted logistic score equations (independence working correlation, one
// record per subject).
inline MsmFit fit_msm_binary_design(const MsmDesign& design,
                                    const Eigen::VectorXd& y,
                                    const Eigen::VectorXd& w, MsmMethod method) {
  bool has_zero = false;
  bool has_one = false;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (w[i] <= 0.0) continue;
    if (y[i] == 0.0) has_zero = true;
    if (y[i] == 1.0) has_one = true;
  }
  if (!has_zero || !has_one)
    throw Error(ErrorCode::separation,
                "degenerate binary outcome: both values must be present");
  GlmFit glm = fit_logistic(design.X, y, w);
  const Eigen::VectorXd prob = (design.X * glm.coef)
                                   .unaryExpr([](double eta) {
                                     return clamp_prob(sigmoid(eta));
                                   });
  Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(design.X.cols(), design.X.cols());
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double s = w[i] * (y[i] - prob[i]);
    meat.noalias() += (s * s) * (design.X.row(i).transpose() * design.X.row(i));
  }
  MsmFit fit;
  fit.method = method;
  fit.names = design.names;
  fit.coef = glm.coef;
  fit.sandwich = detail::sandwich_from(glm.info, meat);
  fit.converged = glm.converged;
  detail::finalize_intervals(fit);
  return fit;
}

inline MsmFit fit_msm_binary(const Eigen::VectorXi& labels, int J,
                             const Eigen::VectorXd& y, const Eigen::VectorXd& w,
                             MsmMethod method = MsmMethod::iptw_stab) {
  return fit_msm_binary_design(build_msm_design(labels, J, true), y, w, method);
}

struct CoxResult {
  Eigen::VectorXd coef;
  Eigen::MatrixXd info;     // observed information at the optimum
  Eigen::MatrixXd robust;   // sandwich from subject-level score residuals
  double loglik = 0.0;
  bool converged = false;
  int iterations = 0;
};

// Weighted Cox partial likelihood with Breslow tie handling, Newton-Raphson
// from beta = 0. The robust covariance is I^-1 (sum_i U_i U_i') I^-1 where
// U_i is the subject-level weighted score residual.
inline CoxResult fit_cox_breslow(const Eigen::VectorXd& time,
                                 const Eigen::VectorXi& event,
                                 const Eigen::MatrixXd& X,
                                 const Eigen::VectorXd& w,
                                 bool compute_robust = true,
                                 double tol = 1e-10, int max_iterations = 100,
                                 double divergence_threshold = 1e3) {
  const Eigen::Index n = time.size();
  const Eigen::Index p = X.cols();
  if (event.size() != n || X.rows() != n || w.size() != n)
    throw Error(ErrorCode::domain_error, "survival input size mismatch");
  if ((event.array() == 1).count() == 0)
    throw Error(ErrorCode::no_events, "no events observed");

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    return time[a] < time[b];
  });

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd score(p);
  Eigen::MatrixXd hessian(p, p);

  // One sweep over descending time: accumulate risk sums S0, S1, S2 and add
  // each distinct event time's Breslow contribution once all tied rows have
  // entered the risk set.
  const auto evaluate = [&](const Eigen::VectorXd& b, double& ll,
                            Eigen::VectorXd* grad, Eigen::MatrixXd* hess) {
    const Eigen::VectorXd eta = X * b;
    ll = 0.0;
    if (grad) grad->setZero();
    if (hess) hess->setZero();
    double s0 = 0.0;
    Eigen::VectorXd s1 = Eigen::VectorXd::Zero(p);
    Eigen::MatrixXd s2 = Eigen::MatrixXd::Zero(p, p);
    Eigen::Index i = n - 1;
    while (i >= 0) {
      const double d = time[order[static_cast<std::size_t>(i)]];
      Eigen::Index j = i;
      while (j >= 0 && time[order[static_cast<std::size_t>(j)]] == d) {
        const Eigen::Index idx = order[static_cast<std::size_t>(j)];
        const double risk = w[idx] * std::exp(eta[idx]);
        s0 += risk;
        s1.noalias() += risk * X.row(idx).transpose();
        if (hess) s2.noalias() += risk * (X.row(idx).transpose() * X.row(idx));
        --j;
      }
      double event_weight = 0.0;
      for (Eigen::Index k = j + 1; k <= i; ++k) {
        const Eigen::Index idx = order[static_cast<std::size_t>(k)];
        if (event[idx] != 1) continue;
        event_weight += w[idx];
        ll += w[idx] * eta[idx];
        if (grad) grad->noalias() += w[idx] * X.row(idx).transpose();
      }
      if (event_weight > 0.0) {
        ll -= event_weight * std::log(s0);
        if (grad) grad->noalias() -= (event_weight / s0) * s1;
        if (hess) {
          const Eigen::VectorXd mean = s1 / s0;
          hess->noalias() +=
              event_weight * (s2 / s0 - mean * mean.transpose());
        }
      }
      i = j;
    }
  };

  CoxResult result;
  double current;
  evaluate(beta, current, nullptr, nullptr);
  for (int iter = 0; iter < max_iterations; ++iter) {
    double ll;
    evaluate(beta, ll, &score, &hessian);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(hessian);
    if (ldlt.info() != Eigen::Success)
      throw Error(ErrorCode::rank_deficient, "singular partial-likelihood Hessian");
    Eigen::VectorXd delta = ldlt.solve(score);
    if (!delta.allFinite())
      throw Error(ErrorCode::rank_deficient, "degenerate Newton step");

    double step = 1.0;
    bool accepted = false;
    for (int h = 0; h <= 20; ++h) {
      const Eigen::VectorXd candidate = beta + step * delta;
      double cand_ll;
      evaluate(candidate, cand_ll, nullptr, nullptr);
      if (std::isfinite(cand_ll) && cand_ll >= current) {
        beta = candidate;
        result.iterations = iter + 1;
        if (cand_ll - current < tol) result.converged = true;
        current = cand_ll;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
    if (!result.converged && beta.norm() > divergence_threshold)
      throw Error(ErrorCode::monotone_likelihood,
                  "partial likelihood is monotone in the coefficients");
    if (result.converged) break;
  }
  if (!result.converged && beta.norm() > divergence_threshold)
    throw Error(ErrorCode::monotone_likelihood,
                "no convergence and coefficients diverged");

  evaluate(beta, result.loglik, &score, &hessian);
  result.coef = beta;
  result.info = hessian;

  if (compute_robust) {
    // distinct event times ascending with their risk sums at the optimum
    const Eigen::VectorXd eta = X * beta;
    std::vector<double> ev_time, ev_s0, ev_dw;
    std::vector<Eigen::VectorXd> ev_mean;
    {
      double s0 = 0.0;
      Eigen::VectorXd s1 = Eigen::VectorXd::Zero(p);
      Eigen::Index i = n - 1;
      while (i >= 0) {
        const double d = time[order[static_cast<std::size_t>(i)]];
        Eigen::Index j = i;
        double event_weight = 0.0;
        while (j >= 0 && time[order[static_cast<std::size_t>(j)]] == d) {
          const Eigen::Index idx = order[static_cast<std::size_t>(j)];
          const double risk = w[idx] * std::exp(eta[idx]);
          s0 += risk;
          s1.noalias() += risk * X.row(idx).transpose();
          if (event[idx] == 1) event_weight += w[idx];
          --j;
        }
        if (event_weight > 0.0) {
          ev_time.push_back(d);
          ev_s0.push_back(s0);
          ev_dw.push_back(event_weight);
          ev_mean.push_back(s1 / s0);
        }
        i = j;
      }
      std::reverse(ev_time.begin(), ev_time.end());
      std::reverse(ev_s0.begin(), ev_s0.end());
      std::reverse(ev_dw.begin(), ev_dw.end());
      std::reverse(ev_mean.begin(), ev_mean.end());
    }

    Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(p, p);
    double cum0 = 0.0;
    Eigen::VectorXd cumv = Eigen::VectorXd::Zero(p);
    std::size_t k = 0;
    Eigen::Index i = 0;
    while (i < n) {
      const double d = time[order[static_cast<std::size_t>(i)]];
      while (k < ev_time.size() && ev_time[k] <= d) {
        cum0 += ev_dw[k] / ev_s0[k];
        cumv.noalias() += (ev_dw[k] / ev_s0[k]) * ev_mean[k];
        ++k;
      }
      Eigen::VectorXd mean_at_d;
      if (k > 0 && ev_time[k - 1] == d) mean_at_d = ev_mean[k - 1];
      while (i < n && time[order[static_cast<std::size_t>(i)]] == d) {
        const Eigen::Index idx = order[static_cast<std::size_t>(i)];
        if (w[idx] == 0.0) {
          ++i;
          continue;
        }
        Eigen::VectorXd u =
            -w[idx] * std::exp(eta[idx]) * (cum0 * X.row(idx).transpose() - cumv);
        if (event[idx] == 1)
          u.noalias() += w[idx] * (X.row(idx).transpose() - mean_at_d);
        meat.noalias() += u * u.transpose();
        ++i;
      }
    }
    result.robust = detail::sandwich_from(hessian, meat);
  }
  return result;
}

inline MsmFit fit_msm_survival_design(const MsmDesign& design,
                                      const Eigen::VectorXd& time,
                                      const Eigen::VectorXi& event,
                                      const Eigen::VectorXd& w,
                                      MsmMethod method) {
  CoxResult cox = fit_cox_breslow(time, event, design.X, w);
  MsmFit fit;
  fit.method = method;
  fit.names = design.names;
  fit.coef = cox.coef;
  fit.sandwich = cox.robust;
  fit.converged = cox.converged;
  detail::finalize_intervals(fit);
  return fit;
}

inline MsmFit fit_msm_survival(const Eigen::VectorXd& time,
                               const Eigen::VectorXi& event,
                               const Eigen::VectorXi& labels, int J,
                               const Eigen::VectorXd& w,
                               MsmMethod method = MsmMethod::iptw_stab) {
  return fit_msm_survival_design(build_msm_design(labels, J, false), time,
                                 event, w, method);
}

// Working-model fit dispatching on the panel's outcome kind; the Cox design
// has no intercept.
inline MsmFit fit_msm_for_panel(const TrajectoryPanel& panel,
                                const Eigen::VectorXi& labels, int J,
                                const Eigen::VectorXd& w, MsmMethod method,
                                const Eigen::MatrixXd& extra = Eigen::MatrixXd(),
                                const std::vector<std::string>& extra_names = {}) {
  switch (panel.outcome.kind) {
    case OutcomeKind::continuous:
      return fit_msm_continuous_design(
          build_msm_design(labels, J, true, extra, extra_names),
          panel.outcome.y, w, method);
    case OutcomeKind::binary:
      return fit_msm_binary_design(
          build_msm_design(labels, J, true, extra, extra_names),
          panel.outcome.y, w, method);
    case OutcomeKind::survival:
      return fit_msm_survival_design(
          build_msm_design(labels, J, false, extra, extra_names),
          panel.outcome.y, panel.outcome.event, w, method);
  }
  throw Error(ErrorCode::config_error, "unknown outcome kind");
}

// The comparison estimators from the simulation study: unadjusted, baseline-
// adjusted, time-varying-covariate adjusted, and inverse probability of
// trajectory-group weighting (multinomial model of C on V, stabilized by the
// marginal group frequencies).
inline MsmFit fit_alternative(const TrajectoryPanel& panel,
                              const Eigen::VectorXi& labels, int J,
                              MsmMethod method) {
  const Eigen::VectorXd unit = Eigen::VectorXd::Ones(panel.n);
  switch (method) {
    case MsmMethod::crude:
      return fit_msm_for_panel(panel, labels, J, unit, method);
    case MsmMethod::baseline_adj: {
      std::vector<std::string> names;
      for (int c = 0; c < panel.q; ++c) names.push_back("V" + std::to_string(c + 1));
      return fit_msm_for_panel(panel, labels, J, unit, method, panel.baseline, names);
    }
    case MsmMethod::tvc_adj: {
      Eigen::MatrixXd extra(panel.n, panel.q + panel.K * panel.p);
      std::vector<std::string> names;
      for (int c = 0; c < panel.q; ++c) {
        extra.col(c) = panel.baseline.col(c);
        names.push_back("V" + std::to_string(c + 1));
      }
      for (int t = 0; t < panel.K; ++t)
        for (int c = 0; c < panel.p; ++c) {
          extra.col(panel.q + t * panel.p + c) =
              panel.covariates[static_cast<std::size_t>(t)].col(c);
          names.push_back("L" + std::to_string(c + 1) + "_t" + std::to_string(t + 1));
        }
      return fit_msm_for_panel(panel, labels, J, unit, method, extra, names);
    }
    case MsmMethod::iptgw: {
      Eigen::VectorXd w = Eigen::VectorXd::Ones(panel.n);
      if (panel.q > 0) {
        Eigen::MatrixXd design(panel.n, 1 + panel.q);
        design.col(0).setOnes();
        design.rightCols(panel.q) = panel.baseline;
        MultinomialFit multi = fit_multinomial(design, labels, unit);
        Eigen::VectorXd marginal = Eigen::VectorXd::Zero(J);
        for (int i = 0; i < panel.n; ++i) marginal[labels[i] - 1] += 1.0;
        marginal /= static_cast<double>(panel.n);
        for (int i = 0; i < panel.n; ++i) {
          Eigen::VectorXd eta = Eigen::VectorXd::Zero(J);
          eta.tail(J - 1) = multi.coef * design.row(i).transpose();
          const double m0 = eta.maxCoeff();
          double denom = 0.0;
          for (int j = 0; j < J; ++j) denom += std::exp(eta[j] - m0);
          const double prob =
              clamp_prob(std::exp(eta[labels[i] - 1] - m0) / denom);
          w[i] = marginal[labels[i] - 1] / prob;
        }
      }
      return fit_msm_for_panel(panel, labels, J, w, method);
    }
    default:
      throw Error(ErrorCode::config_error,
                  "fit_alternative expects a comparison method");
  }
}

}  // namespace trajmsm
