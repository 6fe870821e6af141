#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/QR>
#include <cmath>
#include <string>
#include <vector>

#include "trajmsm/error.hpp"

namespace trajmsm {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double logit(double p) { return std::log(p / (1.0 - p)); }

// probabilities are clamped inside likelihood evaluation to avoid log(0)
inline constexpr double kProbClamp = 1e-12;

inline double clamp_prob(double p) {
  if (p < kProbClamp) return kProbClamp;
  if (p > 1.0 - kProbClamp) return 1.0 - kProbClamp;
  return p;
}

// Standard normal quantile, Wichura's AS 241 (PPND16).
inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0))
    throw Error(ErrorCode::domain_error, "quantile probability must be in (0,1)");
  const double q = p - 0.5;
  double r;
  if (std::fabs(q) <= 0.425) {
    r = 0.180625 - q * q;
    return q *
           (((((((2509.0809287301226727 * r + 33430.575583588128105) * r +
                 67265.770927008700853) * r + 45921.953931549871457) * r +
               13731.693765509461125) * r + 1971.5909503065514427) * r +
             133.14166789178437745) * r + 3.387132872796366608) /
           (((((((5226.495278852545703 * r + 28729.085735721942674) * r +
                 39307.89580009271061) * r + 21213.794301586595867) * r +
               5394.1960214247511077) * r + 687.1870074920579083) * r +
             42.313330701600911252) * r + 1.0);
  }
  r = q < 0.0 ? p : 1.0 - p;
  r = std::sqrt(-std::log(r));
  double value;
  if (r <= 5.0) {
    r -= 1.6;
    value = (((((((7.7454501427834140764e-4 * r + 0.0227238449892691845833) * r +
                  0.24178072517745061177) * r + 1.27045825245236838258) * r +
                3.64784832476320460504) * r + 5.7694972214606914055) * r +
              4.6303378461565452959) * r + 1.42343711074968357734) /
            (((((((1.05075007164441684324e-9 * r + 5.475938084995344946e-4) * r +
                  0.0151986665636164571966) * r + 0.14810397642748007459) * r +
                0.68976733498510000455) * r + 1.6763848301838038494) * r +
              2.05319162663775882187) * r + 1.0);
  } else {
    r -= 5.0;
    value = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r +
                  0.0012426609473880784386) * r + 0.026532189526576123093) * r +
                0.29656057182850489123) * r + 1.7848265399172913358) * r +
              5.4637849111641143699) * r + 6.6579046435011037772) /
            (((((((2.04426310338993978564e-15 * r + 1.4215117583164458887e-7) * r +
                  1.8463183175100546818e-5) * r + 7.868691311456132591e-4) * r +
                0.0148753612908506148525) * r + 0.13692988092273580531) * r +
              0.59983220655588793769) * r + 1.0);
  }
  return q < 0.0 ? -value : value;
}

struct GlmFit {
  Eigen::VectorXd coef;
  Eigen::MatrixXd info;  // observed information at coef (X'WX + ridge I)
  bool converged = false;
  int iterations = 0;
  double loglik = 0.0;  // weighted log-likelihood at coef, unpenalized
  std::vector<double> loglik_trace;  // objective after each accepted step
};

struct GlmOptions {
  int max_iterations = 100;
  double rel_tol = 1e-10;    // relative log-likelihood change
  double score_tol = 1e-8;   // max |score| component
  double separation_threshold = 1e3;  // ||coef|| beyond which non-convergence
                                      // is reported as separation (ridge == 0)
  int max_step_halvings = 20;
};

namespace detail {

inline void check_glm_inputs(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                             const Eigen::VectorXd& w) {
  if (X.rows() != y.size() || X.rows() != w.size())
    throw Error(ErrorCode::domain_error, "design/response/weight size mismatch");
  if (X.cols() < 1)
    throw Error(ErrorCode::domain_error, "design matrix needs at least 1 column");
  for (Eigen::Index i = 0; i < w.size(); ++i)
    if (!(w[i] >= 0.0) || !std::isfinite(w[i]))
      throw Error(ErrorCode::domain_error, "weights must be finite and nonnegative");
}

// rank of the sqrt(w)-scaled design restricted to positive-weight rows
inline void require_full_column_rank(const Eigen::MatrixXd& X,
                                     const Eigen::VectorXd& w) {
  Eigen::MatrixXd scaled(X.rows(), X.cols());
  Eigen::Index kept = 0;
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    if (w[i] > 0.0) scaled.row(kept++) = std::sqrt(w[i]) * X.row(i);
  }
  if (kept < X.cols())
    throw Error(ErrorCode::rank_deficient,
                "fewer positive-weight rows than coefficients");
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(scaled.topRows(kept));
  qr.setThreshold(1e-10);
  if (qr.rank() < X.cols())
    throw Error(ErrorCode::rank_deficient,
                "design matrix is rank deficient (rank " +
                    std::to_string(qr.rank()) + " of " +
                    std::to_string(X.cols()) + ")");
}

}  // namespace detail

// Weighted Bernoulli log-likelihood maximized by IRLS with step halving.
// Responses may be fractional in [0,1] (grouped/expected-count form); the
// binary case is y in {0,1}. A positive ridge subtracts (ridge/2)*||coef||^2
// from the objective and regularizes the Newton system.
inline GlmFit fit_logistic(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                           const Eigen::VectorXd& w, double ridge = 0.0,
                           const GlmOptions& options = {},
                           const Eigen::VectorXd* start = nullptr) {
  detail::check_glm_inputs(X, y, w);
  for (Eigen::Index i = 0; i < y.size(); ++i)
    if (!(y[i] >= 0.0 && y[i] <= 1.0))
      throw Error(ErrorCode::domain_error,
                  "logistic responses must lie in [0,1]");
  if (ridge == 0.0) detail::require_full_column_rank(X, w);

  const Eigen::Index d = X.cols();
  Eigen::VectorXd beta = start ? *start : Eigen::VectorXd::Zero(d);

  const auto objective = [&](const Eigen::VectorXd& b, Eigen::VectorXd& prob) {
    prob = (X * b).unaryExpr([](double eta) { return clamp_prob(sigmoid(eta)); });
    double ll = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i)
      ll += w[i] * (y[i] * std::log(prob[i]) + (1.0 - y[i]) * std::log(1.0 - prob[i]));
    return ll - 0.5 * ridge * b.squaredNorm();
  };

  GlmFit fit;
  Eigen::VectorXd prob;
  double current = objective(beta, prob);
  fit.loglik_trace.push_back(current);

  for (int iter = 0; iter < options.max_iterations; ++iter) {
    Eigen::VectorXd score = X.transpose() * (w.cwiseProduct(y - prob)) - ridge * beta;
    if (score.lpNorm<Eigen::Infinity>() < options.score_tol) {
      fit.converged = true;
      break;
    }
    Eigen::VectorXd irls_w = w.cwiseProduct(prob.cwiseProduct(
        (Eigen::VectorXd::Ones(prob.size()) - prob)));
    Eigen::MatrixXd hessian = X.transpose() * irls_w.asDiagonal() * X;
    hessian.diagonal().array() += ridge;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(hessian);
    if (ldlt.info() != Eigen::Success)
      throw Error(ErrorCode::rank_deficient, "singular IRLS system");
    Eigen::VectorXd delta = ldlt.solve(score);

    double step = 1.0;
    bool accepted = false;
    for (int h = 0; h <= options.max_step_halvings; ++h) {
      Eigen::VectorXd candidate = beta + step * delta;
      Eigen::VectorXd cand_prob;
      const double cand = objective(candidate, cand_prob);
      if (std::isfinite(cand) && cand >= current) {
        beta = candidate;
        prob = cand_prob;
        const double change = cand - current;
        current = cand;
        fit.loglik_trace.push_back(current);
        fit.iterations = iter + 1;
        accepted = true;
        if (change < options.rel_tol * std::max(1.0, std::fabs(current)))
          fit.converged = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;  // no ascent direction left at this precision
    if (!fit.converged && ridge == 0.0 &&
        beta.norm() > options.separation_threshold)
      throw Error(ErrorCode::separation,
                  "coefficients diverging (||coef|| > " +
                      std::to_string(options.separation_threshold) + ")");
    if (fit.converged) break;
  }

  if (!fit.converged && ridge == 0.0 &&
      beta.norm() > options.separation_threshold)
    throw Error(ErrorCode::separation, "no convergence and coefficients diverged");

  Eigen::VectorXd irls_w =
      w.cwiseProduct(prob.cwiseProduct(Eigen::VectorXd::Ones(prob.size()) - prob));
  fit.coef = beta;
  fit.info = X.transpose() * irls_w.asDiagonal() * X;
  fit.info.diagonal().array() += ridge;
  fit.loglik = current + 0.5 * ridge * beta.squaredNorm();
  return fit;
}

struct MultinomialFit {
  Eigen::MatrixXd coef;  // (J-1) x d, class 1 is the reference
  bool converged = false;
  int iterations = 0;
  double loglik = 0.0;
  std::vector<double> loglik_trace;
};

// Weighted multinomial logistic regression, labels in 1..J, Newton-Raphson on
// the stacked (J-1)*d parameter vector. Same convergence contract as
// fit_logistic.
inline MultinomialFit fit_multinomial(const Eigen::MatrixXd& X,
                                      const Eigen::VectorXi& labels,
                                      const Eigen::VectorXd& w,
                                      const GlmOptions& options = {}) {
  if (X.rows() != labels.size() || X.rows() != w.size())
    throw Error(ErrorCode::domain_error, "design/label/weight size mismatch");
  int J = 0;
  for (Eigen::Index i = 0; i < labels.size(); ++i) {
    if (labels[i] < 1)
      throw Error(ErrorCode::domain_error, "class labels must be >= 1");
    J = std::max(J, labels[i]);
  }
  std::vector<double> class_mass(static_cast<std::size_t>(J), 0.0);
  for (Eigen::Index i = 0; i < labels.size(); ++i)
    class_mass[static_cast<std::size_t>(labels[i] - 1)] += w[i];
  for (int j = 0; j < J; ++j)
    if (!(class_mass[static_cast<std::size_t>(j)] > 0.0))
      throw Error(ErrorCode::empty_class,
                  "class " + std::to_string(j + 1) +
                      " absent among positive-weight rows");

  const Eigen::Index n = X.rows();
  const Eigen::Index d = X.cols();
  const Eigen::Index m = static_cast<Eigen::Index>(J - 1) * d;
  detail::require_full_column_rank(X, w);

  Eigen::MatrixXd beta = Eigen::MatrixXd::Zero(J - 1, d);

  // row-wise softmax with the reference class pinned at eta = 0
  Eigen::MatrixXd prob(n, J);
  const auto objective = [&](const Eigen::MatrixXd& b) {
    double ll = 0.0;
    Eigen::MatrixXd eta = Eigen::MatrixXd::Zero(n, J);
    eta.rightCols(J - 1) = X * b.transpose();
    for (Eigen::Index i = 0; i < n; ++i) {
      const double m0 = eta.row(i).maxCoeff();
      double denom = 0.0;
      for (int j = 0; j < J; ++j) denom += std::exp(eta(i, j) - m0);
      const double log_denom = m0 + std::log(denom);
      for (int j = 0; j < J; ++j)
        prob(i, j) = clamp_prob(std::exp(eta(i, j) - log_denom));
      ll += w[i] * std::log(prob(i, labels[i] - 1));
    }
    return ll;
  };

  MultinomialFit fit;
  double current = objective(beta);
  fit.loglik_trace.push_back(current);
  Eigen::MatrixXd prob_at_beta = prob;

  for (int iter = 0; iter < options.max_iterations; ++iter) {
    Eigen::VectorXd score = Eigen::VectorXd::Zero(m);
    Eigen::MatrixXd hessian = Eigen::MatrixXd::Zero(m, m);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (int a = 1; a < J; ++a) {
        const double resid = (labels[i] == a + 1 ? 1.0 : 0.0) - prob_at_beta(i, a);
        score.segment((a - 1) * d, d) += w[i] * resid * X.row(i).transpose();
        for (int b = 1; b < J; ++b) {
          const double curv = prob_at_beta(i, a) *
                              ((a == b ? 1.0 : 0.0) - prob_at_beta(i, b));
          hessian.block((a - 1) * d, (b - 1) * d, d, d) +=
              w[i] * curv * (X.row(i).transpose() * X.row(i));
        }
      }
    }
    if (score.lpNorm<Eigen::Infinity>() < options.score_tol) {
      fit.converged = true;
      break;
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(hessian);
    if (ldlt.info() != Eigen::Success)
      throw Error(ErrorCode::rank_deficient, "singular multinomial system");
    Eigen::VectorXd delta = ldlt.solve(score);

    double step = 1.0;
    bool accepted = false;
    for (int h = 0; h <= options.max_step_halvings; ++h) {
      Eigen::MatrixXd candidate = beta;
      for (int a = 0; a < J - 1; ++a)
        candidate.row(a) += step * delta.segment(a * d, d).transpose();
      const double cand = objective(candidate);
      if (std::isfinite(cand) && cand >= current) {
        beta = candidate;
        prob_at_beta = prob;
        const double change = cand - current;
        current = cand;
        fit.loglik_trace.push_back(current);
        fit.iterations = iter + 1;
        accepted = true;
        if (change < options.rel_tol * std::max(1.0, std::fabs(current)))
          fit.converged = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
    if (!fit.converged && beta.norm() > options.separation_threshold)
      throw Error(ErrorCode::separation, "multinomial coefficients diverging");
    if (fit.converged) break;
  }

  fit.coef = beta;
  fit.loglik = current;
  return fit;
}

// Weighted least squares, exact one-step solve of the normal equations.
inline GlmFit fit_wls(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                      const Eigen::VectorXd& w) {
  detail::check_glm_inputs(X, y, w);
  detail::require_full_column_rank(X, w);
  Eigen::MatrixXd xtwx = X.transpose() * w.asDiagonal() * X;
  Eigen::VectorXd xtwy = X.transpose() * w.cwiseProduct(y);
  Eigen::LDLT<Eigen::MatrixXd> ldlt(xtwx);
  if (ldlt.info() != Eigen::Success)
    throw Error(ErrorCode::rank_deficient, "singular normal equations");
  GlmFit fit;
  fit.coef = ldlt.solve(xtwy);
  fit.info = xtwx;
  fit.converged = true;
  fit.iterations = 1;
  const Eigen::VectorXd resid = y - X * fit.coef;
  fit.loglik = -0.5 * resid.cwiseProduct(resid).dot(w);
  fit.loglik_trace.push_back(fit.loglik);
  return fit;
}

}  // namespace trajmsm
