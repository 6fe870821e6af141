#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "trajmsm/data_model.hpp"
#include "trajmsm/error.hpp"
#include "trajmsm/numerics.hpp"

namespace trajmsm {

// Which lagged terms enter the per-period treatment models. The default
// denominator conditions on (A_{t-1}, L_t, L_{t-1}, V) and the numerator on
// (A_{t-1}, V); the first period conditions on (L_1, V) and (V) respectively.
// full_history switches both sides to the complete treatment/covariate
// history, only sensible for short panels (K <= 5).
struct HistorySpec {
  bool include_baseline = true;
  bool full_history = false;
};

// Empirical quantile with linear interpolation between order statistics.
inline double quantile(std::vector<double> values, double percent) {
  if (values.empty())
    throw Error(ErrorCode::domain_error, "quantile of empty sample");
  std::sort(values.begin(), values.end());
  const double h = (percent / 100.0) * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = static_cast<std::size_t>(std::ceil(h));
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

namespace detail {

struct PeriodDesign {
  Eigen::MatrixXd X;
  std::vector<std::string> names;
};

inline void append_column(PeriodDesign& design, const Eigen::VectorXd& col,
                          const std::string& name) {
  design.X.conservativeResize(Eigen::NoChange, design.X.cols() + 1);
  design.X.col(design.X.cols() - 1) = col;
  design.names.push_back(name);
}

// all candidate columns for the period-t (0-based) denominator model
inline PeriodDesign denominator_columns(const TrajectoryPanel& panel, int t,
                                        const HistorySpec& spec) {
  PeriodDesign d;
  d.X.resize(panel.n, 1);
  d.X.col(0).setOnes();
  d.names.push_back("(Intercept)");
  if (spec.full_history) {
    for (int s = 0; s < t; ++s)
      append_column(d, panel.treatment.col(s).cast<double>(), "A" + std::to_string(s + 1));
    for (int s = 0; s <= t; ++s)
      for (int c = 0; c < panel.p; ++c)
        append_column(d, panel.covariates[static_cast<std::size_t>(s)].col(c),
                      "L" + std::to_string(c + 1) + "_t" + std::to_string(s + 1));
  } else {
    if (t >= 1)
      append_column(d, panel.treatment.col(t - 1).cast<double>(),
                    "A" + std::to_string(t));
    for (int c = 0; c < panel.p; ++c)
      append_column(d, panel.covariates[static_cast<std::size_t>(t)].col(c),
                    "L" + std::to_string(c + 1) + "_t" + std::to_string(t + 1));
    if (t >= 1)
      for (int c = 0; c < panel.p; ++c)
        append_column(d, panel.covariates[static_cast<std::size_t>(t - 1)].col(c),
                      "L" + std::to_string(c + 1) + "_t" + std::to_string(t));
  }
  if (spec.include_baseline)
    for (int c = 0; c < panel.q; ++c)
      append_column(d, panel.baseline.col(c), "V" + std::to_string(c + 1));
  return d;
}

inline PeriodDesign numerator_columns(const TrajectoryPanel& panel, int t,
                                      const HistorySpec& spec) {
  PeriodDesign d;
  d.X.resize(panel.n, 1);
  d.X.col(0).setOnes();
  d.names.push_back("(Intercept)");
  const int lags = spec.full_history ? t : std::min(t, 1);
  for (int s = t - lags; s < t; ++s)
    append_column(d, panel.treatment.col(s).cast<double>(), "A" + std::to_string(s + 1));
  if (spec.include_baseline)
    for (int c = 0; c < panel.q; ++c)
      append_column(d, panel.baseline.col(c), "V" + std::to_string(c + 1));
  return d;
}

// indices of columns that are not exact duplicates of an earlier column
// (V repeats L_1 when baselines are drawn from the first-period confounders)
inline std::vector<int> dedup_columns(const Eigen::MatrixXd& X) {
  std::vector<int> kept;
  for (int c = 0; c < X.cols(); ++c) {
    bool duplicate = false;
    for (int k : kept)
      if (X.col(c) == X.col(k)) {
        duplicate = true;
        break;
      }
    if (!duplicate) kept.push_back(c);
  }
  return kept;
}

inline PeriodDesign apply_mask(const PeriodDesign& d, const std::vector<int>& kept) {
  PeriodDesign out;
  out.X.resize(d.X.rows(), static_cast<Eigen::Index>(kept.size()));
  for (std::size_t c = 0; c < kept.size(); ++c) {
    out.X.col(static_cast<Eigen::Index>(c)) = d.X.col(kept[c]);
    out.names.push_back(d.names[static_cast<std::size_t>(kept[c])]);
  }
  return out;
}

}  // namespace detail

// Per-period conditional logistic models for the treatment process: the
// denominator targets g(A|X) = prod_t P(A_t | history), the numerator the
// stabilizing product prod_t P(A_t | past treatment, V).
struct TreatmentMechanism {
  HistorySpec spec;
  int K = 0;
  int p = 0;
  int q = 0;
  std::vector<GlmFit> denominator;
  std::vector<GlmFit> numerator;
  std::vector<std::vector<int>> denominator_mask;
  std::vector<std::vector<int>> numerator_mask;
  std::vector<std::vector<std::string>> denominator_names;
  std::vector<std::vector<std::string>> numerator_names;
  Eigen::MatrixXd fitted_baseline;  // V rows seen at fit time, for
                                    // marginalizing numerator probabilities
};

inline TreatmentMechanism fit_treatment_mechanism(const TrajectoryPanel& panel,
                                                  const HistorySpec& spec = {}) {
  if (spec.full_history && panel.K > 5)
    throw Error(ErrorCode::config_error,
                "full-history conditioning is limited to K <= 5");
  TreatmentMechanism mech;
  mech.spec = spec;
  mech.K = panel.K;
  mech.p = panel.p;
  mech.q = panel.q;
  mech.fitted_baseline = panel.baseline;
  const Eigen::VectorXd unit = Eigen::VectorXd::Ones(panel.n);

  for (int t = 0; t < panel.K; ++t) {
    const Eigen::VectorXd response = panel.treatment.col(t).cast<double>();
    auto fit_side = [&](const detail::PeriodDesign& full, bool is_denominator) {
      const auto kept = detail::dedup_columns(full.X);
      const auto design = detail::apply_mask(full, kept);
      try {
        GlmFit fit = fit_logistic(design.X, response, unit);
        if (is_denominator) {
          mech.denominator.push_back(std::move(fit));
          mech.denominator_mask.push_back(kept);
          mech.denominator_names.push_back(design.names);
        } else {
          mech.numerator.push_back(std::move(fit));
          mech.numerator_mask.push_back(kept);
          mech.numerator_names.push_back(design.names);
        }
      } catch (const Error& e) {
        throw Error(e.code(), e.message(),
                    {{"period", std::to_string(t + 1)},
                     {"model", is_denominator ? "denominator" : "numerator"}});
      }
    };
    fit_side(detail::denominator_columns(panel, t, spec), true);
    fit_side(detail::numerator_columns(panel, t, spec), false);
  }
  return mech;
}

namespace detail {

// n x K matrix of fitted probabilities of the *observed* treatment value
inline Eigen::MatrixXd observed_probability(const TrajectoryPanel& panel,
                                            const TreatmentMechanism& mech,
                                            bool use_denominator) {
  if (panel.K != mech.K || panel.p != mech.p || panel.q != mech.q)
    throw Error(ErrorCode::domain_error, "panel incompatible with mechanism");
  Eigen::MatrixXd prob(panel.n, panel.K);
  for (int t = 0; t < panel.K; ++t) {
    const auto full = use_denominator ? denominator_columns(panel, t, mech.spec)
                                      : numerator_columns(panel, t, mech.spec);
    const auto& mask = use_denominator ? mech.denominator_mask[static_cast<std::size_t>(t)]
                                       : mech.numerator_mask[static_cast<std::size_t>(t)];
    const auto design = apply_mask(full, mask);
    const auto& fit = use_denominator ? mech.denominator[static_cast<std::size_t>(t)]
                                      : mech.numerator[static_cast<std::size_t>(t)];
    const Eigen::VectorXd eta = design.X * fit.coef;
    for (int i = 0; i < panel.n; ++i) {
      const double p1 = clamp_prob(sigmoid(eta[i]));
      prob(i, t) = panel.treatment(i, t) == 1 ? p1 : 1.0 - p1;
    }
  }
  return prob;
}

}  // namespace detail

// Per-subject inverse-probability-of-treatment weights. Weights are computed
// from the observed trajectories, never from the trajectory groups.
struct WeightVector {
  Eigen::VectorXd values;
  bool stabilized = false;
  std::optional<std::pair<double, double>> truncation_percentiles;
};

inline WeightVector compute_weights(
    const TrajectoryPanel& panel, const TreatmentMechanism& mechanism,
    bool stabilized,
    std::optional<std::pair<double, double>> truncation = std::nullopt) {
  const Eigen::MatrixXd denom =
      detail::observed_probability(panel, mechanism, true);
  WeightVector weights;
  weights.stabilized = stabilized;
  weights.values = Eigen::VectorXd::Ones(panel.n);
  for (int t = 0; t < panel.K; ++t)
    weights.values = weights.values.cwiseQuotient(denom.col(t));
  if (stabilized) {
    const Eigen::MatrixXd numer =
        detail::observed_probability(panel, mechanism, false);
    for (int t = 0; t < panel.K; ++t)
      weights.values = weights.values.cwiseProduct(numer.col(t));
  }
  if (truncation) {
    const auto [low, high] = *truncation;
    if (!(low >= 0.0 && high <= 100.0 && low <= high))
      throw Error(ErrorCode::config_error, "invalid truncation percentiles");
    std::vector<double> sample(weights.values.data(),
                               weights.values.data() + weights.values.size());
    const double lo = quantile(sample, low);
    const double hi = quantile(sample, high);
    weights.values = weights.values.cwiseMax(lo).cwiseMin(hi);
    weights.truncation_percentiles = truncation;
  }
  return weights;
}

// Fitted probability of a whole regime under the numerator model,
// prod_t P(a_t | a_{t-1}, V), averaged over the baseline rows seen at fit
// time. With no baseline columns this is the plain fitted marginal
// trajectory probability.
inline double trajectory_numerator_prob(const TreatmentMechanism& mechanism,
                                        const TrajectoryCode& code) {
  if (code.period_count() != mechanism.K)
    throw Error(ErrorCode::domain_error, "code period count mismatch");
  const bool use_v = mechanism.spec.include_baseline && mechanism.q > 0;
  const Eigen::Index rows = use_v ? mechanism.fitted_baseline.rows() : 1;
  double total = 0.0;
  for (Eigen::Index r = 0; r < rows; ++r) {
    double prob = 1.0;
    for (int t = 0; t < mechanism.K; ++t) {
      const auto& mask = mechanism.numerator_mask[static_cast<std::size_t>(t)];
      const auto& names = mechanism.numerator_names[static_cast<std::size_t>(t)];
      const auto& fit = mechanism.numerator[static_cast<std::size_t>(t)];
      double eta = 0.0;
      for (std::size_t c = 0; c < names.size(); ++c) {
        const std::string& name = names[c];
        double value;
        if (name == "(Intercept)") {
          value = 1.0;
        } else if (name[0] == 'A') {
          const int s = std::stoi(name.substr(1));
          value = static_cast<double>(code.bits[static_cast<std::size_t>(s - 1)]);
        } else {  // V column
          const int c_v = std::stoi(name.substr(1));
          value = use_v ? mechanism.fitted_baseline(r, c_v - 1) : 0.0;
        }
        eta += fit.coef[static_cast<Eigen::Index>(c)] * value;
      }
      const double p1 = clamp_prob(sigmoid(eta));
      prob *= code.bits[static_cast<std::size_t>(t)] == 1 ? p1 : 1.0 - p1;
    }
    total += prob;
  }
  return total / static_cast<double>(rows);
}

struct WeightDiagnostics {
  double mean = 0.0;
  double sd = 0.0;
  double min = 0.0;
  double max = 0.0;
  double p01 = 0.0;
  double p50 = 0.0;
  double p99 = 0.0;
};

inline WeightDiagnostics weight_diagnostics(const WeightVector& weights) {
  const auto& w = weights.values;
  if (w.size() == 0)
    throw Error(ErrorCode::domain_error, "empty weight vector");
  WeightDiagnostics d;
  d.mean = w.mean();
  d.sd = w.size() > 1
             ? std::sqrt((w.array() - d.mean).square().sum() /
                         static_cast<double>(w.size() - 1))
             : 0.0;
  d.min = w.minCoeff();
  d.max = w.maxCoeff();
  std::vector<double> sample(w.data(), w.data() + w.size());
  d.p01 = quantile(sample, 1.0);
  d.p50 = quantile(sample, 50.0);
  d.p99 = quantile(sample, 99.0);
  return d;
}

}  // namespace trajmsm
