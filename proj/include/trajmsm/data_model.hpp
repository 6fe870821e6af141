#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "trajmsm/error.hpp"

namespace trajmsm {

enum class OutcomeKind { continuous, binary, survival };

inline const char* outcome_kind_name(OutcomeKind kind) {
  switch (kind) {
    case OutcomeKind::continuous: return "continuous";
    case OutcomeKind::binary: return "binary";
    case OutcomeKind::survival: return "survival";
  }
  return "unknown";
}

inline OutcomeKind parse_outcome_kind(const std::string& s) {
  if (s == "continuous") return OutcomeKind::continuous;
  if (s == "binary") return OutcomeKind::binary;
  if (s == "survival") return OutcomeKind::survival;
  throw Error(ErrorCode::config_error, "unknown outcome kind '" + s + "'");
}

// One fixed treatment regime over K periods.
struct TrajectoryCode {
  std::vector<int> bits;

  int period_count() const { return static_cast<int>(bits.size()); }
  int sum() const {
    int s = 0;
    for (int b : bits) s += b;
    return s;
  }
};

// All 2^K regimes in lexicographic order, (0,...,0) first.
inline std::vector<TrajectoryCode> enumerate_trajectories(int period_count) {
  if (period_count < 1 || period_count > 20)
    throw Error(ErrorCode::domain_error,
                "period count must be in [1, 20], got " +
                    std::to_string(period_count));
  const std::size_t total = std::size_t{1} << period_count;
  std::vector<TrajectoryCode> codes(total);
  for (std::size_t m = 0; m < total; ++m) {
    codes[m].bits.resize(static_cast<std::size_t>(period_count));
    for (int t = 0; t < period_count; ++t)
      codes[m].bits[static_cast<std::size_t>(t)] =
          static_cast<int>((m >> (period_count - 1 - t)) & 1u);
  }
  return codes;
}

// Outcome measured once at end of follow-up. For survival outcomes y holds
// min(event time, censoring time) and `event` flags observed events.
struct OutcomeColumn {
  OutcomeKind kind = OutcomeKind::continuous;
  Eigen::VectorXd y;
  Eigen::VectorXi event;  // survival only

  void validate() const {
    const auto n = y.size();
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!std::isfinite(y[i]))
        throw Error(ErrorCode::domain_error, "non-finite outcome value");
      if (kind == OutcomeKind::binary && y[i] != 0.0 && y[i] != 1.0)
        throw Error(ErrorCode::domain_error,
                    "binary outcome must be 0 or 1, got " + std::to_string(y[i]));
      if (kind == OutcomeKind::survival && y[i] <= 0.0)
        throw Error(ErrorCode::domain_error,
                    "survival time must be positive, got " + std::to_string(y[i]));
    }
    if (kind == OutcomeKind::survival) {
      if (event.size() != n)
        throw Error(ErrorCode::domain_error, "event indicator length mismatch");
      for (Eigen::Index i = 0; i < n; ++i)
        if (event[i] != 0 && event[i] != 1)
          throw Error(ErrorCode::domain_error, "event indicator must be 0 or 1");
    }
  }
};

// Complete panel: n subjects by K periods of binary treatment, per-period
// covariates (n x p each), baseline covariates (n x q), one outcome.
// Immutable after construction; safe to share across threads.
struct TrajectoryPanel {
  int n = 0;
  int K = 0;
  int p = 0;  // time-varying covariate columns
  int q = 0;  // baseline covariate columns
  std::vector<std::string> ids;
  Eigen::MatrixXi treatment;                // n x K, entries in {0,1}
  std::vector<Eigen::MatrixXd> covariates;  // K matrices, each n x p
  Eigen::MatrixXd baseline;                 // n x q
  OutcomeColumn outcome;

  TrajectoryCode trajectory_of(int subject) const {
    TrajectoryCode code;
    code.bits.resize(static_cast<std::size_t>(K));
    for (int t = 0; t < K; ++t)
      code.bits[static_cast<std::size_t>(t)] = treatment(subject, t);
    return code;
  }
};

// One long-format row. Outcome fields are repeated on every row of a subject
// and validated constant within it.
struct LongRecord {
  std::string id;
  int time = 0;  // 1-based
  int treatment = 0;
  std::vector<double> covariates;
  std::vector<double> baseline;
  double y = 0.0;
  int event = 0;  // survival only
};

namespace detail {

inline bool outcome_fields_equal(const LongRecord& a, const LongRecord& b,
                                 OutcomeKind kind) {
  if (a.y != b.y) return false;
  return kind != OutcomeKind::survival || a.event == b.event;
}

}  // namespace detail

// Build a validated panel from long-format records. Subject order is the
// first-appearance order of ids; times must cover 1..K for every id.
inline TrajectoryPanel build_panel(const std::vector<LongRecord>& records,
                                   OutcomeKind kind) {
  if (records.empty())
    throw Error(ErrorCode::domain_error, "no records");

  std::vector<std::string> ids;
  std::map<std::string, int> index_of;
  for (const auto& r : records) {
    if (index_of.emplace(r.id, static_cast<int>(ids.size())).second)
      ids.push_back(r.id);
  }
  const int n = static_cast<int>(ids.size());

  int K = 0;
  for (const auto& r : records) {
    if (r.time < 1)
      throw Error(ErrorCode::domain_error,
                  "time must be >= 1, got " + std::to_string(r.time),
                  {{"id", r.id}});
    K = std::max(K, r.time);
  }
  if (K < 2)
    throw Error(ErrorCode::domain_error,
                "panel needs at least 2 periods, got " + std::to_string(K));

  const int p = static_cast<int>(records.front().covariates.size());
  const int q = static_cast<int>(records.front().baseline.size());
  if (p < 1)
    throw Error(ErrorCode::domain_error,
                "at least one time-varying covariate column is required");

  // (subject, time) -> record index; detect duplicates
  std::vector<std::vector<int>> slot(static_cast<std::size_t>(n),
                                     std::vector<int>(static_cast<std::size_t>(K), -1));
  for (std::size_t r = 0; r < records.size(); ++r) {
    const auto& rec = records[r];
    const int i = index_of[rec.id];
    auto& cell = slot[static_cast<std::size_t>(i)][static_cast<std::size_t>(rec.time - 1)];
    if (cell >= 0)
      throw Error(ErrorCode::domain_error, "duplicate (id, time) pair",
                  {{"id", rec.id}, {"time", std::to_string(rec.time)}});
    cell = static_cast<int>(r);
  }
  for (int i = 0; i < n; ++i) {
    int observed = 0;
    int max_time = 0;
    for (int t = 0; t < K; ++t)
      if (slot[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)] >= 0) {
        ++observed;
        max_time = t + 1;
      }
    if (observed == K) continue;
    // contiguous-but-short ids are ragged; gaps are missing cells
    if (observed == max_time)
      throw Error(ErrorCode::ragged_panel,
                  "id observed for " + std::to_string(observed) + " of " +
                      std::to_string(K) + " periods",
                  {{"id", ids[static_cast<std::size_t>(i)]}});
    for (int t = 0; t < K; ++t)
      if (slot[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)] < 0)
        throw Error(ErrorCode::missing_cell, "missing (id, time) cell",
                    {{"id", ids[static_cast<std::size_t>(i)]},
                     {"time", std::to_string(t + 1)}});
  }

  TrajectoryPanel panel;
  panel.n = n;
  panel.K = K;
  panel.p = p;
  panel.q = q;
  panel.ids = ids;
  panel.treatment.resize(n, K);
  panel.covariates.assign(static_cast<std::size_t>(K), Eigen::MatrixXd(n, p));
  panel.baseline.resize(n, q);
  panel.outcome.kind = kind;
  panel.outcome.y.resize(n);
  if (kind == OutcomeKind::survival) panel.outcome.event.resize(n);

  for (int i = 0; i < n; ++i) {
    const LongRecord& first = records[static_cast<std::size_t>(
        slot[static_cast<std::size_t>(i)][0])];
    for (int t = 0; t < K; ++t) {
      const LongRecord& rec = records[static_cast<std::size_t>(
          slot[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)])];
      if (rec.treatment != 0 && rec.treatment != 1)
        throw Error(ErrorCode::domain_error,
                    "treatment must be 0 or 1, got " + std::to_string(rec.treatment),
                    {{"id", rec.id}, {"time", std::to_string(rec.time)}});
      if (static_cast<int>(rec.covariates.size()) != p ||
          static_cast<int>(rec.baseline.size()) != q)
        throw Error(ErrorCode::domain_error, "inconsistent covariate column count",
                    {{"id", rec.id}, {"time", std::to_string(rec.time)}});
      panel.treatment(i, t) = rec.treatment;
      for (int c = 0; c < p; ++c)
        panel.covariates[static_cast<std::size_t>(t)](i, c) =
            rec.covariates[static_cast<std::size_t>(c)];
      if (rec.baseline != first.baseline)
        throw Error(ErrorCode::domain_error, "baseline covariates vary within id",
                    {{"id", rec.id}});
      if (!detail::outcome_fields_equal(rec, first, kind))
        throw Error(ErrorCode::domain_error, "outcome fields vary within id",
                    {{"id", rec.id}});
    }
    for (int c = 0; c < q; ++c)
      panel.baseline(i, c) = first.baseline[static_cast<std::size_t>(c)];
    panel.outcome.y[i] = first.y;
    if (kind == OutcomeKind::survival) panel.outcome.event[i] = first.event;
  }
  panel.outcome.validate();
  return panel;
}

// Inverse of build_panel on valid panels.
inline std::vector<LongRecord> panel_to_records(const TrajectoryPanel& panel) {
  std::vector<LongRecord> records;
  records.reserve(static_cast<std::size_t>(panel.n) *
                  static_cast<std::size_t>(panel.K));
  for (int i = 0; i < panel.n; ++i) {
    for (int t = 0; t < panel.K; ++t) {
      LongRecord rec;
      rec.id = panel.ids[static_cast<std::size_t>(i)];
      rec.time = t + 1;
      rec.treatment = panel.treatment(i, t);
      rec.covariates.resize(static_cast<std::size_t>(panel.p));
      for (int c = 0; c < panel.p; ++c)
        rec.covariates[static_cast<std::size_t>(c)] =
            panel.covariates[static_cast<std::size_t>(t)](i, c);
      rec.baseline.resize(static_cast<std::size_t>(panel.q));
      for (int c = 0; c < panel.q; ++c)
        rec.baseline[static_cast<std::size_t>(c)] = panel.baseline(i, c);
      rec.y = panel.outcome.y[i];
      rec.event = panel.outcome.kind == OutcomeKind::survival
                      ? panel.outcome.event[i]
                      : 0;
      records.push_back(std::move(rec));
    }
  }
  return records;
}

}  // namespace trajmsm
