#ifndef ACELAB_PANEL_HPP
#define ACELAB_PANEL_HPP

#include <cstdlib>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "acelab/csv.hpp"

namespace acelab {

/// Maps CSV columns to panel roles. Confounders and the mediator are
/// optional; an empty name means the dataset has no such column.
struct ColumnSchema {
  std::string subject = "subject_id";
  std::string time = "time";
  std::vector<std::string> baseline;
  std::string exposure = "a";
  std::string confounder1;
  std::string confounder2;
  std::string mediator;
  std::string outcome = "y";
};

struct SubjectRecord {
  std::string id;
  Eigen::VectorXd baseline;
  // One slot per time 1..T; nullopt marks a missing cell.
  std::vector<std::optional<int>> exposure;
  std::vector<std::optional<double>> c1;
  std::vector<std::optional<double>> c2;
  std::vector<std::optional<double>> mediator;
  std::vector<std::optional<double>> outcome;

  bool operator==(const SubjectRecord& other) const {
    return id == other.id && baseline == other.baseline && exposure == other.exposure &&
           c1 == other.c1 && c2 == other.c2 && mediator == other.mediator &&
           outcome == other.outcome;
  }
};

/// Long-format panel. Within each time step the variable order is
/// exposure, confounder1, confounder2, mediator, outcome; models may only
/// condition on variables earlier in that order. Immutable after load.
struct PanelDataset {
  std::vector<SubjectRecord> subjects;
  int n_times = 0;
  ColumnSchema schema;

  bool has_c1() const { return !schema.confounder1.empty(); }
  bool has_c2() const { return !schema.confounder2.empty(); }
  bool has_mediator() const { return !schema.mediator.empty(); }
  std::size_t n_subjects() const { return subjects.size(); }

  bool operator==(const PanelDataset& other) const {
    return n_times == other.n_times && subjects == other.subjects;
  }
};

/// Target exposure sequence defining a counterfactual regime.
struct ExposureProfile {
  std::vector<int> values;

  explicit ExposureProfile(std::vector<int> vals) : values(std::move(vals)) {
    if (values.empty()) throw std::invalid_argument("ExposureProfile: empty profile");
    for (int v : values)
      if (v != 0 && v != 1) throw std::invalid_argument("ExposureProfile: entries must be 0 or 1");
  }

  static ExposureProfile constant(int value, int length) {
    return ExposureProfile(std::vector<int>(static_cast<std::size_t>(length), value));
  }

  /// Parses a string of 0/1 characters, e.g. "101".
  static ExposureProfile parse(const std::string& text) {
    std::vector<int> vals;
    vals.reserve(text.size());
    for (char c : text) {
      if (c == '0') vals.push_back(0);
      else if (c == '1') vals.push_back(1);
      else throw std::invalid_argument("ExposureProfile: expected 0/1 characters, got '" +
                                       std::string(1, c) + "'");
    }
    return ExposureProfile(std::move(vals));
  }

  int length() const { return static_cast<int>(values.size()); }

  std::string to_string() const {
    std::string s;
    for (int v : values) s.push_back(v ? '1' : '0');
    return s;
  }

  bool operator==(const ExposureProfile& other) const { return values == other.values; }
};

namespace detail {

inline double parse_number(const std::string& cell, std::size_t row, const std::string& col) {
  char* end = nullptr;
  const double value = std::strtod(cell.c_str(), &end);
  if (end == cell.c_str() || *end != '\0')
    throw std::runtime_error("panel: non-numeric value '" + cell + "' in row " +
                             std::to_string(row) + ", column " + col);
  return value;
}

inline int require_column(const CsvTable& table, const std::string& name) {
  const int j = table.column(name);
  if (j < 0) throw std::runtime_error("panel: missing required column '" + name + "'");
  return j;
}

}  // namespace detail

/// Loads a long-format CSV (one row per subject-time; empty cell = missing).
/// Rows absent for some (subject, time) become all-missing slots.
inline PanelDataset load_panel(const std::string& path, const ColumnSchema& schema) {
  const CsvTable table = read_csv(path);

  const int subject_col = detail::require_column(table, schema.subject);
  const int time_col = detail::require_column(table, schema.time);
  const int exposure_col = detail::require_column(table, schema.exposure);
  const int outcome_col = detail::require_column(table, schema.outcome);
  const int c1_col = schema.confounder1.empty() ? -1 : detail::require_column(table, schema.confounder1);
  const int c2_col = schema.confounder2.empty() ? -1 : detail::require_column(table, schema.confounder2);
  const int m_col = schema.mediator.empty() ? -1 : detail::require_column(table, schema.mediator);
  std::vector<int> baseline_cols;
  for (const auto& name : schema.baseline) baseline_cols.push_back(detail::require_column(table, name));

  // First pass: subject order and the time horizon.
  int n_times = 0;
  std::vector<std::string> subject_order;
  std::map<std::string, std::size_t> subject_index;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const std::size_t row_no = r + 2;  // 1-based file line, after the header
    const std::string& id = table.rows[r][static_cast<std::size_t>(subject_col)];
    if (id.empty())
      throw std::runtime_error("panel: empty subject id in row " + std::to_string(row_no));
    if (subject_index.find(id) == subject_index.end()) {
      subject_index[id] = subject_order.size();
      subject_order.push_back(id);
    }
    const std::string& tcell = table.rows[r][static_cast<std::size_t>(time_col)];
    const double traw = detail::parse_number(tcell, row_no, schema.time);
    const int t = static_cast<int>(traw);
    if (static_cast<double>(t) != traw || t < 1)
      throw std::runtime_error("panel: time index '" + tcell + "' in row " +
                               std::to_string(row_no) + " must be an integer >= 1");
    n_times = std::max(n_times, t);
  }
  if (n_times == 0) throw std::runtime_error("panel: no data rows in " + path);

  PanelDataset data;
  data.n_times = n_times;
  data.schema = schema;
  data.subjects.resize(subject_order.size());
  for (std::size_t i = 0; i < subject_order.size(); ++i) {
    auto& s = data.subjects[i];
    s.id = subject_order[i];
    s.baseline = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(baseline_cols.size()));
    s.exposure.assign(static_cast<std::size_t>(n_times), std::nullopt);
    s.c1.assign(static_cast<std::size_t>(n_times), std::nullopt);
    s.c2.assign(static_cast<std::size_t>(n_times), std::nullopt);
    s.mediator.assign(static_cast<std::size_t>(n_times), std::nullopt);
    s.outcome.assign(static_cast<std::size_t>(n_times), std::nullopt);
  }

  std::set<std::pair<std::size_t, int>> seen;
  std::vector<bool> baseline_set(subject_order.size(), false);
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const std::size_t row_no = r + 2;
    const auto& row = table.rows[r];
    const std::size_t i = subject_index[row[static_cast<std::size_t>(subject_col)]];
    const int t = static_cast<int>(
        detail::parse_number(row[static_cast<std::size_t>(time_col)], row_no, schema.time));
    if (!seen.insert({i, t}).second)
      throw std::runtime_error("panel: duplicate (subject, time) = (" + subject_order[i] + ", " +
                               std::to_string(t) + ") at row " + std::to_string(row_no));
    auto& s = data.subjects[i];

    for (std::size_t b = 0; b < baseline_cols.size(); ++b) {
      const std::string& cell = row[static_cast<std::size_t>(baseline_cols[b])];
      if (cell.empty())
        throw std::runtime_error("panel: missing baseline value in row " + std::to_string(row_no) +
                                 ", column " + schema.baseline[b]);
      const double value = detail::parse_number(cell, row_no, schema.baseline[b]);
      if (baseline_set[i] && s.baseline[static_cast<Eigen::Index>(b)] != value)
        throw std::runtime_error("panel: baseline column " + schema.baseline[b] +
                                 " changes within subject " + s.id + " at row " +
                                 std::to_string(row_no));
      s.baseline[static_cast<Eigen::Index>(b)] = value;
    }
    baseline_set[i] = true;

    const std::size_t slot = static_cast<std::size_t>(t - 1);
    const std::string& acell = row[static_cast<std::size_t>(exposure_col)];
    if (!acell.empty()) {
      const double a = detail::parse_number(acell, row_no, schema.exposure);
      if (a != 0.0 && a != 1.0)
        throw std::runtime_error("panel: non-binary exposure '" + acell + "' in row " +
                                 std::to_string(row_no) + ", column " + schema.exposure);
      s.exposure[slot] = static_cast<int>(a);
    }
    auto read_cell = [&](int col, const std::string& name, std::vector<std::optional<double>>& dst) {
      if (col < 0) return;
      const std::string& cell = row[static_cast<std::size_t>(col)];
      if (!cell.empty()) dst[slot] = detail::parse_number(cell, row_no, name);
    };
    read_cell(c1_col, schema.confounder1, s.c1);
    read_cell(c2_col, schema.confounder2, s.c2);
    read_cell(m_col, schema.mediator, s.mediator);
    read_cell(outcome_col, schema.outcome, s.outcome);
  }

  return data;
}

/// Writes the same long CSV dialect the loader reads.
inline void save_panel(const PanelDataset& data, const std::string& path) {
  CsvTable table;
  const auto& schema = data.schema;
  table.header = {schema.subject, schema.time};
  for (const auto& b : schema.baseline) table.header.push_back(b);
  table.header.push_back(schema.exposure);
  if (data.has_c1()) table.header.push_back(schema.confounder1);
  if (data.has_c2()) table.header.push_back(schema.confounder2);
  if (data.has_mediator()) table.header.push_back(schema.mediator);
  table.header.push_back(schema.outcome);

  for (const auto& s : data.subjects) {
    for (int t = 1; t <= data.n_times; ++t) {
      const std::size_t slot = static_cast<std::size_t>(t - 1);
      std::vector<std::string> row = {s.id, std::to_string(t)};
      for (Eigen::Index b = 0; b < s.baseline.size(); ++b)
        row.push_back(format_double(s.baseline[b]));
      row.push_back(s.exposure[slot] ? std::to_string(*s.exposure[slot]) : "");
      auto push_opt = [&](const std::optional<double>& v) {
        row.push_back(v ? format_double(*v) : "");
      };
      if (data.has_c1()) push_opt(s.c1[slot]);
      if (data.has_c2()) push_opt(s.c2[slot]);
      if (data.has_mediator()) push_opt(s.mediator[slot]);
      push_opt(s.outcome[slot]);
      table.rows.push_back(std::move(row));
    }
  }
  write_csv(path, table);
}

// ---------------------------------------------------------------------------
// Positivity diagnostic

struct PositivityStratum {
  std::vector<int> history;  // observed exposures A(1..t-1)
  long n = 0;
  long n_exposed = 0;
  double frequency = 0.0;
  bool flagged = false;
};

struct PositivityReport {
  int t = 0;
  std::vector<PositivityStratum> strata;

  bool any_flagged() const {
    for (const auto& s : strata)
      if (s.flagged) return true;
    return false;
  }
};

/// Empirical frequency of A(t)=1 within each observed exposure-history
/// stratum up to t-1. Degenerate strata (frequency 0 or 1) are flagged.
inline PositivityReport validate_positivity(const PanelDataset& data, int t) {
  if (t < 1 || t > data.n_times)
    throw std::invalid_argument("validate_positivity: t outside 1..T");
  for (const auto& s : data.subjects)
    for (int u = 1; u <= t; ++u)
      if (!s.exposure[static_cast<std::size_t>(u - 1)])
        throw std::invalid_argument("validate_positivity: missing exposure for subject " + s.id +
                                    " at time " + std::to_string(u) +
                                    "; impute exposures first");

  std::map<std::vector<int>, PositivityStratum> strata;
  for (const auto& s : data.subjects) {
    std::vector<int> history;
    history.reserve(static_cast<std::size_t>(t - 1));
    for (int u = 1; u < t; ++u) history.push_back(*s.exposure[static_cast<std::size_t>(u - 1)]);
    auto& stratum = strata[history];
    stratum.history = history;
    stratum.n += 1;
    stratum.n_exposed += *s.exposure[static_cast<std::size_t>(t - 1)];
  }

  PositivityReport report;
  report.t = t;
  for (auto& [history, stratum] : strata) {
    stratum.frequency = static_cast<double>(stratum.n_exposed) / static_cast<double>(stratum.n);
    stratum.flagged = stratum.frequency == 0.0 || stratum.frequency == 1.0;
    report.strata.push_back(stratum);
  }
  return report;
}

/// Throws if any cell needed for a horizon-deep fit is missing, naming the
/// first offending subject, time, and role.
inline void require_complete(const PanelDataset& data, int horizon) {
  if (horizon < 1 || horizon > data.n_times)
    throw std::invalid_argument("require_complete: horizon outside 1..T");
  for (const auto& s : data.subjects) {
    for (int t = 1; t <= horizon; ++t) {
      const auto slot = static_cast<std::size_t>(t - 1);
      auto fail = [&](const std::string& role) {
        throw std::runtime_error("panel: missing " + role + " for subject " + s.id + " at time " +
                                 std::to_string(t));
      };
      if (!s.exposure[slot]) fail("exposure");
      if (data.has_c1() && !s.c1[slot]) fail("confounder1");
      if (data.has_c2() && !s.c2[slot]) fail("confounder2");
      if (data.has_mediator() && !s.mediator[slot]) fail("mediator");
      if (!s.outcome[slot]) fail("outcome");
    }
  }
}

}  // namespace acelab

#endif  // ACELAB_PANEL_HPP
