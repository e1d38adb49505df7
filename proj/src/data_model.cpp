#include "prolific/data_model.hpp"

#include <algorithm>
#include <charconv>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>

#include "prolific/errors.hpp"

namespace prolific {

std::size_t SubjectRecord::curve_count() const {
  std::size_t n = 0;
  for (const auto& p : periods) n += p.size();
  return n;
}

std::size_t FunctionalCrossoverDataset::curve_count() const {
  std::size_t n = 0;
  for (const auto& s : subjects) n += s.curve_count();
  return n;
}

void FunctionalCrossoverDataset::validate() const {
  if (grid.empty()) throw ValidationError("dataset has an empty grid");
  for (std::size_t r = 0; r < grid.size(); ++r) {
    if (!(grid[r] >= 0.0 && grid[r] <= 1.0)) throw ValidationError("grid point outside [0,1]");
    if (r > 0 && !(grid[r] > grid[r - 1])) throw ValidationError("grid is not strictly increasing");
  }
  for (const auto& s : subjects) {
    if (s.group != 1 && s.group != 2)
      throw ValidationError("subject " + s.id + " has group " + std::to_string(s.group));
    if (s.covariates.size() != covariate_names.size())
      throw ValidationError("subject " + s.id + " has the wrong number of covariates");
    for (const auto& period : s.periods) {
      for (const auto& c : period) {
        if (!(c.day >= 0.0 && c.day <= 1.0))
          throw ValidationError("subject " + s.id + " has a day outside [0,1]");
        if (c.values.size() != grid.size())
          throw ValidationError("subject " + s.id + " has a curve of length " +
                                std::to_string(c.values.size()) + ", grid has " +
                                std::to_string(grid.size()));
      }
    }
  }
}

TreatmentIndicators derive_indicators(const FunctionalCrossoverDataset& dataset) {
  TreatmentIndicators ind;
  ind.i_tau.resize(dataset.subjects.size());
  ind.i_lambda.resize(dataset.subjects.size());
  for (std::size_t i = 0; i < dataset.subjects.size(); ++i) {
    for (int p = 1; p <= kPeriods; ++p) {
      ind.i_tau[i][p - 1] = tau_indicator(dataset.subjects[i].group, p) ? 1 : 0;
      ind.i_lambda[i][p - 1] = lambda_indicator(dataset.subjects[i].group, p) ? 1 : 0;
    }
  }
  return ind;
}

CurveTable flatten(const FunctionalCrossoverDataset& dataset) {
  CurveTable t;
  const int n = static_cast<int>(dataset.curve_count());
  const int R = static_cast<int>(dataset.grid.size());
  const int L = static_cast<int>(dataset.covariate_names.size());
  t.values.resize(n, R);
  t.covariates.resize(n, L);
  t.grid = dataset.grid;
  t.subject.reserve(n);
  int row = 0;
  for (std::size_t i = 0; i < dataset.subjects.size(); ++i) {
    const auto& s = dataset.subjects[i];
    const int start = row;
    for (int p = 1; p <= kPeriods; ++p) {
      for (const auto& c : s.periods[p - 1]) {
        for (int r = 0; r < R; ++r) t.values(row, r) = c.values[r];
        for (int l = 0; l < L; ++l) t.covariates(row, l) = s.covariates[l];
        t.subject.push_back(static_cast<int>(i));
        t.period.push_back(p);
        t.day.push_back(c.day);
        t.i_tau.push_back(tau_indicator(s.group, p) ? 1 : 0);
        t.i_lambda.push_back(lambda_indicator(s.group, p) ? 1 : 0);
        ++row;
      }
    }
    t.subject_blocks.emplace_back(start, row - start);
  }
  return t;
}

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '"')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r' || s[e - 1] == '"')) --e;
  return s.substr(b, e - b);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

struct Located {
  const std::string& path;
  std::size_t line;
  std::string where() const { return path + ":" + std::to_string(line) + ": "; }
};

double parse_real(const std::string& text, const Located& loc, const std::string& column) {
  if (text.empty()) throw ValidationError(loc.where() + "empty value in column " + column);
  char* end = nullptr;
  errno = 0;
  double v = std::strtod(text.c_str(), &end);
  if (end != text.c_str() + text.size() || errno == ERANGE)
    throw ValidationError(loc.where() + "cannot parse '" + text + "' in column " + column);
  return v;
}

long parse_int(const std::string& text, const Located& loc, const std::string& column) {
  double v = parse_real(text, loc, column);
  if (v != std::floor(v)) throw ValidationError(loc.where() + "expected an integer in column " + column);
  return static_cast<long>(v);
}

std::string format_real(double v) {
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

int column_index(const std::vector<std::string>& header, const std::string& name,
                 const std::string& path) {
  auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw SchemaError(path + ": missing column '" + name + "'");
  return static_cast<int>(it - header.begin());
}

struct SubjectBuilder {
  std::vector<std::string> order;
  std::unordered_map<std::string, std::size_t> index;
  std::vector<SubjectRecord> records;
  std::vector<bool> covariates_set;

  SubjectRecord& get(const std::string& id, int group, const std::vector<double>& covs,
                     const Located& loc) {
    auto it = index.find(id);
    if (it == index.end()) {
      index.emplace(id, records.size());
      SubjectRecord r;
      r.id = id;
      r.group = group;
      r.covariates = covs;
      records.push_back(std::move(r));
      return records.back();
    }
    SubjectRecord& r = records[it->second];
    if (r.group != group)
      throw ValidationError(loc.where() + "subject " + id + " changes group");
    if (r.covariates != covs)
      throw ValidationError(loc.where() + "subject " + id + " has inconsistent covariates");
    return r;
  }
};

void check_group_period(long group, long period, const Located& loc) {
  if (group != 1 && group != 2)
    throw ValidationError(loc.where() + "group must be 1 or 2, got " + std::to_string(group));
  if (period < 1 || period > kPeriods)
    throw ValidationError(loc.where() + "period must be in 1..4, got " + std::to_string(period));
}

void normalize_days(FunctionalCrossoverDataset& ds, const CsvSchema& schema) {
  double lo = 1e300, hi = -1e300;
  bool outside = false;
  for (auto& s : ds.subjects)
    for (auto& p : s.periods)
      for (auto& c : p) {
        lo = std::min(lo, c.day);
        hi = std::max(hi, c.day);
        if (c.day < 0.0 || c.day > 1.0) outside = true;
      }
  if (!outside) return;
  double top = schema.period_length.value_or(hi);
  if (!(top > lo)) throw ValidationError("cannot normalize days: period length does not exceed the first day");
  for (auto& s : ds.subjects)
    for (auto& p : s.periods)
      for (auto& c : p) c.day = std::clamp((c.day - lo) / (top - lo), 0.0, 1.0);
}

FunctionalCrossoverDataset load_wide(std::istream& in, const std::string& path,
                                     const std::vector<std::string>& header) {
  const int c_id = column_index(header, "subject_id", path);
  const int c_group = column_index(header, "group", path);
  const int c_period = column_index(header, "period", path);
  const int c_day = column_index(header, "day", path);
  std::vector<int> cov_cols, val_cols;
  FunctionalCrossoverDataset ds;
  for (int c = 0; c < static_cast<int>(header.size()); ++c) {
    if (c == c_id || c == c_group || c == c_period || c == c_day) continue;
    if (header[c].rfind("y_", 0) == 0) {
      val_cols.push_back(c);
      Located loc{path, 1};
      ds.grid.push_back(parse_real(header[c].substr(2), loc, header[c]));
    } else {
      if (!val_cols.empty()) throw SchemaError(path + ": covariate column '" + header[c] + "' after value columns");
      cov_cols.push_back(c);
      ds.covariate_names.push_back(header[c]);
    }
  }
  if (val_cols.empty()) throw SchemaError(path + ": no value columns (expected y_<s> headers)");

  SubjectBuilder sb;
  std::string line;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    Located loc{path, lineno};
    auto cells = split_csv(line);
    if (cells.size() != header.size())
      throw ValidationError(loc.where() + "row has " + std::to_string(cells.size()) + " cells, header has " +
                            std::to_string(header.size()));
    long group = parse_int(cells[c_group], loc, "group");
    long period = parse_int(cells[c_period], loc, "period");
    check_group_period(group, period, loc);
    std::vector<double> covs;
    for (int c : cov_cols) covs.push_back(parse_real(cells[c], loc, header[c]));
    CurveObservation obs;
    obs.day = parse_real(cells[c_day], loc, "day");
    obs.values.reserve(val_cols.size());
    for (int c : val_cols) obs.values.push_back(parse_real(cells[c], loc, header[c]));
    sb.get(cells[c_id], static_cast<int>(group), covs, loc).periods[period - 1].push_back(std::move(obs));
  }
  ds.subjects = std::move(sb.records);
  return ds;
}

FunctionalCrossoverDataset load_long(std::istream& in, const std::string& path,
                                     const std::vector<std::string>& header) {
  const int c_id = column_index(header, "subject_id", path);
  const int c_group = column_index(header, "group", path);
  const int c_period = column_index(header, "period", path);
  const int c_curve = column_index(header, "curve", path);
  const int c_day = column_index(header, "day", path);
  const int c_gi = column_index(header, "grid_index", path);
  const int c_s = column_index(header, "s", path);
  const int c_val = column_index(header, "value", path);
  FunctionalCrossoverDataset ds;
  std::vector<int> cov_cols;
  for (int c = 0; c < static_cast<int>(header.size()); ++c) {
    if (c == c_id || c == c_group || c == c_period || c == c_curve || c == c_day || c == c_gi || c == c_s ||
        c == c_val)
      continue;
    cov_cols.push_back(c);
    ds.covariate_names.push_back(header[c]);
  }

  struct Pending {
    double day;
    std::map<long, std::pair<double, double>> samples;  // grid_index -> (s, value)
    std::size_t first_line;
  };
  SubjectBuilder sb;
  // (subject slot, period, curve) -> pending curve, kept in first-seen order per period
  std::vector<std::array<std::map<long, Pending>, kPeriods>> pending;
  std::string line;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    Located loc{path, lineno};
    auto cells = split_csv(line);
    if (cells.size() != header.size())
      throw ValidationError(loc.where() + "row has " + std::to_string(cells.size()) + " cells, header has " +
                            std::to_string(header.size()));
    long group = parse_int(cells[c_group], loc, "group");
    long period = parse_int(cells[c_period], loc, "period");
    check_group_period(group, period, loc);
    std::vector<double> covs;
    for (int c : cov_cols) covs.push_back(parse_real(cells[c], loc, header[c]));
    sb.get(cells[c_id], static_cast<int>(group), covs, loc);
    std::size_t slot = sb.index.at(cells[c_id]);
    if (pending.size() <= slot) pending.resize(slot + 1);
    long curve = parse_int(cells[c_curve], loc, "curve");
    double day = parse_real(cells[c_day], loc, "day");
    auto [it, fresh] = pending[slot][period - 1].try_emplace(curve, Pending{day, {}, lineno});
    if (!fresh && it->second.day != day)
      throw ValidationError(loc.where() + "curve " + std::to_string(curve) + " changes day");
    long gi = parse_int(cells[c_gi], loc, "grid_index");
    if (!it->second.samples.emplace(gi, std::make_pair(parse_real(cells[c_s], loc, "s"),
                                                       parse_real(cells[c_val], loc, "value")))
             .second)
      throw ValidationError(loc.where() + "duplicate grid_index " + std::to_string(gi));
  }

  bool have_grid = false;
  std::vector<long> grid_ids;
  for (std::size_t slot = 0; slot < sb.records.size(); ++slot) {
    for (int p = 0; p < kPeriods; ++p) {
      for (auto& [curve, pc] : pending[slot][p]) {
        Located loc{path, pc.first_line};
        if (!have_grid) {
          for (auto& [gi, sv] : pc.samples) {
            grid_ids.push_back(gi);
            ds.grid.push_back(sv.first);
          }
          have_grid = true;
        }
        if (pc.samples.size() != grid_ids.size())
          throw ValidationError(loc.where() + "ragged grid: curve has " + std::to_string(pc.samples.size()) +
                                " samples, expected " + std::to_string(grid_ids.size()));
        CurveObservation obs;
        obs.day = pc.day;
        std::size_t r = 0;
        for (auto& [gi, sv] : pc.samples) {
          if (gi != grid_ids[r] || sv.first != ds.grid[r])
            throw ValidationError(loc.where() + "ragged grid: sample points differ between curves");
          obs.values.push_back(sv.second);
          ++r;
        }
        sb.records[slot].periods[p].push_back(std::move(obs));
      }
    }
  }
  ds.subjects = std::move(sb.records);
  return ds;
}

}  // namespace

FunctionalCrossoverDataset load_dataset(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw SchemaError(path + ": cannot open file");
  std::string line;
  if (!std::getline(in, line)) throw SchemaError(path + ": empty file");
  auto header = split_csv(line);
  CsvFormat format = schema.format;
  if (format == CsvFormat::Auto) {
    bool is_long = std::find(header.begin(), header.end(), "grid_index") != header.end();
    format = is_long ? CsvFormat::Long : CsvFormat::Wide;
  }
  FunctionalCrossoverDataset ds =
      format == CsvFormat::Long ? load_long(in, path, header) : load_wide(in, path, header);
  if (ds.subjects.empty()) throw ValidationError(path + ": no data rows");
  normalize_days(ds, schema);
  try {
    ds.validate();
  } catch (const ValidationError& e) {
    throw ValidationError(path + ": " + e.what());
  }
  return ds;
}

void save_dataset(const FunctionalCrossoverDataset& ds, const std::string& path, CsvFormat format) {
  std::ofstream out(path);
  if (!out) throw SchemaError(path + ": cannot open for writing");
  const bool is_long = format == CsvFormat::Long;
  out << "subject_id,group,period," << (is_long ? "curve," : "") << "day";
  for (const auto& name : ds.covariate_names) out << ',' << name;
  if (is_long) {
    out << ",grid_index,s,value\n";
  } else {
    for (double s : ds.grid) out << ",y_" << format_real(s);
    out << '\n';
  }
  for (const auto& subj : ds.subjects) {
    std::string covs;
    for (double c : subj.covariates) covs += "," + format_real(c);
    for (int p = 0; p < kPeriods; ++p) {
      const auto& curves = subj.periods[p];
      for (std::size_t j = 0; j < curves.size(); ++j) {
        const auto& c = curves[j];
        if (is_long) {
          std::string prefix = subj.id + "," + std::to_string(subj.group) + "," + std::to_string(p + 1) + "," +
                               std::to_string(j) + "," + format_real(c.day) + covs + ",";
          for (std::size_t r = 0; r < c.values.size(); ++r)
            out << prefix << r << ',' << format_real(ds.grid[r]) << ',' << format_real(c.values[r]) << '\n';
        } else {
          out << subj.id << ',' << subj.group << ',' << (p + 1) << ',' << format_real(c.day) << covs;
          for (double v : c.values) out << ',' << format_real(v);
          out << '\n';
        }
      }
    }
  }
  if (!out) throw SchemaError(path + ": write failed");
}

}  // namespace prolific
