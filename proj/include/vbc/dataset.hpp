#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "vbc/core/errors.hpp"
#include "vbc/core/random.hpp"
#include "vbc/marginal.hpp"

namespace vbc {

//! Naive local calendar time.
struct Timestamp
{
  int year{ 1970 };
  int month{ 1 };
  int day{ 1 };
  int hour{ 0 };
  int minute{ 0 };
  int second{ 0 };

  auto operator<=>(const Timestamp&) const = default;

  double clock_hours() const { return hour + minute / 60.0 + second / 3600.0; }

  static bool leap(int y) { return (y % 4 == 0 && y % 100 != 0) || y % 400 == 0; }

  static int days_in_month(int y, int m)
  {
    static constexpr std::array<int, 12> days = { 31, 28, 31, 30, 31, 30,
                                                  31, 31, 30, 31, 30, 31 };
    return m == 2 && leap(y) ? 29 : days[static_cast<std::size_t>(m - 1)];
  }

  //! Accepts YYYY-MM-DD, optionally followed by 'T' or ' ' and HH:MM[:SS],
  //! and an optional trailing 'Z'.
  static Timestamp parse(std::string_view s)
  {
    auto fail = [&]() -> Timestamp {
      throw std::invalid_argument("invalid ISO-8601 timestamp '" + std::string(s) + "'");
    };
    if (!s.empty() && s.back() == 'Z') {
      s.remove_suffix(1);
    }
    auto field = [&](std::size_t pos, std::size_t len, int& out) {
      if (pos + len > s.size()) {
        return false;
      }
      for (std::size_t i = pos; i < pos + len; ++i) {
        if (s[i] < '0' || s[i] > '9') {
          return false;
        }
      }
      std::from_chars(s.data() + pos, s.data() + pos + len, out);
      return true;
    };
    Timestamp t;
    if (!field(0, 4, t.year) || s.size() < 10 || s[4] != '-' || !field(5, 2, t.month) ||
        s[7] != '-' || !field(8, 2, t.day)) {
      return fail();
    }
    if (s.size() > 10) {
      if ((s[10] != 'T' && s[10] != ' ') || s.size() < 16 || !field(11, 2, t.hour) ||
          s[13] != ':' || !field(14, 2, t.minute)) {
        return fail();
      }
      if (s.size() > 16 && (s.size() != 19 || s[16] != ':' || !field(17, 2, t.second))) {
        return fail();
      }
    }
    if (t.month < 1 || t.month > 12 || t.day < 1 || t.day > days_in_month(t.year, t.month) ||
        t.hour > 23 || t.minute > 59 || t.second > 59) {
      return fail();
    }
    return t;
  }

  //! Advances the clock by whole hours, rolling over days, months and years.
  Timestamp plus_hours(long hours) const
  {
    Timestamp t = *this;
    long total = t.hour + hours;
    long days = total >= 0 ? total / 24 : -((-total + 23) / 24);
    t.hour = static_cast<int>(total - days * 24);
    for (; days > 0; --days) {
      if (++t.day > days_in_month(t.year, t.month)) {
        t.day = 1;
        if (++t.month > 12) {
          t.month = 1;
          ++t.year;
        }
      }
    }
    for (; days < 0; ++days) {
      if (--t.day < 1) {
        if (--t.month < 1) {
          t.month = 12;
          --t.year;
        }
        t.day = days_in_month(t.year, t.month);
      }
    }
    return t;
  }

  std::string str() const
  {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d", year, month, day, hour,
                  minute, second);
    return buf;
  }
};

struct Variable
{
  std::string name;
  SupportKind kind{ SupportKind::interval };
  std::string units;
};

inline std::vector<Variable>
variables_from_json(const nlohmann::json& j)
{
  if (!j.is_array() || j.empty()) {
    throw ConfigError("variables: expected a nonempty array");
  }
  std::vector<Variable> out;
  for (const auto& v : j) {
    if (!v.is_object() || !v.contains("name") || !v["name"].is_string()) {
      throw ConfigError("variables: each entry needs a string 'name'");
    }
    Variable var;
    var.name = v["name"].get<std::string>();
    if (v.contains("kind")) {
      try {
        var.kind = support_kind_from_string(v["kind"].get<std::string>());
      } catch (const std::exception& e) {
        throw ConfigError("variables." + var.name + ".kind: " + e.what());
      }
    }
    var.units = v.value("units", std::string());
    if (var.name == "timestamp" || var.name == "member") {
      throw ConfigError("variables: '" + var.name + "' is a reserved column name");
    }
    for (const auto& other : out) {
      if (other.name == var.name) {
        throw ConfigError("variables: duplicate name '" + var.name + "'");
      }
    }
    out.push_back(std::move(var));
  }
  return out;
}

inline nlohmann::json
variables_to_json(const std::vector<Variable>& vars)
{
  auto j = nlohmann::json::array();
  for (const auto& v : vars) {
    j.push_back({ { "name", v.name }, { "kind", to_string(v.kind) }, { "units", v.units } });
  }
  return j;
}

//! Timestamped multi-member multivariate series.
class ClimateTable
{
public:
  ClimateTable() = default;

  ClimateTable(std::vector<Variable> variables, std::vector<Timestamp> timestamps,
               std::vector<std::int64_t> members, Eigen::MatrixXd values)
    : variables_(std::move(variables))
    , timestamps_(std::move(timestamps))
    , members_(std::move(members))
    , values_(std::move(values))
  {
    validate();
  }

  std::size_t rows() const { return timestamps_.size(); }
  std::size_t dim() const { return variables_.size(); }
  const std::vector<Variable>& variables() const { return variables_; }
  const std::vector<Timestamp>& timestamps() const { return timestamps_; }
  const std::vector<std::int64_t>& members() const { return members_; }
  const Eigen::MatrixXd& values() const { return values_; }
  const Timestamp& timestamp(std::size_t i) const { return timestamps_.at(i); }
  std::int64_t member(std::size_t i) const { return members_.at(i); }

  std::vector<std::string> names() const
  {
    std::vector<std::string> out;
    for (const auto& v : variables_) {
      out.push_back(v.name);
    }
    return out;
  }

  std::vector<SupportKind> kinds() const
  {
    std::vector<SupportKind> out;
    for (const auto& v : variables_) {
      out.push_back(v.kind);
    }
    return out;
  }

  //! Sorted distinct member ids.
  std::vector<std::int64_t> member_ids() const
  {
    auto ids = members_;
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    return ids;
  }

  Eigen::MatrixXd select(const std::vector<std::size_t>& rows) const
  {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), values_.cols());
    for (std::size_t k = 0; k < rows.size(); ++k) {
      out.row(static_cast<Eigen::Index>(k)) = values_.row(static_cast<Eigen::Index>(rows[k]));
    }
    return out;
  }

  //! Rows of `rows` that belong to `member`, order preserved.
  std::vector<std::size_t> of_member(const std::vector<std::size_t>& rows,
                                     std::int64_t member) const
  {
    std::vector<std::size_t> out;
    for (auto i : rows) {
      if (members_[i] == member) {
        out.push_back(i);
      }
    }
    return out;
  }

private:
  std::vector<Variable> variables_;
  std::vector<Timestamp> timestamps_;
  std::vector<std::int64_t> members_;
  Eigen::MatrixXd values_;

  void validate() const
  {
    if (variables_.empty()) {
      throw SchemaError("a table needs at least one variable");
    }
    if (members_.size() != timestamps_.size() ||
        static_cast<std::size_t>(values_.rows()) != timestamps_.size() ||
        static_cast<std::size_t>(values_.cols()) != variables_.size()) {
      throw SchemaError("table columns have inconsistent lengths");
    }
    std::map<std::int64_t, std::size_t> last;
    for (std::size_t i = 0; i < rows(); ++i) {
      auto it = last.find(members_[i]);
      if (it != last.end() && !(timestamps_[it->second] < timestamps_[i])) {
        throw OrderingError("member " + std::to_string(members_[i]) + ": timestamp " +
                            timestamps_[i].str() + " in row " + std::to_string(i + 1) +
                            " does not follow " + timestamps_[it->second].str());
      }
      last[members_[i]] = i;
      for (std::size_t j = 0; j < dim(); ++j) {
        const double x = values_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        if (std::isnan(x)) {
          throw ParseError("missing value for '" + variables_[j].name + "' in row " +
                             std::to_string(i + 1),
                           i + 1);
        }
        if (is_nonnegative(variables_[j].kind) && x < 0.0) {
          throw ParseError("negative value for nonnegative variable '" + variables_[j].name +
                             "' in row " + std::to_string(i + 1),
                           i + 1);
        }
      }
    }
  }
};

namespace detail {

inline std::string_view
trim(std::string_view s)
{
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) {
    s.remove_prefix(1);
  }
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

inline std::vector<std::string_view>
split_csv(std::string_view line)
{
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) {
      return out;
    }
    start = pos + 1;
  }
}

template<class T>
bool
parse_number(std::string_view s, T& out)
{
  if (!s.empty() && s.front() == '+') {
    s.remove_prefix(1);
  }
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return !s.empty() && res.ec == std::errc() && res.ptr == s.data() + s.size();
}

} // namespace detail

//! Reads a CSV table with columns `timestamp`, `member` and one column per
//! schema variable (any order; extra columns are ignored).
inline ClimateTable
read_table(std::istream& in, const std::vector<Variable>& schema)
{
  std::string line;
  if (!std::getline(in, line)) {
    throw SchemaError("empty input: header row missing");
  }
  const auto header = detail::split_csv(line);
  auto find = [&](const std::string& name) {
    for (std::size_t k = 0; k < header.size(); ++k) {
      if (header[k] == name) {
        return k;
      }
    }
    throw SchemaError("missing column '" + name + "'");
  };
  const std::size_t c_time = find("timestamp"), c_member = find("member");
  std::vector<std::size_t> c_vars;
  for (const auto& v : schema) {
    c_vars.push_back(find(v.name));
  }
  std::vector<Timestamp> times;
  std::vector<std::int64_t> members;
  std::vector<double> cells;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) {
      continue;
    }
    ++row;
    const auto f = detail::split_csv(line);
    if (f.size() != header.size()) {
      throw ParseError("row " + std::to_string(row) + ": expected " +
                         std::to_string(header.size()) + " fields, found " +
                         std::to_string(f.size()),
                       row);
    }
    try {
      times.push_back(Timestamp::parse(f[c_time]));
    } catch (const std::invalid_argument& e) {
      throw ParseError("row " + std::to_string(row) + ": " + e.what(), row);
    }
    std::int64_t m;
    if (!detail::parse_number(f[c_member], m)) {
      throw ParseError("row " + std::to_string(row) + ": member '" + std::string(f[c_member]) +
                         "' is not an integer",
                       row);
    }
    members.push_back(m);
    for (std::size_t j = 0; j < schema.size(); ++j) {
      double x;
      const auto cell = f[c_vars[j]];
      if (!detail::parse_number(cell, x) || !std::isfinite(x)) {
        throw ParseError("row " + std::to_string(row) + ": value '" + std::string(cell) +
                           "' of '" + schema[j].name + "' is not a finite number",
                         row);
      }
      cells.push_back(x);
    }
  }
  Eigen::MatrixXd values(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(schema.size()));
  for (std::size_t i = 0; i < row; ++i) {
    for (std::size_t j = 0; j < schema.size(); ++j) {
      values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
        cells[i * schema.size() + j];
    }
  }
  return ClimateTable(schema, std::move(times), std::move(members), std::move(values));
}

inline ClimateTable
load_table(const std::string& path, const std::vector<Variable>& schema)
{
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open '" + path + "'");
  }
  return read_table(in, schema);
}

//! Shortest decimal text that round-trips the double.
inline std::string
format_double(double x)
{
  char buf[32];
  for (int precision = 15; precision <= 17; ++precision) {
    std::snprintf(buf, sizeof buf, "%.*g", precision, x);
    if (std::strtod(buf, nullptr) == x) {
      break;
    }
  }
  return buf;
}

//! Writes timestamp, member and the variables, plus optional extra string
//! columns given per row.
inline void
write_table(std::ostream& out, const std::vector<std::string>& names,
            const std::vector<Timestamp>& times, const std::vector<std::int64_t>& members,
            const Eigen::MatrixXd& values,
            const std::vector<std::pair<std::string, std::vector<std::string>>>& extra = {})
{
  out << "timestamp,member";
  for (const auto& n : names) {
    out << ',' << n;
  }
  for (const auto& e : extra) {
    out << ',' << e.first;
  }
  out << '\n';
  for (std::size_t i = 0; i < times.size(); ++i) {
    out << times[i].str() << ',' << members[i];
    for (Eigen::Index j = 0; j < values.cols(); ++j) {
      out << ',' << format_double(values(static_cast<Eigen::Index>(i), j));
    }
    for (const auto& e : extra) {
      out << ',' << e.second[i];
    }
    out << '\n';
  }
}

inline void
write_table(std::ostream& out, const ClimateTable& table)
{
  write_table(out, table.names(), table.timestamps(), table.members(), table.values());
}

enum class Season
{
  DJF,
  MAM,
  JJA,
  SON
};

enum class Diurnal
{
  day,
  night
};

struct ChunkKey
{
  Season season{ Season::DJF };
  Diurnal diurnal{ Diurnal::day };

  auto operator<=>(const ChunkKey&) const = default;

  std::string str() const
  {
    static constexpr std::array<const char*, 4> names = { "DJF", "MAM", "JJA", "SON" };
    return std::string(names[static_cast<std::size_t>(season)]) +
           (diurnal == Diurnal::day ? "-day" : "-night");
  }

  static ChunkKey parse(const std::string& s)
  {
    for (const auto& k : all()) {
      if (k.str() == s) {
        return k;
      }
    }
    throw std::invalid_argument("unknown chunk key '" + s + "'");
  }

  static std::array<ChunkKey, 8> all()
  {
    std::array<ChunkKey, 8> keys;
    for (std::size_t s = 0; s < 4; ++s) {
      keys[2 * s] = { static_cast<Season>(s), Diurnal::day };
      keys[2 * s + 1] = { static_cast<Season>(s), Diurnal::night };
    }
    return keys;
  }

  std::size_t index() const
  {
    return 2 * static_cast<std::size_t>(season) + (diurnal == Diurnal::night ? 1 : 0);
  }
};

inline Season
season_of(int month)
{
  return static_cast<Season>((month % 12) / 3);
}

//! Day is [06:00, 18:00), night the complement.
inline Diurnal
diurnal_of(double clock_hours)
{
  return clock_hours >= 6.0 && clock_hours < 18.0 ? Diurnal::day : Diurnal::night;
}

inline ChunkKey
chunk_key_of(const Timestamp& t)
{
  return { season_of(t.month), diurnal_of(t.clock_hours()) };
}

struct Chunk
{
  ChunkKey key;
  std::vector<std::size_t> core_rows;
  //! sorted union of core rows and overlap rows
  std::vector<std::size_t> estimation_rows;
};

//! Partitions the rows into the 8 season x diurnal chunks (index order of
//! ChunkKey::all()).
inline std::vector<Chunk>
make_chunks(const ClimateTable& table)
{
  std::vector<Chunk> chunks;
  for (const auto& k : ChunkKey::all()) {
    chunks.push_back({ k, {}, {} });
  }
  for (std::size_t i = 0; i < table.rows(); ++i) {
    chunks[chunk_key_of(table.timestamp(i)).index()].core_rows.push_back(i);
  }
  for (auto& c : chunks) {
    c.estimation_rows = c.core_rows;
  }
  return chunks;
}

//! Whether a timestamp lies in the overlap region of a chunk: a month of the
//! season or a calendar-adjacent month, and a clock time in the diurnal
//! window or the 3-hour slot bordering it on either side.
inline bool
in_overlap_region(const ChunkKey& key, const Timestamp& t)
{
  const int first = (3 * static_cast<int>(key.season) + 11) % 12 + 1;
  auto month_offset = [&](int m) { return ((m - first) % 12 + 12) % 12; };
  const int off = month_offset(t.month);
  const bool month_ok = off <= 2 || off == 3 || off == 11;
  const double h = t.clock_hours();
  const bool clock_ok =
    key.diurnal == Diurnal::day ? (h >= 3.0 && h < 21.0) : (h >= 15.0 || h < 9.0);
  return month_ok && clock_ok;
}

//! Adds round(fraction * n_m) overlap rows per member m (n_m core rows of
//! m), drawn uniformly without replacement from the member's rows in the
//! overlap region outside the core. Seeds derive from (seed, key, member).
inline Chunk
extend_overlap(const Chunk& chunk, const ClimateTable& table, double fraction,
               std::uint64_t seed, std::vector<std::string>* warnings = nullptr)
{
  if (!(fraction >= 0.0 && fraction <= 1.0)) {
    throw std::invalid_argument("overlap fraction must lie in [0, 1]");
  }
  Chunk out = chunk;
  out.estimation_rows = chunk.core_rows;
  if (fraction == 0.0) {
    return out;
  }
  std::vector<bool> core(table.rows(), false);
  for (auto i : chunk.core_rows) {
    core[i] = true;
  }
  std::map<std::int64_t, std::size_t> core_count;
  for (auto i : chunk.core_rows) {
    ++core_count[table.member(i)];
  }
  std::map<std::int64_t, std::vector<std::size_t>> pools;
  for (std::size_t i = 0; i < table.rows(); ++i) {
    if (!core[i] && core_count.count(table.member(i)) &&
        in_overlap_region(chunk.key, table.timestamp(i))) {
      pools[table.member(i)].push_back(i);
    }
  }
  for (const auto& [member, n] : core_count) {
    const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
    const auto& pool = pools[member];
    if (pool.size() < k) {
      if (warnings) {
        warnings->push_back(chunk.key.str() + ", member " + std::to_string(member) +
                            ": overlap pool has " + std::to_string(pool.size()) +
                            " rows, fewer than the " + std::to_string(k) +
                            " requested; using all of them");
      }
      out.estimation_rows.insert(out.estimation_rows.end(), pool.begin(), pool.end());
      continue;
    }
    Rng rng(combine_seed(combine_seed(seed, chunk.key.str()), static_cast<std::uint64_t>(member)));
    for (auto idx : rng.sample_without_replacement(pool.size(), k)) {
      out.estimation_rows.push_back(pool[idx]);
    }
  }
  std::sort(out.estimation_rows.begin(), out.estimation_rows.end());
  return out;
}

//! Audit record of a chunking: row indices per chunk.
inline nlohmann::json
chunk_manifest(const std::vector<Chunk>& chunks, double fraction, std::uint64_t seed)
{
  nlohmann::json j;
  j["overlap_fraction"] = fraction;
  j["seed"] = seed;
  j["chunks"] = nlohmann::json::array();
  for (const auto& c : chunks) {
    std::vector<std::size_t> overlap;
    std::set_difference(c.estimation_rows.begin(), c.estimation_rows.end(), c.core_rows.begin(),
                        c.core_rows.end(), std::back_inserter(overlap));
    j["chunks"].push_back({ { "key", c.key.str() },
                            { "core_rows", c.core_rows },
                            { "overlap_rows", overlap } });
  }
  return j;
}

} // namespace vbc
