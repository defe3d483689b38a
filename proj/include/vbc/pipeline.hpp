#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "vbc/correction.hpp"
#include "vbc/dataset.hpp"
#include "vbc/evaluation.hpp"
#include "vbc/vine.hpp"

namespace vbc {

inline constexpr const char* version = "1.0.0";

namespace pipeline {

//! Run configuration file: {"variables": [...], "correction": {...}}.
struct RunConfig
{
  std::vector<Variable> variables;
  CorrectionConfig correction;

  static RunConfig from_json(const nlohmann::json& j)
  {
    if (!j.is_object()) {
      throw ConfigError("config: expected a JSON object");
    }
    for (const auto& item : j.items()) {
      if (item.key() != "variables" && item.key() != "correction") {
        throw ConfigError(item.key() + ": unknown field");
      }
    }
    if (!j.contains("variables")) {
      throw ConfigError("variables: missing");
    }
    RunConfig c;
    c.variables = variables_from_json(j["variables"]);
    if (j.contains("correction")) {
      try {
        c.correction = CorrectionConfig::from_json(j["correction"]);
      } catch (const ConfigError& e) {
        throw ConfigError(std::string("correction.") + e.what());
      }
    }
    return c;
  }

  static RunConfig load(const std::string& path)
  {
    std::ifstream in(path);
    if (!in) {
      throw ConfigError("config: cannot open '" + path + "'");
    }
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError("config: invalid JSON in '" + path + "': " + e.what());
    }
    return from_json(j);
  }

  //! Snapshot for manifests; the thread count is left out because it does
  //! not influence any output.
  nlohmann::json snapshot() const
  {
    auto c = correction.to_json();
    c.erase("threads");
    return { { "variables", variables_to_json(variables) }, { "correction", c } };
  }
};

//! 64-bit FNV-1a.
inline std::uint64_t
fnv1a(std::string_view bytes)
{
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string
hex(std::uint64_t x)
{
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(x));
  return buf;
}

inline std::string
read_file(const std::string& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open '" + path + "'");
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string
file_digest(const std::string& path)
{
  return "fnv1a64:" + hex(fnv1a(read_file(path)));
}

//! Runs f(0..n-1) on up to `threads` workers. f must only write to
//! per-index state; exceptions escaping f terminate the run.
template<class F>
void
parallel_for(std::size_t n, std::size_t threads, F&& f)
{
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) {
      f(i);
    }
    return;
  }
  std::atomic<std::size_t> next{ 0 };
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          f(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) {
            error = std::current_exception();
          }
        }
      }
    });
  }
  for (auto& th : pool) {
    th.join();
  }
  if (error) {
    std::rethrow_exception(error);
  }
}

struct UnitKey
{
  ChunkKey chunk;
  std::int64_t member{ 0 };

  auto operator<=>(const UnitKey&) const = default;
  std::string str() const { return chunk.str() + "/" + std::to_string(member); }
};

struct Failure
{
  std::string unit;
  std::string message;
};

enum class Method
{
  vbc,
  ubc
};

inline std::string
to_string(Method m)
{
  return m == Method::vbc ? "vbc" : "ubc";
}

inline Method
method_from_string(const std::string& s)
{
  if (s == "vbc") {
    return Method::vbc;
  }
  if (s == "ubc") {
    return Method::ubc;
  }
  throw ConfigError("method: expected vbc or ubc, got '" + s + "'");
}

inline void
check_schema(const ClimateTable& t, const std::vector<Variable>& vars, const char* what)
{
  if (t.dim() != vars.size()) {
    throw SchemaError(std::string(what) + ": variable count differs from the configuration");
  }
  for (std::size_t j = 0; j < vars.size(); ++j) {
    if (t.variables()[j].name != vars[j].name || t.variables()[j].kind != vars[j].kind) {
      throw SchemaError(std::string(what) + ": variable '" + vars[j].name +
                        "' does not match the configuration");
    }
  }
}

//! Output of a correction run over all (chunk, member) units.
struct CorrectionRun
{
  Method method{ Method::vbc };
  //! per projection row: corrected values (rows of failed units stay NaN)
  Eigen::MatrixXd values;
  std::vector<bool> corrected;
  std::vector<std::string> chunk_of_row;
  std::vector<std::uint64_t> seed_of_row;
  //! units in key order with their seeds and row counts
  std::vector<std::pair<UnitKey, std::uint64_t>> unit_seeds;
  std::vector<std::size_t> unit_rows;
  std::vector<Failure> failures;
  std::vector<std::string> warnings;
};

//! Corrects every (chunk, member) unit of `projection`. The calibration
//! model data pool all members of `model`; reference and projection
//! estimation sets are overlap-extended per member.
inline CorrectionRun
run_correction(const ClimateTable& model, const ClimateTable& reference,
               const ClimateTable& projection, const RunConfig& config, Method method)
{
  check_schema(model, config.variables, "model data");
  check_schema(reference, config.variables, "reference data");
  check_schema(projection, config.variables, "projection data");
  const auto& cc = config.correction;
  cc.validate();
  const std::uint64_t master = cc.seed;
  const auto model_chunks = make_chunks(model);
  const auto ref_chunks = make_chunks(reference);
  const auto proj_chunks = make_chunks(projection);

  CorrectionRun run;
  run.method = method;
  const auto n = projection.rows();
  run.values = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(n),
                                         static_cast<Eigen::Index>(projection.dim()),
                                         std::numeric_limits<double>::quiet_NaN());
  run.corrected.assign(n, false);
  run.chunk_of_row.assign(n, "");
  run.seed_of_row.assign(n, 0);

  struct Unit
  {
    UnitKey key;
    std::uint64_t seed;
    std::vector<std::size_t> core;
    std::vector<std::size_t> estimation;
    std::size_t chunk_index;
  };
  std::vector<Unit> units;
  std::vector<Chunk> ref_extended(8);
  for (std::size_t k = 0; k < 8; ++k) {
    ref_extended[k] = extend_overlap(ref_chunks[k], reference, cc.overlap_fraction,
                                     combine_seed(master, "overlap-reference"), &run.warnings);
    const auto ext = extend_overlap(proj_chunks[k], projection, cc.overlap_fraction,
                                    combine_seed(master, "overlap-projection"), &run.warnings);
    for (auto m : projection.member_ids()) {
      Unit u;
      u.key = { proj_chunks[k].key, m };
      u.core = projection.of_member(proj_chunks[k].core_rows, m);
      if (u.core.empty()) {
        continue;
      }
      u.estimation = projection.of_member(ext.estimation_rows, m);
      u.seed = unit_seed(master, u.key.chunk.str(), m);
      u.chunk_index = k;
      units.push_back(std::move(u));
    }
  }

  std::vector<CorrectedSet> results(units.size());
  std::vector<std::string> errors(units.size());
  parallel_for(units.size(), cc.resolved_threads(), [&](std::size_t i) {
    const auto& u = units[i];
    try {
      CorrectionInput in;
      in.projection = projection.select(u.core);
      in.projection_estimation = projection.select(u.estimation);
      in.reference = reference.select(ref_extended[u.chunk_index].estimation_rows);
      in.model_calibration = model.select(model_chunks[u.chunk_index].core_rows);
      in.kinds = projection.kinds();
      in.names = projection.names();
      in.chunk = u.key.chunk.str();
      in.member = u.key.member;
      results[i] = method == Method::vbc ? vbc_correct(in, cc, u.seed) : ubc_correct(in, cc, u.seed);
    } catch (const std::exception& e) {
      errors[i] = e.what();
      if (errors[i].empty()) {
        errors[i] = "unknown error";
      }
    }
  });

  for (std::size_t i = 0; i < units.size(); ++i) {
    const auto& u = units[i];
    run.unit_seeds.emplace_back(u.key, u.seed);
    if (!errors[i].empty()) {
      run.failures.push_back({ u.key.str(), errors[i] });
      run.unit_rows.push_back(0);
      continue;
    }
    run.unit_rows.push_back(u.core.size());
    for (std::size_t r = 0; r < u.core.size(); ++r) {
      const auto row = u.core[r];
      run.values.row(static_cast<Eigen::Index>(row)) =
        results[i].values.row(static_cast<Eigen::Index>(r));
      run.corrected[row] = true;
      run.chunk_of_row[row] = u.key.chunk.str();
      run.seed_of_row[row] = u.seed;
    }
  }
  return run;
}

//! Corrected rows in projection order with provenance columns.
inline void
write_corrected(std::ostream& out, const ClimateTable& projection, const CorrectionRun& run)
{
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < projection.rows(); ++i) {
    if (run.corrected[i]) {
      rows.push_back(i);
    }
  }
  std::vector<Timestamp> times;
  std::vector<std::int64_t> members;
  std::vector<std::string> chunk, method, seed;
  Eigen::MatrixXd values(static_cast<Eigen::Index>(rows.size()), run.values.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    times.push_back(projection.timestamp(rows[k]));
    members.push_back(projection.member(rows[k]));
    values.row(static_cast<Eigen::Index>(k)) = run.values.row(static_cast<Eigen::Index>(rows[k]));
    chunk.push_back(run.chunk_of_row[rows[k]]);
    method.push_back(to_string(run.method));
    seed.push_back(std::to_string(run.seed_of_row[rows[k]]));
  }
  write_table(out, projection.names(), times, members, values,
              { { "chunk", chunk }, { "method", method }, { "unit_seed", seed } });
}

struct UnitReport
{
  UnitMetrics metrics;
  std::vector<Timestamp> times;
};

struct MetricReport
{
  std::vector<std::string> variables;
  std::vector<UnitReport> units;
  std::vector<Failure> failures;
  std::vector<std::string> warnings;
};

//! Evaluates each (chunk, member) of `corrected` against the matching rows
//! of `model` and the reference rows of the chunk.
inline MetricReport
run_evaluation(const ClimateTable& model, const ClimateTable& corrected,
               const ClimateTable& reference, const RunConfig& config)
{
  check_schema(model, config.variables, "model data");
  check_schema(corrected, config.variables, "corrected data");
  check_schema(reference, config.variables, "reference data");
  const std::uint64_t master = config.correction.seed;
  MetricReport report;
  report.variables = corrected.names();
  std::map<std::pair<std::int64_t, Timestamp>, std::size_t> model_index;
  for (std::size_t i = 0; i < model.rows(); ++i) {
    model_index[{ model.member(i), model.timestamp(i) }] = i;
  }
  const auto ref_chunks = make_chunks(reference);
  const auto cor_chunks = make_chunks(corrected);

  struct Unit
  {
    UnitKey key;
    std::vector<std::size_t> corrected_rows;
    std::vector<std::size_t> model_rows;
    std::size_t chunk_index;
  };
  std::vector<Unit> units;
  for (std::size_t k = 0; k < 8; ++k) {
    for (auto m : corrected.member_ids()) {
      Unit u;
      u.key = { cor_chunks[k].key, m };
      u.corrected_rows = corrected.of_member(cor_chunks[k].core_rows, m);
      if (u.corrected_rows.empty()) {
        continue;
      }
      u.chunk_index = k;
      for (auto i : u.corrected_rows) {
        auto it = model_index.find({ m, corrected.timestamp(i) });
        if (it == model_index.end()) {
          throw SchemaError("corrected row " + std::to_string(i + 1) + " (member " +
                            std::to_string(m) + ", " + corrected.timestamp(i).str() +
                            ") has no model counterpart");
        }
        u.model_rows.push_back(it->second);
      }
      units.push_back(std::move(u));
    }
  }

  std::vector<UnitReport> results(units.size());
  std::vector<std::string> errors(units.size());
  std::vector<std::vector<std::string>> warnings(units.size());
  parallel_for(units.size(), config.correction.resolved_threads(), [&](std::size_t i) {
    const auto& u = units[i];
    try {
      const auto& ref_rows = ref_chunks[u.chunk_index].core_rows;
      if (ref_rows.empty()) {
        throw EstimationError("no reference rows in chunk " + u.key.chunk.str());
      }
      results[i].metrics =
        evaluate_unit(model.select(u.model_rows), corrected.select(u.corrected_rows),
                      reference.select(ref_rows),
                      combine_seed(unit_seed(master, u.key.chunk.str(), u.key.member), "evaluate"),
                      &warnings[i]);
      results[i].metrics.chunk = u.key.chunk.str();
      results[i].metrics.member = u.key.member;
      for (auto r : u.corrected_rows) {
        results[i].times.push_back(corrected.timestamp(r));
      }
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });
  for (std::size_t i = 0; i < units.size(); ++i) {
    for (const auto& w : warnings[i]) {
      report.warnings.push_back(units[i].key.str() + ": " + w);
    }
    if (!errors[i].empty()) {
      report.failures.push_back({ units[i].key.str(), errors[i] });
    } else {
      report.units.push_back(std::move(results[i]));
    }
  }
  return report;
}

//! One row per unit.
inline void
write_report_wide(std::ostream& out, const MetricReport& r)
{
  out << "chunk,member,w2_model,w2_corrected,iw2,mci,non_invasive,copula_iw2";
  for (const auto& v : r.variables) {
    out << ",iw2_" << v;
  }
  out << '\n';
  for (const auto& u : r.units) {
    const auto& m = u.metrics;
    out << m.chunk << ',' << m.member << ',' << format_double(m.w2_model) << ','
        << format_double(m.w2_corrected) << ',' << format_double(m.iw2) << ','
        << format_double(m.mci) << ',' << (m.non_invasive ? 1 : 0) << ','
        << format_double(m.copula_iw2);
    for (double x : m.margin_iw2) {
      out << ',' << format_double(x);
    }
    out << '\n';
  }
}

//! One row per unit and metric.
inline void
write_report_long(std::ostream& out, const MetricReport& r)
{
  out << "chunk,member,metric,value\n";
  for (const auto& u : r.units) {
    const auto& m = u.metrics;
    auto row = [&](const std::string& name, double v) {
      out << m.chunk << ',' << m.member << ',' << name << ',' << format_double(v) << '\n';
    };
    row("w2_model", m.w2_model);
    row("w2_corrected", m.w2_corrected);
    row("iw2", m.iw2);
    row("mci", m.mci);
    row("copula_iw2", m.copula_iw2);
    for (std::size_t j = 0; j < m.margin_iw2.size(); ++j) {
      row("iw2_" + r.variables[j], m.margin_iw2[j]);
    }
  }
}

inline void
write_mci_series(std::ostream& out, const MetricReport& r)
{
  out << "chunk,member,timestamp,mci\n";
  for (const auto& u : r.units) {
    for (std::size_t t = 0; t < u.times.size(); ++t) {
      out << u.metrics.chunk << ',' << u.metrics.member << ',' << u.times[t].str() << ','
          << format_double(u.metrics.mci_series[t]) << '\n';
    }
  }
}

inline nlohmann::json
summary_json(const Summary& s)
{
  return { { "median", s.median }, { "q1", s.q1 }, { "q3", s.q3 } };
}

inline nlohmann::json
aggregates_json(const MetricReport& r)
{
  auto block = [&](const std::vector<UnitMetrics>& units) {
    const auto a = aggregate(units);
    nlohmann::json j;
    j["units"] = a.units;
    j["iw2"] = summary_json(a.iw2);
    j["mci"] = summary_json(a.mci);
    j["copula_iw2"] = summary_json(a.copula_iw2);
    j["margin_iw2"] = nlohmann::json::object();
    for (std::size_t k = 0; k < a.margin_iw2.size() && k < r.variables.size(); ++k) {
      j["margin_iw2"][r.variables[k]] = summary_json(a.margin_iw2[k]);
    }
    j["share_improved"] = a.share_improved;
    j["share_non_invasive"] = a.share_non_invasive;
    return j;
  };
  std::vector<UnitMetrics> all;
  std::map<std::string, std::vector<UnitMetrics>> by_chunk;
  for (const auto& u : r.units) {
    all.push_back(u.metrics);
    by_chunk[u.metrics.chunk].push_back(u.metrics);
  }
  nlohmann::json j;
  j["mci_threshold"] = mci_threshold;
  j["overall"] = block(all);
  j["by_chunk"] = nlohmann::json::object();
  for (const auto& [k, v] : by_chunk) {
    j["by_chunk"][k] = block(v);
  }
  j["failures"] = nlohmann::json::array();
  for (const auto& f : r.failures) {
    j["failures"].push_back({ { "unit", f.unit }, { "message", f.message } });
  }
  return j;
}

} // namespace pipeline
} // namespace vbc
