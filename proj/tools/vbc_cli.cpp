#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "vbc/vbc.hpp"

namespace fs = std::filesystem;
using namespace vbc;
using namespace vbc::pipeline;

namespace {

enum ExitCode
{
  ok = 0,
  config_error = 1,
  data_error = 2,
  partial_failure = 3
};

class DataError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

std::uint64_t
parse_env_count(const char* name, const char* value)
{
  std::uint64_t out = 0;
  if (!detail::parse_number(std::string_view(value), out)) {
    throw ConfigError(std::string(name) + ": expected a nonnegative integer, got '" + value + "'");
  }
  return out;
}

RunConfig
load_config(const std::string& path)
{
  auto c = RunConfig::load(path);
  if (const char* s = std::getenv("VBC_SEED"); s && *s) {
    c.correction.seed = parse_env_count("VBC_SEED", s);
  }
  if (const char* t = std::getenv("VBC_THREADS"); t && *t) {
    c.correction.threads = parse_env_count("VBC_THREADS", t);
  }
  return c;
}

ClimateTable
load(const std::string& path, const std::vector<Variable>& vars)
{
  if (!fs::exists(path)) {
    throw DataError("input file '" + path + "' does not exist");
  }
  try {
    return load_table(path, vars);
  } catch (const ParseError& e) {
    throw DataError(path + ": " + e.what());
  } catch (const SchemaError& e) {
    throw DataError(path + ": " + e.what());
  } catch (const OrderingError& e) {
    throw DataError(path + ": " + e.what());
  }
}

void
write_text(const fs::path& path, const std::string& text)
{
  if (path.has_parent_path()) {
    fs::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw DataError("cannot write '" + path.string() + "'");
  }
  out << text;
  if (!out) {
    throw DataError("write to '" + path.string() + "' failed");
  }
}

struct Manifest
{
  nlohmann::json j;

  Manifest(const std::string& command, const RunConfig& config)
  {
    j["version"] = vbc::version;
    j["command"] = command;
    j["config"] = config.snapshot();
    j["master_seed"] = config.correction.seed;
    j["inputs"] = nlohmann::json::object();
    j["outputs"] = nlohmann::json::object();
    j["units"] = nlohmann::json::array();
    j["failures"] = nlohmann::json::array();
    j["warnings"] = nlohmann::json::array();
  }

  void input(const std::string& role, const std::string& path)
  {
    j["inputs"][role] = { { "path", path }, { "digest", file_digest(path) } };
  }

  //! Writes an artifact and records it by file name.
  void output(const std::string& role, const fs::path& path, const std::string& text)
  {
    write_text(path, text);
    j["outputs"][role] = { { "file", path.filename().string() },
                           { "digest", "fnv1a64:" + hex(fnv1a(text)) } };
  }

  void failures(const std::vector<Failure>& fs)
  {
    for (const auto& f : fs) {
      j["failures"].push_back({ { "unit", f.unit }, { "message", f.message } });
      std::cerr << "unit " << f.unit << " failed: " << f.message << '\n';
    }
  }

  void warnings(const std::vector<std::string>& ws)
  {
    for (const auto& w : ws) {
      j["warnings"].push_back(w);
      std::cerr << "warning: " << w << '\n';
    }
  }

  void save(const fs::path& path) const { write_text(path, j.dump(2) + "\n"); }

  int status() const { return j["failures"].empty() ? ok : partial_failure; }
};

int
cmd_simulate(const std::string& config_path, const std::string& out_dir,
             const std::string& bias, std::size_t members, std::size_t steps)
{
  RunConfig config;
  if (!config_path.empty()) {
    config = load_config(config_path);
  } else {
    config.variables = synthetic_table(SyntheticSpec::reference(), { 0 }, 1, 0).variables();
    if (const char* s = std::getenv("VBC_SEED"); s && *s) {
      config.correction.seed = parse_env_count("VBC_SEED", s);
    }
  }
  const auto spec = bias.empty() ? SyntheticSpec::biased() : SyntheticSpec::parse(bias);
  const auto seed = config.correction.seed;
  std::vector<std::int64_t> ids;
  for (std::size_t m = 1; m <= members; ++m) {
    ids.push_back(static_cast<std::int64_t>(m));
  }
  const auto reference =
    synthetic_table(SyntheticSpec::reference(), { 0 }, steps, combine_seed(seed, "reference"));
  const auto model = synthetic_table(spec, ids, steps, combine_seed(seed, "model"));
  Manifest manifest("simulate", config);
  manifest.j["bias"] = { { "shift", spec.shift },
                         { "scale", spec.scale },
                         { "inflation", spec.inflation },
                         { "tau", spec.tau } };
  manifest.j["members"] = members;
  manifest.j["steps"] = steps;
  std::ostringstream ref_csv, model_csv;
  write_table(ref_csv, reference);
  write_table(model_csv, model);
  const fs::path dir(out_dir);
  manifest.output("reference", dir / "reference.csv", ref_csv.str());
  manifest.output("model", dir / "model.csv", model_csv.str());
  const nlohmann::json truth = { { "reference", synthetic::copula(SyntheticSpec::reference()).to_json() },
                                 { "model", synthetic::copula(spec).to_json() },
                                 { "variables", synthetic::names() } };
  manifest.output("truth", dir / "truth.json", truth.dump(2) + "\n");
  manifest.save(dir / "simulate_manifest.json");
  return manifest.status();
}

int
cmd_fit(const std::string& config_path, const std::string& data_path, const std::string& out_dir)
{
  const auto config = load_config(config_path);
  const auto table = load(data_path, config.variables);
  const auto& cc = config.correction;
  Manifest manifest("fit", config);
  manifest.input("data", data_path);
  std::vector<std::string> warnings;
  std::vector<Chunk> chunks;
  for (const auto& c : make_chunks(table)) {
    chunks.push_back(extend_overlap(c, table, cc.overlap_fraction,
                                    combine_seed(cc.seed, "overlap-projection"), &warnings));
  }
  std::vector<std::string> texts(chunks.size()), errors(chunks.size());
  std::vector<std::uint64_t> seeds(chunks.size());
  parallel_for(chunks.size(), cc.resolved_threads(), [&](std::size_t k) {
    seeds[k] = combine_seed(cc.seed, "fit:" + chunks[k].key.str());
    try {
      if (chunks[k].core_rows.empty()) {
        throw EstimationError("chunk has no rows");
      }
      const auto model = VineModel::fit(table.select(chunks[k].estimation_rows), table.kinds(),
                                        cc.vine_options(), seeds[k], table.names());
      texts[k] = model.to_json().dump(2) + "\n";
    } catch (const std::exception& e) {
      errors[k] = e.what();
    }
  });
  std::vector<Failure> failures;
  const fs::path dir(out_dir);
  for (std::size_t k = 0; k < chunks.size(); ++k) {
    const auto key = chunks[k].key.str();
    manifest.j["units"].push_back({ { "unit", key },
                                    { "seed", seeds[k] },
                                    { "rows", chunks[k].estimation_rows.size() } });
    if (!errors[k].empty()) {
      failures.push_back({ key, errors[k] });
      continue;
    }
    manifest.output("model_" + key, dir / ("model_" + key + ".json"), texts[k]);
  }
  manifest.output("chunks", dir / "chunks.json",
                  chunk_manifest(chunks, cc.overlap_fraction, cc.seed).dump(2) + "\n");
  manifest.warnings(warnings);
  manifest.failures(failures);
  manifest.save(dir / "fit_manifest.json");
  return manifest.status();
}

int
cmd_correct(const std::string& config_path, const std::string& method_name,
            const std::string& model_path, const std::string& reference_path,
            const std::string& projection_path, const std::string& out_path,
            std::string manifest_path)
{
  const auto config = load_config(config_path);
  const auto method = method_from_string(method_name);
  const auto model = load(model_path, config.variables);
  const auto reference = load(reference_path, config.variables);
  const auto projection =
    projection_path.empty() ? model : load(projection_path, config.variables);
  Manifest manifest("correct", config);
  manifest.j["method"] = to_string(method);
  manifest.input("model", model_path);
  manifest.input("reference", reference_path);
  if (!projection_path.empty()) {
    manifest.input("projection", projection_path);
  }
  const auto run = run_correction(model, reference, projection, config, method);
  for (std::size_t i = 0; i < run.unit_seeds.size(); ++i) {
    manifest.j["units"].push_back({ { "unit", run.unit_seeds[i].first.str() },
                                    { "seed", run.unit_seeds[i].second },
                                    { "rows", run.unit_rows[i] } });
  }
  std::ostringstream csv;
  write_corrected(csv, projection, run);
  manifest.output("corrected", fs::path(out_path), csv.str());
  manifest.warnings(run.warnings);
  manifest.failures(run.failures);
  if (manifest_path.empty()) {
    manifest_path = out_path + ".manifest.json";
  }
  manifest.save(manifest_path);
  return manifest.status();
}

int
cmd_evaluate(const std::string& config_path, const std::string& model_path,
             const std::string& corrected_path, const std::string& reference_path,
             const std::string& out_dir)
{
  const auto config = load_config(config_path);
  const auto model = load(model_path, config.variables);
  const auto corrected = load(corrected_path, config.variables);
  const auto reference = load(reference_path, config.variables);
  Manifest manifest("evaluate", config);
  manifest.input("model", model_path);
  manifest.input("corrected", corrected_path);
  manifest.input("reference", reference_path);
  const auto report = run_evaluation(model, corrected, reference, config);
  for (const auto& u : report.units) {
    manifest.j["units"].push_back(
      { { "unit", u.metrics.chunk + "/" + std::to_string(u.metrics.member) },
        { "seed", combine_seed(unit_seed(config.correction.seed, u.metrics.chunk, u.metrics.member),
                               "evaluate") } });
  }
  const fs::path dir(out_dir);
  std::ostringstream wide, longf, series;
  write_report_wide(wide, report);
  write_report_long(longf, report);
  write_mci_series(series, report);
  manifest.output("report", dir / "report.csv", wide.str());
  manifest.output("report_long", dir / "report_long.csv", longf.str());
  manifest.output("mci_series", dir / "mci_series.csv", series.str());
  manifest.output("aggregates", dir / "aggregates.json", aggregates_json(report).dump(2) + "\n");
  manifest.warnings(report.warnings);
  manifest.failures(report.failures);
  manifest.save(dir / "evaluate_manifest.json");
  return manifest.status();
}

} // namespace

int
main(int argc, char** argv)
{
  CLI::App app{ "Vine-copula bias correction of multivariate climate ensembles" };
  app.set_version_flag("--version", std::string(vbc::version));
  app.require_subcommand(1);

  std::string config, out_dir, bias, data, method = "vbc", model, reference, projection, out,
                                           manifest, corrected;
  std::size_t members = 3, steps = 8 * 365;

  auto* sim = app.add_subcommand("simulate", "Generate synthetic reference and biased model ensembles");
  sim->add_option("--config", config, "Run configuration (JSON); only the seed is used");
  sim->add_option("--out-dir", out_dir, "Output directory")->required();
  sim->add_option("--bias", bias, "Bias as key=value list: shift, scale, inflation, tau");
  sim->add_option("--members", members, "Number of model ensemble members")->check(CLI::PositiveNumber);
  sim->add_option("--steps", steps, "3-hourly time steps per member")->check(CLI::PositiveNumber);

  auto* fit = app.add_subcommand("fit", "Fit one vine model per chunk");
  fit->add_option("--config", config, "Run configuration (JSON)")->required();
  fit->add_option("--data", data, "Input CSV")->required();
  fit->add_option("--out-dir", out_dir, "Output directory")->required();

  auto* cor = app.add_subcommand("correct", "Bias-correct every chunk and member");
  cor->add_option("--config", config, "Run configuration (JSON)")->required();
  cor->add_option("--method", method, "vbc or ubc")->check(CLI::IsMember({ "vbc", "ubc" }));
  cor->add_option("--model", model, "Model calibration CSV")->required();
  cor->add_option("--reference", reference, "Reference calibration CSV")->required();
  cor->add_option("--projection", projection, "Model projection CSV (default: the model data)");
  cor->add_option("--out", out, "Corrected CSV")->required();
  cor->add_option("--manifest", manifest, "Run manifest (default: <out>.manifest.json)");

  auto* ev = app.add_subcommand("evaluate", "Compute W2, IW2 and MCI per chunk and member");
  ev->add_option("--config", config, "Run configuration (JSON)")->required();
  ev->add_option("--model", model, "Uncorrected model CSV")->required();
  ev->add_option("--corrected", corrected, "Corrected CSV")->required();
  ev->add_option("--reference", reference, "Reference CSV")->required();
  ev->add_option("--out-dir", out_dir, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? ok : config_error;
  }

  try {
    if (*sim) {
      return cmd_simulate(config, out_dir, bias, members, steps);
    }
    if (*fit) {
      return cmd_fit(config, data, out_dir);
    }
    if (*cor) {
      return cmd_correct(config, method, model, reference, projection, out, manifest);
    }
    return cmd_evaluate(config, model, corrected, reference, out_dir);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return config_error;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return data_error;
  } catch (const SchemaError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return data_error;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return data_error;
  }
}
