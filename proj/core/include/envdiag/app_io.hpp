#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "envdiag/diagnostics.hpp"
#include "envdiag/sim_harness.hpp"

namespace envdiag {

/// Settings for `fit` and `diagnose`. Loaded from JSON; CLI flags override.
struct RunConfig {
  std::filesystem::path data_path;
  std::string response_column = "y";
  std::vector<std::string> predictor_columns;
  std::optional<std::string> group_column;
  ModelKind model = ModelKind::Lm;
  std::vector<PlotKind> plots = {PlotKind::ResVsFits, PlotKind::QQ};
  int B = 199;
  double alpha = 0.05;
  std::uint64_t seed = 1;
  int m_grid = 64;
  std::filesystem::path output_dir = "envdiag-out";
};

RunConfig load_run_config(const std::filesystem::path& path);
void validate_run_config(const RunConfig& c);
ModelKind parse_model_kind(std::string_view name);

/// Parses the columns named in `config` from a headed CSV file. The
/// intercept column is prepended; group labels are re-encoded 0..G-1 in
/// order of first appearance. An empty predictor list means every column
/// other than the response and group. Throws MissingColumn, NonNumericCell
/// (file line number, header = 1, and 1-based column), EmptyFile or Io.
Dataset load_csv(const std::filesystem::path& path, const RunConfig& config);

/// Shortest round-trip text of a double (17 significant digits).
std::string format_double(double v);

struct PlotArtifact {
  std::filesystem::path svg_path;
  std::filesystem::path csv_path;
  PlotKind kind = PlotKind::QQ;
  bool reject = false;
  double p_value = 1.0;
};

/// Companion CSV: grid, observed, center, lower, upper.
void write_envelope_csv(const DiagnosticResult& r, const std::filesystem::path& path);
/// Standalone SVG with the band, center line, observed function and points.
std::string render_svg(const DiagnosticResult& r, const std::string& title);

/// Fits the configured model and writes one SVG + CSV per requested plot,
/// plus summary.json. Partial outputs are removed on failure.
std::vector<PlotArtifact> run_diagnose(const RunConfig& config);

/// JSON summary of a fit.
std::string fit_summary_json(const FittedModel& m);

/// Power-study grid: every listed scenario shares n_datasets, B, alpha and seed.
struct PowerStudyConfig {
  std::vector<ScenarioSpec> scenarios;
  std::filesystem::path output_dir = "envdiag-power";
  std::uint64_t seed = 1;
};

/// Accepts either an explicit "scenarios" array or a cartesian product of
/// "models" x "violations" x "sizes".
PowerStudyConfig load_power_study_config(const std::filesystem::path& path);

/// Runs every scenario, writes rates.csv (model, violation, n, method, rate,
/// se, n_datasets, B, seed) and manifest.json. Returns the rates CSV path.
std::filesystem::path run_power_study(const PowerStudyConfig& config, std::size_t threads = 0);
std::string power_table_csv(const std::vector<ScenarioResult>& results, std::uint64_t seed);

}  // namespace envdiag
