// envdiag: fit regression models and draw global simulation envelopes around
// their diagnostic plots.
//
//   envdiag fit         --data d.csv --model poisson
//   envdiag diagnose    --data d.csv --model lm --plots qq,scale_location --out out/
//   envdiag power-study --config grid.json --out power/
//
// Settings come from built-in defaults, then --config (JSON), then flags.

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "envdiag/app_io.hpp"

namespace {

struct Flags {
  std::string config;
  std::string data;
  std::string model;
  std::string plots;
  std::string response;
  std::string predictors;
  std::string group;
  std::optional<int> B;
  std::optional<double> alpha;
  std::optional<std::uint64_t> seed;
  std::optional<int> grid;
  std::string out;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

envdiag::RunConfig resolve(const Flags& f) {
  envdiag::RunConfig c = f.config.empty() ? envdiag::RunConfig{} : envdiag::load_run_config(f.config);
  if (!f.data.empty()) c.data_path = f.data;
  if (!f.model.empty()) c.model = envdiag::parse_model_kind(f.model);
  if (!f.plots.empty()) {
    c.plots.clear();
    for (const auto& p : split_list(f.plots)) c.plots.push_back(envdiag::parse_plot_kind(p));
  }
  if (!f.response.empty()) c.response_column = f.response;
  if (!f.predictors.empty()) c.predictor_columns = split_list(f.predictors);
  if (!f.group.empty()) c.group_column = f.group;
  if (f.B) c.B = *f.B;
  if (f.alpha) c.alpha = *f.alpha;
  if (f.seed) c.seed = *f.seed;
  if (f.grid) c.m_grid = *f.grid;
  if (!f.out.empty()) c.output_dir = f.out;
  return c;
}

void add_data_flags(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "JSON run configuration");
  cmd->add_option("--data", f.data, "CSV file with a header row");
  cmd->add_option("--model", f.model, "lm | poisson | poisson-ri");
  cmd->add_option("--response", f.response, "response column (default y)");
  cmd->add_option("--predictors", f.predictors, "comma-separated predictor columns (default: all others)");
  cmd->add_option("--group", f.group, "grouping column for poisson-ri");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Global simulation envelopes for regression diagnostic plots"};
  app.require_subcommand(1);
  Flags f;

  auto* fit = app.add_subcommand("fit", "fit a model and print its summary as JSON");
  add_data_flags(fit, f);
  fit->add_option("--out", f.out, "write fit.json into this directory instead of stdout");

  auto* diagnose = app.add_subcommand("diagnose", "fit a model and write envelope plots (SVG + CSV)");
  add_data_flags(diagnose, f);
  diagnose->add_option("--plots", f.plots, "comma list of qq, pp, res_vs_fits, scale_location");
  diagnose->add_option("--B", f.B, "functions in the ensemble, observed included (default 199)");
  diagnose->add_option("--alpha", f.alpha, "envelope level (default 0.05)");
  diagnose->add_option("--seed", f.seed, "random seed (default 1)");
  diagnose->add_option("--grid", f.grid, "evaluation points for smoother plots (default 64)");
  diagnose->add_option("--out", f.out, "output directory");

  auto* power = app.add_subcommand("power-study", "run the simulation grid and tabulate rejection rates");
  power->add_option("--config", f.config, "JSON scenario grid")->required();
  power->add_option("--B", f.B, "override B for every scenario");
  power->add_option("--alpha", f.alpha, "override alpha");
  power->add_option("--seed", f.seed, "override seed");
  power->add_option("--grid", f.grid, "override smoother grid size");
  power->add_option("--out", f.out, "output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*fit) {
      envdiag::RunConfig c = resolve(f);
      if (c.data_path.empty()) throw envdiag::Error(envdiag::ErrorCode::InvalidArgument, "no data file given");
      const auto d = envdiag::validate_dataset(envdiag::load_csv(c.data_path, c));
      const auto m = envdiag::fit_model(c.model, d);
      const std::string summary = envdiag::fit_summary_json(m);
      if (f.out.empty()) {
        std::cout << summary;
      } else {
        std::filesystem::create_directories(f.out);
        std::ofstream(std::filesystem::path(f.out) / "fit.json") << summary;
      }
    } else if (*diagnose) {
      const auto artifacts = envdiag::run_diagnose(resolve(f));
      for (const auto& a : artifacts) {
        std::cout << envdiag::to_string(a.kind) << ": reject=" << (a.reject ? "true" : "false")
                  << " p=" << a.p_value << "  " << a.svg_path.string() << '\n';
      }
    } else if (*power) {
      auto config = envdiag::load_power_study_config(f.config);
      for (auto& s : config.scenarios) {
        if (f.B) s.B = *f.B;
        if (f.alpha) s.alpha = *f.alpha;
        if (f.seed) s.seed = *f.seed;
        if (f.grid) s.m_grid = *f.grid;
        envdiag::validate_scenario(s);
      }
      if (f.seed) config.seed = *f.seed;
      if (!f.out.empty()) config.output_dir = f.out;
      std::cout << envdiag::run_power_study(config).string() << '\n';
    }
  } catch (const envdiag::Error& e) {
    std::cerr << "envdiag: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "envdiag: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
