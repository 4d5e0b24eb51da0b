#include "envdiag/app_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

namespace envdiag {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

json parse_json(const fs::path& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, path.string() + ": " + e.what());
  }
}

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

// Splits one CSV record; double quotes may wrap fields containing commas.
std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(trim(field));
      field.clear();
    } else {
      field += c;
    }
  }
  fields.push_back(trim(field));
  return fields;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string fixed(double v, int digits = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

ModelKind parse_model_kind(std::string_view name) {
  if (name == "lm") return ModelKind::Lm;
  if (name == "poisson" || name == "glm") return ModelKind::GlmPoisson;
  if (name == "poisson-ri" || name == "glmm") return ModelKind::GlmmPoissonRi;
  throw Error(ErrorCode::InvalidArgument, "unknown model '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// Configuration

RunConfig load_run_config(const fs::path& path) {
  const json j = parse_json(path);
  RunConfig c;
  try {
    if (j.contains("data_path")) {
      fs::path data = j.at("data_path").get<std::string>();
      c.data_path = data.is_relative() ? path.parent_path() / data : data;
    }
    if (j.contains("response_column")) c.response_column = j.at("response_column").get<std::string>();
    if (j.contains("predictor_columns")) c.predictor_columns = j.at("predictor_columns").get<std::vector<std::string>>();
    if (j.contains("group_column") && !j.at("group_column").is_null()) {
      c.group_column = j.at("group_column").get<std::string>();
    }
    if (j.contains("model")) c.model = parse_model_kind(j.at("model").get<std::string>());
    if (j.contains("plots")) {
      c.plots.clear();
      for (const auto& p : j.at("plots")) c.plots.push_back(parse_plot_kind(p.get<std::string>()));
    }
    if (j.contains("B")) c.B = j.at("B").get<int>();
    if (j.contains("alpha")) c.alpha = j.at("alpha").get<double>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("m_grid")) c.m_grid = j.at("m_grid").get<int>();
    if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, path.string() + ": " + e.what());
  }
  return c;
}

void validate_run_config(const RunConfig& c) {
  if (c.data_path.empty()) throw Error(ErrorCode::InvalidArgument, "no data file given");
  if (c.B < 19) throw Error(ErrorCode::InvalidArgument, "B must be at least 19");
  if (!(c.alpha > 0.0 && c.alpha < 1.0)) throw Error(ErrorCode::InvalidArgument, "alpha must lie in (0, 1)");
  if (c.m_grid < 1) throw Error(ErrorCode::InvalidArgument, "grid size must be positive");
  if (c.plots.empty()) throw Error(ErrorCode::InvalidArgument, "no plots requested");
  if (c.model == ModelKind::GlmmPoissonRi && !c.group_column) {
    throw Error(ErrorCode::InvalidArgument, "the poisson-ri model needs a group column");
  }
}

// ---------------------------------------------------------------------------
// CSV input

Dataset load_csv(const fs::path& path, const RunConfig& config) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());

  std::string line;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!trim(line).empty()) {
      header = split_csv_line(line);
      break;
    }
  }
  if (header.empty()) throw Error(ErrorCode::EmptyFile, path.string() + " has no header row");
  if (header.front().rfind("\xEF\xBB\xBF", 0) == 0) header.front().erase(0, 3);

  auto column_index = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw Error(ErrorCode::MissingColumn, "column '" + name + "' not in " + path.string());
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t y_col = column_index(config.response_column);
  std::optional<std::size_t> g_col;
  if (config.group_column) g_col = column_index(*config.group_column);
  std::vector<std::size_t> x_cols;
  if (config.predictor_columns.empty()) {
    for (std::size_t j = 0; j < header.size(); ++j) {
      if (j != y_col && (!g_col || j != *g_col)) x_cols.push_back(j);
    }
  } else {
    for (const auto& name : config.predictor_columns) x_cols.push_back(column_index(name));
  }

  std::vector<double> ys;
  std::vector<std::vector<double>> xs;
  std::vector<int> groups;
  std::map<std::string, int> label_codes;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != header.size()) {
      throw Error(ErrorCode::NonNumericCell, "row " + std::to_string(row) + " has " + std::to_string(fields.size()) +
                                                 " fields, header has " + std::to_string(header.size()));
    }
    auto number = [&](std::size_t col) {
      const std::string& cell = fields[col];
      double v = 0.0;
      std::size_t used = 0;
      try {
        v = std::stod(cell, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (cell.empty() || used != cell.size() || !std::isfinite(v)) {
        throw Error(ErrorCode::NonNumericCell, "row " + std::to_string(row) + ", column " +
                                                   std::to_string(col + 1) + " ('" + header[col] +
                                                   "'): '" + cell + "' is not a finite number");
      }
      return v;
    };
    ys.push_back(number(y_col));
    std::vector<double> xrow;
    for (auto c : x_cols) xrow.push_back(number(c));
    xs.push_back(std::move(xrow));
    if (g_col) {
      const auto [it, inserted] = label_codes.emplace(fields[*g_col], static_cast<int>(label_codes.size()));
      groups.push_back(it->second);
    }
  }
  if (ys.empty()) throw Error(ErrorCode::EmptyFile, path.string() + " has no data rows");

  Dataset d;
  const auto n = static_cast<Eigen::Index>(ys.size());
  d.y = Eigen::Map<const Vector>(ys.data(), n);
  d.X.resize(n, static_cast<Eigen::Index>(x_cols.size()) + 1);
  d.X.col(0).setOnes();
  for (Eigen::Index i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < x_cols.size(); ++j) {
      d.X(i, static_cast<Eigen::Index>(j) + 1) = xs[static_cast<std::size_t>(i)][j];
    }
  }
  if (g_col) d.group = std::move(groups);
  return d;
}

// ---------------------------------------------------------------------------
// Plot output

void write_envelope_csv(const DiagnosticResult& r, const fs::path& path) {
  std::string text = "grid,observed,center,lower,upper\n";
  for (Eigen::Index i = 0; i < r.grid.size(); ++i) {
    text += format_double(r.grid[i]) + ',' + format_double(r.observed[i]) + ',' +
            format_double(r.envelope.center[i]) + ',' + format_double(r.envelope.lower[i]) + ',' +
            format_double(r.envelope.upper[i]) + '\n';
  }
  write_file(path, text);
}

std::string render_svg(const DiagnosticResult& r, const std::string& title) {
  constexpr double kWidth = 800.0, kHeight = 600.0;
  constexpr double kLeft = 70.0, kRight = 30.0, kTop = 50.0, kBottom = 60.0;

  double x_lo = std::min(r.grid.minCoeff(), r.points.rows() ? r.points.col(0).minCoeff() : r.grid.minCoeff());
  double x_hi = std::max(r.grid.maxCoeff(), r.points.rows() ? r.points.col(0).maxCoeff() : r.grid.maxCoeff());
  double y_lo = std::min({r.envelope.lower.minCoeff(), r.observed.minCoeff()});
  double y_hi = std::max({r.envelope.upper.maxCoeff(), r.observed.maxCoeff()});
  if (r.points.rows()) {
    y_lo = std::min(y_lo, r.points.col(1).minCoeff());
    y_hi = std::max(y_hi, r.points.col(1).maxCoeff());
  }
  auto pad = [](double& lo, double& hi) {
    const double span = hi - lo > 0.0 ? hi - lo : std::max(std::abs(lo), 1.0);
    lo -= 0.05 * span;
    hi += 0.05 * span;
  };
  pad(x_lo, x_hi);
  pad(y_lo, y_hi);
  const auto sx = [&](double x) { return kLeft + (x - x_lo) / (x_hi - x_lo) * (kWidth - kLeft - kRight); };
  const auto sy = [&](double y) { return kHeight - kBottom - (y - y_lo) / (y_hi - y_lo) * (kHeight - kTop - kBottom); };

  const char* x_label = "linear predictor";
  const char* y_label = "residual";
  switch (r.kind) {
    case PlotKind::QQ: x_label = "normal quantile"; y_label = "sorted residual"; break;
    case PlotKind::PP: x_label = "uniform plotting position"; y_label = "residual probability"; break;
    case PlotKind::ResVsFits: break;
    case PlotKind::ScaleLocation: y_label = "|residual|"; break;
  }

  std::ostringstream svg;
  svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"800\" height=\"600\" viewBox=\"0 0 800 600\">\n"
      << "<rect x=\"0\" y=\"0\" width=\"800\" height=\"600\" fill=\"white\"/>\n"
      << "<text x=\"400\" y=\"28\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"18\">"
      << xml_escape(title) << "</text>\n";

  // Band: upper edge left to right, lower edge back.
  svg << "<path class=\"band\" fill=\"#9ecae1\" fill-opacity=\"0.6\" stroke=\"none\" d=\"";
  for (Eigen::Index i = 0; i < r.grid.size(); ++i) {
    svg << (i == 0 ? 'M' : 'L') << fixed(sx(r.grid[i])) << ',' << fixed(sy(r.envelope.upper[i])) << ' ';
  }
  for (Eigen::Index i = r.grid.size() - 1; i >= 0; --i) {
    svg << 'L' << fixed(sx(r.grid[i])) << ',' << fixed(sy(r.envelope.lower[i])) << ' ';
  }
  svg << "Z\"/>\n";

  auto polyline = [&](const char* cls, const Vector& values, const char* stroke, const char* dash) {
    svg << "<polyline class=\"" << cls << "\" fill=\"none\" stroke=\"" << stroke << "\" stroke-width=\"2\"";
    if (dash) svg << " stroke-dasharray=\"" << dash << '"';
    svg << " points=\"";
    for (Eigen::Index i = 0; i < r.grid.size(); ++i) {
      svg << fixed(sx(r.grid[i])) << ',' << fixed(sy(values[i])) << ' ';
    }
    svg << "\"/>\n";
  };
  polyline("center", r.envelope.center, "#3182bd", "6,4");
  if (r.kind == PlotKind::ResVsFits || r.kind == PlotKind::ScaleLocation) {
    polyline("observed", r.observed, "#d62728", nullptr);
  }

  svg << "<g class=\"points\" fill=\"black\">\n";
  for (Eigen::Index i = 0; i < r.points.rows(); ++i) {
    svg << "<circle cx=\"" << fixed(sx(r.points(i, 0))) << "\" cy=\"" << fixed(sy(r.points(i, 1)))
        << "\" r=\"3\"/>\n";
  }
  svg << "</g>\n";

  // Axes with five ticks each.
  const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;
  svg << "<g class=\"axes\" stroke=\"black\" font-family=\"sans-serif\" font-size=\"12\">\n"
      << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x1 << "\" y2=\"" << y0 << "\"/>\n"
      << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x0 << "\" y2=\"" << y1 << "\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double xv = x_lo + (x_hi - x_lo) * t / 4.0;
    const double yv = y_lo + (y_hi - y_lo) * t / 4.0;
    svg << "<text stroke=\"none\" x=\"" << fixed(sx(xv)) << "\" y=\"" << y0 + 18
        << "\" text-anchor=\"middle\">" << fixed(xv) << "</text>\n"
        << "<text stroke=\"none\" x=\"" << x0 - 6 << "\" y=\"" << fixed(sy(yv) + 4)
        << "\" text-anchor=\"end\">" << fixed(yv) << "</text>\n";
  }
  svg << "<text stroke=\"none\" x=\"" << (x0 + x1) / 2 << "\" y=\"" << kHeight - 15
      << "\" text-anchor=\"middle\">" << x_label << "</text>\n"
      << "<text stroke=\"none\" transform=\"translate(18," << (y0 + y1) / 2
      << ") rotate(-90)\" text-anchor=\"middle\">" << y_label << "</text>\n"
      << "</g>\n";

  svg << "<text class=\"annotation\" x=\"" << x1 << "\" y=\"" << kTop + 16
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"13\">"
      << (r.reject ? "outside envelope" : "inside envelope") << ": reject=" << (r.reject ? "true" : "false")
      << ", p=" << fixed(r.p_value, 3) << ", B=" << r.B << "</text>\n"
      << "</svg>\n";
  return svg.str();
}

std::string fit_summary_json(const FittedModel& m) {
  json j;
  j["model"] = std::string(to_string(m.kind));
  j["n"] = m.dataset().n();
  j["beta"] = std::vector<double>(m.beta.data(), m.beta.data() + m.beta.size());
  if (m.kind == ModelKind::Lm) {
    j["sigma"] = m.sigma;
    j["degenerate"] = m.degenerate;
  }
  if (m.kind == ModelKind::GlmmPoissonRi) {
    j["omega"] = m.omega;
    j["boundary_omega"] = m.boundary_omega;
  }
  j["loglik"] = std::isfinite(m.loglik) ? json(m.loglik) : json(nullptr);
  j["iterations"] = m.iterations;
  return j.dump(2) + "\n";
}

std::vector<PlotArtifact> run_diagnose(const RunConfig& config) {
  validate_run_config(config);
  const Dataset d = validate_dataset(load_csv(config.data_path, config));
  const FittedModel m = fit_model(config.model, d);

  DiagnosticOptions options;
  options.B = config.B;
  options.alpha = config.alpha;
  options.seed = config.seed;
  options.m_grid = config.m_grid;
  const auto results = plot_envelopes(m, config.plots, options);

  fs::create_directories(config.output_dir);
  std::vector<fs::path> written;
  std::vector<PlotArtifact> artifacts;
  try {
    json summary;
    summary["fit"] = json::parse(fit_summary_json(m));
    summary["B"] = config.B;
    summary["alpha"] = config.alpha;
    summary["seed"] = config.seed;
    summary["plots"] = json::array();
    for (const auto& r : results) {
      PlotArtifact a;
      a.kind = r.kind;
      a.reject = r.reject;
      a.p_value = r.p_value;
      const std::string stem(to_string(r.kind));
      a.csv_path = config.output_dir / (stem + ".csv");
      a.svg_path = config.output_dir / (stem + ".svg");
      written.push_back(a.csv_path);
      write_envelope_csv(r, a.csv_path);
      written.push_back(a.svg_path);
      write_file(a.svg_path, render_svg(r, std::string(to_string(m.kind)) + " model: " + stem));
      summary["plots"].push_back({{"kind", stem},
                                  {"reject", r.reject},
                                  {"p_value", r.p_value},
                                  {"critical", r.envelope.critical},
                                  {"failed_refits", r.failures},
                                  {"csv", a.csv_path.filename().string()},
                                  {"svg", a.svg_path.filename().string()}});
      artifacts.push_back(std::move(a));
    }
    const fs::path summary_path = config.output_dir / "summary.json";
    written.push_back(summary_path);
    write_file(summary_path, summary.dump(2) + "\n");
  } catch (...) {
    std::error_code ec;
    for (const auto& p : written) fs::remove(p, ec);
    throw;
  }
  return artifacts;
}

// ---------------------------------------------------------------------------
// Power study

PowerStudyConfig load_power_study_config(const fs::path& path) {
  const json j = parse_json(path);
  PowerStudyConfig c;
  try {
    ScenarioSpec base;
    base.n_datasets = j.value("n_datasets", 200);
    base.B = j.value("B", 99);
    base.alpha = j.value("alpha", 0.05);
    base.seed = j.value("seed", std::uint64_t{1});
    base.random_x = j.value("random_x", false);
    base.m_grid = j.value("m_grid", 64);
    c.seed = base.seed;
    if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();

    if (j.contains("scenarios")) {
      for (const auto& s : j.at("scenarios")) {
        ScenarioSpec spec = base;
        spec.model = parse_scenario_model(s.at("model").get<std::string>());
        spec.violation = parse_violation(s.at("violation").get<std::string>());
        spec.n = s.at("n").get<int>();
        c.scenarios.push_back(spec);
      }
    } else {
      const auto models = j.value("models", std::vector<std::string>{"a", "b", "c"});
      const auto violations = j.value("violations", std::vector<std::string>{"null", "mixture", "quadratic"});
      const auto sizes = j.value("sizes", std::vector<int>{10, 20, 40, 80});
      for (const auto& mname : models) {
        for (const auto& vname : violations) {
          for (int n : sizes) {
            ScenarioSpec spec = base;
            spec.model = parse_scenario_model(mname);
            spec.violation = parse_violation(vname);
            spec.n = n;
            c.scenarios.push_back(spec);
          }
        }
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, path.string() + ": " + e.what());
  }
  if (c.scenarios.empty()) throw Error(ErrorCode::InvalidArgument, "power study has no scenarios");
  for (const auto& s : c.scenarios) validate_scenario(s);
  return c;
}

std::string power_table_csv(const std::vector<ScenarioResult>& results, std::uint64_t seed) {
  std::string text = "model,violation,n,method,rate,se,n_datasets,B,seed\n";
  for (const auto& r : results) {
    for (const auto& mr : r.methods) {
      text += std::string(to_string(r.spec.model)) + ',' + std::string(to_string(r.spec.violation)) + ',' +
              std::to_string(r.spec.n) + ',' + std::string(to_string(mr.method)) + ',' + format_double(mr.rate) +
              ',' + format_double(mr.se) + ',' + std::to_string(r.spec.n_datasets) + ',' +
              std::to_string(r.spec.B) + ',' + std::to_string(seed) + '\n';
    }
  }
  return text;
}

fs::path run_power_study(const PowerStudyConfig& config, std::size_t threads) {
  std::vector<ScenarioResult> results;
  results.reserve(config.scenarios.size());
  for (const auto& s : config.scenarios) results.push_back(run_scenario(s, threads));

  fs::create_directories(config.output_dir);
  const fs::path csv_path = config.output_dir / "rates.csv";
  const fs::path manifest_path = config.output_dir / "manifest.json";
  try {
    write_file(csv_path, power_table_csv(results, config.seed));
    json manifest;
    manifest["seed"] = config.seed;
    manifest["rates_csv"] = csv_path.filename().string();
    manifest["scenarios"] = json::array();
    for (const auto& r : results) {
      manifest["scenarios"].push_back({{"model", std::string(to_string(r.spec.model))},
                                       {"violation", std::string(to_string(r.spec.violation))},
                                       {"n", r.spec.n},
                                       {"n_datasets", r.spec.n_datasets},
                                       {"B", r.spec.B},
                                       {"alpha", r.spec.alpha},
                                       {"seed", r.spec.seed},
                                       {"random_x", r.spec.random_x},
                                       {"failed_datasets", r.failed_datasets}});
    }
    write_file(manifest_path, manifest.dump(2) + "\n");
  } catch (...) {
    std::error_code ec;
    fs::remove(csv_path, ec);
    fs::remove(manifest_path, ec);
    throw;
  }
  return csv_path;
}

}  // namespace envdiag
