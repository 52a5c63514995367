#include "lossada/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace lossada {

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

std::vector<double> metric_values(const std::uint64_t seed, const MetricsRecord& m) {
  return {static_cast<double>(seed),
          static_cast<double>(m.round),
          m.budget_spent_percent,
          m.target_accuracy,
          m.pseudo_label_accuracy,
          m.high_loss_misprediction_rate,
          m.low_loss_misprediction_rate,
          static_cast<double>(m.selected_class_coverage),
          m.selected_mean_pairwise_feature_distance,
          m.losses.ranking,
          m.losses.info_max,
          m.losses.discriminator,
          m.losses.adversarial};
}

nlohmann::json losses_json(const LossComponents& c) {
  return {{"L_loss", c.ranking},      {"L_im", c.info_max}, {"L_dis", c.discriminator},
          {"L_adv", c.adversarial},   {"total", c.total},   {"ce", c.cross_entropy}};
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

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                    "#9467bd", "#8c564b", "#e377c2", "#17becf"};

}  // namespace

const std::vector<std::string>& metrics_columns() {
  static const std::vector<std::string> cols = {
      "seed",   "round",     "budget_pct", "target_acc",     "pseudo_acc", "high_mis", "low_mis",
      "class_cov", "mean_pair_dist", "L_loss", "L_im", "L_dis", "L_adv"};
  return cols;
}

void write_metrics_csv(std::ostream& out, const std::vector<SeedRun>& runs) {
  out << kMetricsSchemaLine << '\n';
  const auto& cols = metrics_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << '\n';
  for (const SeedRun& run : runs) {
    for (const RoundLog& log : run.result.rounds) {
      const std::vector<double> v = metric_values(run.seed, log.metrics);
      out << run.seed << ',' << log.metrics.round;
      for (std::size_t i = 2; i < v.size(); ++i) out << ',' << num(v[i]);
      out << '\n';
    }
  }
}

void write_summary_csv(std::ostream& out, const std::vector<SeedRun>& runs) {
  out << kMetricsSchemaLine << '\n';
  const auto& cols = metrics_columns();
  out << "round,n_seeds";
  for (std::size_t i = 2; i < cols.size(); ++i) out << ',' << cols[i] << "_mean," << cols[i] << "_sd";
  out << '\n';
  std::size_t rounds = 0;
  for (const SeedRun& r : runs) rounds = std::max(rounds, r.result.rounds.size());
  for (std::size_t round = 0; round < rounds; ++round) {
    std::vector<std::vector<double>> per_col(cols.size());
    for (const SeedRun& r : runs) {
      if (round >= r.result.rounds.size()) continue;
      const std::vector<double> v = metric_values(r.seed, r.result.rounds[round].metrics);
      for (std::size_t i = 0; i < v.size(); ++i) per_col[i].push_back(v[i]);
    }
    out << round << ',' << per_col[0].size();
    for (std::size_t i = 2; i < cols.size(); ++i) {
      const auto& vals = per_col[i];
      const double mean = vals.empty() ? 0.0 : std::accumulate(vals.begin(), vals.end(), 0.0) / static_cast<double>(vals.size());
      out << ',' << num(mean) << ',' << num(sample_sd(vals));
    }
    out << '\n';
  }
}

void write_round_logs_jsonl(std::ostream& out, const std::vector<SeedRun>& runs) {
  for (const SeedRun& run : runs) {
    for (const RoundLog& log : run.result.rounds) {
      nlohmann::json j;
      j["seed"] = run.seed;
      j["round"] = log.round;
      j["selected"] = log.selected;
      const MetricsRecord& m = log.metrics;
      j["metrics"] = {{"budget_pct", m.budget_spent_percent},
                      {"target_acc", m.target_accuracy},
                      {"pseudo_acc", m.pseudo_label_accuracy},
                      {"high_mis", m.high_loss_misprediction_rate},
                      {"low_mis", m.low_loss_misprediction_rate},
                      {"class_cov", m.selected_class_coverage},
                      {"mean_pair_dist", m.selected_mean_pairwise_feature_distance},
                      {"mean_pred_entropy", m.mean_prediction_entropy},
                      {"losses", losses_json(m.losses)}};
      nlohmann::json s1 = nlohmann::json::array();
      for (const LossComponents& c : log.s1.iterations) s1.push_back(losses_json(c));
      nlohmann::json s2 = nlohmann::json::array();
      for (const LossComponents& c : log.s2.iterations) s2.push_back(losses_json(c));
      j["s1_iterations"] = std::move(s1);
      j["s2_iterations"] = std::move(s2);
      j["s2_refreshes"] = log.s2.refreshes;
      out << j.dump() << '\n';
    }
  }
}

std::size_t CsvTable::column(const std::string& name) const {
  const auto it = std::find(columns.begin(), columns.end(), name);
  if (it == columns.end()) throw SchemaError("missing column '" + name + "'");
  return static_cast<std::size_t>(it - columns.begin());
}

bool CsvTable::has(const std::string& name) const {
  return std::find(columns.begin(), columns.end(), name) != columns.end();
}

CsvTable read_table_csv(const std::filesystem::path& path, const std::vector<std::string>& required) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw SchemaError(path.string() + ": empty file");
  if (line.rfind("# lossada-metrics ", 0) != 0) {
    throw SchemaError(path.string() + ": missing schema line '" + std::string(kMetricsSchemaLine) + "'");
  }
  if (line != kMetricsSchemaLine) {
    throw SchemaError(path.string() + ": unsupported schema version '" + line.substr(2) + "'");
  }
  CsvTable t;
  if (!std::getline(in, line)) throw SchemaError(path.string() + ": missing header row");
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) t.columns.push_back(cell);
  }
  for (const std::string& r : required) {
    if (!t.has(r)) throw SchemaError(path.string() + ": missing column '" + r + "'");
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != t.columns.size()) {
      throw SchemaError(path.string() + ": row " + std::to_string(t.rows.size() + 1) + " has " +
                        std::to_string(cells.size()) + " cells, header has " +
                        std::to_string(t.columns.size()));
    }
    std::vector<double> vals;
    for (const std::string& c : cells) {
      char* end = nullptr;
      const double v = std::strtod(c.c_str(), &end);
      vals.push_back(end != c.c_str() && *end == '\0' ? v : std::numeric_limits<double>::quiet_NaN());
    }
    t.rows.push_back(std::move(vals));
    t.text.push_back(std::move(cells));
  }
  if (t.rows.empty()) throw SchemaError(path.string() + ": no data rows");
  return t;
}

std::string render_svg(const ChartSpec& spec) {
  constexpr double width = 640, height = 420;
  constexpr double left = 70, right = 150, top = 40, bottom = 60;
  const double plot_w = width - left - right;
  const double plot_h = height - top - bottom;

  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
  double ymin = xmin, ymax = -xmin;
  for (const Series& s : spec.series) {
    for (double v : s.x) {
      xmin = std::min(xmin, v);
      xmax = std::max(xmax, v);
    }
    for (double v : s.y) {
      ymin = std::min(ymin, v);
      ymax = std::max(ymax, v);
    }
  }
  if (!std::isfinite(xmin)) {
    xmin = 0;
    xmax = 1;
    ymin = 0;
    ymax = 1;
  }
  if (spec.bars) ymin = std::min(0.0, ymin);
  if (xmax == xmin) {
    xmin -= 0.5;
    xmax += 0.5;
  }
  if (ymax == ymin) {
    ymin -= 0.5;
    ymax += 0.5;
  }
  const double ypad = 0.05 * (ymax - ymin);
  ymax += ypad;
  if (!spec.bars) ymin -= ypad;
  if (spec.bars) {
    xmin -= 0.5;
    xmax += 0.5;
  }
  auto px = [&](double x) { return left + (x - xmin) / (xmax - xmin) * plot_w; };
  auto py = [&](double y) { return top + (ymax - y) / (ymax - ymin) * plot_h; };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
    << "\" viewBox=\"0 0 " << width << ' ' << height << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">"
    << xml_escape(spec.title) << "</text>\n";
  o << "<line x1=\"" << left << "\" y1=\"" << top + plot_h << "\" x2=\"" << left + plot_w << "\" y2=\""
    << top + plot_h << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + plot_h
    << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double yv = ymin + (ymax - ymin) * i / 4.0;
    o << "<text x=\"" << left - 6 << "\" y=\"" << num(py(yv) + 4) << "\" text-anchor=\"end\">" << num(yv)
      << "</text>\n";
  }
  if (spec.bars) {
    for (std::size_t i = 0; i < spec.categories.size(); ++i) {
      o << "<text x=\"" << num(px(static_cast<double>(i))) << "\" y=\"" << top + plot_h + 16
        << "\" text-anchor=\"middle\">" << xml_escape(spec.categories[i]) << "</text>\n";
    }
  } else {
    for (int i = 0; i <= 4; ++i) {
      const double xv = xmin + (xmax - xmin) * i / 4.0;
      o << "<text x=\"" << num(px(xv)) << "\" y=\"" << top + plot_h + 16 << "\" text-anchor=\"middle\">"
        << num(xv) << "</text>\n";
    }
  }
  o << "<text x=\"" << left + plot_w / 2 << "\" y=\"" << height - 15 << "\" text-anchor=\"middle\">"
    << xml_escape(spec.x_label) << "</text>\n";
  o << "<text x=\"16\" y=\"" << top + plot_h / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
    << top + plot_h / 2 << ")\">" << xml_escape(spec.y_label) << "</text>\n";

  const std::size_t n_series = spec.series.size();
  for (std::size_t k = 0; k < n_series; ++k) {
    const Series& s = spec.series[k];
    const char* color = kPalette[k % std::size(kPalette)];
    o << "<g class=\"series\" data-name=\"" << xml_escape(s.name) << "\">\n";
    if (spec.bars) {
      const double slot = plot_w / (xmax - xmin);
      const double bw = 0.8 * slot / static_cast<double>(std::max<std::size_t>(1, n_series));
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        const double x0 = px(s.x[i]) - 0.4 * slot + bw * static_cast<double>(k);
        const double y0 = py(std::max(0.0, s.y[i]));
        const double h = std::abs(py(s.y[i]) - py(0.0));
        o << "<rect x=\"" << num(x0) << "\" y=\"" << num(y0) << "\" width=\"" << num(bw) << "\" height=\""
          << num(h) << "\" fill=\"" << color << "\" data-value=\"" << num(s.y[i]) << "\"/>\n";
      }
    } else {
      if (s.x.size() > 1) {
        o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < s.x.size(); ++i) o << (i ? " " : "") << num(px(s.x[i])) << ',' << num(py(s.y[i]));
        o << "\"/>\n";
      }
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        o << "<circle class=\"marker\" cx=\"" << num(px(s.x[i])) << "\" cy=\"" << num(py(s.y[i]))
          << "\" r=\"3\" fill=\"" << color << "\" data-x=\"" << num(s.x[i]) << "\" data-value=\""
          << num(s.y[i]) << "\"/>\n";
      }
    }
    o << "</g>\n";
    const double ly = top + 14.0 * static_cast<double>(k);
    o << "<rect x=\"" << left + plot_w + 12 << "\" y=\"" << num(ly) << "\" width=\"10\" height=\"10\" fill=\""
      << color << "\"/>\n";
    o << "<text x=\"" << left + plot_w + 26 << "\" y=\"" << num(ly + 9) << "\">" << xml_escape(s.name)
      << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

double median(std::vector<double> v) {
  if (v.empty()) throw ContractError("median of an empty vector");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double sample_sd(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace lossada
