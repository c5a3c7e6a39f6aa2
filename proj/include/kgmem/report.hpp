#pragma once
// Reporting: per-cell mean +/- 2sd summary tables (CSV) and SVG line charts
// of accuracy and capacity vs epoch, with a zoomed first-30-epochs panel.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "kgmem/experiment.hpp"
#include "kgmem/trainer.hpp"

namespace kgmem {

struct ChartSeries {
  std::string label;
  std::vector<double> x, y;
};

namespace detail {

inline std::string fmt_num(double v) {
  std::ostringstream os;
  os << std::setprecision(6) << v;
  return os.str();
}

inline const char* series_color(size_t i) {
  static const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                  "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  return palette[i % (sizeof(palette) / sizeof(palette[0]))];
}

}  // namespace detail

// Self-contained SVG line chart. x_clip > 0 restricts the x axis (and the
// plotted points) to [0, x_clip].
inline std::string render_line_chart(const std::string& title, const std::string& x_label,
                                     const std::string& y_label,
                                     const std::vector<ChartSeries>& series, double x_clip = 0) {
  const double W = 960, H = 540;
  const double ml = 80, mr = 240, mt = 50, mb = 60;
  const double pw = W - ml - mr, ph = H - mt - mb;

  double x_max = 0, y_max = 0;
  for (const auto& s : series) {
    for (size_t i = 0; i < s.x.size(); ++i) {
      if (x_clip > 0 && s.x[i] > x_clip) continue;
      x_max = std::max(x_max, s.x[i]);
      y_max = std::max(y_max, s.y[i]);
    }
  }
  if (x_clip > 0) x_max = x_clip;
  if (x_max <= 0) x_max = 1;
  if (y_max <= 0) y_max = 1;
  y_max *= 1.05;

  auto px = [&](double x) { return ml + (x / x_max) * pw; };
  auto py = [&](double y) { return mt + ph - (y / y_max) * ph; };

  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 " << W << " " << H
     << "\" font-family=\"sans-serif\" font-size=\"13\">\n";
  os << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
  os << "<text x=\"" << (ml + pw / 2) << "\" y=\"25\" text-anchor=\"middle\" font-size=\"16\">"
     << title << "</text>\n";
  // axes
  os << "<line x1=\"" << ml << "\" y1=\"" << (mt + ph) << "\" x2=\"" << (ml + pw) << "\" y2=\""
     << (mt + ph) << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << (mt + ph)
     << "\" stroke=\"black\"/>\n";
  // ticks
  for (int i = 0; i <= 4; ++i) {
    const double fx = x_max * i / 4.0;
    const double fy = y_max * i / 4.0;
    os << "<line x1=\"" << px(fx) << "\" y1=\"" << (mt + ph) << "\" x2=\"" << px(fx) << "\" y2=\""
       << (mt + ph + 5) << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << px(fx) << "\" y=\"" << (mt + ph + 20)
       << "\" text-anchor=\"middle\" class=\"xtick\">" << detail::fmt_num(fx) << "</text>\n";
    os << "<line x1=\"" << (ml - 5) << "\" y1=\"" << py(fy) << "\" x2=\"" << ml << "\" y2=\""
       << py(fy) << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << (ml - 9) << "\" y=\"" << (py(fy) + 4)
       << "\" text-anchor=\"end\" class=\"ytick\">" << detail::fmt_num(fy) << "</text>\n";
  }
  os << "<text x=\"" << (ml + pw / 2) << "\" y=\"" << (H - 15) << "\" text-anchor=\"middle\">"
     << x_label << "</text>\n";
  os << "<text x=\"20\" y=\"" << (mt + ph / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 20 "
     << (mt + ph / 2) << ")\">" << y_label << "</text>\n";
  // series
  for (size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    os << "<polyline fill=\"none\" stroke=\"" << detail::series_color(si)
       << "\" stroke-width=\"1.5\" points=\"";
    for (size_t i = 0; i < s.x.size(); ++i) {
      if (x_clip > 0 && s.x[i] > x_clip) continue;
      os << px(s.x[i]) << "," << py(s.y[i]) << " ";
    }
    os << "\"/>\n";
    const double ly = mt + 14 + 18 * static_cast<double>(si);
    os << "<line x1=\"" << (ml + pw + 12) << "\" y1=\"" << (ly - 4) << "\" x2=\"" << (ml + pw + 34)
       << "\" y2=\"" << (ly - 4) << "\" stroke=\"" << detail::series_color(si)
       << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << (ml + pw + 40) << "\" y=\"" << ly << "\">" << s.label << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

struct ReportResult {
  std::string summary_csv_path;
  std::vector<std::string> chart_paths;
  std::vector<std::string> missing_curves;
};

namespace detail {

struct CellAgg {
  int setup = 0;
  std::string kind;
  int64_t size = 0;
  int layers = 0;
  int64_t base_params = 0;
  int d_model = 0;
  std::string activation;
  int64_t param_count = 0;
  int64_t n_predictions = 0;
  std::vector<double> final_accuracy;
  std::vector<double> final_mac;
  std::vector<std::string> curve_files;
};

}  // namespace detail

// Build summary.csv plus accuracy/capacity charts (full range and first 30
// epochs) from a ledger and its curve files. Missing curve files are
// reported and skipped; the rest of the report still goes out.
inline ReportResult write_report(const std::string& ledger_path, const std::string& out_dir) {
  namespace fs = std::filesystem;
  ReportResult result;
  fs::create_directories(out_dir);
  const fs::path ledger_dir = fs::path(ledger_path).parent_path();

  std::ifstream in(ledger_path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open ledger: " + ledger_path);
  std::map<std::string, detail::CellAgg> cells;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    if (j.value("status", "") != "ok") continue;
    auto& agg = cells[j.at("cell").get<std::string>()];
    agg.setup = j.value("setup", 0);
    agg.kind = j.value("kind", "");
    agg.size = j.value("size", int64_t{0});
    agg.layers = j.value("layers", 0);
    agg.base_params = j.at("base_params").is_null() ? 0 : j.at("base_params").get<int64_t>();
    agg.d_model = j.value("d_model", 0);
    agg.activation = j.value("activation", "");
    agg.param_count = j.value("param_count", int64_t{0});
    agg.n_predictions = j.value("n_predictions", int64_t{0});
    agg.final_accuracy.push_back(j.value("final_accuracy", 0.0));
    agg.final_mac.push_back(static_cast<double>(j.value("final_mac", int64_t{0})));
    agg.curve_files.push_back(j.value("curve_file", ""));
  }
  if (cells.empty()) throw std::runtime_error("ledger has no successful runs: " + ledger_path);

  std::vector<const detail::CellAgg*> ordered;
  for (const auto& [key, agg] : cells) ordered.push_back(&agg);
  std::sort(ordered.begin(), ordered.end(), [](const auto* a, const auto* b) {
    return std::tie(a->kind, a->size, a->layers, a->d_model, a->activation) <
           std::tie(b->kind, b->size, b->layers, b->d_model, b->activation);
  });

  // summary table
  std::ostringstream csv;
  csv << "setup,kind,size,layers,base_params,d_model,activation,repeats,param_count,"
         "n_predictions,accuracy_mean,accuracy_2sd,mac_mean,mac_2sd\n";
  csv << std::setprecision(10);
  for (const auto* c : ordered) {
    auto [acc_mean, acc_sd2] = detail::mean_sd2(c->final_accuracy);
    auto [mac_mean, mac_sd2] = detail::mean_sd2(c->final_mac);
    csv << c->setup << ',' << c->kind << ',' << c->size << ',' << c->layers << ',';
    if (c->base_params > 0) csv << c->base_params;
    csv << ',' << c->d_model << ',' << c->activation << ',' << c->final_accuracy.size() << ','
        << c->param_count << ',' << c->n_predictions << ',' << acc_mean << ',';
    if (c->final_accuracy.size() > 1) csv << acc_sd2;
    csv << ',' << mac_mean << ',';
    if (c->final_mac.size() > 1) csv << mac_sd2;
    csv << '\n';
  }
  const std::string csv_path = (fs::path(out_dir) / "summary.csv").string();
  write_text_file(csv_path, csv.str());
  result.summary_csv_path = csv_path;

  // per-cell mean curves
  std::vector<ChartSeries> acc_series, mac_series;
  for (const auto* c : ordered) {
    std::vector<CapacityCurve> curves;
    for (const auto& rel : c->curve_files) {
      const fs::path p = ledger_dir / rel;
      if (!fs::exists(p)) {
        result.missing_curves.push_back(p.string());
        continue;
      }
      curves.push_back(read_curve_csv(p.string()));
    }
    if (curves.empty()) continue;
    std::ostringstream label;
    label << "n" << c->size << " L" << c->layers << " d" << c->d_model << " " << c->activation;
    ChartSeries acc{label.str(), {}, {}}, mac{label.str(), {}, {}};
    const size_t n_points = curves[0].eval_epochs.size();
    for (size_t i = 0; i < n_points; ++i) {
      double am = 0, mm = 0;
      size_t n = 0;
      for (const auto& cv : curves) {
        if (i >= cv.eval_epochs.size()) continue;
        am += cv.accuracy[i];
        mm += static_cast<double>(cv.mac[i]);
        ++n;
      }
      if (n == 0) continue;
      acc.x.push_back(curves[0].eval_epochs[i]);
      acc.y.push_back(am / static_cast<double>(n));
      mac.x.push_back(curves[0].eval_epochs[i]);
      mac.y.push_back(mm / static_cast<double>(n));
    }
    acc_series.push_back(std::move(acc));
    mac_series.push_back(std::move(mac));
  }

  const struct {
    const char* file;
    const char* title;
    const char* ylabel;
    const std::vector<ChartSeries>* series;
    double clip;
  } charts[] = {
      {"accuracy.svg", "Training accuracy vs epoch", "accuracy", &acc_series, 0},
      {"accuracy_first30.svg", "Training accuracy, first 30 epochs", "accuracy", &acc_series, 30},
      {"capacity.svg", "Capacity (MAC) vs epoch", "capacity", &mac_series, 0},
      {"capacity_first30.svg", "Capacity (MAC), first 30 epochs", "capacity", &mac_series, 30},
  };
  for (const auto& ch : charts) {
    const std::string path = (fs::path(out_dir) / ch.file).string();
    write_text_file(path, render_line_chart(ch.title, "epoch", ch.ylabel, *ch.series, ch.clip));
    result.chart_paths.push_back(path);
  }
  return result;
}

}  // namespace kgmem
