#include "mrirest/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "mrirest/errors.hpp"

namespace mrirest::report {

namespace {

std::string format_value(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string short_value(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
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

constexpr const char* kPalette[] = {"#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2"};

}  // namespace

const std::vector<MetricInfo>& metric_columns() {
  static const std::vector<MetricInfo> cols = {
      {"psnr", true}, {"ssim_slice", true}, {"ssim_vol", true}, {"nmse", false}, {"rmse", false}};
  return cols;
}

double metric_value(const metrics::VolumeMetrics& m, std::size_t column) {
  switch (column) {
    case 0: return m.psnr;
    case 1: return m.ssim_slice;
    case 2: return m.ssim_vol;
    case 3: return m.nmse;
    case 4: return m.rmse;
  }
  throw ParameterError("metric column out of range");
}

std::vector<Rank> rank_values(const std::vector<double>& values, bool higher_is_better) {
  std::vector<double> distinct;
  for (double v : values)
    if (!std::isnan(v)) distinct.push_back(v);
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (higher_is_better) std::reverse(distinct.begin(), distinct.end());
  std::vector<Rank> ranks(values.size(), Rank::none);
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (std::isnan(values[i])) continue;
    if (!distinct.empty() && values[i] == distinct[0]) ranks[i] = Rank::best;
    else if (distinct.size() > 1 && values[i] == distinct[1]) ranks[i] = Rank::second;
  }
  return ranks;
}

void check_comparable(const std::vector<NamedReport>& runs) {
  if (runs.size() < 2) throw ComparisonError("compare needs at least two runs");
  const auto& ref = runs.front().report.volumes;
  for (const auto& run : runs) {
    const auto& vols = run.report.volumes;
    bool same = vols.size() == ref.size();
    for (std::size_t i = 0; same && i < vols.size(); ++i) same = vols[i].id == ref[i].id;
    if (!same) {
      throw ComparisonError("volume ids of '" + run.method + "' do not match those of '" + runs.front().method + "'");
    }
  }
}

void write_merged_csv(const std::filesystem::path& path, const std::vector<NamedReport>& runs) {
  check_comparable(runs);
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  const auto& cols = metric_columns();
  os << "volume,method";
  for (const auto& c : cols) os << "," << c.name;
  for (const auto& c : cols) os << ",delta_" << c.name;
  os << "\n";

  auto emit = [&](const metrics::VolumeMetrics& m, const metrics::VolumeMetrics& ref, const std::string& method) {
    os << m.id << "," << method;
    for (std::size_t c = 0; c < cols.size(); ++c) os << "," << format_value(metric_value(m, c));
    for (std::size_t c = 0; c < cols.size(); ++c) {
      const double a = metric_value(m, c), b = metric_value(ref, c);
      // inf - inf is a zero delta when a run is compared against itself.
      os << "," << format_value(a == b ? 0.0 : a - b);
    }
    os << "\n";
  };
  const auto& ref = runs.front().report;
  for (std::size_t v = 0; v < ref.volumes.size(); ++v)
    for (const auto& run : runs) emit(run.report.volumes[v], ref.volumes[v], run.method);
  for (const auto& run : runs) emit(run.report.average, ref.average, run.method);
}

std::string render_svg(const std::vector<NamedReport>& runs, const std::string& title) {
  check_comparable(runs);
  const auto& cols = metric_columns();
  const std::size_t n_methods = runs.size(), n_metrics = cols.size();

  const double bar_w = 26, bar_gap = 4, group_gap = 36, plot_h = 220;
  const double left = 50, top = 60, bottom = 70;
  const double group_w = n_metrics * bar_w + (n_metrics - 1) * bar_gap;
  const double width = left + n_methods * group_w + (n_methods - 1) * group_gap + 40 + 130;
  const double height = top + plot_h + bottom;

  std::vector<std::vector<double>> values(n_metrics, std::vector<double>(n_methods));
  std::vector<std::vector<Rank>> ranks(n_metrics);
  std::vector<double> scale(n_metrics, 0.0);
  for (std::size_t c = 0; c < n_metrics; ++c) {
    for (std::size_t m = 0; m < n_methods; ++m) {
      values[c][m] = metric_value(runs[m].report.average, c);
      if (std::isfinite(values[c][m])) scale[c] = std::max(scale[c], std::abs(values[c][m]));
    }
    ranks[c] = rank_values(values[c], cols[c].higher_is_better);
  }

  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" viewBox=\"0 0 " << width << " " << height << "\" font-family=\"sans-serif\" font-size=\"10\">\n";
  os << "  <title>" << xml_escape(title) << "</title>\n";
  os << "  <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "  <text x=\"" << width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << xml_escape(title)
     << "</text>\n";
  os << "  <text x=\"" << width / 2 << "\" y=\"38\" text-anchor=\"middle\" fill=\"#555\">"
     << "bars scaled per metric; bold = best, underline = second best</text>\n";
  const double base_y = top + plot_h;
  os << "  <line x1=\"" << left - 10 << "\" y1=\"" << base_y << "\" x2=\"" << width - 140 << "\" y2=\"" << base_y
     << "\" stroke=\"black\"/>\n";

  for (std::size_t m = 0; m < n_methods; ++m) {
    const double gx = left + m * (group_w + group_gap);
    os << "  <g class=\"method-group\" data-method=\"" << xml_escape(runs[m].method) << "\">\n";
    for (std::size_t c = 0; c < n_metrics; ++c) {
      const double v = values[c][m];
      double frac = 0.0;
      if (std::isinf(v)) frac = v > 0 ? 1.0 : 0.0;
      else if (scale[c] > 0 && std::isfinite(v)) frac = std::abs(v) / scale[c];
      const double h = std::max(frac * (plot_h - 20), 0.0);
      const double x = gx + c * (bar_w + bar_gap);
      os << "    <rect class=\"bar\" data-metric=\"" << cols[c].name << "\" x=\"" << x << "\" y=\"" << base_y - h
         << "\" width=\"" << bar_w << "\" height=\"" << h << "\" fill=\"" << kPalette[c % 5] << "\"/>\n";
      os << "    <text x=\"" << x + bar_w / 2 << "\" y=\"" << base_y - h - 4 << "\" text-anchor=\"middle\" font-size=\"8\"";
      if (ranks[c][m] == Rank::best) os << " font-weight=\"bold\"";
      if (ranks[c][m] == Rank::second) os << " text-decoration=\"underline\"";
      os << ">" << short_value(v) << "</text>\n";
    }
    os << "    <text x=\"" << gx + group_w / 2 << "\" y=\"" << base_y + 18 << "\" text-anchor=\"middle\" font-size=\"11\">"
       << xml_escape(runs[m].method) << "</text>\n";
    os << "  </g>\n";
  }

  const double lx = width - 120;
  for (std::size_t c = 0; c < n_metrics; ++c) {
    const double ly = top + c * 18;
    os << "  <rect x=\"" << lx << "\" y=\"" << ly << "\" width=\"12\" height=\"12\" fill=\"" << kPalette[c % 5]
       << "\"/>\n";
    os << "  <text x=\"" << lx + 18 << "\" y=\"" << ly + 10 << "\">" << cols[c].name
       << (cols[c].higher_is_better ? " (higher)" : " (lower)") << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string render_table(const std::vector<NamedReport>& runs) {
  check_comparable(runs);
  const auto& cols = metric_columns();
  std::size_t name_w = 6;
  for (const auto& r : runs) name_w = std::max(name_w, r.method.size());

  std::vector<std::vector<Rank>> ranks;
  for (std::size_t c = 0; c < cols.size(); ++c) {
    std::vector<double> v;
    for (const auto& r : runs) v.push_back(metric_value(r.report.average, c));
    ranks.push_back(rank_values(v, cols[c].higher_is_better));
  }

  std::ostringstream os;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%-*s", static_cast<int>(name_w), "method");
  os << buf;
  for (const auto& c : cols) {
    std::snprintf(buf, sizeof buf, " %13s", c.name);
    os << buf;
  }
  os << "\n";
  for (std::size_t m = 0; m < runs.size(); ++m) {
    std::snprintf(buf, sizeof buf, "%-*s", static_cast<int>(name_w), runs[m].method.c_str());
    os << buf;
    for (std::size_t c = 0; c < cols.size(); ++c) {
      const char mark = ranks[c][m] == Rank::best ? '*' : ranks[c][m] == Rank::second ? '+' : ' ';
      std::snprintf(buf, sizeof buf, " %12s%c", short_value(metric_value(runs[m].report.average, c)).c_str(), mark);
      os << buf;
    }
    os << "\n";
  }
  return os.str();
}

}  // namespace mrirest::report
