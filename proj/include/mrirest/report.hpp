#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mrirest/metrics.hpp"

namespace mrirest::report {

struct NamedReport {
  std::string method;
  metrics::MetricsReport report;
};

enum class Rank { none, best, second };

struct MetricInfo {
  const char* name;
  bool higher_is_better;
};

// psnr, ssim_slice, ssim_vol, nmse, rmse in CSV column order.
const std::vector<MetricInfo>& metric_columns();
double metric_value(const metrics::VolumeMetrics& m, std::size_t column);

// Ranks one value per method. Ties share a rank; NaN is never ranked.
std::vector<Rank> rank_values(const std::vector<double>& values, bool higher_is_better);

// Throws ComparisonError unless there are >= 2 runs with the same volume ids in
// the same order.
void check_comparable(const std::vector<NamedReport>& runs);

// Rows: volume,method,<metrics>,delta_<metrics>. Deltas are relative to the first run.
void write_merged_csv(const std::filesystem::path& path, const std::vector<NamedReport>& runs);

// Grouped bar chart of the AVERAGE rows: one group per method, one bar per
// metric. Bars are scaled per metric; labels carry the raw value, bold for the
// best method and underlined for the runner-up.
std::string render_svg(const std::vector<NamedReport>& runs, const std::string& title = "Method comparison");

// Fixed-width text table of the AVERAGE rows with best/second markers (* and +).
std::string render_table(const std::vector<NamedReport>& runs);

}  // namespace mrirest::report
