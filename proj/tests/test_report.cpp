#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "mrirest/report.hpp"

using namespace mrirest;
using namespace mrirest::report;
using metrics::VolumeMetrics;

namespace {

NamedReport run(const std::string& name, double psnr_shift) {
  std::vector<VolumeMetrics> v{{"vol000", 30.0 + psnr_shift, 0.8, 0.81, 0.02, 0.1, 0},
                               {"vol001", 28.0 + psnr_shift, 0.7, 0.72, 0.03, 0.2, 0}};
  return {name, metrics::make_report(v)};
}

std::vector<std::string> lines(const std::filesystem::path& p) {
  std::ifstream is(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(is, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST_CASE("ranking") {
  auto r = rank_values({1.0, 3.0, 2.0}, true);
  CHECK(r == std::vector<Rank>{Rank::none, Rank::best, Rank::second});
  r = rank_values({1.0, 3.0, 2.0}, false);
  CHECK(r == std::vector<Rank>{Rank::best, Rank::none, Rank::second});
  r = rank_values({2.0, 2.0, 1.0}, true);
  CHECK(r == std::vector<Rank>{Rank::best, Rank::best, Rank::second});
  r = rank_values({std::nan(""), 1.0}, true);
  CHECK(r[0] == Rank::none);
  CHECK(r[1] == Rank::best);
  CHECK(metric_columns().size() == 5);
  CHECK_FALSE(metric_columns()[3].higher_is_better);
}

TEST_CASE("comparability") {
  CHECK_THROWS_AS(check_comparable({run("a", 0)}), ComparisonError);
  NamedReport other = run("b", 0);
  other.report.volumes[1].id = "vol007";
  CHECK_THROWS_AS(check_comparable({run("a", 0), other}), ComparisonError);
  other.report.volumes.pop_back();
  CHECK_THROWS_AS(check_comparable({run("a", 0), other}), ComparisonError);
  CHECK_NOTHROW(check_comparable({run("a", 0), run("b", 1)}));
}

TEST_CASE("merged CSV deltas") {
  const auto path = std::filesystem::temp_directory_path() / "mrirest_merged_test.csv";
  NamedReport ideal = run("ideal", 0);
  ideal.report.volumes[0].psnr = metrics::kInfinitePsnr;
  ideal.report = metrics::make_report(ideal.report.volumes);
  write_merged_csv(path, {ideal, ideal});
  auto rows = lines(path);
  CHECK(rows.at(0) ==
        "volume,method,psnr,ssim_slice,ssim_vol,nmse,rmse,delta_psnr,delta_ssim_slice,delta_ssim_vol,delta_nmse,"
        "delta_rmse");
  REQUIRE(rows.size() == 7);
  for (std::size_t i = 1; i < rows.size(); ++i) CHECK(rows[i].find(",0,0,0,0,0") != std::string::npos);
  CHECK(rows[5].rfind("AVERAGE,", 0) == 0);

  write_merged_csv(path, {run("base", 0), run("better", 1.5)});
  rows = lines(path);
  std::istringstream last(rows.back());
  std::vector<std::string> cells;
  for (std::string c; std::getline(last, c, ',');) cells.push_back(c);
  CHECK(cells.at(1) == "better");
  CHECK(std::stod(cells.at(7)) == doctest::Approx(1.5));
  std::filesystem::remove(path);
}

TEST_CASE("chart and table") {
  const std::vector<NamedReport> runs{run("naf", 0), run("lsg", 0.5), run("zf", -3)};
  const std::string svg = render_svg(runs, "demo");
  CHECK(svg.rfind("<?xml", 0) == 0);
  std::size_t groups = 0;
  for (auto p = svg.find("class=\"method-group\""); p != std::string::npos; p = svg.find("class=\"method-group\"", p + 1))
    ++groups;
  CHECK(groups == 3);
  std::size_t bars = 0;
  for (auto p = svg.find("class=\"bar\""); p != std::string::npos; p = svg.find("class=\"bar\"", p + 1)) ++bars;
  CHECK(bars == 15);
  CHECK(svg.find("data-method=\"lsg\"") != std::string::npos);
  CHECK(svg.find("font-weight=\"bold\"") != std::string::npos);
  CHECK(svg.find("underline") != std::string::npos);

  const std::string table = render_table(runs);
  CHECK(table.find("lsg") != std::string::npos);
  CHECK(table.find('*') != std::string::npos);
  CHECK(table.find('+') != std::string::npos);
}
