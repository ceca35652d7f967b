#include "mrirest/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <vector>

namespace mrirest::metrics {
namespace {

void require_same(const Tensor<double>& a, const Tensor<double>& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

double ssim_from_moments(double mx, double my, double vx, double vy, double cxy, double c1, double c2) {
  return ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
}

// Sums over every fully contained k x k window, computed separably with
// direct (non-cumulative) sums to avoid cancellation.
std::vector<double> window_sums(const double* v, std::size_t h, std::size_t w, std::size_t k) {
  const std::size_t ow = w - k + 1, oh = h - k + 1;
  std::vector<double> rows(h * ow);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::size_t d = 0; d < k; ++d) acc += v[y * w + x + d];
      rows[y * ow + x] = acc;
    }
  }
  std::vector<double> out(oh * ow);
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::size_t d = 0; d < k; ++d) acc += rows[(y + d) * ow + x];
      out[y * ow + x] = acc;
    }
  }
  return out;
}

// Sum of per-window SSIM values over one [H,W] plane, plus the window count.
std::pair<double, std::size_t> planar_ssim_sum(const double* a, const double* b, std::size_t h, std::size_t w,
                                               double data_range, const SsimOptions& o) {
  const std::size_t k = static_cast<std::size_t>(o.window);
  std::vector<double> aa(h * w), bb(h * w), ab(h * w);
  for (std::size_t i = 0; i < h * w; ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  const auto sa = window_sums(a, h, w, k), sb = window_sums(b, h, w, k);
  const auto saa = window_sums(aa.data(), h, w, k), sbb = window_sums(bb.data(), h, w, k);
  const auto sab = window_sums(ab.data(), h, w, k);
  const double n = static_cast<double>(k * k);
  const double cov_norm = n / (n - 1.0);
  const double c1 = (o.k1 * data_range) * (o.k1 * data_range);
  const double c2 = (o.k2 * data_range) * (o.k2 * data_range);
  double total = 0.0;
  for (std::size_t i = 0; i < sa.size(); ++i) {
    const double mx = sa[i] / n, my = sb[i] / n;
    const double vx = cov_norm * (saa[i] / n - mx * mx);
    const double vy = cov_norm * (sbb[i] / n - my * my);
    const double cxy = cov_norm * (sab[i] / n - mx * my);
    total += ssim_from_moments(mx, my, vx, vy, cxy, c1, c2);
  }
  const std::size_t count = sa.size();
  return {total, count};
}

void validate_ssim(std::size_t h, std::size_t w, double data_range, const SsimOptions& o) {
  if (!(data_range > 0.0)) throw ParameterError("SSIM data_range must be positive");
  if (o.window < 2) throw ParameterError("SSIM window must be >= 2");
  const std::size_t k = static_cast<std::size_t>(o.window);
  if (h < k || w < k) {
    throw ParameterError("image " + std::to_string(h) + "x" + std::to_string(w) + " smaller than the SSIM window");
  }
}

void require_volume(const VolumePair& v) {
  require_same(v.reference, v.estimate, "volume pair");
  if (v.reference.ndim() != 3 || v.reference.dim(0) < 1) throw ShapeError("volume pair must be [S,H,W] with S >= 1");
}

std::string format_metric(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

double parse_metric(const std::string& s) {
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  return std::stod(s);
}

}  // namespace

double mse(const Tensor<double>& estimate, const Tensor<double>& reference) {
  require_same(estimate, reference, "mse");
  double acc = 0.0;
  for (std::size_t i = 0; i < estimate.size(); ++i) {
    const double d = estimate[i] - reference[i];
    acc += d * d;
  }
  return acc / static_cast<double>(estimate.size());
}

double rmse(const Tensor<double>& estimate, const Tensor<double>& reference) {
  return std::sqrt(mse(estimate, reference));
}

double psnr(const Tensor<double>& estimate, const Tensor<double>& reference, double peak) {
  if (!(peak > 0.0)) throw ParameterError("PSNR peak must be positive");
  const double m = mse(estimate, reference);
  if (m == 0.0) return kInfinitePsnr;
  return 10.0 * std::log10(peak * peak / m);
}

double nmse(const Tensor<double>& estimate, const Tensor<double>& reference) {
  require_same(estimate, reference, "nmse");
  const double ref = squared_norm(reference);
  if (ref == 0.0) throw UndefinedError("NMSE is undefined for a zero reference");
  double err = 0.0;
  for (std::size_t i = 0; i < estimate.size(); ++i) {
    const double d = estimate[i] - reference[i];
    err += d * d;
  }
  return err / ref;
}

double ssim_map(const Tensor<double>& a, const Tensor<double>& b, double data_range, const SsimOptions& opts) {
  require_same(a, b, "ssim");
  if (a.ndim() != 2) throw ShapeError("ssim_map expects [H,W] images");
  validate_ssim(a.dim(0), a.dim(1), data_range, opts);
  auto [total, count] = planar_ssim_sum(a.data(), b.data(), a.dim(0), a.dim(1), data_range, opts);
  return total / static_cast<double>(count);
}

SliceWiseSsim ssim_slice_wise(const VolumePair& v, const SsimOptions& opts) {
  require_volume(v);
  const std::size_t S = v.reference.dim(0), H = v.reference.dim(1), W = v.reference.dim(2);
  SliceWiseSsim out;
  double total = 0.0;
  std::size_t used = 0;
  for (std::size_t s = 0; s < S; ++s) {
    const double* ref = v.reference.data() + s * H * W;
    const double* est = v.estimate.data() + s * H * W;
    const double peak = *std::max_element(ref, ref + H * W);
    if (!(peak > 0.0)) {
      ++out.skipped_slices;
      continue;
    }
    validate_ssim(H, W, peak, opts);
    auto [sum, count] = planar_ssim_sum(ref, est, H, W, peak, opts);
    total += sum / static_cast<double>(count);
    ++used;
  }
  if (used == 0) throw UndefinedError("slice-wise SSIM: every slice has zero reference max");
  out.value = total / static_cast<double>(used);
  return out;
}

double ssim_volumetric(const VolumePair& v, const SsimOptions& opts, VolumeWindow window) {
  require_volume(v);
  const std::size_t S = v.reference.dim(0), H = v.reference.dim(1), W = v.reference.dim(2);
  const double peak = max_value(v.reference);
  if (!(peak > 0.0)) throw UndefinedError("volumetric SSIM is undefined for a zero-max reference volume");
  validate_ssim(H, W, peak, opts);
  if (window == VolumeWindow::planar) {
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t s = 0; s < S; ++s) {
      auto [sum, n] = planar_ssim_sum(v.reference.data() + s * H * W, v.estimate.data() + s * H * W, H, W, peak, opts);
      total += sum;
      count += n;
    }
    return total / static_cast<double>(count);
  }

  const std::size_t k = static_cast<std::size_t>(opts.window);
  if (S < k) throw ParameterError("cubic SSIM windows need at least " + std::to_string(k) + " slices");
  const double n = static_cast<double>(k * k * k);
  const double cov_norm = n / (n - 1.0);
  const double c1 = (opts.k1 * peak) * (opts.k1 * peak);
  const double c2 = (opts.k2 * peak) * (opts.k2 * peak);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t z = 0; z + k <= S; ++z) {
    for (std::size_t y = 0; y + k <= H; ++y) {
      for (std::size_t x = 0; x + k <= W; ++x) {
        double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
        for (std::size_t dz = 0; dz < k; ++dz)
          for (std::size_t dy = 0; dy < k; ++dy)
            for (std::size_t dx = 0; dx < k; ++dx) {
              const std::size_t i = ((z + dz) * H + y + dy) * W + x + dx;
              const double a = v.reference[i], b = v.estimate[i];
              sa += a;
              sb += b;
              saa += a * a;
              sbb += b * b;
              sab += a * b;
            }
        const double mx = sa / n, my = sb / n;
        total += ssim_from_moments(mx, my, cov_norm * (saa / n - mx * mx), cov_norm * (sbb / n - my * my),
                                   cov_norm * (sab / n - mx * my), c1, c2);
        ++count;
      }
    }
  }
  return total / static_cast<double>(count);
}

VolumeMetrics evaluate_volume(const VolumePair& v, const SsimOptions& opts, VolumeWindow window) {
  require_volume(v);
  VolumeMetrics m;
  m.id = v.id;
  m.psnr = psnr(v.estimate, v.reference, max_value(v.reference));
  m.nmse = nmse(v.estimate, v.reference);
  m.rmse = rmse(v.estimate, v.reference);
  const SliceWiseSsim sw = ssim_slice_wise(v, opts);
  m.ssim_slice = sw.value;
  m.skipped_slices = sw.skipped_slices;
  m.ssim_vol = ssim_volumetric(v, opts, window);
  return m;
}

MetricsReport make_report(std::vector<VolumeMetrics> volumes, VolumeWindow window) {
  MetricsReport r;
  r.window = window;
  r.volumes = std::move(volumes);
  r.average.id = "AVERAGE";
  if (r.volumes.empty()) return r;
  const double n = static_cast<double>(r.volumes.size());
  for (const auto& v : r.volumes) {
    r.average.psnr += v.psnr / n;
    r.average.ssim_slice += v.ssim_slice / n;
    r.average.ssim_vol += v.ssim_vol / n;
    r.average.nmse += v.nmse / n;
    r.average.rmse += v.rmse / n;
    r.average.skipped_slices += v.skipped_slices;
  }
  return r;
}

void write_report_csv(const std::filesystem::path& path, const MetricsReport& report) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << "volume,psnr,ssim_slice,ssim_vol,nmse,rmse\n";
  auto row = [&](const VolumeMetrics& m) {
    os << m.id << "," << format_metric(m.psnr) << "," << format_metric(m.ssim_slice) << "," << format_metric(m.ssim_vol)
       << "," << format_metric(m.nmse) << "," << format_metric(m.rmse) << "\n";
  };
  for (const auto& v : report.volumes) row(v);
  row(report.average);
  os << "# ssim_vol_window=" << (report.window == VolumeWindow::cubic ? "cubic" : "planar") << "\n";
  if (!os) throw IoError("failed writing " + path.string());
}

MetricsReport read_report_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open metrics CSV " + path.string());
  std::string line;
  if (!std::getline(is, line) || line != "volume,psnr,ssim_slice,ssim_vol,nmse,rmse") {
    throw IoError(path.string() + " is not a metrics CSV");
  }
  MetricsReport r;
  bool have_average = false;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line.rfind("# ssim_vol_window=", 0) == 0) {
      r.window = line.substr(18) == "cubic" ? VolumeWindow::cubic : VolumeWindow::planar;
      continue;
    }
    std::istringstream ls(line);
    std::vector<std::string> cells;
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() != 6) throw IoError("malformed row in " + path.string() + ": " + line);
    VolumeMetrics m;
    m.id = cells[0];
    m.psnr = parse_metric(cells[1]);
    m.ssim_slice = parse_metric(cells[2]);
    m.ssim_vol = parse_metric(cells[3]);
    m.nmse = parse_metric(cells[4]);
    m.rmse = parse_metric(cells[5]);
    if (m.id == "AVERAGE") {
      r.average = m;
      have_average = true;
    } else {
      r.volumes.push_back(m);
    }
  }
  if (!have_average) throw IoError(path.string() + " has no AVERAGE row");
  return r;
}

}  // namespace mrirest::metrics
