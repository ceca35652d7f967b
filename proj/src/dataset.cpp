#include "mrirest/dataset.hpp"

#include <fstream>
#include <sstream>

#include "mrirest/degradation.hpp"
#include "mrirest/mrt_io.hpp"

namespace fs = std::filesystem;

namespace mrirest::sim {
namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

constexpr const char* kSplits[] = {"train", "val", "test"};

}  // namespace

std::string to_string(Task task) {
  switch (task) {
    case Task::recon: return "recon";
    case Task::sr: return "sr";
    case Task::denoise: return "denoise";
  }
  return "unknown";
}

Task parse_task(const std::string& name) {
  if (name == "recon") return Task::recon;
  if (name == "sr") return Task::sr;
  if (name == "denoise") return Task::denoise;
  throw ParameterError("unknown task '" + name + "' (expected recon, sr or denoise)");
}

std::uint64_t sample_seed(std::uint64_t base, const std::string& split, std::size_t index) {
  std::uint64_t h = splitmix64(base);
  for (char c : split) h = splitmix64(h ^ static_cast<unsigned char>(c));
  return splitmix64(h ^ static_cast<std::uint64_t>(index));
}

void generate_dataset(const fs::path& root, const DatasetParams& p, bool force) {
  if (p.size < 16) throw ParameterError("image size must be >= 16");
  if (p.task == Task::recon) {
    if (p.accel < 1) throw ParameterError("--accel must be >= 1");
    if (!(p.center_frac > 0.0 && p.center_frac < 1.0)) throw ParameterError("--center-frac must lie in (0,1)");
    if (p.coils < 1) throw ParameterError("--coils must be >= 1");
  }
  if (p.task == Task::sr) sr_retained_block(p.size, p.size, p.keep_frac);  // validates keep_frac

  const fs::path dir = root / to_string(p.task);
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!force) throw ParameterError("output directory " + dir.string() + " is not empty (use --force)");
    fs::remove_all(dir);
  }
  fs::create_directories(dir);

  std::ofstream manifest(dir / "manifest.txt");
  if (!manifest) throw IoError("cannot write " + (dir / "manifest.txt").string());
  manifest << "# mrirest dataset manifest\n";
  manifest << "task=" << to_string(p.task) << "\n";
  manifest << "size=" << p.size << "\n";
  manifest << "seed=" << p.seed << "\n";
  manifest << "ellipses=" << p.ellipses << "\n";
  switch (p.task) {
    case Task::recon:
      manifest << "accel=" << p.accel << "\ncenter_frac=" << format_double(p.center_frac) << "\ncoils=" << p.coils
               << "\nnoise_sigma=" << format_double(p.noise_sigma) << "\n";
      break;
    case Task::sr:
      manifest << "keep_frac=" << format_double(p.keep_frac) << "\n";
      break;
    case Task::denoise:
      manifest << "sigma0=" << format_double(p.sigma0) << "\nalpha=" << format_double(p.alpha) << "\n";
      break;
  }
  manifest << "# split index seed\n";

  const std::size_t counts[] = {p.n_train, p.n_val, p.n_test};
  for (int s = 0; s < 3; ++s) {
    const std::string split = kSplits[s];
    const fs::path sdir = dir / split;
    fs::create_directories(sdir);
    for (std::size_t i = 0; i < counts[s]; ++i) {
      const std::uint64_t seed = sample_seed(p.seed, split, i);
      manifest << split << " " << i << " " << seed << "\n";
      const std::string stem = std::to_string(i);
      const Tensor<double> phantom = make_phantom({p.size, p.size, p.ellipses, seed});
      switch (p.task) {
        case Task::recon: {
          const Tensor<double> x = to_complex(phantom);
          const auto coils = p.coils == 1 ? mri::CoilSensitivities::unit(p.size, p.size)
                                          : mri::make_coil_maps(static_cast<std::size_t>(p.coils), p.size, p.size, seed + 1);
          const auto mask = mri::generate_mask(p.size, p.accel, p.center_frac, seed + 2);
          write_mrt_file(sdir / (stem + ".mrt"), x, DType::complex64);
          write_mrt_file(sdir / (stem + ".deg.mrt"), degrade_recon(x, coils, mask, p.noise_sigma, seed + 3), DType::complex64);
          write_mrt_file(sdir / (stem + ".aux.mrt"), mask.to_tensor(), DType::real32);
          if (p.coils > 1) write_mrt_file(sdir / (stem + ".coils.mrt"), coils.maps, DType::complex64);
          break;
        }
        case Task::sr: {
          write_mrt_file(sdir / (stem + ".mrt"), phantom, DType::real32);
          write_mrt_file(sdir / (stem + ".deg.mrt"), magnitude(degrade_sr(to_complex(phantom), p.keep_frac)), DType::real32);
          write_mrt_file(sdir / (stem + ".aux.mrt"), sr_kspace_mask(p.size, p.size, p.keep_frac), DType::real32);
          break;
        }
        case Task::denoise: {
          GFieldOptions opts;
          opts.sigma0 = p.sigma0;
          opts.alpha = p.alpha;
          const auto field = make_g_field(p.size, p.size, seed + 1, opts);
          write_mrt_file(sdir / (stem + ".mrt"), phantom, DType::real32);
          write_mrt_file(sdir / (stem + ".deg.mrt"), degrade_denoise(phantom, field, seed + 2), DType::real32);
          write_mrt_file(sdir / (stem + ".aux.mrt"), field.g, DType::real32);
          break;
        }
      }
    }
  }
  if (!manifest) throw IoError("failed writing " + (dir / "manifest.txt").string());
}

Manifest Manifest::read(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("missing dataset manifest " + path.string());
  Manifest m;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (auto eq = line.find('='); eq != std::string::npos) {
      m.params[line.substr(0, eq)] = line.substr(eq + 1);
      continue;
    }
    std::istringstream ls(line);
    std::string split;
    std::size_t index = 0;
    std::uint64_t seed = 0;
    if (!(ls >> split >> index >> seed)) throw IoError("malformed manifest line in " + path.string() + ": " + line);
    m.splits[split].push_back(index);
  }
  return m;
}

std::vector<Sample> load_split(const fs::path& root, Task task, const std::string& split) {
  const fs::path dir = root / to_string(task);
  const Manifest m = Manifest::read(dir / "manifest.txt");
  std::vector<Sample> out;
  auto it = m.splits.find(split);
  if (it == m.splits.end()) return out;
  const int coils = m.params.count("coils") ? std::stoi(m.params.at("coils")) : 1;
  const int accel = m.params.count("accel") ? std::stoi(m.params.at("accel")) : 1;
  const double center = m.params.count("center_frac") ? std::stod(m.params.at("center_frac")) : 0.0;
  for (std::size_t index : it->second) {
    const fs::path base = dir / split / std::to_string(index);
    Sample s;
    s.index = index;
    s.clean = read_mrt_file(base.string() + ".mrt").tensor;
    s.degraded = read_mrt_file(base.string() + ".deg.mrt").tensor;
    s.aux = read_mrt_file(base.string() + ".aux.mrt").tensor;
    if (task == Task::recon) {
      s.mask = mri::SamplingMask::from_tensor(s.aux, accel, center);
      if (coils > 1) {
        s.coils = mri::CoilSensitivities{read_mrt_file(base.string() + ".coils.mrt").tensor};
      } else {
        s.coils = mri::CoilSensitivities::unit(s.clean.dim(0), s.clean.dim(1));
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace mrirest::sim
