#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mrirest/mri.hpp"
#include "mrirest/tensor.hpp"

namespace mrirest::sim {

enum class Task { recon, sr, denoise };

std::string to_string(Task task);
Task parse_task(const std::string& name);

struct DatasetParams {
  Task task = Task::recon;
  std::size_t n_train = 64;
  std::size_t n_val = 64;
  std::size_t n_test = 0;
  std::size_t size = 64;
  std::uint64_t seed = 0;
  int ellipses = 10;
  // recon
  int accel = 4;
  double center_frac = 0.08;
  int coils = 1;
  double noise_sigma = 0.0;
  // sr
  double keep_frac = 0.0625;
  // denoise
  double sigma0 = 0.05;
  double alpha = 3.0;
};

// Per-sample seed derived from the dataset seed, split name and index.
std::uint64_t sample_seed(std::uint64_t base, const std::string& split, std::size_t index);

// Writes <root>/<task>/<split>/<index>.mrt, .deg.mrt, .aux.mrt (plus
// .coils.mrt for multi-coil recon) and <root>/<task>/manifest.txt.
// Refuses a non-empty task directory unless `force` is set.
void generate_dataset(const std::filesystem::path& root, const DatasetParams& params, bool force);

// One (clean, degraded) pair.
//   recon:   clean [H,W,2] image, degraded [C,H,W,2] k-space, mask, coils
//   sr:      clean [H,W] magnitude, degraded [H,W] magnitude, aux = k-space block indicator
//   denoise: clean [H,W], degraded [H,W], aux = g-field
struct Sample {
  std::size_t index = 0;
  Tensor<double> clean;
  Tensor<double> degraded;
  Tensor<double> aux;
  std::optional<mri::SamplingMask> mask;
  std::optional<mri::CoilSensitivities> coils;
};

struct Manifest {
  std::map<std::string, std::string> params;
  std::map<std::string, std::vector<std::size_t>> splits;

  static Manifest read(const std::filesystem::path& path);
};

// Loads every sample of one split into memory, ordered by index.
std::vector<Sample> load_split(const std::filesystem::path& root, Task task, const std::string& split);

}  // namespace mrirest::sim
