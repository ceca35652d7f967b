#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mrirest/autodiff.hpp"
#include "mrirest/blocks.hpp"
#include "mrirest/dataset.hpp"
#include "mrirest/metrics.hpp"
#include "mrirest/unrolled.hpp"

namespace mrirest::train {

// Adaptive-moment optimizer state.
template <typename T>
struct OptimizerState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::map<std::string, Tensor<T>> first_moment;
  std::map<std::string, Tensor<T>> second_moment;
};

// One bias-corrected update using state.lr. Throws NonFiniteGradientError
// (naming the parameter) before touching any parameter.
template <typename T>
void optimizer_step(ParameterStore<T>& params, const GradientMap<T>& grads, OptimizerState<T>& state);

// Rescales all gradients so their joint L2 norm is at most max_norm.
// Returns the norm before clipping.
template <typename T>
double clip_grad_norm(GradientMap<T>& grads, double max_norm);

// Cosine decay from lr to lr_min over total_steps.
double cosine_lr(double lr, double lr_min, long step, long total_steps);

template <typename T>
Var<T> loss_l1(const Var<T>& pred, const Var<T>& target) {
  return ad::l1_loss(pred, target);
}

struct ExperimentConfig {
  sim::Task task = sim::Task::recon;
  std::string model = "naf";  // naf | lsg
  std::size_t width = 16;
  std::vector<int> enc_blocks{1, 1};
  int middle_blocks = 1;
  std::vector<int> dec_blocks{1, 1};
  int expansion = 2;
  int large_kernel = 7;
  int small_kernel = 3;
  int groups = 8;
  bool normalize_kernels = false;
  // unrolled reconstruction
  int iterations = 8;
  double mu_init = 1.0;
  bool learn_mu = true;
  bool share_weights = false;
  // data and optimization
  std::string data_root = "data";
  std::string out_dir = "runs/experiment";
  std::size_t train_limit = 0;  // 0 = whole split
  std::size_t val_limit = 0;
  std::uint64_t seed = 0;
  int epochs = 10;
  std::size_t batch_size = 4;
  double lr = 1e-3;
  double lr_min = 1e-5;
  double grad_clip = 1.0;
  std::size_t slices_per_volume = 8;

  void validate() const;
  nn::BackboneConfig backbone() const;
  recon::UnrolledConfig unrolled() const;

  std::map<std::string, std::string> to_map() const;
  static ExperimentConfig from_map(const std::map<std::string, std::string>& kv);
  // UTF-8 "key=value" lines; '#' starts a comment.
  std::string to_text() const;
  static ExperimentConfig parse(const std::string& text);
  static ExperimentConfig load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

// Task-specific network wrapper. All predictions are magnitude images [H,W].
template <typename T>
class TaskModel {
 public:
  explicit TaskModel(ExperimentConfig cfg);

  void declare(ParameterStore<T>& store) const;
  Var<T> predict(const ParamScope<T>& scope, const sim::Sample& sample) const;
  Tensor<double> infer(const ParameterStore<T>& store, const sim::Sample& sample) const;
  const ExperimentConfig& config() const { return cfg_; }

 private:
  ExperimentConfig cfg_;
};

// Magnitude target of a sample.
Tensor<double> target_magnitude(const sim::Sample& sample);
// Model-free estimate: zero-filled reconstruction or the degraded input.
Tensor<double> baseline_estimate(const sim::Sample& sample);

// Groups consecutive slices into volumes of `slices_per_volume` and computes the report.
metrics::MetricsReport evaluate_estimates(const std::vector<sim::Sample>& samples,
                                          const std::vector<Tensor<double>>& estimates,
                                          std::size_t slices_per_volume,
                                          metrics::VolumeWindow window = metrics::VolumeWindow::planar);

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_psnr = 0.0;
  double wall_seconds = 0.0;
};

struct TrainResult {
  std::vector<EpochLog> log;
  int best_epoch = 0;
  double best_val_psnr = 0.0;
  double input_val_psnr = 0.0;  // PSNR of the model-free estimate on the same split
  bool failed = false;          // best_val_psnr < input_val_psnr
  std::filesystem::path best_checkpoint;
  std::filesystem::path last_checkpoint;
  std::filesystem::path log_csv;
};

struct TrainOptions {
  std::optional<std::filesystem::path> resume_from;  // a "last" checkpoint written by train()
  std::optional<int> stop_after_epoch;               // stop early (schedule still spans cfg.epochs)
};

TrainResult train(const ExperimentConfig& cfg, const TrainOptions& options = {});

// Inference with a saved checkpoint on one split of the checkpoint's dataset.
metrics::MetricsReport evaluate(const std::filesystem::path& checkpoint, const std::string& split,
                                std::optional<std::filesystem::path> data_root = std::nullopt);
metrics::MetricsReport evaluate_baseline(const std::filesystem::path& data_root, sim::Task task,
                                         const std::string& split, std::size_t slices_per_volume = 8);

inline constexpr int kCheckpointFormatVersion = 1;

}  // namespace mrirest::train
