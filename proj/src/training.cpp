#include "mrirest/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "mrirest/degradation.hpp"

namespace fs = std::filesystem;

namespace mrirest::train {

template <typename T>
void optimizer_step(ParameterStore<T>& params, const GradientMap<T>& grads, OptimizerState<T>& state) {
  for (const auto& [name, g] : grads) {
    if (!all_finite(g)) throw NonFiniteGradientError(name);
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (auto& [name, p] : params) {
    auto it = grads.find(name);
    if (it == grads.end()) continue;
    const Tensor<T>& g = it->second;
    auto& m = state.first_moment.try_emplace(name, p.shape()).first->second;
    auto& v = state.second_moment.try_emplace(name, p.shape()).first->second;
    if (m.shape() != p.shape() || v.shape() != p.shape() || g.shape() != p.shape()) {
      throw ShapeError("optimizer state for '" + name + "' does not match its parameter");
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      const double mi = state.beta1 * static_cast<double>(m[i]) + (1.0 - state.beta1) * gi;
      const double vi = state.beta2 * static_cast<double>(v[i]) + (1.0 - state.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double update = state.lr * (mi / bc1) / (std::sqrt(vi / bc2) + state.eps);
      p[i] = static_cast<T>(static_cast<double>(p[i]) - update);
    }
  }
}

template <typename T>
double clip_grad_norm(GradientMap<T>& grads, double max_norm) {
  if (!(max_norm > 0.0)) throw ParameterError("max_norm must be positive");
  double sq = 0.0;
  for (const auto& [_, g] : grads)
    for (T v : g.values()) sq += static_cast<double>(v) * static_cast<double>(v);
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const T scale = static_cast<T>(max_norm / norm);
    for (auto& [_, g] : grads)
      for (T& v : g.values()) v *= scale;
  }
  return norm;
}

double cosine_lr(double lr, double lr_min, long step, long total_steps) {
  if (total_steps <= 0) return lr;
  const double t = std::clamp(static_cast<double>(step) / static_cast<double>(total_steps), 0.0, 1.0);
  return lr_min + 0.5 * (lr - lr_min) * (1.0 + std::cos(std::numbers::pi * t));
}

// ---------------------------------------------------------------------------
// ExperimentConfig

namespace {

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::string fmt_list(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::vector<int> parse_list(const std::string& key, const std::string& s) {
  std::vector<int> out;
  std::istringstream is(s);
  std::string item;
  while (std::getline(is, item, ',')) {
    try {
      out.push_back(std::stoi(item));
    } catch (const std::exception&) {
      throw ParameterError("config key '" + key + "' expects a comma-separated integer list, got '" + s + "'");
    }
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "1" || s == "true") return true;
  if (s == "0" || s == "false") return false;
  throw ParameterError("config key '" + key + "' expects true/false, got '" + s + "'");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

void ExperimentConfig::validate() const {
  if (model != "naf" && model != "lsg") throw ParameterError("model must be 'naf' or 'lsg', got '" + model + "'");
  if (epochs < 0) throw ParameterError("epochs must be >= 0");
  if (batch_size == 0) throw ParameterError("batch_size must be >= 1");
  if (slices_per_volume == 0) throw ParameterError("slices_per_volume must be >= 1");
  if (!(lr > 0.0) || lr_min < 0.0) throw ParameterError("learning rates must be positive");
  if (!(grad_clip > 0.0)) throw ParameterError("grad_clip must be positive");
  if (task == sim::Task::recon) {
    unrolled().validate();
  } else {
    backbone().validate();
  }
}

nn::BackboneConfig ExperimentConfig::backbone() const {
  nn::BackboneConfig b;
  b.width = width;
  b.enc_blocks = enc_blocks;
  b.middle_blocks = middle_blocks;
  b.dec_blocks = dec_blocks;
  b.in_channels = task == sim::Task::recon ? 2 : 1;
  b.out_channels = b.in_channels;
  b.mixer = model == "lsg" ? nn::Mixer::lsconv : nn::Mixer::local_dw3;
  b.expansion = expansion;
  b.lsconv.large_kernel = large_kernel;
  b.lsconv.small_kernel = small_kernel;
  b.lsconv.groups = groups;
  b.lsconv.normalize_kernels = normalize_kernels;
  return b;
}

recon::UnrolledConfig ExperimentConfig::unrolled() const {
  recon::UnrolledConfig u;
  u.iterations = iterations;
  u.mu_init = mu_init;
  u.learn_mu = learn_mu;
  u.share_weights = share_weights;
  u.backbone = backbone();
  return u;
}

std::map<std::string, std::string> ExperimentConfig::to_map() const {
  return {
      {"task", sim::to_string(task)},
      {"model", model},
      {"width", std::to_string(width)},
      {"enc_blocks", fmt_list(enc_blocks)},
      {"middle_blocks", std::to_string(middle_blocks)},
      {"dec_blocks", fmt_list(dec_blocks)},
      {"expansion", std::to_string(expansion)},
      {"large_kernel", std::to_string(large_kernel)},
      {"small_kernel", std::to_string(small_kernel)},
      {"groups", std::to_string(groups)},
      {"normalize_kernels", normalize_kernels ? "true" : "false"},
      {"iterations", std::to_string(iterations)},
      {"mu_init", fmt_double(mu_init)},
      {"learn_mu", learn_mu ? "true" : "false"},
      {"share_weights", share_weights ? "true" : "false"},
      {"data_root", data_root},
      {"out_dir", out_dir},
      {"train_limit", std::to_string(train_limit)},
      {"val_limit", std::to_string(val_limit)},
      {"seed", std::to_string(seed)},
      {"epochs", std::to_string(epochs)},
      {"batch_size", std::to_string(batch_size)},
      {"lr", fmt_double(lr)},
      {"lr_min", fmt_double(lr_min)},
      {"grad_clip", fmt_double(grad_clip)},
      {"slices_per_volume", std::to_string(slices_per_volume)},
  };
}

ExperimentConfig ExperimentConfig::from_map(const std::map<std::string, std::string>& kv) {
  ExperimentConfig c;
  for (const auto& [k, v] : kv) {
    try {
      if (k == "task") c.task = sim::parse_task(v);
      else if (k == "model") c.model = v;
      else if (k == "width") c.width = std::stoul(v);
      else if (k == "enc_blocks") c.enc_blocks = parse_list(k, v);
      else if (k == "middle_blocks") c.middle_blocks = std::stoi(v);
      else if (k == "dec_blocks") c.dec_blocks = parse_list(k, v);
      else if (k == "expansion") c.expansion = std::stoi(v);
      else if (k == "large_kernel") c.large_kernel = std::stoi(v);
      else if (k == "small_kernel") c.small_kernel = std::stoi(v);
      else if (k == "groups") c.groups = std::stoi(v);
      else if (k == "normalize_kernels") c.normalize_kernels = parse_bool(k, v);
      else if (k == "iterations") c.iterations = std::stoi(v);
      else if (k == "mu_init") c.mu_init = std::stod(v);
      else if (k == "learn_mu") c.learn_mu = parse_bool(k, v);
      else if (k == "share_weights") c.share_weights = parse_bool(k, v);
      else if (k == "data_root") c.data_root = v;
      else if (k == "out_dir") c.out_dir = v;
      else if (k == "train_limit") c.train_limit = std::stoul(v);
      else if (k == "val_limit") c.val_limit = std::stoul(v);
      else if (k == "seed") c.seed = std::stoull(v);
      else if (k == "epochs") c.epochs = std::stoi(v);
      else if (k == "batch_size") c.batch_size = std::stoul(v);
      else if (k == "lr") c.lr = std::stod(v);
      else if (k == "lr_min") c.lr_min = std::stod(v);
      else if (k == "grad_clip") c.grad_clip = std::stod(v);
      else if (k == "slices_per_volume") c.slices_per_volume = std::stoul(v);
      else throw ParameterError("unknown config key '" + k + "'");
    } catch (const std::logic_error& e) {
      if (dynamic_cast<const ParameterError*>(&e)) throw;
      throw ParameterError("invalid value '" + v + "' for config key '" + k + "'");
    }
  }
  return c;
}

std::string ExperimentConfig::to_text() const {
  std::string s;
  for (const auto& [k, v] : to_map()) s += k + "=" + v + "\n";
  return s;
}

ExperimentConfig ExperimentConfig::parse(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParameterError("config line " + std::to_string(lineno) + " is not key=value");
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return from_map(kv);
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config " + path.string());
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse(buf.str());
}

void ExperimentConfig::save(const fs::path& path) const {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write config " + path.string());
  os << to_text();
}

// ---------------------------------------------------------------------------
// TaskModel

template <typename T>
TaskModel<T>::TaskModel(ExperimentConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
}

template <typename T>
void TaskModel<T>::declare(ParameterStore<T>& store) const {
  nn::Rng rng(cfg_.seed);
  if (cfg_.task == sim::Task::recon) {
    recon::declare_unrolled(store, cfg_.unrolled(), rng);
  } else {
    nn::declare_backbone(store, "backbone.", cfg_.backbone(), rng, true);
  }
}

template <typename T>
Var<T> TaskModel<T>::predict(const ParamScope<T>& scope, const sim::Sample& sample) const {
  Tape<T>& tape = scope.tape();
  if (cfg_.task == sim::Task::recon) {
    if (!sample.mask || !sample.coils) throw ContractError("recon sample lacks mask or coil maps");
    Var<T> k = tape.constant(sample.degraded.template cast<T>());
    auto out = recon::unroll_forward(k, *sample.mask, *sample.coils, cfg_.unrolled(), scope);
    return ad::complex_abs(out.image);
  }
  const std::size_t H = sample.degraded.dim(0), W = sample.degraded.dim(1);
  Var<T> x = tape.constant(sample.degraded.template cast<T>().reshaped(Shape{1, 1, H, W}));
  Var<T> y = nn::backbone_forward(x, cfg_.backbone(), scope.sub("backbone"), true);
  return ad::reshape(y, Shape{H, W});
}

template <typename T>
Tensor<double> TaskModel<T>::infer(const ParameterStore<T>& store, const sim::Sample& sample) const {
  Tape<T> tape;
  ParamScope<T> scope(tape, store);
  return predict(scope, sample).value().template cast<double>();
}

Tensor<double> target_magnitude(const sim::Sample& sample) {
  return sample.clean.ndim() == 3 ? sim::magnitude(sample.clean) : sample.clean;
}

Tensor<double> baseline_estimate(const sim::Sample& sample) {
  if (sample.coils) return sim::magnitude(sim::zero_filled(sample.degraded, *sample.coils));
  return sample.degraded;
}

metrics::MetricsReport evaluate_estimates(const std::vector<sim::Sample>& samples,
                                          const std::vector<Tensor<double>>& estimates,
                                          std::size_t slices_per_volume, metrics::VolumeWindow window) {
  if (samples.size() != estimates.size()) throw ContractError("one estimate per sample required");
  if (slices_per_volume == 0) throw ParameterError("slices_per_volume must be >= 1");
  std::vector<metrics::VolumeMetrics> vols;
  for (std::size_t start = 0, v = 0; start < samples.size(); start += slices_per_volume, ++v) {
    const std::size_t count = std::min(slices_per_volume, samples.size() - start);
    const Tensor<double> first = target_magnitude(samples[start]);
    const std::size_t H = first.dim(0), W = first.dim(1);
    metrics::VolumePair pair{Tensor<double>(Shape{count, H, W}), Tensor<double>(Shape{count, H, W}), {}};
    for (std::size_t s = 0; s < count; ++s) {
      const Tensor<double> ref = target_magnitude(samples[start + s]);
      const Tensor<double>& est = estimates[start + s];
      if (ref.shape() != Shape{H, W} || est.shape() != Shape{H, W}) throw ShapeError("inconsistent slice shapes in a volume");
      std::copy(ref.values().begin(), ref.values().end(), pair.reference.data() + s * H * W);
      std::copy(est.values().begin(), est.values().end(), pair.estimate.data() + s * H * W);
    }
    char id[32];
    std::snprintf(id, sizeof id, "vol%03zu", v);
    pair.id = id;
    vols.push_back(metrics::evaluate_volume(pair, {}, window));
  }
  return metrics::make_report(std::move(vols), window);
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

constexpr const char* kNonConfigKeys[] = {"format_version", "epoch", "val_psnr", "kind", "step"};

std::map<std::string, std::string> checkpoint_header(const ExperimentConfig& cfg, int epoch, double val_psnr) {
  auto h = cfg.to_map();
  h["format_version"] = std::to_string(kCheckpointFormatVersion);
  h["kind"] = "model";
  h["epoch"] = std::to_string(epoch);
  h["val_psnr"] = fmt_double(val_psnr);
  return h;
}

ExperimentConfig config_from_header(std::map<std::string, std::string> header) {
  for (const char* k : kNonConfigKeys) header.erase(k);
  return ExperimentConfig::from_map(header);
}

template <typename T>
void save_optimizer(const fs::path& path, const OptimizerState<T>& st) {
  ParameterStore<double> tensors;
  for (const auto& [name, t] : st.first_moment) tensors.add("m/" + name, t.template cast<double>());
  for (const auto& [name, t] : st.second_moment) tensors.add("v/" + name, t.template cast<double>());
  nn::save_checkpoint(path, {{"kind", "optimizer"}, {"step", std::to_string(st.step)}}, tensors);
}

template <typename T>
void load_optimizer(const fs::path& path, OptimizerState<T>& st) {
  nn::Checkpoint ck = nn::load_checkpoint(path);
  st.step = std::stol(ck.header.at("step"));
  st.first_moment.clear();
  st.second_moment.clear();
  for (const auto& [name, t] : ck.params) {
    auto& dst = name.rfind("m/", 0) == 0 ? st.first_moment : st.second_moment;
    dst.emplace(name.substr(2), t.template cast<T>());
  }
}

template <typename T>
ParameterStore<T> load_compatible(const nn::Checkpoint& ck, const TaskModel<T>& model, const fs::path& path) {
  ParameterStore<T> fresh;
  model.declare(fresh);
  if (fresh.size() != ck.params.size()) {
    throw VersionError(path.string() + ": checkpoint has " + std::to_string(ck.params.size()) +
                       " parameters, configuration expects " + std::to_string(fresh.size()));
  }
  ParameterStore<T> out;
  for (const auto& [name, t] : fresh) {
    if (!ck.params.contains(name) || ck.params.get(name).shape() != t.shape()) {
      throw VersionError(path.string() + ": parameter '" + name + "' missing or of a different shape");
    }
    out.add(name, ck.params.get(name).template cast<T>());
  }
  return out;
}

void write_log_csv(const fs::path& path, const std::vector<EpochLog>& log) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << "epoch,train_loss,val_psnr,wall_seconds\n";
  for (const auto& e : log) {
    os << e.epoch << "," << fmt_double(e.train_loss) << "," << fmt_double(e.val_psnr) << "," << e.wall_seconds << "\n";
  }
}

std::vector<EpochLog> read_log_csv(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read training log " + path.string());
  std::vector<EpochLog> log;
  std::string line;
  std::getline(is, line);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    EpochLog e;
    char c1, c2, c3;
    std::istringstream ls(line);
    if (!(ls >> e.epoch >> c1 >> e.train_loss >> c2 >> e.val_psnr >> c3 >> e.wall_seconds)) {
      throw IoError("malformed training log line in " + path.string());
    }
    log.push_back(e);
  }
  return log;
}

std::vector<sim::Sample> load_limited(const ExperimentConfig& cfg, const std::string& split, std::size_t limit) {
  auto samples = sim::load_split(cfg.data_root, cfg.task, split);
  if (limit > 0 && samples.size() > limit) samples.resize(limit);
  return samples;
}

template <typename T>
double validation_psnr(const TaskModel<T>& model, const ParameterStore<T>& params, const std::vector<sim::Sample>& val,
                       std::size_t spv) {
  if (val.empty()) return 0.0;
  std::vector<Tensor<double>> est;
  est.reserve(val.size());
  for (const auto& s : val) est.push_back(model.infer(params, s));
  return evaluate_estimates(val, est, spv).average.psnr;
}

std::uint64_t epoch_seed(std::uint64_t seed, int epoch) {
  return sim::sample_seed(seed, "epoch", static_cast<std::size_t>(epoch));
}

}  // namespace

TrainResult train(const ExperimentConfig& cfg, const TrainOptions& options) {
  using T = float;
  cfg.validate();
  const fs::path out_dir = cfg.out_dir;
  fs::create_directories(out_dir);
  cfg.save(out_dir / "config.txt");

  const auto train_set = load_limited(cfg, "train", cfg.train_limit);
  const auto val_set = load_limited(cfg, "val", cfg.val_limit);
  if (train_set.empty() && cfg.epochs > 0) throw IoError("training split under " + cfg.data_root + " is empty");

  TaskModel<T> model(cfg);
  ParameterStore<T> params;
  OptimizerState<T> opt;
  opt.lr = cfg.lr;

  TrainResult result;
  result.best_checkpoint = out_dir / "best.ckpt";
  result.last_checkpoint = out_dir / "last.ckpt";
  result.log_csv = out_dir / "train_log.csv";
  result.best_val_psnr = -std::numeric_limits<double>::infinity();
  {
    std::vector<Tensor<double>> base;
    for (const auto& s : val_set) base.push_back(baseline_estimate(s));
    result.input_val_psnr = val_set.empty() ? 0.0 : evaluate_estimates(val_set, base, cfg.slices_per_volume).average.psnr;
  }

  int first_epoch = 1;
  if (options.resume_from) {
    const nn::Checkpoint ck = nn::load_checkpoint(*options.resume_from);
    params = load_compatible(ck, model, *options.resume_from);
    load_optimizer(fs::path(options.resume_from->string() + ".opt"), opt);
    first_epoch = std::stoi(ck.header.at("epoch")) + 1;
    result.log = read_log_csv(result.log_csv);
    result.log.resize(std::min<std::size_t>(result.log.size(), static_cast<std::size_t>(first_epoch - 1)));
    for (const auto& e : result.log) {
      if (e.val_psnr > result.best_val_psnr) {
        result.best_val_psnr = e.val_psnr;
        result.best_epoch = e.epoch;
      }
    }
  } else {
    model.declare(params);
  }

  const std::size_t n = train_set.size();
  const long steps_per_epoch = static_cast<long>((n + cfg.batch_size - 1) / cfg.batch_size);
  const long total_steps = steps_per_epoch * cfg.epochs;
  const int last_epoch = std::min(cfg.epochs, options.stop_after_epoch.value_or(cfg.epochs));
  const auto t0 = std::chrono::steady_clock::now();

  for (int epoch = first_epoch; epoch <= last_epoch; ++epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 shuffle_rng(epoch_seed(cfg.seed, epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0.0;
    long batches = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t count = std::min(cfg.batch_size, n - start);
      Tape<T> tape;
      ParamScope<T> scope(tape, params);
      std::optional<Var<T>> total;
      for (std::size_t b = 0; b < count; ++b) {
        const sim::Sample& s = train_set[order[start + b]];
        Var<T> pred = model.predict(scope, s);
        Var<T> target = tape.constant(target_magnitude(s).cast<T>());
        Var<T> l = loss_l1(pred, target);
        total = total ? ad::add(*total, l) : l;
      }
      Var<T> loss = ad::scale(*total, T{1} / static_cast<T>(count));
      tape.backward(loss);
      GradientMap<T> grads = tape.gradients(params);
      clip_grad_norm(grads, cfg.grad_clip);
      opt.lr = cosine_lr(cfg.lr, cfg.lr_min, opt.step, total_steps);
      optimizer_step(params, grads, opt);
      loss_sum += static_cast<double>(loss.value()[0]);
      ++batches;
    }

    EpochLog entry;
    entry.epoch = epoch;
    entry.train_loss = batches ? loss_sum / static_cast<double>(batches) : 0.0;
    entry.val_psnr = validation_psnr(model, params, val_set, cfg.slices_per_volume);
    entry.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.log.push_back(entry);

    const ParameterStore<double> snapshot = params.cast<double>();
    nn::save_checkpoint(result.last_checkpoint, checkpoint_header(cfg, epoch, entry.val_psnr), snapshot);
    save_optimizer(fs::path(result.last_checkpoint.string() + ".opt"), opt);
    if (entry.val_psnr > result.best_val_psnr) {
      result.best_val_psnr = entry.val_psnr;
      result.best_epoch = epoch;
      nn::save_checkpoint(result.best_checkpoint, checkpoint_header(cfg, epoch, entry.val_psnr), snapshot);
    }
    write_log_csv(result.log_csv, result.log);
  }
  if (!fs::exists(result.best_checkpoint)) {
    nn::save_checkpoint(result.best_checkpoint, checkpoint_header(cfg, 0, result.input_val_psnr), params.cast<double>());
    result.best_val_psnr = validation_psnr(model, params, val_set, cfg.slices_per_volume);
  }
  result.failed = !val_set.empty() && result.best_val_psnr < result.input_val_psnr;
  return result;
}

metrics::MetricsReport evaluate(const fs::path& checkpoint, const std::string& split,
                                std::optional<fs::path> data_root) {
  const nn::Checkpoint ck = nn::load_checkpoint(checkpoint);
  auto version = ck.header.find("format_version");
  if (version == ck.header.end() || version->second != std::to_string(kCheckpointFormatVersion)) {
    throw VersionError(checkpoint.string() + ": unsupported checkpoint format version");
  }
  ExperimentConfig cfg = config_from_header(ck.header);
  if (data_root) cfg.data_root = data_root->string();
  TaskModel<float> model(cfg);
  const ParameterStore<float> params = load_compatible(ck, model, checkpoint);
  const auto samples = sim::load_split(cfg.data_root, cfg.task, split);
  if (samples.empty()) throw IoError("split '" + split + "' under " + cfg.data_root + " is empty");
  std::vector<Tensor<double>> est;
  for (const auto& s : samples) est.push_back(model.infer(params, s));
  return evaluate_estimates(samples, est, cfg.slices_per_volume);
}

metrics::MetricsReport evaluate_baseline(const fs::path& data_root, sim::Task task, const std::string& split,
                                         std::size_t slices_per_volume) {
  const auto samples = sim::load_split(data_root, task, split);
  if (samples.empty()) throw IoError("split '" + split + "' under " + data_root.string() + " is empty");
  std::vector<Tensor<double>> est;
  for (const auto& s : samples) est.push_back(baseline_estimate(s));
  return evaluate_estimates(samples, est, slices_per_volume);
}

template void optimizer_step<float>(ParameterStore<float>&, const GradientMap<float>&, OptimizerState<float>&);
template void optimizer_step<double>(ParameterStore<double>&, const GradientMap<double>&, OptimizerState<double>&);
template double clip_grad_norm<float>(GradientMap<float>&, double);
template double clip_grad_norm<double>(GradientMap<double>&, double);
template class TaskModel<float>;
template class TaskModel<double>;

}  // namespace mrirest::train
