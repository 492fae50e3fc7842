#pragma once

// Experiment configuration and orchestration: built-in priors, task sets,
// batch evaluation, the stop-fraction sweep and their CSV outputs.
//
// Seeding: instance i draws its reference from derive_seed(seed, kImage, i),
// its mask for mask spec j from derive_seed(seed, kMask, j << 32 | i) and its
// chain noise from derive_seed(seed, kChain, i). Every method sees the same
// reference, mask and chain seed, so per-instance comparisons are paired.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "gradpaint/denoisers.hpp"
#include "gradpaint/masks.hpp"
#include "gradpaint/samplers.hpp"

namespace gradpaint {

/// "smooth4": horizontal ramp, vertical ramp, half-plane step, centered blob.
/// "smooth2": horizontal ramp and half-plane step.
/// "features": every on/off pattern of nine smooth bumps on a 3x3 grid (512
/// equally likely components).
GmmPrior make_named_prior(const std::string& name, std::size_t height, std::size_t width, std::size_t channels,
                          double std);
std::vector<std::string> named_priors();

/// Baselines evaluated next to the samplers: "greyfill" sets masked pixels to
/// 0, "copy" returns the reference itself.
bool is_baseline(const std::string& method);

struct TaskSpec {
  std::string prior = "smooth4";  // built-in name; ignored when prior_file is set
  std::string prior_file;         // GMM JSON file
  std::string model_dir;          // trained conv denoiser; empty = analytic
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t channels = 1;
  double prior_std = 0.1;
};

struct ExperimentConfig {
  int version = 1;
  TaskSpec task;
  std::vector<MaskSpec> masks{MaskSpec{}};
  std::vector<std::string> methods{"combine-image", "combine-noisy", "gradpaint"};
  GuidanceConfig guidance;
  std::size_t runs = 200;
  std::string output_dir = "out";
  std::uint64_t seed = 0;
  std::size_t threads = 0;  // 0 = all cores; results do not depend on it

  /// Checks methods, masks and that referenced files exist.
  void validate() const;
};

/// Strict JSON parsing: unknown keys and a missing or wrong version are errors.
ExperimentConfig parse_config(const std::string& text);
std::string serialize_config(const ExperimentConfig& cfg);
ExperimentConfig load_config(const std::filesystem::path& path);

/// The prior, denoiser and schedule an experiment runs against.
struct Experiment {
  explicit Experiment(const ExperimentConfig& cfg);
  GmmPrior prior;
  std::unique_ptr<Denoiser> denoiser;
  NoiseSchedule schedule;
};

struct Task {
  std::size_t index = 0;
  std::string mask_kind;
  Tensor reference;
  Mask mask{1, 1};
  std::uint64_t chain_seed = 0;
};

std::vector<Task> make_tasks(const ExperimentConfig& cfg, const GmmPrior& prior);

struct EvalRecord {
  std::string method;
  std::string mask_kind;
  std::size_t index = 0;
  std::uint64_t seed = 0;
  double nll_prior = 0.0;
  double seam_energy = 0.0;
  double masked_rmse = 0.0;
  double wall_clock_s = 0.0;
};

struct MethodRun {
  Tensor image;
  double seconds = 0.0;
};

/// Runs one method (sampler or baseline) on one task.
MethodRun run_method(const std::string& method, const Task& task, const Experiment& exp, const GuidanceConfig& g);
EvalRecord evaluate(const std::string& method, const Task& task, const Experiment& exp, const GuidanceConfig& g);

/// Rows ordered by task (mask spec, instance) then by method.
std::vector<EvalRecord> run_eval(const ExperimentConfig& cfg, const Experiment& exp);

/// Metrics only, so the file is identical across re-runs.
std::string eval_csv(const std::vector<EvalRecord>& rows);
std::string timing_csv(const std::vector<EvalRecord>& rows);
/// Mean metrics per (method, mask kind), in first-appearance order.
std::string summary_csv(const std::vector<EvalRecord>& rows);

struct SweepRow {
  double fraction = 0.0;
  std::size_t runs = 0;
  double nll_prior = 0.0;
  double seam_energy = 0.0;
  double masked_rmse = 0.0;
  double wall_clock_s = 0.0;
};

/// Full-guidance chains with grad_stop_fraction set to each value in turn.
std::vector<SweepRow> timing_sweep(const std::vector<double>& fractions, const std::vector<Task>& tasks,
                                   const Experiment& exp, const GuidanceConfig& g, std::size_t threads);

std::string sweep_csv(const std::vector<SweepRow>& rows);
std::string sweep_timing_csv(const std::vector<SweepRow>& rows);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace gradpaint
