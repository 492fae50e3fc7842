#pragma once

// Ancestral sampling and the three inpainting strategies.
//
// combine-image: each step's clean estimate is replaced by its collage with
//   the reference before the posterior step.
// combine-noisy: the unmasked part of x_{t-1} is replaced by a freshly
//   noised copy of the reference.
// gradpaint: combine-image plus a normalized gradient step on x_{t-1}, using
//   d loss(x0_hat(x_t)) / d x_t backpropagated through the denoiser.
//
// Every method returns the collage of its final state x_0 with the reference,
// so known pixels always equal the reference exactly.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "gradpaint/denoisers.hpp"
#include "gradpaint/losses.hpp"
#include "gradpaint/masks.hpp"
#include "gradpaint/schedule.hpp"

namespace gradpaint {

enum class Method { CombineImage, CombineNoisy, GradPaint, GradPaintFast };

std::string to_string(Method m);
Method parse_method(const std::string& name);

/// Gradient machinery stops after this fraction of the chain in the fast variant.
inline constexpr double kFastStopFraction = 0.5;

struct GuidanceConfig {
  double learning_rate = 0.005;
  double lambda_al = 400.0;
  double align_active_fraction = 0.45;
  double grad_stop_fraction = 1.0;
  int steps = 100;
  std::uint64_t rng_seed = 0;
  LossTarget loss_target = LossTarget::Collage;

  void validate() const;
};

struct TraceOptions {
  bool component_gradients = false;  // extra backward passes for per-term norms
  int snapshot_every = 0;            // keep the collaged clean estimate every k steps
};

struct StepRecord {
  int t = 0;
  bool guided = false;
  LossReport loss;
  double grad_norm = 0.0;
  double grad_norm_mse = 0.0;
  double grad_norm_align = 0.0;
  double update_norm = 0.0;
  double seconds = 0.0;
  std::optional<Tensor> x0_snapshot;
};

struct ChainTrace {
  std::vector<StepRecord> steps;
};

struct InpaintResult {
  Tensor image;
  ChainTrace trace;
};

/// Thrown when a chain produces a non-finite state; carries the steps so far.
class ChainAborted : public std::runtime_error {
 public:
  ChainAborted(const std::string& what, int t, ChainTrace trace)
      : std::runtime_error(what), t_(t), trace_(std::move(trace)) {}
  int step() const noexcept { return t_; }
  const ChainTrace& trace() const noexcept { return trace_; }

 private:
  int t_;
  ChainTrace trace_;
};

/// Clean estimate at step t, evaluated without tracing.
Tensor predict_x0(const Denoiser& d, const Tensor& x_t, int t, const NoiseSchedule& s);

Tensor sample_unconditional(const Denoiser& d, const NoiseSchedule& s, const Shape& shape, std::uint64_t seed);

Tensor combine_image_step(const Tensor& x_t, const Denoiser& d, const Tensor& reference, const Mask& mask, int t,
                          const NoiseSchedule& s, const Tensor& z);

/// `fresh` is the noise used to re-noise the reference to level t - 1.
Tensor combine_noisy_step(const Tensor& x_t, const Denoiser& d, const Tensor& reference, const Mask& mask, int t,
                          const NoiseSchedule& s, const Tensor& z, const Tensor& fresh);

struct GuidedStep {
  Tensor x_prev;
  Tensor x0_collage;
  StepRecord record;
};

/// One combine-image step followed by x_{t-1} -= lr * g / |g| with g the
/// loss gradient at x_t. A zero gradient leaves x_{t-1} untouched.
GuidedStep gradpaint_step(const Tensor& x_t, const Denoiser& d, const Tensor& reference, const Mask& mask, int t,
                          const NoiseSchedule& s, const Tensor& z, const GuidanceConfig& cfg, bool align_active,
                          const TraceOptions& opts = {});

/// Runs a full chain. cfg.steps must match the schedule.
InpaintResult inpaint(Method method, const Denoiser& d, const Tensor& reference, const Mask& mask,
                      const GuidanceConfig& cfg, const NoiseSchedule& s, const TraceOptions& opts = {});

/// Same, on the linear schedule with cfg.steps steps.
InpaintResult inpaint(Method method, const Denoiser& d, const Tensor& reference, const Mask& mask,
                      const GuidanceConfig& cfg, const TraceOptions& opts = {});

/// Per-step telemetry as CSV (no timing column, so output is reproducible).
std::string trace_csv(const ChainTrace& trace);

}  // namespace gradpaint
