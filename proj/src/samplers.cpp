#include "gradpaint/samplers.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include "gradpaint/rng.hpp"

namespace gradpaint {

std::string to_string(Method m) {
  switch (m) {
    case Method::CombineImage: return "combine-image";
    case Method::CombineNoisy: return "combine-noisy";
    case Method::GradPaint: return "gradpaint";
    case Method::GradPaintFast: return "gradpaint-fast";
  }
  return "?";
}

Method parse_method(const std::string& name) {
  for (auto m : {Method::CombineImage, Method::CombineNoisy, Method::GradPaint, Method::GradPaintFast}) {
    if (to_string(m) == name) return m;
  }
  throw std::invalid_argument("unknown method '" + name + "'");
}

void GuidanceConfig::validate() const {
  const auto fraction = [](double v, const char* name) {
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument(std::string("GuidanceConfig: ") + name + " must lie in [0, 1]");
  };
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw std::invalid_argument("GuidanceConfig: learning_rate must be finite and non-negative");
  }
  if (!(lambda_al >= 0.0) || !std::isfinite(lambda_al)) {
    throw std::invalid_argument("GuidanceConfig: lambda_al must be finite and non-negative");
  }
  fraction(align_active_fraction, "align_active_fraction");
  fraction(grad_stop_fraction, "grad_stop_fraction");
  if (steps < 2) throw std::invalid_argument("GuidanceConfig: steps must be at least 2");
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

Tensor posterior(const Tensor& x_t, const Tensor& x0, int t, const NoiseSchedule& s, const Tensor& z) {
  ad::Tape tape(false);
  return ddpm_posterior_step(tape.constant(x_t), tape.constant(x0), t, s, z).value();
}

Tensor step_noise(int t, const Shape& shape, Rng& rng) {
  return t > 1 ? normal_tensor(shape, rng) : Tensor(shape);
}

void check_inputs(const Tensor& reference, const Mask& mask) {
  const Shape& s = reference.shape();
  if (s.size() != 3 || s[0] != mask.height() || s[1] != mask.width()) {
    throw std::invalid_argument("inpaint: reference " + shape_str(s) + " does not match mask " +
                                shape_str({mask.height(), mask.width()}));
  }
  if (!reference.all_finite()) throw std::invalid_argument("inpaint: reference has non-finite pixels");
}

[[noreturn]] void abort_chain(int t, const std::string& why, const LossReport* loss) {
  std::ostringstream os;
  os << "chain aborted at step t=" << t << ": " << why;
  if (loss) os << " (mse=" << loss->mse << ", align=" << loss->align << ", total=" << loss->total << ")";
  throw ChainAborted(os.str(), t, {});
}

}  // namespace

Tensor predict_x0(const Denoiser& d, const Tensor& x_t, int t, const NoiseSchedule& s) {
  ad::Tape tape(false);
  const ad::Var x = tape.constant(x_t);
  return estimate_x0(x, d.predict_eps(x, t, s), t, s).value();
}

Tensor sample_unconditional(const Denoiser& d, const NoiseSchedule& s, const Shape& shape, std::uint64_t seed) {
  Rng rng(derive_seed(seed, stream::kChain, 0));
  Tensor x = normal_tensor(shape, rng);
  for (int t = s.steps(); t >= 1; --t) {
    const Tensor x0 = predict_x0(d, x, t, s);
    const Tensor z = step_noise(t, shape, rng);
    x = posterior(x, x0, t, s, z);
    if (!x.all_finite()) abort_chain(t, "non-finite state", nullptr);
  }
  return x;
}

Tensor combine_image_step(const Tensor& x_t, const Denoiser& d, const Tensor& reference, const Mask& mask, int t,
                          const NoiseSchedule& s, const Tensor& z) {
  const Tensor x0 = collage(predict_x0(d, x_t, t, s), reference, mask);
  return posterior(x_t, x0, t, s, z);
}

Tensor combine_noisy_step(const Tensor& x_t, const Denoiser& d, const Tensor& reference, const Mask& mask, int t,
                          const NoiseSchedule& s, const Tensor& z, const Tensor& fresh) {
  const Tensor x_prev = posterior(x_t, predict_x0(d, x_t, t, s), t, s, z);
  const Tensor known = forward_mix(reference, fresh, t - 1, s);
  return collage(x_prev, known, mask);
}

GuidedStep gradpaint_step(const Tensor& x_t, const Denoiser& d, const Tensor& reference, const Mask& mask, int t,
                          const NoiseSchedule& s, const Tensor& z, const GuidanceConfig& cfg, bool align_active,
                          const TraceOptions& opts) {
  ad::Tape tape;
  const ad::Var x = tape.leaf(x_t);
  const ad::Var x0 = estimate_x0(x, d.predict_eps(x, t, s), t, s);
  const TracedLoss loss = total_loss(x0, reference, mask, cfg.lambda_al, align_active, cfg.loss_target);

  GuidedStep out;
  out.record.t = t;
  out.record.guided = true;
  out.record.loss = loss.report;
  if (!std::isfinite(loss.report.total)) abort_chain(t, "non-finite loss", &loss.report);

  const Tensor grad = ad::backward(loss.total)[x];
  const double norm = l2_norm(grad);
  if (!std::isfinite(norm)) abort_chain(t, "non-finite gradient", &loss.report);
  out.record.grad_norm = norm;
  if (opts.component_gradients) {
    out.record.grad_norm_mse = l2_norm(ad::backward(loss.mse)[x]);
    if (loss.align.valid()) out.record.grad_norm_align = l2_norm(ad::backward(loss.align)[x]);
  }

  out.x0_collage = collage(x0.value(), reference, mask);
  out.x_prev = posterior(x_t, out.x0_collage, t, s, z);
  if (norm > 0.0 && cfg.learning_rate > 0.0) {
    const double step = cfg.learning_rate / norm;
    double moved = 0.0;
    for (std::size_t i = 0; i < grad.size(); ++i) {
      const double before = out.x_prev[i];
      out.x_prev[i] -= step * grad[i];
      moved += (out.x_prev[i] - before) * (out.x_prev[i] - before);
    }
    out.record.update_norm = std::sqrt(moved);
  }
  return out;
}

InpaintResult inpaint(Method method, const Denoiser& d, const Tensor& reference, const Mask& mask,
                      const GuidanceConfig& cfg, const NoiseSchedule& s, const TraceOptions& opts) {
  cfg.validate();
  check_inputs(reference, mask);
  if (cfg.steps != s.steps()) {
    throw std::invalid_argument("inpaint: config has " + std::to_string(cfg.steps) + " steps, schedule has " +
                                std::to_string(s.steps()));
  }
  const bool guided = method == Method::GradPaint || method == Method::GradPaintFast;
  const double stop = method == Method::GradPaintFast ? kFastStopFraction : cfg.grad_stop_fraction;
  const int total = s.steps();
  const Shape& shape = reference.shape();

  Rng rng(derive_seed(cfg.rng_seed, stream::kChain, 0));
  Tensor x = normal_tensor(shape, rng);
  Tensor x0c;
  InpaintResult result;
  auto& steps = result.trace.steps;
  steps.reserve(static_cast<std::size_t>(total));

  try {
    for (int t = total; t >= 1; --t) {
      const auto start = Clock::now();
      const double progress = static_cast<double>(total - t) / total;
      const Tensor z = step_noise(t, shape, rng);
      StepRecord rec;
      rec.t = t;
      if (guided && progress < stop) {
        GuidedStep g = gradpaint_step(x, d, reference, mask, t, s, z, cfg, progress < cfg.align_active_fraction, opts);
        x = std::move(g.x_prev);
        x0c = std::move(g.x0_collage);
        rec = std::move(g.record);
      } else if (method == Method::CombineNoisy) {
        const Tensor fresh = normal_tensor(shape, rng);
        const Tensor x0 = predict_x0(d, x, t, s);
        x0c = collage(x0, reference, mask);
        x = collage(posterior(x, x0, t, s, z), forward_mix(reference, fresh, t - 1, s), mask);
      } else {
        x0c = collage(predict_x0(d, x, t, s), reference, mask);
        x = posterior(x, x0c, t, s, z);
      }
      if (!x.all_finite()) abort_chain(t, "non-finite state", rec.guided ? &rec.loss : nullptr);
      if (opts.snapshot_every > 0 && (total - t) % opts.snapshot_every == 0) rec.x0_snapshot = x0c;
      rec.seconds = seconds_since(start);
      steps.push_back(std::move(rec));
    }
  } catch (const ChainAborted& e) {
    throw ChainAborted(e.what(), e.step(), std::move(result.trace));
  }
  result.image = collage(x, reference, mask);
  return result;
}

InpaintResult inpaint(Method method, const Denoiser& d, const Tensor& reference, const Mask& mask,
                      const GuidanceConfig& cfg, const TraceOptions& opts) {
  cfg.validate();
  return inpaint(method, d, reference, mask, cfg, make_linear_schedule(cfg.steps), opts);
}

std::string trace_csv(const ChainTrace& trace) {
  std::ostringstream os;
  os.precision(17);
  os << "t,guided,align_active,mse,align,total,lambda_al,grad_norm,grad_norm_mse,grad_norm_align,update_norm\n";
  for (const auto& r : trace.steps) {
    os << r.t << ',' << (r.guided ? 1 : 0) << ',' << (r.loss.align_active ? 1 : 0) << ',' << r.loss.mse << ','
       << r.loss.align << ',' << r.loss.total << ',' << r.loss.lambda_al << ',' << r.grad_norm << ','
       << r.grad_norm_mse << ',' << r.grad_norm_align << ',' << r.update_norm << '\n';
  }
  return os.str();
}

}  // namespace gradpaint
