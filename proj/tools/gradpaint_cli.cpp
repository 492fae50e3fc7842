// Command-line front end. Exit codes: 0 success, 1 runtime failure, 2 usage.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gradpaint/denoisers.hpp"
#include "gradpaint/experiments.hpp"
#include "gradpaint/gpt1.hpp"
#include "gradpaint/image_io.hpp"
#include "gradpaint/masks.hpp"
#include "gradpaint/metrics.hpp"
#include "gradpaint/rng.hpp"
#include "gradpaint/samplers.hpp"

namespace fs = std::filesystem;
using namespace gradpaint;

namespace {

struct TaskFlags {
  TaskSpec task;
  int steps = 100;
};

void add_task_flags(CLI::App* app, TaskFlags& f) {
  app->add_option("--prior", f.task.prior, "Built-in prior: smooth4, smooth2, features")->capture_default_str();
  app->add_option("--prior-file", f.task.prior_file, "GMM prior JSON file")->check(CLI::ExistingFile);
  app->add_option("--model", f.task.model_dir, "Trained denoiser directory (default: analytic prior score)")
      ->check(CLI::ExistingDirectory);
  app->add_option("--height", f.task.height, "Image height")->capture_default_str()->check(CLI::PositiveNumber);
  app->add_option("--width", f.task.width, "Image width")->capture_default_str()->check(CLI::PositiveNumber);
  app->add_option("--channels", f.task.channels, "Channels (1 or 3)")->capture_default_str()->check(CLI::IsMember({1, 3}));
  app->add_option("--prior-std", f.task.prior_std, "Component standard deviation")->capture_default_str();
  app->add_option("--steps", f.steps, "Diffusion steps")->capture_default_str()->check(CLI::Range(2, 100000));
}

ExperimentConfig config_from(const TaskFlags& f, std::uint64_t seed) {
  ExperimentConfig cfg;
  cfg.task = f.task;
  cfg.guidance.steps = f.steps;
  cfg.seed = seed;
  cfg.validate();
  return cfg;
}

void save_image_pair(const fs::path& stem, const Tensor& image) {
  save_pnm(fs::path(stem).concat(image.shape()[2] == 1 ? ".pgm" : ".ppm"), image);
  gpt1::save(fs::path(stem).concat(".gpt1"), image);
}

std::string numbered(const std::string& prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04zu", i);
  return prefix + buf;
}

// --- sample -------------------------------------------------------------------

struct SampleArgs {
  TaskFlags task;
  std::size_t n = 1;
  std::string out = "samples";
};

int run_sample(const SampleArgs& a, std::uint64_t seed) {
  const ExperimentConfig cfg = config_from(a.task, seed);
  const Experiment exp(cfg);
  fs::create_directories(a.out);
  for (std::size_t i = 0; i < a.n; ++i) {
    const Tensor x = sample_unconditional(*exp.denoiser, exp.schedule, exp.prior.image_shape(),
                                          derive_seed(seed, stream::kChain, i));
    save_image_pair(fs::path(a.out) / numbered("sample_", i), x);
  }
  std::cout << "wrote " << a.n << " samples to " << a.out << '\n';
  return 0;
}

// --- inpaint ------------------------------------------------------------------

struct InpaintArgs {
  TaskFlags task;
  std::string method = "gradpaint";
  std::string image;
  std::string mask;
  std::string mask_kind = "thick";
  double p = 0.8;
  double lr = GuidanceConfig{}.learning_rate;
  double lambda = GuidanceConfig{}.lambda_al;
  double align_fraction = GuidanceConfig{}.align_active_fraction;
  double stop_fraction = GuidanceConfig{}.grad_stop_fraction;
  std::string loss_target = "collage";
  std::string out = "inpainted";
  std::string trace;
  int snapshot_every = 0;
  std::string snapshot_dir;
};

int run_inpaint(const InpaintArgs& a, std::uint64_t seed) {
  const ExperimentConfig cfg = config_from(a.task, seed);
  const Experiment exp(cfg);
  const Shape& shape = exp.prior.image_shape();

  Tensor reference;
  if (a.image.empty()) {
    Rng rng(derive_seed(seed, stream::kImage, 0));
    reference = exp.prior.sample(rng);
  } else {
    reference = load_pnm(a.image);
    require_same_shape(shape, reference.shape(), "input image vs task");
  }
  std::optional<Mask> mask;
  if (a.mask.empty()) {
    MaskSpec spec;
    spec.kind = parse_mask_kind(a.mask_kind);
    spec.p = a.p;
    spec.seed = derive_seed(seed, stream::kMask, 0);
    mask = generate_mask(spec, shape[0], shape[1]);
  } else {
    mask = load_mask_pgm(a.mask);
  }

  GuidanceConfig g;
  g.learning_rate = a.lr;
  g.lambda_al = a.lambda;
  g.align_active_fraction = a.align_fraction;
  g.grad_stop_fraction = a.stop_fraction;
  g.steps = a.task.steps;
  g.rng_seed = derive_seed(seed, stream::kChain, 0);
  g.loss_target = parse_loss_target(a.loss_target);
  TraceOptions opts;
  opts.component_gradients = !a.trace.empty();
  opts.snapshot_every = a.snapshot_every;

  const InpaintResult r = inpaint(parse_method(a.method), *exp.denoiser, reference, *mask, g, exp.schedule, opts);
  const fs::path stem(a.out);
  if (stem.has_parent_path()) fs::create_directories(stem.parent_path());
  save_image_pair(stem, r.image);
  if (a.image.empty()) save_image_pair(fs::path(a.out).concat(".reference"), reference);
  if (a.mask.empty()) save_mask_pgm(fs::path(a.out).concat(".mask.pgm"), *mask);
  if (!a.trace.empty()) write_text(a.trace, trace_csv(r.trace));
  if (a.snapshot_every > 0) {
    const fs::path dir = a.snapshot_dir.empty() ? fs::path(a.out).concat(".snapshots") : fs::path(a.snapshot_dir);
    fs::create_directories(dir);
    std::size_t k = 0;
    for (const auto& step : r.trace.steps) {
      if (step.x0_snapshot) save_pnm(dir / (numbered("x0_", k++) + "_t" + std::to_string(step.t) + ".pgm"), *step.x0_snapshot);
    }
  }
  std::cout << "nll_prior=" << nll_under_prior(exp.prior, r.image) << " seam_energy=" << seam_energy(r.image, *mask)
            << " masked_rmse=" << masked_rmse(r.image, reference, *mask) << '\n';
  return 0;
}

// --- make-masks ---------------------------------------------------------------

struct MaskArgs {
  std::string kind = "thick";
  double p = 0.8;
  std::size_t n = 1;
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t min_strokes = 0;
  std::size_t max_strokes = 0;
  std::size_t brush_width = 0;
  std::string out = "masks";
};

int run_make_masks(const MaskArgs& a, std::uint64_t seed) {
  MaskSpec spec;
  spec.kind = parse_mask_kind(a.kind);
  spec.p = a.p;
  spec.min_strokes = a.min_strokes;
  spec.max_strokes = a.max_strokes;
  spec.brush_width = a.brush_width;
  fs::create_directories(a.out);
  std::ostringstream csv;
  csv.precision(17);
  csv << "index,coverage\n";
  double total = 0.0;
  for (std::size_t i = 0; i < a.n; ++i) {
    spec.seed = derive_seed(seed, stream::kMask, i);
    const Mask m = generate_mask(spec, a.height, a.width);
    save_mask_pgm(fs::path(a.out) / (numbered("mask_", i) + ".pgm"), m);
    gpt1::save(fs::path(a.out) / (numbered("mask_", i) + ".gpt1"), m.tensor());
    csv << i << ',' << m.coverage() << '\n';
    total += m.coverage();
  }
  write_text(fs::path(a.out) / "coverage.csv", csv.str());
  std::cout << "mean_coverage=" << (a.n ? total / static_cast<double>(a.n) : 0.0) << '\n';
  return 0;
}

// --- train-denoiser -------------------------------------------------------------

struct TrainArgs {
  TaskFlags task;
  TrainConfig train;
  std::size_t hidden = 32;
  std::size_t validation = 256;
  std::string out = "model";
};

int run_train(const TrainArgs& a, std::uint64_t seed) {
  const ExperimentConfig cfg = config_from(a.task, seed);
  const GmmPrior prior = cfg.task.prior_file.empty()
                             ? make_named_prior(cfg.task.prior, cfg.task.height, cfg.task.width, cfg.task.channels,
                                                cfg.task.prior_std)
                             : load_gmm(cfg.task.prior_file);
  const NoiseSchedule s = make_linear_schedule(a.task.steps);
  ConvDenoiserConfig mc;
  mc.height = cfg.task.height;
  mc.width = cfg.task.width;
  mc.channels = cfg.task.channels;
  mc.hidden = a.hidden;
  TrainConfig tc = a.train;
  tc.seed = seed;
  const ImageSampler data = [&prior](Rng& rng) { return prior.sample(rng); };
  std::ostringstream log;
  log.precision(17);
  log << "step,loss\n";
  TrainResult r = train_denoiser(ConvDenoiser(mc, seed), data, s, tc, [&log](int step, double loss) {
    log << step << ',' << loss << '\n';
  });
  r.model.save(a.out);
  write_text(fs::path(a.out) / "loss.csv", log.str());
  const double val = denoising_loss(r.model, data, s, a.validation, derive_seed(seed, stream::kTraining, 99));
  std::cout << "validation_loss=" << val << " (zero predictor = 1)\n";
  return 0;
}

// --- eval / sweep / diversity -------------------------------------------------------

struct StudyArgs {
  std::string config;
  std::optional<std::size_t> runs;
  std::string out;
  std::optional<std::size_t> threads;
  std::vector<double> fractions{0.13, 0.25, 0.38, 0.5, 0.63, 0.75, 1.0};
  std::vector<double> coverages{0.1, 0.25, 0.5, 0.75};
  std::size_t samples = 500;
};

ExperimentConfig study_config(const StudyArgs& a, std::uint64_t seed, bool seed_given) {
  ExperimentConfig cfg = load_config(a.config);
  if (seed_given) cfg.seed = seed;
  if (a.runs) cfg.runs = *a.runs;
  if (!a.out.empty()) cfg.output_dir = a.out;
  if (a.threads) cfg.threads = *a.threads;
  cfg.validate();
  return cfg;
}

int run_eval_cmd(const StudyArgs& a, std::uint64_t seed, bool seed_given) {
  const ExperimentConfig cfg = study_config(a, seed, seed_given);
  const Experiment exp(cfg);
  const auto rows = run_eval(cfg, exp);
  const fs::path out(cfg.output_dir);
  write_text(out / "config.json", serialize_config(cfg));
  write_text(out / "eval.csv", eval_csv(rows));
  write_text(out / "summary.csv", summary_csv(rows));
  write_text(out / "timing.csv", timing_csv(rows));
  std::cout << summary_csv(rows);
  return 0;
}

int run_sweep_cmd(const StudyArgs& a, std::uint64_t seed, bool seed_given) {
  const ExperimentConfig cfg = study_config(a, seed, seed_given);
  const Experiment exp(cfg);
  const auto tasks = make_tasks(cfg, exp.prior);
  const auto rows = timing_sweep(a.fractions, tasks, exp, cfg.guidance, cfg.threads);
  const fs::path out(cfg.output_dir);
  write_text(out / "config.json", serialize_config(cfg));
  write_text(out / "sweep.csv", sweep_csv(rows));
  write_text(out / "sweep_timing.csv", sweep_timing_csv(rows));
  std::cout << sweep_csv(rows);
  return 0;
}

int run_diversity_cmd(const StudyArgs& a, std::uint64_t seed, bool seed_given) {
  const ExperimentConfig cfg = study_config(a, seed, seed_given);
  const Experiment exp(cfg);
  Rng rng(derive_seed(cfg.seed, stream::kImage, 0));
  const Tensor reference = exp.prior.sample(rng);
  std::vector<DiversityRow> rows;
  for (const auto& m : cfg.methods) {
    if (is_baseline(m)) continue;
    GuidanceConfig g = cfg.guidance;
    g.rng_seed = derive_seed(cfg.seed, stream::kChain, 0);
    const auto part = diversity_study(parse_method(m), *exp.denoiser, reference, a.coverages, a.samples, g,
                                      exp.schedule, cfg.threads);
    rows.insert(rows.end(), part.begin(), part.end());
  }
  const fs::path out(cfg.output_dir);
  write_text(out / "config.json", serialize_config(cfg));
  write_text(out / "diversity.csv", diversity_csv(rows));
  std::cout << diversity_csv(rows);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gradient-guided diffusion inpainting on small images"};
  app.require_subcommand(1);
  std::uint64_t seed = 0;
  auto* seed_opt = app.add_option("--seed", seed, "Global seed; fixes all randomness")->capture_default_str();

  SampleArgs sample;
  auto* sample_cmd = app.add_subcommand("sample", "Unconditional samples");
  add_task_flags(sample_cmd, sample.task);
  sample_cmd->add_option("-n,--n", sample.n, "Number of samples")->capture_default_str();
  sample_cmd->add_option("-o,--out", sample.out, "Output directory")->capture_default_str();

  InpaintArgs inp;
  auto* inpaint_cmd = app.add_subcommand("inpaint", "Inpaint one image");
  add_task_flags(inpaint_cmd, inp.task);
  inpaint_cmd->add_option("--method", inp.method, "combine-image, combine-noisy, gradpaint, gradpaint-fast")
      ->capture_default_str()
      ->check(CLI::IsMember({"combine-image", "combine-noisy", "gradpaint", "gradpaint-fast"}));
  inpaint_cmd->add_option("--image", inp.image, "Input PGM/PPM (default: drawn from the prior)")->check(CLI::ExistingFile);
  inpaint_cmd->add_option("--mask", inp.mask, "Mask PGM, white = inpaint (default: generated)")->check(CLI::ExistingFile);
  inpaint_cmd->add_option("--mask-kind", inp.mask_kind, "Generated mask kind")
      ->capture_default_str()
      ->check(CLI::IsMember({"thin", "medium", "thick", "rect", "bernoulli"}));
  inpaint_cmd->add_option("--p", inp.p, "Bernoulli mask probability")->capture_default_str();
  inpaint_cmd->add_option("--lr", inp.lr, "Guidance learning rate")->capture_default_str();
  inpaint_cmd->add_option("--lambda", inp.lambda, "Alignment loss weight")->capture_default_str();
  inpaint_cmd->add_option("--align-fraction", inp.align_fraction, "Fraction of steps with the alignment term")
      ->capture_default_str();
  inpaint_cmd->add_option("--stop-fraction", inp.stop_fraction, "Fraction of steps with gradient guidance")
      ->capture_default_str();
  inpaint_cmd->add_option("--loss-target", inp.loss_target, "Alignment target: collage or raw")
      ->capture_default_str()
      ->check(CLI::IsMember({"collage", "raw"}));
  inpaint_cmd->add_option("-o,--out", inp.out, "Output path stem (.pgm/.ppm and .gpt1 are appended)")
      ->capture_default_str();
  inpaint_cmd->add_option("--trace", inp.trace, "Write per-step telemetry CSV");
  inpaint_cmd->add_option("--snapshot-every", inp.snapshot_every, "Save the clean estimate every k steps")
      ->check(CLI::NonNegativeNumber);
  inpaint_cmd->add_option("--snapshot-dir", inp.snapshot_dir, "Directory for snapshots");

  MaskArgs masks;
  auto* masks_cmd = app.add_subcommand("make-masks", "Generate masks");
  masks_cmd->add_option("--kind", masks.kind, "thin, medium, thick, rect, bernoulli")
      ->capture_default_str()
      ->check(CLI::IsMember({"thin", "medium", "thick", "rect", "bernoulli"}));
  masks_cmd->add_option("--p", masks.p, "Bernoulli probability")->capture_default_str();
  masks_cmd->add_option("-n,--n", masks.n, "Number of masks")->capture_default_str();
  masks_cmd->add_option("--height", masks.height, "Mask height")->capture_default_str()->check(CLI::PositiveNumber);
  masks_cmd->add_option("--width", masks.width, "Mask width")->capture_default_str()->check(CLI::PositiveNumber);
  masks_cmd->add_option("--min-strokes", masks.min_strokes, "Override stroke count lower bound");
  masks_cmd->add_option("--max-strokes", masks.max_strokes, "Override stroke count upper bound");
  masks_cmd->add_option("--brush-width", masks.brush_width, "Override brush width");
  masks_cmd->add_option("-o,--out", masks.out, "Output directory")->capture_default_str();

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train-denoiser", "Train the small conv denoiser on prior samples");
  add_task_flags(train_cmd, train.task);
  train_cmd->add_option("--iters", train.train.steps, "Optimizer steps")->capture_default_str()->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--lr", train.train.learning_rate, "Learning rate")->capture_default_str();
  train_cmd->add_option("--momentum", train.train.momentum, "Momentum")->capture_default_str();
  train_cmd->add_option("--batch", train.train.batch, "Batch size")->capture_default_str()->check(CLI::PositiveNumber);
  train_cmd->add_option("--hidden", train.hidden, "Hidden channels")->capture_default_str()->check(CLI::PositiveNumber);
  train_cmd->add_option("--validation", train.validation, "Validation samples")->capture_default_str();
  train_cmd->add_option("-o,--out", train.out, "Model directory")->capture_default_str();

  StudyArgs study;
  const auto add_study_flags = [&study](CLI::App* cmd) {
    cmd->add_option("--config", study.config, "Experiment config JSON")->required()->check(CLI::ExistingFile);
    cmd->add_option("--runs", study.runs, "Override the number of instances");
    cmd->add_option("-o,--out", study.out, "Override the output directory");
    cmd->add_option("--threads", study.threads, "Worker threads (0 = all cores)");
  };
  auto* eval_cmd = app.add_subcommand("eval", "Batch evaluation of all configured methods");
  add_study_flags(eval_cmd);
  auto* sweep_cmd = app.add_subcommand("sweep", "Quality and time against the gradient-stop fraction");
  add_study_flags(sweep_cmd);
  sweep_cmd->add_option("--fractions", study.fractions, "Stop fractions")->delimiter(',')->capture_default_str();
  auto* div_cmd = app.add_subcommand("diversity", "Masked pixel variance across samples per coverage");
  add_study_flags(div_cmd);
  div_cmd->add_option("--coverages", study.coverages, "Mask coverages")->delimiter(',')->capture_default_str();
  div_cmd->add_option("--samples", study.samples, "Samples per coverage")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  const bool seed_given = seed_opt->count() > 0;
  try {
    if (*sample_cmd) return run_sample(sample, seed);
    if (*inpaint_cmd) return run_inpaint(inp, seed);
    if (*masks_cmd) return run_make_masks(masks, seed);
    if (*train_cmd) return run_train(train, seed);
    if (*eval_cmd) return run_eval_cmd(study, seed, seed_given);
    if (*sweep_cmd) return run_sweep_cmd(study, seed, seed_given);
    if (*div_cmd) return run_diversity_cmd(study, seed, seed_given);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
