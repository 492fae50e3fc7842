#include "gradpaint/experiments.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "gradpaint/metrics.hpp"
#include "gradpaint/parallel.hpp"
#include "gradpaint/rng.hpp"
#include "json.hpp"

namespace gradpaint {

using nlohmann::json;

namespace {

double lerp_coord(std::size_t i, std::size_t n) {
  return n > 1 ? static_cast<double>(i) / static_cast<double>(n - 1) : 0.5;
}

Tensor fill_image(std::size_t h, std::size_t w, std::size_t c, const std::function<double(double, double)>& f) {
  Tensor img({h, w, c});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double v = f(static_cast<double>(y), static_cast<double>(x));
      for (std::size_t k = 0; k < c; ++k) img[(y * w + x) * c + k] = v;
    }
  }
  return img;
}

std::vector<Tensor> smooth_means(std::size_t h, std::size_t w, std::size_t c, bool four) {
  const double cy = (static_cast<double>(h) - 1.0) / 2.0;
  const double cx = (static_cast<double>(w) - 1.0) / 2.0;
  // Blob width scales with the image so the 16x16 shape is kept.
  const double spread = 20.0 * static_cast<double>(h * w) / 256.0;
  std::vector<Tensor> means;
  means.push_back(fill_image(h, w, c, [&](double, double x) {
    return -0.8 + 1.6 * lerp_coord(static_cast<std::size_t>(x), w);
  }));
  if (four) {
    means.push_back(fill_image(h, w, c, [&](double y, double) {
      return 0.8 - 1.6 * lerp_coord(static_cast<std::size_t>(y), h);
    }));
  }
  means.push_back(fill_image(h, w, c, [&](double, double x) { return x < static_cast<double>(w / 2) ? -0.6 : 0.6; }));
  if (four) {
    means.push_back(fill_image(h, w, c, [&](double y, double x) {
      const double r2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
      return std::exp(-r2 / spread) * 1.6 - 0.8;
    }));
  }
  return means;
}

std::vector<Tensor> feature_means(std::size_t h, std::size_t w, std::size_t c) {
  constexpr double kBase = -0.5;
  constexpr double kAmplitude = 1.0;
  const double width = 1.2 * static_cast<double>(std::min(h, w)) / 16.0;
  std::vector<std::pair<double, double>> sites;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      sites.emplace_back((i + 0.5) * static_cast<double>(h) / 3.0 - 0.5, (j + 0.5) * static_cast<double>(w) / 3.0 - 0.5);
    }
  }
  std::vector<Tensor> means;
  for (unsigned pattern = 0; pattern < 512; ++pattern) {
    means.push_back(fill_image(h, w, c, [&](double y, double x) {
      double v = kBase;
      for (std::size_t s = 0; s < sites.size(); ++s) {
        if (!(pattern >> s & 1u)) continue;
        const double r2 = (y - sites[s].first) * (y - sites[s].first) + (x - sites[s].second) * (x - sites[s].second);
        v += kAmplitude * std::exp(-r2 / (2.0 * width * width));
      }
      return v;
    }));
  }
  return means;
}

}  // namespace

std::vector<std::string> named_priors() { return {"smooth4", "smooth2", "features"}; }

GmmPrior make_named_prior(const std::string& name, std::size_t height, std::size_t width, std::size_t channels,
                          double std) {
  if (height == 0 || width == 0 || channels == 0) throw std::invalid_argument("prior: zero-sized image");
  std::vector<Tensor> means;
  if (name == "smooth4") {
    means = smooth_means(height, width, channels, true);
  } else if (name == "smooth2") {
    means = smooth_means(height, width, channels, false);
  } else if (name == "features") {
    means = feature_means(height, width, channels);
  } else {
    throw std::invalid_argument("unknown prior '" + name + "'");
  }
  std::vector<double> weights(means.size(), 1.0 / static_cast<double>(means.size()));
  return GmmPrior(std::move(weights), std::move(means), std);
}

bool is_baseline(const std::string& method) { return method == "greyfill" || method == "copy"; }

// --- configuration -----------------------------------------------------------

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument("config: " + where + " must be an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, value] : j.items()) {
    if (!ok.contains(key)) throw std::invalid_argument("config: unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void read_opt(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

json mask_to_json(const MaskSpec& m) {
  json j{{"kind", to_string(m.kind)},
         {"min_strokes", m.min_strokes},
         {"max_strokes", m.max_strokes},
         {"brush_width", m.brush_width},
         {"rect_probability", m.rect_probability},
         {"p", m.p}};
  if (m.rect) {
    j["rect"] = {{"top", m.rect->top}, {"left", m.rect->left}, {"height", m.rect->height}, {"width", m.rect->width}};
  } else {
    j["rect"] = nullptr;
  }
  return j;
}

MaskSpec mask_from_json(const json& j) {
  reject_unknown(j, {"kind", "min_strokes", "max_strokes", "brush_width", "rect_probability", "p", "rect"}, "mask");
  MaskSpec m;
  if (j.contains("kind")) m.kind = parse_mask_kind(j.at("kind").get<std::string>());
  read_opt(j, "min_strokes", m.min_strokes);
  read_opt(j, "max_strokes", m.max_strokes);
  read_opt(j, "brush_width", m.brush_width);
  read_opt(j, "rect_probability", m.rect_probability);
  read_opt(j, "p", m.p);
  if (j.contains("rect") && !j.at("rect").is_null()) {
    const json& r = j.at("rect");
    reject_unknown(r, {"top", "left", "height", "width"}, "mask.rect");
    m.rect = Rect{r.at("top").get<std::size_t>(), r.at("left").get<std::size_t>(), r.at("height").get<std::size_t>(),
                  r.at("width").get<std::size_t>()};
  }
  return m;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (version != 1) throw std::invalid_argument("config: unsupported version " + std::to_string(version));
  if (methods.empty()) throw std::invalid_argument("config: method list is empty");
  for (const auto& m : methods) {
    if (!is_baseline(m)) parse_method(m);
  }
  if (masks.empty()) throw std::invalid_argument("config: mask list is empty");
  if (task.height == 0 || task.width == 0 || task.channels == 0) {
    throw std::invalid_argument("config: image dimensions must be positive");
  }
  if (!task.prior_file.empty() && !std::filesystem::exists(task.prior_file)) {
    throw std::invalid_argument("config: prior file " + task.prior_file + " does not exist");
  }
  if (!task.model_dir.empty() && !std::filesystem::exists(std::filesystem::path(task.model_dir) / "manifest.json")) {
    throw std::invalid_argument("config: model directory " + task.model_dir + " has no manifest.json");
  }
  guidance.validate();
}

ExperimentConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  reject_unknown(j, {"version", "task", "masks", "methods", "guidance", "runs", "output_dir", "seed", "threads"},
                 "top level");
  if (!j.contains("version")) throw std::invalid_argument("config: missing version");
  ExperimentConfig cfg;
  try {
    cfg.version = j.at("version").get<int>();
    if (cfg.version != 1) throw std::invalid_argument("config: unsupported version " + std::to_string(cfg.version));
    if (j.contains("task")) {
      const json& t = j.at("task");
      reject_unknown(t, {"prior", "prior_file", "model_dir", "height", "width", "channels", "prior_std"}, "task");
      read_opt(t, "prior", cfg.task.prior);
      read_opt(t, "prior_file", cfg.task.prior_file);
      read_opt(t, "model_dir", cfg.task.model_dir);
      read_opt(t, "height", cfg.task.height);
      read_opt(t, "width", cfg.task.width);
      read_opt(t, "channels", cfg.task.channels);
      read_opt(t, "prior_std", cfg.task.prior_std);
    }
    if (j.contains("masks")) {
      cfg.masks.clear();
      for (const auto& m : j.at("masks")) cfg.masks.push_back(mask_from_json(m));
    }
    read_opt(j, "methods", cfg.methods);
    if (j.contains("guidance")) {
      const json& g = j.at("guidance");
      reject_unknown(g,
                     {"learning_rate", "lambda_al", "align_active_fraction", "grad_stop_fraction", "steps",
                      "loss_target"},
                     "guidance");
      read_opt(g, "learning_rate", cfg.guidance.learning_rate);
      read_opt(g, "lambda_al", cfg.guidance.lambda_al);
      read_opt(g, "align_active_fraction", cfg.guidance.align_active_fraction);
      read_opt(g, "grad_stop_fraction", cfg.guidance.grad_stop_fraction);
      read_opt(g, "steps", cfg.guidance.steps);
      if (g.contains("loss_target")) cfg.guidance.loss_target = parse_loss_target(g.at("loss_target").get<std::string>());
    }
    read_opt(j, "runs", cfg.runs);
    read_opt(j, "output_dir", cfg.output_dir);
    read_opt(j, "seed", cfg.seed);
    read_opt(j, "threads", cfg.threads);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  return cfg;
}

std::string serialize_config(const ExperimentConfig& cfg) {
  json j;
  j["version"] = cfg.version;
  j["task"] = {{"prior", cfg.task.prior},       {"prior_file", cfg.task.prior_file},
               {"model_dir", cfg.task.model_dir}, {"height", cfg.task.height},
               {"width", cfg.task.width},         {"channels", cfg.task.channels},
               {"prior_std", cfg.task.prior_std}};
  j["masks"] = json::array();
  for (const auto& m : cfg.masks) j["masks"].push_back(mask_to_json(m));
  j["methods"] = cfg.methods;
  j["guidance"] = {{"learning_rate", cfg.guidance.learning_rate},
                   {"lambda_al", cfg.guidance.lambda_al},
                   {"align_active_fraction", cfg.guidance.align_active_fraction},
                   {"grad_stop_fraction", cfg.guidance.grad_stop_fraction},
                   {"steps", cfg.guidance.steps},
                   {"loss_target", to_string(cfg.guidance.loss_target)}};
  j["runs"] = cfg.runs;
  j["output_dir"] = cfg.output_dir;
  j["seed"] = cfg.seed;
  j["threads"] = cfg.threads;
  return j.dump(2) + "\n";
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str());
}

// --- orchestration -------------------------------------------------------------

namespace {

GmmPrior prior_for(const TaskSpec& t) {
  if (!t.prior_file.empty()) {
    GmmPrior p = load_gmm(t.prior_file);
    require_same_shape(Shape{t.height, t.width, t.channels}, p.image_shape(), "prior file vs task");
    return p;
  }
  return make_named_prior(t.prior, t.height, t.width, t.channels, t.prior_std);
}

std::unique_ptr<Denoiser> denoiser_for(const TaskSpec& t, const GmmPrior& prior) {
  if (t.model_dir.empty()) return std::make_unique<GmmDenoiser>(prior);
  auto model = std::make_unique<ConvDenoiser>(ConvDenoiser::load(t.model_dir));
  const auto& c = model->config();
  require_same_shape(Shape{t.height, t.width, t.channels}, Shape{c.height, c.width, c.channels}, "model vs task");
  return model;
}

}  // namespace

Experiment::Experiment(const ExperimentConfig& cfg)
    : prior(prior_for(cfg.task)), denoiser(denoiser_for(cfg.task, prior)),
      schedule(make_linear_schedule(cfg.guidance.steps)) {}

std::vector<Task> make_tasks(const ExperimentConfig& cfg, const GmmPrior& prior) {
  std::vector<Task> tasks;
  tasks.reserve(cfg.masks.size() * cfg.runs);
  for (std::size_t j = 0; j < cfg.masks.size(); ++j) {
    for (std::size_t i = 0; i < cfg.runs; ++i) {
      Rng rng(derive_seed(cfg.seed, stream::kImage, i));
      MaskSpec spec = cfg.masks[j];
      spec.seed = derive_seed(cfg.seed, stream::kMask, (static_cast<std::uint64_t>(j) << 32) | i);
      tasks.push_back({i, to_string(spec.kind), prior.sample(rng), generate_mask(spec, cfg.task.height, cfg.task.width),
                       derive_seed(cfg.seed, stream::kChain, i)});
    }
  }
  return tasks;
}

MethodRun run_method(const std::string& method, const Task& task, const Experiment& exp, const GuidanceConfig& g) {
  const auto start = std::chrono::steady_clock::now();
  MethodRun out;
  if (method == "copy") {
    out.image = task.reference;
  } else if (method == "greyfill") {
    out.image = collage(Tensor(task.reference.shape()), task.reference, task.mask);
  } else {
    GuidanceConfig c = g;
    c.rng_seed = task.chain_seed;
    out.image = inpaint(parse_method(method), *exp.denoiser, task.reference, task.mask, c, exp.schedule).image;
  }
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

EvalRecord evaluate(const std::string& method, const Task& task, const Experiment& exp, const GuidanceConfig& g) {
  const MethodRun run = run_method(method, task, exp, g);
  EvalRecord r;
  r.method = method;
  r.mask_kind = task.mask_kind;
  r.index = task.index;
  r.seed = task.chain_seed;
  r.nll_prior = nll_under_prior(exp.prior, run.image);
  r.seam_energy = seam_energy(run.image, task.mask);
  r.masked_rmse = masked_rmse(run.image, task.reference, task.mask);
  r.wall_clock_s = run.seconds;
  return r;
}

std::vector<EvalRecord> run_eval(const ExperimentConfig& cfg, const Experiment& exp) {
  const std::vector<Task> tasks = make_tasks(cfg, exp.prior);
  const std::size_t m = cfg.methods.size();
  std::vector<EvalRecord> rows(tasks.size() * m);
  parallel_for(rows.size(), cfg.threads, [&](std::size_t k) {
    rows[k] = evaluate(cfg.methods[k % m], tasks[k / m], exp, cfg.guidance);
  });
  return rows;
}

namespace {

std::ostringstream csv_stream() {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os.precision(17);
  return os;
}

}  // namespace

std::string eval_csv(const std::vector<EvalRecord>& rows) {
  auto os = csv_stream();
  os << "method,mask_kind,index,seed,nll_prior,seam_energy,masked_rmse\n";
  for (const auto& r : rows) {
    os << r.method << ',' << r.mask_kind << ',' << r.index << ',' << r.seed << ',' << r.nll_prior << ','
       << r.seam_energy << ',' << r.masked_rmse << '\n';
  }
  return os.str();
}

std::string timing_csv(const std::vector<EvalRecord>& rows) {
  auto os = csv_stream();
  os << "method,mask_kind,index,wall_clock_s\n";
  for (const auto& r : rows) os << r.method << ',' << r.mask_kind << ',' << r.index << ',' << r.wall_clock_s << '\n';
  return os.str();
}

std::string summary_csv(const std::vector<EvalRecord>& rows) {
  struct Acc {
    std::size_t n = 0;
    double nll = 0.0, seam = 0.0, rmse = 0.0;
  };
  std::vector<std::pair<std::string, std::string>> order;
  std::map<std::pair<std::string, std::string>, Acc> acc;
  for (const auto& r : rows) {
    const auto key = std::make_pair(r.method, r.mask_kind);
    if (!acc.contains(key)) order.push_back(key);
    Acc& a = acc[key];
    ++a.n;
    a.nll += r.nll_prior;
    a.seam += r.seam_energy;
    a.rmse += r.masked_rmse;
  }
  auto os = csv_stream();
  os << "method,mask_kind,runs,nll_prior,seam_energy,masked_rmse\n";
  for (const auto& key : order) {
    const Acc& a = acc[key];
    const double n = static_cast<double>(a.n);
    os << key.first << ',' << key.second << ',' << a.n << ',' << a.nll / n << ',' << a.seam / n << ',' << a.rmse / n
       << '\n';
  }
  return os.str();
}

std::vector<SweepRow> timing_sweep(const std::vector<double>& fractions, const std::vector<Task>& tasks,
                                   const Experiment& exp, const GuidanceConfig& g, std::size_t threads) {
  std::vector<SweepRow> rows;
  for (double f : fractions) {
    GuidanceConfig c = g;
    c.grad_stop_fraction = f;
    c.validate();
    std::vector<EvalRecord> recs(tasks.size());
    parallel_for(tasks.size(), threads, [&](std::size_t i) { recs[i] = evaluate("gradpaint", tasks[i], exp, c); });
    SweepRow row;
    row.fraction = f;
    row.runs = tasks.size();
    for (const auto& r : recs) {
      row.nll_prior += r.nll_prior;
      row.seam_energy += r.seam_energy;
      row.masked_rmse += r.masked_rmse;
      row.wall_clock_s += r.wall_clock_s;
    }
    if (!recs.empty()) {
      const double n = static_cast<double>(recs.size());
      row.nll_prior /= n;
      row.seam_energy /= n;
      row.masked_rmse /= n;
      row.wall_clock_s /= n;
    }
    rows.push_back(row);
  }
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  auto os = csv_stream();
  os << "grad_stop_fraction,runs,nll_prior,seam_energy,masked_rmse\n";
  for (const auto& r : rows) {
    os << r.fraction << ',' << r.runs << ',' << r.nll_prior << ',' << r.seam_energy << ',' << r.masked_rmse << '\n';
  }
  return os.str();
}

std::string sweep_timing_csv(const std::vector<SweepRow>& rows) {
  auto os = csv_stream();
  os << "grad_stop_fraction,runs,wall_clock_s\n";
  for (const auto& r : rows) os << r.fraction << ',' << r.runs << ',' << r.wall_clock_s << '\n';
  return os.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace gradpaint
