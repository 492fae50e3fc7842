#include "gradpaint/denoisers.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

#include "gradpaint/gpt1.hpp"
#include "json.hpp"

namespace gradpaint {

using nlohmann::json;

GmmPrior::GmmPrior(std::vector<double> weights, std::vector<Tensor> means, double std)
    : weights_(std::move(weights)), means_(std::move(means)), std_(std) {
  if (means_.empty()) throw std::invalid_argument("GmmPrior: need at least one component");
  if (weights_.size() != means_.size()) {
    throw std::invalid_argument("GmmPrior: " + std::to_string(weights_.size()) + " weights for " +
                                std::to_string(means_.size()) + " means");
  }
  if (!(std_ > 0.0) || !std::isfinite(std_)) throw std::invalid_argument("GmmPrior: std must be positive");
  double total = 0.0;
  for (double w : weights_) {
    if (!(w > 0.0) || !std::isfinite(w)) throw std::invalid_argument("GmmPrior: weights must be positive");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("GmmPrior: weights must sum to 1");
  const Shape& shape = means_.front().shape();
  if (shape_numel(shape) == 0) throw std::invalid_argument("GmmPrior: empty image shape");
  const std::size_t d = shape_numel(shape);
  std::vector<double> stacked;
  stacked.reserve(means_.size() * d);
  for (const auto& m : means_) {
    require_same_shape(shape, m.shape(), "GmmPrior means");
    if (!m.all_finite()) throw std::invalid_argument("GmmPrior: non-finite mean");
    stacked.insert(stacked.end(), m.data().begin(), m.data().end());
  }
  mean_matrix_ = Tensor({means_.size(), d}, std::move(stacked));
}

GmmPrior GmmPrior::component(std::size_t k) const {
  if (k >= components()) {
    throw std::out_of_range("GmmPrior: component " + std::to_string(k) + " of " + std::to_string(components()));
  }
  return GmmPrior({1.0}, {means_[k]}, std_);
}

Tensor GmmPrior::sample(Rng& rng, std::size_t* component) const {
  std::discrete_distribution<std::size_t> pick(weights_.begin(), weights_.end());
  const std::size_t k = pick(rng);
  if (component) *component = k;
  Tensor x = normal_tensor(image_shape(), rng);
  const auto mu = means_[k].data();
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = mu[i] + std_ * x[i];
  return x;
}

GmmPrior load_gmm(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open prior file " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw std::runtime_error("prior file " + path.string() + ": " + e.what());
  }
  if (j.value("version", 0) != 1) throw std::runtime_error("prior file: unsupported version");
  const Shape shape = j.at("shape").get<Shape>();
  std::vector<Tensor> means;
  for (const auto& m : j.at("means")) {
    means.push_back(Tensor::from_external(shape, m.get<std::vector<double>>()));
  }
  return GmmPrior(j.at("weights").get<std::vector<double>>(), std::move(means), j.at("std").get<double>());
}

void save_gmm(const std::filesystem::path& path, const GmmPrior& prior) {
  json j;
  j["version"] = 1;
  j["std"] = prior.std_dev();
  j["shape"] = prior.image_shape();
  j["weights"] = prior.weights();
  j["means"] = json::array();
  for (std::size_t k = 0; k < prior.components(); ++k) j["means"].push_back(prior.mean(k).values());
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write prior file " + path.string());
  os << j.dump(1) << '\n';
}

ad::Var gmm_eps(const GmmPrior& prior, const ad::Var& x_t, int t, const NoiseSchedule& s,
                std::optional<std::size_t> cond) {
  if (cond) return gmm_eps(prior.component(*cond), x_t, t, s);
  require_same_shape(prior.image_shape(), x_t.shape(), "gmm_eps");
  if (t < 0 || t > s.steps()) throw std::out_of_range("gmm_eps: step " + std::to_string(t) + " outside schedule");
  const double ab = s.alpha_bar(t);
  const double a = std::sqrt(ab);
  const double var = ab * prior.std_dev() * prior.std_dev() + (1.0 - ab);
  if (var < 1e-12) throw std::domain_error("gmm_eps: marginal variance below 1e-12 at t=" + std::to_string(t));
  const std::size_t k = prior.components();
  const std::size_t d = prior.dim();

  // Softmax logits over components. The |x|^2 term of the squared distance is
  // shared by all components and cancels, leaving a single matrix product.
  std::vector<double> bias(k);
  for (std::size_t i = 0; i < k; ++i) {
    const double m2 = l2_norm(prior.mean(i));
    bias[i] = std::log(prior.weights()[i]) - ab * m2 * m2 / (2.0 * var);
  }
  ad::Tape& tape = x_t.tape();
  const ad::Var mu = tape.constant(prior.mean_matrix());
  const ad::Var col = ad::reshape(x_t, {d, 1});
  const ad::Var proj = ad::reshape(ad::matmul(mu, col), {k});
  const ad::Var logits = ad::scale(proj, a / var) + tape.constant(Tensor({k}, std::move(bias)));
  const ad::Var lse = ad::logsumexp(logits, 0);
  const ad::Var resp = ad::exp(logits - ad::broadcast_to(lse, {k}));
  const ad::Var mix = ad::reshape(ad::matmul(ad::reshape(resp, {1, k}), mu), x_t.shape());
  return ad::scale(x_t - ad::scale(mix, a), std::sqrt(1.0 - ab) / var);
}

GmmDenoiser::GmmDenoiser(GmmPrior prior, std::optional<std::size_t> cond) : prior_(std::move(prior)), cond_(cond) {
  if (cond_ && *cond_ >= prior_.components()) throw std::out_of_range("GmmDenoiser: condition out of range");
}

ad::Var GmmDenoiser::predict_eps(const ad::Var& x_t, int t, const NoiseSchedule& s) const {
  return gmm_eps(prior_, x_t, t, s, cond_);
}

// --- trained conv denoiser ---------------------------------------------------

Tensor sinusoidal_embedding(int t, std::size_t dim) {
  if (dim == 0 || dim % 2 != 0) throw std::invalid_argument("sinusoidal_embedding: dim must be even and positive");
  Tensor e({dim});
  const std::size_t half = dim / 2;
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(half));
    e[i] = std::sin(t * freq);
    e[half + i] = std::cos(t * freq);
  }
  return e;
}

namespace {

void check_config(const ConvDenoiserConfig& c) {
  if (c.height == 0 || c.width == 0 || c.channels == 0 || c.hidden == 0) {
    throw std::invalid_argument("ConvDenoiser: zero-sized dimension");
  }
  if (c.layers < 2) throw std::invalid_argument("ConvDenoiser: need at least two layers");
  if (c.embed_dim == 0 || c.embed_dim % 2 != 0) throw std::invalid_argument("ConvDenoiser: embed_dim must be even");
}

Shape conv_shape(const ConvDenoiserConfig& c, std::size_t l) {
  const std::size_t cin = l == 0 ? c.channels : c.hidden;
  const std::size_t cout = l + 1 == c.layers ? c.channels : c.hidden;
  return {3, 3, cin, cout};
}

}  // namespace

ConvDenoiser::ConvDenoiser(ConvDenoiserConfig config, std::uint64_t seed) : config_(config) {
  check_config(config_);
  Rng rng(derive_seed(seed, stream::kInit, 0));
  for (std::size_t l = 0; l < config_.layers; ++l) {
    const Shape ws = conv_shape(config_, l);
    const bool last = l + 1 == config_.layers;
    Tensor w(ws);
    if (!last) {
      w = normal_tensor(ws, rng);
      const double gain = std::sqrt(2.0 / static_cast<double>(9 * ws[2]));
      for (auto& v : w.data()) v *= gain;
    }
    params_.push_back({"conv" + std::to_string(l) + ".weight", std::move(w)});
    params_.push_back({"conv" + std::to_string(l) + ".bias", Tensor({ws[3]})});
    if (!last) {
      Tensor p = normal_tensor({config_.embed_dim, config_.hidden}, rng);
      const double gain = 1.0 / std::sqrt(static_cast<double>(config_.embed_dim));
      for (auto& v : p.data()) v *= gain;
      params_.push_back({"temb" + std::to_string(l) + ".weight", std::move(p)});
    }
  }
}

ad::Var ConvDenoiser::forward(const ad::Var& x_t, int t, const std::vector<ad::Var>& params) const {
  const Shape in{config_.height, config_.width, config_.channels};
  require_same_shape(in, x_t.shape(), "ConvDenoiser input");
  if (params.size() != params_.size()) throw std::invalid_argument("ConvDenoiser: wrong parameter count");
  ad::Tape& tape = x_t.tape();
  const ad::Var emb = tape.constant(sinusoidal_embedding(t, config_.embed_dim).reshaped({1, config_.embed_dim}));
  ad::Var h = x_t;
  std::size_t p = 0;
  for (std::size_t l = 0; l < config_.layers; ++l) {
    const ad::Var& w = params[p++];
    const ad::Var& b = params[p++];
    const std::size_t cout = w.shape()[3];
    const Shape out{config_.height, config_.width, cout};
    h = ad::conv2d(h, w) + ad::broadcast_to(b, out);
    if (l + 1 < config_.layers) {
      const ad::Var te = ad::reshape(ad::matmul(emb, params[p++]), {cout});
      h = ad::clamp(h + ad::broadcast_to(te, out), 0.0, std::numeric_limits<double>::infinity());
    }
  }
  return h;
}

ad::Var ConvDenoiser::predict_eps(const ad::Var& x_t, int t, const NoiseSchedule& s) const {
  if (t < 1 || t > s.steps()) throw std::out_of_range("ConvDenoiser: step " + std::to_string(t) + " outside schedule");
  std::vector<ad::Var> vars;
  vars.reserve(params_.size());
  for (const auto& p : params_) vars.push_back(x_t.tape().constant(p.value));
  return forward(x_t, t, vars);
}

void ConvDenoiser::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  json j;
  j["version"] = 1;
  j["kind"] = "conv";
  j["config"] = {{"height", config_.height}, {"width", config_.width},         {"channels", config_.channels},
                 {"hidden", config_.hidden}, {"layers", config_.layers},       {"embed_dim", config_.embed_dim}};
  j["tensors"] = json::array();
  for (const auto& p : params_) {
    const std::string file = p.name + ".gpt1";
    gpt1::save(dir / file, p.value);
    j["tensors"].push_back({{"name", p.name}, {"file", file}});
  }
  std::ofstream os(dir / "manifest.json");
  if (!os) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
  os << j.dump(1) << '\n';
}

ConvDenoiser ConvDenoiser::load(const std::filesystem::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw std::runtime_error("no manifest.json in " + dir.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw std::runtime_error("manifest: " + std::string(e.what()));
  }
  if (j.value("version", 0) != 1 || j.value("kind", "") != "conv") {
    throw std::runtime_error("manifest: unsupported version or kind");
  }
  ConvDenoiser m;
  const auto& c = j.at("config");
  m.config_ = {c.at("height").get<std::size_t>(), c.at("width").get<std::size_t>(),
               c.at("channels").get<std::size_t>(), c.at("hidden").get<std::size_t>(),
               c.at("layers").get<std::size_t>(), c.at("embed_dim").get<std::size_t>()};
  check_config(m.config_);
  // Shapes come from a freshly built model so the manifest cannot smuggle in
  // a mismatched architecture.
  const ConvDenoiser ref(m.config_, 0);
  const auto& entries = j.at("tensors");
  if (entries.size() != ref.params_.size()) throw std::runtime_error("manifest: wrong tensor count");
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const std::string name = entries[i].at("name").get<std::string>();
    if (name != ref.params_[i].name) throw std::runtime_error("manifest: unexpected tensor " + name);
    Tensor v = gpt1::load(dir / entries[i].at("file").get<std::string>());
    if (v.shape() != ref.params_[i].value.shape()) {
      throw std::runtime_error("manifest: tensor " + name + " has shape " + shape_str(v.shape()) + ", expected " +
                               shape_str(ref.params_[i].value.shape()));
    }
    m.params_.push_back({name, std::move(v)});
  }
  return m;
}

namespace {

struct NoisyExample {
  Tensor x_t;
  Tensor eps;
  int t;
};

NoisyExample draw_example(const ImageSampler& data, const NoiseSchedule& s, Rng& rng) {
  std::uniform_int_distribution<int> step(1, s.steps());
  Tensor x0 = data(rng);
  const int t = step(rng);
  Tensor eps = normal_tensor(x0.shape(), rng);
  Tensor x_t = forward_mix(x0, eps, t, s);
  return {std::move(x_t), std::move(eps), t};
}

}  // namespace

TrainResult train_denoiser(ConvDenoiser model, const ImageSampler& data, const NoiseSchedule& s,
                           const TrainConfig& cfg, const std::function<void(int, double)>& on_step) {
  if (cfg.steps < 0) throw std::invalid_argument("train_denoiser: negative step count");
  if (cfg.batch == 0) throw std::invalid_argument("train_denoiser: batch must be positive");
  if (!(cfg.learning_rate > 0.0)) throw std::invalid_argument("train_denoiser: learning rate must be positive");
  if (cfg.momentum < 0.0 || cfg.momentum >= 1.0) throw std::invalid_argument("train_denoiser: momentum in [0, 1)");

  Rng rng(derive_seed(cfg.seed, stream::kTraining, 0));
  auto& params = model.params();
  std::vector<Tensor> velocity;
  for (const auto& p : params) velocity.emplace_back(p.value.shape());
  std::vector<double> losses;
  losses.reserve(static_cast<std::size_t>(cfg.steps));

  for (int step = 0; step < cfg.steps; ++step) {
    ad::Tape tape;
    std::vector<ad::Var> leaves;
    for (const auto& p : params) leaves.push_back(tape.leaf(p.value));
    ad::Var total;
    for (std::size_t b = 0; b < cfg.batch; ++b) {
      NoisyExample ex = draw_example(data, s, rng);
      const ad::Var pred = model.forward(tape.constant(std::move(ex.x_t)), ex.t, leaves);
      const ad::Var err = ad::mean(ad::square(pred - tape.constant(std::move(ex.eps))));
      total = b == 0 ? err : total + err;
    }
    const ad::Var loss = ad::scale(total, 1.0 / static_cast<double>(cfg.batch));
    const double value = loss.value().item();
    if (!std::isfinite(value)) {
      throw std::runtime_error("train_denoiser: non-finite loss at step " + std::to_string(step));
    }
    const ad::GradientMap grads = ad::backward(loss);
    for (std::size_t i = 0; i < params.size(); ++i) {
      const Tensor g = grads[leaves[i]];
      auto v = velocity[i].data();
      auto w = params[i].value.data();
      for (std::size_t j = 0; j < w.size(); ++j) {
        v[j] = cfg.momentum * v[j] + g[j];
        w[j] -= cfg.learning_rate * v[j];
      }
    }
    losses.push_back(value);
    if (on_step) on_step(step, value);
  }
  return {std::move(model), std::move(losses)};
}

double denoising_loss(const Denoiser& model, const ImageSampler& data, const NoiseSchedule& s, std::size_t samples,
                      std::uint64_t seed) {
  if (samples == 0) throw std::invalid_argument("denoising_loss: need at least one sample");
  Rng rng(derive_seed(seed, stream::kTraining, 1));
  double acc = 0.0;
  for (std::size_t i = 0; i < samples; ++i) {
    NoisyExample ex = draw_example(data, s, rng);
    ad::Tape tape(false);
    const ad::Var pred = model.predict_eps(tape.constant(std::move(ex.x_t)), ex.t, s);
    double se = 0.0;
    for (std::size_t j = 0; j < ex.eps.size(); ++j) {
      const double e = pred.value()[j] - ex.eps[j];
      se += e * e;
    }
    acc += se / static_cast<double>(ex.eps.size());
  }
  return acc / static_cast<double>(samples);
}

}  // namespace gradpaint
