#pragma once

// Noise estimators eps(x_t, t). Both kinds return a Var on the caller's tape,
// so a guided sampler can backpropagate a loss on x0_hat through them to x_t.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "gradpaint/autodiff.hpp"
#include "gradpaint/rng.hpp"
#include "gradpaint/schedule.hpp"

namespace gradpaint {

/// Isotropic Gaussian mixture over images: sum_k w_k N(mu_k, std^2 I).
class GmmPrior {
 public:
  GmmPrior(std::vector<double> weights, std::vector<Tensor> means, double std);

  std::size_t components() const noexcept { return weights_.size(); }
  const Shape& image_shape() const noexcept { return means_.front().shape(); }
  std::size_t dim() const noexcept { return means_.front().size(); }
  const std::vector<double>& weights() const noexcept { return weights_; }
  const Tensor& mean(std::size_t k) const { return means_.at(k); }
  double std_dev() const noexcept { return std_; }
  /// Means stacked as a (K, d) matrix.
  const Tensor& mean_matrix() const noexcept { return mean_matrix_; }

  /// Single-component prior {mu_k, std} with weight 1.
  GmmPrior component(std::size_t k) const;

  Tensor sample(Rng& rng, std::size_t* component = nullptr) const;

 private:
  std::vector<double> weights_;
  std::vector<Tensor> means_;
  double std_;
  Tensor mean_matrix_;
};

/// JSON file: {"version":1,"std":s,"shape":[H,W,C],"weights":[...],"means":[[...],...]}
GmmPrior load_gmm(const std::filesystem::path& path);
void save_gmm(const std::filesystem::path& path, const GmmPrior& prior);

/// Exact noise prediction for data drawn from `prior`:
/// eps = -sqrt(1 - a_t) grad log p_t(x_t), with
/// p_t = sum_k w_k N(sqrt(a_t) mu_k, (a_t std^2 + 1 - a_t) I). With `cond`
/// the mixture is restricted to that component.
ad::Var gmm_eps(const GmmPrior& prior, const ad::Var& x_t, int t, const NoiseSchedule& s,
                std::optional<std::size_t> cond = std::nullopt);

class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual ad::Var predict_eps(const ad::Var& x_t, int t, const NoiseSchedule& s) const = 0;
  virtual std::string name() const = 0;
};

class GmmDenoiser final : public Denoiser {
 public:
  explicit GmmDenoiser(GmmPrior prior, std::optional<std::size_t> cond = std::nullopt);
  ad::Var predict_eps(const ad::Var& x_t, int t, const NoiseSchedule& s) const override;
  std::string name() const override { return "analytic-gmm"; }
  const GmmPrior& prior() const noexcept { return prior_; }

 private:
  GmmPrior prior_;
  std::optional<std::size_t> cond_;
};

struct ConvDenoiserConfig {
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t channels = 1;
  std::size_t hidden = 32;
  std::size_t layers = 4;
  std::size_t embed_dim = 32;
};

/// Four 3x3 conv layers (zero padding) with ReLU between them and a
/// sinusoidal time embedding projected and added per channel after each
/// hidden conv. The last layer starts at zero, so a fresh model predicts 0.
class ConvDenoiser final : public Denoiser {
 public:
  struct Param {
    std::string name;
    Tensor value;
  };

  ConvDenoiser(ConvDenoiserConfig config, std::uint64_t seed);

  ad::Var predict_eps(const ad::Var& x_t, int t, const NoiseSchedule& s) const override;
  std::string name() const override { return "trained-conv"; }

  /// Forward pass with caller-provided parameter Vars (same order as params()).
  ad::Var forward(const ad::Var& x_t, int t, const std::vector<ad::Var>& params) const;

  const ConvDenoiserConfig& config() const noexcept { return config_; }
  const std::vector<Param>& params() const noexcept { return params_; }
  std::vector<Param>& params() noexcept { return params_; }

  /// Directory with manifest.json and one GPT1 file per parameter.
  void save(const std::filesystem::path& dir) const;
  static ConvDenoiser load(const std::filesystem::path& dir);

 private:
  ConvDenoiser() = default;
  ConvDenoiserConfig config_;
  std::vector<Param> params_;
};

Tensor sinusoidal_embedding(int t, std::size_t dim);

using ImageSampler = std::function<Tensor(Rng&)>;

struct TrainConfig {
  int steps = 1000;
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::size_t batch = 8;
  std::uint64_t seed = 0;
};

struct TrainResult {
  ConvDenoiser model;
  std::vector<double> losses;  // per-step mean squared error per entry
};

/// Minimises E || eps - eps_theta(x_t, t) ||^2 with uniform t and fresh eps,
/// using SGD with momentum. Throws on a non-finite loss.
TrainResult train_denoiser(ConvDenoiser model, const ImageSampler& data, const NoiseSchedule& s,
                           const TrainConfig& cfg, const std::function<void(int, double)>& on_step = {});

/// Monte-Carlo estimate of the denoising objective, per entry. The
/// constant-zero predictor scores 1 in expectation.
double denoising_loss(const Denoiser& model, const ImageSampler& data, const NoiseSchedule& s, std::size_t samples,
                      std::uint64_t seed);

}  // namespace gradpaint
