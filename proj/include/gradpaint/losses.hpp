#pragma once

// Guidance losses on a clean-image estimate: agreement with the known pixels
// and alignment of image edges with the mask boundary.

#include <string>

#include "gradpaint/autodiff.hpp"
#include "gradpaint/masks.hpp"

namespace gradpaint {

/// Below this magnitude a gradient vector is treated as zero.
inline constexpr double kGradientFloor = 1e-8;

struct GradientField {
  ad::Var dx;
  ad::Var dy;
};

/// Unit-length forward differences of a single-channel (H, W) image with
/// replicate padding; vectors shorter than kGradientFloor become (0, 0). The
/// normalizing magnitude is treated as a constant when differentiating.
GradientField normalized_gradient(const ad::Var& image);

/// (1 / (H W)) * || (a - b) * (1 - mask) ||^2 summed over channels.
ad::Var masked_mse(const ad::Var& a, const ad::Var& b, const Mask& mask);

/// Per channel (1 / (H W)) * || Dx I * Dx(1-M) + Dy I * Dy(1-M) ||^2, averaged
/// over channels; D is the normalized gradient above.
ad::Var alignment_loss(const ad::Var& image, const Mask& mask);

enum class LossTarget { Collage, RawEstimate };

std::string to_string(LossTarget target);
LossTarget parse_loss_target(const std::string& name);

struct LossReport {
  double total = 0.0;
  double mse = 0.0;
  double align = 0.0;
  double lambda_al = 0.0;
  bool align_active = false;
};

struct TracedLoss {
  ad::Var total;
  ad::Var mse;
  ad::Var align;  // invalid when the alignment term is inactive
  LossReport report;
};

/// total = mse(x0_hat, reference) + lambda_al * align(target), where the
/// alignment target is the collage of x0_hat with the reference (or x0_hat
/// itself). With align_active false the total is the mse alone.
TracedLoss total_loss(const ad::Var& x0_hat, const Tensor& reference, const Mask& mask, double lambda_al,
                      bool align_active, LossTarget target = LossTarget::Collage);

}  // namespace gradpaint
