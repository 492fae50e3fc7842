#include "gradpaint/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace gradpaint {

namespace {

struct RawField {
  Tensor dx;
  Tensor dy;
  Tensor inv_norm;
};

// Detached 1/|grad| (or 0 below the floor) for an (H, W) array.
Tensor inverse_norms(const Tensor& dx, const Tensor& dy) {
  Tensor inv(dx.shape());
  for (std::size_t i = 0; i < inv.size(); ++i) {
    const double n = std::sqrt(dx[i] * dx[i] + dy[i] * dy[i]);
    inv[i] = n > kGradientFloor ? 1.0 / n : 0.0;
  }
  return inv;
}

void require_image(const ad::Var& img, const Mask& m, const char* op) {
  const Shape& s = img.shape();
  if (s.size() != 3 || s[0] != m.height() || s[1] != m.width()) {
    throw std::invalid_argument(std::string(op) + ": image " + shape_str(s) + " does not match mask " +
                                shape_str({m.height(), m.width()}));
  }
}

}  // namespace

GradientField normalized_gradient(const ad::Var& image) {
  if (image.shape().size() != 2) {
    throw std::invalid_argument("normalized_gradient: expected (H, W), got " + shape_str(image.shape()));
  }
  const ad::Var dx = ad::shift(image, 1, 1, ad::Pad::Replicate) - image;
  const ad::Var dy = ad::shift(image, 0, 1, ad::Pad::Replicate) - image;
  const ad::Var inv = image.tape().constant(inverse_norms(dx.value(), dy.value()));
  return {dx * inv, dy * inv};
}

ad::Var masked_mse(const ad::Var& a, const ad::Var& b, const Mask& mask) {
  require_same_shape(a.shape(), b.shape(), "masked_mse");
  require_image(a, mask, "masked_mse");
  const std::size_t hw = mask.height() * mask.width();
  const ad::Var keep = a.tape().constant(mask.keep(a.shape()[2]));
  return ad::scale(ad::sum(ad::square((a - b) * keep)), 1.0 / static_cast<double>(hw));
}

ad::Var alignment_loss(const ad::Var& image, const Mask& mask) {
  require_image(image, mask, "alignment_loss");
  ad::Tape& tape = image.tape();
  const std::size_t channels = image.shape()[2];
  const std::size_t hw = mask.height() * mask.width();

  Tensor keep = mask.keep(1).reshaped({mask.height(), mask.width()});
  ad::Tape scratch(false);
  const GradientField mf = normalized_gradient(scratch.constant(std::move(keep)));
  const ad::Var mdx = tape.constant(mf.dx.value());
  const ad::Var mdy = tape.constant(mf.dy.value());

  ad::Var acc;
  for (std::size_t c = 0; c < channels; ++c) {
    const GradientField f = normalized_gradient(ad::take(image, 2, c));
    const ad::Var term = ad::sum(ad::square(f.dx * mdx + f.dy * mdy));
    acc = c == 0 ? term : acc + term;
  }
  return ad::scale(acc, 1.0 / static_cast<double>(hw * channels));
}

std::string to_string(LossTarget target) {
  return target == LossTarget::Collage ? "collage" : "raw";
}

LossTarget parse_loss_target(const std::string& name) {
  if (name == "collage") return LossTarget::Collage;
  if (name == "raw") return LossTarget::RawEstimate;
  throw std::invalid_argument("unknown loss target '" + name + "' (expected collage or raw)");
}

TracedLoss total_loss(const ad::Var& x0_hat, const Tensor& reference, const Mask& mask, double lambda_al,
                      bool align_active, LossTarget target) {
  if (!(lambda_al >= 0.0) || !std::isfinite(lambda_al)) {
    throw std::invalid_argument("total_loss: lambda_al must be finite and non-negative");
  }
  ad::Tape& tape = x0_hat.tape();
  const ad::Var ref = tape.constant(reference);
  TracedLoss out;
  out.mse = masked_mse(x0_hat, ref, mask);
  out.report.mse = out.mse.value().item();
  out.report.lambda_al = lambda_al;
  out.report.align_active = align_active;
  out.total = out.mse;
  if (align_active) {
    ad::Var subject = x0_hat;
    if (target == LossTarget::Collage) {
      const std::size_t channels = x0_hat.shape()[2];
      subject = x0_hat * tape.constant(mask.expand(channels)) + ref * tape.constant(mask.keep(channels));
    }
    out.align = alignment_loss(subject, mask);
    out.report.align = out.align.value().item();
    if (lambda_al != 0.0) out.total = out.mse + ad::scale(out.align, lambda_al);
  }
  out.report.total = out.total.value().item();
  return out;
}

}  // namespace gradpaint
