#pragma once

// Image operators shared by degradation, augmentation and the Retinex losses.
//
// Images are tensors of shape [C, H, W] (single image) or [B, C, H, W]
// (batch) with values in [0, 1]. The differentiable operators work on Var
// graphs; the value-level overloads evaluate the same graph without
// recording so there is a single implementation of each formula.

#include "cenet/ops.hpp"

#include <array>
#include <optional>
#include <random>

namespace cenet {

using Image = Tensor<float>;
using Rng = std::mt19937_64;

inline Image make_image(Index channels, Index height, Index width, float fill = 0.0f) {
  require(channels >= 1 && height >= 1 && width >= 1, "make_image: dimensions must be positive");
  return Image({channels, height, width}, fill);
}

inline Index channels_of(const Image& img) { return img.dim(0); }
inline Index height_of(const Image& img) { return img.dim(1); }
inline Index width_of(const Image& img) { return img.dim(2); }

/// Adds a leading batch dimension to a [C, H, W] tensor.
template <typename S>
Tensor<S> as_batch(const Tensor<S>& t) {
  if (t.rank() == 4) return t;
  require(t.rank() == 3, "as_batch: expected [C,H,W] or [B,C,H,W], got " + shape_string(t.shape));
  return t.reshaped({1, t.dim(0), t.dim(1), t.dim(2)});
}

// SSIM ------------------------------------------------------------------------

struct SsimParams {
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
  Index window = 11;
  double sigma = 1.5;
};

/// Normalized 1-d Gaussian window. Images narrower than the window use the
/// largest odd length that fits.
template <typename S>
Eigen::Matrix<S, Eigen::Dynamic, 1> gaussian_window(Index extent, const SsimParams& p = {}) {
  Index n = std::min(p.window, extent);
  if (n % 2 == 0) --n;
  n = std::max<Index>(n, 1);
  Eigen::Matrix<S, Eigen::Dynamic, 1> w(n);
  const double c = static_cast<double>(n - 1) / 2.0;
  double total = 0;
  for (Index i = 0; i < n; ++i) {
    const double d = static_cast<double>(i) - c;
    const double v = std::exp(-(d * d) / (2.0 * p.sigma * p.sigma));
    w[i] = static_cast<S>(v);
    total += v;
  }
  return w / static_cast<S>(total);
}

/// Mean structural similarity over all windows, channels and batch items.
template <typename S>
Var<S> ssim(const Var<S>& a, const Var<S>& b, const SsimParams& p = {}) {
  require(a.shape() == b.shape(), "ssim: shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  require(a.value().rank() == 4, "ssim: expected [B,C,H,W]");
  const auto ky = gaussian_window<S>(a.dim(2), p);
  const auto kx = gaussian_window<S>(a.dim(3), p);
  const S c1 = static_cast<S>((p.k1 * p.dynamic_range) * (p.k1 * p.dynamic_range));
  const S c2 = static_cast<S>((p.k2 * p.dynamic_range) * (p.k2 * p.dynamic_range));
  auto blur = [&](const Var<S>& v) { return separable_filter_valid(v, ky, kx); };
  Var<S> mu_a = blur(a), mu_b = blur(b);
  Var<S> mu_aa = mu_a * mu_a, mu_bb = mu_b * mu_b, mu_ab = mu_a * mu_b;
  Var<S> var_a = blur(a * a) - mu_aa;
  Var<S> var_b = blur(b * b) - mu_bb;
  Var<S> cov = blur(a * b) - mu_ab;
  Var<S> num = (mu_ab * S(2) + c1) * (cov * S(2) + c2);
  Var<S> den = (mu_aa + mu_bb + c1) * (var_a + var_b + c2);
  return mean(num / den);
}

template <typename S>
double ssim(const Tensor<S>& a, const Tensor<S>& b, const SsimParams& p = {}) {
  require(a.shape == b.shape, "ssim: shape mismatch " + shape_string(a.shape) + " vs " + shape_string(b.shape));
  NoGradGuard guard;
  return static_cast<double>(
      ssim(Var<double>::constant(as_batch(a).template cast<double>()), Var<double>::constant(as_batch(b).template cast<double>()), p)
          .item());
}

// Total variation -------------------------------------------------------------

/// L1 total variation: mean absolute forward difference, pooled over the
/// horizontal and vertical terms of every channel.
template <typename S>
Var<S> total_variation(const Var<S>& x) {
  require(x.value().rank() == 4, "total_variation: expected [B,C,H,W]");
  Var<S> dx = diff_x(x), dy = diff_y(x);
  const Index count = dx.size() + dy.size();
  if (count == 0) return Var<S>::constant(Tensor<S>::scalar(S(0)));
  std::vector<Var<S>> terms;
  if (dx.size() > 0) terms.push_back(sum(abs(dx)));
  if (dy.size() > 0) terms.push_back(sum(abs(dy)));
  return add_all(terms) * (S(1) / static_cast<S>(count));
}

template <typename S>
double total_variation(const Tensor<S>& x) {
  NoGradGuard guard;
  return static_cast<double>(total_variation(Var<double>::constant(as_batch(x).template cast<double>())).item());
}

// Channel max -----------------------------------------------------------------

/// Per-pixel maximum over the three colour channels of a [3, H, W] image.
template <typename S>
Tensor<S> channel_max(const Tensor<S>& x) {
  require(x.rank() == 3 && x.dim(0) == 3, "channel_max: expected a 3-channel [3,H,W] image, got " + shape_string(x.shape));
  NoGradGuard guard;
  Tensor<S> out = channel_max(Var<S>::constant(as_batch(x))).value();
  return out.reshaped({1, x.dim(1), x.dim(2)});
}

// Histogram equalization -----------------------------------------------------

/// 256-bin equalization of a single-channel image: each value maps to the
/// inclusive empirical CDF P[X <= v] of its bin.
template <typename S>
Tensor<S> hist_equalize(const Tensor<S>& x) {
  require((x.rank() == 3 && x.dim(0) == 1) || x.rank() == 2, "hist_equalize: expected a single-channel image, got " +
                                                                 shape_string(x.shape));
  auto bin_of = [](S v) {
    const long b = std::lround(static_cast<double>(v) * 255.0);
    return static_cast<std::size_t>(std::clamp<long>(b, 0, 255));
  };
  std::array<Index, 256> hist{};
  for (Index i = 0; i < x.size(); ++i) ++hist[bin_of(x.data[i])];
  std::array<S, 256> cdf{};
  Index running = 0;
  for (std::size_t b = 0; b < 256; ++b) {
    running += hist[b];
    cdf[b] = static_cast<S>(static_cast<double>(running) / static_cast<double>(x.size()));
  }
  Tensor<S> out(x.shape);
  for (Index i = 0; i < x.size(); ++i) out.data[i] = cdf[bin_of(x.data[i])];
  return out;
}

/// hist_equalize applied independently to every [1, H, W] plane of a batch.
template <typename S>
Tensor<S> hist_equalize_batch(const Tensor<S>& x) {
  require(x.rank() == 4 && x.dim(1) == 1, "hist_equalize_batch: expected [B,1,H,W]");
  const Index HW = x.dim(2) * x.dim(3);
  Tensor<S> out(x.shape);
  for (Index b = 0; b < x.dim(0); ++b) {
    Tensor<S> plane({1, x.dim(2), x.dim(3)}, typename Tensor<S>::Vector(x.data.segment(b * HW, HW)));
    out.data.segment(b * HW, HW) = hist_equalize(plane).data;
  }
  return out;
}

// Photometric adjustment -----------------------------------------------------

enum class AdjustMode { brightness, contrast, saturation, hue };

AdjustMode parse_adjust_mode(const std::string& name);

/// Photometric adjustment of a 3-channel image.
///
/// brightness, contrast and saturation take a percentage factor f = value/100:
///   brightness: clamp(f * x)
///   contrast:   clamp(mu + f * (x - mu)), mu the mean luma of the image
///   saturation: clamp(gray + f * (x - gray)), gray the per-pixel luma
/// hue rotates the HSV hue by `value` degrees (sign chosen by the caller).
Image adjust(const Image& x, AdjustMode mode, double value);

/// ITU-R BT.601 luma.
inline float luma(float r, float g, float b) { return 0.299f * r + 0.587f * g + 0.114f * b; }

float mean_brightness(const Image& img);

// Geometry -------------------------------------------------------------------

/// Bilinear resize (half-pixel centres, no antialiasing).
Image resize(const Image& x, Index height, Index width);
Image hflip(const Image& x);
/// Pads by `pad` on every side (edge pixels replicated), then crops a
/// height x width window at (top, left) of the padded image.
Image pad_crop(const Image& x, Index pad, Index top, Index left, Index height, Index width);

// Random erasing -------------------------------------------------------------

struct EraseParams {
  double probability = 0.5;
  double min_area = 0.02;
  double max_area = 0.4;
  double min_aspect = 0.3;
  double max_aspect = 1.0 / 0.3;
  int max_attempts = 100;
};

/// Erased region of one image: a single axis-aligned rectangle, or empty.
struct EraseMask {
  Index height = 0;
  Index width = 0;
  std::optional<std::array<Index, 4>> rect;  // top, left, rows, cols

  bool empty() const { return !rect.has_value(); }
  bool erased(Index y, Index x) const {
    if (!rect) return false;
    const auto& [t, l, h, w] = *rect;
    return y >= t && y < t + h && x >= l && x < l + w;
  }
  Index erased_count() const { return rect ? (*rect)[2] * (*rect)[3] : 0; }
  double area_fraction() const {
    return static_cast<double>(erased_count()) / static_cast<double>(height * width);
  }
  /// 1 for kept pixels, 0 for erased ones, shape [1, H, W].
  Image valid_map() const;
};

std::pair<Image, EraseMask> random_erase(const Image& x, Rng& rng, const EraseParams& params);

}  // namespace cenet
