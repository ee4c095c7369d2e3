#include "cenet/imageops.hpp"

#include <cmath>

namespace cenet {

namespace {

void require_rgb(const Image& x, const char* what) {
  require(x.rank() == 3 && x.dim(0) == 3, std::string(what) + ": expected a [3,H,W] image, got " + shape_string(x.shape));
}

float clamp01(float v) { return std::clamp(v, 0.0f, 1.0f); }

void rgb_to_hsv(float r, float g, float b, float& h, float& s, float& v) {
  const float mx = std::max({r, g, b});
  const float mn = std::min({r, g, b});
  const float d = mx - mn;
  v = mx;
  s = mx > 0 ? d / mx : 0;
  if (d <= 0) {
    h = 0;
    return;
  }
  if (mx == r)
    h = 60.0f * std::fmod((g - b) / d, 6.0f);
  else if (mx == g)
    h = 60.0f * ((b - r) / d + 2.0f);
  else
    h = 60.0f * ((r - g) / d + 4.0f);
  if (h < 0) h += 360.0f;
}

void hsv_to_rgb(float h, float s, float v, float& r, float& g, float& b) {
  const float c = v * s;
  const float hp = h / 60.0f;
  const float x = c * (1.0f - std::abs(std::fmod(hp, 2.0f) - 1.0f));
  float r1 = 0, g1 = 0, b1 = 0;
  switch (static_cast<int>(std::floor(hp)) % 6) {
    case 0: r1 = c; g1 = x; break;
    case 1: r1 = x; g1 = c; break;
    case 2: g1 = c; b1 = x; break;
    case 3: g1 = x; b1 = c; break;
    case 4: r1 = x; b1 = c; break;
    default: r1 = c; b1 = x; break;
  }
  const float m = v - c;
  r = r1 + m;
  g = g1 + m;
  b = b1 + m;
}

}  // namespace

AdjustMode parse_adjust_mode(const std::string& name) {
  if (name == "brightness") return AdjustMode::brightness;
  if (name == "contrast") return AdjustMode::contrast;
  if (name == "saturation" || name == "color") return AdjustMode::saturation;
  if (name == "hue") return AdjustMode::hue;
  throw std::invalid_argument("adjust: unknown mode '" + name + "'");
}

Image adjust(const Image& x, AdjustMode mode, double value) {
  require_rgb(x, "adjust");
  const Index HW = x.dim(1) * x.dim(2);
  Image out(x.shape);
  const float* r = x.ptr();
  const float* g = r + HW;
  const float* b = g + HW;
  float* ro = out.ptr();
  float* go = ro + HW;
  float* bo = go + HW;
  const float f = static_cast<float>(value / 100.0);
  switch (mode) {
    case AdjustMode::brightness:
      require(value > 0, "adjust: brightness value must be positive");
      for (Index i = 0; i < x.size(); ++i) out.data[i] = clamp01(f * x.data[i]);
      break;
    case AdjustMode::contrast: {
      require(value > 0, "adjust: contrast value must be positive");
      double acc = 0;
      for (Index i = 0; i < HW; ++i) acc += luma(r[i], g[i], b[i]);
      const float mu = static_cast<float>(acc / static_cast<double>(HW));
      for (Index i = 0; i < x.size(); ++i) out.data[i] = clamp01(mu + f * (x.data[i] - mu));
      break;
    }
    case AdjustMode::saturation:
      require(value > 0, "adjust: saturation value must be positive");
      for (Index i = 0; i < HW; ++i) {
        const float gray = luma(r[i], g[i], b[i]);
        ro[i] = clamp01(gray + f * (r[i] - gray));
        go[i] = clamp01(gray + f * (g[i] - gray));
        bo[i] = clamp01(gray + f * (b[i] - gray));
      }
      break;
    case AdjustMode::hue: {
      float shift = static_cast<float>(std::fmod(value, 360.0));
      for (Index i = 0; i < HW; ++i) {
        float h, s, v;
        rgb_to_hsv(r[i], g[i], b[i], h, s, v);
        h = std::fmod(h + shift + 360.0f, 360.0f);
        hsv_to_rgb(h, s, v, ro[i], go[i], bo[i]);
        ro[i] = clamp01(ro[i]);
        go[i] = clamp01(go[i]);
        bo[i] = clamp01(bo[i]);
      }
      break;
    }
  }
  return out;
}

float mean_brightness(const Image& img) { return img.data.mean(); }

Image resize(const Image& x, Index height, Index width) {
  require(x.rank() == 3, "resize: expected [C,H,W]");
  require(height >= 1 && width >= 1, "resize: target size must be positive");
  if (x.dim(1) == height && x.dim(2) == width) return x;
  const auto ty = detail::lerp_taps(x.dim(1), height);
  const auto tx = detail::lerp_taps(x.dim(2), width);
  Image out({x.dim(0), height, width});
  for (Index c = 0; c < x.dim(0); ++c)
    detail::bilinear_plane(x.ptr() + c * x.dim(1) * x.dim(2), x.dim(1), x.dim(2), out.ptr() + c * height * width,
                           height, width, ty, tx);
  return out;
}

Image hflip(const Image& x) {
  require(x.rank() == 3, "hflip: expected [C,H,W]");
  Image out(x.shape);
  out.matrix() = x.matrix().rowwise().reverse();
  return out;
}

Image pad_crop(const Image& x, Index pad, Index top, Index left, Index height, Index width) {
  require(x.rank() == 3, "pad_crop: expected [C,H,W]");
  require(pad >= 0 && top >= 0 && left >= 0 && top + height <= x.dim(1) + 2 * pad && left + width <= x.dim(2) + 2 * pad,
          "pad_crop: crop window outside padded image");
  Image out({x.dim(0), height, width});
  const Index H = x.dim(1), W = x.dim(2);
  for (Index c = 0; c < x.dim(0); ++c)
    for (Index y = 0; y < height; ++y) {
      const Index sy = std::clamp<Index>(y + top - pad, 0, H - 1);
      for (Index xx = 0; xx < width; ++xx) {
        const Index sx = std::clamp<Index>(xx + left - pad, 0, W - 1);
        out.data[(c * height + y) * width + xx] = x.data[(c * H + sy) * W + sx];
      }
    }
  return out;
}

Image EraseMask::valid_map() const {
  Image m({1, height, width}, 1.0f);
  if (rect) {
    const auto& [t, l, h, w] = *rect;
    for (Index y = t; y < t + h; ++y)
      for (Index x = l; x < l + w; ++x) m.data[y * width + x] = 0.0f;
  }
  return m;
}

std::pair<Image, EraseMask> random_erase(const Image& x, Rng& rng, const EraseParams& params) {
  require(x.rank() == 3, "random_erase: expected [C,H,W]");
  const Index H = x.dim(1), W = x.dim(2);
  EraseMask mask{H, W, std::nullopt};
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (params.probability <= 0.0 || unit(rng) >= params.probability) return {x, mask};

  const double area = static_cast<double>(H * W);
  std::uniform_real_distribution<double> area_dist(params.min_area, params.max_area);
  std::uniform_real_distribution<double> log_aspect(std::log(params.min_aspect), std::log(params.max_aspect));
  for (int attempt = 0; attempt < params.max_attempts; ++attempt) {
    const double target = area_dist(rng) * area;
    const double aspect = std::exp(log_aspect(rng));
    const Index h = static_cast<Index>(std::lround(std::sqrt(target * aspect)));
    const Index w = static_cast<Index>(std::lround(std::sqrt(target / aspect)));
    if (h < 1 || w < 1 || h >= H || w >= W) continue;
    const double fraction = static_cast<double>(h * w) / area;
    if (fraction < params.min_area || fraction > params.max_area) continue;
    std::uniform_int_distribution<Index> top_dist(0, H - h), left_dist(0, W - w);
    const Index top = top_dist(rng), left = left_dist(rng);
    Image out = x;
    for (Index c = 0; c < x.dim(0); ++c) {
      // uniform noise with the channel's own mean and deviation
      const auto plane = x.data.segment(c * H * W, H * W).array();
      const float mu = plane.mean();
      const float half = std::sqrt(3.0f) * std::sqrt((plane - mu).square().mean());
      std::uniform_real_distribution<float> noise(std::max(0.0f, mu - half), std::min(1.0f, mu + half));
      for (Index yy = top; yy < top + h; ++yy)
        for (Index xx = left; xx < left + w; ++xx) out.data[(c * H + yy) * W + xx] = noise(rng);
    }
    mask.rect = std::array<Index, 4>{top, left, h, w};
    return {out, mask};
  }
  return {x, mask};
}

}  // namespace cenet
