#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "claifo/check.hpp"
#include "claifo/image.hpp"
#include "claifo/rng.hpp"

namespace claifo {

// The ten operations of the augmentation table: seven color transformations
// followed by three affine ones.
enum class AugmentKind {
  brightness,
  contrast,
  saturation,
  hue,
  grayscale,
  gaussian_blur,
  invert,
  hflip,
  vflip,
  resized_crop,
};

inline const char* to_string(AugmentKind k) {
  switch (k) {
    case AugmentKind::brightness: return "brightness";
    case AugmentKind::contrast: return "contrast";
    case AugmentKind::saturation: return "saturation";
    case AugmentKind::hue: return "hue";
    case AugmentKind::grayscale: return "grayscale";
    case AugmentKind::gaussian_blur: return "gaussian_blur";
    case AugmentKind::invert: return "invert";
    case AugmentKind::hflip: return "hflip";
    case AugmentKind::vflip: return "vflip";
    case AugmentKind::resized_crop: return "resized_crop";
  }
  throw input_error("bad AugmentKind");
}

inline AugmentKind augment_kind_from_string(const std::string& s) {
  for (int i = 0; i <= static_cast<int>(AugmentKind::resized_crop); ++i) {
    const auto k = static_cast<AugmentKind>(i);
    if (s == to_string(k)) return k;
  }
  throw input_error("unknown augment kind: " + s);
}

// One row of the table: which op, its parameter range (where applicable), and
// how often it fires. Ranges are artifact choices (the reference list leaves
// them open); they straddle the mismatch magnitudes the env themes produce.
struct AugmentOp {
  AugmentKind kind;
  double lo = 0.0;
  double hi = 0.0;
  double apply_prob = 1.0;
};

inline AugmentOp default_op(AugmentKind k) {
  switch (k) {
    case AugmentKind::brightness: return {k, 0.3, 1.7, 1.0};
    case AugmentKind::contrast: return {k, 0.5, 1.5, 1.0};
    case AugmentKind::saturation: return {k, 0.5, 1.5, 1.0};
    case AugmentKind::hue: return {k, -0.25, 0.25, 1.0};
    case AugmentKind::grayscale: return {k, 0.0, 0.0, 0.2};
    case AugmentKind::gaussian_blur: return {k, 0.1, 1.0, 0.5};
    case AugmentKind::invert: return {k, 0.0, 0.0, 0.1};
    case AugmentKind::hflip: return {k, 0.0, 0.0, 0.5};
    case AugmentKind::vflip: return {k, 0.0, 0.0, 0.5};
    case AugmentKind::resized_crop: return {k, 0.6, 1.0, 1.0};
  }
  throw input_error("bad AugmentKind");
}

struct AugmentPipeline {
  std::string preset = "none";
  std::vector<AugmentOp> ops;
};

// preset light = brightness only; color = the seven color rows; full = all ten.
inline AugmentPipeline make_pipeline(const std::string& preset) {
  AugmentPipeline p;
  p.preset = preset;
  auto add = [&](AugmentKind k) { p.ops.push_back(default_op(k)); };
  if (preset == "none") {
    // empty
  } else if (preset == "light") {
    add(AugmentKind::brightness);
  } else if (preset == "color" || preset == "full") {
    add(AugmentKind::brightness);
    add(AugmentKind::contrast);
    add(AugmentKind::saturation);
    add(AugmentKind::hue);
    add(AugmentKind::grayscale);
    add(AugmentKind::gaussian_blur);
    add(AugmentKind::invert);
    if (preset == "full") {
      add(AugmentKind::hflip);
      add(AugmentKind::vflip);
      add(AugmentKind::resized_crop);
    }
  } else {
    throw input_error("unknown augmentation preset: " + preset);
  }
  return p;
}

inline void to_json(nlohmann::json& j, const AugmentOp& op) {
  j = nlohmann::json{{"kind", to_string(op.kind)},
                     {"params", {{"lo", op.lo}, {"hi", op.hi}}},
                     {"apply_prob", op.apply_prob}};
}

inline void to_json(nlohmann::json& j, const AugmentPipeline& p) {
  j = nlohmann::json{{"preset", p.preset}, {"overrides", p.ops}};
}

inline void from_json(const nlohmann::json& j, AugmentPipeline& p) {
  p = make_pipeline(j.at("preset").get<std::string>());
  if (!j.contains("overrides")) return;
  for (const auto& o : j.at("overrides")) {
    const auto kind = augment_kind_from_string(o.at("kind").get<std::string>());
    for (auto& op : p.ops) {
      if (op.kind != kind) continue;
      if (o.contains("params")) {
        op.lo = o["params"].value("lo", op.lo);
        op.hi = o["params"].value("hi", op.hi);
      }
      op.apply_prob = o.value("apply_prob", op.apply_prob);
    }
  }
}

// A concrete sampled instantiation of one op.
struct OpDraw {
  AugmentKind kind;
  bool active = false;
  double value = 0.0;   // factor / shift / sigma / crop area-scale
  double off_x = 0.0;   // resized_crop only: fractional crop offsets
  double off_y = 0.0;
};

struct ParamDraw {
  std::vector<OpDraw> draws;
};

// One concrete parameter assignment per pipeline op. Every op consumes a
// fixed number of rng draws whether or not it activates, so the stream layout
// is independent of the Bernoulli outcomes.
inline ParamDraw sample_params(const AugmentPipeline& pipeline, Rng& rng) {
  ParamDraw d;
  d.draws.reserve(pipeline.ops.size());
  for (const AugmentOp& op : pipeline.ops) {
    OpDraw o;
    o.kind = op.kind;
    o.active = rng.uniform() < op.apply_prob;
    switch (op.kind) {
      case AugmentKind::brightness:
      case AugmentKind::contrast:
      case AugmentKind::saturation:
      case AugmentKind::hue:
      case AugmentKind::gaussian_blur:
        o.value = rng.uniform(op.lo, op.hi);
        break;
      case AugmentKind::resized_crop:
        o.value = rng.uniform(op.lo, op.hi);
        o.off_x = rng.uniform();
        o.off_y = rng.uniform();
        break;
      case AugmentKind::grayscale:
      case AugmentKind::invert:
      case AugmentKind::hflip:
      case AugmentKind::vflip:
        break;
    }
    d.draws.push_back(o);
  }
  return d;
}

namespace detail {

inline float luma(float r, float g, float b) {
  return 0.299f * r + 0.587f * g + 0.114f * b;  // BT.601
}

inline void rgb_to_hsv(float r, float g, float b, float& h, float& s, float& v) {
  const float maxc = std::max({r, g, b});
  const float minc = std::min({r, g, b});
  v = maxc;
  const float delta = maxc - minc;
  s = maxc > 0.0f ? delta / maxc : 0.0f;
  if (delta <= 0.0f) {
    h = 0.0f;
    return;
  }
  if (maxc == r)
    h = (g - b) / delta;
  else if (maxc == g)
    h = (b - r) / delta + 2.0f;
  else
    h = (r - g) / delta + 4.0f;
  h /= 6.0f;
  if (h < 0.0f) h += 1.0f;
}

inline void hsv_to_rgb(float h, float s, float v, float& r, float& g, float& b) {
  if (s <= 0.0f) {
    r = g = b = v;
    return;
  }
  h = h - std::floor(h);
  const float hh = h * 6.0f;
  const int i = std::min(5, static_cast<int>(hh));
  const float f = hh - i;
  const float p = v * (1.0f - s);
  const float q = v * (1.0f - s * f);
  const float t = v * (1.0f - s * (1.0f - f));
  switch (i) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
}

// Reflect index into [0, n) without repeating the border pixel.
inline int reflect(int i, int n) {
  if (n == 1) return 0;
  if (i < 0) i = -i;
  if (i >= n) i = 2 * n - 2 - i;
  return std::clamp(i, 0, n - 1);
}

inline void gaussian_blur3(Frame& f, double sigma) {
  const double s2 = 2.0 * sigma * sigma;
  float w0 = 1.0f, w1 = static_cast<float>(std::exp(-1.0 / s2));
  const float norm = w0 + 2.0f * w1;
  w0 /= norm;
  w1 /= norm;
  const int h = f.height, w = f.width;
  std::vector<float> tmp(static_cast<size_t>(h) * w);
  for (int c = 0; c < f.channels; ++c) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        tmp[static_cast<size_t>(y) * w + x] =
            w1 * f.at(c, y, reflect(x - 1, w)) + w0 * f.at(c, y, x) +
            w1 * f.at(c, y, reflect(x + 1, w));
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        f.at(c, y, x) = w1 * tmp[static_cast<size_t>(reflect(y - 1, h)) * w + x] +
                        w0 * tmp[static_cast<size_t>(y) * w + x] +
                        w1 * tmp[static_cast<size_t>(reflect(y + 1, h)) * w + x];
  }
}

// Bilinear sample with clamped edges; (sx, sy) in pixel-center coordinates.
inline float bilinear(const Frame& f, int c, double sy, double sx) {
  const int x0 = static_cast<int>(std::floor(sx));
  const int y0 = static_cast<int>(std::floor(sy));
  const double fx = sx - x0, fy = sy - y0;
  auto px = [&](int y, int x) {
    return f.at(c, std::clamp(y, 0, f.height - 1), std::clamp(x, 0, f.width - 1));
  };
  const double top = (1.0 - fx) * px(y0, x0) + fx * px(y0, x0 + 1);
  const double bot = (1.0 - fx) * px(y0 + 1, x0) + fx * px(y0 + 1, x0 + 1);
  return static_cast<float>((1.0 - fy) * top + fy * bot);
}

inline void apply_op(const OpDraw& d, Frame& f) {
  const int h = f.height, w = f.width;
  require(f.channels == 3, "augment ops expect RGB frames, got ", f.channels, " channels");
  switch (d.kind) {
    case AugmentKind::brightness: {
      const float k = static_cast<float>(d.value);
      for (float& v : f.data) v *= k;
      break;
    }
    case AugmentKind::contrast: {
      // Blend toward the frame's mean luminance.
      double mean = 0.0;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) mean += luma(f.at(0, y, x), f.at(1, y, x), f.at(2, y, x));
      const float mu = static_cast<float>(mean / (static_cast<double>(h) * w));
      const float k = static_cast<float>(d.value);
      for (float& v : f.data) v = mu + k * (v - mu);
      break;
    }
    case AugmentKind::saturation: {
      const float k = static_cast<float>(d.value);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const float l = luma(f.at(0, y, x), f.at(1, y, x), f.at(2, y, x));
          for (int c = 0; c < 3; ++c) f.at(c, y, x) = l + k * (f.at(c, y, x) - l);
        }
      break;
    }
    case AugmentKind::hue: {
      const float shift = static_cast<float>(d.value);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          float hh, ss, vv;
          rgb_to_hsv(f.at(0, y, x), f.at(1, y, x), f.at(2, y, x), hh, ss, vv);
          hsv_to_rgb(hh + shift, ss, vv, f.at(0, y, x), f.at(1, y, x), f.at(2, y, x));
        }
      break;
    }
    case AugmentKind::grayscale: {
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const float l = luma(f.at(0, y, x), f.at(1, y, x), f.at(2, y, x));
          f.at(0, y, x) = f.at(1, y, x) = f.at(2, y, x) = l;
        }
      break;
    }
    case AugmentKind::gaussian_blur:
      gaussian_blur3(f, d.value);
      break;
    case AugmentKind::invert:
      for (float& v : f.data) v = 1.0f - v;
      break;
    case AugmentKind::hflip:
      for (int c = 0; c < 3; ++c)
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w / 2; ++x) std::swap(f.at(c, y, x), f.at(c, y, w - 1 - x));
      break;
    case AugmentKind::vflip:
      for (int c = 0; c < 3; ++c)
        for (int y = 0; y < h / 2; ++y)
          for (int x = 0; x < w; ++x) std::swap(f.at(c, y, x), f.at(c, h - 1 - y, x));
      break;
    case AugmentKind::resized_crop: {
      // d.value is an area fraction; crop a square of that area at the drawn
      // offset, then resize back to the full frame bilinearly.
      const double side = std::sqrt(d.value);
      const double ch = side * h, cw = side * w;
      const double oy = d.off_y * (h - ch), ox = d.off_x * (w - cw);
      Frame out(3, h, w);
      for (int c = 0; c < 3; ++c)
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) {
            const double sy = oy + (y + 0.5) * ch / h - 0.5;
            const double sx = ox + (x + 0.5) * cw / w - 0.5;
            out.at(c, y, x) = bilinear(f, c, sy, sx);
          }
      f = std::move(out);
      break;
    }
  }
}

}  // namespace detail

// Apply one draw to a whole stack of frames: temporal consistency means every
// frame sees the same parameters. Output is clamped to [0,1].
inline std::vector<Frame> apply(const ParamDraw& draw, const std::vector<Frame>& stack) {
  require(!stack.empty(), "augment apply: empty stack");
  std::vector<Frame> out = stack;
  for (Frame& f : out) {
    for (const OpDraw& d : draw.draws)
      if (d.active) detail::apply_op(d, f);
    f.clamp01();
  }
  return out;
}

// Same, for d frames packed along the channel axis (3d channels). The call is
// qualified: plain `apply` would let ADL drag in std::apply via std::vector.
inline Frame apply_stacked(const ParamDraw& draw, const Frame& stacked) {
  auto frames = unstack_frames(stacked, 3);
  return stack_frames(claifo::apply(draw, frames));
}

// Two independently-drawn views of the same stack (the positive pair).
inline std::pair<Frame, Frame> positive_pair(const AugmentPipeline& pipeline, const Frame& stacked,
                                             Rng& rng) {
  const ParamDraw a = sample_params(pipeline, rng);
  const ParamDraw b = sample_params(pipeline, rng);
  return {apply_stacked(a, stacked), apply_stacked(b, stacked)};
}

}  // namespace claifo
