#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "claifo/check.hpp"

namespace claifo {

// Planar float image, channel-major (CHW), values in [0, 1].
struct Frame {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> data;  // size channels * height * width

  Frame() = default;
  Frame(int c, int h, int w, float fill = 0.0f)
      : channels(c), height(h), width(w), data(static_cast<size_t>(c) * h * w, fill) {
    require(c > 0 && h > 0 && w > 0, "Frame dims must be positive, got ", c, "x", h, "x", w);
  }

  size_t size() const { return data.size(); }

  float& at(int c, int y, int x) {
    return data[(static_cast<size_t>(c) * height + y) * width + x];
  }
  float at(int c, int y, int x) const {
    return data[(static_cast<size_t>(c) * height + y) * width + x];
  }

  void clamp01() {
    for (float& v : data) v = std::clamp(v, 0.0f, 1.0f);
  }

  bool same_shape(const Frame& other) const {
    return channels == other.channels && height == other.height && width == other.width;
  }
};

// Lossy u8 round-trip used by the replay buffer and episode files.
inline std::vector<uint8_t> frame_to_u8(const Frame& f) {
  std::vector<uint8_t> out(f.size());
  for (size_t i = 0; i < f.size(); ++i) {
    const float v = std::clamp(f.data[i], 0.0f, 1.0f);
    out[i] = static_cast<uint8_t>(std::lround(v * 255.0f));
  }
  return out;
}

inline Frame frame_from_u8(const uint8_t* bytes, int c, int h, int w) {
  Frame f(c, h, w);
  for (size_t i = 0; i < f.size(); ++i) f.data[i] = static_cast<float>(bytes[i]) / 255.0f;
  return f;
}

// Concatenate d frames along the channel axis (frame stacking).
inline Frame stack_frames(const std::vector<Frame>& frames) {
  require(!frames.empty(), "stack_frames: empty input");
  const Frame& first = frames.front();
  int total_c = 0;
  for (const Frame& f : frames) {
    require(f.height == first.height && f.width == first.width,
            "stack_frames: mismatched spatial dims");
    total_c += f.channels;
  }
  Frame out(total_c, first.height, first.width);
  size_t off = 0;
  for (const Frame& f : frames) {
    std::copy(f.data.begin(), f.data.end(), out.data.begin() + off);
    off += f.size();
  }
  return out;
}

// Split a stacked frame back into d equal chunks of `chunk_channels` each.
inline std::vector<Frame> unstack_frames(const Frame& stacked, int chunk_channels) {
  require(chunk_channels > 0 && stacked.channels % chunk_channels == 0,
          "unstack_frames: channels ", stacked.channels, " not divisible by ", chunk_channels);
  const int d = stacked.channels / chunk_channels;
  std::vector<Frame> out;
  out.reserve(d);
  const size_t chunk = static_cast<size_t>(chunk_channels) * stacked.height * stacked.width;
  for (int i = 0; i < d; ++i) {
    Frame f(chunk_channels, stacked.height, stacked.width);
    std::copy(stacked.data.begin() + i * chunk, stacked.data.begin() + (i + 1) * chunk,
              f.data.begin());
    out.push_back(std::move(f));
  }
  return out;
}

}  // namespace claifo
