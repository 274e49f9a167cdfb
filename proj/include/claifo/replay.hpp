#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "claifo/autodiff.hpp"
#include "claifo/check.hpp"
#include "claifo/checkpoint.hpp"
#include "claifo/env.hpp"
#include "claifo/image.hpp"
#include "claifo/rng.hpp"

namespace claifo {

// Ring buffer of agent interactions. Each record holds one frame plus the
// action that *produced* it (so the action of transition t lives on record
// t+1), the reward received on arrival, and its episode id. Frames are stored
// quantized to u8 — error ≤ 1/510 per channel — and dequantized on sampling.
class AgentBuffer {
 public:
  struct TransitionBatch {
    Mat<float> obs;       // B × (3d·H·W), stacks ending at t
    Mat<float> actions;   // B × |A|, the action taken at t
    Mat<float> rewards;   // B × 1, env reward for the step t → t+1
    Mat<float> next_obs;  // B × (3d·H·W), stacks ending at t+1
  };

  AgentBuffer(size_t capacity, int height, int width, int action_dim)
      : capacity_(capacity), h_(height), w_(width), adim_(action_dim) {
    require(capacity >= 2, "buffer capacity must be >= 2");
    slots_.resize(capacity);
  }

  // Episode starts are marked by pushing the reset frame with a zero action;
  // `done` marks the record that ends an episode.
  void push(const Frame& frame, const Mat<float>& action, bool done, float reward = 0.0f) {
    require(frame.channels == 3 && frame.height == h_ && frame.width == w_,
            "push: frame shape mismatch");
    require(action.rows() == 1 && action.cols() == adim_, "push: action shape mismatch");
    Record& r = slots_[next_ % capacity_];
    r.frame = frame_to_u8(frame);
    r.action.assign(action.data(), action.data() + adim_);
    r.reward = reward;
    r.ep = ep_;
    r.ep_start = ep_start_;
    ++next_;
    if (next_ - first_ > capacity_) first_ = next_ - capacity_;
    if (done) {
      ++ep_;
      ep_start_ = next_;
    }
  }

  size_t size() const { return next_ - first_; }

  // Number of adjacent same-episode record pairs currently stored.
  size_t transitions() const {
    size_t n = 0;
    for (uint64_t t = first_; t + 1 < next_; ++t)
      if (rec(t).ep == rec(t + 1).ep) ++n;
    return n;
  }

  TransitionBatch sample_transitions(int batch, int d, Rng& rng) const {
    require(batch >= 1 && d >= 1, "sample_transitions: bad batch/d");
    require(size() >= 2, "sample_transitions: buffer has no complete step");
    TransitionBatch out;
    const Eigen::Index cols = static_cast<Eigen::Index>(3) * d * h_ * w_;
    out.obs.resize(batch, cols);
    out.next_obs.resize(batch, cols);
    out.actions.resize(batch, adim_);
    out.rewards.resize(batch, 1);
    for (int b = 0; b < batch; ++b) {
      uint64_t t = 0;
      bool found = false;
      for (int tries = 0; tries < 100000; ++tries) {
        t = first_ + rng.uniform_int(next_ - first_ - 1);
        if (rec(t).ep == rec(t + 1).ep) {
          found = true;
          break;
        }
      }
      ensure(found, "sample_transitions: no within-episode transition found");
      fill_stack(out.obs.row(b).data(), t, d);
      fill_stack(out.next_obs.row(b).data(), t + 1, d);
      const Record& nxt = rec(t + 1);
      for (int j = 0; j < adim_; ++j) out.actions(b, j) = nxt.action[j];
      out.rewards(b, 0) = nxt.reward;
    }
    return out;
  }

  // Stack of d frames ending at absolute index t; the stack never crosses an
  // episode start, repeating the earliest in-episode frame instead. After
  // FIFO eviction the clamp also respects the oldest retained record.
  void fill_stack(float* dst, uint64_t t, int d) const {
    const uint64_t lo = std::max(rec(t).ep_start, first_);
    const size_t frame_len = static_cast<size_t>(3) * h_ * w_;
    for (int k = 0; k < d; ++k) {
      const int64_t want = static_cast<int64_t>(t) - (d - 1 - k);
      const uint64_t idx = want < static_cast<int64_t>(lo) ? lo : static_cast<uint64_t>(want);
      const auto& bytes = rec(idx).frame;
      float* seg = dst + static_cast<size_t>(k) * frame_len;
      for (size_t i = 0; i < frame_len; ++i) seg[i] = static_cast<float>(bytes[i]) / 255.0f;
    }
  }

  uint64_t first_index() const { return first_; }
  uint64_t next_index() const { return next_; }

 private:
  struct Record {
    std::vector<uint8_t> frame;
    std::vector<float> action;
    float reward = 0.0f;
    uint64_t ep = 0;
    uint64_t ep_start = 0;
  };

  const Record& rec(uint64_t t) const {
    require(t >= first_ && t < next_, "record index out of window");
    return slots_[t % capacity_];
  }

  size_t capacity_;
  int h_, w_, adim_;
  std::vector<Record> slots_;
  uint64_t first_ = 0, next_ = 0;
  uint64_t ep_ = 0, ep_start_ = 0;
};

// One recorded expert episode. Frames are planar CHW u8; actions, rewards and
// true states ride along for auditing but the sampling API never surfaces
// them.
struct DemoEpisode {
  int height = 0, width = 0;
  RewardMode reward_mode = RewardMode::dense;
  std::vector<std::vector<uint8_t>> frames;  // T frames (the terminal frame is dropped)
  Mat<float> actions;                        // T × |A|
  std::vector<float> rewards;                // T
  Mat<float> states;                         // T × 4 (p, v)
};

// Episode file format (bit-exact, little-endian):
//   magic "CLAIFO-EP-1" (11 bytes)
//   u32 T, u16 H, u16 W, u8 C=3, u8 reward_mode (0 dense / 1 sparse)
//   T·C·H·W u8 frame bytes (planar CHW per frame)
//   T·|A| f32 actions, T f32 rewards, T·4 f32 true states
// |A| is recovered from the file length.
constexpr char kEpisodeMagic[] = "CLAIFO-EP-1";
constexpr size_t kEpisodeMagicLen = 11;

inline void write_episode(const std::string& path, const DemoEpisode& ep) {
  require(!ep.frames.empty(), "write_episode: empty episode");
  const uint32_t t_len = static_cast<uint32_t>(ep.frames.size());
  require(ep.actions.rows() == t_len && static_cast<uint32_t>(ep.rewards.size()) == t_len &&
              ep.states.rows() == t_len && ep.states.cols() == 4,
          "write_episode: field lengths disagree");
  std::ofstream os(path, std::ios::binary);
  require(os.good(), "cannot open episode file for writing: ", path);
  os.write(kEpisodeMagic, kEpisodeMagicLen);
  detail::write_le<uint32_t>(os, t_len);
  detail::write_le<uint16_t>(os, static_cast<uint16_t>(ep.height));
  detail::write_le<uint16_t>(os, static_cast<uint16_t>(ep.width));
  os.put(3);
  os.put(ep.reward_mode == RewardMode::dense ? 0 : 1);
  const size_t frame_len = static_cast<size_t>(3) * ep.height * ep.width;
  for (const auto& f : ep.frames) {
    require(f.size() == frame_len, "write_episode: bad frame size");
    os.write(reinterpret_cast<const char*>(f.data()), static_cast<std::streamsize>(f.size()));
  }
  for (Eigen::Index i = 0; i < ep.actions.rows(); ++i)
    for (Eigen::Index j = 0; j < ep.actions.cols(); ++j)
      detail::write_f32_le(os, ep.actions(i, j));
  for (float r : ep.rewards) detail::write_f32_le(os, r);
  for (Eigen::Index i = 0; i < ep.states.rows(); ++i)
    for (Eigen::Index j = 0; j < 4; ++j) detail::write_f32_le(os, ep.states(i, j));
  ensure(os.good(), "episode write failed: ", path);
}

inline DemoEpisode read_episode(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(is.good(), "cannot open episode file: ", path);
  char magic[kEpisodeMagicLen];
  is.read(magic, kEpisodeMagicLen);
  require(is.good() && std::memcmp(magic, kEpisodeMagic, kEpisodeMagicLen) == 0,
          "not an episode file (bad magic): ", path);
  DemoEpisode ep;
  const uint32_t t_len = detail::read_le<uint32_t>(is);
  ep.height = detail::read_le<uint16_t>(is);
  ep.width = detail::read_le<uint16_t>(is);
  const int c = is.get();
  require(c == 3, "episode file has ", c, " channels; expected 3");
  const int rm = is.get();
  require(rm == 0 || rm == 1, "bad reward_mode byte");
  ep.reward_mode = rm == 0 ? RewardMode::dense : RewardMode::sparse;
  require(t_len > 0 && ep.height > 0 && ep.width > 0, "corrupt episode header");

  const size_t frame_len = static_cast<size_t>(3) * ep.height * ep.width;
  const auto fsize = std::filesystem::file_size(path);
  const size_t header = kEpisodeMagicLen + 4 + 2 + 2 + 1 + 1;
  const size_t tail = fsize - header - static_cast<size_t>(t_len) * frame_len;
  require(tail % (4 * t_len) == 0, "episode file length inconsistent: ", path);
  const size_t adim = tail / (4 * t_len) - 1 - 4;  // minus rewards and states
  require(adim >= 1, "episode file too short for any actions");

  ep.frames.resize(t_len);
  for (uint32_t t = 0; t < t_len; ++t) {
    ep.frames[t].resize(frame_len);
    is.read(reinterpret_cast<char*>(ep.frames[t].data()),
            static_cast<std::streamsize>(frame_len));
  }
  ep.actions.resize(t_len, static_cast<Eigen::Index>(adim));
  for (uint32_t i = 0; i < t_len; ++i)
    for (size_t j = 0; j < adim; ++j) ep.actions(i, j) = detail::read_f32_le(is);
  ep.rewards.resize(t_len);
  for (uint32_t i = 0; i < t_len; ++i) ep.rewards[i] = detail::read_f32_le(is);
  ep.states.resize(t_len, 4);
  for (uint32_t i = 0; i < t_len; ++i)
    for (int j = 0; j < 4; ++j) ep.states(i, j) = detail::read_f32_le(is);
  require(is.good(), "truncated episode file: ", path);
  return ep;
}

// Expert demonstrations, observation-only at the API. The returned pair type
// deliberately has no action field: that absence is the IfO premise.
class DemoSet {
 public:
  struct PairBatch {
    Mat<float> obs;
    Mat<float> next_obs;
  };

  void add(DemoEpisode ep) {
    require(ep.frames.size() >= 2, "demo episode needs at least 2 frames");
    if (!episodes_.empty())
      require(ep.height == episodes_[0].height && ep.width == episodes_[0].width,
              "demo episodes disagree on frame shape");
    episodes_.push_back(std::move(ep));
  }

  static DemoSet load_dir(const std::string& dir) {
    DemoSet set;
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir))
      if (e.path().extension() == ".bin") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) set.add(read_episode(f.string()));
    require(!set.episodes_.empty(), "no episode files (*.bin) in ", dir);
    return set;
  }

  size_t count() const { return episodes_.size(); }
  const DemoEpisode& episode(size_t i) const { return episodes_.at(i); }

  // Uniform over episodes, then uniform over that episode's transitions.
  PairBatch sample_pairs(int batch, int d, Rng& rng) const {
    require(!episodes_.empty(), "sample_pairs: empty demo set");
    require(batch >= 1 && d >= 1, "sample_pairs: bad batch/d");
    const int h = episodes_[0].height, w = episodes_[0].width;
    const Eigen::Index cols = static_cast<Eigen::Index>(3) * d * h * w;
    PairBatch out;
    out.obs.resize(batch, cols);
    out.next_obs.resize(batch, cols);
    for (int b = 0; b < batch; ++b) {
      const auto& ep = episodes_[rng.uniform_int(episodes_.size())];
      const uint64_t t = rng.uniform_int(ep.frames.size() - 1);
      fill_stack(ep, out.obs.row(b).data(), t, d);
      fill_stack(ep, out.next_obs.row(b).data(), t + 1, d);
    }
    return out;
  }

  // Mean per-frame byte value across all demos — a cheap corpus fingerprint.
  double mean_intensity() const {
    double acc = 0.0;
    size_t n = 0;
    for (const auto& ep : episodes_)
      for (const auto& f : ep.frames) {
        for (uint8_t v : f) acc += v;
        n += f.size();
      }
    return n ? acc / (255.0 * static_cast<double>(n)) : 0.0;
  }

 private:
  static void fill_stack(const DemoEpisode& ep, float* dst, uint64_t t, int d) {
    const size_t frame_len = ep.frames[0].size();
    for (int k = 0; k < d; ++k) {
      const int64_t want = static_cast<int64_t>(t) - (d - 1 - k);
      const uint64_t idx = want < 0 ? 0 : static_cast<uint64_t>(want);
      const auto& bytes = ep.frames[idx];
      float* seg = dst + static_cast<size_t>(k) * frame_len;
      for (size_t i = 0; i < frame_len; ++i) seg[i] = static_cast<float>(bytes[i]) / 255.0f;
    }
  }

  std::vector<DemoEpisode> episodes_;
};

}  // namespace claifo
