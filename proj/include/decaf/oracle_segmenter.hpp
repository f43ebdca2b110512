#pragma once

// Deterministic test double for a promptable video segmenter. Frames are
// 8-bit label images (pixel value = region id, 0 = background). A prompt
// returns the 4-connected region under the point(s); propagation returns,
// per frame, every pixel carrying one of the prompted region ids.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "decaf/png_io.hpp"
#include "decaf/protocol.hpp"

namespace decaf {

class OracleSegmenter {
 public:
  explicit OracleSegmenter(std::vector<LabelImage> frames) : frames_(std::move(frames)) {
    if (frames_.empty()) throw ValidationError("oracle segmenter needs at least one frame");
    for (const auto& f : frames_)
      if (!f.same_shape(frames_.front())) throw ValidationError("label frames differ in size");
  }

  static OracleSegmenter from_directory(const std::filesystem::path& dir) {
    return OracleSegmenter(read_png_sequence(dir));
  }

  std::size_t num_frames() const { return frames_.size(); }
  std::size_t height() const { return frames_.front().height(); }
  std::size_t width() const { return frames_.front().width(); }

  FrameMask prompt(int frame, const std::vector<Point>& points) {
    check_frame(frame);
    const LabelImage& labels = frames_[static_cast<std::size_t>(frame)];
    for (const auto& p : points)
      if (!(p.x >= 0 && p.y >= 0 && p.x < double(width()) && p.y < double(height())))
        throw SegmenterError("out_of_bounds", "point outside frame bounds");
    tracked_.clear();
    FrameMask out{frame, BinaryMask(height(), width(), 0), 0.0};
    for (const auto& p : points) {
      const auto x = static_cast<std::size_t>(std::floor(p.x));
      const auto y = static_cast<std::size_t>(std::floor(p.y));
      const std::uint8_t id = labels(y, x);
      if (id == 0) continue;
      tracked_.insert(id);
      flood_fill(labels, y, x, id, out.mask);
    }
    out.confidence = tracked_.empty() ? 0.0 : 1.0;
    return out;
  }

  std::vector<FrameMask> propagate(const std::vector<int>& frames) const {
    std::vector<FrameMask> out;
    for (int f : frames) {
      check_frame(f);
      const LabelImage& labels = frames_[static_cast<std::size_t>(f)];
      FrameMask m{f, BinaryMask(height(), width(), 0), 0.0};
      auto dst = m.mask.data();
      const auto src = labels.data();
      for (std::size_t i = 0; i < src.size(); ++i) dst[i] = tracked_.contains(src[i]) ? 1 : 0;
      m.confidence = count_set(dst) > 0 ? 1.0 : 0.0;
      out.push_back(std::move(m));
    }
    return out;
  }

 private:
  void check_frame(int f) const {
    if (f < 0 || static_cast<std::size_t>(f) >= frames_.size())
      throw SegmenterError("out_of_bounds", "frame " + std::to_string(f) + " out of range");
  }

  static void flood_fill(const LabelImage& labels, std::size_t y0, std::size_t x0, std::uint8_t id,
                         BinaryMask& mask) {
    std::vector<std::pair<std::size_t, std::size_t>> stack{{y0, x0}};
    while (!stack.empty()) {
      const auto [y, x] = stack.back();
      stack.pop_back();
      if (mask(y, x) || labels(y, x) != id) continue;
      mask(y, x) = 1;
      if (y > 0) stack.emplace_back(y - 1, x);
      if (y + 1 < labels.height()) stack.emplace_back(y + 1, x);
      if (x > 0) stack.emplace_back(y, x - 1);
      if (x + 1 < labels.width()) stack.emplace_back(y, x + 1);
    }
  }

  std::vector<LabelImage> frames_;
  std::set<std::uint8_t> tracked_;
};

/// Protocol handler wrapping OracleSegmenter: one request line in, the
/// reply lines out. Malformed input yields an error reply; the server stays usable.
class OracleServer {
 public:
  std::vector<std::string> handle(const std::string& line) {
    try {
      return dispatch(msg::parse(line));
    } catch (const SegmenterError& e) {
      return {msg::error(e.code(), e.what())};
    } catch (const std::exception& e) {
      return {msg::error("internal", e.what())};
    }
  }

 private:
  enum class State { uninitialized, idle, prompted };

  std::vector<std::string> dispatch(const msg::Json& j) {
    const auto type = j.at("type").get<std::string>();
    try {
      if (type == "init") return on_init(j);
      if (!seg_) throw SegmenterError("state", type + " before init");
      if (type == "prompt") return on_prompt(j);
      if (type == "propagate") return on_propagate(j);
    } catch (const nlohmann::json::exception& e) {
      throw SegmenterError("bad_request", e.what());
    }
    throw SegmenterError("bad_request", "unknown message type '" + type + "'");
  }

  std::vector<std::string> on_init(const msg::Json& j) {
    if (j.at("format_version").get<int>() != kProtocolVersion)
      throw SegmenterError("unsupported_version",
                           "format_version " + j.at("format_version").dump() + " not supported");
    const auto dir = j.at("frames_dir").get<std::string>();
    try {
      seg_.emplace(OracleSegmenter::from_directory(dir));
    } catch (const FormatError& e) {
      seg_.reset();
      throw SegmenterError("frames_unreadable", e.what());
    }
    VideoMeta meta{dir, seg_->num_frames(), seg_->height(), seg_->width()};
    const std::pair<const char*, std::size_t> dims[] = {
        {"num_frames", meta.num_frames}, {"height", meta.height}, {"width", meta.width}};
    for (const auto& [key, actual] : dims) {
      if (j.contains(key) && j.at(key).get<std::size_t>() != actual) {
        seg_.reset();
        state_ = State::uninitialized;
        throw SegmenterError("meta_mismatch", std::string(key) + " differs from " + dir);
      }
    }
    state_ = State::idle;
    return {msg::ready(meta)};
  }

  std::vector<std::string> on_prompt(const msg::Json& j) {
    const int frame = j.at("frame").get<int>();
    std::vector<Point> points;
    for (const auto& p : j.at("points")) points.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    if (points.empty()) throw SegmenterError("bad_request", "no points given");
    if (j.contains("labels"))
      for (const auto& l : j.at("labels"))
        if (l.get<int>() != 1)
          throw SegmenterError("bad_request", "only positive point labels are supported");
    const auto mask = seg_->prompt(frame, points);
    state_ = State::prompted;
    return {msg::mask(mask)};
  }

  std::vector<std::string> on_propagate(const msg::Json& j) {
    if (state_ != State::prompted) throw SegmenterError("state", "propagate before prompt");
    const auto frames = j.at("frames").get<std::vector<int>>();
    std::vector<std::string> out;
    for (const auto& m : seg_->propagate(frames)) out.push_back(msg::mask(m));
    out.push_back(msg::done());
    state_ = State::idle;
    return out;
  }

  std::optional<OracleSegmenter> seg_;
  State state_ = State::uninitialized;
};

}  // namespace decaf
