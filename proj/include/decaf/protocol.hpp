#pragma once

// Newline-delimited JSON protocol spoken with a promptable video segmenter.
// See docs/protocol.md for the message catalogue.

#include <chrono>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "decaf/error.hpp"
#include "decaf/rle.hpp"
#include "decaf/tensor.hpp"

namespace decaf {

inline constexpr int kProtocolVersion = 1;

struct VideoMeta {
  std::string frames_dir;
  std::size_t num_frames = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  bool operator==(const VideoMeta&) const = default;
};

/// Pixel coordinate; x is the column, y the row.
struct Point {
  double x = 0.0;
  double y = 0.0;
};

struct FrameMask {
  int frame = 0;
  BinaryMask mask;
  double confidence = 0.0;

  bool operator==(const FrameMask&) const = default;
};

namespace msg {

using Json = nlohmann::ordered_json;

inline std::string line(const Json& j) { return j.dump(); }

inline std::string init(const VideoMeta& m) {
  return line(Json{{"type", "init"},
                   {"format_version", kProtocolVersion},
                   {"frames_dir", m.frames_dir},
                   {"num_frames", m.num_frames},
                   {"height", m.height},
                   {"width", m.width}});
}

inline std::string ready(const VideoMeta& m) {
  return line(Json{{"type", "ready"},
                   {"format_version", kProtocolVersion},
                   {"num_frames", m.num_frames},
                   {"height", m.height},
                   {"width", m.width}});
}

inline std::string prompt(int frame, const std::vector<Point>& points) {
  Json pts = Json::array();
  for (const auto& p : points) pts.push_back({p.x, p.y});
  return line(Json{{"type", "prompt"}, {"frame", frame}, {"points", pts}});
}

inline std::string propagate(const std::vector<int>& frames) {
  return line(Json{{"type", "propagate"}, {"frames", frames}});
}

inline std::string mask(const FrameMask& m) {
  return line(Json{{"type", "mask"},
                   {"frame", m.frame},
                   {"rle", rle_to_json(rle_encode(m.mask))},
                   {"confidence", m.confidence}});
}

inline std::string done() { return line(Json{{"type", "done"}}); }

inline std::string error(const std::string& code, const std::string& message) {
  return line(Json{{"type", "error"}, {"code", code}, {"message", message}});
}

inline Json parse(const std::string& text) {
  try {
    Json j = Json::parse(text);
    if (!j.is_object() || !j.contains("type") || !j.at("type").is_string())
      throw SegmenterError("bad_message", "message without a type field");
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw SegmenterError("bad_message", e.what());
  }
}

inline FrameMask decode_mask(const Json& j) {
  try {
    FrameMask m;
    m.frame = j.at("frame").get<int>();
    m.mask = rle_decode(rle_from_json(j.at("rle")));
    m.confidence = j.at("confidence").get<double>();
    if (!std::isfinite(m.confidence)) throw SegmenterError("bad_message", "non-finite confidence");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw SegmenterError("bad_message", e.what());
  } catch (const FormatError& e) {
    throw SegmenterError("bad_message", e.what());
  }
}

}  // namespace msg

/// Bidirectional line channel to a segmenter.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual void send(const std::string& line) = 0;
  /// Next line, or nullopt once the peer has closed the channel.
  /// Throws SegmenterError("timeout", ...) when nothing arrives in time.
  virtual std::optional<std::string> receive(std::chrono::milliseconds timeout) = 0;
};

/// Client side of one segmenter session.
///
/// State runs idle -> prompted -> propagating -> idle; a prompt may also be
/// replaced by another prompt. Exactly one request is in flight at a time.
struct SessionTimeouts {
  std::chrono::milliseconds handshake{30000};
  std::chrono::milliseconds request{300000};
};

class SegmenterSession {
 public:
  enum class State { disconnected, idle, prompted, propagating };
  using Timeouts = SessionTimeouts;

  explicit SegmenterSession(Transport& transport, Timeouts timeouts = {})
      : transport_(transport), timeouts_(timeouts) {}

  /// Sends init and waits for the ready acknowledgement.
  VideoMeta start(const VideoMeta& meta) {
    if (state_ != State::disconnected) throw SegmenterError("state", "session already started");
    transport_.send(msg::init(meta));
    const auto reply = expect_reply(timeouts_.handshake);
    const auto type = reply.at("type").get<std::string>();
    if (type != "ready") throw SegmenterError("protocol", "expected ready, got " + type);
    VideoMeta echoed = meta;
    try {
      if (reply.at("format_version").get<int>() != kProtocolVersion)
        throw SegmenterError("unsupported_version", "segmenter speaks another protocol version");
      echoed.num_frames = reply.at("num_frames").get<std::size_t>();
      echoed.height = reply.at("height").get<std::size_t>();
      echoed.width = reply.at("width").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
      throw SegmenterError("bad_message", e.what());
    }
    if (echoed.num_frames != meta.num_frames || echoed.height != meta.height ||
        echoed.width != meta.width)
      throw SegmenterError("meta_mismatch", "segmenter reports different video dimensions");
    meta_ = echoed;
    state_ = State::idle;
    return echoed;
  }

  FrameMask prompt_points(int frame, const std::vector<Point>& points) {
    if (state_ != State::idle && state_ != State::prompted)
      throw SegmenterError("state", "prompt requires an idle or prompted session");
    if (frame < 0 || static_cast<std::size_t>(frame) >= meta_.num_frames)
      throw SegmenterError("out_of_bounds", "frame " + std::to_string(frame) + " out of range");
    if (points.empty()) throw SegmenterError("bad_request", "no points given");
    for (const auto& p : points)
      if (!(p.x >= 0.0 && p.y >= 0.0 && p.x < static_cast<double>(meta_.width) &&
            p.y < static_cast<double>(meta_.height)))
        throw SegmenterError("out_of_bounds", "point outside frame bounds");

    transport_.send(msg::prompt(frame, points));
    const auto reply = expect_reply(timeouts_.request);
    const auto m = checked_mask(reply);
    if (m.frame != frame) throw SegmenterError("protocol", "mask for unexpected frame");
    state_ = State::prompted;
    return m;
  }

  /// One mask per requested frame, in order. Any failure mid-stream discards
  /// the partial result and returns the session to idle.
  std::vector<FrameMask> propagate(const std::vector<int>& frames) {
    if (state_ != State::prompted) throw SegmenterError("state", "propagate before prompt");
    for (int f : frames)
      if (f < 0 || static_cast<std::size_t>(f) >= meta_.num_frames)
        throw SegmenterError("out_of_bounds", "frame " + std::to_string(f) + " out of range");
    transport_.send(msg::propagate(frames));
    state_ = State::propagating;
    std::vector<FrameMask> out;
    try {
      for (;;) {
        const auto reply = expect_reply(timeouts_.request);
        const auto type = reply.at("type").get<std::string>();
        if (type == "done") break;
        const auto m = checked_mask(reply);
        if (out.size() >= frames.size() || m.frame != frames[out.size()])
          throw SegmenterError("protocol", "propagation stream out of order");
        out.push_back(std::move(m));
      }
      if (out.size() != frames.size())
        throw SegmenterError("protocol", "propagation ended early");
    } catch (...) {
      state_ = State::idle;
      throw;
    }
    state_ = State::idle;
    return out;
  }

  State state() const { return state_; }
  const VideoMeta& meta() const { return meta_; }

 private:
  msg::Json expect_reply(std::chrono::milliseconds timeout) {
    const auto line = transport_.receive(timeout);
    if (!line) throw SegmenterError("disconnected", "segmenter closed the channel");
    auto j = msg::parse(*line);
    if (j.at("type") == "error") {
      throw SegmenterError(j.value("code", std::string("remote")),
                           j.value("message", std::string("unspecified remote error")));
    }
    return j;
  }

  FrameMask checked_mask(const msg::Json& reply) const {
    if (reply.at("type") != "mask") throw SegmenterError("protocol", "expected mask message");
    auto m = msg::decode_mask(reply);
    if (m.mask.height() != meta_.height || m.mask.width() != meta_.width)
      throw SegmenterError("protocol", "mask dimensions do not match session");
    return m;
  }

  Transport& transport_;
  Timeouts timeouts_;
  VideoMeta meta_;
  State state_ = State::disconnected;
};

}  // namespace decaf
