#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "decaf/attn_dump.hpp"
#include "decaf/tensor.hpp"

namespace decaf {

enum class Normalization { raw, per_frame, global };

inline const char* to_string(Normalization n) {
  switch (n) {
    case Normalization::raw: return "raw";
    case Normalization::per_frame: return "per_frame";
    case Normalization::global: return "global";
  }
  return "raw";
}

inline Normalization parse_normalization(const std::string& s) {
  if (s == "raw") return Normalization::raw;
  if (s == "per_frame") return Normalization::per_frame;
  if (s == "global") return Normalization::global;
  throw FormatError("unknown normalization '" + s + "'");
}

/// Attention score field over (frames, patch rows, patch cols).
///
/// `scale_y`/`scale_x` give the pixel extent of one cell in the original frame.
struct GroundingMap {
  Tensor3<double> values;
  Normalization normalization = Normalization::raw;
  double scale_y = 1.0;
  double scale_x = 1.0;

  std::size_t frames() const { return values.frames(); }
  std::size_t height() const { return values.height(); }
  std::size_t width() const { return values.width(); }
};

/// Everything downstream stages need besides the values: where the frames came from.
struct MapFile {
  GroundingMap map;
  std::string video_id;
  std::vector<int> sampled_frame_indices;
  int original_frame_count = 0;
  std::size_t frame_height = 0;
  std::size_t frame_width = 0;
};

/// Single-tensor variant of the dump container.
inline void write_map(const MapFile& mf, const std::filesystem::path& path) {
  const auto& v = mf.map.values;
  if (mf.sampled_frame_indices.size() != v.frames())
    throw ValidationError("sampled frame count does not match map frames");
  std::vector<char> blob;
  blob.reserve(v.size() * 4);
  for (double x : v.data()) {
    if (!std::isfinite(x)) throw ValidationError("non-finite value in grounding map");
    detail::append_f32le(blob, static_cast<float>(x));
  }
  const auto blob_path = detail::blob_path_for(path);

  nlohmann::ordered_json meta;
  meta["format_version"] = kFormatVersion;
  meta["kind"] = "grounding_map";
  meta["dtype"] = "f32le";
  meta["blob"] = blob_path.filename().string();
  meta["shape"] = {v.frames(), v.height(), v.width()};
  meta["normalization"] = to_string(mf.map.normalization);
  meta["scale"] = {mf.map.scale_y, mf.map.scale_x};
  meta["video_id"] = mf.video_id;
  meta["original_frame_count"] = mf.original_frame_count;
  meta["frame_size"] = {mf.frame_height, mf.frame_width};
  meta["sampled_frame_indices"] = mf.sampled_frame_indices;
  const std::string text = meta.dump(2) + "\n";
  detail::write_file_bytes(blob_path, blob.data(), blob.size());
  detail::write_file_bytes(path, text.data(), text.size());
}

inline MapFile read_map(const std::filesystem::path& path) {
  const auto meta = detail::read_json_file(path);
  MapFile mf;
  std::size_t t = 0, h = 0, w = 0;
  std::string blob_name;
  try {
    detail::check_header(meta, "grounding_map");
    const auto& shape = meta.at("shape");
    if (!shape.is_array() || shape.size() != 3) throw FormatError("shape must have 3 entries");
    t = shape[0].get<std::size_t>();
    h = shape[1].get<std::size_t>();
    w = shape[2].get<std::size_t>();
    if (t == 0 || h == 0 || w == 0) throw FormatError("shape has a zero dimension");
    mf.map.normalization = parse_normalization(detail::get_string(meta, "normalization"));
    mf.map.scale_y = meta.at("scale")[0].get<double>();
    mf.map.scale_x = meta.at("scale")[1].get<double>();
    mf.video_id = detail::get_string(meta, "video_id");
    mf.original_frame_count = meta.at("original_frame_count").get<int>();
    mf.frame_height = meta.at("frame_size")[0].get<std::size_t>();
    mf.frame_width = meta.at("frame_size")[1].get<std::size_t>();
    mf.sampled_frame_indices = meta.at("sampled_frame_indices").get<std::vector<int>>();
    blob_name = detail::get_string(meta, "blob");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  if (mf.sampled_frame_indices.size() != t)
    throw FormatError(path.string() + ": sampled_frame_indices length does not match shape");

  const auto blob_path = path.parent_path() / blob_name;
  const auto blob = detail::read_file_bytes(blob_path);
  if (blob.size() != t * h * w * 4)
    throw FormatError(blob_path.string() + ": expected " + std::to_string(t * h * w * 4) +
                      " bytes, found " + std::to_string(blob.size()));
  mf.map.values = Tensor3<double>(t, h, w);
  auto out = mf.map.values.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const float f = detail::load_f32le(blob.data() + 4 * i);
    if (!std::isfinite(f)) throw FormatError(blob_path.string() + ": non-finite value");
    out[i] = f;
  }
  return mf;
}

}  // namespace decaf
