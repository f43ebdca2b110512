#pragma once

// Per-video segmentation results file and evaluation report output.

#include <cstdio>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "decaf/attn_dump.hpp"
#include "decaf/metrics.hpp"
#include "decaf/rle.hpp"
#include "decaf/tracklet.hpp"

namespace decaf {

using OrderedJson = nlohmann::ordered_json;

inline OrderedJson scores_json(const MaskTracklet& t) {
  return OrderedJson{{"attn", t.seed.attn}, {"sam", t.s_sam},  {"obj", t.s_obj},
                     {"ac", t.s_ac},        {"ac_clamped", t.s_ac_clamped}, {"trk", t.s_trk}};
}

inline OrderedJson volume_rle_json(const BinaryVolume& v) {
  OrderedJson frames = OrderedJson::array();
  for (std::size_t t = 0; t < v.frames(); ++t) frames.push_back(rle_to_json(rle_encode(v.frame_image(t))));
  return frames;
}

/// Results document for one video. `config` is echoed verbatim.
inline OrderedJson results_json(const MapFile& map, const PromptingResult& r,
                                const OrderedJson& config) {
  OrderedJson j;
  j["format_version"] = kFormatVersion;
  j["kind"] = "segmentation_results";
  j["video_id"] = map.video_id;
  j["num_frames"] = r.union_masks.frames();
  j["frame_size"] = {r.union_masks.height(), r.union_masks.width()};
  j["sampled_frame_indices"] = map.sampled_frame_indices;
  j["config"] = config;
  j["warnings"] = r.warnings;

  OrderedJson cands = OrderedJson::array();
  for (const auto& c : r.candidates) {
    cands.push_back(OrderedJson{
        {"seed",
         {{"t", c.seed.t},
          {"frame", map.sampled_frame_indices.at(c.seed.t)},
          {"x", c.seed.x},
          {"y", c.seed.y},
          {"cell", {c.seed.cell_y, c.seed.cell_x}}}},
        {"scores", scores_json(c)},
        {"status", to_string(c.status)}});
  }
  j["candidates"] = std::move(cands);

  OrderedJson objects = OrderedJson::array();
  for (const auto& o : r.objects) {
    objects.push_back(OrderedJson{{"candidate", o.candidate},
                                  {"scores", scores_json(r.candidates.at(o.candidate))},
                                  {"masks", volume_rle_json(o.masks)}});
  }
  j["objects"] = std::move(objects);
  j["union"] = volume_rle_json(r.union_masks);
  return j;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  detail::write_file_bytes(path, text.data(), text.size());
}

inline std::string results_text(const OrderedJson& j) { return j.dump(2) + "\n"; }

struct LoadedResults {
  std::string video_id;
  PredictedSequence prediction;
};

inline LoadedResults read_results(const std::filesystem::path& path) {
  const auto j = detail::read_json_file(path);
  LoadedResults out;
  auto decode_frames = [](const nlohmann::json& frames) {
    std::vector<BinaryMask> masks;
    for (const auto& f : frames) masks.push_back(rle_decode(rle_from_json(f)));
    return masks;
  };
  try {
    if (!j.is_object() || detail::get_count(j, "format_version") != kFormatVersion ||
        detail::get_string(j, "kind") != "segmentation_results")
      throw FormatError("not a version-1 segmentation results file");
    out.video_id = detail::get_string(j, "video_id");
    out.prediction.union_masks = decode_frames(j.at("union"));
    for (const auto& o : j.at("objects")) out.prediction.objects.push_back(decode_frames(o.at("masks")));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return out;
}

inline OrderedJson report_json(const EvalReport& r, EvalMode mode) {
  OrderedJson j;
  j["format_version"] = kFormatVersion;
  j["kind"] = "eval_report";
  j["mode"] = mode == EvalMode::union_ ? "union" : "per_object";
  OrderedJson per = OrderedJson::object();
  for (const auto& [id, s] : r.per_sequence)
    per[id] = {{"J", s.j}, {"F", s.f}, {"JF", s.jf}, {"frames", s.frames}};
  j["per_sequence"] = std::move(per);
  j["global"] = {{"J", r.global.j}, {"F", r.global.f}, {"JF", r.global.jf},
                 {"sequences", r.per_sequence.size()}, {"frames", r.global.frames}};
  return j;
}

inline std::string report_table(const EvalReport& r) {
  std::size_t width = 8;
  for (const auto& [id, s] : r.per_sequence) width = std::max(width, id.size());
  std::ostringstream os;
  char buf[256];
  auto row = [&](const std::string& id, double jv, double fv, double jf, std::size_t frames) {
    std::snprintf(buf, sizeof buf, "%-*s  %8.4f  %8.4f  %8.4f  %6zu\n", static_cast<int>(width),
                  id.c_str(), jv, fv, jf, frames);
    os << buf;
  };
  std::snprintf(buf, sizeof buf, "%-*s  %8s  %8s  %8s  %6s\n", static_cast<int>(width), "sequence",
                "J", "F", "J&F", "frames");
  os << buf;
  for (const auto& [id, s] : r.per_sequence) row(id, s.j, s.f, s.jf, s.frames);
  row("mean", r.global.j, r.global.f, r.global.jf, r.global.frames);
  return os.str();
}

}  // namespace decaf
