#pragma once

// Synthetic fixtures for end-to-end checks: label videos with moving
// rectangular regions plus attention dumps whose query rows concentrate on
// a target region, optionally contaminated by sink tokens that every prompt
// attends to. All randomness comes from a seeded mt19937.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "decaf/attn_dump.hpp"
#include "decaf/png_io.hpp"
#include "decaf/tensor.hpp"

namespace decaf::synth {

inline constexpr std::uint8_t kTargetId = 1;
inline constexpr std::uint8_t kWallId = 9;

struct Config {
  std::size_t frames = 16;
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t video_grid = 4;  ///< video tokens per side
  std::size_t frame_grid = 8;  ///< frame tokens per side (twice the video resolution)
  std::size_t heads = 3;
  std::size_t stored_layers = 2;
  int model_layers = 4;
  std::size_t prefix_tokens = 4;
  std::size_t text_tokens = 6;
  std::size_t wall_rows = 14;  ///< static background structure along the top edge
  double target_strength = 6.0;
  double distractor_strength = 0.8;
  double sink_share = 0.5;  ///< fraction of a query row's visual mass taken by sink tokens
  double background_strength = 2.0;
  double noise = 0.3;
};

struct Region {
  std::uint8_t id = 0;
  std::size_t x0 = 0, width = 0, height = 0;
  long y_start = 0;
  long velocity = 0;
};

struct Video {
  std::string id;
  std::vector<LabelImage> labels;  ///< full label frames (target, distractors, wall)
  std::vector<LabelImage> gt;      ///< target only, value 1
  bool sink = false;
  std::size_t num_regions = 0;
  std::uint32_t seed = 0;
};

namespace detail {

inline double unit(std::mt19937& rng) { return static_cast<double>(rng() >> 8) * (1.0 / 16777216.0); }

// Vertical bounce inside [lo, hi - height].
inline long bounce(long start, long velocity, std::size_t t, long lo, long hi, long height) {
  const long span = hi - height - lo;
  if (span <= 0) return lo;
  long p = start - lo + velocity * static_cast<long>(t);
  const long period = 2 * span;
  p %= period;
  if (p < 0) p += period;
  if (p > span) p = period - p;
  return lo + p;
}

}  // namespace detail

/// Video `index` of a deterministic family: 1-3 regions moving vertically in
/// separate column lanes below a static wall; region 1 is the target.
inline Video make_video(std::size_t index, bool sink, const Config& cfg = {},
                        std::uint32_t seed = 1234) {
  Video v;
  v.id = "synth_" + std::string(index < 10 ? "0" : "") + std::to_string(index);
  v.sink = sink;
  v.seed = seed + static_cast<std::uint32_t>(index) * 7919u;
  v.num_regions = 1 + index % 3;
  std::mt19937 rng(v.seed);

  const std::size_t lane_w = cfg.width / v.num_regions;
  const std::size_t target_lane = index % v.num_regions;
  std::vector<Region> regions;
  std::uint8_t next_id = 2;
  for (std::size_t k = 0; k < v.num_regions; ++k) {
    Region r;
    r.id = k == target_lane ? kTargetId : next_id++;
    r.width = std::min<std::size_t>(24, lane_w - 6);
    r.height = 14 + static_cast<std::size_t>(detail::unit(rng) * 6.0);
    r.x0 = k * lane_w + (lane_w - r.width) / 2;
    r.y_start = static_cast<long>(cfg.wall_rows) + 2 + static_cast<long>(detail::unit(rng) * 20.0);
    r.velocity = (rng() & 1u) ? 2 : -2;
    regions.push_back(r);
  }

  for (std::size_t t = 0; t < cfg.frames; ++t) {
    LabelImage labels(cfg.height, cfg.width, 0);
    for (std::size_t y = 0; y < cfg.wall_rows; ++y)
      for (std::size_t x = 0; x < cfg.width; ++x) labels(y, x) = kWallId;
    for (const auto& r : regions) {
      const long y0 = detail::bounce(r.y_start, r.velocity, t, static_cast<long>(cfg.wall_rows) + 2,
                                     static_cast<long>(cfg.height), static_cast<long>(r.height));
      for (std::size_t y = static_cast<std::size_t>(y0); y < static_cast<std::size_t>(y0) + r.height; ++y)
        for (std::size_t x = r.x0; x < r.x0 + r.width; ++x) labels(y, x) = r.id;
    }
    LabelImage gt(cfg.height, cfg.width, 0);
    for (std::size_t i = 0; i < labels.size(); ++i) gt.data()[i] = labels.data()[i] == kTargetId ? 1 : 0;
    v.labels.push_back(std::move(labels));
    v.gt.push_back(std::move(gt));
  }
  return v;
}

/// Fractions of a pixel rectangle covered by target / distractor / wall / background.
struct Coverage {
  double target = 0, distractor = 0, wall = 0, background = 0;
};

inline Coverage cell_coverage(const LabelImage& labels, std::size_t y0, std::size_t y1,
                              std::size_t x0, std::size_t x1) {
  Coverage c;
  for (std::size_t y = y0; y < y1; ++y)
    for (std::size_t x = x0; x < x1; ++x) {
      const auto id = labels(y, x);
      if (id == kTargetId) c.target += 1;
      else if (id == kWallId) c.wall += 1;
      else if (id == 0) c.background += 1;
      else c.distractor += 1;
    }
  const double n = static_cast<double>((y1 - y0) * (x1 - x0));
  c.target /= n;
  c.distractor /= n;
  c.wall /= n;
  c.background /= n;
  return c;
}

/// Attention dump for one prompt over either the whole video (frame < 0) or one frame.
inline AttentionStack make_stack(const Video& v, Modality modality, PromptKind kind, int frame,
                                 const Config& cfg = {}) {
  AttentionStack s;
  s.modality = modality;
  s.prompt_kind = kind;
  const std::size_t g = modality == Modality::video ? cfg.video_grid : cfg.frame_grid;
  s.grid = {modality == Modality::video ? cfg.frames : 1, g, g};
  if (modality == Modality::frame) s.frame_index = frame;
  s.num_heads = cfg.heads;
  s.visual_start = cfg.prefix_tokens;
  s.visual_count = s.grid.count();
  s.text_count = cfg.text_tokens;
  s.seq_len = s.visual_start + s.visual_count + s.text_count;
  s.query_index = s.seq_len - 1;
  s.num_model_layers = cfg.model_layers;
  s.first_stored_layer = cfg.model_layers - static_cast<int>(cfg.stored_layers);
  s.capture_notes = "synthetic";

  // Per visual token: the query-side affinity under this prompt.
  const std::size_t cell_h = cfg.height / g, cell_w = cfg.width / g;
  std::vector<double> affinity(s.visual_count);
  std::vector<bool> is_sink(s.visual_count, false);
  for (std::size_t t = 0; t < s.grid.frames; ++t) {
    const auto& labels = v.labels[modality == Modality::video ? t : static_cast<std::size_t>(frame)];
    for (std::size_t cy = 0; cy < g; ++cy)
      for (std::size_t cx = 0; cx < g; ++cx) {
        const std::size_t tok = (t * g + cy) * g + cx;
        const Coverage c =
            cell_coverage(labels, cy * cell_h, (cy + 1) * cell_h, cx * cell_w, (cx + 1) * cell_w);
        // Sink tokens: the top-right corner of the wall, in every frame.
        is_sink[tok] = v.sink && cy * cell_h < cfg.wall_rows && (cx + 1) * cell_w > cfg.width * 3 / 4 &&
                       c.wall > 0.5;
        double a = 0.0;
        if (kind == PromptKind::object) {
          a = cfg.target_strength * c.target + cfg.distractor_strength * c.distractor;
        } else {
          a = cfg.background_strength * (c.background + c.wall) + 1.0 * c.distractor;
        }
        affinity[tok] = a;
      }
  }

  const auto num_sinks = static_cast<std::size_t>(std::ranges::count(is_sink, true));
  std::mt19937 rng(v.seed ^ (static_cast<std::uint32_t>(modality) * 0x9e3779b9u) ^
                   (static_cast<std::uint32_t>(kind) * 0x85ebca6bu) ^
                   static_cast<std::uint32_t>(frame + 1) * 0xc2b2ae35u);
  const std::size_t n = s.seq_len;
  const std::size_t vis_end = s.visual_start + s.visual_count;
  s.layers.assign(cfg.stored_layers, std::vector<float>(s.layer_size(), 0.0f));
  std::vector<double> row(n);
  for (std::size_t l = 0; l < cfg.stored_layers; ++l) {
    for (std::size_t h = 0; h < cfg.heads; ++h) {
      const bool noisy_head = h + 1 == cfg.heads && cfg.heads > 1;
      for (std::size_t r = 0; r < n; ++r) {
        std::ranges::fill(row, 0.0);
        if (r < s.visual_start) {
          for (std::size_t c = 0; c <= r; ++c) row[c] = 1.0;
        } else if (r < vis_end) {
          // Visual tokens mostly keep their own content; the noisy head parks on token 0.
          for (std::size_t c = 0; c < r; ++c) row[c] = 0.02 * detail::unit(rng);
          row[r] = noisy_head ? 0.5 : 4.0;
          if (noisy_head) row[0] += 4.0;
        } else {
          // Visual mass 0.7 (0.05 on the noisy head): the sink share goes to sink
          // tokens whatever the prompt, the rest follows the prompt affinity.
          const double visual = noisy_head ? 0.05 : 0.7;
          const double share = num_sinks ? cfg.sink_share : 0.0;
          double total = 0.0;
          for (std::size_t c = s.visual_start; c < vis_end; ++c) {
            row[c] = affinity[c - s.visual_start] + cfg.noise * detail::unit(rng);
            total += row[c];
          }
          for (std::size_t c = s.visual_start; c < vis_end; ++c) {
            row[c] *= visual * (1.0 - share) / total;
            if (is_sink[c - s.visual_start]) row[c] += visual * share / static_cast<double>(num_sinks);
          }
          const double rest = (1.0 - visual) / static_cast<double>(s.visual_start + r + 1 - vis_end);
          for (std::size_t c = 0; c < s.visual_start; ++c) row[c] = rest;
          for (std::size_t c = vis_end; c <= r; ++c) row[c] = rest;
        }
        double sum = 0.0;
        for (std::size_t c = 0; c <= r; ++c) sum += row[c];
        for (std::size_t c = 0; c <= r; ++c) s.at(l, h, r, c) = static_cast<float>(row[c] / sum);
      }
    }
  }
  return s;
}

struct FixturePaths {
  std::filesystem::path root;
  std::filesystem::path frames_dir;
  std::filesystem::path gt_dir;
  std::filesystem::path manifest;
};

/// Writes frames/, gt/, dumps/ and manifest.json for one video under `dir`.
inline FixturePaths write_fixture(const Video& v, const std::filesystem::path& dir,
                                  const Config& cfg = {}) {
  namespace fs = std::filesystem;
  FixturePaths p{dir, dir / "frames", dir / "gt", dir / "manifest.json"};
  fs::create_directories(p.frames_dir);
  fs::create_directories(p.gt_dir);
  fs::create_directories(dir / "dumps");
  for (std::size_t t = 0; t < v.labels.size(); ++t) {
    write_png_gray(v.labels[t], p.frames_dir / frame_file_name(t));
    write_png_gray(v.gt[t], p.gt_dir / frame_file_name(t));
  }

  DumpManifest m;
  m.video_id = v.id;
  m.original_frame_count = static_cast<int>(v.labels.size());
  m.frame_height = cfg.height;
  m.frame_width = cfg.width;
  m.object_category = "box";
  for (std::size_t t = 0; t < v.labels.size(); ++t) m.sampled_frame_indices.push_back(static_cast<int>(t));

  for (auto kind : {PromptKind::object, PromptKind::background}) {
    const std::string name = std::string("video_") + to_string(kind) + ".json";
    write_dump(make_stack(v, Modality::video, kind, -1, cfg), dir / "dumps" / name);
    m.entries[{Modality::video, kind, std::nullopt}] = fs::path("dumps") / name;
    for (int f : m.sampled_frame_indices) {
      const std::string fname = "frame_" + std::to_string(f) + "_" + to_string(kind) + ".json";
      write_dump(make_stack(v, Modality::frame, kind, f, cfg), dir / "dumps" / fname);
      m.entries[{Modality::frame, kind, f}] = fs::path("dumps") / fname;
    }
  }
  write_manifest(m, p.manifest);
  return p;
}

/// Standard family: `count` videos, even indices sink-contaminated.
inline std::vector<Video> make_family(std::size_t count, const Config& cfg = {},
                                      std::uint32_t seed = 1234) {
  std::vector<Video> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(make_video(i, i % 2 == 0, cfg, seed));
  return out;
}

}  // namespace decaf::synth
