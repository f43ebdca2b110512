#pragma once

// Decomposed attention fusion: smoothing, object-minus-background contrast,
// min-max normalization, video-to-frame upsampling and video/frame averaging.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <future>
#include <optional>
#include <string>
#include <vector>

#include "decaf/attn_dump.hpp"
#include "decaf/grounding_map.hpp"
#include "decaf/rollout.hpp"

namespace decaf {

namespace detail {

// Half-sample symmetric reflection: ... c b a | a b c ... | c b a ...
inline std::size_t reflect_index(long i, std::size_t n) {
  const long period = 2 * static_cast<long>(n);
  long m = i % period;
  if (m < 0) m += period;
  if (m >= static_cast<long>(n)) m = period - 1 - m;
  return static_cast<std::size_t>(m);
}

inline std::vector<double> gaussian_kernel(double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    sum += k[i + radius];
  }
  for (double& v : k) v /= sum;
  return k;
}

}  // namespace detail

/// Separable truncated Gaussian (radius ceil(3 sigma)) applied per frame.
inline GroundingMap gaussian_smooth(const GroundingMap& map, double sigma) {
  if (!(sigma > 0.0)) throw ValidationError("sigma must be positive");
  const auto kernel = detail::gaussian_kernel(sigma);
  const long radius = static_cast<long>(kernel.size() / 2);
  const std::size_t h = map.height(), w = map.width();

  GroundingMap out = map;
  std::vector<double> tmp(h * w);
  for (std::size_t t = 0; t < map.frames(); ++t) {
    const auto src = map.values.frame(t);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (long d = -radius; d <= radius; ++d)
          acc += kernel[d + radius] * src[y * w + detail::reflect_index(long(x) + d, w)];
        tmp[y * w + x] = acc;
      }
    auto dst = out.values.frame(t);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (long d = -radius; d <= radius; ++d)
          acc += kernel[d + radius] * tmp[detail::reflect_index(long(y) + d, h) * w + x];
        dst[y * w + x] = acc;
      }
  }
  return out;
}

namespace detail {

inline void minmax_in_place(std::span<double> values) {
  if (values.empty()) return;
  const auto [lo, hi] = std::ranges::minmax(values);
  if (hi > lo) {
    const double range = hi - lo;
    for (double& v : values) v = (v - lo) / range;
  } else {
    std::ranges::fill(values, 0.0);
  }
}

}  // namespace detail

/// Scales each normalization unit (a frame, or the whole tensor) to [0, 1].
/// A unit with max == min becomes all zeros.
inline GroundingMap minmax_normalize(const GroundingMap& map, Normalization mode) {
  GroundingMap out = map;
  switch (mode) {
    case Normalization::raw:
      return out;
    case Normalization::per_frame:
      for (std::size_t t = 0; t < out.frames(); ++t) detail::minmax_in_place(out.values.frame(t));
      break;
    case Normalization::global:
      detail::minmax_in_place(out.values.data());
      break;
  }
  out.normalization = mode;
  return out;
}

/// max(obj - bg, 0), then min-max normalized.
inline GroundingMap contrastive_fuse(const GroundingMap& obj, const GroundingMap& bg,
                                     Normalization mode) {
  if (!obj.values.same_shape(bg.values))
    throw ValidationError("object and background maps differ in shape");
  GroundingMap diff = obj;
  auto d = diff.values.data();
  const auto b = bg.values.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = std::max(d[i] - b[i], 0.0);
  return minmax_normalize(diff, mode);
}

/// Bilinear resize with cell-center sampling (align_corners = false).
inline GroundingMap upsample_bilinear(const GroundingMap& map, std::size_t target_h,
                                      std::size_t target_w) {
  const std::size_t h = map.height(), w = map.width();
  if (target_h < h || target_w < w) throw ValidationError("upsample_bilinear cannot downsample");

  auto source_coord = [](std::size_t dst, std::size_t in, std::size_t out) {
    const double s = (static_cast<double>(dst) + 0.5) * static_cast<double>(in) /
                         static_cast<double>(out) -
                     0.5;
    return std::clamp(s, 0.0, static_cast<double>(in - 1));
  };

  GroundingMap out;
  out.normalization = map.normalization;
  out.scale_y = map.scale_y * static_cast<double>(h) / static_cast<double>(target_h);
  out.scale_x = map.scale_x * static_cast<double>(w) / static_cast<double>(target_w);
  out.values = Tensor3<double>(map.frames(), target_h, target_w);
  for (std::size_t t = 0; t < map.frames(); ++t) {
    for (std::size_t y = 0; y < target_h; ++y) {
      const double sy = source_coord(y, h, target_h);
      const auto y0 = static_cast<std::size_t>(sy);
      const std::size_t y1 = std::min(y0 + 1, h - 1);
      const double fy = sy - static_cast<double>(y0);
      for (std::size_t x = 0; x < target_w; ++x) {
        const double sx = source_coord(x, w, target_w);
        const auto x0 = static_cast<std::size_t>(sx);
        const std::size_t x1 = std::min(x0 + 1, w - 1);
        const double fx = sx - static_cast<double>(x0);
        const double top = map.values(t, y0, x0) * (1 - fx) + map.values(t, y0, x1) * fx;
        const double bot = map.values(t, y1, x0) * (1 - fx) + map.values(t, y1, x1) * fx;
        out.values(t, y, x) = top * (1 - fy) + bot * fy;
      }
    }
  }
  return out;
}

/// Weighted mean of each video slice with the matching frame map.
/// `video_weight` = 0.5 is the plain average.
inline GroundingMap complementary_fuse(const GroundingMap& video_map,
                                       const std::vector<GroundingMap>& frame_maps,
                                       double video_weight = 0.5) {
  if (frame_maps.size() != video_map.frames())
    throw ValidationError("frame map count does not match video frames");
  if (video_weight < 0.0 || video_weight > 1.0)
    throw ValidationError("video weight must lie in [0, 1]");
  GroundingMap out = video_map;
  for (std::size_t t = 0; t < frame_maps.size(); ++t) {
    const auto& fm = frame_maps[t];
    if (fm.frames() != 1 || fm.height() != video_map.height() || fm.width() != video_map.width())
      throw ValidationError("frame map resolution does not match upsampled video map");
    auto dst = out.values.frame(t);
    const auto src = fm.values.frame(0);
    for (std::size_t i = 0; i < dst.size(); ++i)
      dst[i] = video_weight * dst[i] + (1.0 - video_weight) * src[i];
  }
  out.scale_y = frame_maps.front().scale_y;
  out.scale_x = frame_maps.front().scale_x;
  return out;
}

enum class FusionModality { both, video, frame };

inline const char* to_string(FusionModality m) {
  switch (m) {
    case FusionModality::both: return "both";
    case FusionModality::video: return "video";
    case FusionModality::frame: return "frame";
  }
  return "both";
}

inline FusionModality parse_fusion_modality(const std::string& s) {
  if (s == "both") return FusionModality::both;
  if (s == "video") return FusionModality::video;
  if (s == "frame") return FusionModality::frame;
  throw ValidationError("unknown fusion modality '" + s + "'");
}

struct FusionConfig {
  std::optional<int> start_layer;
  RolloutOptions rollout;
  double sigma = 1.0;
  bool contrastive = true;
  FusionModality modality = FusionModality::both;
  Normalization video_normalization = Normalization::global;
  Normalization frame_normalization = Normalization::per_frame;
  double video_weight = 0.5;
  unsigned jobs = 1;
};

/// Per-stage statistics for logging.
struct FusionStats {
  std::size_t dumps_read = 0;
  std::size_t video_grid_h = 0, video_grid_w = 0;
  std::size_t frame_grid_h = 0, frame_grid_w = 0;
  double video_zero_fraction = 0.0;
  double frame_zero_fraction = 0.0;
};

struct FusionResult {
  MapFile map;
  FusionStats stats;
};

namespace detail {

inline double zero_fraction(const GroundingMap& m) {
  const auto v = m.values.data();
  if (v.empty()) return 0.0;
  return static_cast<double>(std::ranges::count(v, 0.0)) / static_cast<double>(v.size());
}

inline GroundingMap modality_map(const GroundingMap& obj, const GroundingMap* bg,
                                 const FusionConfig& cfg, Normalization mode) {
  const GroundingMap so = gaussian_smooth(obj, cfg.sigma);
  if (!bg) return minmax_normalize(so, mode);
  return contrastive_fuse(so, gaussian_smooth(*bg, cfg.sigma), mode);
}

// Frame t of the sampled sequence reads slice floor(t * Tv / Ts) of the video map,
// covering video encoders that merge consecutive frames into one token slice.
inline GroundingMap expand_video_frames(const GroundingMap& video, std::size_t sampled) {
  if (video.frames() == sampled) return video;
  if (video.frames() > sampled || sampled % video.frames() != 0)
    throw ValidationError("video grid has " + std::to_string(video.frames()) +
                          " frames, incompatible with " + std::to_string(sampled) +
                          " sampled frames");
  GroundingMap out = video;
  out.values = Tensor3<double>(sampled, video.height(), video.width());
  for (std::size_t t = 0; t < sampled; ++t) {
    const auto src = video.values.frame(t * video.frames() / sampled);
    std::ranges::copy(src, out.values.frame(t).begin());
  }
  return out;
}

template <typename Fn>
auto parallel_map(std::size_t n, unsigned jobs, Fn fn) -> std::vector<decltype(fn(std::size_t{}))> {
  using R = decltype(fn(std::size_t{}));
  std::vector<R> out(n);
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) out[i] = fn(i);
    return out;
  }
  std::vector<std::future<void>> workers;
  std::atomic<std::size_t> next{0};
  for (unsigned j = 0; j < std::min<std::size_t>(jobs, n); ++j)
    workers.push_back(std::async(std::launch::async, [&] {
      for (std::size_t i = next++; i < n; i = next++) out[i] = fn(i);
    }));
  for (auto& w : workers) w.get();
  return out;
}

}  // namespace detail

/// Full fusion for one video: rollout every dump, contrast within each
/// modality, upsample the video map to frame resolution and average.
inline FusionResult build_fused_map(const DumpManifest& manifest, const FusionConfig& cfg) {
  FusionResult result;
  auto& stats = result.stats;
  const std::size_t ts = manifest.sampled_frame_indices.size();

  auto load_map = [&](const std::filesystem::path& p, Modality expect) {
    const AttentionStack s = read_dump(p);
    if (s.modality != expect) throw ValidationError(p.string() + ": unexpected modality");
    return grounding_from_dump(s, cfg.start_layer, cfg.rollout);
  };

  const bool use_video = cfg.modality != FusionModality::frame;
  const bool use_frames = cfg.modality != FusionModality::video;

  std::optional<GroundingMap> video;
  if (use_video) {
    const GroundingMap obj = load_map(manifest.path_for(Modality::video, PromptKind::object),
                                      Modality::video);
    std::optional<GroundingMap> bg;
    if (cfg.contrastive)
      bg = load_map(manifest.path_for(Modality::video, PromptKind::background), Modality::video);
    stats.dumps_read += cfg.contrastive ? 2 : 1;
    stats.video_grid_h = obj.height();
    stats.video_grid_w = obj.width();
    video = detail::expand_video_frames(
        detail::modality_map(obj, bg ? &*bg : nullptr, cfg, cfg.video_normalization), ts);
    video->scale_y = static_cast<double>(manifest.frame_height) / static_cast<double>(obj.height());
    video->scale_x = static_cast<double>(manifest.frame_width) / static_cast<double>(obj.width());
    stats.video_zero_fraction = detail::zero_fraction(*video);
  }

  std::vector<GroundingMap> frames;
  if (use_frames) {
    frames = detail::parallel_map(ts, cfg.jobs, [&](std::size_t t) {
      const int f = manifest.sampled_frame_indices[t];
      const GroundingMap obj =
          load_map(manifest.path_for(Modality::frame, PromptKind::object, f), Modality::frame);
      std::optional<GroundingMap> bg;
      if (cfg.contrastive)
        bg = load_map(manifest.path_for(Modality::frame, PromptKind::background, f),
                      Modality::frame);
      GroundingMap m =
          detail::modality_map(obj, bg ? &*bg : nullptr, cfg, cfg.frame_normalization);
      m.scale_y = static_cast<double>(manifest.frame_height) / static_cast<double>(m.height());
      m.scale_x = static_cast<double>(manifest.frame_width) / static_cast<double>(m.width());
      return m;
    });
    stats.dumps_read += ts * (cfg.contrastive ? 2 : 1);
    for (const auto& m : frames)
      if (m.height() != frames.front().height() || m.width() != frames.front().width())
        throw ValidationError("frame dumps disagree on grid size");
    stats.frame_grid_h = frames.front().height();
    stats.frame_grid_w = frames.front().width();
  }

  GroundingMap fused;
  if (video && !frames.empty()) {
    const GroundingMap up =
        upsample_bilinear(*video, frames.front().height(), frames.front().width());
    fused = complementary_fuse(up, frames, cfg.video_weight);
  } else if (video) {
    fused = *video;
  } else {
    fused = frames.front();
    fused.values = Tensor3<double>(ts, frames.front().height(), frames.front().width());
    for (std::size_t t = 0; t < ts; ++t)
      std::ranges::copy(frames[t].values.frame(0), fused.values.frame(t).begin());
  }
  if (!frames.empty()) stats.frame_zero_fraction = detail::zero_fraction(fused);

  result.map.map = std::move(fused);
  result.map.video_id = manifest.video_id;
  result.map.sampled_frame_indices = manifest.sampled_frame_indices;
  result.map.original_frame_count = manifest.original_frame_count;
  result.map.frame_height = manifest.frame_height;
  result.map.frame_width = manifest.frame_width;
  return result;
}

}  // namespace decaf
