#pragma once

// Attention-guided prompting of a video segmenter.
//
// Cells of the fused map at or above tau_pq become point queries at their
// pixel centers. Queries are prompted frame by frame; each kept prompt is
// propagated over the sampled frames to form a mask tracklet. Tracklets
// overlapping at the prompt frame are deduplicated by object score
// (attention + segmenter confidence), then volume NMS runs once. Survivors
// are scored by attention consistency and kept when the mean of
// (attention, confidence, consistency) reaches tau_trk. Retained seeds are
// re-propagated over every video frame.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "decaf/grounding_map.hpp"
#include "decaf/protocol.hpp"
#include "decaf/tensor.hpp"

namespace decaf {

struct PointQuery {
  std::size_t t = 0;  ///< sampled-frame slot
  std::size_t cell_y = 0;
  std::size_t cell_x = 0;
  double y = 0.0;  ///< pixel row of the cell center
  double x = 0.0;  ///< pixel column of the cell center
  double attn = 0.0;

  bool operator==(const PointQuery&) const = default;
};

enum class TrackletStatus {
  active,
  empty_prompt,       ///< segmenter returned nothing for the point
  suppressed_frame,   ///< lost the per-frame overlap check
  suppressed_nms,     ///< lost volume NMS
  rejected,           ///< below tau_trk
  retained,
  fallback,           ///< kept only because nothing reached tau_trk
};

inline const char* to_string(TrackletStatus s) {
  switch (s) {
    case TrackletStatus::active: return "active";
    case TrackletStatus::empty_prompt: return "empty_prompt";
    case TrackletStatus::suppressed_frame: return "suppressed_frame";
    case TrackletStatus::suppressed_nms: return "suppressed_nms";
    case TrackletStatus::rejected: return "rejected";
    case TrackletStatus::retained: return "retained";
    case TrackletStatus::fallback: return "fallback";
  }
  return "active";
}

struct MaskTracklet {
  BinaryVolume masks;  ///< (sampled frames, H, W)
  PointQuery seed;
  std::size_t seed_order = 0;  ///< position in prompting order; lower = earlier
  double s_sam = 0.0;
  double s_obj = 0.0;
  double s_ac = 0.0;
  double s_ac_clamped = 0.0;
  double s_trk = 0.0;
  TrackletStatus status = TrackletStatus::active;
};

inline double object_score(double attn, double s_sam) { return attn + s_sam; }

inline double tracklet_score(double attn, double s_sam, double s_ac) {
  return (attn + s_sam + std::clamp(s_ac, 0.0, 1.0)) / 3.0;
}

/// One query per cell with value >= tau_pq, ordered by descending attention,
/// then (t, y, x).
inline std::vector<PointQuery> generate_point_queries(const GroundingMap& v, double tau_pq) {
  std::vector<PointQuery> out;
  for (std::size_t t = 0; t < v.frames(); ++t)
    for (std::size_t cy = 0; cy < v.height(); ++cy)
      for (std::size_t cx = 0; cx < v.width(); ++cx) {
        const double a = v.values(t, cy, cx);
        if (a < tau_pq) continue;
        out.push_back({t, cy, cx, static_cast<double>(cy) * v.scale_y + v.scale_y / 2.0,
                       static_cast<double>(cx) * v.scale_x + v.scale_x / 2.0, a});
      }
  std::ranges::stable_sort(out, [](const PointQuery& a, const PointQuery& b) {
    return a.attn > b.attn;
  });
  return out;
}

/// Spatio-temporal IoU of two mask volumes; 0 when both are empty.
inline double volume_iou(const BinaryVolume& a, const BinaryVolume& b) {
  if (!a.same_shape(b)) throw ValidationError("tracklets cover different frame sets");
  return mask_iou(a.data(), b.data());
}

struct DedupDecision {
  bool keep_new = true;
  std::vector<std::size_t> suppressed;  ///< indices into `existing` to mark suppressed
};

/// Compares a freshly prompted mask at sampled slot `t` with every active
/// tracklet's mask there. Overlap above `iou_thresh` keeps only the higher
/// object score; on equal scores the existing (earlier-seeded) tracklet wins.
inline DedupDecision frame_dedup(const std::vector<MaskTracklet>& existing,
                                 const BinaryMask& new_mask, double new_s_obj, std::size_t t,
                                 double iou_thresh = 0.7) {
  DedupDecision d;
  std::vector<std::size_t> overlapping;
  for (std::size_t i = 0; i < existing.size(); ++i) {
    const auto& e = existing[i];
    if (e.status != TrackletStatus::active) continue;
    if (mask_iou(e.masks.frame(t), new_mask.data()) > iou_thresh) overlapping.push_back(i);
  }
  for (std::size_t i : overlapping)
    if (existing[i].s_obj >= new_s_obj) {
      d.keep_new = false;
      return d;
    }
  d.suppressed = std::move(overlapping);
  return d;
}

/// Greedy NMS by descending s_obj (ties: lower seed_order first).
/// Returns kept indices in that priority order.
inline std::vector<std::size_t> tracklet_nms(const std::vector<MaskTracklet>& tracklets,
                                             double iou_thresh = 0.7) {
  std::vector<std::size_t> order(tracklets.size());
  std::iota(order.begin(), order.end(), 0);
  std::ranges::stable_sort(order, [&](std::size_t a, std::size_t b) {
    if (tracklets[a].s_obj != tracklets[b].s_obj) return tracklets[a].s_obj > tracklets[b].s_obj;
    return tracklets[a].seed_order < tracklets[b].seed_order;
  });
  std::vector<std::size_t> kept;
  for (std::size_t i : order) {
    const bool overlaps = std::ranges::any_of(kept, [&](std::size_t k) {
      return volume_iou(tracklets[i].masks, tracklets[k].masks) > iou_thresh;
    });
    if (!overlaps) kept.push_back(i);
  }
  return kept;
}

namespace detail {

inline double frame_mean(std::span<const double> f) {
  return f.empty() ? 0.0 : std::accumulate(f.begin(), f.end(), 0.0) / static_cast<double>(f.size());
}

}  // namespace detail

/// Cell is 1 iff its value is at least the frame's mean.
inline BinaryVolume attention_binary_mask(const GroundingMap& v) {
  BinaryVolume out(v.frames(), v.height(), v.width(), 0);
  for (std::size_t t = 0; t < v.frames(); ++t) {
    const auto f = v.values.frame(t);
    const double mu = detail::frame_mean(f);
    auto o = out.frame(t);
    for (std::size_t i = 0; i < f.size(); ++i) o[i] = f[i] >= mu ? 1 : 0;
  }
  return out;
}

/// Values at or above the frame mean are kept; the rest become -max(frame).
inline Tensor3<double> penalized_values(const GroundingMap& v) {
  Tensor3<double> out = v.values;
  for (std::size_t t = 0; t < v.frames(); ++t) {
    const auto f = v.values.frame(t);
    const double mu = detail::frame_mean(f);
    const double delta = f.empty() ? 0.0 : -*std::ranges::max_element(f);
    auto o = out.frame(t);
    for (std::size_t i = 0; i < f.size(); ++i)
      if (f[i] < mu) o[i] = delta;
  }
  return out;
}

/// Area-weighted pooling of pixel masks onto a (grid_h, grid_w) cell grid.
/// With integer cell sizes this is plain average pooling.
inline Tensor3<double> downsample_mask(const BinaryVolume& masks, std::size_t grid_h,
                                       std::size_t grid_w) {
  const std::size_t h = masks.height(), w = masks.width();
  if (grid_h == 0 || grid_w == 0 || grid_h > h || grid_w > w)
    throw ValidationError("invalid downsample grid");
  const double cell_h = static_cast<double>(h) / static_cast<double>(grid_h);
  const double cell_w = static_cast<double>(w) / static_cast<double>(grid_w);

  // Per-axis overlap of pixel i with cell c: length of [i, i+1) n [c*cell, (c+1)*cell).
  auto spans = [](std::size_t pixels, std::size_t cells, double cell) {
    std::vector<std::vector<std::pair<std::size_t, double>>> out(pixels);
    for (std::size_t i = 0; i < pixels; ++i) {
      const double lo = static_cast<double>(i), hi = lo + 1.0;
      const auto c0 = static_cast<std::size_t>(std::floor(lo / cell));
      for (std::size_t c = c0; c < cells; ++c) {
        const double clo = static_cast<double>(c) * cell, chi = clo + cell;
        if (clo >= hi) break;
        const double len = std::min(hi, chi) - std::max(lo, clo);
        if (len > 0.0) out[i].emplace_back(c, len);
      }
    }
    return out;
  };
  const auto ys = spans(h, grid_h, cell_h);
  const auto xs = spans(w, grid_w, cell_w);

  Tensor3<double> out(masks.frames(), grid_h, grid_w, 0.0);
  for (std::size_t t = 0; t < masks.frames(); ++t) {
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        if (!masks(t, y, x)) continue;
        for (const auto& [cy, ly] : ys[y])
          for (const auto& [cx, lx] : xs[x]) out(t, cy, cx) += ly * lx;
      }
    for (double& v : out.frame(t)) v /= cell_h * cell_w;
  }
  return out;
}

struct ConsistencyScore {
  double raw = 0.0;
  double clamped = 0.0;
};

/// <mask_cells, penalized> / <attention_mask, penalized>; 0 when the
/// denominator is not positive.
inline ConsistencyScore consistency_score(const Tensor3<double>& mask_cells,
                                          const BinaryVolume& attention_mask,
                                          const Tensor3<double>& penalized) {
  if (mask_cells.frames() != penalized.frames() || mask_cells.height() != penalized.height() ||
      mask_cells.width() != penalized.width() || attention_mask.frames() != penalized.frames() ||
      attention_mask.height() != penalized.height() || attention_mask.width() != penalized.width())
    throw ValidationError("consistency_score shape mismatch");
  const auto m = mask_cells.data();
  const auto a = attention_mask.data();
  const auto p = penalized.data();
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    num += m[i] * p[i];
    den += a[i] ? p[i] : 0.0;
  }
  if (!(den > 0.0)) return {};
  const double raw = num / den;
  return {raw, std::clamp(raw, 0.0, 1.0)};
}

/// Indices with s_trk >= tau_trk. When none qualify, the single best
/// tracklet (earliest on ties) is returned and `fallback` is set.
inline std::vector<std::size_t> select_tracklets(const std::vector<MaskTracklet>& tracklets,
                                                 double tau_trk, bool* fallback = nullptr) {
  if (fallback) *fallback = false;
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < tracklets.size(); ++i)
    if (tracklets[i].s_trk >= tau_trk) out.push_back(i);
  if (out.empty() && !tracklets.empty()) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < tracklets.size(); ++i)
      if (tracklets[i].s_trk > tracklets[best].s_trk) best = i;
    out.push_back(best);
    if (fallback) *fallback = true;
  }
  return out;
}

struct PromptingConfig {
  double tau_pq = 0.8;
  double tau_trk = 0.8;
  double nms_iou = 0.7;
  double dedup_iou = 0.7;

  void validate() const {
    if (!(tau_pq > 0.0 && tau_pq <= 1.0)) throw ValidationError("tau_pq must lie in (0, 1]");
    if (!(tau_trk >= 0.0 && tau_trk <= 1.0)) throw ValidationError("tau_trk must lie in [0, 1]");
    if (!(nms_iou > 0.0 && nms_iou <= 1.0)) throw ValidationError("nms_iou must lie in (0, 1]");
    if (!(dedup_iou > 0.0 && dedup_iou <= 1.0))
      throw ValidationError("dedup_iou must lie in (0, 1]");
  }
};

struct ObjectMasks {
  std::size_t candidate = 0;  ///< index into PromptingResult::candidates
  BinaryVolume masks;         ///< (all video frames, H, W)
};

struct PromptingResult {
  std::vector<MaskTracklet> candidates;
  std::vector<ObjectMasks> objects;
  BinaryVolume union_masks;  ///< (all video frames, H, W)
  std::vector<std::string> warnings;
};

/// Scores tracklets in place (s_ac, s_trk) against the grounding map.
inline void score_tracklets(std::vector<MaskTracklet>& tracklets, const GroundingMap& v) {
  const BinaryVolume m_attn = attention_binary_mask(v);
  const Tensor3<double> v_hat = penalized_values(v);
  for (auto& tr : tracklets) {
    const auto cells = downsample_mask(tr.masks, v.height(), v.width());
    const auto s = consistency_score(cells, m_attn, v_hat);
    tr.s_ac = s.raw;
    tr.s_ac_clamped = s.clamped;
    tr.s_trk = tracklet_score(tr.seed.attn, tr.s_sam, s.raw);
  }
}

/// Full prompting pipeline for one video. `session` must already be started
/// on the full-resolution video.
inline PromptingResult run_prompting(const MapFile& map, SegmenterSession& session,
                                     const PromptingConfig& cfg) {
  cfg.validate();
  const GroundingMap& v = map.map;
  const auto& sampled = map.sampled_frame_indices;
  if (sampled.size() != v.frames()) throw ValidationError("map frames != sampled frames");
  const std::size_t total = session.meta().num_frames;
  const std::size_t h = session.meta().height, w = session.meta().width;
  if (static_cast<std::size_t>(map.original_frame_count) != total)
    throw ValidationError("segmenter video length differs from the map's original frame count");

  PromptingResult result;
  result.union_masks = BinaryVolume(total, h, w, 0);

  auto queries = generate_point_queries(v, cfg.tau_pq);
  if (queries.empty()) {
    result.warnings.push_back("no point queries at tau_pq; emitting empty masks");
    return result;
  }
  // Frame-wise order: earliest sampled frame first, strongest cell first within a frame.
  std::ranges::stable_sort(queries, [](const PointQuery& a, const PointQuery& b) { return a.t < b.t; });

  auto& cands = result.candidates;
  for (std::size_t qi = 0; qi < queries.size(); ++qi) {
    const auto& q = queries[qi];
    const int frame = sampled[q.t];
    const FrameMask prompt = session.prompt_points(frame, {{q.x, q.y}});
    MaskTracklet tr;
    tr.seed = q;
    tr.seed_order = qi;
    tr.s_sam = prompt.confidence;
    tr.s_obj = object_score(q.attn, prompt.confidence);
    if (count_set(prompt.mask.data()) == 0) {
      tr.status = TrackletStatus::empty_prompt;
      cands.push_back(std::move(tr));
      continue;
    }
    const auto decision = frame_dedup(cands, prompt.mask, tr.s_obj, q.t, cfg.dedup_iou);
    if (!decision.keep_new) {
      tr.status = TrackletStatus::suppressed_frame;
      cands.push_back(std::move(tr));
      continue;
    }
    for (std::size_t i : decision.suppressed) cands[i].status = TrackletStatus::suppressed_frame;

    const auto masks = session.propagate(sampled);
    tr.masks = BinaryVolume(sampled.size(), h, w, 0);
    for (std::size_t t = 0; t < masks.size(); ++t) tr.masks.set_frame(t, masks[t].mask);
    tr.masks.set_frame(q.t, prompt.mask);
    cands.push_back(std::move(tr));
  }

  std::vector<std::size_t> active;
  for (std::size_t i = 0; i < cands.size(); ++i)
    if (cands[i].status == TrackletStatus::active) active.push_back(i);
  if (active.empty()) {
    result.warnings.push_back("every point query produced an empty or suppressed mask");
    return result;
  }

  std::vector<MaskTracklet> pool;
  for (std::size_t i : active) pool.push_back(cands[i]);
  const auto kept = tracklet_nms(pool, cfg.nms_iou);
  std::vector<bool> survives(pool.size(), false);
  for (std::size_t k : kept) survives[k] = true;

  std::vector<std::size_t> survivors;
  for (std::size_t k = 0; k < pool.size(); ++k) {
    if (survives[k]) {
      survivors.push_back(active[k]);
    } else {
      cands[active[k]].status = TrackletStatus::suppressed_nms;
    }
  }

  std::vector<MaskTracklet> scored;
  for (std::size_t i : survivors) scored.push_back(std::move(cands[i]));
  score_tracklets(scored, v);
  bool fallback = false;
  const auto selected = select_tracklets(scored, cfg.tau_trk, &fallback);
  for (auto& s : scored) s.status = TrackletStatus::rejected;
  for (std::size_t i : selected)
    scored[i].status = fallback ? TrackletStatus::fallback : TrackletStatus::retained;
  if (fallback) result.warnings.push_back("no tracklet reached tau_trk; kept the best one");
  for (std::size_t k = 0; k < survivors.size(); ++k) cands[survivors[k]] = std::move(scored[k]);

  std::vector<int> all_frames(total);
  std::iota(all_frames.begin(), all_frames.end(), 0);
  for (std::size_t k = 0; k < survivors.size(); ++k) {
    auto& tr = cands[survivors[k]];
    if (tr.status != TrackletStatus::retained && tr.status != TrackletStatus::fallback) continue;
    const int frame = sampled[tr.seed.t];
    const FrameMask prompt = session.prompt_points(frame, {{tr.seed.x, tr.seed.y}});
    const auto masks = session.propagate(all_frames);
    ObjectMasks obj{survivors[k], BinaryVolume(total, h, w, 0)};
    for (std::size_t f = 0; f < total; ++f) obj.masks.set_frame(f, masks[f].mask);
    obj.masks.set_frame(static_cast<std::size_t>(frame), prompt.mask);
    auto u = result.union_masks.data();
    const auto o = obj.masks.data();
    for (std::size_t i = 0; i < u.size(); ++i) u[i] = (u[i] || o[i]) ? 1 : 0;
    result.objects.push_back(std::move(obj));
  }
  return result;
}

}  // namespace decaf
