#pragma once

// Region similarity (J) and boundary F-measure (F) for video object
// segmentation, with per-sequence and dataset aggregation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "decaf/error.hpp"
#include "decaf/tensor.hpp"

namespace decaf {

inline constexpr double kBoundaryTolerance = 0.008;

/// IoU; both empty scores 1, exactly one empty scores 0.
inline double region_similarity(const BinaryMask& pred, const BinaryMask& gt) {
  if (!pred.same_shape(gt)) throw ValidationError("prediction and ground truth differ in size");
  const Overlap o = overlap(pred.data(), gt.data());
  if (o.union_ == 0) return 1.0;
  return static_cast<double>(o.intersection) / static_cast<double>(o.union_);
}

/// Foreground pixels with at least one 4-neighbour that is background.
/// Neighbours outside the image do not count.
inline BinaryMask mask_boundary(const BinaryMask& m) {
  BinaryMask b(m.height(), m.width(), 0);
  const std::size_t h = m.height(), w = m.width();
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      if (!m(y, x)) continue;
      const bool edge = (y > 0 && !m(y - 1, x)) || (y + 1 < h && !m(y + 1, x)) ||
                        (x > 0 && !m(y, x - 1)) || (x + 1 < w && !m(y, x + 1));
      b(y, x) = edge ? 1 : 0;
    }
  return b;
}

/// Dilation by the Euclidean disk x^2 + y^2 <= r^2.
inline BinaryMask dilate_disk(const BinaryMask& m, int radius) {
  if (radius <= 0) return m;
  std::vector<std::pair<int, int>> offsets;
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx)
      if (dy * dy + dx * dx <= radius * radius) offsets.emplace_back(dy, dx);
  const int h = static_cast<int>(m.height()), w = static_cast<int>(m.width());
  BinaryMask out(m.height(), m.width(), 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!m(y, x)) continue;
      for (const auto& [dy, dx] : offsets) {
        const int yy = y + dy, xx = x + dx;
        if (yy >= 0 && yy < h && xx >= 0 && xx < w) out(yy, xx) = 1;
      }
    }
  return out;
}

inline int boundary_radius(std::size_t height, std::size_t width,
                           double tolerance = kBoundaryTolerance) {
  const double diag = std::hypot(static_cast<double>(height), static_cast<double>(width));
  return static_cast<int>(std::lround(tolerance * diag));
}

/// Boundary F-measure with matching radius round(tolerance * diagonal).
inline double contour_accuracy(const BinaryMask& pred, const BinaryMask& gt,
                               double tolerance = kBoundaryTolerance) {
  if (!pred.same_shape(gt)) throw ValidationError("prediction and ground truth differ in size");
  const BinaryMask pb = mask_boundary(pred);
  const BinaryMask gb = mask_boundary(gt);
  const std::size_t np = count_set(pb.data()), ng = count_set(gb.data());
  if (np == 0 && ng == 0) return 1.0;
  if (np == 0 || ng == 0) return 0.0;

  const int r = boundary_radius(pred.height(), pred.width(), tolerance);
  const BinaryMask pd = dilate_disk(pb, r);
  const BinaryMask gd = dilate_disk(gb, r);
  std::size_t pred_hit = 0, gt_hit = 0;
  for (std::size_t i = 0; i < pb.size(); ++i) {
    pred_hit += (pb.data()[i] && gd.data()[i]) ? 1 : 0;
    gt_hit += (gb.data()[i] && pd.data()[i]) ? 1 : 0;
  }
  const double precision = static_cast<double>(pred_hit) / static_cast<double>(np);
  const double recall = static_cast<double>(gt_hit) / static_cast<double>(ng);
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

struct SequenceScore {
  double j = 0.0;
  double f = 0.0;
  double jf = 0.0;
  std::size_t frames = 0;
};

/// Frame-averaged J and F of one mask sequence.
inline SequenceScore score_sequence(const std::vector<BinaryMask>& pred,
                                    const std::vector<BinaryMask>& gt) {
  if (pred.size() != gt.size()) throw ValidationError("frame count mismatch");
  SequenceScore s;
  s.frames = gt.size();
  if (gt.empty()) return s;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    s.j += region_similarity(pred[i], gt[i]);
    s.f += contour_accuracy(pred[i], gt[i]);
  }
  s.j /= static_cast<double>(gt.size());
  s.f /= static_cast<double>(gt.size());
  s.jf = (s.j + s.f) / 2.0;
  return s;
}

enum class EvalMode { union_, per_object };

/// Prediction for one video: per-object channels over all frames.
struct PredictedSequence {
  std::vector<std::vector<BinaryMask>> objects;
  std::vector<BinaryMask> union_masks;
};

/// Ground truth for one video: label frames, nonzero = object id.
using GroundTruthSequence = std::vector<LabelImage>;

struct EvalReport {
  std::map<std::string, SequenceScore> per_sequence;
  SequenceScore global;  ///< means over sequences; `frames` is the total
};

namespace detail {

inline BinaryMask label_mask(const LabelImage& labels, std::optional<std::uint8_t> id) {
  BinaryMask m(labels.height(), labels.width(), 0);
  const auto src = labels.data();
  auto dst = m.data();
  for (std::size_t i = 0; i < src.size(); ++i)
    dst[i] = id ? (src[i] == *id ? 1 : 0) : (src[i] != 0 ? 1 : 0);
  return m;
}

inline double sequence_iou(const std::vector<BinaryMask>& a, const std::vector<BinaryMask>& b) {
  Overlap total;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const Overlap o = overlap(a[i].data(), b[i].data());
    total.intersection += o.intersection;
    total.union_ += o.union_;
  }
  return total.union_ == 0 ? 0.0
                           : static_cast<double>(total.intersection) /
                                 static_cast<double>(total.union_);
}

}  // namespace detail

/// Scores one video. Union mode compares the union of predicted objects with
/// all nonzero ground truth. Per-object mode matches each ground-truth id to
/// the predicted channel with the highest volume IoU (lowest index on ties,
/// an empty channel when nothing overlaps) and averages over ids.
inline SequenceScore evaluate_sequence(const PredictedSequence& pred,
                                       const GroundTruthSequence& gt, EvalMode mode) {
  if (pred.union_masks.size() != gt.size())
    throw ValidationError("predicted frame count " + std::to_string(pred.union_masks.size()) +
                          " differs from ground truth " + std::to_string(gt.size()));
  std::vector<BinaryMask> gt_union;
  for (const auto& g : gt) gt_union.push_back(detail::label_mask(g, std::nullopt));
  if (mode == EvalMode::union_) return score_sequence(pred.union_masks, gt_union);

  std::set<std::uint8_t> ids;
  for (const auto& g : gt)
    for (auto v : g.data())
      if (v) ids.insert(v);
  if (ids.empty()) return score_sequence(pred.union_masks, gt_union);

  SequenceScore acc;
  for (std::uint8_t id : ids) {
    std::vector<BinaryMask> gt_obj;
    for (const auto& g : gt) gt_obj.push_back(detail::label_mask(g, id));
    std::vector<BinaryMask> best;
    double best_iou = 0.0;
    for (const auto& channel : pred.objects) {
      const double iou = detail::sequence_iou(channel, gt_obj);
      if (iou > best_iou) {
        best_iou = iou;
        best = channel;
      }
    }
    if (best.empty())
      for (const auto& g : gt_obj) best.emplace_back(g.height(), g.width(), 0);
    const auto s = score_sequence(best, gt_obj);
    acc.j += s.j;
    acc.f += s.f;
  }
  acc.j /= static_cast<double>(ids.size());
  acc.f /= static_cast<double>(ids.size());
  acc.jf = (acc.j + acc.f) / 2.0;
  acc.frames = gt.size();
  return acc;
}

inline EvalReport aggregate(std::map<std::string, SequenceScore> per_sequence) {
  EvalReport r;
  r.per_sequence = std::move(per_sequence);
  if (r.per_sequence.empty()) return r;
  for (const auto& [id, s] : r.per_sequence) {
    r.global.j += s.j;
    r.global.f += s.f;
    r.global.frames += s.frames;
  }
  const auto n = static_cast<double>(r.per_sequence.size());
  r.global.j /= n;
  r.global.f /= n;
  r.global.jf = (r.global.j + r.global.f) / 2.0;
  return r;
}

/// Every ground-truth video must have a prediction.
inline EvalReport evaluate(const std::map<std::string, PredictedSequence>& preds,
                           const std::map<std::string, GroundTruthSequence>& gts,
                           EvalMode mode = EvalMode::union_) {
  std::vector<std::string> missing;
  for (const auto& [id, g] : gts)
    if (!preds.contains(id)) missing.push_back(id);
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw ValidationError("missing predictions for: " + list);
  }
  std::map<std::string, SequenceScore> per;
  for (const auto& [id, g] : gts) per[id] = evaluate_sequence(preds.at(id), g, mode);
  return aggregate(std::move(per));
}

}  // namespace decaf
