#pragma once

// Attention rollout with vision-aware head weighting.
//
// Per layer: heads are weighted by their mean (over query rows) of the
// per-row maximum attention paid to any visual token, weights are scaled so
// the strongest head has weight 1, the weighted head mean is taken, and the
// residual path is mixed in as (A + I) / 2. Layers are composed as
// R(l) = A_hat(l) * R(l-1), starting from the first rolled-out layer.

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "decaf/attn_dump.hpp"
#include "decaf/grounding_map.hpp"

namespace decaf {

/// Row-major n x n matrix accumulated in double precision.
struct SquareMatrix {
  std::size_t n = 0;
  std::vector<double> values;

  SquareMatrix() = default;
  explicit SquareMatrix(std::size_t size, double fill = 0.0) : n(size), values(size * size, fill) {}

  static SquareMatrix identity(std::size_t size) {
    SquareMatrix m(size);
    for (std::size_t i = 0; i < size; ++i) m(i, i) = 1.0;
    return m;
  }

  double& operator()(std::size_t r, std::size_t c) { return values[r * n + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values[r * n + c]; }

  std::span<const double> row(std::size_t r) const { return {values.data() + r * n, n}; }
};

/// Non-owning view of one layer's heads x N x N attention.
struct AttentionLayer {
  std::span<const float> values;
  std::size_t heads = 0;
  std::size_t seq_len = 0;

  double at(std::size_t h, std::size_t r, std::size_t c) const {
    return values[(h * seq_len + r) * seq_len + c];
  }
};

inline AttentionLayer layer_view(const AttentionStack& s, std::size_t stored_index) {
  return {s.layers.at(stored_index), s.num_heads, s.seq_len};
}

struct VisualRange {
  std::size_t start = 0;
  std::size_t count = 0;
};

inline VisualRange visual_range(const AttentionStack& s) { return {s.visual_start, s.visual_count}; }

struct HeadWeights {
  std::vector<double> weights;
};

struct RolloutMatrix {
  SquareMatrix matrix;
  int start_layer = 0;
};

struct RolloutOptions {
  /// Restore row-stochasticity after the weighted head mean.
  bool renormalize = true;
  /// Plain head mean when false.
  bool head_weighting = true;
};

inline HeadWeights head_weights(const AttentionLayer& layer, VisualRange visual) {
  if (visual.count == 0) throw ValidationError("empty visual range");
  if (visual.start + visual.count > layer.seq_len)
    throw ValidationError("visual range exceeds sequence length");

  HeadWeights out;
  out.weights.assign(layer.heads, 0.0);
  for (std::size_t h = 0; h < layer.heads; ++h) {
    double total = 0.0;
    for (std::size_t r = 0; r < layer.seq_len; ++r) {
      double row_max = 0.0;
      for (std::size_t c = visual.start; c < visual.start + visual.count; ++c)
        row_max = std::max(row_max, layer.at(h, r, c));
      total += row_max;
    }
    out.weights[h] = total / static_cast<double>(layer.seq_len);
  }
  const double top = *std::ranges::max_element(out.weights);
  if (top <= 0.0) {
    std::ranges::fill(out.weights, 1.0);
  } else {
    for (double& w : out.weights) w /= top;
  }
  return out;
}

inline SquareMatrix aggregate_heads(const AttentionLayer& layer, const HeadWeights& w,
                                    bool renormalize = true) {
  if (w.weights.size() != layer.heads) throw ValidationError("head weight count mismatch");
  const double weight_sum = std::accumulate(w.weights.begin(), w.weights.end(), 0.0);
  if (!(weight_sum > 0.0)) throw ValidationError("head weights sum to zero");

  const std::size_t n = layer.seq_len;
  SquareMatrix out(n);
  for (std::size_t h = 0; h < layer.heads; ++h) {
    const double wh = w.weights[h];
    if (wh == 0.0) continue;
    for (std::size_t i = 0; i < n * n; ++i) out.values[i] += wh * layer.values[h * n * n + i];
  }
  for (double& v : out.values) v /= weight_sum;

  if (renormalize) {
    for (std::size_t r = 0; r < n; ++r) {
      double sum = 0.0;
      for (std::size_t c = 0; c < n; ++c) sum += out(r, c);
      if (sum > 0.0) {
        for (std::size_t c = 0; c < n; ++c) out(r, c) /= sum;
      } else {
        out(r, r) = 1.0;
      }
    }
  }
  return out;
}

inline SquareMatrix residual_mix(const SquareMatrix& a) {
  SquareMatrix out = a;
  for (double& v : out.values) v *= 0.5;
  for (std::size_t i = 0; i < a.n; ++i) out(i, i) += 0.5;
  return out;
}

/// Fully mixed per-layer transition matrix A_hat for one stored layer.
inline SquareMatrix layer_transition(const AttentionStack& s, std::size_t stored_index,
                                     const RolloutOptions& opts = {}) {
  const auto layer = layer_view(s, stored_index);
  const HeadWeights w = opts.head_weighting
                            ? head_weights(layer, visual_range(s))
                            : HeadWeights{std::vector<double>(s.num_heads, 1.0)};
  return residual_mix(aggregate_heads(layer, w, opts.renormalize));
}

/// Middle model layer, clamped into the stored range.
inline int default_start_layer(const AttentionStack& s) {
  return std::max(s.first_stored_layer, s.num_model_layers / 2);
}

namespace detail {

inline std::size_t checked_start(const AttentionStack& s, int start_layer) {
  if (start_layer < s.first_stored_layer)
    throw ValidationError("start layer " + std::to_string(start_layer) +
                          " precedes first stored layer " + std::to_string(s.first_stored_layer));
  if (start_layer > s.last_layer())
    throw ValidationError("start layer " + std::to_string(start_layer) + " beyond last layer " +
                          std::to_string(s.last_layer()));
  return static_cast<std::size_t>(start_layer - s.first_stored_layer);
}

}  // namespace detail

inline RolloutMatrix rollout(const AttentionStack& s, int start_layer,
                             const RolloutOptions& opts = {}) {
  const std::size_t first = detail::checked_start(s, start_layer);
  const std::size_t n = s.seq_len;
  SquareMatrix r = layer_transition(s, first, opts);
  for (std::size_t l = first + 1; l < s.layers.size(); ++l) {
    const SquareMatrix a = layer_transition(s, l, opts);
    SquareMatrix next(n);
    for (std::size_t i = 0; i < n; ++i) {
      double* out_row = next.values.data() + i * n;
      for (std::size_t k = 0; k < n; ++k) {
        const double aik = a(i, k);
        if (aik == 0.0) continue;
        const double* r_row = r.values.data() + k * n;
        for (std::size_t j = 0; j < n; ++j) out_row[j] += aik * r_row[j];
      }
    }
    r = std::move(next);
  }
  return {std::move(r), start_layer};
}

/// One row of the rollout matrix, computed right-to-left as a chain of
/// vector-matrix products without forming any N x N product.
inline std::vector<double> rollout_row(const AttentionStack& s, int start_layer, std::size_t row,
                                       const RolloutOptions& opts = {}) {
  const std::size_t first = detail::checked_start(s, start_layer);
  if (row >= s.seq_len) throw ValidationError("row index out of range");
  const std::size_t n = s.seq_len;
  const std::size_t last = s.layers.size() - 1;

  const SquareMatrix top = layer_transition(s, last, opts);
  std::vector<double> v(top.row(row).begin(), top.row(row).end());
  for (std::size_t l = last; l-- > first;) {
    const SquareMatrix a = layer_transition(s, l, opts);
    std::vector<double> next(n, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
      const double vk = v[k];
      if (vk == 0.0) continue;
      const double* a_row = a.values.data() + k * n;
      for (std::size_t j = 0; j < n; ++j) next[j] += vk * a_row[j];
    }
    v = std::move(next);
  }
  return v;
}

/// Reads the visual columns of one rollout row into a (frames, Hp, Wp) map.
inline GroundingMap extract_grounding(std::span<const double> row, VisualRange visual,
                                      const TokenGrid& grid) {
  if (grid.count() != visual.count)
    throw ValidationError("grid " + std::to_string(grid.frames) + "x" + std::to_string(grid.height) +
                          "x" + std::to_string(grid.width) + " does not match visual count " +
                          std::to_string(visual.count));
  if (visual.start + visual.count > row.size())
    throw ValidationError("visual range exceeds row length");
  GroundingMap map;
  map.values = Tensor3<double>(grid.frames, grid.height, grid.width);
  auto out = map.values.data();
  for (std::size_t i = 0; i < visual.count; ++i) out[i] = std::max(0.0, row[visual.start + i]);
  return map;
}

inline GroundingMap extract_grounding(const RolloutMatrix& r, std::size_t query_index,
                                      VisualRange visual, const TokenGrid& grid) {
  if (query_index >= r.matrix.n) throw ValidationError("query index out of range");
  return extract_grounding(r.matrix.row(query_index), visual, grid);
}

/// Raw grounding map of a dump: rollout row of the query token over visual keys.
inline GroundingMap grounding_from_dump(const AttentionStack& s, std::optional<int> start_layer,
                                        const RolloutOptions& opts = {}) {
  const int start = start_layer.value_or(default_start_layer(s));
  const auto row = rollout_row(s, start, s.query_index, opts);
  return extract_grounding(row, visual_range(s), s.grid);
}

}  // namespace decaf
