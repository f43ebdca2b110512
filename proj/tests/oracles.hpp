#pragma once

// Reference implementations written independently of the library code they
// check. They favour obviousness over speed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "decaf/attn_dump.hpp"

namespace decaf::test::oracle {

using Matrix = std::vector<std::vector<double>>;

/// Rollout straight from the definitions, in float64, with nested vectors
/// and an (i, j, k) product loop.
inline Matrix rollout(const AttentionStack& s, int start_layer, bool renormalize = true) {
  const std::size_t n = s.seq_len, h = s.num_heads;
  const std::size_t vs = s.visual_start, ve = s.visual_start + s.visual_count;
  Matrix r;
  for (std::size_t l = static_cast<std::size_t>(start_layer - s.first_stored_layer); l < s.layers.size(); ++l) {
    auto a = [&](std::size_t head, std::size_t i, std::size_t j) {
      return static_cast<double>(s.layers[l][(head * n + i) * n + j]);
    };
    std::vector<double> m(h);
    for (std::size_t head = 0; head < h; ++head) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        double best = 0.0;
        for (std::size_t j = vs; j < ve; ++j) best = std::max(best, a(head, i, j));
        acc += best;
      }
      m[head] = acc / static_cast<double>(n);
    }
    const double top = *std::max_element(m.begin(), m.end());
    std::vector<double> w(h, 1.0);
    if (top > 0.0)
      for (std::size_t head = 0; head < h; ++head) w[head] = m[head] / top;
    double wsum = 0.0;
    for (double x : w) wsum += x;

    Matrix hat(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> row(n, 0.0);
      for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::size_t head = 0; head < h; ++head) acc += w[head] * a(head, i, j);
        row[j] = acc / wsum;
      }
      if (renormalize) {
        double rs = 0.0;
        for (double x : row) rs += x;
        if (rs > 0.0) {
          for (double& x : row) x /= rs;
        } else {
          row[i] = 1.0;
        }
      }
      for (std::size_t j = 0; j < n; ++j) hat[i][j] = (row[j] + (i == j ? 1.0 : 0.0)) / 2.0;
    }

    if (r.empty()) {
      r = hat;
      continue;
    }
    Matrix next(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::size_t k = 0; k < n; ++k) acc += hat[i][k] * r[k][j];
        next[i][j] = acc;
      }
    r = std::move(next);
  }
  return r;
}

/// Exhaustive Otsu in exact integer arithmetic. Candidate k splits bins
/// [0, k) from [k, bins). The between-class variance of a split is
/// proportional to (n1*S0 - n0*S1)^2 / (n0*n1) with S the bin-index sums;
/// candidates are compared by cross-multiplication. Returns the lowest
/// maximizing k, or nullopt when fewer than two bins are occupied.
inline std::optional<std::size_t> otsu_k(const std::vector<double>& values, std::size_t bins = 256) {
  __extension__ using i128 = __int128;
  std::vector<std::int64_t> hist(bins, 0);
  for (double v : values) {
    const double c = std::min(std::max(v, 0.0), 1.0);
    auto b = static_cast<std::size_t>(c * static_cast<double>(bins));
    if (b >= bins) b = bins - 1;
    ++hist[b];
  }
  std::optional<std::size_t> best;
  i128 best_num = 0, best_den = 1;
  for (std::size_t k = 1; k < bins; ++k) {
    std::int64_t n0 = 0, n1 = 0, s0 = 0, s1 = 0;
    for (std::size_t b = 0; b < bins; ++b) {
      const auto bi = static_cast<std::int64_t>(b);
      if (b < k) {
        n0 += hist[b];
        s0 += hist[b] * bi;
      } else {
        n1 += hist[b];
        s1 += hist[b] * bi;
      }
    }
    if (n0 == 0 || n1 == 0) continue;
    const i128 d = static_cast<i128>(n1) * s0 - static_cast<i128>(n0) * s1;
    const i128 num = d * d;
    const i128 den = static_cast<i128>(n0) * n1;
    if (!best || num * best_den > best_num * den) {
      best = k;
      best_num = num;
      best_den = den;
    }
  }
  return best;
}

/// Greedy suppression characterised without running the greedy loop: the
/// kept set K is the unique subset where (a) no two members overlap above
/// the threshold and (b) every non-member overlaps some member of higher
/// priority. All 2^n subsets are checked; returns every subset satisfying
/// both (the caller asserts there is exactly one). `priority[i] < priority[j]`
/// means i ranks first.
inline std::vector<std::vector<std::size_t>> nms_fixpoints(const Matrix& iou,
                                                           const std::vector<std::size_t>& priority,
                                                           double thresh) {
  const std::size_t n = iou.size();
  std::vector<std::vector<std::size_t>> out;
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    bool ok = true;
    for (std::size_t i = 0; i < n && ok; ++i) {
      const bool in_i = mask >> i & 1u;
      if (in_i) {
        for (std::size_t j = 0; j < n && ok; ++j)
          if (j != i && (mask >> j & 1u) && iou[i][j] > thresh) ok = false;
      } else {
        bool covered = false;
        for (std::size_t j = 0; j < n; ++j)
          if ((mask >> j & 1u) && priority[j] < priority[i] && iou[i][j] > thresh) covered = true;
        if (!covered) ok = false;
      }
    }
    if (!ok) continue;
    std::vector<std::size_t> kept;
    for (std::size_t i = 0; i < n; ++i)
      if (mask >> i & 1u) kept.push_back(i);
    out.push_back(std::move(kept));
  }
  return out;
}

/// Best 2-means split of sorted 1-D data: returns the index of the first
/// element of the upper cluster.
inline std::size_t two_means_split(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  double best = std::numeric_limits<double>::infinity();
  std::size_t best_i = 1;
  for (std::size_t i = 1; i < v.size(); ++i) {
    auto sse = [&](std::size_t lo, std::size_t hi) {
      double mean = 0.0;
      for (std::size_t k = lo; k < hi; ++k) mean += v[k];
      mean /= static_cast<double>(hi - lo);
      double e = 0.0;
      for (std::size_t k = lo; k < hi; ++k) e += (v[k] - mean) * (v[k] - mean);
      return e;
    };
    const double e = sse(0, i) + sse(i, v.size());
    if (e < best) {
      best = e;
      best_i = i;
    }
  }
  return best_i;
}

}  // namespace decaf::test::oracle
