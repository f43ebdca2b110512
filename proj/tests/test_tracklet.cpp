#include <gtest/gtest.h>

#include <random>

#include "decaf/tracklet.hpp"
#include "hand_cases.hpp"
#include "oracles.hpp"
#include "support.hpp"

namespace {

using namespace decaf;
using test::make_map;

MaskTracklet tracklet(BinaryVolume masks, double s_obj, std::size_t order = 0) {
  MaskTracklet t;
  t.masks = std::move(masks);
  t.s_obj = s_obj;
  t.seed_order = order;
  return t;
}

BinaryVolume volume_from(const BinaryMask& m, std::size_t frames = 1) {
  BinaryVolume v(frames, m.height(), m.width(), 0);
  for (std::size_t t = 0; t < frames; ++t) v.set_frame(t, m);
  return v;
}

TEST(PointQueries, NothingAboveThreshold) {
  EXPECT_TRUE(generate_point_queries(make_map(2, 2, 2, std::vector<double>(8, 0.79)), 0.8).empty());
}

TEST(PointQueries, UniformMapQueriesEveryCell) {
  const auto q = generate_point_queries(make_map(3, 2, 4, std::vector<double>(24, 1.0), 14.0), 0.8);
  ASSERT_EQ(q.size(), 24u);
  // Ties keep (t, y, x) order.
  EXPECT_EQ(q.front().t, 0u);
  EXPECT_EQ(q.back().t, 2u);
  EXPECT_EQ(q.back().cell_y, 1u);
  EXPECT_EQ(q.back().cell_x, 3u);
}

TEST(PointQueries, ThresholdIsMonotone) {
  std::mt19937 rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> v(2 * 3 * 3);
    for (double& x : v) x = test::uniform(rng);
    const auto map = make_map(2, 3, 3, v);
    const double lo = test::uniform(rng, 0.05, 1.0), hi = test::uniform(rng, lo, 1.0);
    const auto a = generate_point_queries(map, lo), b = generate_point_queries(map, hi);
    EXPECT_GE(a.size(), b.size());
    for (const auto& q : b) EXPECT_NE(std::ranges::find(a, q), a.end());
  }
}

TEST(VolumeIou, IdenticalAndDisjoint) {
  const auto a = volume_from(test::make_mask(4, 4, 0, 2, 0, 4), 2);
  const auto b = volume_from(test::make_mask(4, 4, 2, 4, 0, 4), 2);
  EXPECT_EQ(volume_iou(a, a), 1.0);
  EXPECT_EQ(volume_iou(a, b), 0.0);
  EXPECT_THROW(volume_iou(a, BinaryVolume(1, 4, 4, 0)), ValidationError);
}

TEST(VolumeIou, SymmetricAndBounded) {
  std::mt19937 rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    BinaryVolume a(3, 4, 5, 0), b(3, 4, 5, 0);
    for (auto& x : a.data()) x = test::uniform(rng) < 0.4;
    for (auto& x : b.data()) x = test::uniform(rng) < 0.4;
    const double ab = volume_iou(a, b);
    EXPECT_EQ(ab, volume_iou(b, a));
    EXPECT_GE(ab, 0.0);
    EXPECT_LE(ab, 1.0);
  }
}

TEST(FrameDedup, IdenticalMaskLowerScoreDropped) {
  const auto m = test::make_mask(4, 4, 0, 2, 0, 2);
  std::vector<MaskTracklet> existing{tracklet(volume_from(m), 1.8)};
  EXPECT_FALSE(frame_dedup(existing, m, 1.6, 0).keep_new);
}

TEST(FrameDedup, HigherScoreSuppressesExisting) {
  const auto m = test::make_mask(4, 4, 0, 2, 0, 2);
  std::vector<MaskTracklet> existing{tracklet(volume_from(m), 1.5)};
  const auto d = frame_dedup(existing, m, 1.9, 0);
  EXPECT_TRUE(d.keep_new);
  EXPECT_EQ(d.suppressed, std::vector<std::size_t>{0});
}

TEST(FrameDedup, HalfOverlapKeepsBoth) {
  std::vector<MaskTracklet> existing{tracklet(volume_from(test::make_mask(4, 4, 0, 2, 0, 4)), 1.8)};
  const auto d = frame_dedup(existing, test::make_mask(4, 4, 0, 1, 0, 4), 1.2, 0);
  EXPECT_TRUE(d.keep_new);
  EXPECT_TRUE(d.suppressed.empty());
}

TEST(FrameDedup, EqualScoreEarlierSeedWins) {
  BinaryMask a = test::make_mask(4, 5, 0, 4, 0, 5);
  BinaryMask b = a;
  b(3, 4) = 0;  // IoU 19/20 > 0.7
  std::vector<MaskTracklet> existing{tracklet(volume_from(a), 0.9)};
  EXPECT_FALSE(frame_dedup(existing, b, 0.9, 0).keep_new);
}

TEST(FrameDedup, InactiveTrackletsIgnored) {
  const auto m = test::make_mask(4, 4, 0, 2, 0, 2);
  std::vector<MaskTracklet> existing{tracklet(volume_from(m), 1.8)};
  existing[0].status = TrackletStatus::suppressed_nms;
  EXPECT_TRUE(frame_dedup(existing, m, 0.1, 0).keep_new);
}

TEST(Nms, IdenticalPairKeepsHigherScore) {
  const auto v = volume_from(test::make_mask(4, 4, 0, 2, 0, 2), 3);
  const std::vector<MaskTracklet> t{tracklet(v, 1.5, 0), tracklet(v, 1.7, 1)};
  EXPECT_EQ(tracklet_nms(t), std::vector<std::size_t>{1});
}

TEST(Nms, DisjointAllKept) {
  const std::vector<MaskTracklet> t{tracklet(volume_from(test::make_mask(6, 6, 0, 2, 0, 6)), 1.0, 0),
                                    tracklet(volume_from(test::make_mask(6, 6, 2, 4, 0, 6)), 1.2, 1),
                                    tracklet(volume_from(test::make_mask(6, 6, 4, 6, 0, 6)), 1.1, 2)};
  EXPECT_EQ(tracklet_nms(t), (std::vector<std::size_t>{1, 2, 0}));
}

TEST(Nms, MatchesFixpointCharacterisation) {
  std::mt19937 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = test::uniform_int(rng, 1, 7);
    std::vector<MaskTracklet> t;
    // Few distinct scores so ties are exercised.
    for (std::size_t i = 0; i < k; ++i) {
      BinaryVolume v(2, 3, 3, 0);
      const std::size_t y0 = test::uniform_int(rng, 0, 1), x0 = test::uniform_int(rng, 0, 1);
      for (std::size_t f = 0; f < 2; ++f)
        for (std::size_t y = y0; y < 3; ++y)
          for (std::size_t x = x0; x < 3; ++x) v(f, y, x) = test::uniform(rng) < 0.8;
      t.push_back(tracklet(std::move(v), 1.0 + 0.1 * double(test::uniform_int(rng, 0, 3)), i));
    }
    test::oracle::Matrix iou(k, std::vector<double>(k));
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j) iou[i][j] = volume_iou(t[i].masks, t[j].masks);
    std::vector<std::size_t> order(k);
    std::iota(order.begin(), order.end(), 0);
    std::ranges::stable_sort(order, [&](std::size_t a, std::size_t b) { return t[a].s_obj > t[b].s_obj; });
    std::vector<std::size_t> priority(k);
    for (std::size_t r = 0; r < k; ++r) priority[order[r]] = r;
    const auto fix = test::oracle::nms_fixpoints(iou, priority, 0.7);
    ASSERT_EQ(fix.size(), 1u) << "trial " << trial;
    auto kept = tracklet_nms(t, 0.7);
    std::ranges::sort(kept);
    EXPECT_EQ(kept, fix.front()) << "trial " << trial;
  }
}

TEST(AttentionMask, ConstantFrameAllOnes) {
  const auto m = attention_binary_mask(make_map(1, 2, 3, std::vector<double>(6, 0.4)));
  EXPECT_EQ(count_set(m.data()), 6u);
}

TEST(AttentionMask, TwoLevelFrame) {
  const auto m = attention_binary_mask(make_map(1, 1, 4, {0.2, 0.2, 0.2, 0.9}));
  EXPECT_EQ(std::vector<std::uint8_t>(m.data().begin(), m.data().end()),
            (std::vector<std::uint8_t>{0, 0, 0, 1}));
}

TEST(PenalizedValues, ConstantFrameUnchanged) {
  const auto v = make_map(1, 2, 2, std::vector<double>(4, 0.3));
  EXPECT_EQ(penalized_values(v), v.values);
}

TEST(PenalizedValues, ZeroFrameStaysZero) {
  const auto p = penalized_values(make_map(2, 2, 2, {0, 0, 0, 0, 1, 0, 0, 0}));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(p.data()[i], 0.0);
  EXPECT_EQ(p(1, 0, 0), 1.0);
  EXPECT_EQ(p(1, 1, 1), -1.0);
}

TEST(DownsampleMask, CellFractions) {
  BinaryVolume full(1, 4, 4, 1);
  const auto whole = downsample_mask(full, 2, 2);
  for (double v : whole.data()) EXPECT_EQ(v, 1.0);
  BinaryVolume m(1, 4, 4, 0);
  m(0, 0, 0) = m(0, 0, 1) = m(0, 1, 0) = m(0, 1, 1) = 1;  // whole top-left cell
  m(0, 0, 2) = m(0, 0, 3) = 1;                              // half of the top-right cell
  const auto c = downsample_mask(m, 2, 2);
  EXPECT_EQ(c(0, 0, 0), 1.0);
  EXPECT_EQ(c(0, 0, 1), 0.5);
  EXPECT_EQ(c(0, 1, 0), 0.0);
  EXPECT_THROW(downsample_mask(m, 5, 2), ValidationError);
}

TEST(DownsampleMask, FractionalCellsConserveArea) {
  std::mt19937 rng(4);
  for (int trial = 0; trial < 30; ++trial) {
    BinaryVolume m(1, 7, 9, 0);
    for (auto& x : m.data()) x = test::uniform(rng) < 0.5;
    const auto c = downsample_mask(m, 3, 4);
    double area = 0.0;
    for (double v : c.data()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0 + 1e-12);
      area += v;
    }
    EXPECT_NEAR(area * (7.0 / 3.0) * (9.0 / 4.0), double(count_set(m.data())), 1e-9);
  }
}

// Consistency of a mask matching the attention mask exactly is 1; of an empty mask, 0.
TEST(Consistency, SelfIsOneEmptyIsZero) {
  std::mt19937 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> vals(2 * 3 * 3);
    for (double& x : vals) x = test::uniform(rng);
    const auto v = make_map(2, 3, 3, vals);
    const auto m_attn = attention_binary_mask(v);
    const auto v_hat = penalized_values(v);
    Tensor3<double> cells(2, 3, 3, 0.0);
    for (std::size_t i = 0; i < cells.size(); ++i) cells.data()[i] = m_attn.data()[i];
    const auto s = consistency_score(cells, m_attn, v_hat);
    EXPECT_EQ(s.raw, 1.0);
    EXPECT_EQ(s.clamped, 1.0);
    EXPECT_EQ(consistency_score(Tensor3<double>(2, 3, 3, 0.0), m_attn, v_hat).raw, 0.0);
  }
}

TEST(Consistency, AddingSubMeanCellsLowersScore) {
  std::mt19937 rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> vals(3 * 3);
    for (double& x : vals) x = test::uniform(rng, 0.01, 1.0);
    const auto v = make_map(1, 3, 3, vals);
    const auto m_attn = attention_binary_mask(v);
    const auto v_hat = penalized_values(v);
    Tensor3<double> cells(1, 3, 3, 0.0);
    for (std::size_t i = 0; i < cells.size(); ++i) cells.data()[i] = m_attn.data()[i];
    double prev = consistency_score(cells, m_attn, v_hat).raw;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (m_attn.data()[i]) continue;
      cells.data()[i] = 1.0;
      const double now = consistency_score(cells, m_attn, v_hat).raw;
      EXPECT_LT(now, prev);
      prev = now;
    }
  }
}

TEST(Consistency, ShapeMismatchRejected) {
  const auto v = make_map(1, 2, 2, {0, 1, 0, 1});
  EXPECT_THROW(consistency_score(Tensor3<double>(1, 2, 3, 0.0), attention_binary_mask(v), penalized_values(v)),
               ValidationError);
}

TEST(Scores, ObjectAndTrackletScores) {
  EXPECT_EQ(object_score(0.9, 0.8), 0.9 + 0.8);
  EXPECT_DOUBLE_EQ(tracklet_score(0.9, 0.6, 0.3), 0.6);
  EXPECT_DOUBLE_EQ(tracklet_score(0.9, 0.6, -2.0), 0.5);
  EXPECT_DOUBLE_EQ(tracklet_score(0.9, 0.6, 4.0), (0.9 + 0.6 + 1.0) / 3.0);
}

TEST(Select, FallbackKeepsBest) {
  std::vector<MaskTracklet> t(3);
  t[0].s_trk = 0.5;
  t[1].s_trk = 0.7;
  t[2].s_trk = 0.7;
  bool fallback = false;
  EXPECT_EQ(select_tracklets(t, 0.8, &fallback), std::vector<std::size_t>{1});
  EXPECT_TRUE(fallback);
  EXPECT_EQ(select_tracklets(t, 0.6, &fallback), (std::vector<std::size_t>{1, 2}));
  EXPECT_FALSE(fallback);
  EXPECT_TRUE(select_tracklets({}, 0.8, &fallback).empty());
  EXPECT_FALSE(fallback);
}

TEST(Select, ThresholdIsMonotone) {
  std::mt19937 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<MaskTracklet> t(test::uniform_int(rng, 1, 8));
    for (auto& x : t) x.s_trk = test::uniform(rng);
    const double lo = test::uniform(rng), hi = test::uniform(rng, lo, 1.0);
    bool fa = false, fb = false;
    const auto a = select_tracklets(t, lo, &fa), b = select_tracklets(t, hi, &fb);
    if (!fb) {
      EXPECT_FALSE(fa);
      for (std::size_t i : b) EXPECT_NE(std::ranges::find(a, i), a.end());
    }
  }
}

TEST(PromptingConfig, Validation) {
  PromptingConfig c;
  EXPECT_NO_THROW(c.validate());
  c.tau_pq = 1.01;
  EXPECT_THROW(c.validate(), ValidationError);
  c.tau_pq = 0.0;
  EXPECT_THROW(c.validate(), ValidationError);
  c.tau_pq = 1.0;
  c.tau_trk = 0.0;
  EXPECT_NO_THROW(c.validate());
  c.tau_trk = -0.1;
  EXPECT_THROW(c.validate(), ValidationError);
  c = {};
  c.nms_iou = 0.0;
  EXPECT_THROW(c.validate(), ValidationError);
  c = {};
  c.dedup_iou = 1.5;
  EXPECT_THROW(c.validate(), ValidationError);
}

class PromptingTest : public ::testing::Test {
 protected:
  // Attention = region-7 coverage on a 4x4 grid of 8 px cells.
  void SetUp() override {
    frames = test::fixture::region7_video(6);
    const std::size_t g = 4, cell = 8;
    std::vector<double> v(frames.size() * g * g, 0.0);
    for (std::size_t t = 0; t < frames.size(); ++t)
      for (std::size_t c = 0; c < g * g; ++c) {
        double cov = 0.0;
        for (std::size_t y = c / g * cell; y < (c / g + 1) * cell; ++y)
          for (std::size_t x = c % g * cell; x < (c % g + 1) * cell; ++x) cov += frames[t](y, x) == 7;
        v[t * g * g + c] = cov / double(cell * cell);
      }
    std::vector<int> sampled(frames.size());
    std::iota(sampled.begin(), sampled.end(), 0);
    mf = test::fixture::map_file(make_map(frames.size(), g, g, v, double(cell)), sampled,
                                 static_cast<int>(frames.size()), 32, 32);
  }

  std::vector<LabelImage> frames;
  MapFile mf;
};

TEST_F(PromptingTest, EmptyQuerySetGivesEmptyMasksAndWarning) {
  auto blank = mf;
  std::ranges::fill(blank.map.values.data(), 0.0);
  const auto r = test::fixture::prompt_with_oracle(blank, frames);
  EXPECT_TRUE(r.objects.empty());
  EXPECT_EQ(count_set(r.union_masks.data()), 0u);
  EXPECT_EQ(r.union_masks.frames(), frames.size());
  ASSERT_FALSE(r.warnings.empty());
  EXPECT_NE(r.warnings.front().find("no point queries"), std::string::npos);
}

TEST_F(PromptingTest, EveryCandidateEndsInATerminalState) {
  const auto r = test::fixture::prompt_with_oracle(mf, frames);
  ASSERT_FALSE(r.candidates.empty());
  std::size_t kept = 0;
  for (const auto& c : r.candidates) {
    EXPECT_NE(c.status, TrackletStatus::active);
    kept += c.status == TrackletStatus::retained || c.status == TrackletStatus::fallback;
  }
  EXPECT_EQ(kept, r.objects.size());
  for (std::size_t t = 0; t < frames.size(); ++t)
    EXPECT_TRUE(std::ranges::equal(r.union_masks.frame(t), test::label_equals(frames[t], 7).data())) << "frame " << t;
}

TEST_F(PromptingTest, Deterministic) {
  const auto a = test::fixture::prompt_with_oracle(mf, frames);
  const auto b = test::fixture::prompt_with_oracle(mf, frames);
  EXPECT_EQ(a.union_masks, b.union_masks);
  ASSERT_EQ(a.candidates.size(), b.candidates.size());
  for (std::size_t i = 0; i < a.candidates.size(); ++i) {
    EXPECT_EQ(a.candidates[i].status, b.candidates[i].status);
    EXPECT_EQ(a.candidates[i].s_trk, b.candidates[i].s_trk);
  }
}

TEST_F(PromptingTest, FrameCountMismatchRejected) {
  auto bad = mf;
  bad.original_frame_count += 1;
  EXPECT_THROW(test::fixture::prompt_with_oracle(bad, frames), ValidationError);
}

TEST_F(PromptingTest, RaisingTauTrkNeverAddsObjects) {
  std::size_t prev = std::numeric_limits<std::size_t>::max();
  for (double tau : {0.0, 0.3, 0.6, 0.9, 1.0}) {
    PromptingConfig cfg;
    cfg.tau_trk = tau;
    const auto r = test::fixture::prompt_with_oracle(mf, frames, cfg);
    EXPECT_LE(r.objects.size(), prev) << tau;
    EXPECT_GE(r.objects.size(), 1u);
    prev = r.objects.size();
  }
}

}  // namespace
