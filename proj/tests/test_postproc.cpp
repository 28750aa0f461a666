#include <gtest/gtest.h>

#include "sedkit/postproc.hpp"
#include "test_util.hpp"

using namespace sedkit;

namespace {

const std::vector<std::string> kAB{"A", "B"};

Tensor<float> column(std::vector<float> v) {
  const auto n = v.size();
  return Tensor<float>({n, 1}, std::move(v));
}

// Random binary column where every run is at least min_run long (a root of
// the median filter of length 2 * min_run - 1).
std::vector<float> runs_column(Rng& rng, std::size_t n, std::size_t min_run) {
  std::vector<float> v;
  float cur = float(rng.uniform_int(0, 1));
  while (v.size() < n) {
    const auto len = std::size_t(rng.uniform_int(std::int64_t(min_run), std::int64_t(3 * min_run)));
    for (std::size_t i = 0; i < len && v.size() < n; ++i) v.push_back(cur);
    cur = 1.f - cur;
  }
  // A short tail run would not be a root; extend the previous value instead.
  std::size_t tail = 1;
  while (tail < n && v[n - 1 - tail] == v[n - 1]) ++tail;
  if (tail < min_run)
    for (std::size_t i = n - tail; i < n; ++i) v[i] = 1.f - v[i];
  return v;
}

}  // namespace

TEST(ClassTableTest, Dcase) {
  const auto t = ClassTable::dcase();
  ASSERT_EQ(t.size(), 10u);
  const std::map<std::string, std::size_t> want{{"Alarm_bell_ringing", 5}, {"Blender", 11}, {"Cat", 5},
                                                {"Dishes", 5}, {"Dog", 5}, {"Electric_shaver_toothbrush", 67},
                                                {"Frying", 61}, {"Running_water", 49}, {"Speech", 5},
                                                {"Vacuum_cleaner", 17}};
  for (const auto& [name, len] : want) EXPECT_EQ(t.median_lengths[t.index_of(name)], len) << name;
  EXPECT_THROW(t.index_of("Piano"), Error);
  auto bad = t;
  bad.median_lengths[3] = 4;
  EXPECT_THROW(bad.validate(), Error);
  bad = t;
  bad.median_lengths.pop_back();
  EXPECT_THROW(bad.validate(), Error);
}

TEST(MaskingTest, Examples) {
  const Tensor<float> s({1, 2}, {0.7f, 0.7f});
  EXPECT_EQ(weak_prediction_masking(s, Tensor<float>({2}, {0.9f, 0.1f})).vec(), (std::vector<float>{0.7f, 0.f}));
  EXPECT_EQ(weak_prediction_masking(s, Tensor<float>({2}, {0.5f, 0.6f})), s);
  for (float v : weak_prediction_masking(s, Tensor<float>({2}, {0.4f, 0.f})).vec()) EXPECT_EQ(v, 0.f);
  EXPECT_THROW(weak_prediction_masking(s, Tensor<float>({3})), Error);
}

TEST(WeakSedTest, Examples) {
  const Tensor<float> weak({2}, {0.8f, 0.2f});
  const auto y = weak_sed(Tensor<float>({3, 2}), weak);
  for (std::size_t t = 0; t < 3; ++t) {
    EXPECT_EQ(y(t, 0), 0.8f);
    EXPECT_EQ(y(t, 1), 0.2f);
  }
  const Tensor<float> same({2, 2}, {0.8f, 0.2f, 0.8f, 0.2f});
  EXPECT_EQ(weak_sed(same, weak), same);
  // Decoding tiled rows gives whole-clip events.
  const auto ev = decode_events(y, kAB, "c.wav", 0.5f, 0.064, 0.15);
  ASSERT_EQ(ev.size(), 1u);
  EXPECT_EQ(ev[0].label, "A");
  EXPECT_EQ(ev[0].onset, 0.0);
  EXPECT_EQ(ev[0].offset, 0.15);
}

TEST(MaskingTest, NeverIncreasesAndWeakSedIsFlat) {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t T = rng.uniform_int(1, 30), C = rng.uniform_int(1, 10);
    const auto s = testutil::random_tensor<float>(rng, {T, C}, 0, 1);
    const auto w = testutil::random_tensor<float>(rng, {C}, 0, 1);
    const auto m = weak_prediction_masking(s, w);
    for (std::size_t i = 0; i < s.size(); ++i) ASSERT_LE(m[i], s[i]);
    const auto f = weak_sed(s, w);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t t = 1; t < T; ++t) ASSERT_EQ(f(t, c), f(0, c));
  }
}

TEST(MedianTest, Examples) {
  const std::vector<float> spike{0, 0, 1, 0, 0};
  EXPECT_EQ(median_filter(spike, 5), std::vector<float>(5, 0.f));
  EXPECT_EQ(median_filter(spike, 1), spike);
  for (std::size_t L : {1u, 3u, 5u, 67u}) EXPECT_EQ(median_filter(std::vector<float>(9, 0.3f), L), std::vector<float>(9, 0.3f));
  EXPECT_THROW(median_filter(spike, 4), Error);
  // Edge replication: 0.9 at the start is repeated into the pad.
  EXPECT_EQ(median_filter(std::vector<float>{0.9f, 0.1f, 0.2f}, 3), (std::vector<float>{0.9f, 0.2f, 0.2f}));
}

TEST(MedianTest, MatchesSortOracle) {
  Rng rng(2);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = rng.uniform_int(1, 40), L = 2 * rng.uniform_int(0, 10) + 1;
    std::vector<float> x(n);
    for (auto& v : x) v = float(rng.uniform());
    const auto y = median_filter(x, L);
    for (std::size_t t = 0; t < n; ++t) {
      std::vector<float> w;
      for (long k = -long(L / 2); k <= long(L / 2); ++k) w.push_back(x[std::clamp<long>(long(t) + k, 0, long(n) - 1)]);
      std::sort(w.begin(), w.end());
      ASSERT_EQ(y[t], w[L / 2]);
    }
  }
}

TEST(MedianTest, PerClassLengths) {
  const ClassTable t{{"A", "B"}, {1, 5}};
  const Tensor<float> x({5, 2}, {0, 0, 0, 0, 1, 1, 0, 0, 0, 0});
  const auto y = median_filter_per_class(x, t);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(y(i, 0), x(i, 0));
    EXPECT_EQ(y(i, 1), 0.f);
  }
  EXPECT_THROW(median_filter_per_class(Tensor<float>({5, 3}), t), Error);
}

TEST(MedianTest, InteriorSpikesRemovedForDcaseTable) {
  const auto table = ClassTable::dcase();
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    Tensor<float> up({156, 10}), down({156, 10}, 1.f);
    for (std::size_t c = 0; c < 10; ++c) {
      const auto t = std::size_t(rng.uniform_int(1, 154));
      up(t, c) = 1.f;
      down(t, c) = 0.f;
    }
    for (float v : median_filter_per_class(up, table).vec()) ASSERT_EQ(v, 0.f);
    for (float v : median_filter_per_class(down, table).vec()) ASSERT_EQ(v, 1.f);
  }
}

TEST(MedianTest, RootSignalsAreFixedPoints) {
  // Binary columns whose runs are all >= (L + 1) / 2 pass unchanged, so the
  // filter is idempotent on them.
  Rng rng(4);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t L = 2 * rng.uniform_int(1, 8) + 1, n = rng.uniform_int(L, 200);
    const auto x = runs_column(rng, n, L / 2 + 1);
    const auto y = median_filter(x, L);
    ASSERT_EQ(y, x) << "L " << L;
    ASSERT_EQ(median_filter(y, L), y);
  }
}

TEST(MedianTest, RepeatedFilteringReachesARoot) {
  // A single pass is not idempotent in general: 1100 repeated, L = 5, shifts
  // by two frames in the interior. Iterating converges on finite columns.
  const std::vector<float> x{1, 1, 0, 0, 1, 1, 0, 0, 1, 1, 0, 0, 1, 1, 0, 0};
  const auto once = median_filter(x, 5);
  EXPECT_NE(median_filter(once, 5), once);

  Rng rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t L = 2 * rng.uniform_int(1, 8) + 1, n = rng.uniform_int(1, 160);
    std::vector<float> v(n);
    for (auto& s : v) s = float(rng.uniform_int(0, 1));
    std::size_t passes = 0;
    for (auto next = median_filter(v, L); next != v; next = median_filter(v, L)) {
      v = next;
      ASSERT_LT(++passes, n + 1) << "no convergence";
    }
    // The limit is a root: binary, every interior run long enough.
    for (float s : v) ASSERT_TRUE(s == 0.f || s == 1.f);
  }
}

TEST(DecodeTest, Examples) {
  EXPECT_TRUE(decode_events(Tensor<float>({4, 2}, 0.2f), kAB, "c").empty());
  const auto one = decode_events(column({0, 1, 1, 0}), {"A"}, "c.wav");
  ASSERT_EQ(one.size(), 1u);
  EXPECT_NEAR(one[0].onset, 0.064, 1e-12);
  EXPECT_NEAR(one[0].offset, 0.192, 1e-12);
  EXPECT_EQ(one[0].clip, "c.wav");
  EXPECT_EQ(decode_events(column({1, 1, 0, 1}), {"A"}, "c").size(), 2u);
  // Threshold is inclusive.
  EXPECT_EQ(decode_events(column({0.5f}), {"A"}, "c").size(), 1u);
  EXPECT_THROW(decode_events(column({0.5f}), {"A"}, "c", 1.f), Error);
  EXPECT_THROW(decode_events(column({0.5f}), kAB, "c"), Error);
  // Offset clipped to the clip duration.
  const auto clipped = decode_events(column({1, 1, 1}), {"A"}, "c", 0.5f, 0.064, 0.1);
  ASSERT_EQ(clipped.size(), 1u);
  EXPECT_EQ(clipped[0].offset, 0.1);
}

TEST(DecodeTest, SortedAndNonOverlapping) {
  Rng rng(6);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t T = rng.uniform_int(1, 60);
    const auto s = testutil::random_tensor<float>(rng, {T, 2}, 0, 1);
    const auto ev = decode_events(s, kAB, "c", float(rng.uniform(0.05, 0.95)));
    for (std::size_t i = 1; i < ev.size(); ++i) ASSERT_LE(ev[i - 1].onset, ev[i].onset);
    for (const auto& label : kAB) {
      double last_off = -1;
      for (const auto& e : ev)
        if (e.label == label) {
          ASSERT_GT(e.onset, last_off);  // maximal runs never touch
          ASSERT_LT(e.onset, e.offset);
          last_off = e.offset;
        }
    }
  }
}

TEST(DecodeTest, RasterizeRoundTrip) {
  Rng rng(7);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t T = rng.uniform_int(1, 200), C = rng.uniform_int(1, 4);
    std::vector<std::string> names;
    for (std::size_t c = 0; c < C; ++c) names.push_back("c" + std::to_string(c));
    Tensor<float> mask({T, C});
    for (auto& v : mask.data()) v = float(rng.uniform_int(0, 1));
    EXPECT_EQ(rasterize_events(decode_events(mask, names, "x"), names, T), mask);
  }
  EXPECT_THROW(rasterize_events({{"x", "Z", 0, 1}}, kAB, 4), Error);
}

TEST(PostprocessTest, Modes) {
  const ClassTable t{{"A", "B"}, {3, 3}};
  FramePredictions p{Tensor<float>({5, 2}, {0.9f, 0.9f, 0.9f, 0.1f, 0.1f, 0.9f, 0.9f, 0.9f, 0.9f, 0.9f}),
                     Tensor<float>({2}, {0.7f, 0.3f}), 0.064f};
  const auto m = postprocess_scores(p, PostprocMode::kMask, t);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(m(i, 0), 0.9f);
    EXPECT_EQ(m(i, 1), 0.f);
  }
  const auto w = postprocess_scores(p, PostprocMode::kWeakSed, t);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(w(i, 0), 0.7f);
    EXPECT_EQ(w(i, 1), 0.3f);
  }
  EXPECT_EQ(parse_postproc_mode("weaksed"), PostprocMode::kWeakSed);
  EXPECT_THROW(parse_postproc_mode("none"), Error);
}
