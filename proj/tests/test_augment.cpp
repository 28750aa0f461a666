#include <cmath>

#include <gtest/gtest.h>

#include "sedkit/augment.hpp"
#include "test_util.hpp"

using namespace sedkit;

namespace {

double gain_at(const Tensor<float>& out, const Tensor<float>& in, std::size_t f) { return double(out(f, 0)) / in(f, 0); }

}  // namespace

TEST(FilterParamsTest, Defaults) {
  const auto s = FilterAugParams::step_default();
  EXPECT_EQ(s.kind, FilterKind::kStep);
  EXPECT_EQ(s.db_low, -4.5);
  EXPECT_EQ(s.db_high, 6.0);
  EXPECT_EQ(s.min_bands, 2u);
  EXPECT_EQ(s.max_bands, 5u);
  EXPECT_EQ(s.min_bandwidth, 4u);
  const auto l = FilterAugParams::linear_default();
  EXPECT_EQ(l.kind, FilterKind::kLinear);
  EXPECT_EQ(l.db_low, -6.0);
  EXPECT_EQ(l.db_high, 4.5);
  EXPECT_EQ(l.min_bands, 3u);
  EXPECT_EQ(l.max_bands, 6u);
  EXPECT_EQ(l.min_bandwidth, 7u);
}

TEST(FilterParamsTest, Infeasible) {
  Rng rng(1);
  auto p = FilterAugParams::step_default();
  EXPECT_THROW(sample_filter_config(rng, p, 19), Error);  // 5 * 4 > 19
  EXPECT_NO_THROW(sample_filter_config(rng, p, 20));
  p.db_low = p.db_high;
  EXPECT_THROW(p.validate(128), Error);
  p = FilterAugParams::step_default();
  p.min_bands = 0;
  EXPECT_THROW(p.validate(128), Error);
  p.min_bands = 6;
  EXPECT_THROW(p.validate(128), Error);
}

TEST(SampleFilterTest, SingleBand) {
  Rng rng(2);
  FilterAugParams p{FilterKind::kStep, -1, 1, 1, 1, 1};
  const auto c = sample_filter_config(rng, p, 128);
  EXPECT_EQ(c.boundaries, (std::vector<std::size_t>{0, 128}));
  EXPECT_EQ(c.weights_db.size(), 1u);
}

TEST(SampleFilterTest, SameSeedSameConfig) {
  for (auto p : {FilterAugParams::step_default(), FilterAugParams::linear_default()}) {
    Rng a(1234), b(1234);
    const auto x = sample_filter_config(a, p, 128), y = sample_filter_config(b, p, 128);
    EXPECT_EQ(x.boundaries, y.boundaries);
    EXPECT_EQ(x.weights_db, y.weights_db);
  }
}

TEST(SampleFilterTest, PropertiesBothKinds) {
  Rng rng(7);
  for (auto p : {FilterAugParams::step_default(), FilterAugParams::linear_default()}) {
    std::vector<int> seen(p.max_bands + 1, 0);
    for (int trial = 0; trial < 3000; ++trial) {
      const auto c = sample_filter_config(rng, p, 128);
      ASSERT_NO_THROW(c.validate());
      const auto n = c.n_bands();
      ASSERT_GE(n, p.min_bands);
      ASSERT_LE(n, p.max_bands);
      ++seen[n];
      ASSERT_EQ(c.boundaries.front(), 0u);
      ASSERT_EQ(c.boundaries.back(), 128u);
      for (std::size_t i = 1; i < c.boundaries.size(); ++i)
        ASSERT_GE(c.boundaries[i] - c.boundaries[i - 1], p.min_bandwidth);
      ASSERT_EQ(c.weights_db.size(), p.kind == FilterKind::kStep ? n : n + 1);
      for (double w : c.weights_db) {
        ASSERT_GE(w, p.db_low);
        ASSERT_LE(w, p.db_high);
      }
    }
    // Inclusive range: both ends occur.
    for (auto n = p.min_bands; n <= p.max_bands; ++n) EXPECT_GT(seen[n], 0) << "band count " << n;
  }
}

TEST(SampleFilterTest, TightLayoutFallsBackToEqualSpacing) {
  // Only the equal split satisfies the width constraint; rejection rarely finds it.
  Rng rng(3);
  FilterAugParams p{FilterKind::kStep, -1, 1, 4, 4, 8};
  const auto c = sample_filter_config(rng, p, 32);
  EXPECT_EQ(c.boundaries, (std::vector<std::size_t>{0, 8, 16, 24, 32}));
}

TEST(ApplyFilterTest, ZeroDbIsIdentity) {
  Rng rng(4);
  const auto x = testutil::random_tensor<float>(rng, {16, 5}, 0, 3);
  EXPECT_EQ(apply_filter_augment(x, {FilterKind::kStep, {0, 7, 16}, {0, 0}}), x);
  EXPECT_EQ(apply_filter_augment(x, {FilterKind::kLinear, {0, 7, 16}, {0, 0, 0}}), x);
}

TEST(ApplyFilterTest, SingleBandSixDb) {
  const Tensor<float> x({3, 2}, 1.f);
  for (float v : apply_filter_augment(x, {FilterKind::kStep, {0, 3}, {6}}).vec()) EXPECT_NEAR(v, 1.99526, 1e-5);
}

TEST(ApplyFilterTest, LinearInterpolationExample) {
  const Tensor<float> x({8, 1}, 1.f);
  const FilterConfig cfg{FilterKind::kLinear, {0, 4, 8}, {0, 6, 0}};
  const std::vector<double> g{0, 1.5, 3, 4.5, 6, 4.5, 3, 1.5};
  EXPECT_EQ(filter_gains_db(cfg), g);
  const auto y = apply_filter_augment(x, cfg);
  for (std::size_t f = 0; f < 8; ++f) EXPECT_NEAR(y(f, 0), std::pow(10.0, g[f] / 20), 1e-6) << "bin " << f;
}

TEST(ApplyFilterTest, ShapeMismatch) {
  const Tensor<float> x({10, 2}, 1.f);
  EXPECT_THROW(apply_filter_augment(x, {FilterKind::kStep, {0, 4, 8}, {1, 2}}), Error);
  EXPECT_THROW(apply_filter_augment(x, {FilterKind::kStep, {0, 4, 10}, {1}}), Error);
  EXPECT_THROW(apply_filter_augment(x, {FilterKind::kLinear, {0, 4, 10}, {1, 2}}), Error);
}

TEST(ApplyFilterTest, GainProperties) {
  Rng rng(9);
  for (auto p : {FilterAugParams::step_default(), FilterAugParams::linear_default()}) {
    for (int trial = 0; trial < 500; ++trial) {
      const auto c = sample_filter_config(rng, p, 128);
      const auto x = testutil::random_tensor<float>(rng, {128, 3}, 0.1, 2);
      const auto y = apply_filter_augment(x, c);
      const auto g = filter_gains_db(c);
      const double lo = std::pow(10.0, p.db_low / 20), hi = std::pow(10.0, p.db_high / 20);
      for (std::size_t f = 0; f < 128; ++f) {
        const double a = gain_at(y, x, f);
        ASSERT_GE(a, lo * (1 - 1e-6));
        ASSERT_LE(a, hi * (1 + 1e-6));
      }
      for (std::size_t band = 0; band < c.n_bands(); ++band) {
        const auto b0 = c.boundaries[band], b1 = c.boundaries[band + 1];
        if (p.kind == FilterKind::kStep) {
          for (auto f = b0; f < b1; ++f) ASSERT_EQ(g[f], c.weights_db[band]);
        } else {
          ASSERT_EQ(g[b0], c.weights_db[band]);
          // Second differences vanish inside a segment.
          for (auto f = b0 + 1; f + 1 < b1; ++f) ASSERT_NEAR(g[f - 1] - 2 * g[f] + g[f + 1], 0.0, 1e-12);
          // Extending the segment to b1 reaches the next anchor.
          if (b1 - b0 >= 2) {
            ASSERT_NEAR(2 * g[b1 - 1] - g[b1 - 2], c.weights_db[band + 1], 1e-9);
          }
        }
      }
      // Commutes with positive scaling.
      const float s = float(rng.uniform(0.1, 10));
      Tensor<float> xs = x;
      for (auto& v : xs.data()) v *= s;
      const auto ys = apply_filter_augment(xs, c);
      for (std::size_t i = 0; i < y.size(); ++i) ASSERT_NEAR(ys[i], y[i] * s, 1e-5 * std::abs(y[i] * s));
    }
  }
}

TEST(FilterTextTest, RoundTrip) {
  Rng rng(10);
  for (auto p : {FilterAugParams::step_default(), FilterAugParams::linear_default()}) {
    const auto c = sample_filter_config(rng, p, 128);
    const auto back = parse_filter_config(to_string(c));
    EXPECT_EQ(back.kind, c.kind);
    EXPECT_EQ(back.boundaries, c.boundaries);
    EXPECT_EQ(back.weights_db, c.weights_db);
  }
  const auto c = parse_filter_config("step;boundaries=0,41,97,128;weights_db=-2.1,3.4,0.8\n");
  EXPECT_EQ(c.boundaries, (std::vector<std::size_t>{0, 41, 97, 128}));
  EXPECT_EQ(c.weights_db, (std::vector<double>{-2.1, 3.4, 0.8}));
  EXPECT_THROW(parse_filter_config("step;boundaries=0,41;weights_db=x"), Error);
  EXPECT_THROW(parse_filter_config("notch;boundaries=0,41;weights_db=1"), Error);
  EXPECT_THROW(parse_filter_config("step;boundaries=0,41,97,128;weights_db=1"), Error);
}

TEST(MixupTest, Examples) {
  const Tensor<float> a({2}, {1, 2}), b({2}, {3, 4}), ya({1}, {1}), yb({1}, {0});
  auto [x, y] = mixup(a, b, ya, yb, 1.0);
  EXPECT_EQ(x, a);
  EXPECT_EQ(y, ya);
  const Tensor<float> z({1}, {0.f}), two({1}, {2.f});
  EXPECT_EQ(mixup(z, two, z, two, 0.5).first[0], 1.f);
  EXPECT_THROW(mixup(a, b, ya, yb, 1.5), Error);
  EXPECT_THROW(mixup(a, b, ya, yb, -0.1), Error);
  EXPECT_THROW(mixup(a, Tensor<float>({3}), ya, yb, 0.5), Error);
}

TEST(MixupTest, Convexity) {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const auto a = testutil::random_tensor<double>(rng, {4, 3}), b = testutil::random_tensor<double>(rng, {4, 3});
    const auto [x, y] = mixup(a, b, a, b, rng.uniform());
    for (std::size_t i = 0; i < x.size(); ++i) {
      ASSERT_GE(x[i], std::min(a[i], b[i]) - 1e-15);
      ASSERT_LE(x[i], std::max(a[i], b[i]) + 1e-15);
    }
  }
}

TEST(TimeMaskTest, WidthsAndDeterminism) {
  Rng rng(12);
  const auto x = testutil::random_tensor<float>(rng, {4, 20});
  Rng z(0);
  const auto none = time_mask(x, z, 0);
  EXPECT_EQ(none.width, 0u);
  EXPECT_EQ(none.spec, x);

  // Full width: repeat until the draw is 20.
  for (std::uint64_t seed = 0;; ++seed) {
    Rng r(seed);
    const auto m = time_mask(x, r, 20);
    if (m.width != 20) continue;
    const float lo = *std::min_element(x.data().begin(), x.data().end());
    for (float v : m.spec.data()) EXPECT_EQ(v, lo);
    break;
  }
  Rng r1(99), r2(99);
  const auto m1 = time_mask(x, r1, 5), m2 = time_mask(x, r2, 5);
  EXPECT_EQ(m1.start, m2.start);
  EXPECT_EQ(m1.width, m2.width);
  EXPECT_EQ(m1.spec, m2.spec);
  EXPECT_THROW(time_mask(x, r1, 21), Error);
  EXPECT_EQ(default_max_mask_frames(625), 125u);
  EXPECT_EQ(default_max_shift(625), 62u);
}

TEST(FrameShiftTest, Identities) {
  Rng rng(13);
  const auto spec = testutil::random_tensor<float>(rng, {3, 16});
  const auto labels = testutil::random_tensor<float>(rng, {4, 2});
  const auto zero = apply_frame_shift(spec, labels, 0);
  EXPECT_EQ(zero.spec, spec);
  EXPECT_EQ(zero.labels, labels);
  const auto full = apply_frame_shift(spec, labels, 16);
  EXPECT_EQ(full.spec, spec);
  EXPECT_EQ(full.labels, labels);
  const auto fwd = apply_frame_shift(spec, labels, 5);
  const auto back = apply_frame_shift(fwd.spec, fwd.labels, -5);
  EXPECT_EQ(back.spec, spec);
  EXPECT_EQ(back.labels, labels);
  // 8 spectrogram frames -> 2 label frames.
  const auto eight = apply_frame_shift(spec, labels, 8);
  EXPECT_EQ(eight.spec(0, 8), spec(0, 0));
  EXPECT_EQ(eight.labels(2, 1), labels(0, 1));
}

TEST(FrameShiftTest, RandomShiftWithinBound) {
  Rng rng(14);
  const auto spec = testutil::random_tensor<float>(rng, {2, 40});
  const auto labels = testutil::random_tensor<float>(rng, {10, 3});
  for (int i = 0; i < 100; ++i) {
    const auto r = frame_shift(spec, labels, rng, 4);
    ASSERT_LE(std::abs(r.shift), 4);
    ASSERT_EQ(r.spec, apply_frame_shift(spec, labels, r.shift).spec);
  }
}
