#include <algorithm>
#include <cmath>

#include <gtest/gtest.h>

#include "sedkit/fdy_conv.hpp"
#include "test_util.hpp"

using namespace sedkit;
using testutil::max_abs_diff;
using testutil::random_tensor;

namespace {

FdyConvLayer<double> random_layer(Rng& rng, std::size_t cin, std::size_t cout, std::size_t k, double tau = 45) {
  FdyInstanceShape s;
  s.in_channels = cin;
  s.out_channels = cout;
  s.n_basis = k;
  s.temperature = tau;
  return random_fdy_instance(rng, s).first;
}

Tensor<double> bias_row(const FdyConvLayer<double>& l, std::size_t k) {
  Tensor<double> b({l.out_channels()});
  for (std::size_t o = 0; o < b.size(); ++o) b[o] = l.basis_bias(k, o);
  return b;
}

// Per output bin: build the mixed kernel, then sum directly.
Tensor<double> per_bin_oracle(const Tensor<double>& x, const FdyConvLayer<double>& l, const Tensor<double>& att) {
  const long B = x.dim(0), Ci = x.dim(1), F = x.dim(2), T = x.dim(3), Co = l.out_channels(), K = l.n_basis();
  Tensor<double> y({std::size_t(B), std::size_t(Co), std::size_t(F), std::size_t(T)});
  for (long b = 0; b < B; ++b)
    for (long f = 0; f < F; ++f)
      for (long o = 0; o < Co; ++o)
        for (long t = 0; t < T; ++t) {
          double acc = 0;
          for (long k = 0; k < K; ++k) acc += att(b, k, f) * l.basis_bias(k, o);
          for (long c = 0; c < Ci; ++c)
            for (long i = 0; i < 3; ++i)
              for (long j = 0; j < 3; ++j) {
                const long fi = f + i - 1, tj = t + j - 1;
                if (fi < 0 || fi >= F || tj < 0 || tj >= T) continue;
                double w = 0;
                for (long k = 0; k < K; ++k) w += att(b, k, f) * l.basis_kernels[k](o, c, i, j);
                acc += w * x(b, c, fi, tj);
              }
          y(b, o, f, t) = acc;
        }
  return y;
}

}  // namespace

TEST(FdyLayerTest, DefaultsAndValidation) {
  Rng rng(1);
  const auto l = FdyConvLayer<float>::init(16, 32, rng);
  EXPECT_EQ(l.n_basis(), 4u);
  EXPECT_EQ(l.temperature, 45.f);
  EXPECT_EQ(l.hidden(), 4u);
  EXPECT_EQ(FdyConvLayer<float>::squeeze_width(2, 4), 1u);
  for (float v : l.excite_w.data()) EXPECT_EQ(v, 0.f);
  const double bound = std::sqrt(1.0 / (16 * 9));
  for (const auto& w : l.basis_kernels)
    for (float v : w.data()) EXPECT_LE(std::abs(v), bound);

  auto bad = l;
  bad.temperature = 0;
  EXPECT_THROW(bad.validate(), Error);
  bad = l;
  bad.basis_kernels.clear();
  EXPECT_THROW(bad.validate(), Error);
  bad = l;
  bad.basis_bias = Tensor<float>({3, 32});
  EXPECT_THROW(bad.validate(), Error);
  EXPECT_THROW(FdyConvLayer<float>::zeros(4, 4, 0), Error);
  EXPECT_THROW(fdy_conv_forward(Tensor<float>({1, 15, 4, 4}), l), Error);
}

TEST(AttentionTest, ZeroExciteIsUniform) {
  Rng rng(2);
  auto l = random_layer(rng, 3, 2, 4);
  std::fill(l.excite_w.vec().begin(), l.excite_w.vec().end(), 0.0);
  std::fill(l.excite_b.vec().begin(), l.excite_b.vec().end(), 0.0);
  const auto att = frequency_attention(random_tensor<double>(rng, {2, 3, 5, 4}), l);
  for (double v : att.data()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(AttentionTest, SimplexAndIdenticalBins) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto l = random_layer(rng, 3, 2, 4);
    auto x = random_tensor<double>(rng, {2, 3, 6, 5});
    // Bin 4 copies bin 1.
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t t = 0; t < 5; ++t) x(b, c, 4, t) = x(b, c, 1, t);
    const auto att = frequency_attention(x, l);
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t f = 0; f < 6; ++f) {
        double s = 0;
        for (std::size_t k = 0; k < 4; ++k) {
          ASSERT_GE(att(b, k, f), 0.0);
          s += att(b, k, f);
        }
        ASSERT_NEAR(s, 1.0, 1e-6);
      }
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t k = 0; k < 4; ++k) ASSERT_EQ(att(b, k, 4), att(b, k, 1));
  }
}

TEST(AttentionTest, TemperatureContracts) {
  Rng rng(4);
  auto l = random_layer(rng, 4, 2, 4);
  const auto x = random_tensor<double>(rng, {1, 4, 6, 5});
  auto dev = [&](double tau) {
    l.temperature = tau;
    const auto att = frequency_attention(x, l);
    double m = 0;
    for (double v : att.data()) m = std::max(m, std::abs(v - 0.25));
    return m;
  };
  EXPECT_LT(dev(1e9), 1e-3);
  EXPECT_GT(dev(1.0), 1e-3);
  double prev = dev(0.5);
  for (double tau : {1.0, 2.0, 5.0, 10.0, 45.0, 100.0, 1e3, 1e6}) {
    const double d = dev(tau);
    EXPECT_LE(d, prev + 1e-15) << "tau " << tau;
    prev = d;
  }
}

TEST(AttentionTest, ConstantAlongTime) {
  Rng rng(5);
  const auto l = random_layer(rng, 2, 2, 4);
  const auto x = random_tensor<double>(rng, {1, 2, 4, 3});
  Tensor<double> xx({1, 2, 4, 6});
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t f = 0; f < 4; ++f)
      for (std::size_t t = 0; t < 6; ++t) xx(0, c, f, t) = x(0, c, f, t % 3);
  EXPECT_LT(max_abs_diff(frequency_attention(x, l), frequency_attention(xx, l)), 1e-15);
}

TEST(FdyForwardTest, SingleBasisIsStaticConv) {
  Rng rng(6);
  const auto l = random_layer(rng, 2, 3, 1);
  const auto x = random_tensor<double>(rng, {2, 2, 5, 4});
  const auto y = fdy_conv_forward(x, l);
  EXPECT_EQ(y.shape(), (Shape{2, 3, 5, 4}));
  EXPECT_LT(max_abs_diff(y, conv2d_forward(x, l.basis_kernels[0], bias_row(l, 0), Padding{1, 1})), 1e-12);
}

TEST(FdyForwardTest, UniformAttentionIsMeanKernel) {
  Rng rng(7);
  auto l = random_layer(rng, 2, 3, 4);
  std::fill(l.excite_w.vec().begin(), l.excite_w.vec().end(), 0.0);
  std::fill(l.excite_b.vec().begin(), l.excite_b.vec().end(), 0.0);
  Tensor<double> wm(l.basis_kernels[0].shape()), bm({3});
  for (std::size_t k = 0; k < 4; ++k) {
    for (std::size_t i = 0; i < wm.size(); ++i) wm[i] += l.basis_kernels[k][i] / 4;
    for (std::size_t o = 0; o < 3; ++o) bm[o] += l.basis_bias(k, o) / 4;
  }
  const auto x = random_tensor<double>(rng, {1, 2, 6, 5});
  EXPECT_LT(max_abs_diff(fdy_conv_forward(x, l), conv2d_forward(x, wm, bm, Padding{1, 1})), 1e-5);
}

TEST(FdyForwardTest, MatchesPerBinOracle) {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const auto l = random_layer(rng, 2, 3, 4);
    const auto x = random_tensor<double>(rng, {1, 2, 6, 5});
    const auto y = fdy_conv_forward(x, l);
    EXPECT_LT(max_abs_diff(y, per_bin_oracle(x, l, frequency_attention(x, l))), 1e-12);
    EXPECT_LT(max_abs_diff(y, fdy_conv_forward_mix_outputs(x, l)), 1e-5);
  }
}

TEST(FdyForwardTest, BasisPermutationInvariance) {
  Rng rng(9);
  const auto l = random_layer(rng, 3, 2, 4);
  const auto x = random_tensor<double>(rng, {2, 3, 5, 4});
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  auto p = l;
  for (std::size_t k = 0; k < 4; ++k) {
    p.basis_kernels[k] = l.basis_kernels[perm[k]];
    for (std::size_t o = 0; o < 2; ++o) p.basis_bias(k, o) = l.basis_bias(perm[k], o);
    for (std::size_t h = 0; h < l.hidden(); ++h) p.excite_w(k, h) = l.excite_w(perm[k], h);
    p.excite_b[k] = l.excite_b[perm[k]];
  }
  EXPECT_LT(max_abs_diff(fdy_conv_forward(x, l), fdy_conv_forward(x, p)), 1e-12);
}

TEST(FdyForwardTest, FloatMatchesDouble) {
  Rng rng(10);
  const auto l = random_layer(rng, 4, 4, 4);
  const auto x = random_tensor<double>(rng, {1, 4, 8, 6});
  const auto yd = fdy_conv_forward(x, l);
  const auto yf = fdy_conv_forward(x.cast<float>(), l.cast<float>());
  EXPECT_LT(max_abs_diff(yf.cast<double>(), yd), 1e-4);
}

TEST(FdyBackwardTest, ZeroUpstream) {
  Rng rng(11);
  const auto l = random_layer(rng, 2, 2, 4);
  const auto x = random_tensor<double>(rng, {1, 2, 4, 4});
  const auto g = fdy_conv_backward(x, l, Tensor<double>({1, 2, 4, 4}));
  auto all_zero = [](const Tensor<double>& t) {
    return std::all_of(t.data().begin(), t.data().end(), [](double v) { return v == 0.0; });
  };
  EXPECT_TRUE(all_zero(g.input));
  for (const auto& w : g.basis_kernels) EXPECT_TRUE(all_zero(w));
  EXPECT_TRUE(all_zero(g.basis_bias));
  EXPECT_TRUE(all_zero(g.squeeze_w));
  EXPECT_TRUE(all_zero(g.squeeze_b));
  EXPECT_TRUE(all_zero(g.excite_w));
  EXPECT_TRUE(all_zero(g.excite_b));
  EXPECT_THROW(fdy_conv_backward(x, l, Tensor<double>({1, 2, 4, 3})), Error);
}

TEST(FdyBackwardTest, SingleBasisReducesToConv) {
  Rng rng(12);
  const auto l = random_layer(rng, 3, 2, 1);
  const auto x = random_tensor<double>(rng, {2, 3, 5, 4});
  const auto go = random_tensor<double>(rng, {2, 2, 5, 4});
  const auto g = fdy_conv_backward(x, l, go);
  const auto c = conv2d_backward(x, l.basis_kernels[0], go, Padding{1, 1});
  EXPECT_LT(max_abs_diff(g.input, c.input), 1e-12);
  EXPECT_LT(max_abs_diff(g.basis_kernels[0], c.kernel), 1e-12);
  for (std::size_t o = 0; o < 2; ++o) EXPECT_NEAR(g.basis_bias(0, o), c.bias[o], 1e-12);
  for (double v : g.excite_w.data()) EXPECT_EQ(v, 0.0);
  for (double v : g.squeeze_w.data()) EXPECT_EQ(v, 0.0);
}

TEST(GradCheckTest, Examples) {
  const auto zero = FdyConvLayer<double>::zeros(4, 4);
  EXPECT_TRUE(finite_diff_gradcheck(zero, Tensor<double>({1, 4, 8, 6})).passed);

  Rng rng(13);
  auto [layer, input] = random_fdy_instance(rng, FdyInstanceShape{});
  const auto rep = finite_diff_gradcheck(layer, input, 1e-4, 1e-4);
  EXPECT_TRUE(rep.passed) << rep.max_rel_err();
  EXPECT_EQ(rep.groups.size(), 4u + 6u);
  EXPECT_FALSE(finite_diff_gradcheck(layer, input, 1e-4, 0.0).passed);
}

TEST(GradCheckTest, NonFiniteIsReported) {
  Rng rng(14);
  auto [layer, input] = random_fdy_instance(rng, FdyInstanceShape{});
  input[0] = std::numeric_limits<double>::quiet_NaN();
  const auto rep = finite_diff_gradcheck(layer, input);
  EXPECT_FALSE(rep.passed);
  EXPECT_FALSE(rep.failure.empty());
}

TEST(GradCheckTest, RandomSuite) {
  const auto r = gradcheck_suite(77, 100);
  EXPECT_TRUE(r.passed()) << r.first_failure;
  EXPECT_EQ(r.trials, 100u);
  EXPECT_LT(r.worst_rel_err, 1e-4);
}
