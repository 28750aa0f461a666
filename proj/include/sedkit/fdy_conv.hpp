#pragma once

// Frequency dynamic convolution. Each frequency bin of the output uses its own
// kernel, an attention-weighted mixture of K basis kernels. Attention comes
// from a small frequency-wise squeeze-excite network over the time-averaged
// input, followed by a tempered softmax over the K basis kernels.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "sedkit/error.hpp"
#include "sedkit/rng.hpp"
#include "sedkit/tensor.hpp"

namespace sedkit {

inline constexpr std::size_t kFdyKernelSize = 3;

template <typename T>
struct FdyConvLayer {
  std::vector<Tensor<T>> basis_kernels;  // K x [Cout, Cin, 3, 3]
  Tensor<T> basis_bias;                  // [K, Cout]
  Tensor<T> squeeze_w;                   // [H, Cin]
  Tensor<T> squeeze_b;                   // [H]
  Tensor<T> excite_w;                    // [K, H]
  Tensor<T> excite_b;                    // [K]
  T temperature = T(45);

  std::size_t n_basis() const { return basis_kernels.size(); }
  std::size_t out_channels() const { return basis_kernels.at(0).dim(0); }
  std::size_t in_channels() const { return basis_kernels.at(0).dim(1); }
  std::size_t hidden() const { return squeeze_w.dim(0); }

  static std::size_t squeeze_width(std::size_t in_channels, std::size_t ratio) {
    return std::max<std::size_t>(1, in_channels / std::max<std::size_t>(ratio, 1));
  }

  /// All-zero parameters of the right shapes.
  static FdyConvLayer zeros(std::size_t cin, std::size_t cout, std::size_t k = 4, T tau = T(45),
                            std::size_t ratio = 4) {
    require(k >= 1, ErrorCode::kInvalidArgument, "fdy_conv: need at least one basis kernel");
    const std::size_t h = squeeze_width(cin, ratio);
    FdyConvLayer l;
    l.basis_kernels.assign(k, Tensor<T>({cout, cin, kFdyKernelSize, kFdyKernelSize}));
    l.basis_bias = Tensor<T>({k, cout});
    l.squeeze_w = Tensor<T>({h, cin});
    l.squeeze_b = Tensor<T>({h});
    l.excite_w = Tensor<T>({k, h});
    l.excite_b = Tensor<T>({k});
    l.temperature = tau;
    return l;
  }

  /// Basis kernels and biases uniform in +-sqrt(1/(Cin*9)), squeeze uniform in
  /// +-sqrt(1/Cin), excite zero (uniform attention until trained).
  static FdyConvLayer init(std::size_t cin, std::size_t cout, Rng& rng, std::size_t k = 4, T tau = T(45),
                           std::size_t ratio = 4) {
    auto l = zeros(cin, cout, k, tau, ratio);
    const double kb = std::sqrt(1.0 / (static_cast<double>(cin) * 9.0));
    const double sb = std::sqrt(1.0 / static_cast<double>(cin));
    for (auto& w : l.basis_kernels)
      for (auto& v : w.data()) v = static_cast<T>(rng.uniform(-kb, kb));
    for (auto& v : l.basis_bias.data()) v = static_cast<T>(rng.uniform(-kb, kb));
    for (auto& v : l.squeeze_w.data()) v = static_cast<T>(rng.uniform(-sb, sb));
    for (auto& v : l.squeeze_b.data()) v = static_cast<T>(rng.uniform(-sb, sb));
    return l;
  }

  void validate() const {
    require(!basis_kernels.empty(), ErrorCode::kInvalidArgument, "fdy_conv: need at least one basis kernel");
    require(temperature > T(0), ErrorCode::kInvalidArgument, "fdy_conv: temperature must be > 0");
    const Shape ks = basis_kernels[0].shape();
    require(ks.size() == 4 && ks[2] == kFdyKernelSize && ks[3] == kFdyKernelSize, ErrorCode::kShapeMismatch,
            "fdy_conv: basis kernels must be [Cout, Cin, 3, 3], got " + shape_str(ks));
    for (const auto& w : basis_kernels)
      require(w.shape() == ks, ErrorCode::kShapeMismatch, "fdy_conv: basis kernel shapes differ");
    const std::size_t K = n_basis(), H = hidden();
    require(basis_bias.shape() == Shape{K, ks[0]}, ErrorCode::kShapeMismatch, "fdy_conv: basis_bias must be [K, Cout]");
    require(squeeze_w.shape() == Shape{H, ks[1]}, ErrorCode::kShapeMismatch, "fdy_conv: squeeze_w must be [H, Cin]");
    require(squeeze_b.shape() == Shape{H}, ErrorCode::kShapeMismatch, "fdy_conv: squeeze_b must be [H]");
    require(excite_w.shape() == Shape{K, H}, ErrorCode::kShapeMismatch, "fdy_conv: excite_w must be [K, H]");
    require(excite_b.shape() == Shape{K}, ErrorCode::kShapeMismatch, "fdy_conv: excite_b must be [K]");
  }

  template <typename U>
  FdyConvLayer<U> cast() const {
    FdyConvLayer<U> l;
    for (const auto& w : basis_kernels) l.basis_kernels.push_back(w.template cast<U>());
    l.basis_bias = basis_bias.template cast<U>();
    l.squeeze_w = squeeze_w.template cast<U>();
    l.squeeze_b = squeeze_b.template cast<U>();
    l.excite_w = excite_w.template cast<U>();
    l.excite_b = excite_b.template cast<U>();
    l.temperature = static_cast<U>(temperature);
    return l;
  }
};

/// Intermediate values of the attention network, kept for the backward pass.
template <typename T>
struct AttentionTrace {
  Tensor<T> pooled;     // [B, Cin, F]
  Tensor<T> squeezed;   // [B, H, F], pre-activation
  Tensor<T> logits;     // [B, K, F]
  Tensor<T> attention;  // [B, K, F], simplex over K
};

namespace detail {

template <typename T>
void check_fdy_input(const Tensor<T>& input, const FdyConvLayer<T>& layer, const char* op) {
  layer.validate();
  check_rank(input.shape(), 4, op, "input");
  check_axis(input.dim(1), layer.in_channels(), op, "input channel axis (1)");
}

}  // namespace detail

template <typename T>
AttentionTrace<T> attention_trace(const Tensor<T>& input, const FdyConvLayer<T>& layer) {
  detail::check_fdy_input(input, layer, "frequency_attention");
  const std::size_t B = input.dim(0), C = input.dim(1), F = input.dim(2), Tn = input.dim(3);
  const std::size_t H = layer.hidden(), K = layer.n_basis();
  AttentionTrace<T> tr{Tensor<T>({B, C, F}), Tensor<T>({B, H, F}), Tensor<T>({B, K, F}), Tensor<T>({B, K, F})};
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t f = 0; f < F; ++f) {
        T acc = 0;
        for (std::size_t t = 0; t < Tn; ++t) acc += input(b, c, f, t);
        tr.pooled(b, c, f) = acc / static_cast<T>(Tn);
      }
  std::vector<T> logit(K);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t f = 0; f < F; ++f) {
      for (std::size_t h = 0; h < H; ++h) {
        T acc = layer.squeeze_b[h];
        for (std::size_t c = 0; c < C; ++c) acc += layer.squeeze_w(h, c) * tr.pooled(b, c, f);
        tr.squeezed(b, h, f) = acc;
      }
      for (std::size_t k = 0; k < K; ++k) {
        T acc = layer.excite_b[k];
        for (std::size_t h = 0; h < H; ++h) acc += layer.excite_w(k, h) * std::max(T(0), tr.squeezed(b, h, f));
        logit[k] = acc;
        tr.logits(b, k, f) = acc;
      }
      const auto att = softmax_tempered<T>(logit, layer.temperature);
      for (std::size_t k = 0; k < K; ++k) tr.attention(b, k, f) = att[k];
    }
  return tr;
}

/// Attention map [B, K, F]: for every (batch item, frequency bin) a simplex over
/// the K basis kernels. Constant along time by construction.
template <typename T>
Tensor<T> frequency_attention(const Tensor<T>& input, const FdyConvLayer<T>& layer) {
  return attention_trace(input, layer).attention;
}

/// Applies the per-bin mixed kernel W(b,f) = sum_k att[b,k,f] W_k (and mixed
/// bias) with same padding. Output shape equals input shape with Cout channels.
template <typename T>
Tensor<T> fdy_conv_apply(const Tensor<T>& input, const FdyConvLayer<T>& layer, const Tensor<T>& attention) {
  detail::check_fdy_input(input, layer, "fdy_conv_forward");
  const std::size_t B = input.dim(0), Cin = input.dim(1), F = input.dim(2), Tn = input.dim(3);
  const std::size_t Cout = layer.out_channels(), K = layer.n_basis();
  constexpr std::size_t ks = kFdyKernelSize;
  require(attention.shape() == Shape{B, K, F}, ErrorCode::kShapeMismatch,
          "fdy_conv_forward: attention must be [B, K, F], got " + shape_str(attention.shape()));
  const std::size_t wsize = Cout * Cin * ks * ks;
  std::vector<T> wmix(wsize), bmix(Cout);
  Tensor<T> out({B, Cout, F, Tn});
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t f = 0; f < F; ++f) {
      std::fill(wmix.begin(), wmix.end(), T(0));
      std::fill(bmix.begin(), bmix.end(), T(0));
      for (std::size_t k = 0; k < K; ++k) {
        const T a = attention(b, k, f);
        const T* wk = layer.basis_kernels[k].data().data();
        for (std::size_t i = 0; i < wsize; ++i) wmix[i] += a * wk[i];
        for (std::size_t co = 0; co < Cout; ++co) bmix[co] += a * layer.basis_bias(k, co);
      }
      for (std::size_t co = 0; co < Cout; ++co) {
        T* orow = &out(b, co, f, 0);
        std::fill(orow, orow + Tn, bmix[co]);
        for (std::size_t ci = 0; ci < Cin; ++ci)
          for (std::size_t i = 0; i < ks; ++i) {
            const std::ptrdiff_t fi = static_cast<std::ptrdiff_t>(f + i) - 1;
            if (fi < 0 || fi >= static_cast<std::ptrdiff_t>(F)) continue;
            const T* row = &input(b, ci, static_cast<std::size_t>(fi), 0);
            for (std::size_t j = 0; j < ks; ++j) {
              const T wv = wmix[((co * Cin + ci) * ks + i) * ks + j];
              const std::ptrdiff_t dt = static_cast<std::ptrdiff_t>(j) - 1;
              const std::size_t t0 = dt < 0 ? 1 : 0;
              const std::size_t t1 = detail::clamp_end(Tn, Tn, dt);
              for (std::size_t t = t0; t < t1; ++t) orow[t] += wv * row[t + dt];
            }
          }
      }
    }
  }
  return out;
}

/// Frequency dynamic convolution, mixed-kernel evaluation.
template <typename T>
Tensor<T> fdy_conv_forward(const Tensor<T>& input, const FdyConvLayer<T>& layer) {
  return fdy_conv_apply(input, layer, frequency_attention(input, layer));
}

/// Same contract evaluated as an attention-weighted sum of K static
/// convolutions: out[b,:,f,:] = sum_k att[b,k,f] * conv_k(input)[b,:,f,:].
template <typename T>
Tensor<T> fdy_conv_forward_mix_outputs(const Tensor<T>& input, const FdyConvLayer<T>& layer) {
  const auto att = frequency_attention(input, layer);
  const std::size_t B = input.dim(0), F = input.dim(2), Tn = input.dim(3);
  const std::size_t Cout = layer.out_channels(), K = layer.n_basis();
  Tensor<T> out({B, Cout, F, Tn});
  const Padding pad = same_padding(kFdyKernelSize, kFdyKernelSize);
  for (std::size_t k = 0; k < K; ++k) {
    Tensor<T> bias({Cout});
    for (std::size_t co = 0; co < Cout; ++co) bias[co] = layer.basis_bias(k, co);
    const auto y = conv2d_forward(input, layer.basis_kernels[k], bias, pad);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t co = 0; co < Cout; ++co)
        for (std::size_t f = 0; f < F; ++f) {
          const T a = att(b, k, f);
          for (std::size_t t = 0; t < Tn; ++t) out(b, co, f, t) += a * y(b, co, f, t);
        }
  }
  return out;
}

template <typename T>
struct FdyGrads {
  Tensor<T> input;
  std::vector<Tensor<T>> basis_kernels;
  Tensor<T> basis_bias;
  Tensor<T> squeeze_w;
  Tensor<T> squeeze_b;
  Tensor<T> excite_w;
  Tensor<T> excite_b;
};

/// Analytic gradients of fdy_conv_forward for the given upstream gradient.
template <typename T>
FdyGrads<T> fdy_conv_backward(const Tensor<T>& input, const FdyConvLayer<T>& layer, const Tensor<T>& grad_out) {
  const auto tr = attention_trace(input, layer);
  const std::size_t B = input.dim(0), Cin = input.dim(1), F = input.dim(2), Tn = input.dim(3);
  const std::size_t Cout = layer.out_channels(), K = layer.n_basis(), H = layer.hidden();
  require(grad_out.shape() == Shape{B, Cout, F, Tn}, ErrorCode::kShapeMismatch,
          "fdy_conv_backward: grad_out must be " + shape_str({B, Cout, F, Tn}) + ", got " +
              shape_str(grad_out.shape()));
  const Padding pad = same_padding(kFdyKernelSize, kFdyKernelSize);

  FdyGrads<T> g{Tensor<T>(input.shape()),     {},
                Tensor<T>({K, Cout}),         Tensor<T>(layer.squeeze_w.shape()),
                Tensor<T>({H}),               Tensor<T>(layer.excite_w.shape()),
                Tensor<T>({K})};
  Tensor<T> grad_att({B, K, F});

  // Mixture path: each basis convolution sees grad_out scaled by its attention.
  for (std::size_t k = 0; k < K; ++k) {
    Tensor<T> bias({Cout});
    for (std::size_t co = 0; co < Cout; ++co) bias[co] = layer.basis_bias(k, co);
    const auto y = conv2d_forward(input, layer.basis_kernels[k], bias, pad);
    Tensor<T> gk(grad_out.shape());
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t co = 0; co < Cout; ++co)
        for (std::size_t f = 0; f < F; ++f) {
          const T a = tr.attention(b, k, f);
          T acc = 0;
          for (std::size_t t = 0; t < Tn; ++t) {
            const T go = grad_out(b, co, f, t);
            acc += go * y(b, co, f, t);
            gk(b, co, f, t) = a * go;
          }
          grad_att(b, k, f) += acc;
        }
    auto cg = conv2d_backward(input, layer.basis_kernels[k], gk, pad);
    for (std::size_t i = 0; i < g.input.size(); ++i) g.input[i] += cg.input[i];
    g.basis_kernels.push_back(std::move(cg.kernel));
    for (std::size_t co = 0; co < Cout; ++co) g.basis_bias(k, co) = cg.bias[co];
  }

  // Attention path: softmax (with 1/tau), excite, relu, squeeze, temporal mean.
  Tensor<T> grad_pooled({B, Cin, F});
  std::vector<T> dlogit(K), dhidden(H);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t f = 0; f < F; ++f) {
      T dot = 0;
      for (std::size_t k = 0; k < K; ++k) dot += tr.attention(b, k, f) * grad_att(b, k, f);
      for (std::size_t k = 0; k < K; ++k)
        dlogit[k] = tr.attention(b, k, f) * (grad_att(b, k, f) - dot) / layer.temperature;
      for (std::size_t h = 0; h < H; ++h) {
        const T s = tr.squeezed(b, h, f);
        const T hid = std::max(T(0), s);
        T acc = 0;
        for (std::size_t k = 0; k < K; ++k) {
          g.excite_w(k, h) += dlogit[k] * hid;
          acc += layer.excite_w(k, h) * dlogit[k];
        }
        dhidden[h] = s > T(0) ? acc : T(0);
      }
      for (std::size_t k = 0; k < K; ++k) g.excite_b[k] += dlogit[k];
      for (std::size_t h = 0; h < H; ++h) {
        g.squeeze_b[h] += dhidden[h];
        for (std::size_t c = 0; c < Cin; ++c) {
          g.squeeze_w(h, c) += dhidden[h] * tr.pooled(b, c, f);
          grad_pooled(b, c, f) += layer.squeeze_w(h, c) * dhidden[h];
        }
      }
    }
  const T inv_t = T(1) / static_cast<T>(Tn);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < Cin; ++c)
      for (std::size_t f = 0; f < F; ++f) {
        const T d = grad_pooled(b, c, f) * inv_t;
        for (std::size_t t = 0; t < Tn; ++t) g.input(b, c, f, t) += d;
      }
  return g;
}

// ---------------------------------------------------------------------------
// Finite-difference verification

struct GradGroupReport {
  std::string name;
  double max_rel_err = 0.0;
  std::size_t worst_index = 0;
  std::size_t count = 0;
  bool finite = true;
};

struct GradCheckReport {
  std::vector<GradGroupReport> groups;
  double tolerance = 0.0;
  bool passed = false;
  std::string failure;  // first non-finite location, if any

  double max_rel_err() const {
    double m = 0.0;
    for (const auto& g : groups) m = std::max(m, g.max_rel_err);
    return m;
  }
};

/// Sum of squared outputs of the layer.
inline double fdy_sum_squares_loss(const Tensor<double>& input, const FdyConvLayer<double>& layer) {
  const auto y = fdy_conv_forward(input, layer);
  double acc = 0.0;
  for (double v : y.data()) acc += v * v;
  return acc;
}

/// Compares analytic gradients of sum(out^2) against central differences,
/// elementwise |a - n| / max(|a|, |n|, 1e-8), per parameter group. Passes iff
/// every group's maximum is below `tolerance` and all gradients are finite.
inline GradCheckReport finite_diff_gradcheck(const FdyConvLayer<double>& layer, const Tensor<double>& input,
                                             double h = 1e-4, double tolerance = 1e-4) {
  const auto y = fdy_conv_forward(input, layer);
  Tensor<double> grad_out(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) grad_out[i] = 2.0 * y[i];
  const auto an = fdy_conv_backward(input, layer, grad_out);

  GradCheckReport rep;
  rep.tolerance = tolerance;
  Tensor<double> x = input;
  FdyConvLayer<double> l = layer;

  auto check = [&](const std::string& name, Tensor<double>& param, const Tensor<double>& analytic) {
    GradGroupReport gr{name};
    gr.count = param.size();
    for (std::size_t i = 0; i < param.size(); ++i) {
      const double saved = param[i];
      param[i] = saved + h;
      const double up = fdy_sum_squares_loss(x, l);
      param[i] = saved - h;
      const double down = fdy_sum_squares_loss(x, l);
      param[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[i];
      if (!std::isfinite(numeric) || !std::isfinite(a)) {
        gr.finite = false;
        gr.max_rel_err = std::numeric_limits<double>::infinity();
        gr.worst_index = i;
        if (rep.failure.empty()) rep.failure = name + "[" + std::to_string(i) + "] is not finite";
        continue;
      }
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      if (rel > gr.max_rel_err) {
        gr.max_rel_err = rel;
        gr.worst_index = i;
      }
    }
    rep.groups.push_back(gr);
  };

  check("input", x, an.input);
  for (std::size_t k = 0; k < l.n_basis(); ++k)
    check("basis_kernels[" + std::to_string(k) + "]", l.basis_kernels[k], an.basis_kernels[k]);
  check("basis_bias", l.basis_bias, an.basis_bias);
  check("squeeze_w", l.squeeze_w, an.squeeze_w);
  check("squeeze_b", l.squeeze_b, an.squeeze_b);
  check("excite_w", l.excite_w, an.excite_w);
  check("excite_b", l.excite_b, an.excite_b);

  rep.passed = rep.failure.empty();
  for (const auto& g : rep.groups) rep.passed = rep.passed && g.finite && g.max_rel_err < tolerance;
  return rep;
}

struct FdyInstanceShape {
  std::size_t batch = 1, in_channels = 4, out_channels = 4, freq = 8, time = 6, n_basis = 4;
  double temperature = 45.0;
};

/// Randomized layer and input for gradient checks. Unlike FdyConvLayer::init,
/// the excite weights are non-zero so the attention path carries gradient.
inline std::pair<FdyConvLayer<double>, Tensor<double>> random_fdy_instance(Rng& rng, const FdyInstanceShape& s) {
  auto layer = FdyConvLayer<double>::zeros(s.in_channels, s.out_channels, s.n_basis, s.temperature, 4);
  auto fill = [&rng](Tensor<double>& t, double scale) {
    for (auto& v : t.data()) v = rng.uniform(-scale, scale);
  };
  for (auto& w : layer.basis_kernels) fill(w, 1.0);
  fill(layer.basis_bias, 1.0);
  fill(layer.squeeze_w, 1.0);
  fill(layer.squeeze_b, 0.5);
  fill(layer.excite_w, 20.0);
  fill(layer.excite_b, 5.0);
  Tensor<double> input({s.batch, s.in_channels, s.freq, s.time});
  fill(input, 1.0);
  return {std::move(layer), std::move(input)};
}

struct GradSuiteResult {
  std::size_t trials = 0;
  std::size_t failures = 0;
  double worst_rel_err = 0.0;
  std::string first_failure;  // "trial N: group err"
  bool passed() const { return trials > 0 && failures == 0; }
};

/// Random instances with B <= 2, Cin, Cout <= 4, F, T <= 8.
inline GradSuiteResult gradcheck_suite(std::uint64_t seed, std::size_t trials, double tolerance = 1e-4,
                                       double h = 1e-4, std::size_t n_basis = 4, double temperature = 45.0) {
  Rng rng(seed);
  GradSuiteResult res;
  for (std::size_t t = 0; t < trials; ++t) {
    FdyInstanceShape s;
    s.batch = static_cast<std::size_t>(rng.uniform_int(1, 2));
    s.in_channels = static_cast<std::size_t>(rng.uniform_int(1, 4));
    s.out_channels = static_cast<std::size_t>(rng.uniform_int(1, 4));
    s.freq = static_cast<std::size_t>(rng.uniform_int(1, 8));
    s.time = static_cast<std::size_t>(rng.uniform_int(1, 8));
    s.n_basis = n_basis;
    s.temperature = temperature;
    auto [layer, input] = random_fdy_instance(rng, s);
    const auto rep = finite_diff_gradcheck(layer, input, h, tolerance);
    ++res.trials;
    res.worst_rel_err = std::max(res.worst_rel_err, rep.max_rel_err());
    if (!rep.passed) {
      ++res.failures;
      if (res.first_failure.empty()) {
        for (const auto& g : rep.groups)
          if (!g.finite || g.max_rel_err >= tolerance) {
            res.first_failure = "trial " + std::to_string(t) + ": " + g.name + " rel err " +
                                std::to_string(g.max_rel_err) + " at index " + std::to_string(g.worst_index);
            break;
          }
      }
    }
  }
  return res;
}

}  // namespace sedkit
