#pragma once

// Dense row-major tensors and the handful of primitives the CRNN needs:
// stride-1 convolution (forward and backward), average pooling, inference
// batch norm, tempered softmax, affine maps and a GRU cell.
//
// 4-D tensors are laid out [batch, channel, frequency, time]. All functions are
// pure; the summation order inside each output cell is fixed so results do not
// depend on how callers partition work across threads.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "sedkit/error.hpp"

namespace sedkit {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

template <typename T>
class Tensor {
 public:
  using value_type = T;
  static constexpr std::size_t kMaxRank = 4;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)) {
    validate_shape();
    data_.assign(shape_numel(shape_), fill);
  }

  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape();
    require(data_.size() == shape_numel(shape_), ErrorCode::kShapeMismatch,
            "tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                shape_str(shape_));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() & noexcept { return data_; }
  std::span<const T> data() const& noexcept { return data_; }
  // A span into a temporary would dangle (e.g. `for (v : f().data())`).
  std::span<const T> data() && = delete;
  std::vector<T>& vec() & noexcept { return data_; }
  const std::vector<T>& vec() const& noexcept { return data_; }
  std::vector<T> vec() && noexcept { return std::move(data_); }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  template <typename... Idx>
  T& operator()(Idx... idx) noexcept {
    return data_[offset(idx...)];
  }
  template <typename... Idx>
  const T& operator()(Idx... idx) const noexcept {
    return data_[offset(idx...)];
  }

  Tensor reshaped(Shape shape) const {
    require(shape_numel(shape) == size(), ErrorCode::kShapeMismatch,
            "cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    return Tensor(std::move(shape), data_);
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void validate_shape() const {
    require(!shape_.empty() && shape_.size() <= kMaxRank, ErrorCode::kShapeMismatch,
            "tensor rank must be 1.." + std::to_string(kMaxRank) + ", got " + shape_str(shape_));
    for (std::size_t i = 0; i < shape_.size(); ++i)
      require(shape_[i] >= 1, ErrorCode::kShapeMismatch,
              "extent of axis " + std::to_string(i) + " must be >= 1 in " + shape_str(shape_));
  }

  template <typename... Idx>
  std::size_t offset(Idx... idx) const noexcept {
    const std::size_t ix[] = {static_cast<std::size_t>(idx)...};
    std::size_t off = 0;
    for (std::size_t i = 0; i < sizeof...(Idx); ++i) off = off * shape_[i] + ix[i];
    return off;
  }

  Shape shape_;
  std::vector<T> data_;
};

namespace detail {

inline void check_rank(const Shape& s, std::size_t rank, const char* op, const char* name) {
  require(s.size() == rank, ErrorCode::kShapeMismatch,
          std::string(op) + ": " + name + " must have rank " + std::to_string(rank) + ", got " +
              shape_str(s));
}

inline void check_axis(std::size_t got, std::size_t want, const char* op, const char* what) {
  require(got == want, ErrorCode::kShapeMismatch,
          std::string(op) + ": " + what + " is " + std::to_string(got) + ", expected " +
              std::to_string(want));
}

// End of the valid output range along time when the input is read at t + dt.
inline std::size_t clamp_end(std::size_t out_extent, std::size_t in_extent, std::ptrdiff_t dt) {
  const std::ptrdiff_t end = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(out_extent),
                                                      static_cast<std::ptrdiff_t>(in_extent) - dt);
  return end < 0 ? 0 : static_cast<std::size_t>(end);
}

}  // namespace detail

struct Padding {
  std::size_t freq = 0;
  std::size_t time = 0;
};

/// Same-padding for an odd kernel.
inline Padding same_padding(std::size_t kh, std::size_t kw) { return {kh / 2, kw / 2}; }

/// Stride-1 zero-padded 2-D cross-correlation over the (frequency, time) axes.
/// input [B,Cin,F,T], kernel [Cout,Cin,kh,kw], bias [Cout] -> [B,Cout,F',T'].
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                         Padding pad) {
  constexpr const char* op = "conv2d_forward";
  detail::check_rank(input.shape(), 4, op, "input");
  detail::check_rank(kernel.shape(), 4, op, "kernel");
  detail::check_rank(bias.shape(), 1, op, "bias");
  const std::size_t B = input.dim(0), Cin = input.dim(1), F = input.dim(2), T_ = input.dim(3);
  const std::size_t Cout = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  detail::check_axis(kernel.dim(1), Cin, op, "kernel input-channel axis (1)");
  detail::check_axis(bias.dim(0), Cout, op, "bias length (axis 0)");
  require(kh % 2 == 1 && kw % 2 == 1, ErrorCode::kShapeMismatch,
          "conv2d_forward: kernel frequency/time extents must be odd, got " + shape_str(kernel.shape()));
  require(F + 2 * pad.freq >= kh, ErrorCode::kShapeMismatch,
          "conv2d_forward: frequency axis (2) too small for kernel");
  require(T_ + 2 * pad.time >= kw, ErrorCode::kShapeMismatch,
          "conv2d_forward: time axis (3) too small for kernel");
  const std::size_t Fo = F + 2 * pad.freq - kh + 1, To = T_ + 2 * pad.time - kw + 1;

  Tensor<T> out({B, Cout, Fo, To});
  const T* in = input.data().data();
  const T* w = kernel.data().data();
  T* o = out.data().data();
  const auto ph = static_cast<std::ptrdiff_t>(pad.freq), pw = static_cast<std::ptrdiff_t>(pad.time);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t co = 0; co < Cout; ++co) {
      T* oc = o + (b * Cout + co) * Fo * To;
      std::fill(oc, oc + Fo * To, bias[co]);
      for (std::size_t ci = 0; ci < Cin; ++ci) {
        const T* ic = in + (b * Cin + ci) * F * T_;
        for (std::size_t i = 0; i < kh; ++i) {
          for (std::size_t j = 0; j < kw; ++j) {
            const T wv = w[((co * Cin + ci) * kh + i) * kw + j];
            const std::ptrdiff_t dt = static_cast<std::ptrdiff_t>(j) - pw;
            const std::size_t t0 = dt < 0 ? static_cast<std::size_t>(-dt) : 0;
            const std::size_t t1 = detail::clamp_end(To, T_, dt);
            for (std::size_t f = 0; f < Fo; ++f) {
              const std::ptrdiff_t fi = static_cast<std::ptrdiff_t>(f + i) - ph;
              if (fi < 0 || fi >= static_cast<std::ptrdiff_t>(F)) continue;
              const T* row = ic + static_cast<std::size_t>(fi) * T_;
              T* orow = oc + f * To;
              for (std::size_t t = t0; t < t1; ++t) orow[t] += wv * row[t + dt];
            }
          }
        }
      }
    }
  }
  return out;
}

template <typename T>
struct Conv2dGrads {
  Tensor<T> input;
  Tensor<T> kernel;
  Tensor<T> bias;
};

/// Exact gradients of conv2d_forward with respect to input, kernel and bias.
template <typename T>
Conv2dGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& kernel,
                               const Tensor<T>& grad_out, Padding pad) {
  constexpr const char* op = "conv2d_backward";
  detail::check_rank(input.shape(), 4, op, "input");
  detail::check_rank(kernel.shape(), 4, op, "kernel");
  detail::check_rank(grad_out.shape(), 4, op, "grad_out");
  const std::size_t B = input.dim(0), Cin = input.dim(1), F = input.dim(2), T_ = input.dim(3);
  const std::size_t Cout = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  detail::check_axis(kernel.dim(1), Cin, op, "kernel input-channel axis (1)");
  require(F + 2 * pad.freq >= kh && T_ + 2 * pad.time >= kw, ErrorCode::kShapeMismatch,
          "conv2d_backward: input too small for kernel");
  const std::size_t Fo = F + 2 * pad.freq - kh + 1, To = T_ + 2 * pad.time - kw + 1;
  detail::check_axis(grad_out.dim(0), B, op, "grad_out batch axis (0)");
  detail::check_axis(grad_out.dim(1), Cout, op, "grad_out channel axis (1)");
  detail::check_axis(grad_out.dim(2), Fo, op, "grad_out frequency axis (2)");
  detail::check_axis(grad_out.dim(3), To, op, "grad_out time axis (3)");

  Conv2dGrads<T> g{Tensor<T>(input.shape()), Tensor<T>(kernel.shape()), Tensor<T>({Cout})};
  const T* in = input.data().data();
  const T* w = kernel.data().data();
  const T* go = grad_out.data().data();
  T* gi = g.input.data().data();
  T* gw = g.kernel.data().data();
  const auto ph = static_cast<std::ptrdiff_t>(pad.freq), pw = static_cast<std::ptrdiff_t>(pad.time);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t co = 0; co < Cout; ++co) {
      const T* gc = go + (b * Cout + co) * Fo * To;
      T acc = 0;
      for (std::size_t k = 0; k < Fo * To; ++k) acc += gc[k];
      g.bias[co] += acc;
      for (std::size_t ci = 0; ci < Cin; ++ci) {
        const T* ic = in + (b * Cin + ci) * F * T_;
        T* gic = gi + (b * Cin + ci) * F * T_;
        for (std::size_t i = 0; i < kh; ++i) {
          for (std::size_t j = 0; j < kw; ++j) {
            const std::size_t widx = ((co * Cin + ci) * kh + i) * kw + j;
            const T wv = w[widx];
            const std::ptrdiff_t dt = static_cast<std::ptrdiff_t>(j) - pw;
            const std::size_t t0 = dt < 0 ? static_cast<std::size_t>(-dt) : 0;
            const std::size_t t1 = detail::clamp_end(To, T_, dt);
            T wacc = 0;
            for (std::size_t f = 0; f < Fo; ++f) {
              const std::ptrdiff_t fi = static_cast<std::ptrdiff_t>(f + i) - ph;
              if (fi < 0 || fi >= static_cast<std::ptrdiff_t>(F)) continue;
              const T* row = ic + static_cast<std::size_t>(fi) * T_;
              T* grow = gic + static_cast<std::size_t>(fi) * T_;
              const T* gorow = gc + f * To;
              for (std::size_t t = t0; t < t1; ++t) {
                wacc += gorow[t] * row[t + dt];
                grow[t + dt] += gorow[t] * wv;
              }
            }
            gw[widx] += wacc;
          }
        }
      }
    }
  }
  return g;
}

struct PoolWindow {
  std::size_t freq = 1;
  std::size_t time = 1;
};

/// Number of trailing cells dropped when `extent` is pooled by `window`.
inline std::size_t pool_truncation(std::size_t extent, std::size_t window) { return extent % window; }

/// Non-overlapping average pooling over (frequency, time). Trailing cells that
/// do not fill a whole window are dropped (see pool_truncation).
template <typename T>
Tensor<T> avg_pool2d(const Tensor<T>& input, PoolWindow window) {
  detail::check_rank(input.shape(), 4, "avg_pool2d", "input");
  const std::size_t B = input.dim(0), C = input.dim(1), F = input.dim(2), T_ = input.dim(3);
  require(window.freq >= 1 && window.time >= 1, ErrorCode::kInvalidArgument,
          "avg_pool2d: window extents must be >= 1");
  require(window.freq <= F, ErrorCode::kShapeMismatch,
          "avg_pool2d: frequency window " + std::to_string(window.freq) + " exceeds axis (2) extent " +
              std::to_string(F));
  require(window.time <= T_, ErrorCode::kShapeMismatch,
          "avg_pool2d: time window " + std::to_string(window.time) + " exceeds axis (3) extent " +
              std::to_string(T_));
  const std::size_t Fo = F / window.freq, To = T_ / window.time;
  Tensor<T> out({B, C, Fo, To});
  const T scale = T(1) / static_cast<T>(window.freq * window.time);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t f = 0; f < Fo; ++f)
        for (std::size_t t = 0; t < To; ++t) {
          T acc = 0;
          for (std::size_t i = 0; i < window.freq; ++i)
            for (std::size_t j = 0; j < window.time; ++j)
              acc += input(b, c, f * window.freq + i, t * window.time + j);
          out(b, c, f, t) = acc * scale;
        }
  return out;
}

/// Per-channel affine normalization with stored statistics; channel axis is 1
/// (axis 0 for rank-1 input).
template <typename T>
Tensor<T> batch_norm_inference(const Tensor<T>& input, const Tensor<T>& mean, const Tensor<T>& var,
                               const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5)) {
  constexpr const char* op = "batch_norm_inference";
  const std::size_t caxis = input.rank() >= 2 ? 1 : 0;
  const std::size_t C = input.dim(caxis);
  for (const auto* p : {&mean, &var, &gamma, &beta}) {
    detail::check_rank(p->shape(), 1, op, "statistics");
    detail::check_axis(p->dim(0), C, op, "statistics length vs channel axis (1)");
  }
  for (std::size_t c = 0; c < C; ++c)
    require(var[c] >= T(0), ErrorCode::kInvalidArgument,
            "batch_norm_inference: negative variance at channel " + std::to_string(c));
  const std::size_t outer = caxis == 1 ? input.dim(0) : 1;
  const std::size_t inner = input.size() / (outer * C);
  Tensor<T> out(input.shape());
  for (std::size_t c = 0; c < C; ++c) {
    const T scale = gamma[c] / std::sqrt(var[c] + eps);
    const T shift = beta[c] - mean[c] * scale;
    for (std::size_t o = 0; o < outer; ++o) {
      const std::size_t base = (o * C + c) * inner;
      for (std::size_t k = 0; k < inner; ++k) out[base + k] = input[base + k] * scale + shift;
    }
  }
  return out;
}

/// out_i = exp(l_i / tau) / sum_j exp(l_j / tau), evaluated with max subtraction.
template <typename T>
std::vector<T> softmax_tempered(std::span<const T> logits, T tau) {
  require(tau > T(0), ErrorCode::kInvalidArgument, "softmax_tempered: temperature must be > 0");
  require(!logits.empty(), ErrorCode::kInvalidArgument, "softmax_tempered: empty logits");
  T mx = logits[0];
  for (T v : logits) {
    require(std::isfinite(v), ErrorCode::kNonFinite, "softmax_tempered: non-finite logit");
    mx = std::max(mx, v);
  }
  std::vector<T> out(logits.size());
  T sum = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp((logits[i] - mx) / tau);
    sum += out[i];
  }
  for (T& v : out) v /= sum;
  return out;
}

template <typename T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

/// W x + b with W [out, in].
template <typename T>
std::vector<T> affine(std::span<const T> x, const Tensor<T>& W, std::span<const T> b) {
  detail::check_rank(W.shape(), 2, "affine", "W");
  detail::check_axis(x.size(), W.dim(1), "affine", "input length vs W columns (axis 1)");
  detail::check_axis(b.size(), W.dim(0), "affine", "bias length vs W rows (axis 0)");
  const std::size_t rows = W.dim(0), cols = W.dim(1);
  std::vector<T> y(rows);
  const T* w = W.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    T acc = b[r];
    for (std::size_t c = 0; c < cols; ++c) acc += w[r * cols + c] * x[c];
    y[r] = acc;
  }
  return y;
}

/// One GRU direction. Input weights are [hidden, input], recurrent weights [hidden, hidden].
template <typename T>
struct GruParams {
  Tensor<T> w_r, w_z, w_n;  // input-to-hidden
  Tensor<T> u_r, u_z, u_n;  // hidden-to-hidden
  Tensor<T> b_r, b_z, b_in, b_hn;

  std::size_t input_size() const { return w_r.dim(1); }
  std::size_t hidden_size() const { return w_r.dim(0); }

  static GruParams zeros(std::size_t input, std::size_t hidden) {
    GruParams p;
    p.w_r = p.w_z = p.w_n = Tensor<T>({hidden, input});
    p.u_r = p.u_z = p.u_n = Tensor<T>({hidden, hidden});
    p.b_r = p.b_z = p.b_in = p.b_hn = Tensor<T>({hidden});
    return p;
  }
};

template <typename T>
std::vector<T> gru_cell_forward(std::span<const T> x, std::span<const T> h_prev, const GruParams<T>& p) {
  constexpr const char* op = "gru_cell_forward";
  const std::size_t H = p.hidden_size();
  detail::check_axis(x.size(), p.input_size(), op, "input length");
  detail::check_axis(h_prev.size(), H, op, "hidden length");
  for (const auto* u : {&p.u_r, &p.u_z, &p.u_n}) {
    detail::check_axis(u->dim(0), H, op, "recurrent weight rows");
    detail::check_axis(u->dim(1), H, op, "recurrent weight columns");
  }
  const std::vector<T> zero(H, T(0));
  const std::span<const T> z0(zero);
  auto xr = affine(x, p.w_r, p.b_r.data());
  auto xz = affine(x, p.w_z, p.b_z.data());
  auto xn = affine(x, p.w_n, p.b_in.data());
  auto hr = affine(h_prev, p.u_r, z0);
  auto hz = affine(h_prev, p.u_z, z0);
  auto hn = affine(h_prev, p.u_n, p.b_hn.data());
  std::vector<T> h(H);
  for (std::size_t k = 0; k < H; ++k) {
    const T r = sigmoid(xr[k] + hr[k]);
    const T z = sigmoid(xz[k] + hz[k]);
    const T n = std::tanh(xn[k] + r * hn[k]);
    h[k] = (T(1) - z) * n + z * h_prev[k];
  }
  return h;
}

}  // namespace sedkit
