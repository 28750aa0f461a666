#pragma once

// CRNN inference: seven conv blocks (static conv first, frequency dynamic conv
// after), two bidirectional GRU layers, a frame-wise strong head and an
// attention-pooled weak head. Also the SEDW named-tensor weight container and
// the mean-teacher EMA update.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "sedkit/binary_io.hpp"
#include "sedkit/error.hpp"
#include "sedkit/fdy_conv.hpp"
#include "sedkit/rng.hpp"
#include "sedkit/tensor.hpp"

namespace sedkit {

enum class AttentionDim { kClass, kTime };

inline const char* to_string(AttentionDim d) { return d == AttentionDim::kClass ? "class" : "time"; }

inline AttentionDim parse_attention_dim(std::string_view s) {
  if (s == "class") return AttentionDim::kClass;
  if (s == "time") return AttentionDim::kTime;
  fail(ErrorCode::kParse, "attention dim must be class or time, got '" + std::string(s) + "'");
}

struct ModelConfig {
  std::vector<std::size_t> channels{16, 32, 64, 128, 128, 128, 128};
  std::vector<PoolWindow> pooling{{2, 2}, {2, 2}, {2, 1}, {2, 1}, {2, 1}, {2, 1}, {2, 1}};
  double dropout = 0.5;  // identity at inference
  std::size_t n_mels = 128;
  std::size_t gru_hidden = 128;
  std::size_t gru_layers = 2;
  std::size_t n_classes = 10;
  AttentionDim attention_dim = AttentionDim::kClass;
  std::size_t n_basis = 4;
  double temperature = 45.0;
  std::size_t squeeze_ratio = 4;

  std::size_t n_blocks() const { return channels.size(); }

  std::size_t time_pooling_factor() const {
    std::size_t p = 1;
    for (const auto& w : pooling) p *= w.time;
    return p;
  }

  /// Number of output frames for an input of n_frames (with per-block truncation).
  std::size_t output_frames(std::size_t n_frames) const {
    for (const auto& w : pooling) n_frames /= w.time;
    return n_frames;
  }

  void validate() const {
    require(!channels.empty(), ErrorCode::kInvalidArgument, "model: need at least one conv block");
    require(channels.size() == pooling.size(), ErrorCode::kInvalidArgument,
            "model: channels and pooling lists differ in length");
    std::size_t fprod = 1;
    for (const auto& w : pooling) {
      require(w.freq >= 1 && w.time >= 1, ErrorCode::kInvalidArgument, "model: pooling windows must be >= 1");
      fprod *= w.freq;
    }
    require(fprod == n_mels, ErrorCode::kInvalidArgument,
            "model: product of frequency pooling (" + std::to_string(fprod) + ") must equal n_mels (" +
                std::to_string(n_mels) + ")");
    for (auto c : channels) require(c >= 1, ErrorCode::kInvalidArgument, "model: channel widths must be >= 1");
    require(gru_hidden >= 1 && gru_layers >= 1 && n_classes >= 1, ErrorCode::kInvalidArgument,
            "model: gru_hidden, gru_layers and n_classes must be >= 1");
    require(n_basis >= 1 && temperature > 0, ErrorCode::kInvalidArgument, "model: need n_basis >= 1 and temperature > 0");
  }
};

/// Named float tensors, ordered by name so serialization is canonical.
using ModelWeights = std::map<std::string, Tensor<float>>;

struct FramePredictions {
  Tensor<float> strong;  // [T', C]
  Tensor<float> weak;    // [C]
  float frame_duration_s = 0.064f;

  std::size_t n_frames() const { return strong.dim(0); }
  std::size_t n_classes() const { return strong.dim(1); }
};

// ---------------------------------------------------------------------------
// Parameter naming

inline std::string block_prefix(std::size_t block) { return "b" + std::to_string(block + 1); }
inline std::string gru_prefix(std::size_t layer, bool backward) {
  return "gru" + std::to_string(layer + 1) + (backward ? ".bwd" : ".fwd");
}

/// Expected name -> shape map for a configuration.
inline std::map<std::string, Shape> expected_shapes(const ModelConfig& cfg) {
  cfg.validate();
  std::map<std::string, Shape> s;
  std::size_t cin = 1;
  for (std::size_t b = 0; b < cfg.n_blocks(); ++b) {
    const auto p = block_prefix(b);
    const std::size_t c = cfg.channels[b];
    if (b == 0) {
      s[p + ".conv.w"] = {c, cin, 3, 3};
      s[p + ".conv.b"] = {c};
    } else {
      const std::size_t h = FdyConvLayer<float>::squeeze_width(cin, cfg.squeeze_ratio);
      for (std::size_t k = 0; k < cfg.n_basis; ++k) s[p + ".fdy.w" + std::to_string(k)] = {c, cin, 3, 3};
      s[p + ".fdy.b"] = {cfg.n_basis, c};
      s[p + ".fdy.sq.w"] = {h, cin};
      s[p + ".fdy.sq.b"] = {h};
      s[p + ".fdy.ex.w"] = {cfg.n_basis, h};
      s[p + ".fdy.ex.b"] = {cfg.n_basis};
    }
    for (const char* n : {".bn.mean", ".bn.var", ".bn.gamma", ".bn.beta", ".cg.b"}) s[p + n] = {c};
    s[p + ".cg.w"] = {c, c};
    cin = c;
  }
  const std::size_t H = cfg.gru_hidden;
  std::size_t in = cin;
  for (std::size_t l = 0; l < cfg.gru_layers; ++l) {
    for (bool bwd : {false, true}) {
      const auto p = gru_prefix(l, bwd);
      for (const char* n : {".w_r", ".w_z", ".w_n"}) s[p + n] = {H, in};
      for (const char* n : {".u_r", ".u_z", ".u_n"}) s[p + n] = {H, H};
      for (const char* n : {".b_r", ".b_z", ".b_in", ".b_hn"}) s[p + n] = {H};
    }
    in = 2 * H;
  }
  for (const char* head : {"strong", "weak"}) {
    s[std::string(head) + ".w"] = {cfg.n_classes, 2 * H};
    s[std::string(head) + ".b"] = {cfg.n_classes};
  }
  return s;
}

inline void validate_weights(const ModelWeights& w, const ModelConfig& cfg) {
  const auto want = expected_shapes(cfg);
  for (const auto& [name, shape] : want) {
    auto it = w.find(name);
    require(it != w.end(), ErrorCode::kShapeMismatch, "weights: missing tensor " + name);
    require(it->second.shape() == shape, ErrorCode::kShapeMismatch,
            "weights: " + name + " has shape " + shape_str(it->second.shape()) + ", expected " + shape_str(shape));
  }
  for (const auto& [name, t] : w)
    require(want.count(name) == 1, ErrorCode::kShapeMismatch, "weights: unexpected tensor " + name);
}

/// Seeded random weights. Weights and biases are uniform in +-1/sqrt(fan_in)
/// of the layer they belong to (Cin*9 for convolutions, H for GRU cells); FDY
/// excite weights are zero and batch norm starts at identity statistics.
inline ModelWeights init_weights(const ModelConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  const auto shapes = expected_shapes(cfg);
  auto fan_in = [&](const std::string& name) -> double {
    static const std::pair<const char*, const char*> partners[] = {
        {".conv.b", ".conv.w"}, {".fdy.b", ".fdy.w0"}, {".sq.b", ".sq.w"},
        {".cg.b", ".cg.w"},     {"strong.b", "strong.w"}, {"weak.b", "weak.w"}};
    if (name.starts_with("gru")) return static_cast<double>(cfg.gru_hidden);
    std::string wname = name;
    for (const auto& [bias, weight] : partners)
      if (name.ends_with(bias)) wname = name.substr(0, name.size() - std::string(bias).size()) + weight;
    const Shape& ws = shapes.at(wname);
    return static_cast<double>(shape_numel(ws) / ws[0]);
  };
  ModelWeights w;
  for (const auto& [name, shape] : shapes) {
    Tensor<float> t(shape);
    if (name.ends_with(".bn.var") || name.ends_with(".bn.gamma")) {
      t.fill(1.f);
    } else if (!name.ends_with(".bn.mean") && !name.ends_with(".bn.beta") && name.find(".fdy.ex.") == std::string::npos) {
      const double bound = 1.0 / std::sqrt(fan_in(name));
      for (auto& v : t.data()) v = static_cast<float>(rng.uniform(-bound, bound));
    }
    w.emplace(name, std::move(t));
  }
  return w;
}

namespace detail {

inline const Tensor<float>& get(const ModelWeights& w, const std::string& name) {
  auto it = w.find(name);
  require(it != w.end(), ErrorCode::kShapeMismatch, "weights: missing tensor " + name);
  return it->second;
}

}  // namespace detail

inline FdyConvLayer<float> fdy_layer_from(const ModelWeights& w, std::size_t block, const ModelConfig& cfg) {
  const auto p = block_prefix(block) + ".fdy";
  FdyConvLayer<float> l;
  for (std::size_t k = 0; k < cfg.n_basis; ++k) l.basis_kernels.push_back(detail::get(w, p + ".w" + std::to_string(k)));
  l.basis_bias = detail::get(w, p + ".b");
  l.squeeze_w = detail::get(w, p + ".sq.w");
  l.squeeze_b = detail::get(w, p + ".sq.b");
  l.excite_w = detail::get(w, p + ".ex.w");
  l.excite_b = detail::get(w, p + ".ex.b");
  l.temperature = static_cast<float>(cfg.temperature);
  return l;
}

inline GruParams<float> gru_from(const ModelWeights& w, std::size_t layer, bool backward) {
  const auto p = gru_prefix(layer, backward);
  GruParams<float> g;
  g.w_r = detail::get(w, p + ".w_r");
  g.w_z = detail::get(w, p + ".w_z");
  g.w_n = detail::get(w, p + ".w_n");
  g.u_r = detail::get(w, p + ".u_r");
  g.u_z = detail::get(w, p + ".u_z");
  g.u_n = detail::get(w, p + ".u_n");
  g.b_r = detail::get(w, p + ".b_r");
  g.b_z = detail::get(w, p + ".b_z");
  g.b_in = detail::get(w, p + ".b_in");
  g.b_hn = detail::get(w, p + ".b_hn");
  return g;
}

// ---------------------------------------------------------------------------
// Forward pass

/// y = u * sigmoid(G u + g) with G mixing channels at each (f, t).
inline Tensor<float> context_gating(const Tensor<float>& u, const Tensor<float>& G, const Tensor<float>& g) {
  detail::check_rank(u.shape(), 4, "context_gating", "input");
  const std::size_t B = u.dim(0), C = u.dim(1), FT = u.dim(2) * u.dim(3);
  detail::check_axis(G.dim(0), C, "context_gating", "gate rows");
  detail::check_axis(G.dim(1), C, "context_gating", "gate columns");
  Tensor<float> out(u.shape());
  std::vector<float> acc(FT);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c) {
      std::fill(acc.begin(), acc.end(), g[c]);
      for (std::size_t c2 = 0; c2 < C; ++c2) {
        const float gv = G(c, c2);
        const float* src = &u[(b * C + c2) * FT];
        for (std::size_t i = 0; i < FT; ++i) acc[i] += gv * src[i];
      }
      const float* src = &u[(b * C + c) * FT];
      float* dst = &out[(b * C + c) * FT];
      for (std::size_t i = 0; i < FT; ++i) dst[i] = src[i] * sigmoid(acc[i]);
    }
  return out;
}

/// One conv block: conv -> batch norm -> context gating -> dropout (identity) -> pool.
inline Tensor<float> conv_block_forward(const Tensor<float>& x, const ModelWeights& w, const ModelConfig& cfg,
                                        std::size_t block) {
  const auto p = block_prefix(block);
  try {
    Tensor<float> u;
    if (block == 0) {
      u = conv2d_forward(x, detail::get(w, p + ".conv.w"), detail::get(w, p + ".conv.b"), same_padding(3, 3));
    } else {
      u = fdy_conv_forward(x, fdy_layer_from(w, block, cfg));
    }
    u = batch_norm_inference(u, detail::get(w, p + ".bn.mean"), detail::get(w, p + ".bn.var"),
                             detail::get(w, p + ".bn.gamma"), detail::get(w, p + ".bn.beta"));
    u = context_gating(u, detail::get(w, p + ".cg.w"), detail::get(w, p + ".cg.b"));
    return avg_pool2d(u, cfg.pooling[block]);
  } catch (const Error& e) {
    throw Error(e.code(), "block " + p + ": " + e.what());
  }
}

/// [B, 1, n_mels, T] -> [B, C_last, 1, T / time_pooling_factor].
inline Tensor<float> cnn_stack_forward(const Tensor<float>& x, const ModelWeights& w, const ModelConfig& cfg) {
  cfg.validate();
  detail::check_rank(x.shape(), 4, "cnn_stack_forward", "input");
  detail::check_axis(x.dim(1), 1, "cnn_stack_forward", "input channel axis (1)");
  detail::check_axis(x.dim(2), cfg.n_mels, "cnn_stack_forward", "input mel axis (2)");
  Tensor<float> h = x;
  for (std::size_t b = 0; b < cfg.n_blocks(); ++b) h = conv_block_forward(h, w, cfg, b);
  return h;
}

/// One direction over a [T, I] sequence; returns [T, H].
inline std::vector<std::vector<float>> gru_sequence(const std::vector<std::vector<float>>& seq,
                                                    const GruParams<float>& p, bool reverse) {
  const std::size_t T = seq.size();
  std::vector<std::vector<float>> out(T);
  std::vector<float> h(p.hidden_size(), 0.f);
  for (std::size_t s = 0; s < T; ++s) {
    const std::size_t t = reverse ? T - 1 - s : s;
    h = gru_cell_forward<float>(seq[t], h, p);
    out[t] = h;
  }
  return out;
}

/// Stacked bidirectional GRU over [T', I]; returns [T', 2H] (forward then backward halves).
inline Tensor<float> bigru_forward(const Tensor<float>& seq, const ModelWeights& w, const ModelConfig& cfg) {
  detail::check_rank(seq.shape(), 2, "bigru_forward", "sequence");
  const std::size_t T = seq.dim(0);
  std::vector<std::vector<float>> cur(T);
  for (std::size_t t = 0; t < T; ++t) cur[t].assign(&seq(t, 0), &seq(t, 0) + seq.dim(1));
  for (std::size_t l = 0; l < cfg.gru_layers; ++l) {
    const auto fwd = gru_sequence(cur, gru_from(w, l, false), false);
    const auto bwd = gru_sequence(cur, gru_from(w, l, true), true);
    for (std::size_t t = 0; t < T; ++t) {
      cur[t] = fwd[t];
      cur[t].insert(cur[t].end(), bwd[t].begin(), bwd[t].end());
    }
  }
  const std::size_t D = cur.empty() ? 0 : cur[0].size();
  Tensor<float> out({T, D});
  for (std::size_t t = 0; t < T; ++t) std::copy(cur[t].begin(), cur[t].end(), &out(t, 0));
  return out;
}

/// Frame-wise affine map [T', D] -> [T', C] (no activation).
inline Tensor<float> framewise_affine(const Tensor<float>& features, const Tensor<float>& W, const Tensor<float>& b) {
  detail::check_rank(features.shape(), 2, "framewise_affine", "features");
  const std::size_t T = features.dim(0), D = features.dim(1), C = W.dim(0);
  Tensor<float> out({T, C});
  for (std::size_t t = 0; t < T; ++t) {
    const auto y = affine<float>(std::span<const float>(&features(t, 0), D), W, b.data());
    std::copy(y.begin(), y.end(), &out(t, 0));
  }
  return out;
}

inline Tensor<float> strong_head(const Tensor<float>& features, const Tensor<float>& W, const Tensor<float>& b) {
  auto out = framewise_affine(features, W, b);
  for (auto& v : out.data()) v = sigmoid(v);
  return out;
}

/// Attention-weighted clip-level prediction. Softmax over classes (per frame)
/// or over time (per class), clamped to [1e-7, 1]; weak[c] is the attention-
/// weighted mean of strong[:, c].
inline Tensor<float> weak_head(const Tensor<float>& strong, const Tensor<float>& att_logits, AttentionDim dim) {
  require(strong.shape() == att_logits.shape() && strong.rank() == 2, ErrorCode::kShapeMismatch,
          "weak_head: strong " + shape_str(strong.shape()) + " and attention logits " +
              shape_str(att_logits.shape()) + " must be equal [T', C]");
  const std::size_t T = strong.dim(0), C = strong.dim(1);
  Tensor<float> att({T, C});
  if (dim == AttentionDim::kClass) {
    for (std::size_t t = 0; t < T; ++t) {
      const auto a = softmax_tempered<float>(std::span<const float>(&att_logits(t, 0), C), 1.f);
      std::copy(a.begin(), a.end(), &att(t, 0));
    }
  } else {
    std::vector<float> col(T);
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t t = 0; t < T; ++t) col[t] = att_logits(t, c);
      const auto a = softmax_tempered<float>(col, 1.f);
      for (std::size_t t = 0; t < T; ++t) att(t, c) = a[t];
    }
  }
  for (auto& v : att.data()) v = std::clamp(v, 1e-7f, 1.f);
  Tensor<float> weak({C});
  for (std::size_t c = 0; c < C; ++c) {
    double num = 0, den = 0;
    for (std::size_t t = 0; t < T; ++t) {
      num += static_cast<double>(strong(t, c)) * att(t, c);
      den += att(t, c);
    }
    weak[c] = static_cast<float>(num / den);
  }
  return weak;
}

/// Full CRNN on a normalized log-mel batch [B, n_mels, T]; one prediction per item.
inline std::vector<FramePredictions> model_forward(const Tensor<float>& logmel_batch, const ModelWeights& w,
                                                   const ModelConfig& cfg, float frame_hop_s = 0.016f) {
  detail::check_rank(logmel_batch.shape(), 3, "model_forward", "batch");
  const std::size_t B = logmel_batch.dim(0), T = logmel_batch.dim(2);
  const std::size_t Tout = cfg.output_frames(T);
  require(Tout >= 1, ErrorCode::kShapeMismatch,
          "model_forward: " + std::to_string(T) + " frames is too short for time pooling");
  const auto x = logmel_batch.reshaped({B, 1, logmel_batch.dim(1), T});
  const auto feats = cnn_stack_forward(x, w, cfg);
  const std::size_t C = feats.dim(1), Tp = feats.dim(3);

  std::vector<FramePredictions> out;
  for (std::size_t b = 0; b < B; ++b) {
    Tensor<float> seq({Tp, C});
    for (std::size_t t = 0; t < Tp; ++t)
      for (std::size_t c = 0; c < C; ++c) seq(t, c) = feats(b, c, 0, t);
    const auto rnn = bigru_forward(seq, w, cfg);
    auto strong = strong_head(rnn, detail::get(w, "strong.w"), detail::get(w, "strong.b"));
    const auto att = framewise_affine(rnn, detail::get(w, "weak.w"), detail::get(w, "weak.b"));
    auto weak = weak_head(strong, att, cfg.attention_dim);
    out.push_back({std::move(strong), std::move(weak),
                   frame_hop_s * static_cast<float>(cfg.time_pooling_factor())});
  }
  return out;
}

// ---------------------------------------------------------------------------
// SEDW container: "SEDW", u32 version, u32 tensor count; per tensor u16 name
// length, UTF-8 name, u8 rank, u32 dims, f32 little-endian payload.

inline constexpr std::uint32_t kSedwVersion = 1;

inline std::string encode_weights(const ModelWeights& w) {
  ByteWriter out;
  out.bytes("SEDW");
  out.u32(kSedwVersion);
  out.u32(static_cast<std::uint32_t>(w.size()));
  for (const auto& [name, t] : w) {
    require(name.size() <= 0xffff, ErrorCode::kInvalidArgument, "weights: tensor name too long");
    out.u16(static_cast<std::uint16_t>(name.size()));
    out.bytes(name);
    out.u8(static_cast<std::uint8_t>(t.rank()));
    for (auto d : t.shape()) out.u32(static_cast<std::uint32_t>(d));
    for (float v : t.data()) out.f32(v);
  }
  return out.take();
}

inline ModelWeights decode_weights(std::string_view bytes, const std::string& name = "weights") {
  ByteReader rd(bytes, name);
  if (rd.remaining() < 4 || rd.bytes(4) != "SEDW") fail(ErrorCode::kBadMagic, name + ": expected SEDW magic");
  const auto version = rd.u32();
  if (version != kSedwVersion) fail(ErrorCode::kUnknownVersion, name + ": SEDW version " + std::to_string(version));
  const auto count = rd.u32();
  ModelWeights w;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = rd.u16();
    std::string tname(rd.bytes(len));
    const auto rank = rd.u8();
    if (rank < 1 || rank > Tensor<float>::kMaxRank)
      fail(ErrorCode::kParse, name + ": tensor " + tname + " has rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& d : shape) d = rd.u32();
    for (auto d : shape) require(d >= 1, ErrorCode::kParse, name + ": tensor " + tname + " has a zero extent");
    const std::size_t n = shape_numel(shape);
    rd.need(n * 4);
    std::vector<float> data(n);
    for (float& v : data) v = rd.f32();
    if (w.count(tname)) fail(ErrorCode::kDuplicateName, name + ": tensor " + tname + " appears twice");
    w.emplace(std::move(tname), Tensor<float>(std::move(shape), std::move(data)));
  }
  if (rd.remaining() != 0) fail(ErrorCode::kParse, name + ": trailing bytes after last tensor");
  return w;
}

inline void save_weights(const ModelWeights& w, const std::filesystem::path& path) {
  write_file_atomic(path, encode_weights(w));
}

inline ModelWeights load_weights(const std::filesystem::path& path) {
  return decode_weights(read_file(path), path.string());
}

/// teacher <- m * teacher + (1 - m) * student, elementwise.
inline ModelWeights mean_teacher_update(const ModelWeights& teacher, const ModelWeights& student,
                                        double momentum = 0.999) {
  require(momentum >= 0.0 && momentum <= 1.0, ErrorCode::kInvalidArgument, "mean_teacher_update: momentum outside [0, 1]");
  require(teacher.size() == student.size(), ErrorCode::kShapeMismatch, "mean_teacher_update: parameter sets differ");
  ModelWeights out;
  for (const auto& [name, t] : teacher) {
    auto it = student.find(name);
    require(it != student.end(), ErrorCode::kShapeMismatch, "mean_teacher_update: student lacks " + name);
    require(it->second.shape() == t.shape(), ErrorCode::kShapeMismatch, "mean_teacher_update: shape differs for " + name);
    Tensor<float> u(t.shape());
    for (std::size_t i = 0; i < t.size(); ++i)
      u[i] = static_cast<float>(momentum * t[i] + (1.0 - momentum) * it->second[i]);
    out.emplace(name, std::move(u));
  }
  return out;
}

}  // namespace sedkit
