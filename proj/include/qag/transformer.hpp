#pragma once

// Encoder-decoder transformer whose decoder runs a main hidden stream plus
// two predicting streams. During training the predicting streams score the
// next and next-next token; inference reads only the first predicting
// stream's logits. The main stream never sees the predicting streams.

#include <array>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "qag/adam.hpp"
#include "qag/decoding.hpp"
#include "qag/error.hpp"
#include "qag/tensor.hpp"
#include "qag/vocab.hpp"

namespace qag {

struct ModelConfig {
  int d_model = 64;
  int n_heads = 4;
  int n_enc_layers = 2;
  int n_dec_layers = 2;
  int d_ff = 256;
  int max_len = 256;
  int vocab_size = 0;
  static constexpr int n_streams = 2;
  std::array<double, 2> stream_loss_weights = {0.5, 0.5};

  void validate() const {
    if (d_model <= 0 || n_heads <= 0 || n_enc_layers <= 0 || n_dec_layers <= 0 || d_ff <= 0 ||
        max_len <= 0 || vocab_size <= 0)
      throw ConfigError("model config: all dimensions must be positive");
    if (d_model % n_heads != 0)
      throw ConfigError("model config: d_model " + std::to_string(d_model) +
                        " not divisible by n_heads " + std::to_string(n_heads));
    if (std::abs(stream_loss_weights[0] + stream_loss_weights[1] - 1.0) > 1e-9)
      throw ConfigError("model config: stream loss weights must sum to 1");
  }
};

template <typename S>
struct AttentionWeightsT {
  TensorT<S> wq, wk, wv, wo;
};

template <typename S>
struct LayerNormParamsT {
  TensorT<S> gamma, beta;
};

template <typename S>
struct FfnWeightsT {
  TensorT<S> w1, b1, w2, b2;
};

template <typename S>
struct EncLayerT {
  LayerNormParamsT<S> ln_attn, ln_ffn;
  AttentionWeightsT<S> attn;
  FfnWeightsT<S> ffn;
};

template <typename S>
struct DecLayerT {
  LayerNormParamsT<S> ln_self, ln_cross, ln_ffn;
  AttentionWeightsT<S> self_attn, cross_attn;
  FfnWeightsT<S> ffn;
};

// All weights of one encoder-decoder model. out_w / out_b are the output
// projection and its bias (logits = h * out_w + out_b).
template <typename S>
struct ModelParamsT {
  ModelConfig config;
  TensorT<S> tok_emb;     // [vocab_size x d_model]
  TensorT<S> pos_emb;     // [max_len x d_model], learned
  TensorT<S> stream_emb;  // [2 x d_model]: initial states of the predicting streams
  std::vector<EncLayerT<S>> enc_layers;
  std::vector<DecLayerT<S>> dec_layers;
  LayerNormParamsT<S> enc_final_ln, dec_final_ln;
  TensorT<S> out_w;  // [d_model x vocab_size]
  TensorT<S> out_b;  // [vocab_size]

  static ModelParamsT init(const ModelConfig& cfg, std::uint64_t seed);

  // Copying a ModelParamsT shares the underlying tensors (that is how the
  // shared-encoder baseline aliases its encoder); clone() makes an
  // independent deep copy of the weights.
  ModelParamsT clone() const;

  // Stable manifest order; the checkpoint layout depends on it.
  std::vector<std::pair<std::string, TensorT<S>*>> named_params();
  std::vector<TensorT<S>*> params();
  void zero_grad() {
    for (auto* p : params()) p->zero_grad();
  }
};

template <typename S>
struct EncOutT {
  TensorT<S> states;                    // [T_src x d_model]
  std::vector<std::uint8_t> key_valid;  // 0 where the source position is PAD
};

template <typename S>
struct DecoderStatesT {
  std::vector<TensorT<S>> main;     // per layer, [T x d_model]
  std::vector<TensorT<S>> stream1;  // per layer
  std::vector<TensorT<S>> stream2;  // per layer
  TensorT<S> final_main;            // final-layer main-stream states after the last norm
};

template <typename S>
struct DecodeResultT {
  TensorT<S> logits1;  // [T x V]; row t scores the token 1 ahead
  TensorT<S> logits2;  // [T x V]; row t scores the token 2 ahead
  DecoderStatesT<S> states;
};

// ---------------------------------------------------------------------------
// Masks
// ---------------------------------------------------------------------------

inline Mask full_mask(int rows, int cols) {
  return Mask{rows, cols, std::vector<std::uint8_t>(static_cast<std::size_t>(rows) * cols, 1)};
}

inline Mask causal_mask(int t) {
  Mask m{t, t, std::vector<std::uint8_t>(static_cast<std::size_t>(t) * t, 0)};
  for (int i = 0; i < t; ++i)
    for (int j = 0; j <= i; ++j) m.allow[static_cast<std::size_t>(i) * t + j] = 1;
  return m;
}

// Mask for a predicting stream attending over [main_states ; own_states]
// stacked rows: position t sees main positions <= t plus its own slot.
inline Mask stream_mask(int t) {
  Mask m{t, 2 * t, std::vector<std::uint8_t>(static_cast<std::size_t>(t) * 2 * t, 0)};
  for (int i = 0; i < t; ++i) {
    for (int j = 0; j <= i; ++j) m.allow[static_cast<std::size_t>(i) * 2 * t + j] = 1;
    m.allow[static_cast<std::size_t>(i) * 2 * t + t + i] = 1;
  }
  return m;
}

inline Mask keys_mask(int rows, const std::vector<std::uint8_t>& key_valid) {
  const int cols = static_cast<int>(key_valid.size());
  Mask m{rows, cols, std::vector<std::uint8_t>(static_cast<std::size_t>(rows) * cols, 0)};
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m.allow[static_cast<std::size_t>(i) * cols + j] = key_valid[static_cast<std::size_t>(j)];
  return m;
}

// ---------------------------------------------------------------------------
// Building blocks
// ---------------------------------------------------------------------------

template <typename S>
TensorT<S> multihead_attention(const TensorT<S>& q_in, const TensorT<S>& kv_in, const Mask& mask,
                               const AttentionWeightsT<S>& w, int n_heads) {
  const int d = q_in.dim(1);
  const int dk = d / n_heads;
  auto q = matmul(q_in, w.wq);
  auto k = matmul(kv_in, w.wk);
  auto v = matmul(kv_in, w.wv);
  std::vector<TensorT<S>> heads;
  heads.reserve(static_cast<std::size_t>(n_heads));
  const S inv_sqrt_dk = S(1) / std::sqrt(S(dk));
  for (int h = 0; h < n_heads; ++h) {
    auto qh = slice_cols(q, h * dk, (h + 1) * dk);
    auto kh = slice_cols(k, h * dk, (h + 1) * dk);
    auto vh = slice_cols(v, h * dk, (h + 1) * dk);
    auto scores = scale(matmul(qh, transpose(kh)), inv_sqrt_dk);
    auto attn = softmax_masked(scores, mask);
    heads.push_back(matmul(attn, vh));
  }
  return matmul(concat(heads, 1), w.wo);
}

template <typename S>
TensorT<S> feed_forward(const TensorT<S>& x, const FfnWeightsT<S>& w) {
  return add_bias(matmul(gelu(add_bias(matmul(x, w.w1), w.b1)), w.w2), w.b2);
}

namespace detail {

inline std::vector<int> position_ids(int offset, int count) {
  std::vector<int> ids(static_cast<std::size_t>(count));
  std::iota(ids.begin(), ids.end(), offset);
  return ids;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Parameter initialization / registry
// ---------------------------------------------------------------------------

template <typename S>
ModelParamsT<S> ModelParamsT<S>::init(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 0.02);
  auto randn = [&](Shape shape) {
    std::vector<S> d(shape_numel(shape));
    for (auto& v : d) v = static_cast<S>(dist(rng));
    return TensorT<S>::leaf(std::move(shape), std::move(d), true);
  };
  auto zeros = [&](Shape shape) { return TensorT<S>::zeros(std::move(shape), true); };
  auto ones = [&](Shape shape) {
    std::vector<S> d(shape_numel(shape), S(1));
    return TensorT<S>::leaf(std::move(shape), std::move(d), true);
  };
  auto make_ln = [&] { return LayerNormParamsT<S>{ones({cfg.d_model}), zeros({cfg.d_model})}; };
  auto make_attn = [&] {
    return AttentionWeightsT<S>{randn({cfg.d_model, cfg.d_model}), randn({cfg.d_model, cfg.d_model}),
                                randn({cfg.d_model, cfg.d_model}), randn({cfg.d_model, cfg.d_model})};
  };
  auto make_ffn = [&] {
    return FfnWeightsT<S>{randn({cfg.d_model, cfg.d_ff}), zeros({cfg.d_ff}),
                          randn({cfg.d_ff, cfg.d_model}), zeros({cfg.d_model})};
  };

  ModelParamsT<S> p;
  p.config = cfg;
  p.tok_emb = randn({cfg.vocab_size, cfg.d_model});
  p.pos_emb = randn({cfg.max_len, cfg.d_model});
  p.stream_emb = randn({2, cfg.d_model});
  for (int i = 0; i < cfg.n_enc_layers; ++i)
    p.enc_layers.push_back(EncLayerT<S>{make_ln(), make_ln(), make_attn(), make_ffn()});
  for (int i = 0; i < cfg.n_dec_layers; ++i)
    p.dec_layers.push_back(
        DecLayerT<S>{make_ln(), make_ln(), make_ln(), make_attn(), make_attn(), make_ffn()});
  p.enc_final_ln = make_ln();
  p.dec_final_ln = make_ln();
  p.out_w = randn({cfg.d_model, cfg.vocab_size});
  p.out_b = zeros({cfg.vocab_size});
  return p;
}

template <typename S>
ModelParamsT<S> ModelParamsT<S>::clone() const {
  auto copy_tensor = [](const TensorT<S>& t) {
    return TensorT<S>::leaf(t.shape(), t.data(), t.requires_grad());
  };
  auto copy_ln = [&](const LayerNormParamsT<S>& ln) {
    return LayerNormParamsT<S>{copy_tensor(ln.gamma), copy_tensor(ln.beta)};
  };
  auto copy_attn = [&](const AttentionWeightsT<S>& a) {
    return AttentionWeightsT<S>{copy_tensor(a.wq), copy_tensor(a.wk), copy_tensor(a.wv),
                                copy_tensor(a.wo)};
  };
  auto copy_ffn = [&](const FfnWeightsT<S>& f) {
    return FfnWeightsT<S>{copy_tensor(f.w1), copy_tensor(f.b1), copy_tensor(f.w2), copy_tensor(f.b2)};
  };
  ModelParamsT out;
  out.config = config;
  out.tok_emb = copy_tensor(tok_emb);
  out.pos_emb = copy_tensor(pos_emb);
  out.stream_emb = copy_tensor(stream_emb);
  for (const auto& l : enc_layers)
    out.enc_layers.push_back(EncLayerT<S>{copy_ln(l.ln_attn), copy_ln(l.ln_ffn), copy_attn(l.attn),
                                          copy_ffn(l.ffn)});
  for (const auto& l : dec_layers)
    out.dec_layers.push_back(DecLayerT<S>{copy_ln(l.ln_self), copy_ln(l.ln_cross), copy_ln(l.ln_ffn),
                                          copy_attn(l.self_attn), copy_attn(l.cross_attn),
                                          copy_ffn(l.ffn)});
  out.enc_final_ln = copy_ln(enc_final_ln);
  out.dec_final_ln = copy_ln(dec_final_ln);
  out.out_w = copy_tensor(out_w);
  out.out_b = copy_tensor(out_b);
  return out;
}

template <typename S>
std::vector<std::pair<std::string, TensorT<S>*>> ModelParamsT<S>::named_params() {
  std::vector<std::pair<std::string, TensorT<S>*>> out;
  auto add = [&](const std::string& name, TensorT<S>& t) { out.emplace_back(name, &t); };
  auto add_ln = [&](const std::string& prefix, LayerNormParamsT<S>& ln) {
    add(prefix + ".gamma", ln.gamma);
    add(prefix + ".beta", ln.beta);
  };
  auto add_attn = [&](const std::string& prefix, AttentionWeightsT<S>& a) {
    add(prefix + ".wq", a.wq);
    add(prefix + ".wk", a.wk);
    add(prefix + ".wv", a.wv);
    add(prefix + ".wo", a.wo);
  };
  auto add_ffn = [&](const std::string& prefix, FfnWeightsT<S>& f) {
    add(prefix + ".w1", f.w1);
    add(prefix + ".b1", f.b1);
    add(prefix + ".w2", f.w2);
    add(prefix + ".b2", f.b2);
  };
  add("tok_emb", tok_emb);
  add("pos_emb", pos_emb);
  add("stream_emb", stream_emb);
  for (std::size_t i = 0; i < enc_layers.size(); ++i) {
    const std::string prefix = "enc." + std::to_string(i);
    add_ln(prefix + ".ln_attn", enc_layers[i].ln_attn);
    add_attn(prefix + ".attn", enc_layers[i].attn);
    add_ln(prefix + ".ln_ffn", enc_layers[i].ln_ffn);
    add_ffn(prefix + ".ffn", enc_layers[i].ffn);
  }
  add_ln("enc_final_ln", enc_final_ln);
  for (std::size_t i = 0; i < dec_layers.size(); ++i) {
    const std::string prefix = "dec." + std::to_string(i);
    add_ln(prefix + ".ln_self", dec_layers[i].ln_self);
    add_attn(prefix + ".self_attn", dec_layers[i].self_attn);
    add_ln(prefix + ".ln_cross", dec_layers[i].ln_cross);
    add_attn(prefix + ".cross_attn", dec_layers[i].cross_attn);
    add_ln(prefix + ".ln_ffn", dec_layers[i].ln_ffn);
    add_ffn(prefix + ".ffn", dec_layers[i].ffn);
  }
  add_ln("dec_final_ln", dec_final_ln);
  add("out_w", out_w);
  add("out_b", out_b);
  return out;
}

template <typename S>
std::vector<TensorT<S>*> ModelParamsT<S>::params() {
  std::vector<TensorT<S>*> out;
  for (auto& [name, t] : named_params()) out.push_back(t);
  return out;
}

// ---------------------------------------------------------------------------
// Encoder
// ---------------------------------------------------------------------------

namespace detail {

template <typename S>
TensorT<S> encoder_stack(TensorT<S> x, const std::vector<std::uint8_t>& key_valid,
                         const ModelParamsT<S>& p) {
  const int t = x.dim(0);
  const Mask attn_mask = keys_mask(t, key_valid);
  for (const auto& layer : p.enc_layers) {
    auto xn = layer_norm(x, layer.ln_attn.gamma, layer.ln_attn.beta);
    x = add(x, multihead_attention(xn, xn, attn_mask, layer.attn, p.config.n_heads));
    auto fn = layer_norm(x, layer.ln_ffn.gamma, layer.ln_ffn.beta);
    x = add(x, feed_forward(fn, layer.ffn));
  }
  return layer_norm(x, p.enc_final_ln.gamma, p.enc_final_ln.beta);
}

}  // namespace detail

// Encodes a source sequence; PAD positions are masked out of attention.
// Overlength input is truncated to max_len.
template <typename S>
EncOutT<S> encode(const TokenSeq& src, const ModelParamsT<S>& p) {
  TokenSeq ids = src;
  if (static_cast<int>(ids.size()) > p.config.max_len) ids.resize(static_cast<std::size_t>(p.config.max_len));
  if (ids.empty()) throw ContractError("encode: empty source");
  const int t = static_cast<int>(ids.size());
  auto x = add(embed_lookup(p.tok_emb, ids), embed_lookup(p.pos_emb, detail::position_ids(0, t)));
  std::vector<std::uint8_t> key_valid(static_cast<std::size_t>(t));
  for (int i = 0; i < t; ++i) key_valid[static_cast<std::size_t>(i)] = ids[static_cast<std::size_t>(i)] != Vocab::kPad;
  return EncOutT<S>{detail::encoder_stack(std::move(x), key_valid, p), std::move(key_valid)};
}

// Encoder over [prefix_states : embedded tokens]: the prefix rows are raw
// d_model vectors (e.g. decoder states fed back from another model) and get
// positions 0..n-1; the token embeddings continue the position index.
template <typename S>
EncOutT<S> encode_prefixed(const TensorT<S>& prefix_states, const TokenSeq& tokens,
                           const ModelParamsT<S>& p) {
  const int n_prefix = prefix_states.numel() == 0 ? 0 : prefix_states.dim(0);
  if (n_prefix > 0 && prefix_states.dim(1) != p.config.d_model)
    throw ContractError("encode_prefixed: prefix width " + std::to_string(prefix_states.dim(1)) +
                        " != d_model " + std::to_string(p.config.d_model));
  TokenSeq ids = tokens;
  const int room = p.config.max_len - n_prefix;
  if (room <= 0) throw ConfigError("encode_prefixed: prefix alone exceeds max_len");
  if (static_cast<int>(ids.size()) > room) ids.resize(static_cast<std::size_t>(room));
  if (n_prefix == 0 && ids.empty()) throw ContractError("encode_prefixed: empty input");
  const int t = static_cast<int>(ids.size());

  TensorT<S> x;
  if (t > 0) {
    auto tok_block =
        add(embed_lookup(p.tok_emb, ids), embed_lookup(p.pos_emb, detail::position_ids(n_prefix, t)));
    if (n_prefix > 0) {
      auto prefix_block =
          add(prefix_states, embed_lookup(p.pos_emb, detail::position_ids(0, n_prefix)));
      x = concat<S>({prefix_block, tok_block}, 0);
    } else {
      x = tok_block;
    }
  } else {
    x = add(prefix_states, embed_lookup(p.pos_emb, detail::position_ids(0, n_prefix)));
  }
  std::vector<std::uint8_t> key_valid(static_cast<std::size_t>(n_prefix + t), 1);
  for (int i = 0; i < t; ++i)
    key_valid[static_cast<std::size_t>(n_prefix + i)] = ids[static_cast<std::size_t>(i)] != Vocab::kPad;
  return EncOutT<S>{detail::encoder_stack(std::move(x), key_valid, p), std::move(key_valid)};
}

// ---------------------------------------------------------------------------
// Decoder with two predicting streams
// ---------------------------------------------------------------------------

// Forward over explicit decoder input ids (already shifted; position 0 is
// normally BOS). Main stream attends causally; each predicting stream at t
// attends to main states <= t plus its own slot, and never feeds back into
// the main stream.
template <typename S>
DecodeResultT<S> decode_forward(const TokenSeq& dec_input, const EncOutT<S>& enc,
                                const ModelParamsT<S>& p) {
  if (dec_input.empty()) throw ContractError("decode_forward: empty decoder input");
  TokenSeq ids = dec_input;
  if (static_cast<int>(ids.size()) > p.config.max_len) ids.resize(static_cast<std::size_t>(p.config.max_len));
  const int t = static_cast<int>(ids.size());

  auto pos = embed_lookup(p.pos_emb, detail::position_ids(0, t));
  auto h = add(embed_lookup(p.tok_emb, ids), pos);
  auto g = add(embed_lookup(p.stream_emb, std::vector<int>(static_cast<std::size_t>(t), 0)), pos);
  auto s = add(embed_lookup(p.stream_emb, std::vector<int>(static_cast<std::size_t>(t), 1)), pos);

  const Mask causal = causal_mask(t);
  const Mask stream = stream_mask(t);
  const Mask cross = keys_mask(t, enc.key_valid);

  DecoderStatesT<S> states;
  for (const auto& layer : p.dec_layers) {
    auto hn = layer_norm(h, layer.ln_self.gamma, layer.ln_self.beta);
    auto gn = layer_norm(g, layer.ln_self.gamma, layer.ln_self.beta);
    auto sn = layer_norm(s, layer.ln_self.gamma, layer.ln_self.beta);
    h = add(h, multihead_attention(hn, hn, causal, layer.self_attn, p.config.n_heads));
    g = add(g, multihead_attention(gn, concat<S>({hn, gn}, 0), stream, layer.self_attn, p.config.n_heads));
    s = add(s, multihead_attention(sn, concat<S>({hn, sn}, 0), stream, layer.self_attn, p.config.n_heads));

    hn = layer_norm(h, layer.ln_cross.gamma, layer.ln_cross.beta);
    gn = layer_norm(g, layer.ln_cross.gamma, layer.ln_cross.beta);
    sn = layer_norm(s, layer.ln_cross.gamma, layer.ln_cross.beta);
    h = add(h, multihead_attention(hn, enc.states, cross, layer.cross_attn, p.config.n_heads));
    g = add(g, multihead_attention(gn, enc.states, cross, layer.cross_attn, p.config.n_heads));
    s = add(s, multihead_attention(sn, enc.states, cross, layer.cross_attn, p.config.n_heads));

    hn = layer_norm(h, layer.ln_ffn.gamma, layer.ln_ffn.beta);
    gn = layer_norm(g, layer.ln_ffn.gamma, layer.ln_ffn.beta);
    sn = layer_norm(s, layer.ln_ffn.gamma, layer.ln_ffn.beta);
    h = add(h, feed_forward(hn, layer.ffn));
    g = add(g, feed_forward(gn, layer.ffn));
    s = add(s, feed_forward(sn, layer.ffn));

    states.main.push_back(h);
    states.stream1.push_back(g);
    states.stream2.push_back(s);
  }
  states.final_main = layer_norm(h, p.dec_final_ln.gamma, p.dec_final_ln.beta);
  auto g_out = layer_norm(g, p.dec_final_ln.gamma, p.dec_final_ln.beta);
  auto s_out = layer_norm(s, p.dec_final_ln.gamma, p.dec_final_ln.beta);

  DecodeResultT<S> out;
  out.logits1 = add_bias(matmul(g_out, p.out_w), p.out_b);
  out.logits2 = add_bias(matmul(s_out, p.out_w), p.out_b);
  out.states = std::move(states);
  return out;
}

// Teacher-forced pass: decoder input is tgt shifted right behind BOS, so
// stream-1 logits at position t score tgt[t] and stream-2 logits score
// tgt[t+1]. tgt longer than max_len is truncated.
template <typename S>
DecodeResultT<S> decode_train(const TokenSeq& tgt, const EncOutT<S>& enc, const ModelParamsT<S>& p) {
  if (tgt.empty()) throw ContractError("decode_train: empty target");
  TokenSeq trimmed = tgt;
  if (static_cast<int>(trimmed.size()) > p.config.max_len)
    trimmed.resize(static_cast<std::size_t>(p.config.max_len));
  TokenSeq dec_input(trimmed.size());
  dec_input[0] = Vocab::kBos;
  std::copy(trimmed.begin(), trimmed.end() - 1, dec_input.begin() + 1);
  return decode_forward(dec_input, enc, p);
}

// w1 * NLL(stream1 vs next token) + w2 * NLL(stream2 vs token after next),
// each normalized by its own valid-position count. A one-token target has no
// stream-2 positions, which contribute zero.
template <typename S>
TensorT<S> stream_loss(const TensorT<S>& logits1, const TensorT<S>& logits2, const TokenSeq& tgt,
                       const std::array<double, 2>& weights) {
  if (std::abs(weights[0] + weights[1] - 1.0) > 1e-9)
    throw ConfigError("stream_loss: weights must sum to 1");
  const int t = logits1.dim(0);
  if (static_cast<int>(tgt.size()) != t)
    throw ShapeError("stream_loss: target length " + std::to_string(tgt.size()) + " vs logits rows " +
                     std::to_string(t));
  std::vector<int> labels1(tgt.begin(), tgt.end());
  std::vector<int> labels2(static_cast<std::size_t>(t), -1);
  for (int i = 0; i + 1 < t; ++i) labels2[static_cast<std::size_t>(i)] = tgt[static_cast<std::size_t>(i) + 1];
  auto l1 = cross_entropy(logits1, labels1, -1);
  auto l2 = cross_entropy(logits2, labels2, -1);
  return add(scale(l1, S(weights[0])), scale(l2, S(weights[1])));
}

// ---------------------------------------------------------------------------
// Generation (stream-1 logits only; the predicting streams are a training
// device, inference uses the next-token head)
// ---------------------------------------------------------------------------

template <typename S>
decoding::StepScorer make_step_scorer(const EncOutT<S>& enc, const ModelParamsT<S>& p) {
  return [&enc, &p](const TokenSeq& prefix) {
    NoGradGuard ng;
    TokenSeq dec_input;
    dec_input.reserve(prefix.size() + 1);
    dec_input.push_back(Vocab::kBos);
    dec_input.insert(dec_input.end(), prefix.begin(), prefix.end());
    auto result = decode_forward(dec_input, enc, p);
    const int t = result.logits1.dim(0);
    const int v = result.logits1.dim(1);
    std::vector<double> row(static_cast<std::size_t>(v));
    for (int j = 0; j < v; ++j)
      row[static_cast<std::size_t>(j)] =
          static_cast<double>(result.logits1.data()[static_cast<std::size_t>(t - 1) * v + j]);
    return row;
  };
}

template <typename S>
TokenSeq generate_greedy(const TokenSeq& src, const ModelParamsT<S>& p, int max_new) {
  NoGradGuard ng;
  auto enc = encode(src, p);
  const int budget = std::min(max_new, p.config.max_len - 1);
  return decoding::greedy(make_step_scorer(enc, p), Vocab::kEos, budget);
}

template <typename S>
TokenSeq generate_beam(const TokenSeq& src, const ModelParamsT<S>& p, int beam, int max_new,
                       double length_penalty) {
  NoGradGuard ng;
  auto enc = encode(src, p);
  const int budget = std::min(max_new, p.config.max_len - 1);
  return decoding::beam(make_step_scorer(enc, p), Vocab::kEos, budget, beam, length_penalty);
}

using ModelParams = ModelParamsT<float>;
using EncOut = EncOutT<float>;
using DecoderStates = DecoderStatesT<float>;
using DecodeResult = DecodeResultT<float>;

}  // namespace qag
