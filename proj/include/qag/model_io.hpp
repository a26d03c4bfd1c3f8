#pragma once

#include <cstdint>
#include <string>

#include "qag/checkpoint.hpp"
#include "qag/transformer.hpp"

namespace qag {

inline CheckpointHeader config_header(const ModelConfig& cfg) {
  CheckpointHeader h;
  h.kv["d_model"] = std::to_string(cfg.d_model);
  h.kv["n_heads"] = std::to_string(cfg.n_heads);
  h.kv["n_enc_layers"] = std::to_string(cfg.n_enc_layers);
  h.kv["n_dec_layers"] = std::to_string(cfg.n_dec_layers);
  h.kv["d_ff"] = std::to_string(cfg.d_ff);
  h.kv["max_len"] = std::to_string(cfg.max_len);
  h.kv["vocab_size"] = std::to_string(cfg.vocab_size);
  h.kv["stream_w1"] = std::to_string(cfg.stream_loss_weights[0]);
  h.kv["stream_w2"] = std::to_string(cfg.stream_loss_weights[1]);
  return h;
}

inline ModelConfig config_from_header(const CheckpointHeader& h) {
  ModelConfig cfg;
  cfg.d_model = std::stoi(h.get("d_model"));
  cfg.n_heads = std::stoi(h.get("n_heads"));
  cfg.n_enc_layers = std::stoi(h.get("n_enc_layers"));
  cfg.n_dec_layers = std::stoi(h.get("n_dec_layers"));
  cfg.d_ff = std::stoi(h.get("d_ff"));
  cfg.max_len = std::stoi(h.get("max_len"));
  cfg.vocab_size = std::stoi(h.get("vocab_size"));
  cfg.stream_loss_weights[0] = std::stod(h.get("stream_w1"));
  cfg.stream_loss_weights[1] = std::stod(h.get("stream_w2"));
  cfg.validate();
  return cfg;
}

template <typename S>
void save_model(const std::string& base, ModelParamsT<S>& params) {
  auto named = params.named_params();
  save_checkpoint<S>(base, named, config_header(params.config));
}

template <typename S>
ModelParamsT<S> load_model(const std::string& base) {
  auto cfg = config_from_header(read_checkpoint_header(base));
  auto params = ModelParamsT<S>::init(cfg, 0);
  auto named = params.named_params();
  load_checkpoint<S>(base, named);
  return params;
}

template <typename S>
std::uint64_t model_checksum(ModelParamsT<S>& params) {
  auto named = params.named_params();
  return params_checksum<S>(named);
}

}  // namespace qag
