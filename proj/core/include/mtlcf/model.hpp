#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mtlcf/tensor.hpp"

namespace mtlcf {

struct ModelConfig {
  std::size_t input_dim = 24;   // stacked feature dimension
  std::size_t lstm_layers = 2;
  std::size_t lstm_cells = 32;  // per direction
  std::size_t relu_units = 64;
  std::size_t vocab_size = 12;  // includes the blank at index 0
  double init_low = -0.05;
  double init_high = 0.05;
  std::uint64_t seed = 1;

  // Full-size ASR preset: 240-d stacked features, 3 Bi-LSTM layers of 320
  // cells, 1024 ReLU units, 46 outputs.
  static ModelConfig asr_preset();

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct GateParams {
  Tensor wx;  // [in x H]
  Tensor wh;  // [H x H]
  Tensor b;   // [1 x H]
};

// gate order: input, forget, cell, output
struct LstmDirection {
  std::array<GateParams, 4> gates;
};

struct LstmLayer {
  LstmDirection fwd;
  LstmDirection bwd;
};

struct DenseParams {
  Tensor w;
  Tensor b;
};

// Stacked bidirectional LSTM, ReLU dense layer, linear layer, log-softmax
// output. Owns all trainable tensors.
class ModelParams {
 public:
  ModelParams() = default;

  const ModelConfig& config() const { return config_; }
  bool frozen() const { return frozen_; }

  // All parameter tensors in a fixed canonical order.
  std::vector<Tensor> parameters() const;
  std::size_t parameter_count() const;

  // [T x input_dim] -> [T x vocab_size] per-frame log-probabilities.
  Tensor forward(const Tensor& features) const;

  // Per-direction hidden state sequences of one Bi-LSTM layer, both [T x H]
  // in time order. `input` is the layer's input sequence.
  struct BiLstmTrace {
    Tensor fwd;
    Tensor bwd;
  };
  BiLstmTrace run_layer(std::size_t layer, const Tensor& input) const;

  // Value-equal, storage-disjoint deep copy.
  ModelParams clone() const;

  // frozen == true iff every tensor has requires_grad == false.
  void set_frozen(bool frozen);

  void zero_grads();

  friend ModelParams init_model(const ModelConfig& config);
  friend ModelParams deserialize_params(const std::vector<std::uint8_t>& bytes);

  // overwrite backward-direction weights with the forward-direction ones
  // (used to probe time-reversal symmetry)
  void mirror_directions();

 private:
  ModelConfig config_;
  std::vector<LstmLayer> layers_;
  DenseParams relu_layer_;
  DenseParams out_layer_;
  bool frozen_ = false;

  Tensor run_direction(const LstmDirection& dir, const Tensor& input, bool reverse) const;
  void collect(std::vector<Tensor>& out) const;
};

// Every weight drawn uniformly from [init_low, init_high] with the config's
// seeded generator; bit-reproducible per seed.
ModelParams init_model(const ModelConfig& config);

// Byte-exact round trip: config + frozen flag + all tensors.
std::vector<std::uint8_t> serialize_params(const ModelParams& params);
ModelParams deserialize_params(const std::vector<std::uint8_t>& bytes);
void save_checkpoint(const ModelParams& params, const std::string& path);
ModelParams load_checkpoint(const std::string& path);

// FNV-1a over the serialized bytes.
std::uint64_t params_fingerprint(const ModelParams& params);

}  // namespace mtlcf
