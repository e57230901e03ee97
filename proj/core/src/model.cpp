#include "mtlcf/model.hpp"

#include <cstring>
#include <fstream>
#include <random>

#include "mtlcf/errors.hpp"

namespace mtlcf {

namespace {

constexpr char kMagic[8] = {'M', 'T', 'L', 'C', 'F', 'M', 'D', '1'};

enum Gate { kInput = 0, kForget = 1, kCell = 2, kOutput = 3 };

void append_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void append_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void append_f64(std::vector<std::uint8_t>& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  append_u64(out, bits);
}

struct Reader {
  const std::vector<std::uint8_t>& buf;
  std::size_t pos = 0;

  void need(std::size_t n) {
    if (pos + n > buf.size()) throw std::runtime_error("checkpoint: truncated data");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[pos++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[pos++]) << (8 * i);
    return v;
  }
  double f64() {
    std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
};

}  // namespace

ModelConfig ModelConfig::asr_preset() {
  ModelConfig c;
  c.input_dim = 240;
  c.lstm_layers = 3;
  c.lstm_cells = 320;
  c.relu_units = 1024;
  c.vocab_size = 46;
  return c;
}

void ModelConfig::validate() const {
  if (input_dim == 0 || lstm_layers == 0 || lstm_cells == 0 || relu_units == 0)
    throw ConfigError("model config: dimensions must be positive");
  if (vocab_size < 2)
    throw ConfigError("model config: vocab_size must be >= 2 (one symbol plus blank)");
  if (!(init_low < init_high))
    throw ConfigError("model config: init_low must be < init_high");
}

ModelParams init_model(const ModelConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> dist(config.init_low, config.init_high);

  auto draw = [&rng, &dist](std::size_t r, std::size_t c) {
    std::vector<double> v(r * c);
    for (double& x : v) x = dist(rng);
    return Tensor::from_values({r, c}, std::move(v), true);
  };

  ModelParams p;
  p.config_ = config;
  const std::size_t h = config.lstm_cells;
  std::size_t in_dim = config.input_dim;
  for (std::size_t l = 0; l < config.lstm_layers; ++l) {
    LstmLayer layer;
    for (LstmDirection* dir : {&layer.fwd, &layer.bwd}) {
      for (auto& gate : dir->gates) {
        gate.wx = draw(in_dim, h);
        gate.wh = draw(h, h);
        gate.b = draw(1, h);
      }
    }
    p.layers_.push_back(std::move(layer));
    in_dim = 2 * h;
  }
  p.relu_layer_.w = draw(in_dim, config.relu_units);
  p.relu_layer_.b = draw(1, config.relu_units);
  p.out_layer_.w = draw(config.relu_units, config.vocab_size);
  p.out_layer_.b = draw(1, config.vocab_size);
  return p;
}

void ModelParams::collect(std::vector<Tensor>& out) const {
  for (const LstmLayer& layer : layers_) {
    for (const LstmDirection* dir : {&layer.fwd, &layer.bwd}) {
      for (const GateParams& g : dir->gates) {
        out.push_back(g.wx);
        out.push_back(g.wh);
        out.push_back(g.b);
      }
    }
  }
  out.push_back(relu_layer_.w);
  out.push_back(relu_layer_.b);
  out.push_back(out_layer_.w);
  out.push_back(out_layer_.b);
}

std::vector<Tensor> ModelParams::parameters() const {
  std::vector<Tensor> out;
  out.reserve(layers_.size() * 24 + 4);
  collect(out);
  return out;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor& t : parameters()) n += t.size();
  return n;
}

Tensor ModelParams::run_direction(const LstmDirection& dir, const Tensor& input,
                                  bool reverse) const {
  const std::size_t t_len = input.rows();
  const std::size_t h_dim = config_.lstm_cells;
  Tensor h = Tensor::zeros({1, h_dim});
  Tensor c = Tensor::zeros({1, h_dim});
  std::vector<Tensor> outputs(t_len);
  for (std::size_t step = 0; step < t_len; ++step) {
    const std::size_t t = reverse ? t_len - 1 - step : step;
    Tensor xt = slice_row(input, t);
    auto gate_pre = [&](Gate g) {
      const GateParams& gp = dir.gates[g];
      return add(add(matmul(xt, gp.wx), matmul(h, gp.wh)), gp.b);
    };
    Tensor i = sigmoid(gate_pre(kInput));
    Tensor f = sigmoid(gate_pre(kForget));
    Tensor g = tanh(gate_pre(kCell));
    Tensor o = sigmoid(gate_pre(kOutput));
    c = add(mul(f, c), mul(i, g));
    h = mul(o, tanh(c));
    outputs[t] = h;
  }
  return stack_rows(outputs);
}

ModelParams::BiLstmTrace ModelParams::run_layer(std::size_t layer, const Tensor& input) const {
  if (layer >= layers_.size()) throw std::invalid_argument("run_layer: layer out of range");
  return {run_direction(layers_[layer].fwd, input, false),
          run_direction(layers_[layer].bwd, input, true)};
}

Tensor ModelParams::forward(const Tensor& features) const {
  if (features.shape().size() != 2 || features.cols() != config_.input_dim)
    throw std::invalid_argument("forward: expected [T x " + std::to_string(config_.input_dim) +
                                "], got " + shape_to_string(features.shape()));
  Tensor x = features;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    BiLstmTrace trace = run_layer(l, x);
    x = concat_cols(trace.fwd, trace.bwd);
  }
  Tensor hidden = relu(add_rowvec(matmul(x, relu_layer_.w), relu_layer_.b));
  Tensor logits = add_rowvec(matmul(hidden, out_layer_.w), out_layer_.b);
  return log_softmax(logits);
}

ModelParams ModelParams::clone() const {
  ModelParams copy;
  copy.config_ = config_;
  copy.frozen_ = frozen_;
  copy.layers_.reserve(layers_.size());
  for (const LstmLayer& layer : layers_) {
    LstmLayer out;
    for (std::size_t d = 0; d < 2; ++d) {
      const LstmDirection& src = d == 0 ? layer.fwd : layer.bwd;
      LstmDirection& dst = d == 0 ? out.fwd : out.bwd;
      for (std::size_t g = 0; g < 4; ++g) {
        dst.gates[g].wx = src.gates[g].wx.clone();
        dst.gates[g].wh = src.gates[g].wh.clone();
        dst.gates[g].b = src.gates[g].b.clone();
      }
    }
    copy.layers_.push_back(std::move(out));
  }
  copy.relu_layer_ = {relu_layer_.w.clone(), relu_layer_.b.clone()};
  copy.out_layer_ = {out_layer_.w.clone(), out_layer_.b.clone()};
  return copy;
}

void ModelParams::set_frozen(bool frozen) {
  frozen_ = frozen;
  for (Tensor& t : parameters()) t.set_requires_grad(!frozen);
}

void ModelParams::zero_grads() {
  for (Tensor& t : parameters()) t.zero_grad();
}

void ModelParams::mirror_directions() {
  for (LstmLayer& layer : layers_) {
    for (std::size_t g = 0; g < 4; ++g) {
      auto copy_values = [](const Tensor& src, Tensor& dst) {
        auto s = src.values();
        auto d = dst.values_mut();
        std::copy(s.begin(), s.end(), d.begin());
      };
      copy_values(layer.fwd.gates[g].wx, layer.bwd.gates[g].wx);
      copy_values(layer.fwd.gates[g].wh, layer.bwd.gates[g].wh);
      copy_values(layer.fwd.gates[g].b, layer.bwd.gates[g].b);
    }
  }
}

std::vector<std::uint8_t> serialize_params(const ModelParams& params) {
  const ModelConfig& c = params.config();
  std::vector<std::uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 8);
  append_u32(out, static_cast<std::uint32_t>(c.input_dim));
  append_u32(out, static_cast<std::uint32_t>(c.lstm_layers));
  append_u32(out, static_cast<std::uint32_t>(c.lstm_cells));
  append_u32(out, static_cast<std::uint32_t>(c.relu_units));
  append_u32(out, static_cast<std::uint32_t>(c.vocab_size));
  append_f64(out, c.init_low);
  append_f64(out, c.init_high);
  append_u64(out, c.seed);
  out.push_back(params.frozen() ? 1 : 0);

  const std::vector<Tensor> tensors = params.parameters();
  append_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const Tensor& t : tensors) {
    append_u32(out, static_cast<std::uint32_t>(t.rows()));
    append_u32(out, static_cast<std::uint32_t>(t.cols()));
    for (double v : t.values()) append_f64(out, v);
  }
  return out;
}

ModelParams deserialize_params(const std::vector<std::uint8_t>& bytes) {
  Reader r{bytes};
  r.need(8);
  if (std::memcmp(bytes.data(), kMagic, 8) != 0)
    throw std::runtime_error("checkpoint: bad magic");
  r.pos = 8;

  ModelConfig c;
  c.input_dim = r.u32();
  c.lstm_layers = r.u32();
  c.lstm_cells = r.u32();
  c.relu_units = r.u32();
  c.vocab_size = r.u32();
  c.init_low = r.f64();
  c.init_high = r.f64();
  c.seed = r.u64();
  r.need(1);
  const bool frozen = bytes[r.pos++] != 0;

  ModelParams p = init_model(c);  // establishes the canonical tensor layout
  const std::uint32_t count = r.u32();
  std::vector<Tensor> tensors = p.parameters();
  if (count != tensors.size()) throw std::runtime_error("checkpoint: tensor count mismatch");
  for (Tensor& t : tensors) {
    const std::uint32_t rows = r.u32();
    const std::uint32_t cols = r.u32();
    if (rows != t.rows() || cols != t.cols())
      throw std::runtime_error("checkpoint: tensor shape mismatch");
    auto dst = t.values_mut();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = r.f64();
  }
  p.set_frozen(frozen);
  return p;
}

void save_checkpoint(const ModelParams& params, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  const auto bytes = serialize_params(params);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("short write: " + path);
}

ModelParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInput("checkpoint not found: " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return deserialize_params(bytes);
}

std::uint64_t params_fingerprint(const ModelParams& params) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (std::uint8_t b : serialize_params(params)) {
    h ^= b;
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace mtlcf
