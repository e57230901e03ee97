#include "mtlcf/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "mtlcf/errors.hpp"

namespace mtlcf {

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t x = a ^ (b + 0x9E3779B97F4A7C15ULL + (a << 6) + (a >> 2));
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// class prototypes are a fixed function of the symbol so that every domain
// and every seed share the same base geometry
std::vector<double> base_prototype(int symbol, int dim) {
  std::mt19937_64 rng(mix(0xBA5E, static_cast<std::uint64_t>(symbol)));
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> v(dim);
  for (double& x : v) x = gauss(rng);
  return v;
}

// Shift of length `magnitude` pointing from this symbol's prototype toward
// the next symbol's (cyclic). The shifted classes land in the margins of the
// original ones, so the two domains genuinely compete for decision regions.
std::vector<double> domain_shift(int symbol, int vocab_size, int dim, double magnitude) {
  std::vector<double> v(dim, 0.0);
  if (magnitude == 0.0) return v;
  const int next = symbol + 1 < vocab_size ? symbol + 1 : 1;
  const std::vector<double> own = base_prototype(symbol, dim);
  const std::vector<double> toward = base_prototype(next, dim);
  double norm = 0.0;
  for (int d = 0; d < dim; ++d) {
    v[d] = toward[d] - own[d];
    norm += v[d] * v[d];
  }
  norm = std::sqrt(norm);
  for (double& x : v) x *= magnitude / norm;
  return v;
}

std::vector<FeatureSequence> gen_utterances(const DomainSpec& spec, std::size_t count,
                                            std::uint64_t seed,
                                            const std::vector<std::vector<double>>& prototypes) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> len_dist(spec.utterance_len_min, spec.utterance_len_max);
  std::uniform_int_distribution<int> sym_dist(1, spec.vocab_size - 1);
  std::uniform_int_distribution<int> fps_dist(spec.frames_per_symbol_min,
                                              spec.frames_per_symbol_max);
  std::normal_distribution<double> noise(0.0, spec.noise_sigma);
  const int dim = spec.raw_feature_dim;

  std::vector<FeatureSequence> out;
  out.reserve(count);
  for (std::size_t u = 0; u < count; ++u) {
    const int len = len_dist(rng);
    LabelSequence labels(len);
    for (int& s : labels) s = sym_dist(rng);

    std::vector<int> frames_per(len);
    std::size_t total = 0;
    for (int& n : frames_per) {
      n = fps_dist(rng);
      total += static_cast<std::size_t>(n);
    }
    // keep the utterance CTC-feasible after decimation
    const std::size_t needed = ctc_min_frames(labels);
    std::size_t bump = 0;
    while ((total + kLfrDecimation - 1) / kLfrDecimation < needed) {
      frames_per[bump % frames_per.size()] += 1;
      ++bump;
      ++total;
    }

    std::vector<double> values(total * dim);
    std::size_t t = 0;
    for (int s = 0; s < len; ++s) {
      const std::vector<double>& proto = prototypes[labels[s]];
      for (int f = 0; f < frames_per[s]; ++f, ++t)
        for (int d = 0; d < dim; ++d)
          values[t * dim + d] = proto[d] + noise(rng);
    }
    FeatureSequence seq;
    seq.frames = Tensor::from_values({total, static_cast<std::size_t>(dim)}, std::move(values));
    seq.labels = std::move(labels);
    seq.domain_id = spec.domain_id;
    out.push_back(std::move(seq));
  }
  return out;
}

void append_fnv(std::uint64_t& h, const void* data, std::size_t n) {
  const auto* bytes = static_cast<const std::uint8_t*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= bytes[i];
    h *= 0x100000001B3ULL;
  }
}

}  // namespace

void DomainSpec::validate() const {
  if (vocab_size < 2) throw ConfigError("domain spec: vocab_size must be >= 2");
  if (raw_feature_dim < 1) throw ConfigError("domain spec: raw_feature_dim must be positive");
  if (frames_per_symbol_min < 1 || frames_per_symbol_max < frames_per_symbol_min)
    throw ConfigError("domain spec: invalid frames_per_symbol range");
  if (utterance_len_min < 1 || utterance_len_max < utterance_len_min)
    throw ConfigError("domain spec: invalid utterance_length range");
  if (!(noise_sigma > 0.0)) throw ConfigError("domain spec: noise_sigma must be positive");
  if (train_utterances < 1 || dev_utterances < 1 || test_utterances < 1)
    throw ConfigError("domain spec: split sizes must be positive");
}

DatasetSplit gen_domain(const DomainSpec& spec) {
  spec.validate();
  std::vector<std::vector<double>> prototypes(spec.vocab_size);
  for (int s = 1; s < spec.vocab_size; ++s) {
    prototypes[s] = base_prototype(s, spec.raw_feature_dim);
    const auto shift =
        domain_shift(s, spec.vocab_size, spec.raw_feature_dim, spec.prototype_shift);
    for (int d = 0; d < spec.raw_feature_dim; ++d) prototypes[s][d] += shift[d];
  }
  // disjoint by construction: one seeded stream per split
  DatasetSplit split;
  split.train = gen_utterances(spec, spec.train_utterances, mix(spec.seed, 0), prototypes);
  split.dev = gen_utterances(spec, spec.dev_utterances, mix(spec.seed, 1), prototypes);
  split.test = gen_utterances(spec, spec.test_utterances, mix(spec.seed, 2), prototypes);
  return split;
}

Tensor stack_lfr(const Tensor& frames, std::size_t left_context, std::size_t decimation) {
  if (frames.shape().size() != 2)
    throw std::invalid_argument("stack_lfr: frames must be [T x F]");
  if (decimation == 0) throw std::invalid_argument("stack_lfr: decimation must be positive");
  const std::size_t t_raw = frames.rows();
  const std::size_t f = frames.cols();
  const std::size_t window = left_context + 1;
  const std::size_t t_out = (t_raw + decimation - 1) / decimation;
  const auto src = frames.values();

  std::vector<double> out(t_out * window * f);
  for (std::size_t k = 0; k < t_out; ++k) {
    const std::ptrdiff_t current = static_cast<std::ptrdiff_t>(k * decimation);
    for (std::size_t w = 0; w < window; ++w) {
      // oldest context first, current frame last; clamp below at frame 0
      std::ptrdiff_t idx = current - static_cast<std::ptrdiff_t>(left_context - w);
      if (idx < 0) idx = 0;
      std::memcpy(&out[(k * window + w) * f], &src[static_cast<std::size_t>(idx) * f],
                  f * sizeof(double));
    }
  }
  return Tensor::from_values({t_out, window * f}, std::move(out));
}

std::vector<std::vector<std::size_t>> make_batches(
    const std::vector<FeatureSequence>& split, std::size_t m, std::uint64_t seed) {
  if (split.empty()) throw std::invalid_argument("make_batches: empty split");
  if (m < 1) throw std::invalid_argument("make_batches: m must be >= 1");
  std::vector<std::size_t> order(split.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&split](std::size_t a, std::size_t b) {
    return split[a].frames.rows() < split[b].frames.rows();
  });
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < order.size(); start += m) {
    const std::size_t end = std::min(start + m, order.size());
    batches.emplace_back(order.begin() + start, order.begin() + end);
  }
  std::mt19937_64 rng(seed);
  std::shuffle(batches.begin(), batches.end(), rng);
  return batches;
}

BatchStream::BatchStream(const std::vector<FeatureSequence>& split, std::size_t m,
                         std::uint64_t seed, Refill mode)
    : split_(&split), m_(m), rng_(seed), mode_(mode) {
  if (split.empty()) throw std::invalid_argument("BatchStream: empty split");
  if (m < 1) throw std::invalid_argument("BatchStream: m must be >= 1");
  batches_per_pass_ = (split.size() + m - 1) / m;
  refill();
}

void BatchStream::refill() {
  if (mode_ == Refill::reshuffle) {
    queue_ = make_batches(*split_, m_, rng_());
  } else {
    // draw with replacement, rounded up to whole batches so every step
    // receives exactly m utterances; batch in length-sorted order as usual
    std::uniform_int_distribution<std::size_t> pick(0, split_->size() - 1);
    std::vector<std::size_t> sampled(batches_per_pass_ * m_);
    for (std::size_t& i : sampled) i = pick(rng_);
    std::stable_sort(sampled.begin(), sampled.end(), [this](std::size_t a, std::size_t b) {
      return (*split_)[a].frames.rows() < (*split_)[b].frames.rows();
    });
    queue_.clear();
    for (std::size_t start = 0; start < sampled.size(); start += m_) {
      const std::size_t end = std::min(start + m_, sampled.size());
      queue_.emplace_back(sampled.begin() + start, sampled.begin() + end);
    }
    std::shuffle(queue_.begin(), queue_.end(), rng_);
  }
  cursor_ = 0;
}

std::vector<std::size_t> BatchStream::next() {
  if (cursor_ >= queue_.size()) refill();
  return queue_[cursor_++];
}

void save_split_file(const std::vector<FeatureSequence>& utterances, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write dataset file: " + path);
  out << "mtlcf-dataset 1\n";
  char buf[32];
  for (const FeatureSequence& u : utterances) {
    out << u.domain_id << ' ' << u.labels.size();
    for (int s : u.labels) out << ' ' << s;
    out << ' ' << u.frames.rows() << ' ' << u.frames.cols();
    for (double v : u.frames.values()) {
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      out << ' ' << buf;
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("short write: " + path);
}

std::vector<FeatureSequence> load_split_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingInput("dataset file not found: " + path);
  std::string header;
  std::getline(in, header);
  if (header != "mtlcf-dataset 1")
    throw std::runtime_error("bad dataset header in " + path + ": '" + header + "'");
  std::vector<FeatureSequence> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream is(line);
    FeatureSequence u;
    std::size_t n_labels = 0, rows = 0, cols = 0;
    if (!(is >> u.domain_id >> n_labels)) throw std::runtime_error("corrupt dataset line in " + path);
    u.labels.resize(n_labels);
    for (int& s : u.labels)
      if (!(is >> s)) throw std::runtime_error("corrupt labels in " + path);
    if (!(is >> rows >> cols)) throw std::runtime_error("corrupt frame dims in " + path);
    std::vector<double> values(rows * cols);
    for (double& v : values)
      if (!(is >> v)) throw std::runtime_error("corrupt frame values in " + path);
    u.frames = Tensor::from_values({rows, cols}, std::move(values));
    out.push_back(std::move(u));
  }
  return out;
}

void save_dataset(const DatasetSplit& split, const std::string& dir, const std::string& stem) {
  std::filesystem::create_directories(dir);
  save_split_file(split.train, dir + "/" + stem + ".train.txt");
  save_split_file(split.dev, dir + "/" + stem + ".dev.txt");
  save_split_file(split.test, dir + "/" + stem + ".test.txt");
}

DatasetSplit load_dataset(const std::string& dir, const std::string& stem) {
  DatasetSplit split;
  split.train = load_split_file(dir + "/" + stem + ".train.txt");
  split.dev = load_split_file(dir + "/" + stem + ".dev.txt");
  split.test = load_split_file(dir + "/" + stem + ".test.txt");
  return split;
}

std::uint64_t split_fingerprint(const std::vector<FeatureSequence>& utterances) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (const FeatureSequence& u : utterances) {
    append_fnv(h, &u.domain_id, sizeof(u.domain_id));
    const std::size_t n = u.labels.size();
    append_fnv(h, &n, sizeof(n));
    for (int s : u.labels) append_fnv(h, &s, sizeof(s));
    const std::size_t rows = u.frames.rows(), cols = u.frames.cols();
    append_fnv(h, &rows, sizeof(rows));
    append_fnv(h, &cols, sizeof(cols));
    const auto v = u.frames.values();
    append_fnv(h, v.data(), v.size() * sizeof(double));
  }
  return h;
}

}  // namespace mtlcf
