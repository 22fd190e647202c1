#pragma once

// C-LSTM relation classifier.
//
//   entity/context embeddings -> zero-padded sequence (max_len x v)
//   -> 1-D convolution, k filters of width ws, stride st, ReLU
//   -> m = (max_len - ws) / st + 1 feature vectors of size k
//   -> single-layer LSTM, last hidden state h
//   -> dropout (training only) -> softmax over the six labels
//
// Sequences are stored position-major: row t holds the v-dimensional
// embedding at position t. Convolution windows are therefore contiguous
// ws * v slices, and filter i is a ws * v row of the weight matrix laid out
// [offset][embedding component].
//
// LSTM gate rows are grouped as [input | forget | output | candidate], H
// rows each, in the 4H x k input matrix, the 4H x H recurrent matrix and
// the 4H bias.

#include <array>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "relclass/corpus.hpp"
#include "relclass/embeddings.hpp"
#include "relclass/labels.hpp"
#include "relclass/model_file.hpp"

namespace relclass::clstm {

struct Hyperparams {
  std::size_t num_filters = 384;
  std::size_t filter_width = 3;
  std::size_t rnn_units = 93;
  double dropout_rate = 0.23;
  double l2_scale = 0.79;
  std::size_t stride = 1;
  double learning_rate = 0.002;
  std::size_t batch_size = 128;
  std::size_t epochs = 100;
  std::uint64_t seed = 1;

  bool operator==(const Hyperparams&) const = default;
};

// Position-major matrix: `length` rows of `dim` values.
struct Sequence {
  std::size_t dim = 0;
  std::size_t length = 0;
  std::vector<double> values;

  std::span<const double> position(std::size_t t) const {
    return std::span<const double>(values).subspan(t * dim, dim);
  }
};

// [start entity | filtered context words... | end entity]; entity columns
// are phrase averages and roles follow the reverse flag.
Sequence build_sequence(const RelationInstance& inst, const EmbeddingTable& table, const FrequencyTable& freq,
                        std::size_t min_lemma_count = kDefaultMinLemmaCount);

// Appends zero positions up to max_len. Throws std::invalid_argument if the
// sequence is already longer.
Sequence pad(const Sequence& seq, std::size_t max_len);

// k x m feature maps stored step-major: row j is c_j (k values).
struct FeatureMaps {
  std::size_t steps = 0;
  std::size_t filters = 0;
  std::vector<double> values;

  std::span<const double> step(std::size_t j) const {
    return std::span<const double>(values).subspan(j * filters, filters);
  }
};

std::size_t conv_steps(std::size_t max_len, std::size_t width, std::size_t stride);

// ReLU(<filter_i, window_j> + bias_i). `filters` is k x (width * dim).
FeatureMaps conv1d(const Sequence& padded, std::span<const double> filters, std::span<const double> bias,
                   std::size_t width, std::size_t stride);

std::vector<std::vector<double>> split_maps(const FeatureMaps& maps);

struct LstmWeights {
  std::span<const double> input;      // 4H x k
  std::span<const double> recurrent;  // 4H x H
  std::span<const double> bias;       // 4H
  std::size_t hidden = 0;
};

// Final hidden state, h_0 = c_0 = 0. Throws std::invalid_argument for an
// empty sequence.
std::vector<double> lstm_forward(std::span<const std::vector<double>> inputs, const LstmWeights& weights);

// Inverted dropout mask: 0 or 1 / (1 - rate) per unit.
std::vector<double> make_dropout_mask(std::size_t size, double rate, std::mt19937_64& rng);

// softmax(W (h * mask) + b). An empty mask means inference (no dropout).
ClassDistribution classify(std::span<const double> h, std::span<const double> weights,
                           std::span<const double> bias, std::span<const double> dropout_mask = {});

double cross_entropy(const ClassDistribution& scores, Label gold);

struct Shape {
  std::size_t embed_dim = 0;
  std::size_t max_len = 0;
  std::size_t num_filters = 0;
  std::size_t filter_width = 0;
  std::size_t stride = 1;
  std::size_t hidden = 0;

  std::size_t steps() const { return conv_steps(max_len, filter_width, stride); }
  bool operator==(const Shape&) const = default;
};

enum class Group : std::uint8_t {
  ConvWeight,
  ConvBias,
  LstmInput,
  LstmRecurrent,
  LstmBias,
  OutWeight,
  OutBias,
};

inline constexpr std::size_t kNumGroups = 7;

std::string_view group_name(Group group);

struct Example {
  std::span<const double> input;  // padded, max_len x embed_dim
  Label label;
};

// Flat parameter vector with named views.
class Network {
 public:
  Network() = default;
  Network(Shape shape, std::vector<double> params);

  // Weights uniform in [-0.1, 0.1], biases zero, forget-gate bias 1.
  static Network initialize(const Shape& shape, std::uint64_t seed);
  static std::size_t parameter_count(const Shape& shape);

  const Shape& shape() const { return shape_; }
  std::span<const double> params() const { return params_; }
  std::span<double> params() { return params_; }
  std::span<const double> group(Group g) const;
  std::span<double> group(Group g);
  std::size_t group_offset(Group g) const;

  LstmWeights lstm_weights() const;

  ClassDistribution predict(std::span<const double> padded_input) const;

  // Mean cross-entropy over the batch plus l2_scale * 0.5 * ||W_out||^2.
  // Writes the exact gradient into `grad` (params().size() values). `masks`
  // is empty (no dropout) or holds one hidden-size mask per example.
  double loss_and_gradient(std::span<const Example> batch, std::span<const std::vector<double>> masks,
                           double l2_scale, std::span<double> grad) const;

  double loss(std::span<const Example> batch, std::span<const std::vector<double>> masks, double l2_scale) const;

 private:
  Shape shape_;
  std::vector<double> params_;
  std::array<std::size_t, kNumGroups + 1> offsets_{};
};

struct AdamConfig {
  double learning_rate = 0.002;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;

  explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, const AdamConfig& config);

struct ClstmConfig {
  Hyperparams hyper;
  std::size_t min_lemma_count = kDefaultMinLemmaCount;
};

struct TrainingHistory {
  std::vector<double> epoch_loss;  // mean training loss over each epoch's batches
};

class ClstmClassifier {
 public:
  // Trains on labeled instances; the embedding table is read, never written.
  static ClstmClassifier train(std::span<const RelationInstance> instances, const EmbeddingTable& table,
                               const ClstmConfig& config, TrainingHistory* history = nullptr);

  // Padded input for an instance; sequences longer than max_len are cut on
  // the right. Throws ModelMismatchError on an embedding-dimension mismatch.
  Sequence input_for(const RelationInstance& inst, const EmbeddingTable& table) const;

  ClassDistribution predict_proba(const RelationInstance& inst, const EmbeddingTable& table) const;
  Label predict(const RelationInstance& inst, const EmbeddingTable& table) const;

  const Network& network() const { return net_; }
  const ClstmConfig& config() const { return config_; }
  const FrequencyTable& frequencies() const { return freq_; }
  std::size_t max_len() const { return net_.shape().max_len; }
  const std::string& embedding_name() const { return embedding_name_; }

  ModelFile to_file() const;
  static ClstmClassifier from_file(const ModelFile& file);

 private:
  ClstmConfig config_;
  FrequencyTable freq_;
  Network net_;
  std::string embedding_name_;
};

}  // namespace relclass::clstm
