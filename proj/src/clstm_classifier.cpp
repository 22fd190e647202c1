#include <numeric>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "relclass/clstm.hpp"
#include "relclass/rng.hpp"

namespace relclass::clstm {

namespace {

using ordered_json = nlohmann::ordered_json;

std::vector<std::uint64_t> group_shape(const Shape& s, Group g) {
  const std::uint64_t H = s.hidden;
  switch (g) {
    case Group::ConvWeight: return {s.num_filters, s.filter_width, s.embed_dim};
    case Group::ConvBias: return {s.num_filters};
    case Group::LstmInput: return {4 * H, s.num_filters};
    case Group::LstmRecurrent: return {4 * H, H};
    case Group::LstmBias: return {4 * H};
    case Group::OutWeight: return {kNumLabels, H};
    case Group::OutBias: return {kNumLabels};
  }
  return {};
}

}  // namespace

ClstmClassifier ClstmClassifier::train(std::span<const RelationInstance> instances, const EmbeddingTable& table,
                                       const ClstmConfig& config, TrainingHistory* history) {
  const Hyperparams& hp = config.hyper;
  if (instances.empty()) throw std::invalid_argument("C-LSTM training needs a nonempty corpus");
  if (hp.batch_size == 0) throw std::invalid_argument("batch size must be positive");

  ClstmClassifier clf;
  clf.config_ = config;
  clf.freq_ = build_lemma_counts(instances);
  clf.embedding_name_ = table.name();

  std::vector<Sequence> seqs;
  std::vector<Label> labels;
  std::size_t max_len = hp.filter_width;
  for (const auto& inst : instances) {
    if (!inst.label) throw std::invalid_argument(fmt::format("instance '{}' has no label", inst.id));
    seqs.push_back(build_sequence(inst, table, clf.freq_, config.min_lemma_count));
    labels.push_back(*inst.label);
    max_len = std::max(max_len, seqs.back().length);
  }
  for (auto& s : seqs) s = pad(s, max_len);

  const Shape shape{table.dim(), max_len, hp.num_filters, hp.filter_width, hp.stride, hp.rnn_units};
  clf.net_ = Network::initialize(shape, derive_seed(hp.seed, 0));
  std::mt19937_64 rng(derive_seed(hp.seed, 1));

  const AdamConfig adam_cfg{hp.learning_rate};
  AdamState adam(clf.net_.params().size());
  std::vector<double> grad(clf.net_.params().size());
  std::vector<std::size_t> order(seqs.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<Example> batch;
  std::vector<std::vector<double>> masks;

  for (std::size_t epoch = 0; epoch < hp.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += hp.batch_size) {
      const std::size_t end = std::min(order.size(), begin + hp.batch_size);
      batch.clear();
      masks.clear();
      for (std::size_t b = begin; b < end; ++b) {
        batch.push_back({seqs[order[b]].values, labels[order[b]]});
        if (hp.dropout_rate > 0.0) masks.push_back(make_dropout_mask(shape.hidden, hp.dropout_rate, rng));
      }
      const double loss = clf.net_.loss_and_gradient(batch, masks, hp.l2_scale, grad);
      epoch_loss += loss * static_cast<double>(end - begin);
      adam_step(clf.net_.params(), grad, adam, adam_cfg);
    }
    epoch_loss /= static_cast<double>(order.size());
    if (history) history->epoch_loss.push_back(epoch_loss);
    spdlog::debug("epoch {}: loss {:.6f}", epoch + 1, epoch_loss);
  }
  return clf;
}

Sequence ClstmClassifier::input_for(const RelationInstance& inst, const EmbeddingTable& table) const {
  const Shape& s = net_.shape();
  if (table.dim() != s.embed_dim) {
    throw ModelMismatchError(
        fmt::format("model was trained with {}-dimensional embeddings, got {}", s.embed_dim, table.dim()));
  }
  Sequence seq = build_sequence(inst, table, freq_, config_.min_lemma_count);
  if (seq.length > s.max_len) {
    spdlog::warn("instance '{}': sequence length {} exceeds trained max_len {}, truncating", inst.id, seq.length,
                 s.max_len);
    seq.values.resize(s.max_len * s.embed_dim);
    seq.length = s.max_len;
  }
  return pad(seq, s.max_len);
}

ClassDistribution ClstmClassifier::predict_proba(const RelationInstance& inst, const EmbeddingTable& table) const {
  return net_.predict(input_for(inst, table).values);
}

Label ClstmClassifier::predict(const RelationInstance& inst, const EmbeddingTable& table) const {
  return argmax_label(predict_proba(inst, table));
}

ModelFile ClstmClassifier::to_file() const {
  ModelFile file("clstm");
  auto& meta = file.meta();
  const Hyperparams& hp = config_.hyper;
  meta["hyperparams"] = {{"num_filters", hp.num_filters},   {"filter_width", hp.filter_width},
                         {"rnn_units", hp.rnn_units},       {"dropout_rate", hp.dropout_rate},
                         {"l2_scale", hp.l2_scale},         {"stride", hp.stride},
                         {"learning_rate", hp.learning_rate}, {"batch_size", hp.batch_size},
                         {"epochs", hp.epochs},             {"seed", hp.seed}};
  meta["min_lemma_count"] = config_.min_lemma_count;
  meta["max_len"] = net_.shape().max_len;
  meta["embedding"] = {{"name", embedding_name_}, {"dim", net_.shape().embed_dim}};
  auto labels = ordered_json::array();
  for (auto l : kAllLabels) labels.push_back(std::string(label_name(l)));
  meta["labels"] = std::move(labels);
  auto freq = ordered_json::object();
  for (const auto& [lemma, count] : freq_.counts()) freq[lemma] = count;
  meta["frequencies"] = std::move(freq);
  for (std::size_t g = 0; g < kNumGroups; ++g) {
    const auto group = static_cast<Group>(g);
    file.add(std::string(group_name(group)), group_shape(net_.shape(), group), net_.group(group));
  }
  return file;
}

ClstmClassifier ClstmClassifier::from_file(const ModelFile& file) {
  if (file.kind() != "clstm") throw ModelFormatError(fmt::format("expected a clstm model, found '{}'", file.kind()));
  ClstmClassifier clf;
  try {
    const auto& meta = file.meta();
    const auto& h = meta.at("hyperparams");
    Hyperparams& hp = clf.config_.hyper;
    hp.num_filters = h.at("num_filters").get<std::size_t>();
    hp.filter_width = h.at("filter_width").get<std::size_t>();
    hp.rnn_units = h.at("rnn_units").get<std::size_t>();
    hp.dropout_rate = h.at("dropout_rate").get<double>();
    hp.l2_scale = h.at("l2_scale").get<double>();
    hp.stride = h.at("stride").get<std::size_t>();
    hp.learning_rate = h.at("learning_rate").get<double>();
    hp.batch_size = h.at("batch_size").get<std::size_t>();
    hp.epochs = h.at("epochs").get<std::size_t>();
    hp.seed = h.at("seed").get<std::uint64_t>();
    clf.config_.min_lemma_count = meta.at("min_lemma_count").get<std::size_t>();
    clf.embedding_name_ = meta.at("embedding").at("name").get<std::string>();
    std::map<std::string, std::size_t> counts;
    for (const auto& [lemma, count] : meta.at("frequencies").items()) counts[lemma] = count.get<std::size_t>();
    clf.freq_ = FrequencyTable(std::move(counts));

    const Shape shape{meta.at("embedding").at("dim").get<std::size_t>(), meta.at("max_len").get<std::size_t>(),
                      hp.num_filters, hp.filter_width, hp.stride, hp.rnn_units};
    std::vector<double> params;
    params.reserve(Network::parameter_count(shape));
    for (std::size_t g = 0; g < kNumGroups; ++g) {
      const auto group = static_cast<Group>(g);
      const auto& t = file.f64(group_name(group));
      if (t.shape != group_shape(shape, group)) {
        throw ModelFormatError(fmt::format("tensor '{}' has the wrong shape", group_name(group)));
      }
      params.insert(params.end(), t.f64.begin(), t.f64.end());
    }
    clf.net_ = Network(shape, std::move(params));
  } catch (const nlohmann::json::exception& e) {
    throw ModelFormatError(fmt::format("bad clstm model metadata: {}", e.what()));
  } catch (const std::invalid_argument& e) {
    throw ModelFormatError(fmt::format("bad clstm model: {}", e.what()));
  }
  return clf;
}

}  // namespace relclass::clstm
