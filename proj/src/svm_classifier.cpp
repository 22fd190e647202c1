#include <fmt/format.h>

#include "relclass/svm.hpp"

namespace relclass::svm {

namespace {

using ordered_json = nlohmann::ordered_json;

FeatureContext context_for(const EmbeddingTable& table, const LevinTable& levin, const FrequencyTable& freq,
                           std::size_t min_count) {
  return FeatureContext{table, levin, freq, min_count};
}

FeatureKey parse_key(const std::string& s) {
  const auto colon = s.find(':');
  if (colon == std::string::npos) throw ModelFormatError(fmt::format("bad feature key '{}'", s));
  const auto ns = parse_namespace(std::string_view(s).substr(0, colon));
  if (!ns) throw ModelFormatError(fmt::format("bad feature namespace in '{}'", s));
  return {*ns, s.substr(colon + 1)};
}

Label require_label(const std::string& name) {
  const auto l = parse_label(name);
  if (!l) throw ModelFormatError(fmt::format("unknown label '{}' in model", name));
  return *l;
}

}  // namespace

SvmClassifier SvmClassifier::train(std::span<const RelationInstance> instances, const EmbeddingTable& table,
                                   LevinTable levin, const SvmConfig& config) {
  if (instances.empty()) throw TrainingError("SVM training needs a nonempty corpus");
  SvmClassifier clf;
  clf.config_ = config;
  clf.levin_ = std::move(levin);
  clf.freq_ = build_lemma_counts(instances);
  clf.embedding_name_ = table.name();
  clf.embedding_dim_ = table.dim();

  const auto ctx = context_for(table, clf.levin_, clf.freq_, config.min_lemma_count);
  std::vector<FeatureKeySet> keys;
  std::vector<DenseVector> dense;
  std::vector<Label> labels;
  keys.reserve(instances.size());
  dense.reserve(instances.size());
  for (const auto& inst : instances) {
    if (!inst.label) throw TrainingError(fmt::format("instance '{}' has no label", inst.id));
    keys.push_back(extract_keys(inst, ctx));
    dense.push_back(raw_dense(inst, ctx));
    labels.push_back(*inst.label);
  }
  clf.space_ = build_feature_space(keys);
  clf.scaler_ = fit_minmax(dense);

  std::vector<FeatureVector> xs(instances.size());
  for (std::size_t i = 0; i < instances.size(); ++i) {
    for (const auto& key : keys[i]) xs[i].active.push_back(*clf.space_.index_of(key));
    std::sort(xs[i].active.begin(), xs[i].active.end());
    xs[i].dense = clf.scaler_.apply(dense[i]);
  }
  clf.svm_ = MulticlassSvm::train(xs, labels, config.svm);
  return clf;
}

FeatureVector SvmClassifier::features(const RelationInstance& inst, const EmbeddingTable& table) const {
  if (table.dim() != embedding_dim_) {
    throw ModelMismatchError(fmt::format("model was trained with {}-dimensional embeddings, got {}",
                                         embedding_dim_, table.dim()));
  }
  return assemble(inst, space_, scaler_, context_for(table, levin_, freq_, config_.min_lemma_count));
}

ClassDistribution SvmClassifier::predict_proba(const RelationInstance& inst, const EmbeddingTable& table) const {
  return svm_.predict_proba(features(inst, table));
}

Label SvmClassifier::predict(const RelationInstance& inst, const EmbeddingTable& table) const {
  return argmax_label(predict_proba(inst, table));
}

ModelFile SvmClassifier::to_file() const {
  ModelFile file("svm");
  auto& meta = file.meta();
  const auto& opt = svm_.options();
  meta["C"] = opt.C;
  meta["gamma"] = opt.gamma;
  meta["tol"] = opt.tol;
  meta["calibration_folds"] = opt.calibration_folds;
  meta["seed"] = opt.seed;
  meta["min_lemma_count"] = config_.min_lemma_count;
  meta["embedding"] = {{"name", embedding_name_}, {"dim", embedding_dim_}};
  auto labels = ordered_json::array();
  for (auto l : kAllLabels) labels.push_back(std::string(label_name(l)));
  meta["labels"] = std::move(labels);
  auto keys = ordered_json::array();
  for (const auto& k : space_.keys()) keys.push_back(to_string(k));
  meta["feature_space"] = std::move(keys);
  auto freq = ordered_json::object();
  for (const auto& [lemma, count] : freq_.counts()) freq[lemma] = count;
  meta["frequencies"] = std::move(freq);
  auto levin = ordered_json::object();
  for (const auto& [lemma, ids] : levin_.entries()) levin[lemma] = ids;
  meta["levin"] = std::move(levin);

  file.add("scaler.min", {scaler_.dim()}, scaler_.min());
  file.add("scaler.max", {scaler_.dim()}, scaler_.max());
  auto pairs = ordered_json::array();
  const auto& machines = svm_.pairs();
  for (std::size_t p = 0; p < machines.size(); ++p) {
    const auto& pm = machines[p];
    const auto& m = pm.model;
    pairs.push_back({{"positive", std::string(label_name(label_at(pm.positive)))},
                     {"negative", std::string(label_name(label_at(pm.negative)))},
                     {"trained", pm.trained},
                     {"support_vectors", m.support_vectors.size()}});
    const std::vector<double> params{m.bias, pm.sigmoid.A, pm.sigmoid.B};
    file.add(fmt::format("pair{}.params", p), {3}, params);
    file.add(fmt::format("pair{}.coef", p), {m.coef.size()}, m.coef);
    std::vector<double> dense;
    std::vector<std::uint32_t> offsets{0};
    std::vector<std::uint32_t> active;
    for (const auto& sv : m.support_vectors) {
      dense.insert(dense.end(), sv.dense.begin(), sv.dense.end());
      active.insert(active.end(), sv.active.begin(), sv.active.end());
      offsets.push_back(static_cast<std::uint32_t>(active.size()));
    }
    file.add(fmt::format("pair{}.dense", p), {m.support_vectors.size(), scaler_.dim()}, dense);
    file.add(fmt::format("pair{}.active_offsets", p), {offsets.size()}, offsets);
    file.add(fmt::format("pair{}.active", p), {active.size()}, active);
  }
  meta["pairs"] = std::move(pairs);
  return file;
}

SvmClassifier SvmClassifier::from_file(const ModelFile& file) {
  if (file.kind() != "svm") throw ModelFormatError(fmt::format("expected an svm model, found '{}'", file.kind()));
  SvmClassifier clf;
  try {
    const auto& meta = file.meta();
    MulticlassOptions opt;
    opt.C = meta.at("C").get<double>();
    opt.gamma = meta.at("gamma").get<double>();
    opt.tol = meta.at("tol").get<double>();
    opt.calibration_folds = meta.at("calibration_folds").get<std::size_t>();
    opt.seed = meta.at("seed").get<std::uint64_t>();
    clf.config_.svm = opt;
    clf.config_.min_lemma_count = meta.at("min_lemma_count").get<std::size_t>();
    clf.embedding_name_ = meta.at("embedding").at("name").get<std::string>();
    clf.embedding_dim_ = meta.at("embedding").at("dim").get<std::size_t>();

    std::vector<FeatureKey> keys;
    for (const auto& k : meta.at("feature_space")) keys.push_back(parse_key(k.get<std::string>()));
    clf.space_ = FeatureSpace(std::move(keys));
    std::map<std::string, std::size_t> counts;
    for (const auto& [lemma, count] : meta.at("frequencies").items()) counts[lemma] = count.get<std::size_t>();
    clf.freq_ = FrequencyTable(std::move(counts));
    for (const auto& [lemma, ids] : meta.at("levin").items()) {
      for (const auto& id : ids) clf.levin_.add(lemma, std::to_string(id.get<int>()));
    }
    clf.scaler_ = MinMaxScaler(file.f64("scaler.min").f64, file.f64("scaler.max").f64);
    if (clf.scaler_.dim() != 3 * clf.embedding_dim_) throw ModelFormatError("scaler dimension mismatch");

    std::vector<PairMachine> machines;
    const auto& pairs = meta.at("pairs");
    for (std::size_t p = 0; p < pairs.size(); ++p) {
      PairMachine pm;
      pm.positive = label_index(require_label(pairs[p].at("positive").get<std::string>()));
      pm.negative = label_index(require_label(pairs[p].at("negative").get<std::string>()));
      pm.trained = pairs[p].at("trained").get<bool>();
      const auto& params = file.f64(fmt::format("pair{}.params", p)).f64;
      if (params.size() != 3) throw ModelFormatError("bad pair parameter tensor");
      pm.model.bias = params[0];
      pm.sigmoid = {params[1], params[2]};
      pm.model.C = opt.C;
      pm.model.gamma = opt.gamma;
      pm.model.coef = file.f64(fmt::format("pair{}.coef", p)).f64;
      const auto& dense = file.f64(fmt::format("pair{}.dense", p)).f64;
      const auto& offsets = file.u32(fmt::format("pair{}.active_offsets", p)).u32;
      const auto& active = file.u32(fmt::format("pair{}.active", p)).u32;
      const std::size_t nsv = pm.model.coef.size();
      const std::size_t width = clf.scaler_.dim();
      if (dense.size() != nsv * width || offsets.size() != nsv + 1 || offsets.back() != active.size()) {
        throw ModelFormatError(fmt::format("inconsistent support vectors for pair {}", p));
      }
      for (std::size_t s = 0; s < nsv; ++s) {
        FeatureVector sv;
        sv.dense.assign(dense.begin() + static_cast<std::ptrdiff_t>(s * width),
                        dense.begin() + static_cast<std::ptrdiff_t>((s + 1) * width));
        if (offsets[s] > offsets[s + 1]) throw ModelFormatError("bad support vector offsets");
        sv.active.assign(active.begin() + offsets[s], active.begin() + offsets[s + 1]);
        pm.model.support_vectors.push_back(std::move(sv));
      }
      machines.push_back(std::move(pm));
    }
    clf.svm_ = MulticlassSvm::from_parts(opt, std::move(machines));
  } catch (const nlohmann::json::exception& e) {
    throw ModelFormatError(fmt::format("bad svm model metadata: {}", e.what()));
  } catch (const std::invalid_argument& e) {
    throw ModelFormatError(fmt::format("bad svm model: {}", e.what()));
  }
  return clf;
}

}  // namespace relclass::svm
