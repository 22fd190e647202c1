#include "relclass/search.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "relclass/rng.hpp"

namespace relclass::search {

void SearchSpace::validate() const {
  const auto check = [](auto r, const char* name) {
    if (r.min > r.max) throw std::invalid_argument(fmt::format("search range '{}' has min > max", name));
  };
  check(num_filters, "num_filters");
  check(filter_width, "filter_width");
  check(rnn_units, "rnn_units");
  check(dropout_rate, "dropout_rate");
  check(l2_scale, "l2_scale");
}

bool SearchSpace::contains(const clstm::Hyperparams& hp) const {
  const auto in = [](auto v, auto r) { return v >= r.min && v <= r.max; };
  return in(hp.num_filters, num_filters) && in(hp.filter_width, filter_width) && in(hp.rnn_units, rnn_units) &&
         in(hp.dropout_rate, dropout_rate) && in(hp.l2_scale, l2_scale) && hp.stride >= 1;
}

Split stratified_split(std::span<const Label> labels, double fraction, std::uint64_t seed) {
  if (labels.empty()) throw std::invalid_argument("stratified_split: no instances");
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw std::invalid_argument("stratified_split: fraction outside [0, 1]");
  std::mt19937_64 rng(seed);
  std::vector<bool> in_validation(labels.size(), false);
  for (auto c : kAllLabels) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == c) members.push_back(i);
    }
    std::shuffle(members.begin(), members.end(), rng);
    const std::size_t n = members.size();
    if (n == 0) continue;
    auto count = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 0.5));
    if (fraction > 0.0 && n >= 2) count = std::max<std::size_t>(count, 1);
    if (n == 1) {
      if (fraction > 0.0) spdlog::info("class {} has a single instance; keeping it in train", label_name(c));
      count = 0;
    }
    count = std::min(count, n);
    for (std::size_t a = 0; a < count; ++a) in_validation[members[a]] = true;
  }
  Split split;
  for (std::size_t i = 0; i < labels.size(); ++i) (in_validation[i] ? split.validation : split.train).push_back(i);
  return split;
}

clstm::Hyperparams sample_config(const SearchSpace& space, std::uint64_t seed, const clstm::Hyperparams& fixed) {
  space.validate();
  std::mt19937_64 rng(seed);
  const auto uniform_int = [&](IntRange r) { return std::uniform_int_distribution<std::size_t>(r.min, r.max)(rng); };
  const auto uniform_real = [&](RealRange r) {
    if (r.min == r.max) return r.min;
    // Closed interval: extend the half-open upper bound by one ulp.
    const double v = std::uniform_real_distribution<double>(
        r.min, std::nextafter(r.max, std::numeric_limits<double>::infinity()))(rng);
    return std::min(v, r.max);
  };
  clstm::Hyperparams hp = fixed;
  hp.num_filters = uniform_int(space.num_filters);
  hp.filter_width = uniform_int(space.filter_width);
  hp.rnn_units = uniform_int(space.rnn_units);
  hp.dropout_rate = uniform_real(space.dropout_rate);
  hp.l2_scale = uniform_real(space.l2_scale);
  hp.seed = seed;
  return hp;
}

nlohmann::ordered_json to_json(const clstm::Hyperparams& hp) {
  return {{"num_filters", hp.num_filters},     {"filter_width", hp.filter_width}, {"rnn_units", hp.rnn_units},
          {"dropout_rate", hp.dropout_rate},   {"l2_scale", hp.l2_scale},         {"stride", hp.stride},
          {"learning_rate", hp.learning_rate}, {"batch_size", hp.batch_size},     {"epochs", hp.epochs},
          {"seed", hp.seed}};
}

nlohmann::ordered_json to_json(const TrialResult& trial) {
  nlohmann::ordered_json j;
  j["trial"] = trial.trial;
  j["hyperparams"] = to_json(trial.hyper);
  j["macro_f1"] = trial.macro_f1;
  j["micro_f1"] = trial.micro_f1;
  j["seed"] = trial.seed;
  j["timing"] = {{"wall_time_s", trial.wall_time_s}};
  return j;
}

SearchResult random_search(std::span<const Label> labels, const SearchOptions& options,
                           const TrialEvaluator& evaluate, const std::function<void(const TrialResult&)>& on_trial) {
  if (options.trials == 0) throw std::invalid_argument("random_search: need at least one trial");
  options.space.validate();
  SearchResult result;
  result.split = stratified_split(labels, options.validation_fraction, derive_seed(options.seed, 0));
  if (result.split.validation.empty()) throw std::invalid_argument("random_search: validation split is empty");
  double best_score = -1.0;
  for (std::size_t t = 0; t < options.trials; ++t) {
    const auto start = std::chrono::steady_clock::now();
    TrialResult trial;
    trial.trial = t;
    trial.seed = derive_seed(options.seed, t + 1);
    trial.hyper = sample_config(options.space, trial.seed, options.fixed);
    const auto report = evaluate(trial.hyper, result.split.train, result.split.validation);
    trial.macro_f1 = report.macro_f1;
    trial.micro_f1 = report.micro_f1;
    trial.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (trial.macro_f1 > best_score) {
      best_score = trial.macro_f1;
      result.best = trial.hyper;
      result.best_trial = t;
    }
    if (on_trial) on_trial(trial);
    result.trials.push_back(std::move(trial));
  }
  return result;
}

SearchResult random_search(std::span<const RelationInstance> instances, const EmbeddingTable& table,
                           const SearchOptions& options, std::size_t min_lemma_count,
                           const std::function<void(const TrialResult&)>& on_trial) {
  const auto labels = eval::gold_labels(instances);
  const auto evaluate = [&](const clstm::Hyperparams& hp, std::span<const std::size_t> train,
                            std::span<const std::size_t> validation) {
    std::vector<RelationInstance> train_set;
    train_set.reserve(train.size());
    for (auto i : train) train_set.push_back(instances[i]);
    const auto model = clstm::ClstmClassifier::train(train_set, table, {hp, min_lemma_count});
    std::vector<Label> gold;
    std::vector<Label> pred;
    for (auto i : validation) {
      gold.push_back(labels[i]);
      pred.push_back(model.predict(instances[i], table));
    }
    const auto report = eval::f1_scores(eval::confusion(gold, pred));
    spdlog::info("trial: k={} ws={} units={} dropout={:.3f} l2={:.3f} -> macro-F1 {:.4f}", hp.num_filters,
                 hp.filter_width, hp.rnn_units, hp.dropout_rate, hp.l2_scale, report.macro_f1);
    return report;
  };
  return random_search(labels, options, evaluate, on_trial);
}

}  // namespace relclass::search
