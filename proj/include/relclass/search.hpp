#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "json.hpp"
#include "relclass/clstm.hpp"
#include "relclass/embeddings.hpp"
#include "relclass/eval.hpp"

namespace relclass::search {

struct IntRange {
  std::size_t min = 0;
  std::size_t max = 0;
};

struct RealRange {
  double min = 0.0;
  double max = 0.0;
};

// Searched C-LSTM hyperparameters; bounds are inclusive.
struct SearchSpace {
  IntRange num_filters{10, 500};
  IntRange filter_width{2, 5};
  IntRange rnn_units{16, 500};
  RealRange dropout_rate{0.0, 0.5};
  RealRange l2_scale{0.0, 3.0};

  // Throws std::invalid_argument if a range has min > max.
  void validate() const;
  bool contains(const clstm::Hyperparams& hp) const;
};

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

// Per class, round-half-up(fraction * size) instances go to validation, at
// least one when the class has two or more members; singleton classes stay
// in train. Index lists keep input order.
Split stratified_split(std::span<const Label> labels, double fraction, std::uint64_t seed);

// Integers uniform on the closed range, reals uniform on the closed
// interval. The non-searched settings (stride, learning rate, batch size,
// epochs) are copied from `fixed`; the seed is the sampling seed.
clstm::Hyperparams sample_config(const SearchSpace& space, std::uint64_t seed,
                                 const clstm::Hyperparams& fixed = clstm::Hyperparams{});

struct TrialResult {
  std::size_t trial = 0;
  clstm::Hyperparams hyper;
  double macro_f1 = 0.0;
  double micro_f1 = 0.0;
  std::uint64_t seed = 0;
  double wall_time_s = 0.0;
};

// One JSON-lines record; wall time sits under "timing" so the rest of the
// record is reproducible byte for byte.
nlohmann::ordered_json to_json(const TrialResult& trial);
nlohmann::ordered_json to_json(const clstm::Hyperparams& hp);

// Trains a model for `hyper` on `train` and scores it on `validation`.
using TrialEvaluator = std::function<eval::ScoreReport(const clstm::Hyperparams& hyper,
                                                       std::span<const std::size_t> train,
                                                       std::span<const std::size_t> validation)>;

struct SearchResult {
  clstm::Hyperparams best;
  std::size_t best_trial = 0;
  Split split;
  std::vector<TrialResult> trials;
};

struct SearchOptions {
  SearchSpace space;
  std::size_t trials = 20;
  std::uint64_t seed = 1;
  double validation_fraction = 0.10;
  clstm::Hyperparams fixed;
};

// Best trial by validation macro-F1, earliest on ties. `on_trial` sees each
// result as soon as it is available.
SearchResult random_search(std::span<const Label> labels, const SearchOptions& options,
                           const TrialEvaluator& evaluate,
                           const std::function<void(const TrialResult&)>& on_trial = {});

// Random search with C-LSTM training on the train split.
SearchResult random_search(std::span<const RelationInstance> instances, const EmbeddingTable& table,
                           const SearchOptions& options, std::size_t min_lemma_count = kDefaultMinLemmaCount,
                           const std::function<void(const TrialResult&)>& on_trial = {});

}  // namespace relclass::search
