#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "relclass/corpus.hpp"
#include "relclass/labels.hpp"

namespace relclass::eval {

// Rows are gold labels, columns predictions.
class ConfusionMatrix {
 public:
  void add(Label gold, Label predicted, std::size_t n = 1);
  std::size_t operator()(Label gold, Label predicted) const {
    return counts_[label_index(gold)][label_index(predicted)];
  }
  std::size_t total() const;

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::array<std::array<std::size_t, kNumLabels>, kNumLabels> counts_{};
};

ConfusionMatrix confusion(std::span<const Label> gold, std::span<const Label> predicted);

struct ClassScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
};

struct ScoreReport {
  std::array<ClassScore, kNumLabels> per_class{};
  double macro_f1 = 0.0;  // unweighted mean over all six labels
  double micro_f1 = 0.0;  // equals accuracy for single-label data
  std::size_t total = 0;
  ConfusionMatrix matrix;
};

// Zero denominators give 0 for P, R and F1.
ScoreReport f1_scores(const ConfusionMatrix& cm);

nlohmann::ordered_json to_json(const ScoreReport& report);

// Aligned plain-text table with per-class rows and macro/micro lines.
std::string format_table(const ScoreReport& report);

struct Fold {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

// Per-class counts in each test fold differ by at most one.
std::vector<Fold> stratified_kfold(std::span<const Label> labels, std::size_t k, std::uint64_t seed);

class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual void fit(std::span<const RelationInstance> train) = 0;
  virtual Label predict(const RelationInstance& inst) const = 0;
};

using ClassifierFactory = std::function<std::unique_ptr<Classifier>()>;

struct CrossValidationReport {
  std::vector<ScoreReport> folds;
  double macro_mean = 0.0;
  double macro_stddev = 0.0;  // sample standard deviation over folds
  double micro_mean = 0.0;
  double micro_stddev = 0.0;
};

CrossValidationReport cross_validate(std::span<const RelationInstance> instances, const ClassifierFactory& factory,
                                     std::size_t k, std::uint64_t seed);

nlohmann::ordered_json to_json(const CrossValidationReport& report);

std::vector<Label> gold_labels(std::span<const RelationInstance> instances);

}  // namespace relclass::eval
