#include "relclass/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include <fmt/format.h>

namespace relclass::eval {

void ConfusionMatrix::add(Label gold, Label predicted, std::size_t n) {
  counts_[label_index(gold)][label_index(predicted)] += n;
}

std::size_t ConfusionMatrix::total() const {
  std::size_t n = 0;
  for (const auto& row : counts_) n += std::accumulate(row.begin(), row.end(), std::size_t{0});
  return n;
}

ConfusionMatrix confusion(std::span<const Label> gold, std::span<const Label> predicted) {
  if (gold.size() != predicted.size()) throw std::invalid_argument("confusion: gold/prediction length mismatch");
  if (gold.empty()) throw std::invalid_argument("confusion: no instances");
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < gold.size(); ++i) cm.add(gold[i], predicted[i]);
  return cm;
}

ScoreReport f1_scores(const ConfusionMatrix& cm) {
  ScoreReport report;
  report.matrix = cm;
  report.total = cm.total();
  if (report.total == 0) throw std::invalid_argument("f1_scores: empty confusion matrix");
  std::size_t correct = 0;
  for (auto c : kAllLabels) {
    std::size_t tp = cm(c, c);
    std::size_t gold = 0;
    std::size_t pred = 0;
    for (auto o : kAllLabels) {
      gold += cm(c, o);
      pred += cm(o, c);
    }
    correct += tp;
    auto& s = report.per_class[label_index(c)];
    s.support = gold;
    s.precision = pred > 0 ? static_cast<double>(tp) / static_cast<double>(pred) : 0.0;
    s.recall = gold > 0 ? static_cast<double>(tp) / static_cast<double>(gold) : 0.0;
    s.f1 = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
    report.macro_f1 += s.f1;
  }
  report.macro_f1 /= static_cast<double>(kNumLabels);
  report.micro_f1 = static_cast<double>(correct) / static_cast<double>(report.total);
  return report;
}

nlohmann::ordered_json to_json(const ScoreReport& report) {
  nlohmann::ordered_json j;
  j["macro_f1"] = report.macro_f1;
  j["micro_f1"] = report.micro_f1;
  j["total"] = report.total;
  auto per = nlohmann::ordered_json::object();
  for (auto l : kAllLabels) {
    const auto& s = report.per_class[label_index(l)];
    per[std::string(label_name(l))] = {
        {"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}, {"support", s.support}};
  }
  j["per_class"] = std::move(per);
  auto rows = nlohmann::ordered_json::array();
  for (auto g : kAllLabels) {
    auto row = nlohmann::ordered_json::array();
    for (auto p : kAllLabels) row.push_back(report.matrix(g, p));
    rows.push_back(std::move(row));
  }
  j["confusion"] = std::move(rows);
  return j;
}

std::string format_table(const ScoreReport& report) {
  std::string out = fmt::format("{:<14} {:>9} {:>9} {:>9} {:>8}\n", "label", "precision", "recall", "F1", "support");
  for (auto l : kAllLabels) {
    const auto& s = report.per_class[label_index(l)];
    out += fmt::format("{:<14} {:>9.2f} {:>9.2f} {:>9.2f} {:>8}\n", label_name(l), 100.0 * s.precision,
                       100.0 * s.recall, 100.0 * s.f1, s.support);
  }
  out += fmt::format("{:<14} {:>9} {:>9} {:>9.2f} {:>8}\n", "macro F1", "", "", 100.0 * report.macro_f1, report.total);
  out += fmt::format("{:<14} {:>9} {:>9} {:>9.2f} {:>8}\n", "micro F1", "", "", 100.0 * report.micro_f1, report.total);
  return out;
}

std::vector<Fold> stratified_kfold(std::span<const Label> labels, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("stratified_kfold: k must be at least 2");
  if (k > labels.size()) throw std::invalid_argument("stratified_kfold: more folds than instances");
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> fold_of(labels.size());
  std::size_t next = 0;
  for (auto c : kAllLabels) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == c) members.push_back(i);
    }
    std::shuffle(members.begin(), members.end(), rng);
    // Dealing continues where the previous class stopped so fold sizes stay
    // balanced overall as well.
    for (auto i : members) fold_of[i] = next++ % k;
  }
  std::vector<Fold> folds(k);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    for (std::size_t f = 0; f < k; ++f) (f == fold_of[i] ? folds[f].test : folds[f].train).push_back(i);
  }
  return folds;
}

std::vector<Label> gold_labels(std::span<const RelationInstance> instances) {
  std::vector<Label> labels;
  labels.reserve(instances.size());
  for (const auto& inst : instances) {
    if (!inst.label) throw std::invalid_argument(fmt::format("instance '{}' has no gold label", inst.id));
    labels.push_back(*inst.label);
  }
  return labels;
}

namespace {

std::pair<double, double> mean_stddev(const std::vector<double>& xs) {
  const double n = static_cast<double>(xs.size());
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  if (xs.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / (n - 1.0))};
}

}  // namespace

CrossValidationReport cross_validate(std::span<const RelationInstance> instances, const ClassifierFactory& factory,
                                     std::size_t k, std::uint64_t seed) {
  const auto labels = gold_labels(instances);
  CrossValidationReport report;
  std::vector<double> macro;
  std::vector<double> micro;
  for (const auto& fold : stratified_kfold(labels, k, seed)) {
    std::vector<RelationInstance> train;
    train.reserve(fold.train.size());
    for (auto i : fold.train) train.push_back(instances[i]);
    auto clf = factory();
    clf->fit(train);
    std::vector<Label> gold;
    std::vector<Label> pred;
    for (auto i : fold.test) {
      gold.push_back(labels[i]);
      pred.push_back(clf->predict(instances[i]));
    }
    report.folds.push_back(f1_scores(confusion(gold, pred)));
    macro.push_back(report.folds.back().macro_f1);
    micro.push_back(report.folds.back().micro_f1);
  }
  std::tie(report.macro_mean, report.macro_stddev) = mean_stddev(macro);
  std::tie(report.micro_mean, report.micro_stddev) = mean_stddev(micro);
  return report;
}

nlohmann::ordered_json to_json(const CrossValidationReport& report) {
  nlohmann::ordered_json j;
  j["folds"] = report.folds.size();
  j["macro_f1"] = {{"mean", report.macro_mean}, {"stddev", report.macro_stddev}};
  j["micro_f1"] = {{"mean", report.micro_mean}, {"stddev", report.micro_stddev}};
  auto folds = nlohmann::ordered_json::array();
  for (const auto& f : report.folds) folds.push_back(to_json(f));
  j["per_fold"] = std::move(folds);
  return j;
}

}  // namespace relclass::eval
