#pragma once

// Multiclass RBF-kernel SVM with probability outputs.
//
// One binary machine per unordered class pair is trained with SMO
// (working-set size 2, second-order pair selection, no shrinking). Each
// machine gets a sigmoid calibrator fitted on cross-validated decision
// values, and the calibrated pairwise probabilities are coupled into one
// distribution over the six labels.

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "relclass/corpus.hpp"
#include "relclass/embeddings.hpp"
#include "relclass/features.hpp"
#include "relclass/labels.hpp"
#include "relclass/model_file.hpp"

namespace relclass::svm {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ||x - z||^2 over the concatenated boolean (0/1) and dense blocks.
double squared_distance(const FeatureVector& x, const FeatureVector& z);

// exp(-gamma * ||x - z||^2). Throws std::invalid_argument if the dense
// blocks differ in length.
double rbf_kernel(const FeatureVector& x, const FeatureVector& z, double gamma);

// Dense symmetric Gram matrix.
class KernelMatrix {
 public:
  KernelMatrix() = default;
  KernelMatrix(std::size_t n, std::vector<double> values);

  static KernelMatrix rbf(std::span<const FeatureVector> xs, double gamma);

  std::size_t size() const { return n_; }
  double operator()(std::size_t i, std::size_t j) const { return values_[i * n_ + j]; }
  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(values_).subspan(i * n_, n_);
  }

  KernelMatrix subset(std::span<const std::size_t> indices) const;

 private:
  std::size_t n_ = 0;
  std::vector<double> values_;
};

struct DualSolution {
  std::vector<double> alpha;
  double bias = 0.0;        // decision(x) = sum_i alpha_i y_i K(x_i, x) + bias
  double objective = 0.0;   // 0.5 a'Qa - e'a, Q_ij = y_i y_j K_ij
  double kkt_gap = 0.0;     // max violating-pair gap at exit
  std::size_t iterations = 0;
  bool converged = false;
};

// Solves min 0.5 a'Qa - e'a s.t. 0 <= a <= C, y'a = 0. `y` holds +1/-1.
// max_iterations == 0 picks max(10^7, 100 n).
DualSolution solve_dual(const KernelMatrix& kernel, std::span<const int> y, double C,
                        double tol = 1e-3, std::size_t max_iterations = 0);

struct BinaryModel {
  std::vector<FeatureVector> support_vectors;
  std::vector<double> coef;  // alpha_i * y_i
  double bias = 0.0;
  double C = 0.0;
  double gamma = 0.0;

  double decision(const FeatureVector& x) const;
};

// Positive decision values favour y = +1. Throws TrainingError unless both
// labels are present.
BinaryModel train_binary_smo(std::span<const FeatureVector> xs, std::span<const int> y, double C,
                             double gamma, double tol = 1e-3, std::size_t max_iterations = 0);

// P(y = +1 | score) = 1 / (1 + exp(A * score + B))
struct Sigmoid {
  double A = 0.0;
  double B = 0.0;

  double probability(double score) const;
};

// Maximum-likelihood fit against smoothed targets (N+ + 1)/(N+ + 2) and
// 1/(N- + 2), Newton's method with backtracking.
Sigmoid fit_sigmoid(std::span<const double> scores, std::span<const int> labels);

// r(i, j) = P(class i | class i or j).
class PairwiseMatrix {
 public:
  explicit PairwiseMatrix(std::size_t classes, double fill = 0.5);

  std::size_t classes() const { return k_; }
  double operator()(std::size_t i, std::size_t j) const { return r_[i * k_ + j]; }
  // Sets r(i, j) = p and r(j, i) = 1 - p.
  void set(std::size_t i, std::size_t j, double p);
  double& at(std::size_t i, std::size_t j) { return r_[i * k_ + j]; }

 private:
  std::size_t k_;
  std::vector<double> r_;
};

struct CouplingResult {
  std::vector<double> p;
  double residual = 0.0;
  std::size_t iterations = 0;
};

// Minimizes sum_i sum_{j != i} (r_ji p_i - r_ij p_j)^2 subject to sum p = 1
// by the normalized fixed-point iteration. Throws std::invalid_argument
// unless 0 < r_ij < 1 and r_ij + r_ji = 1.
CouplingResult pairwise_coupling(const PairwiseMatrix& r, double tol = 1e-10,
                                 std::size_t max_iterations = 1000);

struct MulticlassOptions {
  double C = 100.0;
  double gamma = 0.001;
  double tol = 1e-3;
  std::size_t calibration_folds = 5;
  std::uint64_t seed = 1;
  std::size_t threads = 1;
};

struct PairMachine {
  std::size_t positive = 0;  // label index scored by positive decisions
  std::size_t negative = 0;
  bool trained = false;      // false when either class had no instances
  BinaryModel model;
  Sigmoid sigmoid;
};

class MulticlassSvm {
 public:
  MulticlassSvm() = default;

  static MulticlassSvm train(std::span<const FeatureVector> xs, std::span<const Label> labels,
                             const MulticlassOptions& options);

  ClassDistribution predict_proba(const FeatureVector& x) const;
  Label predict(const FeatureVector& x) const;

  const std::vector<PairMachine>& pairs() const { return pairs_; }
  const MulticlassOptions& options() const { return options_; }

  static MulticlassSvm from_parts(MulticlassOptions options, std::vector<PairMachine> pairs);

 private:
  MulticlassOptions options_;
  std::vector<PairMachine> pairs_;
};

struct SvmConfig {
  MulticlassOptions svm;
  std::size_t min_lemma_count = kDefaultMinLemmaCount;
};

// Feature extraction fitted on the training corpus plus the multiclass SVM.
class SvmClassifier {
 public:
  static SvmClassifier train(std::span<const RelationInstance> instances, const EmbeddingTable& table,
                             LevinTable levin, const SvmConfig& config);

  // Throws ModelMismatchError if `table` has another dimension than the
  // training table.
  ClassDistribution predict_proba(const RelationInstance& inst, const EmbeddingTable& table) const;
  Label predict(const RelationInstance& inst, const EmbeddingTable& table) const;

  FeatureVector features(const RelationInstance& inst, const EmbeddingTable& table) const;

  const FeatureSpace& space() const { return space_; }
  const MinMaxScaler& scaler() const { return scaler_; }
  const FrequencyTable& frequencies() const { return freq_; }
  const LevinTable& levin() const { return levin_; }
  const MulticlassSvm& machine() const { return svm_; }
  const SvmConfig& config() const { return config_; }
  const std::string& embedding_name() const { return embedding_name_; }
  std::size_t embedding_dim() const { return embedding_dim_; }

  ModelFile to_file() const;
  static SvmClassifier from_file(const ModelFile& file);

 private:
  SvmConfig config_;
  FrequencyTable freq_;
  LevinTable levin_;
  FeatureSpace space_;
  MinMaxScaler scaler_;
  MulticlassSvm svm_;
  std::string embedding_name_;
  std::size_t embedding_dim_ = 0;
};

}  // namespace relclass::svm
