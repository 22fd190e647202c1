#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "relclass/svm.hpp"
#include "synthetic.hpp"

using namespace relclass;
using namespace relclass::svm;

namespace {

FeatureVector dense(std::vector<double> v, std::vector<std::uint32_t> active = {}) {
  return FeatureVector{std::move(active), std::move(v)};
}

struct RandomProblem {
  std::vector<FeatureVector> xs;
  std::vector<int> y;
};

RandomProblem random_problem(std::mt19937_64& rng, std::size_t n, std::size_t d) {
  std::normal_distribution<double> g(0.0, 1.0);
  RandomProblem p;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> v(d);
    for (auto& x : v) x = g(rng);
    p.xs.push_back(dense(v));
    p.y.push_back(i % 2 == 0 ? 1 : -1);
  }
  std::shuffle(p.y.begin(), p.y.end(), rng);
  return p;
}

std::vector<double> gram(const KernelMatrix& K) {
  std::vector<double> out;
  for (std::size_t i = 0; i < K.size(); ++i) {
    for (std::size_t j = 0; j < K.size(); ++j) out.push_back(K(i, j));
  }
  return out;
}

}  // namespace

TEST_CASE("rbf kernel examples") {
  const auto x = dense({0.5, 1.0}, {1, 4});
  CHECK(rbf_kernel(x, x, 0.3) == 1.0);
  CHECK(squared_distance(dense({0, 0}, {0, 2, 3}), dense({1, 2}, {2, 5})) == doctest::Approx(3.0 + 5.0));
  std::vector<double> far(1000, 0.0);
  far[0] = std::sqrt(1000.0);
  CHECK(std::abs(rbf_kernel(dense(far), dense(std::vector<double>(1000, 0.0)), 0.001) - std::exp(-1.0)) < 1e-6);
  CHECK(rbf_kernel(dense({3, 4}), dense({-3, -4}), 1e-12) == doctest::Approx(1.0));
  CHECK_THROWS_AS(rbf_kernel(dense({1}), dense({1, 2}), 1.0), std::invalid_argument);
}

TEST_CASE("squared distance matches a dense expansion") {
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<int> coin(0, 1);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t booleans = 30;
    FeatureVector a, b;
    std::vector<double> da(booleans, 0.0), db(booleans, 0.0);
    for (std::uint32_t i = 0; i < booleans; ++i) {
      if (coin(rng)) {
        a.active.push_back(i);
        da[i] = 1.0;
      }
      if (coin(rng)) {
        b.active.push_back(i);
        db[i] = 1.0;
      }
    }
    for (int k = 0; k < 4; ++k) {
      a.dense.push_back(g(rng));
      b.dense.push_back(g(rng));
      da.push_back(a.dense.back());
      db.push_back(b.dense.back());
    }
    double want = 0.0;
    for (std::size_t i = 0; i < da.size(); ++i) want += (da[i] - db[i]) * (da[i] - db[i]);
    CHECK(squared_distance(a, b) == doctest::Approx(want).epsilon(1e-13));
    const double k = rbf_kernel(a, b, 0.2);
    CHECK((k > 0.0 && k <= 1.0));
  }
}

TEST_CASE("SMO matches the projected-gradient oracle on small problems") {
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<std::size_t> size(2, 20);
  std::uniform_int_distribution<std::size_t> dim(1, 5);
  for (int trial = 0; trial < 25; ++trial) {
    const double C = trial % 2 == 0 ? 1.0 : 100.0;
    const auto p = random_problem(rng, size(rng), dim(rng));
    const auto K = KernelMatrix::rbf(p.xs, 0.5);
    const auto sol = solve_dual(K, p.y, C);
    REQUIRE(sol.converged);
    const auto Kd = gram(K);
    const auto oracle = relclass::testing::solve_qp_projected(Kd, p.y, C, 20000);
    const double f_oracle = relclass::testing::dual_objective(Kd, p.y, oracle);
    const double f_smo = relclass::testing::dual_objective(Kd, p.y, sol.alpha);
    CHECK(f_smo == doctest::Approx(sol.objective).epsilon(1e-9));
    CHECK(std::abs(f_smo - f_oracle) <= 1e-4 * std::abs(f_oracle));
    CHECK(relclass::testing::kkt_violation(Kd, p.y, sol.alpha, C) <= 1e-3);
    double balance = 0.0;
    for (std::size_t i = 0; i < p.y.size(); ++i) {
      CHECK((sol.alpha[i] >= 0.0 && sol.alpha[i] <= C));
      balance += sol.alpha[i] * p.y[i];
    }
    CHECK(std::abs(balance) <= 1e-9);
  }
}

TEST_CASE("symmetric pair gets equal multipliers") {
  const std::vector<FeatureVector> xs{dense({1.0, 0.5}), dense({-1.0, -0.5})};
  const std::vector<int> y{1, -1};
  const auto sol = solve_dual(KernelMatrix::rbf(xs, 0.1), y, 10.0);
  CHECK(sol.alpha[0] == doctest::Approx(sol.alpha[1]));
  CHECK(sol.bias == doctest::Approx(0.0));
}

TEST_CASE("XOR is separated with every point a support vector") {
  const std::vector<FeatureVector> xs{dense({0, 0}), dense({1, 1}), dense({0, 1}), dense({1, 0})};
  const std::vector<int> y{1, 1, -1, -1};
  const auto K = KernelMatrix::rbf(xs, 1.0);
  const auto sol = solve_dual(K, y, 100.0);
  const auto Kd = gram(K);
  const auto oracle = relclass::testing::solve_qp_projected(Kd, y, 100.0, 20000);
  CHECK(sol.objective == doctest::Approx(relclass::testing::dual_objective(Kd, y, oracle)).epsilon(1e-4));
  for (double a : sol.alpha) CHECK(a > 0.0);
  const auto model = train_binary_smo(xs, y, 100.0, 1.0);
  CHECK(model.support_vectors.size() == 4);
  for (std::size_t i = 0; i < xs.size(); ++i) CHECK((model.decision(xs[i]) > 0) == (y[i] > 0));
}

TEST_CASE("linearly separable toy set") {
  std::vector<FeatureVector> xs;
  std::vector<int> y;
  for (int i = 0; i < 4; ++i) {
    xs.push_back(dense({1.0 + 0.3 * i, 2.0 - 0.2 * i}));
    y.push_back(1);
    xs.push_back(dense({-1.0 - 0.25 * i, -1.5 + 0.1 * i}));
    y.push_back(-1);
  }
  const auto K = KernelMatrix::rbf(xs, 0.1);
  const auto sol = solve_dual(K, y, 100.0);
  const auto Kd = gram(K);
  const auto oracle = relclass::testing::solve_qp_projected(Kd, y, 100.0, 50000);
  const double f = relclass::testing::dual_objective(Kd, y, oracle);
  CHECK(std::abs(sol.objective - f) <= 1e-4 * std::abs(f));
}

TEST_CASE("single-class training is an error") {
  const std::vector<FeatureVector> xs{dense({1}), dense({2})};
  const std::vector<int> y{1, 1};
  CHECK_THROWS_AS(train_binary_smo(xs, y, 1.0, 1.0), TrainingError);
}

TEST_CASE("sigmoid calibration") {
  SUBCASE("separated scores give a negative slope") {
    const std::vector<double> s{-2, -2, 2, 2};
    const std::vector<int> l{-1, -1, 1, 1};
    const auto sig = fit_sigmoid(s, l);
    CHECK(sig.A < 0.0);
    CHECK(sig.probability(2.0) > sig.probability(-2.0));
  }
  SUBCASE("constant scores give the smoothed positive fraction") {
    const std::vector<double> s(10, 0.7);
    const std::vector<int> l{1, 1, 1, -1, -1, -1, -1, -1, -1, -1};
    const auto sig = fit_sigmoid(s, l);
    // The model can only express a constant; its maximum-likelihood value
    // is the mean smoothed target.
    const double t_pos = 4.0 / 5.0, t_neg = 1.0 / 9.0;
    const double want = (3 * t_pos + 7 * t_neg) / 10.0;
    CHECK(sig.probability(0.7) == doctest::Approx(want).epsilon(1e-6));
  }
  SUBCASE("uninformative scores give the class prior") {
    std::mt19937_64 rng(9);
    std::normal_distribution<double> g(0.0, 1.0);
    std::bernoulli_distribution pos(0.3);
    std::vector<double> s;
    std::vector<int> l;
    double n_pos = 0;
    for (int i = 0; i < 1000; ++i) {
      s.push_back(g(rng));
      l.push_back(pos(rng) ? 1 : -1);
      n_pos += l.back() > 0;
    }
    const auto sig = fit_sigmoid(s, l);
    CHECK(std::abs(sig.A) < 0.2);
    CHECK(std::abs(sig.probability(0.0) - n_pos / 1000.0) < 0.05);
  }
  SUBCASE("outputs stay inside the open unit interval") {
    const Sigmoid sig{-5.0, 0.3};
    for (double x : {-1e6, -10.0, 0.0, 10.0, 1e6}) {
      const double p = sig.probability(x);
      CHECK((p >= 0.0 && p <= 1.0));
      CHECK(std::isfinite(p));
    }
  }
}

TEST_CASE("pairwise coupling examples") {
  const auto uniform = pairwise_coupling(PairwiseMatrix(6, 0.5));
  for (double p : uniform.p) CHECK(p == doctest::Approx(1.0 / 6.0).epsilon(1e-12));

  PairwiseMatrix two(2);
  two.set(0, 1, 0.7);
  const auto r2 = pairwise_coupling(two);
  CHECK(r2.p[0] == doctest::Approx(0.7).epsilon(1e-9));
  CHECK(r2.p[1] == doctest::Approx(0.3).epsilon(1e-9));

  const std::vector<double> truth{0.6, 0.3, 0.1};
  PairwiseMatrix three(3);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = i + 1; j < 3; ++j) three.set(i, j, truth[i] / (truth[i] + truth[j]));
  }
  const auto r3 = pairwise_coupling(three);
  for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(r3.p[i] - truth[i]) <= 1e-6);

  PairwiseMatrix broken(3);
  broken.at(0, 1) = 0.9;
  broken.at(1, 0) = 0.9;
  CHECK_THROWS_AS(pairwise_coupling(broken), std::invalid_argument);
}

TEST_CASE("coupling is equivariant under class permutation") {
  std::mt19937_64 rng(44);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  for (int trial = 0; trial < 50; ++trial) {
    PairwiseMatrix r(6);
    for (std::size_t i = 0; i < 6; ++i) {
      for (std::size_t j = i + 1; j < 6; ++j) r.set(i, j, u(rng));
    }
    std::vector<std::size_t> perm(6);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    PairwiseMatrix permuted(6);
    for (std::size_t i = 0; i < 6; ++i) {
      for (std::size_t j = i + 1; j < 6; ++j) permuted.set(perm[i], perm[j], r(i, j));
    }
    const auto a = pairwise_coupling(r);
    const auto b = pairwise_coupling(permuted);
    double sum = 0.0;
    for (std::size_t i = 0; i < 6; ++i) {
      CHECK(a.p[i] >= 0.0);
      CHECK(std::abs(a.p[i] - b.p[perm[i]]) <= 1e-8);
      sum += a.p[i];
    }
    CHECK(std::abs(sum - 1.0) <= 1e-9);
  }
}

TEST_CASE("multiclass training on separable clusters") {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> g(0.0, 0.2);
  std::vector<FeatureVector> xs;
  std::vector<Label> labels;
  for (std::size_t c = 0; c < kNumLabels; ++c) {
    for (int i = 0; i < 12; ++i) {
      std::vector<double> v(6);
      for (auto& x : v) x = g(rng);
      v[c] += 2.0;
      xs.push_back(dense(v));
      labels.push_back(label_at(c));
    }
  }
  MulticlassOptions options;
  options.gamma = 0.5;
  options.threads = 3;
  const auto model = MulticlassSvm::train(xs, labels, options);
  REQUIRE(model.pairs().size() == 15);
  for (const auto& pair : model.pairs()) CHECK(pair.trained);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const auto p = model.predict_proba(xs[i]);
    CHECK(std::abs(std::accumulate(p.begin(), p.end(), 0.0) - 1.0) <= 1e-9);
    correct += model.predict(xs[i]) == labels[i];
  }
  CHECK(correct == xs.size());

  options.threads = 1;
  const auto serial = MulticlassSvm::train(xs, labels, options);
  for (std::size_t i = 0; i < xs.size(); i += 7) CHECK(serial.predict_proba(xs[i]) == model.predict_proba(xs[i]));
}

TEST_CASE("one instance per class still trains") {
  std::vector<FeatureVector> xs;
  std::vector<Label> labels;
  for (std::size_t c = 0; c < kNumLabels; ++c) {
    std::vector<double> v(6, 0.0);
    v[c] = 1.0;
    xs.push_back(dense(v));
    labels.push_back(label_at(c));
  }
  MulticlassOptions options;
  options.gamma = 1.0;
  const auto model = MulticlassSvm::train(xs, labels, options);
  CHECK(model.pairs().size() == 15);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const auto p = model.predict_proba(xs[i]);
    CHECK(std::abs(std::accumulate(p.begin(), p.end(), 0.0) - 1.0) <= 1e-9);
  }
}

TEST_CASE("missing classes leave their pairs untrained") {
  std::vector<FeatureVector> xs;
  std::vector<Label> labels;
  for (int i = 0; i < 10; ++i) {
    xs.push_back(dense({static_cast<double>(i % 2), 1.0}));
    labels.push_back(i % 2 == 0 ? Label::Compare : Label::Usage);
  }
  const auto model = MulticlassSvm::train(xs, labels, MulticlassOptions{});
  std::size_t trained = 0;
  for (const auto& pair : model.pairs()) trained += pair.trained;
  CHECK(trained == 1);
  const auto p = model.predict_proba(xs[0]);
  CHECK(std::abs(std::accumulate(p.begin(), p.end(), 0.0) - 1.0) <= 1e-9);
  std::vector<Label> one_class(10, Label::Topic);
  CHECK_THROWS(MulticlassSvm::train(xs, one_class, MulticlassOptions{}));
}

TEST_CASE("keyword corpus classifier fits its training data and round-trips") {
  const auto data = relclass::testing::make_keyword_corpus(20, 10, 3);
  SvmConfig config;
  const auto model = SvmClassifier::train(data.instances, data.table, LevinTable{}, config);
  std::size_t correct = 0;
  for (const auto& inst : data.instances) correct += model.predict(inst, data.table) == *inst.label;
  CHECK(static_cast<double>(correct) / data.instances.size() >= 0.99);

  const auto bytes = model.to_file().to_bytes();
  const auto loaded = SvmClassifier::from_file(ModelFile::from_bytes(bytes));
  CHECK(loaded.to_file().to_bytes() == bytes);
  for (std::size_t i = 0; i < data.instances.size(); i += 5) {
    CHECK(loaded.predict_proba(data.instances[i], data.table) == model.predict_proba(data.instances[i], data.table));
  }
  CHECK(model.to_file().meta()["pairs"].size() == 15);

  EmbeddingTable other("other", 3);
  CHECK_THROWS_AS(model.predict_proba(data.instances[0], other), ModelMismatchError);
}
