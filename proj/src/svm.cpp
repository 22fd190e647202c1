#include "relclass/svm.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <mutex>
#include <numeric>
#include <random>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "relclass/kernels.hpp"
#include "relclass/rng.hpp"

namespace relclass::svm {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kTau = 1e-12;
constexpr double kMinPairProbability = 1e-7;

// |A| + |B| - 2 |A n B| for sorted index sets.
std::size_t symmetric_difference_size(std::span<const std::uint32_t> a, std::span<const std::uint32_t> b) {
  std::size_t common = 0;
  std::size_t i = 0;
  std::size_t j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] < b[j]) {
      ++i;
    } else if (b[j] < a[i]) {
      ++j;
    } else {
      ++common;
      ++i;
      ++j;
    }
  }
  return a.size() + b.size() - 2 * common;
}

}  // namespace

double squared_distance(const FeatureVector& x, const FeatureVector& z) {
  if (x.dense.size() != z.dense.size()) throw std::invalid_argument("rbf_kernel: dense block length mismatch");
  return static_cast<double>(symmetric_difference_size(x.active, z.active)) +
         kernels::squared_distance(x.dense, z.dense);
}

double rbf_kernel(const FeatureVector& x, const FeatureVector& z, double gamma) {
  return std::exp(-gamma * squared_distance(x, z));
}

KernelMatrix::KernelMatrix(std::size_t n, std::vector<double> values) : n_(n), values_(std::move(values)) {
  if (values_.size() != n * n) throw std::invalid_argument("KernelMatrix: size mismatch");
}

KernelMatrix KernelMatrix::rbf(std::span<const FeatureVector> xs, double gamma) {
  const std::size_t n = xs.size();
  std::vector<double> values(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    values[i * n + i] = 1.0;
    for (std::size_t j = i + 1; j < n; ++j) {
      const double k = rbf_kernel(xs[i], xs[j], gamma);
      values[i * n + j] = k;
      values[j * n + i] = k;
    }
  }
  return KernelMatrix(n, std::move(values));
}

KernelMatrix KernelMatrix::subset(std::span<const std::size_t> indices) const {
  const std::size_t m = indices.size();
  std::vector<double> values(m * m);
  for (std::size_t a = 0; a < m; ++a) {
    for (std::size_t b = 0; b < m; ++b) values[a * m + b] = (*this)(indices[a], indices[b]);
  }
  return KernelMatrix(m, std::move(values));
}

DualSolution solve_dual(const KernelMatrix& kernel, std::span<const int> y, double C, double tol,
                        std::size_t max_iterations) {
  const std::size_t n = kernel.size();
  if (y.size() != n) throw std::invalid_argument("solve_dual: label count mismatch");
  if (!(C > 0.0)) throw std::invalid_argument("solve_dual: C must be positive");
  if (max_iterations == 0) max_iterations = std::max<std::size_t>(10'000'000, 100 * n);

  DualSolution sol;
  auto& alpha = sol.alpha;
  alpha.assign(n, 0.0);
  std::vector<double> grad(n, -1.0);  // Q alpha - e
  const auto Q = [&](std::size_t i, std::size_t j) { return y[i] * y[j] * kernel(i, j); };
  const auto at_upper = [&](std::size_t t) { return alpha[t] >= C; };
  const auto at_lower = [&](std::size_t t) { return alpha[t] <= 0.0; };

  std::size_t iter = 0;
  for (; iter < max_iterations; ++iter) {
    // i maximizes -y_t grad_t over I_up.
    double gmax = -kInf;
    std::size_t i = n;
    for (std::size_t t = 0; t < n; ++t) {
      if (y[t] == 1) {
        if (!at_upper(t) && -grad[t] >= gmax) {
          gmax = -grad[t];
          i = t;
        }
      } else if (!at_lower(t) && grad[t] >= gmax) {
        gmax = grad[t];
        i = t;
      }
    }
    // j minimizes the second-order objective decrease over I_low.
    double gmax2 = -kInf;
    double best_decrease = kInf;
    std::size_t j = n;
    if (i < n) {
      for (std::size_t t = 0; t < n; ++t) {
        if (y[t] == 1) {
          if (at_lower(t)) continue;
          const double diff = gmax + grad[t];
          gmax2 = std::max(gmax2, grad[t]);
          if (diff > 0.0) {
            double quad = kernel(i, i) + kernel(t, t) - 2.0 * y[i] * Q(i, t);
            if (quad <= 0.0) quad = kTau;
            const double decrease = -(diff * diff) / quad;
            if (decrease <= best_decrease) {
              best_decrease = decrease;
              j = t;
            }
          }
        } else {
          if (at_upper(t)) continue;
          const double diff = gmax - grad[t];
          gmax2 = std::max(gmax2, -grad[t]);
          if (diff > 0.0) {
            double quad = kernel(i, i) + kernel(t, t) + 2.0 * y[i] * Q(i, t);
            if (quad <= 0.0) quad = kTau;
            const double decrease = -(diff * diff) / quad;
            if (decrease <= best_decrease) {
              best_decrease = decrease;
              j = t;
            }
          }
        }
      }
    }
    sol.kkt_gap = gmax + gmax2;
    if (i == n || j == n || gmax + gmax2 < tol) {
      sol.converged = true;
      break;
    }

    const double old_i = alpha[i];
    const double old_j = alpha[j];
    const double qij = Q(i, j);
    if (y[i] != y[j]) {
      double quad = kernel(i, i) + kernel(j, j) + 2.0 * qij;
      if (quad <= 0.0) quad = kTau;
      const double delta = (-grad[i] - grad[j]) / quad;
      const double diff = alpha[i] - alpha[j];
      alpha[i] += delta;
      alpha[j] += delta;
      if (diff > 0.0) {
        if (alpha[j] < 0.0) {
          alpha[j] = 0.0;
          alpha[i] = diff;
        }
      } else if (alpha[i] < 0.0) {
        alpha[i] = 0.0;
        alpha[j] = -diff;
      }
      if (diff > 0.0) {
        if (alpha[i] > C) {
          alpha[i] = C;
          alpha[j] = C - diff;
        }
      } else if (alpha[j] > C) {
        alpha[j] = C;
        alpha[i] = C + diff;
      }
    } else {
      double quad = kernel(i, i) + kernel(j, j) - 2.0 * qij;
      if (quad <= 0.0) quad = kTau;
      const double delta = (grad[i] - grad[j]) / quad;
      const double sum = alpha[i] + alpha[j];
      alpha[i] -= delta;
      alpha[j] += delta;
      if (sum > C) {
        if (alpha[i] > C) {
          alpha[i] = C;
          alpha[j] = sum - C;
        }
      } else if (alpha[j] < 0.0) {
        alpha[j] = 0.0;
        alpha[i] = sum;
      }
      if (sum > C) {
        if (alpha[j] > C) {
          alpha[j] = C;
          alpha[i] = sum - C;
        }
      } else if (alpha[i] < 0.0) {
        alpha[i] = 0.0;
        alpha[j] = sum;
      }
    }

    const double di = alpha[i] - old_i;
    const double dj = alpha[j] - old_j;
    const auto row_i = kernel.row(i);
    const auto row_j = kernel.row(j);
    const double si = y[i] * di;
    const double sj = y[j] * dj;
    for (std::size_t t = 0; t < n; ++t) grad[t] += y[t] * (si * row_i[t] + sj * row_j[t]);
  }
  sol.iterations = iter;
  if (!sol.converged) {
    spdlog::warn("SMO stopped after {} iterations with KKT gap {:.3g}", iter, sol.kkt_gap);
  }

  // Bias from free vectors, or the middle of the feasible interval.
  double ub = kInf;
  double lb = -kInf;
  double free_sum = 0.0;
  std::size_t free_count = 0;
  for (std::size_t t = 0; t < n; ++t) {
    const double yg = y[t] * grad[t];
    if (at_upper(t)) {
      if (y[t] == -1) ub = std::min(ub, yg); else lb = std::max(lb, yg);
    } else if (at_lower(t)) {
      if (y[t] == 1) ub = std::min(ub, yg); else lb = std::max(lb, yg);
    } else {
      ++free_count;
      free_sum += yg;
    }
  }
  const double rho = free_count > 0 ? free_sum / static_cast<double>(free_count) : (ub + lb) / 2.0;
  sol.bias = -rho;

  double objective = 0.0;
  for (std::size_t t = 0; t < n; ++t) objective += alpha[t] * (grad[t] - 1.0);
  sol.objective = objective / 2.0;
  return sol;
}

double BinaryModel::decision(const FeatureVector& x) const {
  double sum = bias;
  for (std::size_t s = 0; s < support_vectors.size(); ++s) {
    sum += coef[s] * rbf_kernel(support_vectors[s], x, gamma);
  }
  return sum;
}

namespace {

void check_binary_labels(std::span<const int> y) {
  bool pos = false;
  bool neg = false;
  for (int v : y) {
    if (v == 1) pos = true;
    else if (v == -1) neg = true;
    else throw std::invalid_argument("binary labels must be +1 or -1");
  }
  if (!pos || !neg) throw TrainingError("binary SVM training needs both classes");
}

BinaryModel model_from_dual(const DualSolution& sol, std::span<const FeatureVector> xs, std::span<const int> y,
                            double C, double gamma) {
  BinaryModel model;
  model.C = C;
  model.gamma = gamma;
  model.bias = sol.bias;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (sol.alpha[i] > 0.0) {
      model.support_vectors.push_back(xs[i]);
      model.coef.push_back(sol.alpha[i] * y[i]);
    }
  }
  return model;
}

// Decision values for `xs` computed from a dual solution over a subset of a
// shared Gram matrix.
double dual_decision(const DualSolution& sol, const KernelMatrix& kernel, std::span<const std::size_t> train,
                     std::span<const int> y_train, std::size_t point) {
  double sum = sol.bias;
  for (std::size_t a = 0; a < train.size(); ++a) {
    if (sol.alpha[a] > 0.0) sum += sol.alpha[a] * y_train[a] * kernel(train[a], point);
  }
  return sum;
}

}  // namespace

BinaryModel train_binary_smo(std::span<const FeatureVector> xs, std::span<const int> y, double C, double gamma,
                             double tol, std::size_t max_iterations) {
  if (xs.size() != y.size()) throw std::invalid_argument("train_binary_smo: size mismatch");
  check_binary_labels(y);
  const auto kernel = KernelMatrix::rbf(xs, gamma);
  const auto sol = solve_dual(kernel, y, C, tol, max_iterations);
  return model_from_dual(sol, xs, y, C, gamma);
}

double Sigmoid::probability(double score) const {
  const double f = A * score + B;
  if (f >= 0.0) {
    const double e = std::exp(-f);
    return e / (1.0 + e);
  }
  return 1.0 / (1.0 + std::exp(f));
}

Sigmoid fit_sigmoid(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("fit_sigmoid: size mismatch");
  constexpr int kMaxIterations = 100;
  constexpr double kMinStep = 1e-10;
  constexpr double kSigma = 1e-12;
  constexpr double kGradTol = 1e-10;

  double n_pos = 0.0;
  double n_neg = 0.0;
  for (int l : labels) (l > 0 ? n_pos : n_neg) += 1.0;
  const double hi = (n_pos + 1.0) / (n_pos + 2.0);
  const double lo = 1.0 / (n_neg + 2.0);
  std::vector<double> target(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) target[i] = labels[i] > 0 ? hi : lo;

  const auto nll = [&](double a, double b) {
    double f = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      const double z = scores[i] * a + b;
      f += z >= 0.0 ? target[i] * z + std::log1p(std::exp(-z)) : (target[i] - 1.0) * z + std::log1p(std::exp(z));
    }
    return f;
  };

  Sigmoid s{0.0, std::log((n_neg + 1.0) / (n_pos + 1.0))};
  double fval = nll(s.A, s.B);
  for (int it = 0; it < kMaxIterations; ++it) {
    double h11 = kSigma, h22 = kSigma, h21 = 0.0, g1 = 0.0, g2 = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      const double z = scores[i] * s.A + s.B;
      double p, q;
      if (z >= 0.0) {
        const double e = std::exp(-z);
        p = e / (1.0 + e);
        q = 1.0 / (1.0 + e);
      } else {
        const double e = std::exp(z);
        p = 1.0 / (1.0 + e);
        q = e / (1.0 + e);
      }
      const double d2 = p * q;
      h11 += scores[i] * scores[i] * d2;
      h22 += d2;
      h21 += scores[i] * d2;
      const double d1 = target[i] - p;
      g1 += scores[i] * d1;
      g2 += d1;
    }
    if (std::hypot(g1, g2) < kGradTol) break;
    const double det = h11 * h22 - h21 * h21;
    const double dA = -(h22 * g1 - h21 * g2) / det;
    const double dB = -(-h21 * g1 + h11 * g2) / det;
    const double gd = g1 * dA + g2 * dB;
    double step = 1.0;
    while (step >= kMinStep) {
      const double na = s.A + step * dA;
      const double nb = s.B + step * dB;
      const double nf = nll(na, nb);
      if (nf < fval + 1e-4 * step * gd) {
        s = {na, nb};
        fval = nf;
        break;
      }
      step /= 2.0;
    }
    if (step < kMinStep) break;  // no further progress at double precision
  }
  return s;
}

PairwiseMatrix::PairwiseMatrix(std::size_t classes, double fill) : k_(classes), r_(classes * classes, fill) {
  for (std::size_t i = 0; i < k_; ++i) r_[i * k_ + i] = 0.0;
}

void PairwiseMatrix::set(std::size_t i, std::size_t j, double p) {
  r_[i * k_ + j] = p;
  r_[j * k_ + i] = 1.0 - p;
}

CouplingResult pairwise_coupling(const PairwiseMatrix& r, double tol, std::size_t max_iterations) {
  const std::size_t k = r.classes();
  if (k == 0) throw std::invalid_argument("pairwise_coupling: no classes");
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      if (i == j) continue;
      if (!(r(i, j) > 0.0 && r(i, j) < 1.0)) {
        throw std::invalid_argument(fmt::format("pairwise_coupling: r({},{}) = {} outside (0,1)", i, j, r(i, j)));
      }
      if (std::abs(r(i, j) + r(j, i) - 1.0) > 1e-9) {
        throw std::invalid_argument(fmt::format("pairwise_coupling: r({},{}) and r({},{}) not complementary", i, j, j, i));
      }
    }
  }

  std::vector<double> q(k * k, 0.0);
  for (std::size_t t = 0; t < k; ++t) {
    for (std::size_t j = 0; j < k; ++j) {
      if (j == t) continue;
      q[t * k + t] += r(j, t) * r(j, t);
      q[t * k + j] = -r(j, t) * r(t, j);
    }
  }

  CouplingResult res;
  auto& p = res.p;
  p.assign(k, 1.0 / static_cast<double>(k));
  std::vector<double> qp(k);
  for (; res.iterations < max_iterations; ++res.iterations) {
    double pqp = 0.0;
    for (std::size_t t = 0; t < k; ++t) {
      qp[t] = 0.0;
      for (std::size_t j = 0; j < k; ++j) qp[t] += q[t * k + j] * p[j];
      pqp += p[t] * qp[t];
    }
    res.residual = 0.0;
    for (std::size_t t = 0; t < k; ++t) res.residual = std::max(res.residual, std::abs(qp[t] - pqp));
    if (res.residual < tol) break;
    for (std::size_t t = 0; t < k; ++t) {
      const double diff = (-qp[t] + pqp) / q[t * k + t];
      p[t] += diff;
      pqp = (pqp + diff * (diff * q[t * k + t] + 2.0 * qp[t])) / (1.0 + diff) / (1.0 + diff);
      for (std::size_t j = 0; j < k; ++j) {
        qp[j] = (qp[j] + diff * q[t * k + j]) / (1.0 + diff);
        p[j] /= 1.0 + diff;
      }
    }
  }
  if (res.iterations == max_iterations) {
    spdlog::warn("pairwise coupling hit {} iterations (residual {:.3g})", max_iterations, res.residual);
  }
  double total = 0.0;
  for (double& v : p) {
    v = std::max(v, 0.0);
    total += v;
  }
  for (double& v : p) v /= total;
  return res;
}

namespace {

PairMachine train_pair(std::span<const FeatureVector> xs, std::span<const Label> labels, std::size_t pos,
                       std::size_t neg, const MulticlassOptions& opt, std::uint64_t seed) {
  PairMachine machine;
  machine.positive = pos;
  machine.negative = neg;

  std::vector<std::size_t> members;
  std::vector<int> y;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto li = label_index(labels[i]);
    if (li == pos || li == neg) {
      members.push_back(i);
      y.push_back(li == pos ? 1 : -1);
    }
  }
  const bool has_pos = std::find(y.begin(), y.end(), 1) != y.end();
  const bool has_neg = std::find(y.begin(), y.end(), -1) != y.end();
  if (!has_pos || !has_neg) {
    spdlog::info("pair {}/{} has a class without instances; fixing its pairwise probability to 0.5",
                 label_name(label_at(pos)), label_name(label_at(neg)));
    return machine;
  }

  std::vector<FeatureVector> subset;
  subset.reserve(members.size());
  for (auto i : members) subset.push_back(xs[i]);
  const auto kernel = KernelMatrix::rbf(subset, opt.gamma);
  const std::size_t n = subset.size();

  const auto full = solve_dual(kernel, y, opt.C, opt.tol);
  machine.model = model_from_dual(full, subset, y, opt.C, opt.gamma);
  machine.trained = true;

  std::vector<double> scores(n);
  const std::size_t folds = opt.calibration_folds;
  if (folds < 2 || n < 2 * folds) {
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), 0);
    for (std::size_t i = 0; i < n; ++i) scores[i] = dual_decision(full, kernel, all, y, i);
  } else {
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(perm.begin(), perm.end(), rng);
    for (std::size_t f = 0; f < folds; ++f) {
      const std::size_t begin = f * n / folds;
      const std::size_t end = (f + 1) * n / folds;
      std::vector<std::size_t> train;
      std::vector<int> y_train;
      for (std::size_t a = 0; a < n; ++a) {
        if (a >= begin && a < end) continue;
        train.push_back(perm[a]);
        y_train.push_back(y[perm[a]]);
      }
      const bool fold_pos = std::find(y_train.begin(), y_train.end(), 1) != y_train.end();
      const bool fold_neg = std::find(y_train.begin(), y_train.end(), -1) != y_train.end();
      if (!fold_pos || !fold_neg) {
        for (std::size_t a = begin; a < end; ++a) scores[perm[a]] = fold_pos ? 1.0 : -1.0;
        continue;
      }
      const auto sol = solve_dual(kernel.subset(train), y_train, opt.C, opt.tol);
      for (std::size_t a = begin; a < end; ++a) scores[perm[a]] = dual_decision(sol, kernel, train, y_train, perm[a]);
    }
  }
  machine.sigmoid = fit_sigmoid(scores, y);
  return machine;
}

}  // namespace

MulticlassSvm MulticlassSvm::train(std::span<const FeatureVector> xs, std::span<const Label> labels,
                                   const MulticlassOptions& options) {
  if (xs.size() != labels.size()) throw std::invalid_argument("MulticlassSvm::train: size mismatch");
  std::array<std::size_t, kNumLabels> counts{};
  for (auto l : labels) ++counts[label_index(l)];
  if (std::count_if(counts.begin(), counts.end(), [](auto c) { return c > 0; }) < 2) {
    throw TrainingError("SVM training needs at least two classes");
  }

  MulticlassSvm svm;
  svm.options_ = options;
  std::vector<std::pair<std::size_t, std::size_t>> jobs;
  for (std::size_t i = 0; i < kNumLabels; ++i) {
    for (std::size_t j = i + 1; j < kNumLabels; ++j) jobs.emplace_back(i, j);
  }
  svm.pairs_.resize(jobs.size());

  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  const auto worker = [&] {
    for (std::size_t p = next++; p < jobs.size(); p = next++) {
      try {
        svm.pairs_[p] = train_pair(xs, labels, jobs[p].first, jobs[p].second, options, derive_seed(options.seed, p));
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(options.threads, 1, jobs.size());
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  if (error) std::rethrow_exception(error);
  return svm;
}

MulticlassSvm MulticlassSvm::from_parts(MulticlassOptions options, std::vector<PairMachine> pairs) {
  MulticlassSvm svm;
  svm.options_ = options;
  svm.pairs_ = std::move(pairs);
  return svm;
}

ClassDistribution MulticlassSvm::predict_proba(const FeatureVector& x) const {
  PairwiseMatrix r(kNumLabels, 0.5);
  for (const auto& pm : pairs_) {
    double p = 0.5;
    if (pm.trained) {
      p = std::clamp(pm.sigmoid.probability(pm.model.decision(x)), kMinPairProbability, 1.0 - kMinPairProbability);
    }
    r.set(pm.positive, pm.negative, p);
  }
  const auto coupled = pairwise_coupling(r);
  ClassDistribution dist{};
  std::copy(coupled.p.begin(), coupled.p.end(), dist.begin());
  return dist;
}

Label MulticlassSvm::predict(const FeatureVector& x) const { return argmax_label(predict_proba(x)); }

}  // namespace relclass::svm
