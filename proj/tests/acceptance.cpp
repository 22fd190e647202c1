#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>

#include "cli.hpp"
#include "gradcheck.hpp"
#include "json.hpp"
#include "oracles.hpp"
#include "relclass/clstm.hpp"
#include "relclass/corpus.hpp"
#include "relclass/embeddings.hpp"
#include "relclass/eval.hpp"
#include "relclass/search.hpp"
#include "relclass/svm.hpp"
#include "synthetic.hpp"

using namespace relclass;
namespace fs = std::filesystem;

namespace {

// Collects failed expectations for one criterion.
class Ledger {
 public:
  void expect(bool ok, const std::string& what) {
    if (!ok && failures_.size() < 5) failures_.push_back(what);
    failed_ = failed_ || !ok;
  }
  void note(const std::string& s) { notes_.push_back(s); }
  bool failed() const { return failed_; }
  std::string summary() const {
    std::string out;
    for (const auto& s : failed_ ? failures_ : notes_) out += (out.empty() ? "" : "; ") + s;
    return out;
  }

 private:
  bool failed_ = false;
  std::vector<std::string> failures_;
  std::vector<std::string> notes_;
};

std::string fmt_double(double x) {
  std::ostringstream s;
  s.precision(3);
  s << x;
  return s.str();
}

std::vector<double> random_values(std::size_t n, std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

double macro_on(std::span<const RelationInstance> test, const std::function<Label(const RelationInstance&)>& predict) {
  std::vector<Label> gold, pred;
  for (const auto& inst : test) {
    gold.push_back(*inst.label);
    pred.push_back(predict(inst));
  }
  return eval::f1_scores(eval::confusion(gold, pred)).macro_f1;
}

std::vector<RelationInstance> pick(std::span<const RelationInstance> all, std::span<const std::size_t> idx) {
  std::vector<RelationInstance> out;
  for (auto i : idx) out.push_back(all[i]);
  return out;
}

void table_example(Ledger& l) {
  const fs::path fixtures(RELCLASS_FIXTURES);
  std::ostringstream out, err;
  const int code = cli::run({"--embeddings", (fixtures / "toy_embeddings.txt").string(), "--levin",
                             (fixtures / "levin.tsv").string(), "--min-count", "1", "features", "--corpus",
                             (fixtures / "example.jsonl").string()},
                            out, err);
  l.expect(code == 0, "exit code " + std::to_string(code) + " " + err.str());
  if (code != 0) return;
  const auto f = nlohmann::json::parse(out.str())["features"];
  const nlohmann::json want = {
      {"bow", {"an", "be", "effective", "improve", "of", "way"}},
      {"pos", {"ADJ", "ADP", "DET", "NOUN", "VERB"}},
      {"pospath", {"VDANAV"}},
      {"dist", {"6"}},
      {"lc", {"45"}},
      {"ents", {"combination methods", "methods", "performance", "system performance"}},
      {"startEnt", {"combination methods", "methods"}},
      {"endEnt", {"performance", "system performance"}},
      {"sim100", {"0.43"}},
      {"simb", {"q50"}},
  };
  for (const auto& [key, value] : want.items()) l.expect(f[key] == value, key + " = " + f[key].dump());
  l.expect(f.size() == want.size(), "namespace count " + std::to_string(f.size()));
  l.note("10 feature keys match");
}

void smo_oracle(Ledger& l) {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::size_t> size(4, 20), dims(1, 5);
  std::normal_distribution<double> g(0.0, 1.0);
  double worst_rel = 0.0, worst_kkt = 0.0;
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t n = size(rng), d = dims(rng);
    const double C = trial % 2 == 0 ? 1.0 : 100.0;
    const double gamma = 0.5 / static_cast<double>(d);
    std::vector<FeatureVector> xs;
    std::vector<int> y;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> v(d);
      for (auto& x : v) x = g(rng);
      xs.push_back(FeatureVector{{}, v});
      y.push_back(i % 2 == 0 ? 1 : -1);
    }
    std::shuffle(y.begin(), y.end(), rng);
    const auto K = svm::KernelMatrix::rbf(xs, gamma);
    std::vector<double> Kd;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) Kd.push_back(K(i, j));
    }
    const auto sol = svm::solve_dual(K, y, C);
    const auto oracle = relclass::testing::solve_qp_projected(Kd, y, C, 20000);
    const double f_oracle = relclass::testing::dual_objective(Kd, y, oracle);
    const double f_smo = relclass::testing::dual_objective(Kd, y, sol.alpha);
    worst_rel = std::max(worst_rel, std::abs(f_smo - f_oracle) / std::abs(f_oracle));
    worst_kkt = std::max(worst_kkt, relclass::testing::kkt_violation(Kd, y, sol.alpha, C));
  }
  l.expect(worst_rel <= 1e-4, "objective relative gap " + fmt_double(worst_rel));
  l.expect(worst_kkt <= 1e-3, "KKT violation " + fmt_double(worst_kkt));
  l.note("max relative gap " + fmt_double(worst_rel) + ", max KKT " + fmt_double(worst_kkt));
}

void coupling(Ledger& l) {
  std::mt19937_64 rng(99);
  std::gamma_distribution<double> shape(1.0, 1.0);
  double worst = 0.0, worst_sum = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> truth(kNumLabels);
    for (auto& p : truth) p = shape(rng) + 1e-3;
    const double total = std::accumulate(truth.begin(), truth.end(), 0.0);
    for (auto& p : truth) p /= total;
    svm::PairwiseMatrix r(kNumLabels);
    for (std::size_t i = 0; i < kNumLabels; ++i) {
      for (std::size_t j = i + 1; j < kNumLabels; ++j) r.set(i, j, truth[i] / (truth[i] + truth[j]));
    }
    const auto result = svm::pairwise_coupling(r);
    for (std::size_t i = 0; i < kNumLabels; ++i) worst = std::max(worst, std::abs(result.p[i] - truth[i]));
    worst_sum = std::max(worst_sum, std::abs(std::accumulate(result.p.begin(), result.p.end(), 0.0) - 1.0));
  }
  l.expect(worst <= 1e-6, "L-inf error " + fmt_double(worst));
  l.expect(worst_sum <= 1e-9, "sum error " + fmt_double(worst_sum));
  l.note("max L-inf " + fmt_double(worst) + ", max |sum - 1| " + fmt_double(worst_sum));
}

void gradient_check(Ledger& l) {
  const clstm::Shape shape{3, 5, 4, 2, 1, 5};
  const auto check = relclass::testing::check_gradient(shape, 2, 0.2, 0.5, 11);
  for (std::size_t g = 0; g < clstm::kNumGroups; ++g) {
    l.expect(check.relative_error[g] < 1e-4, std::string(clstm::group_name(static_cast<clstm::Group>(g))) + " " +
                                                 fmt_double(check.relative_error[g]));
  }
  l.note("worst group relative error " + fmt_double(check.worst));
}

void forward_oracles(Ledger& l) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<std::size_t> dim(1, 6), len(2, 12), k(1, 9), width(1, 5), stride(1, 3);
  double worst_conv = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t v = dim(rng), n = len(rng), f = k(rng), ws = std::min(width(rng), n), st = stride(rng);
    const auto input = random_values(n * v, rng);
    const auto filters = random_values(f * ws * v, rng);
    const auto bias = random_values(f, rng, 0.3);
    const auto maps = clstm::conv1d(clstm::Sequence{v, n, input}, filters, bias, ws, st);
    const auto want = relclass::testing::conv_reference(input, n, v, filters, bias, ws, st);
    l.expect(maps.values.size() == want.size(), "conv output size");
    for (std::size_t i = 0; i < std::min(want.size(), maps.values.size()); ++i) {
      worst_conv = std::max(worst_conv, std::abs(maps.values[i] - want[i]));
    }
  }
  double worst_lstm = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t in = 2 + trial % 3, hidden = 3 + trial % 2, steps = 1 + trial % 5;
    const auto wi = random_values(4 * hidden * in, rng);
    const auto wr = random_values(4 * hidden * hidden, rng);
    const auto b = random_values(4 * hidden, rng);
    const auto flat = random_values(steps * in, rng, 2.0);
    std::vector<std::vector<double>> seq;
    for (std::size_t t = 0; t < steps; ++t) seq.emplace_back(flat.begin() + t * in, flat.begin() + (t + 1) * in);
    const auto h = clstm::lstm_forward(seq, clstm::LstmWeights{wi, wr, b, hidden});
    const auto want = relclass::testing::lstm_reference(flat, steps, in, wi, wr, b, hidden);
    for (std::size_t u = 0; u < hidden; ++u) worst_lstm = std::max(worst_lstm, std::abs(h[u] - want[u]));
  }
  l.expect(worst_conv <= 1e-12, "conv error " + fmt_double(worst_conv));
  l.expect(worst_lstm <= 1e-12, "LSTM error " + fmt_double(worst_lstm));

  const std::size_t in = 4, hidden = 5;
  const std::vector<double> wi(4 * hidden * in, 0.0), wr(4 * hidden * hidden, 0.0), b(4 * hidden, 0.0);
  std::vector<std::vector<double>> seq{random_values(in, rng, 5.0), random_values(in, rng, 5.0)};
  l.expect(clstm::lstm_forward(seq, clstm::LstmWeights{wi, wr, b, hidden}) == std::vector<double>(hidden, 0.0),
           "zero-parameter LSTM state is not zero");
  l.note("conv " + fmt_double(worst_conv) + ", LSTM " + fmt_double(worst_lstm) + ", zero state exact");
}

void optimizer_and_loss(Ledger& l) {
  std::mt19937_64 rng(8);
  const auto h = random_values(7, rng);
  const std::vector<double> zero_w(kNumLabels * 7, 0.0), zero_b(kNumLabels, 0.0);
  const auto uniform = clstm::classify(h, zero_w, zero_b);
  const double ce = clstm::cross_entropy(uniform, Label::Result);
  l.expect(std::abs(ce - std::log(6.0)) <= 1e-6, "uniform loss " + fmt_double(ce));

  std::vector<double> x{0.5, -1.0, 2.0, 0.0};
  const std::vector<double> grad{3.0, -0.01, 1e3, 0.2};
  const auto before = x;
  clstm::AdamState state(x.size());
  const clstm::AdamConfig config;
  clstm::adam_step(x, grad, state, config);
  for (std::size_t i = 0; i < x.size(); ++i) {
    l.expect(std::abs(std::abs(x[i] - before[i]) - config.learning_rate) <= 1e-6,
             "first Adam step " + fmt_double(std::abs(x[i] - before[i])));
  }

  auto data = relclass::testing::make_keyword_corpus(8, 10, 4);
  clstm::ClstmConfig cc;
  cc.hyper.num_filters = 16;
  cc.hyper.rnn_units = 8;
  cc.hyper.epochs = 5;
  cc.hyper.batch_size = 16;
  cc.hyper.seed = 17;
  const auto a = clstm::ClstmClassifier::train(data.instances, data.table, cc).to_file().to_bytes();
  const auto b = clstm::ClstmClassifier::train(data.instances, data.table, cc).to_file().to_bytes();
  l.expect(a == b, "two seeded runs differ");
  l.note("ln 6 gap " + fmt_double(std::abs(ce - std::log(6.0))) + ", Adam step = lr, seeded runs identical");
}

void synthetic_end_to_end(Ledger& l) {
  const auto data = relclass::testing::make_keyword_corpus(100, 50, 600);
  const auto split = search::stratified_split(eval::gold_labels(data.instances), 0.20, 1);
  const auto train = pick(data.instances, split.train);
  const auto test = pick(data.instances, split.validation);
  l.expect(data.instances.size() == 600 && test.size() == 120, "split sizes");

  svm::SvmConfig sc;
  sc.svm.C = 100.0;
  sc.svm.gamma = 0.001;
  const auto svm_model = svm::SvmClassifier::train(train, data.table, LevinTable{}, sc);
  const double svm_macro = macro_on(test, [&](const RelationInstance& i) { return svm_model.predict(i, data.table); });
  l.expect(svm_macro >= 0.95, "SVM macro-F1 " + fmt_double(svm_macro));

  clstm::ClstmConfig cc;
  cc.hyper.num_filters = 64;
  cc.hyper.filter_width = 3;
  cc.hyper.rnn_units = 32;
  cc.hyper.dropout_rate = 0.2;
  cc.hyper.epochs = 100;
  const auto net = clstm::ClstmClassifier::train(train, data.table, cc);
  const double net_macro = macro_on(test, [&](const RelationInstance& i) { return net.predict(i, data.table); });
  l.expect(net_macro >= 0.90, "C-LSTM macro-F1 " + fmt_double(net_macro));
  l.note("SVM macro-F1 " + fmt_double(svm_macro) + ", C-LSTM macro-F1 " + fmt_double(net_macro));
}

void metrics(Ledger& l) {
  std::mt19937_64 rng(31);
  std::uniform_int_distribution<std::size_t> pick_label(0, kNumLabels - 1);
  double worst = 0.0, worst_micro = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<Label> gold(150), pred(150);
    std::bernoulli_distribution keep(0.3 + 0.006 * trial);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) {
      gold[i] = label_at(pick_label(rng));
      pred[i] = keep(rng) ? gold[i] : label_at(pick_label(rng));
      correct += gold[i] == pred[i];
    }
    const auto report = eval::f1_scores(eval::confusion(gold, pred));
    const auto want = relclass::testing::score_labels(gold, pred);
    for (std::size_t c = 0; c < kNumLabels; ++c) {
      worst = std::max({worst, std::abs(report.per_class[c].precision - want.precision[c]),
                        std::abs(report.per_class[c].recall - want.recall[c]),
                        std::abs(report.per_class[c].f1 - want.f1[c])});
    }
    worst = std::max(worst, std::abs(report.macro_f1 - want.macro));
    worst_micro = std::max(worst_micro, std::abs(report.micro_f1 - static_cast<double>(correct) / gold.size()));
  }
  l.expect(worst <= 1e-12, "oracle gap " + fmt_double(worst));
  l.expect(worst_micro <= 1e-12, "micro-F1 vs accuracy " + fmt_double(worst_micro));

  // Skewed set with three TOPIC instances; fixing one of them moves macro-F1
  // by the summed per-class F1 change over six.
  std::vector<Label> gold, before;
  const std::array<std::size_t, kNumLabels> sizes{80, 70, 60, 80, 3, 62};
  for (std::size_t c = 0; c < kNumLabels; ++c) gold.insert(gold.end(), sizes[c], label_at(c));
  before = gold;
  const std::size_t topic_start = 80 + 70 + 60 + 80;
  for (std::size_t i = 0; i < 3; ++i) before[topic_start + i] = Label::Usage;
  before[0] = Label::Topic;
  before[1] = Label::Topic;
  auto after = before;
  after[topic_start] = Label::Topic;
  const auto rb = eval::f1_scores(eval::confusion(gold, before));
  const auto ra = eval::f1_scores(eval::confusion(gold, after));
  double per_class = 0.0;
  for (std::size_t c = 0; c < kNumLabels; ++c) per_class += ra.per_class[c].f1 - rb.per_class[c].f1;
  const double delta = ra.macro_f1 - rb.macro_f1;
  l.expect(std::abs(delta - per_class / 6.0) <= 1e-12, "macro delta " + fmt_double(delta));
  l.expect(delta > 0.05 && delta < 0.06, "macro delta not about five points: " + fmt_double(delta));
  l.note("oracle gap " + fmt_double(worst) + ", one fixed TOPIC hit moves macro-F1 by " + fmt_double(delta));
}

void protocol(Ledger& l) {
  std::mt19937_64 rng(64);
  std::uniform_int_distribution<std::size_t> count(0, 60);
  std::size_t checked = 0;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Label> labels;
    for (auto c : kAllLabels) labels.insert(labels.end(), count(rng), c);
    while (labels.size() < 10) labels.push_back(Label::Usage);
    std::shuffle(labels.begin(), labels.end(), rng);
    const auto split = search::stratified_split(labels, 0.10, trial);
    const auto folds = eval::stratified_kfold(labels, 10, trial);
    for (auto c : kAllLabels) {
      const auto in_class = [&](std::size_t i) { return labels[i] == c; };
      const double n = static_cast<double>(std::count(labels.begin(), labels.end(), c));
      const double v = static_cast<double>(std::count_if(split.validation.begin(), split.validation.end(), in_class));
      l.expect(std::abs(v - 0.10 * n) <= 1.0, "validation share off by more than one");
      std::size_t lo = labels.size(), hi = 0;
      for (const auto& f : folds) {
        const auto k = static_cast<std::size_t>(std::count_if(f.test.begin(), f.test.end(), in_class));
        lo = std::min(lo, k);
        hi = std::max(hi, k);
      }
      l.expect(hi - lo <= 1, "fold counts differ by more than one");
    }
    l.expect(split.train.size() + split.validation.size() == labels.size(), "split is not a partition");
    ++checked;
  }

  const search::SearchSpace space;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const auto hp = search::sample_config(space, seed);
    l.expect(space.contains(hp), "sample " + std::to_string(seed) + " out of bounds");
  }
  clstm::Hyperparams published;
  published.num_filters = 384;
  published.filter_width = 3;
  published.rnn_units = 93;
  published.dropout_rate = 0.23;
  published.l2_scale = 0.79;
  l.expect(space.contains(published), "published configuration rejected");
  l.note(std::to_string(checked) + " distributions, 1000 samples in bounds, published configuration valid");
}

void round_trips(Ledger& l) {
  const auto data = relclass::testing::make_keyword_corpus(10, 8, 12);

  std::ostringstream first;
  write_corpus(first, data.instances);
  std::istringstream in(first.str());
  const auto parsed = parse_corpus(in);
  std::ostringstream second;
  write_corpus(second, parsed);
  l.expect(parsed == data.instances && second.str() == first.str(), "corpus round trip");

  const auto dir = fs::temp_directory_path() / ("relclass_accept_" + std::to_string(std::random_device{}()));
  fs::create_directories(dir);

  const auto svm_model = svm::SvmClassifier::train(data.instances, data.table, LevinTable{}, svm::SvmConfig{});
  const auto svm_bytes = svm_model.to_file().to_bytes();
  svm_model.to_file().save(dir / "svm.model");
  const auto svm_back = svm::SvmClassifier::from_file(ModelFile::load(dir / "svm.model"));
  l.expect(svm_back.to_file().to_bytes() == svm_bytes, "SVM model round trip");

  clstm::ClstmConfig cc;
  cc.hyper.num_filters = 8;
  cc.hyper.rnn_units = 6;
  cc.hyper.epochs = 2;
  const auto net = clstm::ClstmClassifier::train(data.instances, data.table, cc);
  const auto net_bytes = net.to_file().to_bytes();
  net.to_file().save(dir / "clstm.model");
  const auto net_back = clstm::ClstmClassifier::from_file(ModelFile::load(dir / "clstm.model"));
  l.expect(net_back.to_file().to_bytes() == net_bytes, "C-LSTM model round trip");

  std::ostringstream t1;
  write_table(t1, data.table);
  std::ofstream(dir / "table.txt") << t1.str();
  const auto loaded = load_table(dir / "table.txt");
  std::ostringstream t2;
  write_table(t2, loaded);
  l.expect(t2.str() == t1.str() && loaded.tokens() == data.table.tokens(), "embedding table round trip");

  fs::remove_all(dir);
  l.note("corpus, SVM model, C-LSTM model and embedding table are byte-stable");
}

struct Criterion {
  int number;
  std::string title;
  double limit_seconds;  // 0 means no limit
  std::function<void(Ledger&)> body;
};

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::warn);
  const std::vector<Criterion> criteria{
      {1, "example sentence features", 1.0, table_example},
      {2, "SMO against the QP oracle", 30.0, smo_oracle},
      {3, "pairwise coupling recovers the distribution", 5.0, coupling},
      {4, "C-LSTM gradient check", 10.0, gradient_check},
      {5, "convolution and LSTM oracles", 0.0, forward_oracles},
      {6, "loss, Adam and seeded training", 0.0, optimizer_and_loss},
      {7, "synthetic end-to-end", 300.0, synthetic_end_to_end},
      {8, "metrics", 0.0, metrics},
      {9, "split, folds and search space", 0.0, protocol},
      {10, "round trips", 0.0, round_trips},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    Ledger ledger;
    const auto start = std::chrono::steady_clock::now();
    try {
      c.body(ledger);
    } catch (const std::exception& e) {
      ledger.expect(false, std::string("exception: ") + e.what());
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (c.limit_seconds > 0.0) {
      ledger.expect(seconds < c.limit_seconds, "took " + fmt_double(seconds) + " s, limit " +
                                                   fmt_double(c.limit_seconds) + " s");
    }
    failed += ledger.failed();
    std::cout << (ledger.failed() ? "FAIL" : "PASS") << " criterion " << c.number << ": " << c.title << " ("
              << ledger.summary() << ", " << fmt_double(seconds) << " s)" << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
