#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include "json.hpp"
#include "relclass/clstm.hpp"
#include "relclass/corpus.hpp"
#include "relclass/embeddings.hpp"
#include "relclass/eval.hpp"
#include "relclass/features.hpp"
#include "relclass/model_file.hpp"
#include "relclass/search.hpp"
#include "relclass/svm.hpp"

namespace relclass::cli {
namespace {

using nlohmann::ordered_json;
namespace fs = std::filesystem;

// Bad input from the user: reported with exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SvmFlags {
  double C = 100.0;
  double gamma = 0.001;
  double tol = 1e-3;
  std::size_t calibration_folds = 5;
};

struct TrainFlags {
  std::vector<fs::path> corpora;
  std::string model = "svm";
  fs::path report;
  SvmFlags svm;
  clstm::Hyperparams hyper;
};

struct PredictFlags {
  fs::path model;
  fs::path corpus;
};

struct EvaluateFlags {
  fs::path gold;
  fs::path predictions;
};

struct SearchFlags {
  std::vector<fs::path> corpora;
  std::size_t trials = 20;
  double fraction = 0.10;
  fs::path log;
  clstm::Hyperparams fixed;
};

struct FeaturesFlags {
  fs::path corpus;
};

struct CrossvalFlags {
  std::vector<fs::path> corpora;
  std::string model = "svm";
  std::size_t folds = 10;
  SvmFlags svm;
  clstm::Hyperparams hyper;
};

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

void add_svm_options(CLI::App* cmd, SvmFlags& f) {
  cmd->add_option("--C", f.C, "SVM penalty")->check(CLI::PositiveNumber)->capture_default_str();
  cmd->add_option("--gamma", f.gamma, "RBF kernel width")->check(CLI::PositiveNumber)->capture_default_str();
  cmd->add_option("--tol", f.tol, "SMO stopping tolerance")->check(CLI::PositiveNumber)->capture_default_str();
  cmd->add_option("--calibration-folds", f.calibration_folds, "folds for the probability calibration")
      ->check(CLI::Range(2, 100))
      ->capture_default_str();
}

void add_training_options(CLI::App* cmd, clstm::Hyperparams& h) {
  cmd->add_option("--learning-rate", h.learning_rate, "Adam learning rate")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd->add_option("--batch-size", h.batch_size, "minibatch size")->check(CLI::PositiveNumber)->capture_default_str();
  cmd->add_option("--epochs", h.epochs, "training epochs")->check(CLI::PositiveNumber)->capture_default_str();
  cmd->add_option("--stride", h.stride, "convolution stride")->check(CLI::PositiveNumber)->capture_default_str();
}

void add_clstm_options(CLI::App* cmd, clstm::Hyperparams& h) {
  cmd->add_option("--filters", h.num_filters, "convolution filters")->check(CLI::PositiveNumber)->capture_default_str();
  cmd->add_option("--filter-width", h.filter_width, "convolution window")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd->add_option("--units", h.rnn_units, "LSTM units")->check(CLI::PositiveNumber)->capture_default_str();
  cmd->add_option("--dropout", h.dropout_rate, "dropout rate")->check(CLI::Range(0.0, 0.999))->capture_default_str();
  cmd->add_option("--l2", h.l2_scale, "L2 scale on the softmax weights")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  add_training_options(cmd, h);
}

std::vector<RelationInstance> load_corpora(const std::vector<fs::path>& paths) {
  std::vector<RelationInstance> all;
  std::set<std::string> ids;
  for (const auto& path : paths) {
    auto part = parse_corpus(path);
    for (auto& inst : part) {
      if (!ids.insert(inst.id).second) throw UsageError(fmt::format("duplicate instance id '{}'", inst.id));
      all.push_back(std::move(inst));
    }
  }
  return all;
}

void require_labels(std::span<const RelationInstance> instances) {
  for (const auto& inst : instances) {
    if (!inst.label) throw UsageError(fmt::format("instance '{}' has no label", inst.id));
  }
  if (instances.empty()) throw UsageError("training corpus is empty");
}

EmbeddingTable require_table(const RunConfig& rc) {
  if (rc.embeddings.empty()) throw UsageError("--embeddings is required");
  return load_table(rc.embeddings);
}

LevinTable optional_levin(const RunConfig& rc) { return rc.levin.empty() ? LevinTable{} : load_levin(rc.levin); }

svm::SvmConfig svm_config(const SvmFlags& f, const RunConfig& rc) {
  svm::SvmConfig config;
  config.svm.C = f.C;
  config.svm.gamma = f.gamma;
  config.svm.tol = f.tol;
  config.svm.calibration_folds = f.calibration_folds;
  config.svm.seed = rc.seed;
  config.svm.threads = rc.threads;
  config.min_lemma_count = rc.min_lemma_count;
  return config;
}

clstm::ClstmConfig clstm_config(clstm::Hyperparams h, const RunConfig& rc) {
  h.seed = rc.seed;
  return {h, rc.min_lemma_count};
}

ordered_json distribution_json(std::span<const RelationInstance> instances) {
  std::array<std::size_t, kNumLabels> counts{};
  for (const auto& inst : instances) ++counts[label_index(*inst.label)];
  ordered_json j = ordered_json::object();
  for (auto c : kAllLabels) j[std::string(label_name(c))] = counts[label_index(c)];
  return j;
}

ordered_json proba_json(const ClassDistribution& p) {
  ordered_json j = ordered_json::object();
  for (auto c : kAllLabels) j[std::string(label_name(c))] = p[label_index(c)];
  return j;
}

// Writes `text` to --out when set, else to `out`.
void emit(const RunConfig& rc, std::ostream& out, const std::string& text) {
  if (rc.out.empty()) {
    out << text;
    return;
  }
  std::ofstream file(rc.out, std::ios::binary);
  if (!file) throw UsageError(fmt::format("cannot write '{}'", rc.out.string()));
  file << text;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream file(path, std::ios::binary);
  if (!file) throw UsageError(fmt::format("cannot write '{}'", path.string()));
  file << text;
}

int cmd_train(const RunConfig& rc, const TrainFlags& f, std::ostream& out) {
  if (rc.out.empty()) throw UsageError("train needs --out for the model file");
  const auto start = std::chrono::steady_clock::now();
  const auto instances = load_corpora(f.corpora);
  require_labels(instances);
  const auto table = require_table(rc);
  ordered_json report;
  report["model"] = f.model;
  report["instances"] = instances.size();
  report["class_distribution"] = distribution_json(instances);
  report["embedding"] = {{"name", table.name()}, {"dim", table.dim()}};
  if (f.model == "svm") {
    const auto model = svm::SvmClassifier::train(instances, table, optional_levin(rc), svm_config(f.svm, rc));
    model.to_file().save(rc.out);
    std::size_t trained = 0;
    for (const auto& pair : model.machine().pairs()) trained += pair.trained ? 1 : 0;
    report["feature_space_size"] = model.space().size();
    report["dense_size"] = model.scaler().dim();
    report["binary_models"] = model.machine().pairs().size();
    report["trained_binary_models"] = trained;
  } else {
    clstm::TrainingHistory history;
    const auto model = clstm::ClstmClassifier::train(instances, table, clstm_config(f.hyper, rc), &history);
    model.to_file().save(rc.out);
    report["hyperparams"] = search::to_json(model.config().hyper);
    report["max_len"] = model.max_len();
    report["parameters"] = model.network().parameter_count(model.network().shape());
    report["epoch_loss"] = history.epoch_loss;
  }
  report["timing"] = {{"wall_time_s", seconds_since(start)}};
  const auto text = report.dump(2) + "\n";
  if (f.report.empty()) {
    out << text;
  } else {
    write_file(f.report, text);
  }
  return kSuccess;
}

int cmd_predict(const RunConfig& rc, const PredictFlags& f, std::ostream& out) {
  const auto file = ModelFile::load(f.model);
  const auto table = require_table(rc);
  const auto instances = parse_corpus(f.corpus);
  std::function<ClassDistribution(const RelationInstance&)> proba;
  std::optional<svm::SvmClassifier> svm_model;
  std::optional<clstm::ClstmClassifier> clstm_model;
  if (file.kind() == "svm") {
    svm_model = svm::SvmClassifier::from_file(file);
    proba = [&](const RelationInstance& inst) { return svm_model->predict_proba(inst, table); };
  } else if (file.kind() == "clstm") {
    clstm_model = clstm::ClstmClassifier::from_file(file);
    proba = [&](const RelationInstance& inst) { return clstm_model->predict_proba(inst, table); };
  } else {
    throw UsageError(fmt::format("unknown model kind '{}'", file.kind()));
  }
  std::string text;
  for (const auto& inst : instances) {
    const auto p = proba(inst);
    ordered_json line;
    line["id"] = inst.id;
    line["label"] = label_name(argmax_label(p));
    line["proba"] = proba_json(p);
    text += line.dump();
    text += '\n';
  }
  emit(rc, out, text);
  return kSuccess;
}

std::map<std::string, Label> read_predictions(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError(fmt::format("cannot open predictions '{}'", path.string()));
  std::map<std::string, Label> result;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const auto id = j.at("id").get<std::string>();
      const auto name = j.at("label").get<std::string>();
      const auto label = parse_label(name);
      if (!label) throw UsageError(fmt::format("unknown label '{}'", name));
      if (!result.emplace(id, *label).second) throw UsageError(fmt::format("duplicate prediction for '{}'", id));
    } catch (const nlohmann::json::exception& e) {
      throw UsageError(fmt::format("{}:{}: {}", path.string(), number, e.what()));
    } catch (const UsageError& e) {
      throw UsageError(fmt::format("{}:{}: {}", path.string(), number, e.what()));
    }
  }
  return result;
}

int cmd_evaluate(const RunConfig& rc, const EvaluateFlags& f, std::ostream& out) {
  const auto gold = parse_corpus(f.gold);
  require_labels(gold);
  const auto predicted = read_predictions(f.predictions);
  std::vector<Label> g;
  std::vector<Label> p;
  for (const auto& inst : gold) {
    const auto it = predicted.find(inst.id);
    if (it == predicted.end()) throw UsageError(fmt::format("no prediction for instance '{}'", inst.id));
    g.push_back(*inst.label);
    p.push_back(it->second);
  }
  if (predicted.size() != gold.size()) throw UsageError("predictions contain ids that are not in the gold corpus");
  const auto report = eval::f1_scores(eval::confusion(g, p));
  out << eval::format_table(report);
  if (!rc.out.empty()) write_file(rc.out, eval::to_json(report).dump(2) + "\n");
  return kSuccess;
}

int cmd_search(const RunConfig& rc, const SearchFlags& f, std::ostream& out) {
  const auto start = std::chrono::steady_clock::now();
  const auto instances = load_corpora(f.corpora);
  require_labels(instances);
  const auto table = require_table(rc);
  search::SearchOptions options;
  options.trials = f.trials;
  options.seed = rc.seed;
  options.validation_fraction = f.fraction;
  options.fixed = f.fixed;
  std::optional<std::ofstream> log;
  if (!f.log.empty()) {
    log.emplace(f.log, std::ios::binary);
    if (!*log) throw UsageError(fmt::format("cannot write '{}'", f.log.string()));
  }
  const auto on_trial = [&](const search::TrialResult& t) {
    if (log) *log << search::to_json(t).dump() << '\n' << std::flush;
  };
  const auto result = search::random_search(instances, table, options, rc.min_lemma_count, on_trial);
  ordered_json report;
  report["best_trial"] = result.best_trial;
  report["best"] = search::to_json(result.best);
  report["best_macro_f1"] = result.trials[result.best_trial].macro_f1;
  report["trials"] = result.trials.size();
  report["train_size"] = result.split.train.size();
  report["validation_size"] = result.split.validation.size();
  report["timing"] = {{"wall_time_s", seconds_since(start)}};
  emit(rc, out, report.dump(2) + "\n");
  return kSuccess;
}

int cmd_features(const RunConfig& rc, const FeaturesFlags& f, std::ostream& out) {
  const auto instances = parse_corpus(f.corpus);
  const auto table = require_table(rc);
  const auto levin = optional_levin(rc);
  const auto freq = build_lemma_counts(instances);
  const FeatureContext ctx{table, levin, freq, rc.min_lemma_count};
  std::string text;
  for (const auto& inst : instances) {
    std::map<FeatureNamespace, std::vector<std::string>> grouped;
    for (const auto& key : extract_keys(inst, ctx)) grouped[key.ns].push_back(key.value);
    ordered_json groups = ordered_json::object();
    for (std::size_t n = 0; n < kNumFeatureNamespaces; ++n) {
      const auto ns = static_cast<FeatureNamespace>(n);
      groups[std::string(namespace_name(ns))] = grouped[ns];
    }
    ordered_json line;
    line["id"] = inst.id;
    line["features"] = std::move(groups);
    text += line.dump();
    text += '\n';
  }
  emit(rc, out, text);
  return kSuccess;
}

// Adapters that let the cross-validation harness train fresh models.
class SvmAdapter : public eval::Classifier {
 public:
  SvmAdapter(const EmbeddingTable& table, LevinTable levin, svm::SvmConfig config)
      : table_(table), levin_(std::move(levin)), config_(config) {}
  void fit(std::span<const RelationInstance> train) override {
    model_ = svm::SvmClassifier::train(train, table_, levin_, config_);
  }
  Label predict(const RelationInstance& inst) const override { return model_->predict(inst, table_); }

 private:
  const EmbeddingTable& table_;
  LevinTable levin_;
  svm::SvmConfig config_;
  std::optional<svm::SvmClassifier> model_;
};

class ClstmAdapter : public eval::Classifier {
 public:
  ClstmAdapter(const EmbeddingTable& table, clstm::ClstmConfig config) : table_(table), config_(config) {}
  void fit(std::span<const RelationInstance> train) override {
    model_ = clstm::ClstmClassifier::train(train, table_, config_);
  }
  Label predict(const RelationInstance& inst) const override { return model_->predict(inst, table_); }

 private:
  const EmbeddingTable& table_;
  clstm::ClstmConfig config_;
  std::optional<clstm::ClstmClassifier> model_;
};

int cmd_crossval(const RunConfig& rc, const CrossvalFlags& f, std::ostream& out) {
  const auto start = std::chrono::steady_clock::now();
  const auto instances = load_corpora(f.corpora);
  require_labels(instances);
  if (f.folds > instances.size()) throw UsageError("more folds than instances");
  const auto table = require_table(rc);
  const auto levin = optional_levin(rc);
  eval::ClassifierFactory factory;
  if (f.model == "svm") {
    const auto config = svm_config(f.svm, rc);
    factory = [&table, &levin, config]() -> std::unique_ptr<eval::Classifier> {
      return std::make_unique<SvmAdapter>(table, levin, config);
    };
  } else {
    const auto config = clstm_config(f.hyper, rc);
    factory = [&table, config]() -> std::unique_ptr<eval::Classifier> {
      return std::make_unique<ClstmAdapter>(table, config);
    };
  }
  const auto report = eval::cross_validate(instances, factory, f.folds, rc.seed);
  auto j = eval::to_json(report);
  j["model"] = f.model;
  j["timing"] = {{"wall_time_s", seconds_since(start)}};
  emit(rc, out, j.dump(2) + "\n");
  return kSuccess;
}

spdlog::level::level_enum parse_level(const std::string& name) {
  const auto level = spdlog::level::from_str(name);
  if (level == spdlog::level::off && name != "off") throw UsageError(fmt::format("unknown log level '{}'", name));
  return level;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Relation classification between entity pairs in scientific abstracts", "relclass"};
  app.require_subcommand(1);
  app.set_config("--config", "", "INI or TOML file; flags given on the command line win");

  RunConfig rc;
  app.add_option("--embeddings", rc.embeddings, "embedding table (text format)")->check(CLI::ExistingFile);
  app.add_option("--levin", rc.levin, "verb class table (TSV)")->check(CLI::ExistingFile);
  app.add_option("--out", rc.out, "output file (model, predictions or report)");
  app.add_option("--seed", rc.seed, "master random seed")->capture_default_str();
  app.add_option("--threads", rc.threads, "worker thread cap")->check(CLI::PositiveNumber)->capture_default_str();
  app.add_option("--min-count", rc.min_lemma_count, "lemma frequency threshold for context tokens")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  app.add_option("--log-level", rc.log_level, "trace, debug, info, warn, error or off")->capture_default_str();

  TrainFlags train;
  auto* train_cmd = app.add_subcommand("train", "train a model and write it to --out")->fallthrough();
  train_cmd->add_option("--train", train.corpora, "training corpus (repeatable)")
      ->required()
      ->check(CLI::ExistingFile);
  train_cmd->add_option("--model", train.model, "model kind")
      ->check(CLI::IsMember({"svm", "clstm"}))
      ->capture_default_str();
  train_cmd->add_option("--report", train.report, "training report file (default: stdout)");
  add_svm_options(train_cmd, train.svm);
  add_clstm_options(train_cmd, train.hyper);

  PredictFlags predict;
  auto* predict_cmd = app.add_subcommand("predict", "write JSON-lines predictions")->fallthrough();
  predict_cmd->add_option("--model", predict.model, "model file")->required()->check(CLI::ExistingFile);
  predict_cmd->add_option("--corpus", predict.corpus, "instances to classify")->required()->check(CLI::ExistingFile);

  EvaluateFlags evaluate;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "score predictions against a gold corpus")->fallthrough();
  evaluate_cmd->add_option("--gold", evaluate.gold, "gold corpus")->required()->check(CLI::ExistingFile);
  evaluate_cmd->add_option("--predictions", evaluate.predictions, "predictions file")
      ->required()
      ->check(CLI::ExistingFile);

  SearchFlags search_flags;
  auto* search_cmd = app.add_subcommand("search", "random search over C-LSTM hyperparameters")->fallthrough();
  search_cmd->add_option("--train", search_flags.corpora, "training corpus (repeatable)")
      ->required()
      ->check(CLI::ExistingFile);
  search_cmd->add_option("--trials", search_flags.trials, "number of sampled configurations")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  search_cmd->add_option("--validation-fraction", search_flags.fraction, "stratified validation share")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  search_cmd->add_option("--log", search_flags.log, "trial log (JSON lines)");
  add_training_options(search_cmd, search_flags.fixed);

  FeaturesFlags features;
  auto* features_cmd = app.add_subcommand("features", "dump the boolean feature keys per instance")->fallthrough();
  features_cmd->add_option("--corpus", features.corpus, "corpus")->required()->check(CLI::ExistingFile);

  CrossvalFlags crossval;
  auto* crossval_cmd = app.add_subcommand("crossval", "stratified k-fold cross-validation")->fallthrough();
  crossval_cmd->add_option("--train", crossval.corpora, "corpus (repeatable)")->required()->check(CLI::ExistingFile);
  crossval_cmd->add_option("--model", crossval.model, "model kind")
      ->check(CLI::IsMember({"svm", "clstm"}))
      ->capture_default_str();
  crossval_cmd->add_option("--folds", crossval.folds, "number of folds")
      ->check(CLI::Range(2, 1000))
      ->capture_default_str();
  add_svm_options(crossval_cmd, crossval.svm);
  add_clstm_options(crossval_cmd, crossval.hyper);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kSuccess;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kSuccess;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kUsageError;
  }

  auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(err);
  auto logger = std::make_shared<spdlog::logger>("relclass", sink);
  logger->set_pattern("[%l] %v");
  const auto previous = spdlog::default_logger();
  spdlog::set_default_logger(logger);
  struct Restore {
    std::shared_ptr<spdlog::logger> logger;
    ~Restore() { spdlog::set_default_logger(logger); }
  } restore{previous};

  try {
    logger->set_level(parse_level(rc.log_level));
    if (*train_cmd) return cmd_train(rc, train, out);
    if (*predict_cmd) return cmd_predict(rc, predict, out);
    if (*evaluate_cmd) return cmd_evaluate(rc, evaluate, out);
    if (*search_cmd) return cmd_search(rc, search_flags, out);
    if (*features_cmd) return cmd_features(rc, features, out);
    if (*crossval_cmd) return cmd_crossval(rc, crossval, out);
    return kUsageError;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const ParseError& e) {
    err << "error: corpus " << e.what() << "\n";
    return kUsageError;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const EmbeddingFormatError& e) {
    err << "error: embeddings " << e.what() << "\n";
    return kUsageError;
  } catch (const ModelFormatError& e) {
    err << "error: model file: " << e.what() << "\n";
    return kUsageError;
  } catch (const ModelMismatchError& e) {
    err << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kInternalError;
  }
}

}  // namespace relclass::cli
