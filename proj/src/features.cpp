#include "relclass/features.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <stdexcept>

#include <fmt/format.h>

namespace relclass {

namespace {

constexpr std::array<std::string_view, kNumFeatureNamespaces> kNamespaceNames{
    "bow", "pos", "pospath", "dist", "lc", "ents", "startEnt", "endEnt", "sim100", "simb"};

const std::set<int> kNoClasses;

bool is_nominal(const TokenAnnotation& tok) { return tok.pos == "NOUN" || tok.pos == "PROPN"; }

// Lowercased entity string plus, for multi-token nominal phrases, the head.
std::vector<std::string> entity_strings(const RelationInstance& inst, const TokenSpan& span) {
  std::vector<std::string> out{to_lower(span_text(inst, span))};
  if (span.length() > 1) {
    const auto& head = inst.tokens[span.last];
    if (is_nominal(head)) out.push_back(to_lower(head.text));
  }
  return out;
}

}  // namespace

std::string_view namespace_name(FeatureNamespace ns) { return kNamespaceNames[static_cast<std::size_t>(ns)]; }

std::optional<FeatureNamespace> parse_namespace(std::string_view name) {
  for (std::size_t i = 0; i < kNumFeatureNamespaces; ++i) {
    if (kNamespaceNames[i] == name) return static_cast<FeatureNamespace>(i);
  }
  return std::nullopt;
}

std::string to_string(const FeatureKey& key) {
  return fmt::format("{}:{}", namespace_name(key.ns), key.value);
}

void LevinTable::add(const std::string& lemma, std::string_view class_id) {
  int top = 0;
  const auto* end = class_id.data() + class_id.size();
  const auto [ptr, ec] = std::from_chars(class_id.data(), end, top);
  if (ec != std::errc() || ptr == class_id.data() || top <= 0 ||
      (ptr != end && *ptr != '.' && *ptr != '-')) {
    throw std::invalid_argument(fmt::format("bad Levin class id '{}' for '{}'", class_id, lemma));
  }
  classes_[lemma].insert(top);
}

const std::set<int>& LevinTable::classes(const std::string& lemma) const {
  const auto it = classes_.find(lemma);
  return it == classes_.end() ? kNoClasses : it->second;
}

LevinTable load_levin(std::istream& in) {
  LevinTable table;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0) {
      throw std::runtime_error(fmt::format("levin table line {}: expected lemma<TAB>classes", line_number));
    }
    const std::string lemma = line.substr(0, tab);
    std::string_view rest(line);
    rest.remove_prefix(tab + 1);
    try {
      while (!rest.empty()) {
        const auto comma = rest.find(',');
        auto id = rest.substr(0, comma);
        while (!id.empty() && id.front() == ' ') id.remove_prefix(1);
        while (!id.empty() && id.back() == ' ') id.remove_suffix(1);
        table.add(lemma, id);
        if (comma == std::string_view::npos) break;
        rest.remove_prefix(comma + 1);
      }
    } catch (const std::invalid_argument& e) {
      throw std::runtime_error(fmt::format("levin table line {}: {}", line_number, e.what()));
    }
  }
  return table;
}

LevinTable load_levin(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(fmt::format("cannot open Levin table '{}'", path.string()));
  return load_levin(in);
}

std::set<int> levin_lookup(const std::string& lemma, const LevinTable& levin) {
  return levin.classes(lemma);
}

std::string pos_path(std::span<const TokenAnnotation> context) {
  std::string path;
  path.reserve(context.size());
  for (const auto& tok : context) path += tok.pos.front();
  return path;
}

FeatureKeySet context_lexical(const RelationInstance& inst,
                              std::span<const TokenAnnotation> filtered_context,
                              const LevinTable& levin) {
  FeatureKeySet keys;
  for (const auto& tok : filtered_context) {
    keys.insert({FeatureNamespace::Bow, tok.lemma});
    keys.insert({FeatureNamespace::Pos, tok.pos});
    if (tok.pos == "VERB") {
      for (int id : levin.classes(tok.lemma)) keys.insert({FeatureNamespace::Levin, std::to_string(id)});
    }
  }
  const auto full = extract_context(inst);
  const std::string path = pos_path(full);
  keys.insert({FeatureNamespace::PosPath, path});
  keys.insert({FeatureNamespace::Dist, std::to_string(path.size())});
  return keys;
}

FeatureKeySet entity_lexical(const RelationInstance& inst) {
  FeatureKeySet keys;
  for (auto& s : entity_strings(inst, inst.start_entity())) {
    keys.insert({FeatureNamespace::Ents, s});
    keys.insert({FeatureNamespace::StartEnt, std::move(s)});
  }
  for (auto& s : entity_strings(inst, inst.end_entity())) {
    keys.insert({FeatureNamespace::Ents, s});
    keys.insert({FeatureNamespace::EndEnt, std::move(s)});
  }
  return keys;
}

std::vector<std::string> embedding_keys(std::span<const TokenAnnotation> tokens) {
  std::vector<std::string> keys;
  keys.reserve(tokens.size());
  for (const auto& tok : tokens) keys.push_back(to_lower(tok.lemma));
  return keys;
}

double entity_similarity(const RelationInstance& inst, const EmbeddingTable& table) {
  const auto start = phrase_vector(table, embedding_keys(inst.span_tokens(inst.start_entity())));
  const auto end = phrase_vector(table, embedding_keys(inst.span_tokens(inst.end_entity())));
  return cosine(start, end);
}

std::string format_sim100(double cosine) {
  const double c = std::clamp(cosine, -1.0, 1.0);
  // Nudge by 1e-9 so values like 0.43 that land just below an exact
  // hundredth in binary are not truncated to the previous one.
  const long hundredths = static_cast<long>(std::trunc(c * 100.0 + std::copysign(1e-9, c)));
  const long mag = hundredths < 0 ? -hundredths : hundredths;
  return fmt::format("{}{}.{:02}", hundredths < 0 ? "-" : "", mag / 100, mag % 100);
}

std::string_view similarity_bucket(double cosine) {
  if (cosine < 0.0) return "q0";
  if (cosine < 0.25) return "q25";
  if (cosine < 0.5) return "q50";
  if (cosine < 0.75) return "q75";
  return "q100";
}

FeatureKeySet similarity_features(double cosine) {
  return {{FeatureNamespace::Sim100, format_sim100(cosine)},
          {FeatureNamespace::SimBucket, std::string(similarity_bucket(cosine))}};
}

FeatureKeySet similarity_features(const RelationInstance& inst, const EmbeddingTable& table) {
  return similarity_features(entity_similarity(inst, table));
}

FeatureSpace::FeatureSpace(std::vector<FeatureKey> sorted_unique_keys) : keys_(std::move(sorted_unique_keys)) {
  for (std::size_t i = 0; i < keys_.size(); ++i) {
    if (i > 0 && !(keys_[i - 1] < keys_[i])) {
      throw std::invalid_argument("FeatureSpace keys must be sorted and unique");
    }
    index_.emplace(keys_[i], static_cast<std::uint32_t>(i));
  }
}

std::optional<std::uint32_t> FeatureSpace::index_of(const FeatureKey& key) const {
  const auto it = index_.find(key);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

FeatureSpace build_feature_space(std::span<const FeatureKeySet> train) {
  if (train.empty()) throw std::invalid_argument("build_feature_space: empty training set");
  FeatureKeySet all;
  for (const auto& keys : train) all.insert(keys.begin(), keys.end());
  return FeatureSpace(std::vector<FeatureKey>(all.begin(), all.end()));
}

MinMaxScaler::MinMaxScaler(std::vector<double> min, std::vector<double> max)
    : min_(std::move(min)), max_(std::move(max)) {
  if (min_.size() != max_.size()) throw std::invalid_argument("MinMaxScaler: min/max size mismatch");
  for (std::size_t i = 0; i < min_.size(); ++i) {
    if (!(min_[i] <= max_[i])) throw std::invalid_argument("MinMaxScaler: min > max");
  }
}

DenseVector MinMaxScaler::apply(std::span<const double> dense) const {
  if (dense.size() != min_.size()) throw std::invalid_argument("MinMaxScaler: dimension mismatch");
  DenseVector out(dense.size());
  for (std::size_t i = 0; i < dense.size(); ++i) {
    const double range = max_[i] - min_[i];
    out[i] = range > 0.0 ? std::clamp((dense[i] - min_[i]) / range, 0.0, 1.0) : 0.0;
  }
  return out;
}

MinMaxScaler fit_minmax(std::span<const DenseVector> train_dense) {
  if (train_dense.empty()) throw std::invalid_argument("fit_minmax: empty training set");
  std::vector<double> lo = train_dense.front();
  std::vector<double> hi = train_dense.front();
  for (const auto& row : train_dense) {
    if (row.size() != lo.size()) throw std::invalid_argument("fit_minmax: ragged rows");
    for (std::size_t i = 0; i < row.size(); ++i) {
      lo[i] = std::min(lo[i], row[i]);
      hi[i] = std::max(hi[i], row[i]);
    }
  }
  return MinMaxScaler(std::move(lo), std::move(hi));
}

FeatureKeySet extract_keys(const RelationInstance& inst, const FeatureContext& ctx) {
  const auto filtered = filter_context(extract_context(inst), ctx.freq, ctx.min_lemma_count);
  FeatureKeySet keys = context_lexical(inst, filtered, ctx.levin);
  keys.merge(entity_lexical(inst));
  keys.merge(similarity_features(inst, ctx.table));
  return keys;
}

DenseVector raw_dense(const RelationInstance& inst, const FeatureContext& ctx) {
  const auto filtered = filter_context(extract_context(inst), ctx.freq, ctx.min_lemma_count);
  DenseVector dense = context_vector(ctx.table, embedding_keys(filtered));
  const auto start = phrase_vector(ctx.table, embedding_keys(inst.span_tokens(inst.start_entity())));
  const auto end = phrase_vector(ctx.table, embedding_keys(inst.span_tokens(inst.end_entity())));
  dense.insert(dense.end(), start.begin(), start.end());
  dense.insert(dense.end(), end.begin(), end.end());
  return dense;
}

FeatureVector assemble(const RelationInstance& inst, const FeatureSpace& space,
                       const MinMaxScaler& scaler, const FeatureContext& ctx) {
  FeatureVector fv;
  for (const auto& key : extract_keys(inst, ctx)) {
    if (const auto idx = space.index_of(key)) fv.active.push_back(*idx);
  }
  std::sort(fv.active.begin(), fv.active.end());
  fv.dense = scaler.apply(raw_dense(inst, ctx));
  return fv;
}

}  // namespace relclass
