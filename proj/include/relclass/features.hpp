#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "relclass/corpus.hpp"
#include "relclass/embeddings.hpp"

namespace relclass {

enum class FeatureNamespace : std::uint8_t {
  Bow,
  Pos,
  PosPath,
  Dist,
  Levin,
  Ents,
  StartEnt,
  EndEnt,
  Sim100,
  SimBucket,
};

inline constexpr std::size_t kNumFeatureNamespaces = 10;

// Short names used in dumps and model files: bow, pos, pospath, dist, lc,
// ents, startEnt, endEnt, sim100, simb.
std::string_view namespace_name(FeatureNamespace ns);
std::optional<FeatureNamespace> parse_namespace(std::string_view name);

struct FeatureKey {
  FeatureNamespace ns;
  std::string value;

  auto operator<=>(const FeatureKey&) const = default;
  bool operator==(const FeatureKey&) const = default;
};

std::string to_string(const FeatureKey& key);  // "ns:value"

using FeatureKeySet = std::set<FeatureKey>;

// Verb lemma -> top-level Levin class ids.
class LevinTable {
 public:
  // `class_id` like "45.4" or "13.1-1"; only the leading integer is kept.
  void add(const std::string& lemma, std::string_view class_id);
  const std::set<int>& classes(const std::string& lemma) const;
  std::size_t size() const { return classes_.size(); }
  const std::map<std::string, std::set<int>>& entries() const { return classes_; }

  bool operator==(const LevinTable&) const = default;

 private:
  std::map<std::string, std::set<int>> classes_;
};

// TSV: lemma TAB comma-separated class ids.
LevinTable load_levin(std::istream& in);
LevinTable load_levin(const std::filesystem::path& path);

std::set<int> levin_lookup(const std::string& lemma, const LevinTable& levin);

// First character of each POS tag, in order.
std::string pos_path(std::span<const TokenAnnotation> context);

// bow/pos/lc from the filtered context; pospath/dist from the full context.
FeatureKeySet context_lexical(const RelationInstance& inst,
                              std::span<const TokenAnnotation> filtered_context,
                              const LevinTable& levin);

FeatureKeySet entity_lexical(const RelationInstance& inst);

// Embedding lookup keys for a run of tokens (lowercased lemmas).
std::vector<std::string> embedding_keys(std::span<const TokenAnnotation> tokens);

// Cosine between the semantic start and end entity phrase vectors.
double entity_similarity(const RelationInstance& inst, const EmbeddingTable& table);

// Cosine truncated toward zero to two decimals, e.g. "0.43", "-0.20".
std::string format_sim100(double cosine);

// q0 [-1,0), q25 [0,.25), q50 [.25,.5), q75 [.5,.75), q100 [.75,1].
std::string_view similarity_bucket(double cosine);

FeatureKeySet similarity_features(double cosine);
FeatureKeySet similarity_features(const RelationInstance& inst, const EmbeddingTable& table);

// Frozen FeatureKey -> column mapping, ordered by namespace then value.
class FeatureSpace {
 public:
  FeatureSpace() = default;
  explicit FeatureSpace(std::vector<FeatureKey> sorted_unique_keys);

  std::size_t size() const { return keys_.size(); }
  std::optional<std::uint32_t> index_of(const FeatureKey& key) const;
  const std::vector<FeatureKey>& keys() const { return keys_; }

  bool operator==(const FeatureSpace& other) const { return keys_ == other.keys_; }

 private:
  std::vector<FeatureKey> keys_;
  std::map<FeatureKey, std::uint32_t> index_;
};

FeatureSpace build_feature_space(std::span<const FeatureKeySet> train);

// Per-column affine map onto [0,1] fitted on training data.
class MinMaxScaler {
 public:
  MinMaxScaler() = default;
  MinMaxScaler(std::vector<double> min, std::vector<double> max);

  std::size_t dim() const { return min_.size(); }
  const std::vector<double>& min() const { return min_; }
  const std::vector<double>& max() const { return max_; }

  // Constant columns map to 0; values outside the fitted range are clamped.
  DenseVector apply(std::span<const double> dense) const;

  bool operator==(const MinMaxScaler&) const = default;

 private:
  std::vector<double> min_;
  std::vector<double> max_;
};

MinMaxScaler fit_minmax(std::span<const DenseVector> train_dense);

struct FeatureVector {
  std::vector<std::uint32_t> active;  // sorted column indices of true booleans
  DenseVector dense;                  // [context mean | start entity | end entity]

  bool operator==(const FeatureVector&) const = default;
};

// The lookups shared by every instance of a run.
struct FeatureContext {
  const EmbeddingTable& table;
  const LevinTable& levin;
  const FrequencyTable& freq;
  std::size_t min_lemma_count = kDefaultMinLemmaCount;
};

// Every lexical, entity and similarity key of an instance.
FeatureKeySet extract_keys(const RelationInstance& inst, const FeatureContext& ctx);

// Unscaled dense block, 3 * table.dim() values.
DenseVector raw_dense(const RelationInstance& inst, const FeatureContext& ctx);

FeatureVector assemble(const RelationInstance& inst, const FeatureSpace& space,
                       const MinMaxScaler& scaler, const FeatureContext& ctx);

}  // namespace relclass
