#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace relclass {

using DenseVector = std::vector<double>;

class EmbeddingFormatError : public std::runtime_error {
 public:
  EmbeddingFormatError(std::size_t line, const std::string& what);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Token -> fixed-dimension vector. Immutable once built; tokens not in the
// table map to the zero vector.
class EmbeddingTable {
 public:
  EmbeddingTable(std::string name, std::size_t dim);

  // Throws std::invalid_argument on a duplicate token or wrong length.
  void insert(std::string token, std::span<const double> values);

  const std::string& name() const { return name_; }
  std::size_t dim() const { return dim_; }
  std::size_t size() const { return tokens_.size(); }
  bool contains(std::string_view token) const;

  // Stored row, or an empty span for OOV tokens.
  std::span<const double> find(std::string_view token) const;

  // Tokens in insertion order.
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  struct Hash {
    using is_transparent = void;
    std::size_t operator()(std::string_view s) const { return std::hash<std::string_view>{}(s); }
  };

  std::string name_;
  std::size_t dim_;
  std::vector<std::string> tokens_;
  std::vector<double> values_;
  std::unordered_map<std::string, std::size_t, Hash, std::equal_to<>> index_;
};

// Text format: optional "<count> <dim>" header, then "token v1 ... vd" rows.
EmbeddingTable load_table(std::istream& in, std::string name);
EmbeddingTable load_table(const std::filesystem::path& path);

// Writes with a header and round-trip precision, rows in insertion order.
void write_table(std::ostream& out, const EmbeddingTable& table);

DenseVector lookup(const EmbeddingTable& table, std::string_view token);

// Mean of lookups; OOV tokens add zero but count in the denominator.
// Throws std::invalid_argument for an empty phrase.
DenseVector phrase_vector(const EmbeddingTable& table, std::span<const std::string> tokens);

// Mean of lookups; the empty context yields the zero vector.
DenseVector context_vector(const EmbeddingTable& table, std::span<const std::string> tokens);

// Cosine similarity, 0.0 if either vector has zero norm.
double cosine(std::span<const double> u, std::span<const double> v);

}  // namespace relclass
